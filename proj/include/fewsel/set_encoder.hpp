#pragma once

// Permutation-invariant support-set encoders.
//
//   log alpha^(k)(S) = g_phi2([ sum_{x in S} f_phi1(x), pi^(k) ])
//   r(S)             = g_psi2( sum_{x in S} f_psi1(x) )
//
// f_* are one affine layer + ReLU, g_* are a single affine map. Pooling goes
// through Tape::sum_rows, which sums each column in sorted order, so outputs
// are bitwise identical under any permutation of the support rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"
#include "fewsel/tape.hpp"

namespace fewsel {

/// Affine layer y = x W + b, W is in x out, b is 1 x out.
struct Dense {
  Matrix weight;
  Matrix bias;

  bool empty() const { return weight.empty(); }
  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
};

/// Glorot-uniform weights, zero bias.
inline Dense init_dense(Rng& rng, std::size_t in, std::size_t out) {
  Dense d{Matrix(in, out), Matrix(1, out)};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& w : d.weight.data()) w = rng.uniform(-limit, limit);
  return d;
}

struct DenseVars {
  Var weight;
  Var bias;
};

inline Var apply(const DenseVars& d, Var x) { return add(matmul(x, d.weight), d.bias); }

struct SetEncoderParams {
  Dense phi1;  // M -> H
  Dense phi2;  // H + T -> M
  Dense psi1;  // M -> H
  Dense psi2;  // H -> R
  Matrix pi;   // K x T
};

struct SetEncoderVars {
  DenseVars phi1;
  DenseVars phi2;
  DenseVars psi1;
  DenseVars psi2;
  Var pi;
};

inline void check_support(const Matrix& support, std::size_t features) {
  if (support.rows() == 0) throw std::invalid_argument("support set is empty");
  if (support.cols() != features) {
    throw std::invalid_argument("support has " + std::to_string(support.cols()) + " features, model expects " +
                                std::to_string(features));
  }
}

/// Pooled embedding sum_x relu(x W + b), 1 x H.
inline Var pooled_embedding(Var support, const DenseVars& layer) { return sum_rows(relu(apply(layer, support))); }

/// All K rows of log alpha(S) at once, K x M.
inline Var encode_alpha(Var support, const SetEncoderVars& enc) {
  if (support.rows() == 0) throw std::invalid_argument("encode_alpha: empty support");
  Var pooled = pooled_embedding(support, enc.phi1);
  Var joint = concat_cols(repeat_rows(pooled, enc.pi.rows()), enc.pi);
  return apply(enc.phi2, joint);
}

/// Decoder context r(S), 1 x R.
inline Var encode_r(Var support, const SetEncoderVars& enc) {
  if (support.rows() == 0) throw std::invalid_argument("encode_r: empty support");
  return apply(enc.psi2, pooled_embedding(support, enc.psi1));
}

namespace detail {

inline DenseVars bind_constant(Tape& t, const Dense& d) {
  return {t.constant(d.weight), t.constant(d.bias)};
}

}  // namespace detail

/// log alpha^(k)(S) for a single slot k (0-based), 1 x M.
inline Matrix encode_alpha(const Matrix& support, const SetEncoderParams& p, std::size_t k) {
  check_support(support, p.phi1.in());
  if (k >= p.pi.rows()) throw std::out_of_range("encode_alpha: slot index out of range");
  Tape t;
  SetEncoderVars v;
  v.phi1 = detail::bind_constant(t, p.phi1);
  v.phi2 = detail::bind_constant(t, p.phi2);
  v.pi = t.constant(p.pi);
  Var all = encode_alpha(t.constant(support), v);
  Matrix row(1, all.cols());
  std::copy(all.value().row(k).begin(), all.value().row(k).end(), row.row(0).begin());
  return row;
}

inline Matrix encode_r(const Matrix& support, const SetEncoderParams& p) {
  check_support(support, p.psi1.in());
  Tape t;
  SetEncoderVars v;
  v.psi1 = detail::bind_constant(t, p.psi1);
  v.psi2 = detail::bind_constant(t, p.psi2);
  return encode_r(t.constant(support), v).value();
}

}  // namespace fewsel
