#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"
#include "fewsel/tape.hpp"

namespace fewsel {

/// Geometric temperature decay from t0 to t1 over `iterations` steps.
struct AnnealSchedule {
  double t0 = 10.0;
  double t1 = 0.01;
  std::size_t iterations = 50000;

  void validate() const {
    if (!(t0 > 0.0) || !(t1 > 0.0)) throw std::invalid_argument("AnnealSchedule: temperatures must be positive");
    if (iterations < 1) throw std::invalid_argument("AnnealSchedule: iterations must be >= 1");
  }

  static AnnealSchedule fixed(double tau, std::size_t iterations) { return {tau, tau, iterations}; }
};

/// One Gumbel noise vector per Concrete variable, K x M.
struct GumbelDraw {
  Matrix g;
};

inline constexpr double kUniformClamp = 1e-12;

/// -log(-log(u)) with u clamped away from 0 and 1.
inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, kUniformClamp, 1.0 - kUniformClamp);
  return -std::log(-std::log(u));
}

inline GumbelDraw gumbel_sample(Rng& rng, std::size_t k, std::size_t m) {
  if (k == 0 || m == 0) throw std::invalid_argument("gumbel_sample: k and m must be >= 1");
  GumbelDraw draw{Matrix(k, m)};
  for (double& v : draw.g.data()) v = gumbel_from_uniform(rng.uniform());
  return draw;
}

inline GumbelDraw zero_gumbel(std::size_t k, std::size_t m) { return {Matrix(k, m)}; }

/// Relaxed one-hot rows: softmax((log_alpha + g) / tau), differentiable in log_alpha.
inline Var concrete_sample(Var log_alpha, const GumbelDraw& noise, double tau) {
  if (!log_alpha.value().same_shape(noise.g)) {
    throw std::invalid_argument("concrete_sample: log_alpha " + log_alpha.value().shape() +
                                " does not match noise " + noise.g.shape());
  }
  if (!(tau > 0.0)) throw std::invalid_argument("concrete_sample: tau must be positive");
  Tape& t = *log_alpha.tape;
  return t.softmax_rows(t.add(log_alpha, t.constant(noise.g)), tau);
}

inline Matrix concrete_sample(const Matrix& log_alpha, const GumbelDraw& noise, double tau) {
  Tape t;
  return concrete_sample(t.constant(log_alpha), noise, tau).value();
}

/// Temperature at iteration i; exact at both endpoints.
inline double anneal_tau(std::size_t i, const AnnealSchedule& sched) {
  sched.validate();
  if (i > sched.iterations) {
    throw std::out_of_range("anneal_tau: iteration " + std::to_string(i) + " exceeds " +
                            std::to_string(sched.iterations));
  }
  if (i == 0) return sched.t0;
  if (i == sched.iterations) return sched.t1;
  const double frac = static_cast<double>(i) / static_cast<double>(sched.iterations);
  return sched.t0 * std::pow(sched.t1 / sched.t0, frac);
}

/// Row-wise argmax, ties to the lowest index. Duplicates are kept.
inline std::vector<std::size_t> hard_select(const Matrix& log_alpha) {
  if (log_alpha.rows() == 0 || log_alpha.cols() == 0) throw std::invalid_argument("hard_select: empty log_alpha");
  if (!log_alpha.all_finite()) throw std::domain_error("hard_select: non-finite log_alpha");
  std::vector<std::size_t> out(log_alpha.rows());
  for (std::size_t k = 0; k < log_alpha.rows(); ++k) {
    auto row = log_alpha.row(k);
    std::size_t best = 0;
    for (std::size_t m = 1; m < row.size(); ++m)
      if (row[m] > row[best]) best = m;
    out[k] = best;
  }
  return out;
}

}  // namespace fewsel
