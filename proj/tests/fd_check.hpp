#pragma once

// Central finite differences against the tape, shared by the unit tests and
// the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fewsel/fewsel.hpp"

namespace fdcheck {

using fewsel::Matrix;

/// ||a - n|| / max(||a||, ||n||, 1e-8).
inline double relative_error(const Matrix& a, const Matrix& n) {
  double d = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

/// Numeric gradient of f with respect to every entry of x.
inline Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h) {
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

struct ModelCheck {
  double max_rel = 0.0;
  std::string worst;
  std::size_t groups = 0;
};

/// Tiny model used by the gradient criterion.
inline fewsel::ModelConfig tiny_model(bool alpha = true, bool r = true) {
  fewsel::ModelConfig mc;
  mc.features = 6;
  mc.budget = 2;
  mc.encoder_width = 4;
  mc.pi_dim = 3;
  mc.context_dim = 1;
  mc.decoder_width = 4;
  mc.use_alpha_context = alpha;
  mc.use_r_context = r;
  return mc;
}

/// Compare tape gradients of the episode loss with central differences for
/// every parameter group, on one random draw of parameters and data.
inline ModelCheck check_model(std::uint64_t seed, const fewsel::ModelConfig& mc, double tau = 0.7, double h = 1e-5,
                              std::size_t n_s = 2, std::size_t n_q = 3) {
  using namespace fewsel;
  Rng rng(seed);
  ModelParams p = init_params(mc, rng);
  // Move biases and the free table off their symmetric starting values.
  for (auto& ref : p.named())
    for (double& v : ref.value->data()) v += 0.2 * rng.normal();
  Matrix support(n_s, mc.features), query(n_q, mc.features);
  for (double& v : support.data()) v = rng.uniform();
  for (double& v : query.data()) v = rng.uniform();
  const GumbelDraw g = gumbel_sample(rng, mc.budget, mc.features);

  std::vector<Matrix> grads;
  loss_and_grads(p, support, query, tau, g, mc, grads);
  auto loss = [&] {
    Tape t;
    ModelVars v = bind(t, p, false);
    return episode_loss(t, v, support, query, tau, g, mc).value()[0];
  };
  ModelCheck out;
  auto refs = p.named();
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Matrix num = numeric_gradient(*refs[i].value, loss, h);
    const double rel = relative_error(grads[i], num);
    ++out.groups;
    if (out.worst.empty() || rel > out.max_rel) {
      out.max_rel = rel;
      out.worst = refs[i].name;
    }
  }
  return out;
}

}  // namespace fdcheck
