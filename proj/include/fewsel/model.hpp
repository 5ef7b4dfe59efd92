#pragma once

// Support-conditioned Concrete feature selector with a task-conditioned
// decoder, plus the ablations obtained by switching off either context.
//
// With both contexts off the model is a plain concrete autoencoder: a free
// K x M log-alpha table and a decoder that never sees the support set.

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fewsel/concrete.hpp"
#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"
#include "fewsel/set_encoder.hpp"
#include "fewsel/tape.hpp"

namespace fewsel {

enum class OutputActivation { sigmoid, tanh, none };

inline std::string to_string(OutputActivation a) {
  switch (a) {
    case OutputActivation::sigmoid: return "sigmoid";
    case OutputActivation::tanh: return "tanh";
    case OutputActivation::none: return "none";
  }
  return "none";
}

inline OutputActivation parse_output_activation(const std::string& s) {
  if (s == "sigmoid") return OutputActivation::sigmoid;
  if (s == "tanh") return OutputActivation::tanh;
  if (s == "none") return OutputActivation::none;
  throw std::invalid_argument("unknown output activation '" + s + "'");
}

struct ModelConfig {
  std::size_t features = 0;        // M
  std::size_t budget = 0;          // K
  std::size_t encoder_width = 64;  // H
  std::size_t pi_dim = 300;        // T
  std::size_t context_dim = 1;     // size of r(S)
  std::size_t decoder_width = 32;  // W, both hidden layers
  OutputActivation output = OutputActivation::sigmoid;
  bool use_alpha_context = true;
  bool use_r_context = true;

  /// Layer sizes scaled to the feature count.
  static ModelConfig for_features(std::size_t m, std::size_t k) {
    ModelConfig c;
    c.features = m;
    c.budget = k;
    c.encoder_width = m <= 1024 ? 64 : 512;
    c.decoder_width = m <= 1024 ? 32 : 256;
    return c;
  }

  void validate() const {
    if (features < 1) throw std::invalid_argument("model.features must be >= 1");
    if (budget < 1 || budget > features) {
      throw std::invalid_argument("model.budget must satisfy 1 <= K <= M (K=" + std::to_string(budget) +
                                  ", M=" + std::to_string(features) + ")");
    }
    if (decoder_width < 1) throw std::invalid_argument("model.decoder_width must be >= 1");
    if (use_alpha_context && (encoder_width < 1 || pi_dim < 1)) {
      throw std::invalid_argument("model.encoder_width and model.pi_dim must be >= 1");
    }
    if (use_r_context && (encoder_width < 1 || context_dim < 1)) {
      throw std::invalid_argument("model.encoder_width and model.context_dim must be >= 1");
    }
  }

  bool uses_support() const { return use_alpha_context || use_r_context; }
  std::size_t decoder_input() const { return budget + (use_r_context ? context_dim : 0); }
};

/// All learnable values. Blocks a variant does not use stay empty.
struct ModelParams {
  SetEncoderParams encoder;
  Dense dec1;
  Dense dec2;
  Dense dec3;
  Matrix free_log_alpha;  // K x M, only when alpha is not support-conditioned

  struct Ref {
    std::string name;
    Matrix* value;
  };
  struct ConstRef {
    std::string name;
    const Matrix* value;
  };

  /// Non-empty parameter matrices in a fixed order.
  std::vector<Ref> named() {
    std::vector<Ref> out;
    auto add = [&](const std::string& name, Matrix& m) {
      if (!m.empty()) out.push_back({name, &m});
    };
    auto add_dense = [&](const std::string& name, Dense& d) {
      add(name + ".weight", d.weight);
      add(name + ".bias", d.bias);
    };
    add_dense("encoder.phi1", encoder.phi1);
    add_dense("encoder.phi2", encoder.phi2);
    add("encoder.pi", encoder.pi);
    add_dense("encoder.psi1", encoder.psi1);
    add_dense("encoder.psi2", encoder.psi2);
    add("free_log_alpha", free_log_alpha);
    add_dense("decoder.layer1", dec1);
    add_dense("decoder.layer2", dec2);
    add_dense("decoder.layer3", dec3);
    return out;
  }

  std::vector<ConstRef> named() const {
    std::vector<ConstRef> out;
    for (auto& r : const_cast<ModelParams*>(this)->named()) out.push_back({r.name, r.value});
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    auto na = a.named();
    auto nb = b.named();
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i) {
      if (na[i].name != nb[i].name || !(*na[i].value == *nb[i].value)) return false;
    }
    return true;
  }
};

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  const std::size_t m = cfg.features;
  if (cfg.use_alpha_context) {
    p.encoder.phi1 = init_dense(rng, m, cfg.encoder_width);
    p.encoder.phi2 = init_dense(rng, cfg.encoder_width + cfg.pi_dim, m);
    p.encoder.pi = Matrix(cfg.budget, cfg.pi_dim);
    for (double& v : p.encoder.pi.data()) v = 0.1 * rng.normal();
  } else {
    p.free_log_alpha = Matrix(cfg.budget, m);
    for (double& v : p.free_log_alpha.data()) v = rng.uniform(-0.01, 0.01);
  }
  if (cfg.use_r_context) {
    p.encoder.psi1 = init_dense(rng, m, cfg.encoder_width);
    p.encoder.psi2 = init_dense(rng, cfg.encoder_width, cfg.context_dim);
  }
  p.dec1 = init_dense(rng, cfg.decoder_input(), cfg.decoder_width);
  p.dec2 = init_dense(rng, cfg.decoder_width, cfg.decoder_width);
  p.dec3 = init_dense(rng, cfg.decoder_width, m);
  return p;
}

/// Parameters placed on a tape as leaves, in ModelParams::named() order.
struct ModelVars {
  SetEncoderVars encoder;
  DenseVars dec1;
  DenseVars dec2;
  DenseVars dec3;
  std::optional<Var> free_log_alpha;
  std::vector<Var> leaves;
};

inline ModelVars bind(Tape& tape, const ModelParams& params, bool requires_grad = true) {
  ModelVars v;
  auto leaf = [&](const Matrix& m) {
    Var x = tape.leaf(m, requires_grad);
    v.leaves.push_back(x);
    return x;
  };
  auto dense = [&](const Dense& d, DenseVars& out) {
    if (d.empty()) return;
    out.weight = leaf(d.weight);
    out.bias = leaf(d.bias);
  };
  // Same order as ModelParams::named().
  dense(params.encoder.phi1, v.encoder.phi1);
  dense(params.encoder.phi2, v.encoder.phi2);
  if (!params.encoder.pi.empty()) v.encoder.pi = leaf(params.encoder.pi);
  dense(params.encoder.psi1, v.encoder.psi1);
  dense(params.encoder.psi2, v.encoder.psi2);
  if (!params.free_log_alpha.empty()) v.free_log_alpha = leaf(params.free_log_alpha);
  dense(params.dec1, v.dec1);
  dense(params.dec2, v.dec2);
  dense(params.dec3, v.dec3);
  return v;
}

/// Gradients of every bound leaf after tape.backward(), in named() order.
inline std::vector<Matrix> collect_grads(const ModelVars& v) {
  std::vector<Matrix> out;
  out.reserve(v.leaves.size());
  for (Var leaf : v.leaves) out.push_back(leaf.grad());
  return out;
}

inline Var log_alpha_of(Var support, const ModelVars& vars, const ModelConfig& cfg) {
  if (cfg.use_alpha_context) return encode_alpha(support, vars.encoder);
  if (!vars.free_log_alpha) throw std::invalid_argument("model has no free log-alpha table");
  return *vars.free_log_alpha;
}

/// h_theta([u, r(S)]) with the configured output activation.
inline Var decode(Var u, std::optional<Var> context, const ModelVars& vars, const ModelConfig& cfg) {
  Var in = context ? concat_cols(u, repeat_rows(*context, u.rows())) : u;
  Var h = relu(apply(vars.dec1, in));
  h = relu(apply(vars.dec2, h));
  Var out = apply(vars.dec3, h);
  switch (cfg.output) {
    case OutputActivation::sigmoid: return sigmoid(out);
    case OutputActivation::tanh: return tanh(out);
    case OutputActivation::none: return out;
  }
  return out;
}

struct ForwardVars {
  Var reconstruction;
  Var z;
  Var log_alpha;
};

inline void check_inputs(const Matrix& support, const Matrix& query, const ModelConfig& cfg) {
  if (query.rows() == 0) throw std::invalid_argument("query set is empty");
  if (query.cols() != cfg.features) {
    throw std::invalid_argument("query has " + std::to_string(query.cols()) + " features, model expects " +
                                std::to_string(cfg.features));
  }
  if (cfg.uses_support()) check_support(support, cfg.features);
  if (!support.empty() && support.cols() != query.cols()) {
    throw std::invalid_argument("support and query feature counts differ (" + std::to_string(support.cols()) +
                                " vs " + std::to_string(query.cols()) + ")");
  }
}

/// Relaxed forward pass: log alpha -> Concrete z -> u = x . z^(k) -> decoder.
inline ForwardVars forward(Tape& tape, const ModelVars& vars, const Matrix& support, const Matrix& query,
                           double tau, const GumbelDraw& gumbel, const ModelConfig& cfg) {
  check_inputs(support, query, cfg);
  std::optional<Var> s;
  if (cfg.uses_support()) s = tape.constant(support);
  Var q = tape.constant(query);
  Var log_alpha = log_alpha_of(s.value_or(q), vars, cfg);
  Var z = concrete_sample(log_alpha, gumbel, tau);
  Var u = matmul(q, transpose(z));
  std::optional<Var> ctx;
  if (cfg.use_r_context) ctx = encode_r(*s, vars.encoder);
  return {decode(u, ctx, vars, cfg), z, log_alpha};
}

/// Query reconstruction loss for one episode.
inline Var episode_loss(Tape& tape, const ModelVars& vars, const Matrix& support, const Matrix& query, double tau,
                        const GumbelDraw& gumbel, const ModelConfig& cfg) {
  ForwardVars f = forward(tape, vars, support, query, tau, gumbel, cfg);
  return mean_squared_error(tape.constant(query), f.reconstruction);
}

struct ForwardResult {
  Matrix reconstruction;
  Matrix z;
};

inline ForwardResult forward(const Matrix& support, const Matrix& query, double tau, const GumbelDraw& gumbel,
                             const ModelParams& params, const ModelConfig& cfg) {
  Tape t;
  ModelVars v = bind(t, params, false);
  ForwardVars f = forward(t, v, support, query, tau, gumbel, cfg);
  return {f.reconstruction.value(), f.z.value()};
}

struct SelectionResult {
  std::vector<std::size_t> indices;  // one per Concrete variable
  std::vector<std::size_t> dedup;    // sorted, unique
  Matrix log_alpha;                  // K x M
};

inline std::vector<std::size_t> deduplicate(std::vector<std::size_t> idx) {
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

inline Matrix log_alpha(const Matrix& support, const ModelParams& params, const ModelConfig& cfg) {
  if (!cfg.use_alpha_context) return params.free_log_alpha;
  check_support(support, cfg.features);
  Tape t;
  ModelVars v = bind(t, params, false);
  return encode_alpha(t.constant(support), v.encoder).value();
}

/// Test-time selection: argmax of log alpha(S), no noise.
inline SelectionResult select(const Matrix& support, const ModelParams& params, const ModelConfig& cfg) {
  SelectionResult r;
  r.log_alpha = log_alpha(support, params, cfg);
  r.indices = hard_select(r.log_alpha);
  r.dedup = deduplicate(r.indices);
  return r;
}

/// Decode the query from hard-selected columns.
inline Matrix reconstruct_selected(const Matrix& support, const Matrix& query, const SelectionResult& result,
                                   const ModelParams& params, const ModelConfig& cfg) {
  check_inputs(support, query, cfg);
  if (result.indices.size() != cfg.budget) {
    throw std::invalid_argument("selection has " + std::to_string(result.indices.size()) + " indices, model uses K=" +
                                std::to_string(cfg.budget));
  }
  for (std::size_t i : result.indices) {
    if (i >= cfg.features) throw std::out_of_range("selected index " + std::to_string(i) + " out of range");
  }
  Tape t;
  ModelVars v = bind(t, params, false);
  Var u = t.constant(query.gather_cols(result.indices));
  std::optional<Var> ctx;
  if (cfg.use_r_context) ctx = encode_r(t.constant(support), v.encoder);
  return decode(u, ctx, v, cfg).value();
}

}  // namespace fewsel
