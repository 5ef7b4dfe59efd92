#pragma once

// Run configuration: variant names, JSON config files with field-path
// errors, and a stable hash of the resolved configuration.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fewsel/data.hpp"
#include "fewsel/errors.hpp"
#include "fewsel/evaluation.hpp"
#include "fewsel/model.hpp"
#include "fewsel/trainer.hpp"
#include "json.hpp"

namespace fewsel {

inline constexpr const char* kVersion = "0.1.0";

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Variants

struct Variant {
  std::string name = "ours";
  bool alpha_context = true;
  bool r_context = true;
  bool noise = true;
  std::optional<double> fixed_tau;

  /// Canonical spelling, e.g. "ours_fixed_tau(0.01)".
  std::string label() const {
    if (!fixed_tau) return name;
    return name + "(" + format_double(*fixed_tau) + ")";
  }

  void apply(ModelConfig& m, TrainConfig& t) const {
    m.use_alpha_context = alpha_context;
    m.use_r_context = r_context;
    t.use_noise = noise;
    if (fixed_tau) {
      t.t0 = *fixed_tau;
      t.t1 = *fixed_tau;
    }
  }
};

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"ours",         "ours_no_r",     "ours_no_alpha", "cae",
                                              "cae_fixed_tau", "cae_no_noise", "ours_no_noise", "ours_fixed_tau"};
  return names;
}

/// "ours_fixed_tau" alone fixes tau at `default_tau`; "ours_fixed_tau(0.5)"
/// gives it explicitly.
inline Variant parse_variant(const std::string& text, double default_tau = 0.01) {
  std::string name = text;
  std::optional<double> tau;
  if (auto open = text.find('('); open != std::string::npos) {
    if (text.back() != ')') throw config_error("variant '" + text + "': missing ')'");
    name = text.substr(0, open);
    const std::string arg = text.substr(open + 1, text.size() - open - 2);
    char* end = nullptr;
    const double v = std::strtod(arg.c_str(), &end);
    if (arg.empty() || end != arg.c_str() + arg.size() || !(v > 0.0)) {
      throw config_error("variant '" + text + "': temperature must be a positive number");
    }
    tau = v;
  }
  Variant v;
  v.name = name;
  if (name == "ours") {
  } else if (name == "ours_no_r") {
    v.r_context = false;
  } else if (name == "ours_no_alpha") {
    v.alpha_context = false;
  } else if (name == "cae") {
    v.alpha_context = v.r_context = false;
  } else if (name == "cae_no_noise") {
    v.alpha_context = v.r_context = false;
    v.noise = false;
  } else if (name == "ours_no_noise") {
    v.noise = false;
  } else if (name == "cae_fixed_tau") {
    v.alpha_context = v.r_context = false;
    v.fixed_tau = tau.value_or(default_tau);
  } else if (name == "ours_fixed_tau") {
    v.fixed_tau = tau.value_or(default_tau);
  } else {
    std::string all;
    for (const auto& n : variant_names()) all += (all.empty() ? "" : ", ") + n;
    throw config_error("unknown variant '" + text + "' (expected one of " + all + ")");
  }
  if (tau && !v.fixed_tau) throw config_error("variant '" + name + "' takes no temperature argument");
  return v;
}

// ---------------------------------------------------------------------------
// Run configuration

struct EvalGrid {
  std::vector<std::size_t> ns{2, 4, 6};
  std::vector<std::size_t> k{10, 20, 30, 40, 50};
  std::size_t repeats = 20;
  std::size_t fine_tune_iters = 1000;
};

struct BenchConfig {
  std::size_t seeds = 10;
  std::size_t first_seed = 0;
  std::size_t n_support = 2;
  std::size_t budget = 5;
  std::size_t repeats = 20;
};

struct ModelOverrides {
  std::optional<std::size_t> encoder_width;
  std::optional<std::size_t> pi_dim;
  std::optional<std::size_t> context_dim;
  std::optional<std::size_t> decoder_width;
  std::optional<OutputActivation> output;
};

struct RunConfig {
  std::optional<std::string> manifest;  // task collection; synthetic data otherwise
  SynthConfig synth;
  NormMode norm = NormMode::minmax01;
  std::string variant = "ours";
  std::size_t budget = 5;
  ModelOverrides model;
  TrainConfig train;
  ClusterConfig cluster;
  EvalGrid eval;
  BenchConfig bench;
  std::uint64_t seed = 0;
  std::string out = "out";

  Variant resolved_variant() const { return parse_variant(variant, train.t1); }

  /// Model configuration for M features.
  ModelConfig model_config(std::size_t features) const {
    ModelConfig m = ModelConfig::for_features(features, budget);
    if (model.encoder_width) m.encoder_width = *model.encoder_width;
    if (model.pi_dim) m.pi_dim = *model.pi_dim;
    if (model.context_dim) m.context_dim = *model.context_dim;
    if (model.decoder_width) m.decoder_width = *model.decoder_width;
    if (model.output) m.output = *model.output;
    TrainConfig scratch = train;
    resolved_variant().apply(m, scratch);
    return m;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    ModelConfig scratch;
    resolved_variant().apply(scratch, t);
    return t;
  }

  /// Clamp the training episode to the evaluation support size.
  void set_support_size(std::size_t ns) {
    train.n_support = ns;
    train.n_query = ns < 64 ? 64 - ns : 1;
    eval.ns = {ns};
    bench.n_support = ns;
  }

  void set_budget(std::size_t k) {
    budget = k;
    eval.k = {k};
    bench.budget = k;
  }

  void validate() const {
    resolved_variant();
    train.validate();
    synth.validate();
    if (budget < 1) throw config_error("model.budget must be >= 1");
    if (cluster.restarts < 1) throw config_error("cluster.restarts must be >= 1");
    if (eval.repeats < 1) throw config_error("eval.repeats must be >= 1");
    if (bench.seeds < 1) throw config_error("bench.seeds must be >= 1");
    if (bench.repeats < 1) throw config_error("bench.repeats must be >= 1");
  }
};

namespace detail {

// Reads one JSON object, reporting errors with the dotted path of the field
// and rejecting keys it was not asked about.
class FieldReader {
public:
  FieldReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw config_error(where() + ": expected an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, field(key));
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return;
    out = convert<T>(*it, field(key));
  }

  const nlohmann::json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw config_error(field(it.key()) + ": unknown field");
    }
  }

private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  template <class T>
  static T convert(const nlohmann::json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw config_error(path + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw config_error(path + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw config_error(path + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
        throw config_error(path + ": expected a non-negative integer");
      }
      return static_cast<T>(v.get<unsigned long long>());
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      if (!v.is_array()) throw config_error(path + ": expected an array of integers");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<std::size_t>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    } else if constexpr (std::is_same_v<T, OutputActivation>) {
      const auto s = convert<std::string>(v, path);
      try {
        return parse_output_activation(s);
      } catch (const std::invalid_argument& e) {
        throw config_error(path + ": " + e.what());
      }
    } else if constexpr (std::is_same_v<T, NormMode>) {
      const auto s = convert<std::string>(v, path);
      if (s == "minmax01") return NormMode::minmax01;
      if (s == "none") return NormMode::none;
      throw config_error(path + ": expected \"minmax01\" or \"none\"");
    } else {
      static_assert(sizeof(T) == 0, "unsupported config field type");
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Parse a config document; `base_dir` resolves a relative manifest path.
inline RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir = "") {
  RunConfig c;
  detail::FieldReader top(j, "");
  std::optional<std::string> manifest;
  top.get("manifest", manifest);
  if (manifest) {
    std::filesystem::path p(*manifest);
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    c.manifest = p.string();
  }
  top.get("normalize", c.norm);
  top.get("variant", c.variant);
  top.get("seed", c.seed);
  top.get("out", c.out);

  if (const auto* s = top.child("synth")) {
    detail::FieldReader r(*s, "synth");
    r.get("sources", c.synth.sources);
    r.get("val", c.synth.val);
    r.get("features", c.synth.features);
    r.get("signal_count", c.synth.signal_count);
    r.get("instances", c.synth.instances);
    r.get("class_count", c.synth.class_count);
    r.get("noise_std", c.synth.noise_std);
    r.get("seed", c.synth.seed);
    r.finish();
  }
  if (const auto* m = top.child("model")) {
    detail::FieldReader r(*m, "model");
    r.get("budget", c.budget);
    r.get("encoder_width", c.model.encoder_width);
    r.get("pi_dim", c.model.pi_dim);
    r.get("context_dim", c.model.context_dim);
    r.get("decoder_width", c.model.decoder_width);
    r.get("output", c.model.output);
    r.finish();
  }
  if (const auto* t = top.child("train")) {
    detail::FieldReader r(*t, "train");
    r.get("n_support", c.train.n_support);
    r.get("n_query", c.train.n_query);
    r.get("iterations", c.train.iterations);
    r.get("t0", c.train.t0);
    r.get("t1", c.train.t1);
    r.get("lr", c.train.adam.lr);
    r.get("beta1", c.train.adam.beta1);
    r.get("beta2", c.train.adam.beta2);
    r.get("epsilon", c.train.adam.epsilon);
    r.get("eval_interval", c.train.eval_interval);
    r.get("patience", c.train.patience);
    r.get("val_episodes", c.train.val_episodes);
    r.get("loss_window", c.train.loss_window);
    r.finish();
  }
  if (const auto* k = top.child("cluster")) {
    detail::FieldReader r(*k, "cluster");
    r.get("restarts", c.cluster.restarts);
    r.get("max_iters", c.cluster.max_iters);
    r.get("tol", c.cluster.tol);
    r.finish();
  }
  if (const auto* e = top.child("eval")) {
    detail::FieldReader r(*e, "eval");
    r.get("ns", c.eval.ns);
    r.get("k", c.eval.k);
    r.get("repeats", c.eval.repeats);
    r.get("fine_tune_iters", c.eval.fine_tune_iters);
    r.finish();
  }
  if (const auto* b = top.child("bench")) {
    detail::FieldReader r(*b, "bench");
    r.get("seeds", c.bench.seeds);
    r.get("first_seed", c.bench.first_seed);
    r.get("n_support", c.bench.n_support);
    r.get("budget", c.bench.budget);
    r.get("repeats", c.bench.repeats);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw config_error("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j, std::filesystem::path(path).parent_path().string());
}

/// The fully resolved configuration, as embedded in reports.
inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json model = {{"budget", c.budget}};
  if (c.model.encoder_width) model["encoder_width"] = *c.model.encoder_width;
  if (c.model.pi_dim) model["pi_dim"] = *c.model.pi_dim;
  if (c.model.context_dim) model["context_dim"] = *c.model.context_dim;
  if (c.model.decoder_width) model["decoder_width"] = *c.model.decoder_width;
  if (c.model.output) model["output"] = to_string(*c.model.output);
  json j = {
      {"normalize", c.norm == NormMode::minmax01 ? "minmax01" : "none"},
      {"variant", c.resolved_variant().label()},
      {"seed", c.seed},
      {"synth",
       {{"sources", c.synth.sources},
        {"val", c.synth.val},
        {"features", c.synth.features},
        {"signal_count", c.synth.signal_count},
        {"instances", c.synth.instances},
        {"class_count", c.synth.class_count},
        {"noise_std", c.synth.noise_std},
        {"seed", c.synth.seed}}},
      {"model", model},
      {"train",
       {{"n_support", c.train.n_support},
        {"n_query", c.train.n_query},
        {"iterations", c.train.iterations},
        {"t0", c.train.t0},
        {"t1", c.train.t1},
        {"lr", c.train.adam.lr},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"epsilon", c.train.adam.epsilon},
        {"eval_interval", c.train.eval_interval},
        {"patience", c.train.patience},
        {"val_episodes", c.train.val_episodes},
        {"loss_window", c.train.loss_window}}},
      {"cluster", {{"restarts", c.cluster.restarts}, {"max_iters", c.cluster.max_iters}, {"tol", c.cluster.tol}}},
      {"eval",
       {{"ns", c.eval.ns}, {"k", c.eval.k}, {"repeats", c.eval.repeats}, {"fine_tune_iters", c.eval.fine_tune_iters}}},
      {"bench",
       {{"seeds", c.bench.seeds},
        {"first_seed", c.bench.first_seed},
        {"n_support", c.bench.n_support},
        {"budget", c.bench.budget},
        {"repeats", c.bench.repeats}}},
  };
  if (c.manifest) j["manifest"] = *c.manifest;
  return j;
}

/// Hash of the resolved configuration; the output directory is excluded.
inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace fewsel
