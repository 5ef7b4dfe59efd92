#pragma once

// Self-describing JSON checkpoint: model configuration, variant, the
// normalisation statistics the model was trained under, and every parameter
// matrix by name.

#include <fstream>
#include <sstream>
#include <string>

#include "fewsel/data.hpp"
#include "fewsel/errors.hpp"
#include "fewsel/model.hpp"
#include "fewsel/run_config.hpp"
#include "json.hpp"

namespace fewsel {

inline constexpr const char* kCheckpointFormat = "fewsel-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  std::string variant = "ours";
  NormStats norm;  // empty when the data was not normalised
  ModelParams params;
};

namespace detail {

inline nlohmann::json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const std::string& name) {
  try {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) {
      throw data_error("checkpoint parameter '" + name + "' has " + std::to_string(data.size()) +
                       " values for shape " + Matrix::shape_string(rows, cols));
    }
    return Matrix(rows, cols, std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw data_error("checkpoint parameter '" + name + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json model_config_json(const ModelConfig& m) {
  return {{"features", m.features},
          {"budget", m.budget},
          {"encoder_width", m.encoder_width},
          {"pi_dim", m.pi_dim},
          {"context_dim", m.context_dim},
          {"decoder_width", m.decoder_width},
          {"output", to_string(m.output)},
          {"use_alpha_context", m.use_alpha_context},
          {"use_r_context", m.use_r_context}};
}

inline nlohmann::json to_json(const Checkpoint& c) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& p : c.params.named()) params[p.name] = detail::matrix_json(*p.value);
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"software_version", kVersion},
                      {"variant", c.variant},
                      {"model", model_config_json(c.model)},
                      {"params", params}};
  if (!c.norm.empty()) {
    j["norm"] = {{"mode", "minmax01"}, {"min", c.norm.min}, {"max", c.norm.max}};
  } else {
    j["norm"] = {{"mode", "none"}};
  }
  return j;
}

inline std::string serialize(const Checkpoint& c) { return to_json(c).dump(1) + "\n"; }

inline std::string checkpoint_hash(const Checkpoint& c) { return hex64(fnv1a64(serialize(c))); }

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat) {
    throw data_error("not a fewsel checkpoint (missing format tag)");
  }
  if (!j.contains("version") || !j["version"].is_number_integer()) throw data_error("checkpoint has no version");
  if (j["version"].get<int>() != kCheckpointVersion) {
    throw data_error("unsupported checkpoint version " + std::to_string(j["version"].get<int>()));
  }
  Checkpoint c;
  try {
    const auto& m = j.at("model");
    c.model.features = m.at("features").get<std::size_t>();
    c.model.budget = m.at("budget").get<std::size_t>();
    c.model.encoder_width = m.at("encoder_width").get<std::size_t>();
    c.model.pi_dim = m.at("pi_dim").get<std::size_t>();
    c.model.context_dim = m.at("context_dim").get<std::size_t>();
    c.model.decoder_width = m.at("decoder_width").get<std::size_t>();
    c.model.output = parse_output_activation(m.at("output").get<std::string>());
    c.model.use_alpha_context = m.at("use_alpha_context").get<bool>();
    c.model.use_r_context = m.at("use_r_context").get<bool>();
    c.variant = j.at("variant").get<std::string>();
    const auto& n = j.at("norm");
    if (n.at("mode").get<std::string>() == "minmax01") {
      NormStats s;
      s.min = n.at("min").get<std::vector<double>>();
      s.max = n.at("max").get<std::vector<double>>();
      if (s.min.size() != c.model.features || s.max.size() != c.model.features) {
        throw data_error("checkpoint normalisation statistics do not cover " + std::to_string(c.model.features) +
                         " features");
      }
      c.norm = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error(std::string("malformed checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw data_error(std::string("malformed checkpoint: ") + e.what());
  }
  try {
    c.model.validate();
  } catch (const std::invalid_argument& e) {
    throw data_error(std::string("checkpoint model config: ") + e.what());
  }

  // Shapes come from a fresh initialisation of the same configuration.
  Rng rng(0);
  c.params = init_params(c.model, rng);
  const auto& params = j.at("params");
  std::size_t found = 0;
  for (auto& ref : c.params.named()) {
    if (!params.contains(ref.name)) throw data_error("checkpoint is missing parameter '" + ref.name + "'");
    Matrix v = detail::matrix_from_json(params[ref.name], ref.name);
    if (!v.same_shape(*ref.value)) {
      throw data_error("checkpoint parameter '" + ref.name + "' has shape " + v.shape() + ", expected " +
                       ref.value->shape());
    }
    *ref.value = std::move(v);
    ++found;
  }
  if (found != params.size()) throw data_error("checkpoint has parameters this model does not use");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write checkpoint '" + path + "'");
  out << serialize(c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint '" + path + "'");
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw data_error("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace fewsel
