#pragma once

// Task collections: CSV + JSON manifest I/O, source-statistics min-max
// normalisation, episode sampling and a synthetic multi-task generator.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fewsel/errors.hpp"
#include "fewsel/matrix.hpp"
#include "fewsel/rng.hpp"
#include "json.hpp"

namespace fewsel {

enum class TaskRole { source, val, target };

inline std::string to_string(TaskRole r) {
  switch (r) {
    case TaskRole::source: return "source";
    case TaskRole::val: return "val";
    case TaskRole::target: return "target";
  }
  return "source";
}

inline TaskRole parse_role(const std::string& s) {
  if (s == "source") return TaskRole::source;
  if (s == "val") return TaskRole::val;
  if (s == "target") return TaskRole::target;
  throw data_error("unknown task role '" + s + "' (expected source, val or target)");
}

struct TaskDataset {
  std::string id;
  TaskRole role = TaskRole::source;
  Matrix x;                                // N x M
  std::optional<std::vector<int>> labels;  // evaluation only
  std::optional<std::size_t> class_count;
  std::vector<std::size_t> signal;         // planted signal features, if known

  std::size_t instances() const { return x.rows(); }
  std::size_t features() const { return x.cols(); }
};

/// What training code is allowed to see of a task.
struct UnlabeledTask {
  std::string id;
  Matrix x;
};

inline UnlabeledTask strip_labels(const TaskDataset& t) { return {t.id, t.x}; }

inline std::vector<UnlabeledTask> strip_labels(const std::vector<TaskDataset>& tasks) {
  std::vector<UnlabeledTask> out;
  out.reserve(tasks.size());
  for (const auto& t : tasks) out.push_back(strip_labels(t));
  return out;
}

struct TaskCollection {
  std::vector<TaskDataset> tasks;
  std::optional<std::size_t> class_count;

  std::vector<TaskDataset> with_role(TaskRole role) const {
    std::vector<TaskDataset> out;
    for (const auto& t : tasks)
      if (t.role == role) out.push_back(t);
    return out;
  }
};

// ---------------------------------------------------------------------------
// CSV

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, const std::string& where) {
  if (cell.empty()) throw data_error(where + ": empty cell");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v)) {
    throw data_error(where + ": non-numeric value '" + cell + "'");
  }
  return v;
}

}  // namespace detail

struct CsvTable {
  Matrix x;
  std::optional<std::vector<int>> labels;
  std::vector<std::string> header;
};

/// Header row, numeric columns, optional trailing "label" column.
inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open CSV '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw data_error("CSV '" + path.string() + "' is empty");
  CsvTable t;
  t.header = detail::split_csv_line(line);
  const bool has_label = !t.header.empty() && t.header.back() == "label";
  const std::size_t width = t.header.size();
  const std::size_t m = has_label ? width - 1 : width;
  if (m == 0) throw data_error("CSV '" + path.string() + "' has no feature columns");

  std::vector<double> data;
  std::vector<int> labels;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = detail::split_csv_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != width) {
      throw data_error(where + ": ragged row with " + std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(width));
    }
    for (std::size_t c = 0; c < m; ++c) data.push_back(detail::parse_cell(cells[c], where));
    if (has_label) {
      const double lv = detail::parse_cell(cells[m], where);
      if (lv != std::floor(lv) || lv < 0) throw data_error(where + ": label must be a non-negative integer");
      labels.push_back(static_cast<int>(lv));
    }
    ++row;
  }
  t.x = Matrix(row, m, std::move(data));
  if (has_label) t.labels = std::move(labels);
  t.header.resize(m);
  return t;
}

inline void write_csv(const std::filesystem::path& path, const Matrix& x,
                      const std::optional<std::vector<int>>& labels = std::nullopt) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write CSV '" + path.string() + "'");
  for (std::size_t c = 0; c < x.cols(); ++c) out << (c ? "," : "") << "f" << c;
  if (labels) out << ",label";
  out << "\n";
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out << (c ? "," : "") << format_double(x(r, c));
    if (labels) out << "," << (*labels)[r];
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Manifest
//
// {"tasks": [{"id": str, "path": str, "role": "source|val|target",
//             "signal": [int]?}], "class_count": int?}
// Paths are relative to the manifest's directory.

inline TaskCollection load_collection(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw data_error("cannot open manifest '" + manifest_path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("manifest '" + manifest_path.string() + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object() || !j.contains("tasks") || !j["tasks"].is_array()) {
    throw data_error("manifest: missing array field 'tasks'");
  }
  TaskCollection col;
  if (j.contains("class_count")) {
    if (!j["class_count"].is_number_integer() || j["class_count"].get<long>() < 1) {
      throw data_error("manifest: class_count must be a positive integer");
    }
    col.class_count = j["class_count"].get<std::size_t>();
  }
  const auto base = manifest_path.parent_path();
  std::size_t i = 0;
  for (const auto& entry : j["tasks"]) {
    const std::string where = "manifest: tasks[" + std::to_string(i++) + "]";
    for (const char* key : {"id", "path", "role"}) {
      if (!entry.contains(key) || !entry[key].is_string()) throw data_error(where + "." + key + ": expected string");
    }
    TaskDataset t;
    t.id = entry["id"].get<std::string>();
    t.role = parse_role(entry["role"].get<std::string>());
    auto csv = read_csv(base / entry["path"].get<std::string>());
    t.x = std::move(csv.x);
    t.labels = std::move(csv.labels);
    if (t.labels && col.class_count) {
      t.class_count = col.class_count;
    } else if (t.labels) {
      t.class_count = static_cast<std::size_t>(*std::max_element(t.labels->begin(), t.labels->end())) + 1;
    }
    if (entry.contains("signal")) {
      for (const auto& s : entry["signal"]) t.signal.push_back(s.get<std::size_t>());
    }
    col.tasks.push_back(std::move(t));
  }
  if (col.tasks.empty()) throw data_error("manifest lists no tasks");
  const auto& first = col.tasks.front();
  for (const auto& t : col.tasks) {
    if (t.features() != first.features()) {
      throw data_error("feature count mismatch: task '" + first.id + "' has " + std::to_string(first.features()) +
                       ", task '" + t.id + "' has " + std::to_string(t.features()));
    }
    for (std::size_t s : t.signal) {
      if (s >= t.features()) throw data_error("task '" + t.id + "': signal index out of range");
    }
  }
  return col;
}

inline void write_collection(const std::filesystem::path& dir, const TaskCollection& col) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : col.tasks) {
    const std::string file = t.id + ".csv";
    write_csv(dir / file, t.x, t.labels);
    nlohmann::json e{{"id", t.id}, {"path", file}, {"role", to_string(t.role)}};
    if (!t.signal.empty()) e["signal"] = t.signal;
    j["tasks"].push_back(e);
  }
  if (col.class_count) j["class_count"] = *col.class_count;
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Normalisation

enum class NormMode { minmax01, none };

struct NormStats {
  std::vector<double> min;
  std::vector<double> max;

  bool empty() const { return min.empty(); }

  /// (x - min) / (max - min); constant features map to 0.
  void apply(Matrix& x) const {
    if (empty()) return;
    if (x.cols() != min.size()) throw data_error("normalisation stats do not match feature count");
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = x.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) {
        const double range = max[c] - min[c];
        row[c] = range > 0.0 ? (row[c] - min[c]) / range : 0.0;
      }
    }
  }
};

inline NormStats fit_minmax(const std::vector<TaskDataset>& sources) {
  if (sources.empty()) throw data_error("min-max statistics need at least one source task");
  const std::size_t m = sources.front().features();
  NormStats s{std::vector<double>(m, INFINITY), std::vector<double>(m, -INFINITY)};
  for (const auto& t : sources) {
    for (std::size_t r = 0; r < t.x.rows(); ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        s.min[c] = std::min(s.min[c], t.x(r, c));
        s.max[c] = std::max(s.max[c], t.x(r, c));
      }
    }
  }
  for (std::size_t c = 0; c < m; ++c) {
    if (!std::isfinite(s.min[c])) s.min[c] = s.max[c] = 0.0;
  }
  return s;
}

/// Fits statistics on the source tasks and applies them to every task.
inline NormStats normalize(TaskCollection& col, NormMode mode) {
  if (mode == NormMode::none) return {};
  NormStats stats = fit_minmax(col.with_role(TaskRole::source));
  for (auto& t : col.tasks) stats.apply(t.x);
  return stats;
}

// ---------------------------------------------------------------------------
// Episodes

struct Episode {
  std::size_t task = 0;  // index into the task list it was drawn from
  std::vector<std::size_t> support_rows;
  std::vector<std::size_t> query_rows;
};

/// Disjoint support and query rows drawn uniformly without replacement.
inline Episode sample_episode(Rng& rng, std::size_t task, std::size_t instances, std::size_t n_support,
                              std::size_t n_query) {
  if (n_support + n_query > instances) {
    throw data_error("task " + std::to_string(task) + " has " + std::to_string(instances) + " instances, episode needs " +
                     std::to_string(n_support + n_query));
  }
  auto rows = rng.sample_without_replacement(instances, n_support + n_query);
  Episode e;
  e.task = task;
  e.support_rows.assign(rows.begin(), rows.begin() + static_cast<long>(n_support));
  e.query_rows.assign(rows.begin() + static_cast<long>(n_support), rows.end());
  return e;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
//
// Features sit on a ring. Task d plants its signal in the window of
// signal_count consecutive features starting at a task-specific offset; on
// those features class c sits at a level v_c in [0.3, 1] (jittered per
// feature) plus Gaussian noise. Half of the remaining features, those right
// after the window, are redundant: (s - 0.65)^2 of a signal feature s, which
// does not determine s on the level range. The rest are pure noise around 0.
// Source offsets are spread evenly around the ring; validation and target
// tasks use offsets no source task uses.

struct SynthConfig {
  std::size_t sources = 8;
  std::size_t val = 2;
  std::size_t features = 20;
  std::size_t signal_count = 5;
  std::size_t instances = 200;
  std::size_t class_count = 3;
  double noise_std = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (features < 1) throw config_error("synth.features must be >= 1");
    if (signal_count < 1 || signal_count > features) throw config_error("synth.signal_count must be in [1, features]");
    if (class_count < 2) throw config_error("synth.class_count must be >= 2");
    if (instances < class_count) throw config_error("synth.instances must be >= class_count");
    if (sources < 1) throw config_error("synth.sources must be >= 1");
    if (!(noise_std >= 0.0)) throw config_error("synth.noise_std must be >= 0");
  }
};

struct SynthData {
  std::vector<TaskDataset> sources;
  std::vector<TaskDataset> val;
  TaskDataset target;

  TaskCollection collection() const {
    TaskCollection c;
    c.tasks = sources;
    c.tasks.insert(c.tasks.end(), val.begin(), val.end());
    c.tasks.push_back(target);
    c.class_count = target.class_count;
    return c;
  }
};

namespace detail {

inline constexpr double kLevelLow = 0.3;
inline constexpr double kLevelHigh = 1.0;
inline constexpr double kRedundantScale = 1.0;
inline constexpr double kRedundantCentre = 0.65;

inline Matrix draw_centroids(Rng& rng, std::size_t classes, std::size_t dims, double jitter, double min_separation) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Matrix c(classes, dims);
    for (std::size_t a = 0; a < classes; ++a) {
      const double level = rng.uniform(kLevelLow, kLevelHigh);
      for (std::size_t j = 0; j < dims; ++j) c(a, j) = level + rng.uniform(-jitter, jitter);
    }
    bool ok = true;
    for (std::size_t a = 0; a < classes && ok; ++a) {
      for (std::size_t b = a + 1; b < classes && ok; ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < dims; ++j) d2 += (c(a, j) - c(b, j)) * (c(a, j) - c(b, j));
        ok = std::sqrt(d2) >= min_separation && d2 > 0.0;
      }
    }
    if (ok) return c;
  }
  throw config_error("synthetic generator: cannot separate " + std::to_string(classes) + " classes by " +
                     format_double(min_separation) + " in " + std::to_string(dims) + " signal dimensions");
}

inline std::vector<std::size_t> window(std::size_t offset, std::size_t count, std::size_t m) {
  std::vector<std::size_t> w(count);
  for (std::size_t i = 0; i < count; ++i) w[i] = (offset + i) % m;
  return w;
}

inline TaskDataset synth_task(Rng& rng, const SynthConfig& cfg, std::string id, TaskRole role, std::size_t offset) {
  const std::size_t m = cfg.features;
  const std::size_t s = cfg.signal_count;
  const std::vector<std::size_t> signal = window(offset, s, m);
  const std::size_t redundant = (m - s) / 2;
  const std::vector<std::size_t> tail = window(offset + s, m - s, m);
  const Matrix centroids = draw_centroids(rng, cfg.class_count, s, cfg.noise_std, 4.0 * cfg.noise_std);

  std::vector<int> labels(cfg.instances);
  for (std::size_t n = 0; n < cfg.instances; ++n) labels[n] = static_cast<int>(n % cfg.class_count);
  rng.shuffle(labels);

  TaskDataset t;
  t.id = std::move(id);
  t.role = role;
  t.x = Matrix(cfg.instances, m);
  for (std::size_t n = 0; n < cfg.instances; ++n) {
    const auto y = static_cast<std::size_t>(labels[n]);
    for (std::size_t i = 0; i < s; ++i) t.x(n, signal[i]) = centroids(y, i) + cfg.noise_std * rng.normal();
    for (std::size_t i = 0; i < tail.size(); ++i) {
      if (i < redundant) {
        const double v = t.x(n, signal[i % s]) - kRedundantCentre;
        t.x(n, tail[i]) = kRedundantScale * v * v;
      } else {
        t.x(n, tail[i]) = cfg.noise_std * rng.normal();
      }
    }
  }
  t.labels = std::move(labels);
  t.class_count = cfg.class_count;
  t.signal = signal;
  std::sort(t.signal.begin(), t.signal.end());
  return t;
}

}  // namespace detail

inline SynthData synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::stream(cfg.seed, 0x5e7);
  const std::size_t m = cfg.features;
  SynthData out;

  const std::size_t base = rng.index(m);
  std::vector<char> used(m, 0);
  std::vector<std::size_t> source_offsets;
  for (std::size_t d = 0; d < cfg.sources; ++d) {
    const std::size_t o = (base + d * m / cfg.sources) % m;
    source_offsets.push_back(o);
    used[o] = 1;
  }
  std::vector<std::size_t> free;
  for (std::size_t o = 0; o < m; ++o)
    if (!used[o]) free.push_back(o);
  rng.shuffle(free);
  auto held_out = [&]() -> std::size_t {
    if (free.empty()) return rng.index(m);
    const std::size_t o = free.back();
    free.pop_back();
    return o;
  };

  for (std::size_t d = 0; d < cfg.sources; ++d) {
    out.sources.push_back(
        detail::synth_task(rng, cfg, "source" + std::to_string(d), TaskRole::source, source_offsets[d]));
  }
  const std::size_t target_offset = held_out();
  for (std::size_t d = 0; d < cfg.val; ++d) {
    out.val.push_back(detail::synth_task(rng, cfg, "val" + std::to_string(d), TaskRole::val, held_out()));
  }
  out.target = detail::synth_task(rng, cfg, "target", TaskRole::target, target_offset);
  return out;
}

}  // namespace fewsel
