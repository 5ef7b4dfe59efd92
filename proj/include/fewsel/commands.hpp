#pragma once

// Operator commands behind the fewsel CLI. Each writes its artifacts under an
// output directory and returns the JSON report it wrote, so tests can drive
// them without a process boundary.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fewsel/baselines.hpp"
#include "fewsel/checkpoint.hpp"
#include "fewsel/data.hpp"
#include "fewsel/evaluation.hpp"
#include "fewsel/model.hpp"
#include "fewsel/run_config.hpp"
#include "fewsel/trainer.hpp"
#include "json.hpp"

namespace fewsel {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small utilities

/// Worker count: FEWSEL_THREADS if set, otherwise the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("FEWSEL_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Run jobs 0..n-1 on up to `workers` threads. Each job writes only its own
/// result slot, so the outcome does not depend on scheduling. The first
/// exception (lowest job index) is rethrown.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            job(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string csv_number(double v) { return std::isfinite(v) ? format_double(v) : ""; }

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

struct Summary {
  std::size_t n = 0;
  double mean = NAN;
  double std = NAN;  // sample standard deviation, 0 for a single value
  double median = NAN;
};

/// Summary over the finite entries of `v`.
inline Summary summarize(const std::vector<double>& v) {
  std::vector<double> x;
  for (double d : v)
    if (std::isfinite(d)) x.push_back(d);
  Summary s;
  s.n = x.size();
  if (x.empty()) return s;
  double sum = 0.0;
  for (double d : x) sum += d;
  s.mean = sum / static_cast<double>(x.size());
  double ss = 0.0;
  for (double d : x) ss += (d - s.mean) * (d - s.mean);
  s.std = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
  std::sort(x.begin(), x.end());
  const std::size_t h = x.size() / 2;
  s.median = x.size() % 2 ? x[h] : 0.5 * (x[h - 1] + x[h]);
  return s;
}

// ---------------------------------------------------------------------------
// Data

/// The raw (unnormalised) task collection named by the configuration.
inline TaskCollection load_run_data(const RunConfig& cfg) {
  if (cfg.manifest) return load_collection(*cfg.manifest);
  return synth_generate(cfg.synth).collection();
}

inline std::vector<UnlabeledTask> unlabeled(const TaskCollection& col, TaskRole role) {
  return strip_labels(col.with_role(role));
}

// ---------------------------------------------------------------------------
// Training

struct TrainedModel {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Train one variant on an already normalised collection.
inline TrainedModel train_variant(const RunConfig& cfg, const TaskCollection& col, const NormStats& norm,
                                  const TrainHooks& hooks = {}) {
  const auto sources = unlabeled(col, TaskRole::source);
  const auto val = unlabeled(col, TaskRole::val);
  if (sources.empty()) throw data_error("the collection has no source tasks");
  const std::size_t m = sources.front().x.cols();
  ModelConfig model = cfg.model_config(m);
  const TrainConfig tc = cfg.train_config();
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  Rng init_rng = Rng::stream(tc.seed, streams::init);
  ModelParams params = init_params(model, init_rng);
  TrainResult result = train(sources, val, std::move(params), model, tc, hooks);
  TrainedModel out;
  out.checkpoint.model = model;
  out.checkpoint.variant = cfg.resolved_variant().label();
  out.checkpoint.norm = norm;
  out.checkpoint.params = std::move(result.params);
  out.report = std::move(result.report);
  return out;
}

inline std::string train_log_csv(const TrainReport& r) {
  std::ostringstream os;
  os << "iteration,tau,train_loss,val_msre\n";
  for (const auto& row : r.log) {
    os << row.iteration << ',' << format_double(row.tau) << ',' << csv_number(row.train_loss) << ','
       << csv_number(row.val_msre) << '\n';
  }
  return os.str();
}

/// Train, then write checkpoint.json, train_log.csv and train_report.json.
inline json cmd_train(const RunConfig& cfg) {
  TaskCollection col = load_run_data(cfg);
  const NormStats norm = normalize(col, cfg.norm);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  TrainedModel tm = train_variant(cfg, col, norm);

  const std::string ckpt = serialize(tm.checkpoint);
  write_text(out / "checkpoint.json", ckpt);
  write_text(out / "train_log.csv", train_log_csv(tm.report));

  json report = {
      {"software_version", kVersion},
      {"config_hash", config_hash(cfg)},
      {"seed", cfg.seed},
      {"variant", tm.checkpoint.variant},
      {"checkpoint_hash", hex64(fnv1a64(ckpt))},
      {"iterations", tm.report.iterations},
      {"initial_val_msre", number_or_null(tm.report.initial_val_msre)},
      {"best_val_msre", number_or_null(tm.report.best_val_msre)},
      {"best_iteration", tm.report.best_iteration},
      {"stop_reason", tm.report.stop_reason},
      {"final_train_loss", tm.report.loss_curve.empty() ? json(nullptr) : json(tm.report.loss_curve.back())},
      {"wall_seconds", tm.report.wall_seconds},
      {"config", to_json(cfg)},
  };
  write_text(out / "train_report.json", report.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------
// Selection

inline std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    char* end = nullptr;
    const long long v = std::strtoll(item.c_str(), &end, 10);
    if (end != item.c_str() + item.size() || v < 0) throw config_error("bad feature index '" + item + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline json selection_json(const SelectionResult& sel) {
  json rows = json::array();
  for (std::size_t k = 0; k < sel.log_alpha.rows(); ++k) {
    const auto r = sel.log_alpha.row(k);
    const auto mx = std::max_element(r.begin(), r.end());
    rows.push_back({{"argmax", static_cast<std::size_t>(mx - r.begin())},
                    {"max", *mx},
                    {"min", *std::min_element(r.begin(), r.end())}});
  }
  return {{"indices", sel.indices},
          {"dedup", sel.dedup},
          {"dedup_count", sel.dedup.size()},
          {"budget", sel.indices.size()},
          {"log_alpha", rows}};
}

/// Select features for a support CSV (raw units; the checkpoint's
/// normalisation is applied). `truth` adds recovery precision.
inline json cmd_select(const std::string& checkpoint_path, const std::string& support_csv,
                       std::optional<std::size_t> budget = std::nullopt,
                       const std::vector<std::size_t>& truth = {}) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  if (budget && *budget != ck.model.budget) {
    throw config_error("--k " + std::to_string(*budget) + " does not match the checkpoint budget K=" +
                       std::to_string(ck.model.budget));
  }
  CsvTable table = read_csv(support_csv);
  if (table.x.cols() != ck.model.features) {
    throw data_error("support '" + support_csv + "' has " + std::to_string(table.x.cols()) +
                     " features, checkpoint expects " + std::to_string(ck.model.features));
  }
  ck.norm.apply(table.x);
  const SelectionResult sel = select(table.x, ck.params, ck.model);
  json out = selection_json(sel);
  out["checkpoint"] = checkpoint_path;
  out["variant"] = ck.variant;
  out["support_rows"] = table.x.rows();
  if (!truth.empty()) out["precision"] = recovery_precision(sel.indices, truth);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

/// One selector under evaluation.
struct Method {
  std::string name;
  const Checkpoint* checkpoint = nullptr;  // model methods
  bool fine_tune = false;                  // CAE-ST style adaptation on the support
  std::string baseline;                    // random | variance | ls_t | ls_st
};

struct Measurement {
  std::string target;
  std::string method;
  std::size_t ns = 0;
  std::size_t k = 0;
  std::size_t repeat = 0;
  std::vector<std::size_t> support_rows;
  std::vector<std::size_t> indices;
  double msre = NAN;
  double ari = NAN;
  double nmi = NAN;
  std::size_t dedup = 0;
  double precision = NAN;
  std::string detail;
};

struct EvalContext {
  const TaskDataset* target = nullptr;  // normalised like the method expects
  const Matrix* pooled_sources = nullptr;
  ClusterConfig cluster;
  TrainConfig fine_tune_cfg;
  std::size_t fine_tune_iters = 1000;
};

/// Support rows for (target, ns, repeat). Shared by every method and budget
/// so that comparisons are paired.
inline Episode eval_episode(std::uint64_t seed, std::size_t target_index, const TaskDataset& t, std::size_t ns,
                            std::size_t repeat) {
  if (t.x.rows() <= ns) {
    throw data_error("target '" + t.id + "' has " + std::to_string(t.x.rows()) + " instances; N_S=" +
                     std::to_string(ns) + " leaves no test instances");
  }
  Rng rng = Rng::stream(seed, 0x3000000 + (target_index << 24) + (ns << 12) + repeat);
  return sample_episode(rng, target_index, t.x.rows(), ns, t.x.rows() - ns);
}

inline std::vector<int> labels_of(const TaskDataset& t, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back((*t.labels)[r]);
  return out;
}

inline std::size_t class_count_of(const TaskDataset& t) {
  if (t.class_count) return *t.class_count;
  return static_cast<std::size_t>(*std::max_element(t.labels->begin(), t.labels->end())) + 1;
}

inline Measurement measure(const Method& method, const EvalContext& ctx, const Episode& ep, std::size_t k,
                           std::uint64_t seed, std::size_t repeat) {
  const TaskDataset& t = *ctx.target;
  Measurement r;
  r.target = t.id;
  r.method = method.name;
  r.ns = ep.support_rows.size();
  r.k = k;
  r.repeat = repeat;
  r.support_rows = ep.support_rows;
  const Matrix support = t.x.gather_rows(ep.support_rows);
  const Matrix query = t.x.gather_rows(ep.query_rows);

  if (method.checkpoint) {
    const Checkpoint& ck = *method.checkpoint;
    if (ck.model.budget != k) throw config_error("checkpoint budget K=" + std::to_string(ck.model.budget) +
                                                 " cannot fill grid column K=" + std::to_string(k));
    ModelParams params = ck.params;
    if (method.fine_tune) params = fine_tune(std::move(params), support, ctx.fine_tune_iters, ck.model, ctx.fine_tune_cfg);
    const SelectionResult sel = select(support, params, ck.model);
    r.indices = sel.indices;
    r.msre = msre(query, reconstruct_selected(support, query, sel, params, ck.model));
  } else if (method.baseline == "random") {
    Rng rng = Rng::stream(seed, 0x4000000 + (fnv1a64(t.id) << 32) + (r.ns << 24) + (k << 12) + repeat);
    r.indices = random_selection(rng, t.x.cols(), k);
  } else if (method.baseline == "variance") {
    r.indices = variance_selection(support, k);
  } else if (method.baseline == "ls_t" || method.baseline == "ls_st") {
    const auto candidates = method.baseline == "ls_t"
                                ? ls_t_candidates(support, k)
                                : ls_st_candidates(support, *ctx.pooled_sources, k);
    // Grid-best on the test instances: an optimistic (oracle) choice.
    double best = -INFINITY;
    for (const auto& c : candidates) {
      const double a = t.labels ? evaluate_selection(query, labels_of(t, ep.query_rows), class_count_of(t), c.indices,
                                                     ctx.cluster)
                                      .ari
                                : 0.0;
      if (a > best) {
        best = a;
        r.indices = c.indices;
        r.detail = "k_neighbors=" + std::to_string(c.cfg.k_neighbors) + ";heat_t=" + format_double(c.cfg.heat_t);
      }
    }
  } else {
    throw config_error("unknown method '" + method.name + "'");
  }

  const auto dedup = dedup_indices(r.indices);
  r.dedup = dedup.size();
  if (t.labels) {
    const auto s = evaluate_selection(query, labels_of(t, ep.query_rows), class_count_of(t), r.indices, ctx.cluster);
    r.ari = s.ari;
    r.nmi = s.nmi;
  }
  if (!t.signal.empty()) r.precision = recovery_precision(r.indices, t.signal);
  return r;
}

inline std::string raw_csv(const std::vector<Measurement>& rows) {
  std::ostringstream os;
  os << "target,method,ns,k,repeat,support_rows,indices,msre,ari,nmi,dedup,precision,detail\n";
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
  };
  for (const auto& m : rows) {
    os << m.target << ',' << m.method << ',' << m.ns << ',' << m.k << ',' << m.repeat << ',' << join(m.support_rows)
       << ',' << join(m.indices) << ',' << csv_number(m.msre) << ',' << csv_number(m.ari) << ','
       << csv_number(m.nmi) << ',' << m.dedup << ',' << csv_number(m.precision) << ',' << m.detail << '\n';
  }
  return os.str();
}

struct GridCell {
  std::string target, method;
  std::size_t ns = 0, k = 0;
  Summary msre, ari, nmi, dedup, precision;
};

/// Aggregate measurements per (target, method, ns, k), in first-seen order.
inline std::vector<GridCell> aggregate(const std::vector<Measurement>& rows) {
  std::vector<GridCell> cells;
  std::map<std::tuple<std::string, std::string, std::size_t, std::size_t>, std::vector<const Measurement*>> groups;
  std::vector<std::tuple<std::string, std::string, std::size_t, std::size_t>> order;
  for (const auto& m : rows) {
    auto key = std::make_tuple(m.target, m.method, m.ns, m.k);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&m);
  }
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> ms, as, ns, ds, ps;
    for (const auto* m : g) {
      ms.push_back(m->msre);
      as.push_back(m->ari);
      ns.push_back(m->nmi);
      ds.push_back(static_cast<double>(m->dedup));
      ps.push_back(m->precision);
    }
    cells.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), std::get<3>(key), summarize(ms),
                     summarize(as), summarize(ns), summarize(ds), summarize(ps)});
  }
  return cells;
}

inline std::string grid_csv(const std::vector<GridCell>& cells) {
  std::ostringstream os;
  os << "target,method,ns,k,repeats,msre_mean,msre_std,ari_mean,ari_std,nmi_mean,nmi_std,dedup_mean,precision_mean\n";
  for (const auto& c : cells) {
    os << c.target << ',' << c.method << ',' << c.ns << ',' << c.k << ',' << c.dedup.n << ',' << csv_number(c.msre.mean)
       << ',' << csv_number(c.msre.std) << ',' << csv_number(c.ari.mean) << ',' << csv_number(c.ari.std) << ','
       << csv_number(c.nmi.mean) << ',' << csv_number(c.nmi.std) << ',' << csv_number(c.dedup.mean) << ','
       << csv_number(c.precision.mean) << '\n';
  }
  return os.str();
}

struct EvalRequest {
  std::vector<std::string> checkpoints;
  std::vector<std::string> baselines;
  bool fine_tune = false;
};

/// Evaluate checkpoints and baselines over the N_S x K grid on every target
/// task. Writes grid.csv and raw.csv.
inline json cmd_eval(const RunConfig& cfg, const EvalRequest& req) {
  if (req.checkpoints.empty() && req.baselines.empty()) throw config_error("cmd_eval: nothing to evaluate");
  const TaskCollection raw = load_run_data(cfg);
  const auto targets = raw.with_role(TaskRole::target);
  if (targets.empty()) throw data_error("the collection has no target task");

  std::vector<Checkpoint> checkpoints;
  for (const auto& p : req.checkpoints) checkpoints.push_back(load_checkpoint(p));
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    if (checkpoints[i].model.features != targets.front().x.cols()) {
      throw data_error("checkpoint '" + req.checkpoints[i] + "' expects " +
                       std::to_string(checkpoints[i].model.features) + " features, data has " +
                       std::to_string(targets.front().x.cols()));
    }
    const auto& ks = cfg.eval.k;
    if (std::find(ks.begin(), ks.end(), checkpoints[i].model.budget) == ks.end()) {
      throw config_error("checkpoint '" + req.checkpoints[i] + "' has budget K=" +
                         std::to_string(checkpoints[i].model.budget) + ", which is not in the eval.k grid");
    }
  }

  // Baselines see data normalised by the configured mode; each checkpoint
  // sees data under its own training statistics.
  TaskCollection base_col = raw;
  normalize(base_col, cfg.norm);
  Matrix pooled;
  {
    const auto src = base_col.with_role(TaskRole::source);
    std::size_t rows = 0;
    for (const auto& s : src) rows += s.x.rows();
    pooled = Matrix(rows, targets.front().x.cols());
    std::size_t at = 0;
    for (const auto& s : src) {
      std::copy(s.x.data().begin(), s.x.data().end(), pooled.data().begin() + static_cast<std::ptrdiff_t>(at));
      at += s.x.size();
    }
  }
  for (const auto& b : req.baselines) {
    if (b != "random" && b != "variance" && b != "ls_t" && b != "ls_st") {
      throw config_error("unknown baseline '" + b + "' (expected random, variance, ls_t or ls_st)");
    }
    if (b == "ls_st" && pooled.rows() == 0) throw data_error("ls_st needs source tasks");
  }

  struct Job {
    std::size_t target, method, ns_i, k_i, repeat;
  };
  std::vector<Method> methods;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    methods.push_back({"model:" + fs::path(req.checkpoints[i]).parent_path().filename().string() + "/" +
                           checkpoints[i].variant + (req.fine_tune ? "+ft" : ""),
                       &checkpoints[i], req.fine_tune, ""});
  }
  for (const auto& b : req.baselines) methods.push_back({b, nullptr, false, b});

  std::vector<TaskDataset> base_targets = base_col.with_role(TaskRole::target);
  std::vector<std::vector<TaskDataset>> ck_targets;
  for (const auto& ck : checkpoints) {
    std::vector<TaskDataset> ts = targets;
    for (auto& t : ts) ck.norm.apply(t.x);
    ck_targets.push_back(std::move(ts));
  }

  std::vector<Job> jobs;
  for (std::size_t t = 0; t < targets.size(); ++t)
    for (std::size_t m = 0; m < methods.size(); ++m)
      for (std::size_t a = 0; a < cfg.eval.ns.size(); ++a)
        for (std::size_t b = 0; b < cfg.eval.k.size(); ++b) {
          if (methods[m].checkpoint && methods[m].checkpoint->model.budget != cfg.eval.k[b]) continue;
          for (std::size_t r = 0; r < cfg.eval.repeats; ++r) jobs.push_back({t, m, a, b, r});
        }
  if (jobs.empty()) throw config_error("cmd_eval: no grid cell matches the checkpoint budgets");

  std::vector<Measurement> rows(jobs.size());
  parallel_for(jobs.size(), worker_count(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const Method& method = methods[job.method];
    const std::size_t ck_index = static_cast<std::size_t>(method.checkpoint - checkpoints.data());
    EvalContext ctx;
    ctx.target = method.checkpoint ? &ck_targets[ck_index][job.target] : &base_targets[job.target];
    ctx.pooled_sources = &pooled;
    ctx.cluster = cfg.cluster;
    ctx.cluster.seed = cfg.seed;
    ctx.fine_tune_cfg = cfg.train_config();
    ctx.fine_tune_iters = cfg.eval.fine_tune_iters;
    const std::size_t ns = cfg.eval.ns[job.ns_i];
    const std::size_t k = cfg.eval.k[job.k_i];
    if (k > targets[job.target].x.cols()) throw config_error("grid K=" + std::to_string(k) + " exceeds M");
    const Episode ep = eval_episode(cfg.seed, job.target, *ctx.target, ns, job.repeat);
    rows[j] = measure(method, ctx, ep, k, cfg.seed, job.repeat);
  });

  const fs::path out(cfg.out);
  fs::create_directories(out);
  const auto cells = aggregate(rows);
  write_text(out / "grid.csv", grid_csv(cells));
  write_text(out / "raw.csv", raw_csv(rows));
  json report = {{"software_version", kVersion},
                 {"config_hash", config_hash(cfg)},
                 {"seed", cfg.seed},
                 {"cells", cells.size()},
                 {"measurements", rows.size()},
                 {"ls_grid_best_is_oracle", true}};
  json ck = json::array();
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    ck.push_back({{"path", req.checkpoints[i]}, {"hash", checkpoint_hash(checkpoints[i])}});
  }
  report["checkpoints"] = ck;
  write_text(out / "eval_report.json", report.dump(2) + "\n");
  return report;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Trained variants: the core ablations, plus the temperature and noise
/// ablations with `full`.
inline std::vector<std::string> bench_variants(bool full) {
  std::vector<std::string> v{"ours", "ours_no_r", "ours_no_alpha", "cae"};
  if (full) {
    for (const char* extra : {"ours_fixed_tau", "cae_fixed_tau", "ours_no_noise", "cae_no_noise"}) v.push_back(extra);
  }
  return v;
}

inline std::vector<std::string> bench_baselines() { return {"random", "variance", "ls_t", "ls_st"}; }

struct BenchOptions {
  std::vector<std::string> variants = bench_variants(false);
  std::vector<std::string> baselines = bench_baselines();
  bool write_checkpoints = true;
};

struct BenchTrainRecord {
  std::uint64_t seed = 0;
  std::string variant;
  std::string checkpoint_hash;
  std::size_t iterations = 0;
  double best_val_msre = NAN;
  std::string stop_reason;
};

struct BenchResult {
  std::vector<std::string> methods;  // variant labels then baselines
  std::vector<std::uint64_t> seeds;
  // method -> metric -> one value per seed (mean over that seed's supports)
  std::map<std::string, std::map<std::string, std::vector<double>>> per_seed;
  std::vector<Measurement> raw;
  std::vector<BenchTrainRecord> training;
  json report;

  double median(const std::string& method, const std::string& metric) const {
    return summarize(per_seed.at(method).at(metric)).median;
  }
};

inline const std::vector<std::string>& bench_metrics() {
  static const std::vector<std::string> m{"msre", "precision", "ari", "nmi", "dedup"};
  return m;
}

/// Generate one synthetic collection per seed, train every variant with the
/// same seed, and score all methods on the target task's supports.
inline BenchResult run_bench(const RunConfig& base, const BenchOptions& opt) {
  if (base.manifest) throw config_error("bench runs on synthetic data; remove 'manifest' from the config");
  const std::size_t workers = worker_count();
  BenchResult res;
  for (std::size_t i = 0; i < base.bench.seeds; ++i) res.seeds.push_back(base.bench.first_seed + i);

  auto seed_config = [&](std::uint64_t seed, const std::string& variant) {
    RunConfig c = base;
    c.seed = seed;
    c.synth.seed = seed;
    c.variant = variant;
    c.set_support_size(base.bench.n_support);
    c.set_budget(base.bench.budget);
    c.validate();
    return c;
  };

  std::vector<TaskCollection> data(res.seeds.size());
  std::vector<NormStats> norms(res.seeds.size());
  std::vector<Matrix> pooled(res.seeds.size());
  for (std::size_t s = 0; s < res.seeds.size(); ++s) {
    const RunConfig c = seed_config(res.seeds[s], "ours");
    data[s] = load_run_data(c);
    norms[s] = normalize(data[s], c.norm);
    const auto src = data[s].with_role(TaskRole::source);
    std::size_t rows = 0;
    for (const auto& t : src) rows += t.x.rows();
    pooled[s] = Matrix(rows, c.synth.features);
    std::size_t at = 0;
    for (const auto& t : src) {
      std::copy(t.x.data().begin(), t.x.data().end(), pooled[s].data().begin() + static_cast<std::ptrdiff_t>(at));
      at += t.x.size();
    }
  }

  // Training: one job per (seed, variant).
  const std::size_t nv = opt.variants.size();
  std::vector<Checkpoint> models(res.seeds.size() * nv);
  res.training.resize(models.size());
  parallel_for(models.size(), workers, [&](std::size_t j) {
    const std::size_t s = j / nv;
    const RunConfig c = seed_config(res.seeds[s], opt.variants[j % nv]);
    TrainedModel tm = train_variant(c, data[s], norms[s]);
    res.training[j] = {res.seeds[s], tm.checkpoint.variant, checkpoint_hash(tm.checkpoint), tm.report.iterations,
                       tm.report.best_val_msre, tm.report.stop_reason};
    models[j] = std::move(tm.checkpoint);
  });
  for (std::size_t v = 0; v < nv; ++v) res.methods.push_back(models[v].variant);
  for (const auto& b : opt.baselines) res.methods.push_back(b);

  // Evaluation: one job per (seed, method, repeat).
  const std::size_t nm = res.methods.size();
  const std::size_t reps = base.bench.repeats;
  res.raw.resize(res.seeds.size() * nm * reps);
  parallel_for(res.raw.size(), workers, [&](std::size_t j) {
    const std::size_t s = j / (nm * reps);
    const std::size_t m = (j / reps) % nm;
    const std::size_t r = j % reps;
    const RunConfig c = seed_config(res.seeds[s], "ours");
    const auto targets = data[s].with_role(TaskRole::target);
    if (targets.empty()) throw data_error("synthetic collection has no target task");
    Method method;
    method.name = res.methods[m];
    if (m < nv) {
      method.checkpoint = &models[s * nv + m];
    } else {
      method.baseline = res.methods[m];
    }
    EvalContext ctx;
    ctx.target = &targets.front();
    ctx.pooled_sources = &pooled[s];
    ctx.cluster = c.cluster;
    ctx.cluster.seed = c.seed;
    const Episode ep = eval_episode(c.seed, 0, targets.front(), c.bench.n_support, r);
    res.raw[j] = measure(method, ctx, ep, c.bench.budget, c.seed, r);
  });

  for (std::size_t s = 0; s < res.seeds.size(); ++s) {
    for (std::size_t m = 0; m < nm; ++m) {
      std::map<std::string, std::vector<double>> vals;
      for (std::size_t r = 0; r < reps; ++r) {
        const Measurement& x = res.raw[(s * nm + m) * reps + r];
        vals["msre"].push_back(x.msre);
        vals["precision"].push_back(x.precision);
        vals["ari"].push_back(x.ari);
        vals["nmi"].push_back(x.nmi);
        vals["dedup"].push_back(static_cast<double>(x.dedup));
      }
      for (const auto& metric : bench_metrics()) res.per_seed[res.methods[m]][metric].push_back(summarize(vals[metric]).mean);
    }
  }

  json methods = json::object();
  for (const auto& name : res.methods) {
    json entry = json::object();
    for (const auto& metric : bench_metrics()) {
      const auto& v = res.per_seed[name][metric];
      const Summary sm = summarize(v);
      json per = json::array();
      for (double d : v) per.push_back(number_or_null(d));
      entry[metric] = {{"median", number_or_null(sm.median)}, {"mean", number_or_null(sm.mean)},
                       {"std", number_or_null(sm.std)}, {"per_seed", per}};
    }
    methods[name] = entry;
  }
  auto ranking = [&](const std::string& metric, bool ascending) {
    std::vector<std::string> names;
    for (const auto& n : res.methods)
      if (std::isfinite(res.median(n, metric))) names.push_back(n);
    std::stable_sort(names.begin(), names.end(), [&](const std::string& a, const std::string& b) {
      return ascending ? res.median(a, metric) < res.median(b, metric) : res.median(a, metric) > res.median(b, metric);
    });
    return names;
  };
  json training = json::array();
  for (const auto& t : res.training) {
    training.push_back({{"seed", t.seed},
                        {"variant", t.variant},
                        {"checkpoint_hash", t.checkpoint_hash},
                        {"iterations", t.iterations},
                        {"best_val_msre", number_or_null(t.best_val_msre)},
                        {"stop_reason", t.stop_reason}});
  }
  res.report = {{"software_version", kVersion},
                {"config_hash", config_hash(base)},
                {"seeds", res.seeds},
                {"n_support", base.bench.n_support},
                {"budget", base.bench.budget},
                {"repeats", reps},
                {"iterations", base.train.iterations},
                {"methods", methods},
                {"ranking_by_msre", ranking("msre", true)},
                {"ranking_by_precision", ranking("precision", false)},
                {"training", training},
                {"ls_grid_best_is_oracle", true},
                {"config", to_json(base)}};

  if (opt.write_checkpoints) {
    for (std::size_t j = 0; j < models.size(); ++j) {
      const fs::path p = fs::path(base.out) / "checkpoints" / ("seed" + std::to_string(res.training[j].seed)) /
                         (opt.variants[j % nv] + ".json");
      write_text(p, serialize(models[j]));
    }
  }
  return res;
}

inline std::string bench_summary(const BenchResult& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-26s %10s %10s %8s %8s %7s\n", "method", "msre", "precision", "ari", "nmi",
                "dedup");
  os << "medians over " << r.seeds.size() << " seeds\n" << line;
  for (const auto& m : r.methods) {
    auto cell = [&](const std::string& metric) {
      const double v = r.median(m, metric);
      char b[32];
      if (std::isfinite(v)) {
        std::snprintf(b, sizeof b, "%.4f", v);
      } else {
        std::snprintf(b, sizeof b, "-");
      }
      return std::string(b);
    };
    std::snprintf(line, sizeof line, "%-26s %10s %10s %8s %8s %7s\n", m.c_str(), cell("msre").c_str(),
                  cell("precision").c_str(), cell("ari").c_str(), cell("nmi").c_str(), cell("dedup").c_str());
    os << line;
  }
  return os.str();
}

/// Run the benchmark and write bench_report.json, raw.csv and summary.txt.
inline BenchResult cmd_bench(const RunConfig& cfg, bool full) {
  BenchOptions opt;
  opt.variants = bench_variants(full);
  BenchResult r = run_bench(cfg, opt);
  const fs::path out(cfg.out);
  write_text(out / "bench_report.json", r.report.dump(2) + "\n");
  write_text(out / "raw.csv", raw_csv(r.raw));
  write_text(out / "summary.txt", bench_summary(r));
  return r;
}

/// Write the configured synthetic collection as a manifest plus CSVs.
inline json cmd_synth(const RunConfig& cfg) {
  const TaskCollection col = synth_generate(cfg.synth).collection();
  write_collection(cfg.out, col);
  json tasks = json::array();
  for (const auto& t : col.tasks) tasks.push_back({{"id", t.id}, {"role", to_string(t.role)}, {"signal", t.signal}});
  return {{"manifest", (fs::path(cfg.out) / "manifest.json").string()}, {"tasks", tasks}};
}

}  // namespace fewsel
