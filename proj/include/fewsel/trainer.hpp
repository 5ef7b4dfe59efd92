#pragma once

// Episodic meta-training: sample a source task, a support set and a disjoint
// query set, take one Adam step on the query reconstruction error, and anneal
// the Concrete temperature geometrically. Validation runs on a frozen episode
// bank and the best snapshot is returned.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fewsel/adam.hpp"
#include "fewsel/concrete.hpp"
#include "fewsel/data.hpp"
#include "fewsel/errors.hpp"
#include "fewsel/model.hpp"
#include "fewsel/rng.hpp"
#include "fewsel/tape.hpp"

namespace fewsel {

struct TrainConfig {
  std::size_t n_support = 2;
  std::size_t n_query = 62;
  std::size_t iterations = 50000;
  double t0 = 10.0;
  double t1 = 0.01;
  AdamConfig adam;
  std::size_t eval_interval = 500;
  std::size_t patience = 10;
  std::size_t val_episodes = 50;
  bool use_noise = true;
  std::size_t loss_window = 100;
  std::uint64_t seed = 0;

  AnnealSchedule schedule() const { return {t0, t1, std::max<std::size_t>(iterations, 1)}; }

  void validate() const {
    if (n_support < 1) throw config_error("train.n_support must be >= 1");
    if (n_query < 1) throw config_error("train.n_query must be >= 1");
    if (eval_interval < 1) throw config_error("train.eval_interval must be >= 1");
    if (loss_window < 1) throw config_error("train.loss_window must be >= 1");
    if (!(t0 > 0.0) || !(t1 > 0.0)) throw config_error("train.t0 and train.t1 must be positive");
    if (!(adam.lr > 0.0)) throw config_error("train.lr must be positive");
  }
};

// RNG stream ids derived from TrainConfig::seed.
namespace streams {
inline constexpr std::uint64_t init = 0;
inline constexpr std::uint64_t episodes = 1;
inline constexpr std::uint64_t gumbel = 2;
inline constexpr std::uint64_t val_bank = 3;
inline constexpr std::uint64_t fine_tune = 4;
}  // namespace streams

struct LogRow {
  std::size_t iteration = 0;
  double tau = 0.0;
  double train_loss = NAN;  // mean over the last loss window
  double val_msre = NAN;    // only on validation rows
};

struct TrainReport {
  std::size_t iterations = 0;
  double initial_val_msre = NAN;
  double best_val_msre = NAN;
  std::size_t best_iteration = 0;
  std::vector<double> loss_curve;  // window means
  std::vector<LogRow> log;
  std::string stop_reason;
  double wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const LogRow&)> on_log;
  std::function<void(const ModelParams&, std::size_t iteration, double val_msre)> on_best;
};

struct ValEpisode {
  std::size_t task = 0;
  Matrix support;
  Matrix query;
  GumbelDraw gumbel;
};

/// Fixed validation episodes, noise included, evaluated at tau.
struct ValidationBank {
  std::vector<ValEpisode> episodes;
  double tau = 0.01;
};

inline void check_task_sizes(const std::vector<UnlabeledTask>& tasks, const TrainConfig& cfg) {
  const std::size_t need = cfg.n_support + cfg.n_query;
  for (const auto& t : tasks) {
    if (t.x.rows() < need) {
      throw data_error("task '" + t.id + "' has " + std::to_string(t.x.rows()) + " instances, needs at least " +
                       std::to_string(need) + " (n_support + n_query)");
    }
  }
}

inline ValidationBank make_validation_bank(const std::vector<UnlabeledTask>& tasks, const ModelConfig& model,
                                           const TrainConfig& cfg) {
  check_task_sizes(tasks, cfg);
  ValidationBank bank;
  bank.tau = cfg.t1;
  if (tasks.empty()) return bank;
  Rng rng = Rng::stream(cfg.seed, streams::val_bank);
  for (std::size_t e = 0; e < cfg.val_episodes; ++e) {
    const std::size_t d = rng.index(tasks.size());
    Episode ep = sample_episode(rng, d, tasks[d].x.rows(), cfg.n_support, cfg.n_query);
    ValEpisode v;
    v.task = d;
    v.support = tasks[d].x.gather_rows(ep.support_rows);
    v.query = tasks[d].x.gather_rows(ep.query_rows);
    v.gumbel = cfg.use_noise ? gumbel_sample(rng, model.budget, model.features)
                             : zero_gumbel(model.budget, model.features);
    bank.episodes.push_back(std::move(v));
  }
  return bank;
}

/// Mean query MSE over the bank, summed in episode order.
inline double validate(const ValidationBank& bank, const ModelParams& params, const ModelConfig& model) {
  if (bank.episodes.empty()) throw std::invalid_argument("validate: empty validation bank");
  double total = 0.0;
  for (const auto& ep : bank.episodes) {
    Tape t;
    ModelVars v = bind(t, params, false);
    total += episode_loss(t, v, ep.support, ep.query, bank.tau, ep.gumbel, model).value()[0];
  }
  return total / static_cast<double>(bank.episodes.size());
}

/// One gradient evaluation of the episode loss.
inline double loss_and_grads(const ModelParams& params, const Matrix& support, const Matrix& query, double tau,
                             const GumbelDraw& gumbel, const ModelConfig& model, std::vector<Matrix>& grads) {
  Tape t;
  ModelVars v = bind(t, params, true);
  Var loss = episode_loss(t, v, support, query, tau, gumbel, model);
  t.backward(loss);
  grads = collect_grads(v);
  return loss.value()[0];
}

struct TrainResult {
  ModelParams params;
  TrainReport report;
};

inline TrainResult train(const std::vector<UnlabeledTask>& sources, const std::vector<UnlabeledTask>& val_tasks,
                         ModelParams params, const ModelConfig& model, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}) {
  const auto started = std::chrono::steady_clock::now();
  model.validate();
  cfg.validate();
  if (sources.empty()) throw data_error("training needs at least one source task");
  check_task_sizes(sources, cfg);
  for (const auto& t : sources) {
    if (t.x.cols() != model.features) {
      throw data_error("task '" + t.id + "' has " + std::to_string(t.x.cols()) + " features, model expects " +
                       std::to_string(model.features));
    }
  }

  const AnnealSchedule sched = cfg.schedule();
  Rng episode_rng = Rng::stream(cfg.seed, streams::episodes);
  Rng noise_rng = Rng::stream(cfg.seed, streams::gumbel);
  const ValidationBank bank = make_validation_bank(val_tasks, model, cfg);
  const bool has_val = !bank.episodes.empty();

  TrainResult out;
  TrainReport& rep = out.report;
  out.params = params;
  if (has_val) {
    rep.initial_val_msre = validate(bank, params, model);
    rep.best_val_msre = rep.initial_val_msre;
  }

  AdamState state;
  std::vector<Matrix> grads;
  double window_sum = 0.0;
  std::size_t window_count = 0;
  std::size_t stale_evals = 0;
  rep.stop_reason = "max_iterations";

  auto emit = [&](const LogRow& row) {
    rep.log.push_back(row);
    if (hooks.on_log) hooks.on_log(row);
  };

  auto run_validation = [&](std::size_t done, double tau) {
    const double val = validate(bank, params, model);
    LogRow row{done, tau, window_count ? window_sum / static_cast<double>(window_count) : NAN, val};
    emit(row);
    if (val < rep.best_val_msre) {
      rep.best_val_msre = val;
      rep.best_iteration = done;
      out.params = params;
      stale_evals = 0;
      if (hooks.on_best) hooks.on_best(params, done, val);
    } else {
      ++stale_evals;
    }
  };

  std::size_t i = 0;
  for (; i < cfg.iterations; ++i) {
    const double tau = anneal_tau(i, sched);
    const std::size_t d = episode_rng.index(sources.size());
    const Matrix& x = sources[d].x;
    Episode ep = sample_episode(episode_rng, d, x.rows(), cfg.n_support, cfg.n_query);
    const Matrix support = x.gather_rows(ep.support_rows);
    const Matrix query = x.gather_rows(ep.query_rows);
    const GumbelDraw g = cfg.use_noise ? gumbel_sample(noise_rng, model.budget, model.features)
                                       : zero_gumbel(model.budget, model.features);

    const double loss = loss_and_grads(params, support, query, tau, g, model, grads);
    if (!std::isfinite(loss)) throw numeric_error("non-finite training loss at iteration " + std::to_string(i));
    adam_step(params, grads, state, cfg.adam);

    window_sum += loss;
    ++window_count;
    const std::size_t done = i + 1;
    const bool window_full = window_count == cfg.loss_window;
    if (window_full) {
      const double mean = window_sum / static_cast<double>(window_count);
      rep.loss_curve.push_back(mean);
      emit({done, tau, mean, NAN});
    }
    if (has_val && done % cfg.eval_interval == 0) run_validation(done, tau);
    if (window_full) {
      window_sum = 0.0;
      window_count = 0;
    }
    if (has_val && cfg.patience > 0 && stale_evals >= cfg.patience) {
      rep.stop_reason = "early_stopping";
      ++i;
      break;
    }
  }
  rep.iterations = i;
  if (has_val && i > 0 && i % cfg.eval_interval != 0 && rep.stop_reason != "early_stopping") {
    run_validation(i, anneal_tau(std::min(i, sched.iterations), sched));
  }
  if (!has_val) out.params = params;
  if (i == 0) rep.stop_reason = cfg.iterations == 0 ? "no_iterations" : rep.stop_reason;
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

/// Continue Adam on the target support, reconstructing the support itself.
inline ModelParams fine_tune(ModelParams params, const Matrix& target_support, std::size_t iters,
                             const ModelConfig& model, const TrainConfig& cfg) {
  if (target_support.rows() == 0) throw std::invalid_argument("fine_tune: empty support");
  Rng noise_rng = Rng::stream(cfg.seed, streams::fine_tune);
  AdamState state;
  std::vector<Matrix> grads;
  for (std::size_t i = 0; i < iters; ++i) {
    const GumbelDraw g = cfg.use_noise ? gumbel_sample(noise_rng, model.budget, model.features)
                                       : zero_gumbel(model.budget, model.features);
    const double loss = loss_and_grads(params, target_support, target_support, cfg.t1, g, model, grads);
    if (!std::isfinite(loss)) throw numeric_error("non-finite fine-tuning loss at iteration " + std::to_string(i));
    adam_step(params, grads, state, cfg.adam);
  }
  return params;
}

}  // namespace fewsel
