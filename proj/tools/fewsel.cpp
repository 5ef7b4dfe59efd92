// fewsel: train support-conditioned feature selectors, select features for a
// target support set, evaluate against baselines, run the synthetic benchmark.
//
// Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numeric failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fewsel/fewsel.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
  std::optional<std::size_t> ns;
  std::optional<std::size_t> k;
  std::optional<std::size_t> iters;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run configuration");
  app->add_option("--seed", f.seed, "Run seed");
  app->add_option("--out", f.out, "Output directory");
  app->add_option("--variant", f.variant, "ours | ours_no_r | ours_no_alpha | cae | cae_fixed_tau[(t)] | "
                                          "cae_no_noise | ours_no_noise | ours_fixed_tau[(t)]");
  app->add_option("--ns", f.ns, "Support size N_S (training episodes and evaluation)");
  app->add_option("--k", f.k, "Feature budget K");
  app->add_option("--iters", f.iters, "Training iterations I");
}

fewsel::RunConfig resolve(const CommonFlags& f) {
  fewsel::RunConfig c = f.config.empty() ? fewsel::RunConfig{} : fewsel::load_run_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.out) c.out = *f.out;
  if (f.variant) c.variant = *f.variant;
  if (f.ns) c.set_support_size(*f.ns);
  if (f.k) c.set_budget(*f.k);
  if (f.iters) c.train.iterations = *f.iters;
  c.validate();
  return c;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot support-conditioned feature selection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fewsel::kVersion);

  CommonFlags train_f, eval_f, bench_f, synth_f;

  auto* train = app.add_subcommand("train", "Meta-train a selector on the source tasks");
  add_common(train, train_f);

  auto* sel = app.add_subcommand("select", "Select features for a support CSV");
  std::string ckpt, support, truth;
  std::optional<std::size_t> sel_k;
  sel->add_option("checkpoint", ckpt, "checkpoint.json")->required();
  sel->add_option("support", support, "support CSV (header row, optional label column)")->required();
  sel->add_option("--k", sel_k, "Expected budget K (must match the checkpoint)");
  sel->add_option("--truth", truth, "Comma-separated true signal features, adds recovery precision");

  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints and baselines over the N_S x K grid");
  add_common(eval, eval_f);
  std::vector<std::string> eval_ckpts, eval_baselines;
  bool fine_tune = false;
  eval->add_option("--checkpoint", eval_ckpts, "Checkpoint(s) to evaluate");
  eval->add_option("--baseline", eval_baselines, "random | variance | ls_t | ls_st");
  eval->add_flag("--fine-tune", fine_tune, "Fine-tune each checkpoint on the support before selecting");

  auto* bench = app.add_subcommand("bench", "Synthetic benchmark: all variants and baselines over seeds");
  add_common(bench, bench_f);
  bool full = false;
  std::optional<std::size_t> seeds;
  bench->add_flag("--full", full, "Include the temperature and noise ablations");
  bench->add_option("--seeds", seeds, "Number of seeds");

  auto* synth = app.add_subcommand("synth", "Write the synthetic task collection as CSV + manifest");
  add_common(synth, synth_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      print(fewsel::cmd_train(resolve(train_f)));
    } else if (*sel) {
      const auto t = truth.empty() ? std::vector<std::size_t>{} : fewsel::parse_index_list(truth);
      print(fewsel::cmd_select(ckpt, support, sel_k, t));
    } else if (*eval) {
      fewsel::EvalRequest req{eval_ckpts, eval_baselines, fine_tune};
      print(fewsel::cmd_eval(resolve(eval_f), req));
    } else if (*bench) {
      auto c = resolve(bench_f);
      if (seeds) c.bench.seeds = *seeds;
      c.validate();
      const auto r = fewsel::cmd_bench(c, full);
      std::cout << fewsel::bench_summary(r);
    } else if (*synth) {
      print(fewsel::cmd_synth(resolve(synth_f)));
    }
  } catch (const fewsel::config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const fewsel::data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const fewsel::numeric_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::domain_error& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
