#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "feddua/harness.hpp"

namespace {

feddua::ExperimentConfig load_config(const std::string& path,
                                     const std::vector<std::string>& overrides) {
  feddua::ExperimentConfig cfg = feddua::parse_config_file(path);
  for (const auto& kv : overrides) feddua::apply_override(cfg, kv);
  return cfg;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides,
            int threads, const std::string& out_dir) {
  feddua::ExperimentConfig cfg = load_config(config_path, overrides);
  if (threads > 0) cfg.threads = threads;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (cfg.out_dir.empty()) cfg.out_dir = "out";
  cfg.resolve_and_validate();

  feddua::ExperimentResult result = feddua::run_experiment(cfg);
  feddua::emit_outputs(result, cfg, cfg.out_dir);

  std::printf("rounds=%zu final_accuracy=%.4f outputs=%s\n", result.records.size(),
              result.final_accuracy, cfg.out_dir.c_str());
  return 0;
}

int cmd_calibrate(const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& out_file) {
  feddua::ExperimentConfig cfg = load_config(config_path, overrides);
  cfg.resolve_and_validate();

  // Reproduce the run's dataset, split and initial parameters, then emit the
  // prior so later runs can load it via prior_file.
  feddua::ExperimentConfig calib_cfg = cfg;
  calib_cfg.prior_file.clear();
  calib_cfg.feddua_enabled = true;
  calib_cfg.rounds = cfg.rounds;

  // run_experiment would also run the federation; calibration only needs the
  // prior, so rebuild the pieces here.
  feddua::Dataset full = calib_cfg.dataset == "csv"
                             ? feddua::load_csv(calib_cfg.csv_path)
                             : [&] {
                                 feddua::Rng rng =
                                     feddua::derive_rng(calib_cfg.seed, {feddua::stream::kDataset});
                                 return feddua::make_blobs(
                                     calib_cfg.blob_classes, calib_cfg.blob_dim,
                                     calib_cfg.blob_samples_per_class, calib_cfg.blob_spread, rng);
                               }();
  full.validate();
  const feddua::ModelSpec spec = calib_cfg.model_spec(full.dim, full.num_classes());

  // Stratified split identical to run_experiment's.
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(full.num_classes()));
  for (int i = 0; i < full.size(); ++i) by_class[full.labels[i]].push_back(i);
  feddua::Rng split_rng = feddua::derive_rng(calib_cfg.seed, {feddua::stream::kSplit});
  std::vector<int> shadow_rows;
  int train_pool = 0;
  for (auto& pool : by_class) {
    split_rng.shuffle(pool);
    const int n = static_cast<int>(pool.size());
    const int n_test = static_cast<int>(std::lround(calib_cfg.test_fraction * n));
    const int n_shadow =
        static_cast<int>(std::lround(calib_cfg.shadow_fraction * (n - n_test)));
    for (int i = n_test; i < n_test + n_shadow; ++i) shadow_rows.push_back(pool[i]);
    train_pool += n - n_test - n_shadow;
  }
  std::sort(shadow_rows.begin(), shadow_rows.end());
  feddua::Shard sh = feddua::gather(full, shadow_rows);
  feddua::Dataset shadow{std::move(sh.features), std::move(sh.labels), full.dim, "shadow"};

  feddua::Rng theta_rng = feddua::derive_rng(calib_cfg.seed, {feddua::stream::kInitTheta});
  feddua::ParamVector theta = feddua::init_params(spec, theta_rng);
  feddua::Rng phi_rng = feddua::derive_rng(calib_cfg.seed, {feddua::stream::kInitPhi});
  feddua::QuantityBranch branch(calib_cfg.branch_hidden, calib_cfg.branch_lr, spec.param_count(),
                                phi_rng);

  feddua::AlphaPrior prior = feddua::calibrate_prior(spec, calib_cfg.strategy, shadow, calib_cfg,
                                                     theta, branch.phi(), train_pool);
  std::string path = out_file.empty() ? "prior.txt" : out_file;
  prior.save(path);
  std::printf("prior: horizon=%d volumes=%zu -> %s\n", prior.horizon(), prior.volumes().size(),
              path.c_str());
  return 0;
}

int cmd_verify_logs(const std::string& ledger_path, int w_exclude, int w_clear) {
  feddua::TrustConfig cfg{w_exclude, w_clear};
  std::string report = feddua::check_ledger_file(ledger_path, cfg);
  std::printf("%s\n", report.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedDua federated-learning simulator"};
  app.require_subcommand(1);

  std::string config_path, out_dir, out_file, ledger_path;
  std::vector<std::string> overrides;
  int threads = 0;
  int w_exclude = 3, w_clear = 2;

  CLI::App* run = app.add_subcommand("run", "Run a federated experiment");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--set", overrides, "Override key=value (repeatable)");
  run->add_option("--threads", threads, "Worker threads for client training");
  run->add_option("--out", out_dir, "Output directory");

  CLI::App* calibrate = app.add_subcommand("calibrate", "Calibrate an alpha prior");
  calibrate->add_option("--config", config_path, "Config file")->required();
  calibrate->add_option("--set", overrides, "Override key=value (repeatable)");
  calibrate->add_option("--out", out_file, "Prior output file (default prior.txt)");

  CLI::App* verify_logs = app.add_subcommand("verify-logs", "Sanity-check a verdict ledger");
  verify_logs->add_option("--ledger", ledger_path, "verdicts.log path")->required();
  verify_logs->add_option("--w-exclude", w_exclude, "Flags until exclusion");
  verify_logs->add_option("--w-clear", w_clear, "Consecutive accepts until reset");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, overrides, threads, out_dir);
    if (calibrate->parsed()) return cmd_calibrate(config_path, overrides, out_file);
    if (verify_logs->parsed()) return cmd_verify_logs(ledger_path, w_exclude, w_clear);
  } catch (const feddua::config_error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
