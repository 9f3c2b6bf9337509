#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "feddua/model.hpp"
#include "feddua/strategies.hpp"

namespace feddua {

// Full experiment configuration. The on-disk format is flat `key = value`
// lines with `#` comments; `overrides` entries look like `key=value`.
struct ExperimentConfig {
  std::uint64_t seed = 1;

  int num_clients = 100;
  int clients_per_round = 10;
  int rounds = 50;
  int epochs_per_round = 2;
  int batch_size = 16;
  double eta = 0.3;
  double dirichlet_beta = 0.5;
  int min_samples = 0;  // 0 -> resolved to 2 * batch_size

  StrategyKind strategy = StrategyKind::FedAvg;
  double fedprox_mu = 0.01;
  double ditto_lambda = 0.1;

  bool feddua_enabled = true;
  std::vector<int> attacker_ids;
  double misreport_factor = 3.0;

  // verification
  double tau = 0.5;
  double quantile_lo = 0.005;
  double quantile_hi = 0.995;
  int warn_exclude = 3;
  int warn_clear = 2;

  // calibration
  std::vector<int> calib_volumes;  // empty -> resolved from expected shard size
  int calib_replicas = 7;
  int calib_trajectories = 3;  // independent shadow trajectories pooled per cell
  int calib_round_window = 1;  // +/- rounds pooled when fitting a cell's band
  double shadow_fraction = 0.1;
  std::string prior_file;  // non-empty -> load instead of calibrating

  // dataset
  std::string dataset = "blobs";  // blobs | csv
  std::string csv_path;
  int blob_classes = 8;
  int blob_dim = 16;
  int blob_samples_per_class = 2500;
  double blob_spread = 0.8;
  double test_fraction = 0.2;

  // model
  std::string model = "mlp1";  // logreg | mlp1
  int hidden_dim = 32;

  // quantity-aware branch
  int branch_hidden = 4;
  double branch_lr = 0.01;
  int branch_steps = 5;

  int threads = 1;
  std::string out_dir;

  ModelSpec model_spec(int input_dim, int num_classes) const;

  // Fills derived defaults (min_samples, calib_volumes) and checks invariants.
  void resolve_and_validate();

  void echo(std::ostream& out) const;
};

ExperimentConfig parse_config_file(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& key_eq_value);

}  // namespace feddua
