#pragma once

#include <optional>
#include <string>
#include <vector>

#include "feddua/config.hpp"
#include "feddua/server.hpp"

namespace feddua {

struct RoundClientRecord {
  int client_id = 0;
  long claimed_volume = 0;
  long true_volume = 0;
  std::optional<long> estimated_volume;
  VerdictStatus status = VerdictStatus::Accept;
  FlagReason reason = FlagReason::None;
  double delta_w = 0.0;  // claimed-weight minus true-weight within the round
};

struct RoundRecord {
  int round = 0;
  double accuracy = 0.0;
  std::vector<RoundClientRecord> clients;
  int honest = 0, warned = 0, excluded = 0;
  bool aggregated = true;
  double wallclock_ms = 0.0;  // kept out of metrics.csv so outputs stay byte-stable
};

struct ExperimentResult {
  std::vector<RoundRecord> records;
  std::vector<TrustLedger::Event> ledger_events;
  std::vector<long> true_volumes;  // per client id
  double final_accuracy = 0.0;     // last round, 0 if no rounds
};

// min(K, |eligible|) ids drawn uniformly without replacement, sorted.
std::vector<int> sample_clients(Rng& rng, const std::vector<int>& eligible, int k);

// The full round loop: dataset build, split, optional prior calibration,
// sampling, local training, verification, trust, aggregation, evaluation.
// Deterministic in cfg.seed; cfg.threads affects wall-clock only.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Writes metrics.csv, verdicts.log, config.resolved, accuracy_curve.tsv and
// timings.log into out_dir (created if missing).
void emit_outputs(const ExperimentResult& result, const ExperimentConfig& cfg,
                  const std::string& out_dir);

// Round-trips emit_outputs' metrics.csv.
std::vector<RoundRecord> parse_metrics_csv(const std::string& path);

// Offline ledger checks; returns a human-readable report, throws on violation.
std::string check_ledger_file(const std::string& path, const TrustConfig& cfg);

}  // namespace feddua
