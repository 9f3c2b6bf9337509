#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "feddua/client.hpp"
#include "feddua/config.hpp"
#include "feddua/data.hpp"

namespace feddua {

struct AlphaBand {
  double q_lo = 0.0;
  double q_hi = 0.0;
  int n_samples = 0;
};

// Calibrated quantile bands of the adjustment factor, indexed by
// (round, volume). Lookups interpolate linearly in log-volume between
// calibrated volumes, clamp outside the grid, and carry the last round's
// bands forward beyond the horizon, so a lookup never fails.
class AlphaPrior {
 public:
  AlphaPrior() = default;
  AlphaPrior(std::vector<int> volumes, int horizon);

  void set_band(int round, int volume_index, const AlphaBand& band);
  AlphaBand lookup(int round, double volume_samples) const;

  const std::vector<int>& volumes() const { return volumes_; }
  int horizon() const { return horizon_; }
  const AlphaBand& cell(int round, int volume_index) const;

  void save(const std::string& path) const;
  static AlphaPrior load(const std::string& path);

 private:
  std::vector<int> volumes_;                 // ascending, sample units
  std::vector<std::vector<AlphaBand>> grid_; // [round][volume_index]
  int horizon_ = 0;
};

// Linear-interpolation empirical quantile of an unsorted sample.
double empirical_quantile(std::vector<double> values, double p);
double median(std::vector<double> values);

enum class VerdictStatus { Accept, Flag };
enum class FlagReason { None, AlphaOutOfBand, VolumeInconsistent, NotEstimable };

std::string to_string(VerdictStatus s);
std::string to_string(FlagReason r);

struct Verdict {
  VerdictStatus status = VerdictStatus::Accept;
  FlagReason reason = FlagReason::None;
  // Median-over-epochs volume estimate; present whenever estimable (kept on
  // Accept verdicts too, for diagnostics and metrics).
  std::optional<long> estimated_volume;
  double alpha_median = 0.0;
};

struct VerifyConfig {
  double tau = 0.5;
  int batch_size = 1;
};

// Two checks on the upload's median alpha: (a) inside the calibrated band for
// (round, claimed volume); (b) re-estimated volume within tau of the claim.
Verdict verify(const ClientUpdate& update, const AlphaPrior& prior, int round,
               const VerifyConfig& cfg);

enum class TrustStatus { Honest, Warned, Excluded };

std::string to_string(TrustStatus s);

struct TrustConfig {
  int warn_exclude = 3;  // flags until exclusion
  int warn_clear = 2;    // consecutive accepts until reset
};

// Per-client verification history and the warn/exclude escalation policy.
// Excluded is absorbing; warn counts reset after warn_clear consecutive
// accepts.
class TrustLedger {
 public:
  void apply(int client_id, int round, const Verdict& verdict, const TrustConfig& cfg);

  TrustStatus status(int client_id) const;
  int warn_count(int client_id) const;
  bool excluded(int client_id) const { return status(client_id) == TrustStatus::Excluded; }

  struct Event {
    int round = 0;
    int client_id = 0;
    Verdict verdict;
  };
  const std::vector<Event>& events() const { return events_; }

  int count(TrustStatus s, int num_clients) const;

 private:
  struct Entry {
    TrustStatus status = TrustStatus::Honest;
    int warns = 0;
    int consecutive_accepts = 0;
  };
  std::map<int, Entry> entries_;
  std::vector<Event> events_;
};

struct AggregateResult {
  ParamVector theta;
  ParamVector phi;
  std::vector<int> kept_ids;
  std::vector<double> weights;  // aligned with kept_ids, sums to 1 exactly
};

// Volume-weighted aggregation: Accept -> claimed volume, Flag with estimate ->
// estimated volume, NotEstimable -> dropped. Empty optional when every update
// was dropped.
std::optional<AggregateResult> aggregate(std::span<const ClientUpdate> updates,
                                         std::span<const Verdict> verdicts,
                                         const ParamVector& global_theta,
                                         const ParamVector& global_phi);

// Diagnostic Delta-w: claimed-weight minus true-weight per client.
std::vector<double> weight_perturbation(std::span<const double> claimed_volumes,
                                        std::span<const double> true_volumes);

// Shadow pre-training on server-held data: for every calibration volume and
// round, runs honest client-pipeline replicas and fits per-(round, volume)
// quantile bands of the recorded adjustment factors. Between rounds the shadow
// global model advances by aggregating K advance-replicas whose shard sizes
// are drawn from the same Dirichlet size process as the client partition, so
// the shadow trajectory tracks the federation it calibrates for.
// client_pool_size is the total number of samples spread across clients.
AlphaPrior calibrate_prior(const ModelSpec& spec, StrategyKind strategy,
                           const Dataset& shadow, const ExperimentConfig& cfg,
                           const ParamVector& theta0, const ParamVector& phi0,
                           int client_pool_size);

}  // namespace feddua
