#pragma once

#include <cstdint>
#include <vector>

#include "feddua/branch.hpp"
#include "feddua/data.hpp"
#include "feddua/model.hpp"
#include "feddua/strategies.hpp"

namespace feddua {

// One client's per-round upload.
struct ClientUpdate {
  int client_id = 0;
  ParamVector model_delta;                    // cumulative over the round
  std::vector<double> alphas;                 // one per epoch, positive
  ParamVector phi;                            // branch parameters after the round
  std::vector<EpochObservation> observations; // one per epoch
  long claimed_volume = 0;
  long num_local_steps = 0;                   // E * batches-per-epoch (plumbing, not verified)
};

struct LocalRoundConfig {
  std::uint64_t experiment_seed = 0;
  int epochs_per_round = 1;
  int batch_size = 1;
  double eta = 0.1;
  int branch_steps = 5;
  double misreport_factor = 1.0;  // 1 for honest clients
};

// Runs E epochs of local SGD under the strategy's step rule, trains the
// quantity-aware branch against the client's true volume after each epoch,
// predicts that epoch's adjustment factor, and assembles the upload.
// The branch is taken by value: it starts from the round's global phi.
ClientUpdate local_round(int client_id, const Dataset& ds, const std::vector<int>& shard_rows,
                         const ModelSpec& spec, const ParamVector& global_theta,
                         QuantityBranch branch, const StrategyClientView& strategy,
                         const LocalRoundConfig& cfg, Rng rng);

}  // namespace feddua
