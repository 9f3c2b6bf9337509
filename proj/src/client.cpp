#include "feddua/client.hpp"

#include <cmath>
#include <numeric>

#include "feddua/errors.hpp"

namespace feddua {

namespace {

std::vector<BatchView> slice_batches(const Shard& shard, int batch_size) {
  std::vector<BatchView> batches;
  const int n = shard.size();
  for (int start = 0; start < n; start += batch_size) {
    BatchView b;
    b.n = std::min(batch_size, n - start);
    b.dim = shard.dim;
    b.features = shard.features.data() + static_cast<std::size_t>(start) * shard.dim;
    b.labels = shard.labels.data() + start;
    batches.push_back(b);
  }
  return batches;
}

}  // namespace

ClientUpdate local_round(int client_id, const Dataset& ds, const std::vector<int>& shard_rows,
                         const ModelSpec& spec, const ParamVector& global_theta,
                         QuantityBranch branch, const StrategyClientView& strategy,
                         const LocalRoundConfig& cfg, Rng rng) {
  if (shard_rows.empty()) throw contract_error("local_round: empty shard");
  if (cfg.epochs_per_round < 1) throw config_error("local_round: epochs_per_round must be >= 1");
  if (cfg.batch_size < 1) throw config_error("local_round: batch_size must be >= 1");
  if (!(cfg.eta > 0.0)) throw config_error("local_round: eta must be positive");
  if (!(cfg.misreport_factor > 0.0))
    throw config_error("local_round: misreport_factor must be positive");

  const long true_volume = static_cast<long>(shard_rows.size());
  ParamVector theta = global_theta;
  ParamVector step;

  ClientUpdate up;
  up.client_id = client_id;
  up.alphas.reserve(cfg.epochs_per_round);
  up.observations.reserve(cfg.epochs_per_round);

  std::vector<int> order = shard_rows;
  for (int epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    rng.shuffle(order);
    Shard shard = gather(ds, order);
    auto batches = slice_batches(shard, cfg.batch_size);

    const ParamVector theta_start = theta;
    double grad_norm_sum = 0.0;
    for (const BatchView& b : batches) {
      ParamVector grad = backward(spec, theta, b);
      grad_norm_sum += l2_norm(grad);
      local_rule(strategy, theta, grad, cfg.eta, global_theta, step);
      axpy(theta, 1.0, step);
    }
    check_finite(theta, "local_round: theta");
    up.num_local_steps += static_cast<long>(batches.size());

    // Ditto: second pass over the same batches for the personalized model,
    // regularized toward the round's received global model.
    if (strategy.kind == StrategyKind::Ditto && strategy.personal != nullptr) {
      ParamVector& pers = *strategy.personal;
      for (const BatchView& b : batches) {
        ParamVector grad = backward(spec, pers, b);
        for (std::size_t i = 0; i < pers.dim(); ++i)
          pers[i] -= cfg.eta * (grad[i] + strategy.lambda_d * (pers[i] - global_theta[i]));
      }
      check_finite(pers, "local_round: ditto personal");
    }

    EpochObservation obs;
    obs.delta_norm = l2_norm(subtract(theta, theta_start));
    obs.mean_grad_norm = grad_norm_sum / static_cast<double>(batches.size());
    obs.eta = cfg.eta;
    obs.epoch_index = epoch;
    up.observations.push_back(obs);

    BranchInput in = make_branch_input(cfg.experiment_seed, static_cast<std::uint64_t>(client_id),
                                       obs, cfg.epochs_per_round);
    for (int s = 0; s < cfg.branch_steps; ++s)
      branch.step(in, obs, static_cast<double>(true_volume), cfg.batch_size);
    up.alphas.push_back(branch.predict(in));
  }

  up.model_delta = subtract(theta, global_theta);
  up.phi = branch.phi();
  up.claimed_volume = std::lround(static_cast<double>(true_volume) * cfg.misreport_factor);
  if (up.claimed_volume < 1) up.claimed_volume = 1;
  return up;
}

}  // namespace feddua
