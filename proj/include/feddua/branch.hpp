#pragma once

#include <array>
#include <optional>

#include "feddua/param_vector.hpp"
#include "feddua/rng.hpp"

namespace feddua {

// What one epoch of local training exposes about data volume: the parameter
// displacement, the mean per-batch gradient norm and the step size.
struct EpochObservation {
  double delta_norm = 0.0;      // ||theta_end - theta_start|| over the epoch
  double mean_grad_norm = 0.0;  // mean of per-batch gradient L2 norms
  double eta = 0.0;
  int epoch_index = 0;
};

// Input to the quantity-aware branch: a fixed per-client embedding plus the
// epoch's training statistics (logs clamped at 1e-12 to stay finite).
struct BranchInput {
  static constexpr int kEmbeddingDim = 8;
  static constexpr int kStatsDim = 4;
  static constexpr int kDim = kEmbeddingDim + kStatsDim;

  std::array<double, kEmbeddingDim> embedding{};
  std::array<double, kStatsDim> round_stats{};  // log|dtheta|, log gbar, log eta, epoch frac

  std::array<double, kDim> flat() const;
};

std::array<double, BranchInput::kEmbeddingDim> client_embedding(std::uint64_t experiment_seed,
                                                                std::uint64_t client_id);

BranchInput make_branch_input(std::uint64_t experiment_seed, std::uint64_t client_id,
                              const EpochObservation& obs, int epochs_per_round);

// One-hidden-layer MLP (12 -> hidden -> 1) with a softplus head, so the
// predicted adjustment factor is always positive. Parameter count is bounded
// by 10% of the main model's, checked at construction.
class QuantityBranch {
 public:
  QuantityBranch(int hidden_dim, double branch_lr, int main_param_count, Rng& rng);
  QuantityBranch(int hidden_dim, double branch_lr, ParamVector phi);

  static int param_count_for(int hidden_dim) {
    return BranchInput::kDim * hidden_dim + 2 * hidden_dim + 1;
  }

  double predict(const BranchInput& in) const;  // alpha > 0

  // d alpha / d phi at this input.
  ParamVector grad_phi(const BranchInput& in) const;

  const ParamVector& phi() const { return phi_; }
  void set_phi(ParamVector phi);
  int hidden_dim() const { return hidden_; }
  double learning_rate() const { return lr_; }

  // phi <- phi - lr * dLoss/dalpha * dalpha/dphi. Returns false when the
  // gradient is non-finite or the observation is not estimable (step skipped).
  bool step(const BranchInput& in, const EpochObservation& obs, double true_volume_samples,
            int batch_size);

 private:
  int hidden_;
  double lr_;
  ParamVector phi_;  // W1[h x 12], b1[h], w2[h], b2
};

// Eq-style volume pipeline. Internally in iteration (R) units: R_hat =
// delta_norm / (eta * gbar * alpha); the sample boundary multiplies by the
// experiment-global batch_size. Empty optional means NotEstimable (gbar = 0).
std::optional<double> estimate_volume(const EpochObservation& obs, double alpha, int batch_size);

// Adjustment factor that makes estimate_volume return the true volume.
std::optional<double> alpha_direct(const EpochObservation& obs, double true_volume_samples,
                                   int batch_size);

// 0.5 * (R_hat - R_true)^2, in R units.
std::optional<double> branch_loss(const EpochObservation& obs, double alpha,
                                  double true_volume_samples, int batch_size);

// (R_hat - R_true) * (-R_hat / alpha).
std::optional<double> branch_grad_alpha(const EpochObservation& obs, double alpha,
                                        double true_volume_samples, int batch_size);

}  // namespace feddua
