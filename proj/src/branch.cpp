#include "feddua/branch.hpp"

#include <cmath>

#include "feddua/errors.hpp"

namespace feddua {

namespace {

constexpr double kLogFloor = 1e-12;

double guarded_log(double x) { return std::log(x < kLogFloor ? kLogFloor : x); }

double softplus(double z) {
  // Stable: log(1 + e^z) = max(z, 0) + log1p(e^{-|z|}). Floored so the
  // positivity invariant survives underflow at very negative z.
  double s = (z > 0.0 ? z : 0.0) + std::log1p(std::exp(-std::abs(z)));
  return s > kLogFloor ? s : kLogFloor;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct BranchLayout {
  int h;
  int w1(int u, int j) const { return u * BranchInput::kDim + j; }
  int b1(int u) const { return h * BranchInput::kDim + u; }
  int w2(int u) const { return h * BranchInput::kDim + h + u; }
  int b2() const { return h * BranchInput::kDim + 2 * h; }
};

void check_input(const BranchInput& in) {
  for (double x : in.embedding)
    if (!std::isfinite(x)) throw contract_error("QuantityBranch: non-finite embedding entry");
  for (double x : in.round_stats)
    if (!std::isfinite(x)) throw contract_error("QuantityBranch: non-finite round stat");
}

void check_obs(const EpochObservation& obs) {
  if (!(obs.eta > 0.0)) throw contract_error("volume pipeline: eta must be positive");
  if (obs.delta_norm < 0.0 || !std::isfinite(obs.delta_norm) ||
      obs.mean_grad_norm < 0.0 || !std::isfinite(obs.mean_grad_norm))
    throw contract_error("volume pipeline: bad observation");
}

}  // namespace

std::array<double, BranchInput::kDim> BranchInput::flat() const {
  std::array<double, kDim> x{};
  for (int i = 0; i < kEmbeddingDim; ++i) x[i] = embedding[i];
  for (int i = 0; i < kStatsDim; ++i) x[kEmbeddingDim + i] = round_stats[i];
  return x;
}

std::array<double, BranchInput::kEmbeddingDim> client_embedding(std::uint64_t experiment_seed,
                                                                std::uint64_t client_id) {
  Rng rng = derive_rng(experiment_seed, {stream::kEmbedding, client_id});
  std::array<double, BranchInput::kEmbeddingDim> e{};
  for (auto& x : e) x = rng.uniform(-1.0, 1.0);
  return e;
}

BranchInput make_branch_input(std::uint64_t experiment_seed, std::uint64_t client_id,
                              const EpochObservation& obs, int epochs_per_round) {
  check_obs(obs);
  BranchInput in;
  in.embedding = client_embedding(experiment_seed, client_id);
  in.round_stats[0] = guarded_log(obs.delta_norm);
  in.round_stats[1] = guarded_log(obs.mean_grad_norm);
  in.round_stats[2] = std::log(obs.eta);
  in.round_stats[3] =
      epochs_per_round > 1 ? static_cast<double>(obs.epoch_index) / (epochs_per_round - 1) : 0.0;
  return in;
}

QuantityBranch::QuantityBranch(int hidden_dim, double branch_lr, int main_param_count, Rng& rng)
    : hidden_(hidden_dim), lr_(branch_lr) {
  if (hidden_dim < 1) throw config_error("QuantityBranch: hidden_dim must be >= 1");
  if (!(branch_lr > 0.0)) throw config_error("QuantityBranch: branch_lr must be positive");
  const int count = param_count_for(hidden_dim);
  if (count * 10 > main_param_count)
    throw config_error("QuantityBranch: parameter count " + std::to_string(count) +
                       " exceeds 10% of main model's " + std::to_string(main_param_count));
  phi_ = ParamVector(static_cast<std::size_t>(count));
  BranchLayout L{hidden_};
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(BranchInput::kDim));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
  for (int u = 0; u < hidden_; ++u)
    for (int j = 0; j < BranchInput::kDim; ++j) phi_[L.w1(u, j)] = rng.uniform(-bound1, bound1);
  for (int u = 0; u < hidden_; ++u) phi_[L.w2(u)] = rng.uniform(-bound2, bound2);
  // biases stay zero
}

QuantityBranch::QuantityBranch(int hidden_dim, double branch_lr, ParamVector phi)
    : hidden_(hidden_dim), lr_(branch_lr), phi_(std::move(phi)) {
  if (static_cast<int>(phi_.dim()) != param_count_for(hidden_dim))
    throw contract_error("QuantityBranch: phi dim does not match hidden_dim");
}

void QuantityBranch::set_phi(ParamVector phi) {
  if (phi.dim() != phi_.dim()) throw contract_error("QuantityBranch: set_phi dim mismatch");
  phi_ = std::move(phi);
}

double QuantityBranch::predict(const BranchInput& in) const {
  check_input(in);
  BranchLayout L{hidden_};
  const auto x = in.flat();
  double z = phi_[L.b2()];
  for (int u = 0; u < hidden_; ++u) {
    double a = phi_[L.b1(u)];
    for (int j = 0; j < BranchInput::kDim; ++j) a += phi_[L.w1(u, j)] * x[j];
    z += phi_[L.w2(u)] * std::tanh(a);
  }
  return softplus(z);
}

ParamVector QuantityBranch::grad_phi(const BranchInput& in) const {
  check_input(in);
  BranchLayout L{hidden_};
  const auto x = in.flat();
  std::vector<double> hid(hidden_);
  double z = phi_[L.b2()];
  for (int u = 0; u < hidden_; ++u) {
    double a = phi_[L.b1(u)];
    for (int j = 0; j < BranchInput::kDim; ++j) a += phi_[L.w1(u, j)] * x[j];
    hid[u] = std::tanh(a);
    z += phi_[L.w2(u)] * hid[u];
  }
  const double dz = sigmoid(z);  // d softplus / dz
  ParamVector g(phi_.dim());
  g[L.b2()] = dz;
  for (int u = 0; u < hidden_; ++u) {
    g[L.w2(u)] = dz * hid[u];
    double da = dz * phi_[L.w2(u)] * (1.0 - hid[u] * hid[u]);
    g[L.b1(u)] = da;
    for (int j = 0; j < BranchInput::kDim; ++j) g[L.w1(u, j)] = da * x[j];
  }
  return g;
}

bool QuantityBranch::step(const BranchInput& in, const EpochObservation& obs,
                          double true_volume_samples, int batch_size) {
  const double alpha = predict(in);
  auto dl_dalpha = branch_grad_alpha(obs, alpha, true_volume_samples, batch_size);
  if (!dl_dalpha) return false;
  ParamVector dalpha_dphi = grad_phi(in);
  const double scale = -lr_ * *dl_dalpha;
  if (!std::isfinite(scale)) return false;
  for (std::size_t i = 0; i < phi_.dim(); ++i) {
    double next = phi_[i] + scale * dalpha_dphi[i];
    if (!std::isfinite(next)) return false;
  }
  axpy(phi_, scale, dalpha_dphi);
  return true;
}

std::optional<double> estimate_volume(const EpochObservation& obs, double alpha, int batch_size) {
  check_obs(obs);
  if (!(alpha > 0.0)) throw contract_error("estimate_volume: alpha must be positive");
  if (batch_size < 1) throw contract_error("estimate_volume: batch_size must be >= 1");
  if (obs.mean_grad_norm == 0.0) return std::nullopt;
  const double r_hat = obs.delta_norm / (obs.eta * obs.mean_grad_norm * alpha);
  return r_hat * batch_size;
}

std::optional<double> alpha_direct(const EpochObservation& obs, double true_volume_samples,
                                   int batch_size) {
  check_obs(obs);
  if (!(true_volume_samples > 0.0)) throw contract_error("alpha_direct: volume must be positive");
  if (batch_size < 1) throw contract_error("alpha_direct: batch_size must be >= 1");
  if (obs.mean_grad_norm == 0.0) return std::nullopt;
  const double r_true = true_volume_samples / batch_size;
  return obs.delta_norm / (obs.eta * obs.mean_grad_norm * r_true);
}

std::optional<double> branch_loss(const EpochObservation& obs, double alpha,
                                  double true_volume_samples, int batch_size) {
  auto est = estimate_volume(obs, alpha, batch_size);
  if (!est) return std::nullopt;
  const double diff = (*est - true_volume_samples) / batch_size;  // R units
  return 0.5 * diff * diff;
}

std::optional<double> branch_grad_alpha(const EpochObservation& obs, double alpha,
                                        double true_volume_samples, int batch_size) {
  auto est = estimate_volume(obs, alpha, batch_size);
  if (!est) return std::nullopt;
  const double pred_r = *est / batch_size;
  const double true_r = true_volume_samples / batch_size;
  return (pred_r - true_r) * (-pred_r / alpha);
}

}  // namespace feddua
