#pragma once

#include <span>
#include <vector>

#include "feddua/param_vector.hpp"
#include "feddua/rng.hpp"

namespace feddua {

enum class ModelKind { LogisticRegression, Mlp1 };

// Architecture descriptor. Two models with equal spec have equal param count.
struct ModelSpec {
  ModelKind kind = ModelKind::LogisticRegression;
  int input_dim = 0;
  int hidden_dim = 0;  // Mlp1 only
  int num_classes = 2;

  int param_count() const;
  void validate() const;
};

// Non-owning view over a contiguous block of samples (row-major features).
struct BatchView {
  const double* features = nullptr;  // n x dim
  const int* labels = nullptr;       // n
  int n = 0;
  int dim = 0;
};

// Weights ~ Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
ParamVector init_params(const ModelSpec& spec, Rng& rng);

// Mean cross-entropy over the batch.
double forward_loss(const ModelSpec& spec, const ParamVector& theta, const BatchView& batch);

// Gradient of the mean batch loss; same dim as theta.
ParamVector backward(const ModelSpec& spec, const ParamVector& theta, const BatchView& batch);

int predict_class(const ModelSpec& spec, const ParamVector& theta, const double* x);

struct EpochResult {
  ParamVector theta;
  std::vector<double> grad_norms;  // per-batch L2 norms, in step order
  ParamVector delta;               // theta - theta_initial
};

// Plain SGD: theta <- theta - eta * grad, one step per batch in order.
// With constant eta and no momentum, delta == -eta * sum of step gradients.
EpochResult sgd_epoch(const ModelSpec& spec, const ParamVector& theta, double eta,
                      std::span<const BatchView> batches);

}  // namespace feddua
