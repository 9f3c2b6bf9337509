#include "feddua/model.hpp"

#include <algorithm>
#include <cmath>

namespace feddua {

namespace {

void check_batch(const ModelSpec& spec, const ParamVector& theta, const BatchView& batch) {
  if (batch.n <= 0) throw contract_error("model: empty batch");
  if (batch.dim != spec.input_dim)
    throw contract_error("model: feature width " + std::to_string(batch.dim) +
                         " != input_dim " + std::to_string(spec.input_dim));
  if (static_cast<int>(theta.dim()) != spec.param_count())
    throw contract_error("model: theta dim != param_count");
  for (int i = 0; i < batch.n; ++i) {
    if (batch.labels[i] < 0 || batch.labels[i] >= spec.num_classes)
      throw contract_error("model: label out of range at row " + std::to_string(i));
    for (int j = 0; j < batch.dim; ++j)
      if (!std::isfinite(batch.features[static_cast<std::size_t>(i) * batch.dim + j]))
        throw contract_error("model: non-finite feature at row " + std::to_string(i));
  }
  check_finite(theta, "model: theta");
}

// log(sum_c exp(z_c)) with max-shift; also writes softmax probabilities.
double softmax_log_z(const double* logits, int c, double* probs) {
  double m = logits[0];
  for (int i = 1; i < c; ++i) m = std::max(m, logits[i]);
  double sum = 0.0;
  for (int i = 0; i < c; ++i) {
    probs[i] = std::exp(logits[i] - m);
    sum += probs[i];
  }
  for (int i = 0; i < c; ++i) probs[i] /= sum;
  return m + std::log(sum);
}

struct LogRegLayout {
  int d, c;
  // W is c x d row-major, then b (c entries).
  int w(int cls, int j) const { return cls * d + j; }
  int b(int cls) const { return c * d + cls; }
};

struct MlpLayout {
  int d, h, c;
  int w1(int u, int j) const { return u * d + j; }
  int b1(int u) const { return h * d + u; }
  int w2(int cls, int u) const { return h * d + h + cls * h + u; }
  int b2(int cls) const { return h * d + h + c * h + cls; }
};

}  // namespace

int ModelSpec::param_count() const {
  switch (kind) {
    case ModelKind::LogisticRegression:
      return num_classes * input_dim + num_classes;
    case ModelKind::Mlp1:
      return hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes;
  }
  return 0;
}

void ModelSpec::validate() const {
  if (input_dim <= 0) throw config_error("ModelSpec: input_dim must be positive");
  if (num_classes < 2) throw config_error("ModelSpec: num_classes must be >= 2");
  if (kind == ModelKind::Mlp1 && hidden_dim <= 0)
    throw config_error("ModelSpec: hidden_dim must be positive for Mlp1");
}

ParamVector init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ParamVector theta(static_cast<std::size_t>(spec.param_count()));
  if (spec.kind == ModelKind::LogisticRegression) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
    LogRegLayout L{spec.input_dim, spec.num_classes};
    for (int cls = 0; cls < L.c; ++cls)
      for (int j = 0; j < L.d; ++j) theta[L.w(cls, j)] = rng.uniform(-bound, bound);
    // biases stay zero
  } else {
    MlpLayout L{spec.input_dim, spec.hidden_dim, spec.num_classes};
    const double bound1 = 1.0 / std::sqrt(static_cast<double>(L.d));
    const double bound2 = 1.0 / std::sqrt(static_cast<double>(L.h));
    for (int u = 0; u < L.h; ++u)
      for (int j = 0; j < L.d; ++j) theta[L.w1(u, j)] = rng.uniform(-bound1, bound1);
    for (int cls = 0; cls < L.c; ++cls)
      for (int u = 0; u < L.h; ++u) theta[L.w2(cls, u)] = rng.uniform(-bound2, bound2);
  }
  return theta;
}

double forward_loss(const ModelSpec& spec, const ParamVector& theta, const BatchView& batch) {
  check_batch(spec, theta, batch);
  const int c = spec.num_classes;
  std::vector<double> logits(c), probs(c);
  double loss = 0.0;

  if (spec.kind == ModelKind::LogisticRegression) {
    LogRegLayout L{spec.input_dim, c};
    for (int i = 0; i < batch.n; ++i) {
      const double* x = batch.features + static_cast<std::size_t>(i) * batch.dim;
      for (int cls = 0; cls < c; ++cls) {
        double z = theta[L.b(cls)];
        for (int j = 0; j < L.d; ++j) z += theta[L.w(cls, j)] * x[j];
        logits[cls] = z;
      }
      double log_z = softmax_log_z(logits.data(), c, probs.data());
      loss += log_z - logits[batch.labels[i]];
    }
  } else {
    MlpLayout L{spec.input_dim, spec.hidden_dim, c};
    std::vector<double> hid(L.h);
    for (int i = 0; i < batch.n; ++i) {
      const double* x = batch.features + static_cast<std::size_t>(i) * batch.dim;
      for (int u = 0; u < L.h; ++u) {
        double a = theta[L.b1(u)];
        for (int j = 0; j < L.d; ++j) a += theta[L.w1(u, j)] * x[j];
        hid[u] = std::tanh(a);
      }
      for (int cls = 0; cls < c; ++cls) {
        double z = theta[L.b2(cls)];
        for (int u = 0; u < L.h; ++u) z += theta[L.w2(cls, u)] * hid[u];
        logits[cls] = z;
      }
      double log_z = softmax_log_z(logits.data(), c, probs.data());
      loss += log_z - logits[batch.labels[i]];
    }
  }
  return loss / batch.n;
}

ParamVector backward(const ModelSpec& spec, const ParamVector& theta, const BatchView& batch) {
  check_batch(spec, theta, batch);
  const int c = spec.num_classes;
  ParamVector grad(theta.dim());
  std::vector<double> logits(c), probs(c);
  const double inv_n = 1.0 / batch.n;

  if (spec.kind == ModelKind::LogisticRegression) {
    LogRegLayout L{spec.input_dim, c};
    for (int i = 0; i < batch.n; ++i) {
      const double* x = batch.features + static_cast<std::size_t>(i) * batch.dim;
      for (int cls = 0; cls < c; ++cls) {
        double z = theta[L.b(cls)];
        for (int j = 0; j < L.d; ++j) z += theta[L.w(cls, j)] * x[j];
        logits[cls] = z;
      }
      softmax_log_z(logits.data(), c, probs.data());
      for (int cls = 0; cls < c; ++cls) {
        double dz = (probs[cls] - (cls == batch.labels[i] ? 1.0 : 0.0)) * inv_n;
        grad[L.b(cls)] += dz;
        for (int j = 0; j < L.d; ++j) grad[L.w(cls, j)] += dz * x[j];
      }
    }
  } else {
    MlpLayout L{spec.input_dim, spec.hidden_dim, c};
    std::vector<double> hid(L.h), dhid(L.h);
    for (int i = 0; i < batch.n; ++i) {
      const double* x = batch.features + static_cast<std::size_t>(i) * batch.dim;
      for (int u = 0; u < L.h; ++u) {
        double a = theta[L.b1(u)];
        for (int j = 0; j < L.d; ++j) a += theta[L.w1(u, j)] * x[j];
        hid[u] = std::tanh(a);
      }
      for (int cls = 0; cls < c; ++cls) {
        double z = theta[L.b2(cls)];
        for (int u = 0; u < L.h; ++u) z += theta[L.w2(cls, u)] * hid[u];
        logits[cls] = z;
      }
      softmax_log_z(logits.data(), c, probs.data());
      std::fill(dhid.begin(), dhid.end(), 0.0);
      for (int cls = 0; cls < c; ++cls) {
        double dz = (probs[cls] - (cls == batch.labels[i] ? 1.0 : 0.0)) * inv_n;
        grad[L.b2(cls)] += dz;
        for (int u = 0; u < L.h; ++u) {
          grad[L.w2(cls, u)] += dz * hid[u];
          dhid[u] += dz * theta[L.w2(cls, u)];
        }
      }
      for (int u = 0; u < L.h; ++u) {
        double da = dhid[u] * (1.0 - hid[u] * hid[u]);
        grad[L.b1(u)] += da;
        for (int j = 0; j < L.d; ++j) grad[L.w1(u, j)] += da * x[j];
      }
    }
  }
  check_finite(grad, "model: gradient");
  return grad;
}

int predict_class(const ModelSpec& spec, const ParamVector& theta, const double* x) {
  const int c = spec.num_classes;
  std::vector<double> logits(c);
  if (spec.kind == ModelKind::LogisticRegression) {
    LogRegLayout L{spec.input_dim, c};
    for (int cls = 0; cls < c; ++cls) {
      double z = theta[L.b(cls)];
      for (int j = 0; j < L.d; ++j) z += theta[L.w(cls, j)] * x[j];
      logits[cls] = z;
    }
  } else {
    MlpLayout L{spec.input_dim, spec.hidden_dim, c};
    std::vector<double> hid(L.h);
    for (int u = 0; u < L.h; ++u) {
      double a = theta[L.b1(u)];
      for (int j = 0; j < L.d; ++j) a += theta[L.w1(u, j)] * x[j];
      hid[u] = std::tanh(a);
    }
    for (int cls = 0; cls < c; ++cls) {
      double z = theta[L.b2(cls)];
      for (int u = 0; u < L.h; ++u) z += theta[L.w2(cls, u)] * hid[u];
      logits[cls] = z;
    }
  }
  int best = 0;
  for (int cls = 1; cls < c; ++cls)
    if (logits[cls] > logits[best]) best = cls;
  return best;
}

EpochResult sgd_epoch(const ModelSpec& spec, const ParamVector& theta, double eta,
                      std::span<const BatchView> batches) {
  if (!(eta > 0.0)) throw config_error("sgd_epoch: eta must be positive");
  if (batches.empty()) throw contract_error("sgd_epoch: no batches");
  EpochResult out;
  out.theta = theta;
  out.grad_norms.reserve(batches.size());
  for (const BatchView& b : batches) {
    ParamVector g = backward(spec, out.theta, b);
    out.grad_norms.push_back(l2_norm(g));
    axpy(out.theta, -eta, g);
  }
  check_finite(out.theta, "sgd_epoch: theta");
  out.delta = subtract(out.theta, theta);
  return out;
}

}  // namespace feddua
