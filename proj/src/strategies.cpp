#include "feddua/strategies.hpp"

#include "feddua/client.hpp"
#include "feddua/errors.hpp"

namespace feddua {

StrategyKind strategy_from_string(const std::string& name) {
  if (name == "fedavg") return StrategyKind::FedAvg;
  if (name == "fedprox") return StrategyKind::FedProx;
  if (name == "scaffold") return StrategyKind::Scaffold;
  if (name == "ditto") return StrategyKind::Ditto;
  throw config_error("unknown strategy '" + name + "'");
}

std::string strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::FedAvg: return "fedavg";
    case StrategyKind::FedProx: return "fedprox";
    case StrategyKind::Scaffold: return "scaffold";
    case StrategyKind::Ditto: return "ditto";
  }
  return "?";
}

void StrategyCtx::init(const ModelSpec& spec) {
  if (mu < 0.0) throw config_error("StrategyCtx: mu must be >= 0");
  if (lambda_d < 0.0) throw config_error("StrategyCtx: lambda_d must be >= 0");
  if (kind == StrategyKind::Scaffold)
    c_global = ParamVector(static_cast<std::size_t>(spec.param_count()));
}

void StrategyCtx::ensure_client_state(int client_id, const ParamVector& global_theta) {
  if (kind == StrategyKind::Scaffold) {
    if (c_local.find(client_id) == c_local.end())
      c_local.emplace(client_id, ParamVector(c_global.dim()));
  } else if (kind == StrategyKind::Ditto) {
    if (personal.find(client_id) == personal.end()) personal.emplace(client_id, global_theta);
  }
}

StrategyClientView client_view(StrategyCtx& ctx, int client_id) {
  StrategyClientView v;
  v.kind = ctx.kind;
  v.mu = ctx.mu;
  v.lambda_d = ctx.lambda_d;
  if (ctx.kind == StrategyKind::Scaffold) {
    auto it = ctx.c_local.find(client_id);
    if (it == ctx.c_local.end())
      throw config_error("StrategyCtx: missing Scaffold control variate for client " +
                         std::to_string(client_id));
    v.c_global = &ctx.c_global;
    v.c_local = &it->second;
  } else if (ctx.kind == StrategyKind::Ditto) {
    auto it = ctx.personal.find(client_id);
    if (it == ctx.personal.end())
      throw config_error("StrategyCtx: missing Ditto personal model for client " +
                         std::to_string(client_id));
    v.personal = &it->second;
  }
  return v;
}

void local_rule(const StrategyClientView& view, const ParamVector& theta,
                const ParamVector& grad, double eta, const ParamVector& global_theta,
                ParamVector& step) {
  require_same_dim(theta, grad, "local_rule");
  step = ParamVector(theta.dim());
  switch (view.kind) {
    case StrategyKind::FedAvg:
    case StrategyKind::Ditto:
      for (std::size_t i = 0; i < theta.dim(); ++i) step[i] = -eta * grad[i];
      break;
    case StrategyKind::FedProx:
      require_same_dim(theta, global_theta, "local_rule: FedProx");
      for (std::size_t i = 0; i < theta.dim(); ++i)
        step[i] = -eta * (grad[i] + view.mu * (theta[i] - global_theta[i]));
      break;
    case StrategyKind::Scaffold: {
      if (view.c_global == nullptr || view.c_local == nullptr)
        throw config_error("local_rule: Scaffold context missing");
      const ParamVector& c = *view.c_global;
      const ParamVector& ci = *view.c_local;
      require_same_dim(theta, c, "local_rule: Scaffold");
      for (std::size_t i = 0; i < theta.dim(); ++i)
        step[i] = -eta * (grad[i] - ci[i] + c[i]);
      break;
    }
  }
}

void post_round(StrategyCtx& ctx, std::span<const ClientUpdate> updates,
                std::span<const RoundSteps> steps, double eta, int num_clients) {
  if (ctx.kind != StrategyKind::Scaffold) return;
  if (updates.size() != steps.size())
    throw contract_error("post_round: updates/steps size mismatch");
  ParamVector c_shift(ctx.c_global.dim());
  for (std::size_t k = 0; k < updates.size(); ++k) {
    const ClientUpdate& up = updates[k];
    if (steps[k].client_id != up.client_id)
      throw contract_error("post_round: steps misaligned with updates");
    const long s = steps[k].num_steps;
    if (s <= 0) throw contract_error("post_round: non-positive local step count");
    auto it = ctx.c_local.find(up.client_id);
    if (it == ctx.c_local.end())
      throw config_error("post_round: missing control variate for client " +
                         std::to_string(up.client_id));
    ParamVector& ci = it->second;
    // Option-II control update: c_i^+ = c_i - c + (x - y_i)/(S eta), and
    // x - y_i = -delta_i.
    for (std::size_t i = 0; i < ci.dim(); ++i) {
      double ci_new = ci[i] - ctx.c_global[i] - up.model_delta[i] / (s * eta);
      c_shift[i] += (ci_new - ci[i]) / num_clients;
      ci[i] = ci_new;
    }
  }
  for (std::size_t i = 0; i < ctx.c_global.dim(); ++i) ctx.c_global[i] += c_shift[i];
}

}  // namespace feddua
