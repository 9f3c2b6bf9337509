#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "feddua/model.hpp"
#include "feddua/param_vector.hpp"

namespace feddua {

struct ClientUpdate;  // client.hpp

enum class StrategyKind { FedAvg, FedProx, Scaffold, Ditto };

StrategyKind strategy_from_string(const std::string& name);
std::string strategy_name(StrategyKind kind);

// Orchestrator-owned strategy state. Scaffold keeps the global control
// variate plus one per client; Ditto keeps per-client personalized models.
struct StrategyCtx {
  StrategyKind kind = StrategyKind::FedAvg;
  double mu = 0.01;        // FedProx proximal coefficient
  double lambda_d = 0.1;   // Ditto regularization
  ParamVector c_global;
  std::map<int, ParamVector> c_local;
  std::map<int, ParamVector> personal;

  void init(const ModelSpec& spec);
  // Creates the per-client entries a round will touch; call before fan-out.
  void ensure_client_state(int client_id, const ParamVector& global_theta);
};

// Read (and for Ditto write) access to one client's strategy state during a
// round. Pointers stay valid while the orchestrator holds the ctx.
struct StrategyClientView {
  StrategyKind kind = StrategyKind::FedAvg;
  double mu = 0.0;
  double lambda_d = 0.0;
  const ParamVector* c_global = nullptr;
  const ParamVector* c_local = nullptr;
  ParamVector* personal = nullptr;
};

StrategyClientView client_view(StrategyCtx& ctx, int client_id);

// Writes the local parameter step for one batch into `step`:
//   FedAvg   -eta * g
//   FedProx  -eta * (g + mu (theta - theta_g))
//   Scaffold -eta * (g - c_i + c)
//   Ditto    global pass identical to FedAvg
void local_rule(const StrategyClientView& view, const ParamVector& theta,
                const ParamVector& grad, double eta, const ParamVector& global_theta,
                ParamVector& step);

// Local step counts a round performed, needed by Scaffold's control update.
struct RoundSteps {
  int client_id = 0;
  long num_steps = 0;
};

// Scaffold: c_i^+ = c_i - c - delta_i / (S_i * eta), c += (1/N) sum (c_i^+ - c_i).
// FedAvg/FedProx/Ditto: no-op (Ditto personal models are updated in place
// during the local round and persist in the ctx).
void post_round(StrategyCtx& ctx, std::span<const ClientUpdate> updates,
                std::span<const RoundSteps> steps, double eta, int num_clients);

}  // namespace feddua
