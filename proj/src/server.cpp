#include "feddua/server.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "feddua/errors.hpp"

namespace feddua {

double empirical_quantile(std::vector<double> values, double p) {
  if (values.empty()) throw contract_error("empirical_quantile: empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw contract_error("empirical_quantile: p outside [0,1]");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n == 1) return values[0];
  const double h = p * static_cast<double>(n - 1);
  const std::size_t i = static_cast<std::size_t>(h);
  if (i + 1 >= n) return values[n - 1];
  const double frac = h - static_cast<double>(i);
  return values[i] + frac * (values[i + 1] - values[i]);
}

double median(std::vector<double> values) { return empirical_quantile(std::move(values), 0.5); }

AlphaPrior::AlphaPrior(std::vector<int> volumes, int horizon)
    : volumes_(std::move(volumes)), horizon_(horizon) {
  if (volumes_.size() < 1) throw contract_error("AlphaPrior: no volumes");
  if (!std::is_sorted(volumes_.begin(), volumes_.end()))
    throw contract_error("AlphaPrior: volumes must be ascending");
  if (horizon_ < 1) throw contract_error("AlphaPrior: horizon must be >= 1");
  grid_.assign(static_cast<std::size_t>(horizon_),
               std::vector<AlphaBand>(volumes_.size()));
}

void AlphaPrior::set_band(int round, int volume_index, const AlphaBand& band) {
  if (round < 0 || round >= horizon_) throw contract_error("AlphaPrior: round out of range");
  if (volume_index < 0 || volume_index >= static_cast<int>(volumes_.size()))
    throw contract_error("AlphaPrior: volume index out of range");
  if (!(band.q_lo <= band.q_hi)) throw contract_error("AlphaPrior: q_lo > q_hi");
  grid_[round][volume_index] = band;
}

const AlphaBand& AlphaPrior::cell(int round, int volume_index) const {
  if (round < 0 || round >= horizon_) throw contract_error("AlphaPrior: round out of range");
  if (volume_index < 0 || volume_index >= static_cast<int>(volumes_.size()))
    throw contract_error("AlphaPrior: volume index out of range");
  return grid_[round][volume_index];
}

namespace {

AlphaBand widen_if_degenerate(AlphaBand b) {
  const double eps = 1e-6 * std::abs(b.q_lo) + 1e-9;
  if (b.q_hi - b.q_lo < eps) {
    const double mid = 0.5 * (b.q_lo + b.q_hi);
    b.q_lo = mid - 0.5 * eps;
    b.q_hi = mid + 0.5 * eps;
  }
  return b;
}

}  // namespace

AlphaBand AlphaPrior::lookup(int round, double volume_samples) const {
  if (grid_.empty()) throw contract_error("AlphaPrior: not calibrated");
  if (!(volume_samples > 0.0)) throw contract_error("AlphaPrior: volume must be positive");
  const int r = std::clamp(round, 0, horizon_ - 1);
  const auto& row = grid_[r];
  const std::size_t m = volumes_.size();

  if (volume_samples <= volumes_.front()) return widen_if_degenerate(row.front());
  if (volume_samples >= volumes_.back()) return widen_if_degenerate(row.back());
  std::size_t j = 0;
  while (j + 1 < m && static_cast<double>(volumes_[j + 1]) < volume_samples) ++j;
  const double lo_v = static_cast<double>(volumes_[j]);
  const double hi_v = static_cast<double>(volumes_[j + 1]);
  const double t = (std::log(volume_samples) - std::log(lo_v)) / (std::log(hi_v) - std::log(lo_v));
  AlphaBand out;
  out.q_lo = row[j].q_lo + t * (row[j + 1].q_lo - row[j].q_lo);
  out.q_hi = row[j].q_hi + t * (row[j + 1].q_hi - row[j].q_hi);
  out.n_samples = std::min(row[j].n_samples, row[j + 1].n_samples);
  return widen_if_degenerate(out);
}

void AlphaPrior::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw io_error("AlphaPrior::save: cannot open", path);
  out << "# feddua alpha prior v1\n";
  out << "horizon " << horizon_ << "\n";
  out << "volumes";
  for (int v : volumes_) out << " " << v;
  out << "\n";
  char buf[128];
  for (int r = 0; r < horizon_; ++r)
    for (std::size_t j = 0; j < volumes_.size(); ++j) {
      const AlphaBand& b = grid_[r][j];
      std::snprintf(buf, sizeof buf, "band %d %zu %.17g %.17g %d\n", r, j, b.q_lo, b.q_hi,
                    b.n_samples);
      out << buf;
    }
  if (!out) throw io_error("AlphaPrior::save: write failed", path);
}

AlphaPrior AlphaPrior::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("AlphaPrior::load: cannot open", path);
  std::string line;
  int horizon = 0;
  std::vector<int> volumes;
  std::vector<std::array<double, 2>> pending;
  AlphaPrior prior;
  long line_no = 0;
  bool ready = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string kind;
    ss >> kind;
    if (kind == "horizon") {
      ss >> horizon;
    } else if (kind == "volumes") {
      int v;
      while (ss >> v) volumes.push_back(v);
    } else if (kind == "band") {
      if (!ready) {
        if (horizon < 1 || volumes.empty())
          throw parse_error("AlphaPrior::load: band before header", line_no);
        prior = AlphaPrior(volumes, horizon);
        ready = true;
      }
      int r, j, n;
      double lo, hi;
      if (!(ss >> r >> j >> lo >> hi >> n))
        throw parse_error("AlphaPrior::load: malformed band line", line_no);
      prior.set_band(r, j, AlphaBand{lo, hi, n});
    } else {
      throw parse_error("AlphaPrior::load: unknown record '" + kind + "'", line_no);
    }
  }
  if (!ready) throw parse_error("AlphaPrior::load: no bands in file", line_no);
  return prior;
}

std::string to_string(VerdictStatus s) {
  return s == VerdictStatus::Accept ? "Accept" : "Flag";
}

std::string to_string(FlagReason r) {
  switch (r) {
    case FlagReason::None: return "None";
    case FlagReason::AlphaOutOfBand: return "AlphaOutOfBand";
    case FlagReason::VolumeInconsistent: return "VolumeInconsistent";
    case FlagReason::NotEstimable: return "NotEstimable";
  }
  return "?";
}

std::string to_string(TrustStatus s) {
  switch (s) {
    case TrustStatus::Honest: return "Honest";
    case TrustStatus::Warned: return "Warned";
    case TrustStatus::Excluded: return "Excluded";
  }
  return "?";
}

Verdict verify(const ClientUpdate& update, const AlphaPrior& prior, int round,
               const VerifyConfig& cfg) {
  if (update.alphas.empty() || update.alphas.size() != update.observations.size())
    throw contract_error("verify: malformed update");
  if (update.claimed_volume < 1) throw contract_error("verify: claimed volume must be >= 1");

  Verdict v;
  v.alpha_median = median(update.alphas);

  std::vector<double> estimates;
  for (std::size_t e = 0; e < update.alphas.size(); ++e) {
    auto est = estimate_volume(update.observations[e], update.alphas[e], cfg.batch_size);
    if (est) estimates.push_back(*est);
  }

  if (estimates.empty()) {
    v.status = VerdictStatus::Flag;
    v.reason = FlagReason::NotEstimable;
    return v;
  }

  const double d_hat = median(estimates);
  v.estimated_volume = std::max<long>(1, std::lround(d_hat));

  const AlphaBand band = prior.lookup(round, static_cast<double>(update.claimed_volume));
  if (v.alpha_median < band.q_lo || v.alpha_median > band.q_hi) {
    v.status = VerdictStatus::Flag;
    v.reason = FlagReason::AlphaOutOfBand;
    return v;
  }

  const double rel = std::abs(d_hat - static_cast<double>(update.claimed_volume)) /
                     static_cast<double>(update.claimed_volume);
  if (rel > cfg.tau) {
    v.status = VerdictStatus::Flag;
    v.reason = FlagReason::VolumeInconsistent;
    return v;
  }

  v.status = VerdictStatus::Accept;
  v.reason = FlagReason::None;
  return v;
}

void TrustLedger::apply(int client_id, int round, const Verdict& verdict,
                        const TrustConfig& cfg) {
  Entry& e = entries_[client_id];
  if (e.status == TrustStatus::Excluded)
    throw contract_error("TrustLedger: excluded client " + std::to_string(client_id) +
                         " received a verdict");
  if (verdict.status == VerdictStatus::Accept) {
    e.consecutive_accepts += 1;
    if (e.status == TrustStatus::Warned && e.consecutive_accepts >= cfg.warn_clear) {
      e.status = TrustStatus::Honest;
      e.warns = 0;
    }
  } else {
    e.consecutive_accepts = 0;
    e.warns += 1;
    e.status = e.warns >= cfg.warn_exclude ? TrustStatus::Excluded : TrustStatus::Warned;
  }
  events_.push_back(Event{round, client_id, verdict});
}

TrustStatus TrustLedger::status(int client_id) const {
  auto it = entries_.find(client_id);
  return it == entries_.end() ? TrustStatus::Honest : it->second.status;
}

int TrustLedger::warn_count(int client_id) const {
  auto it = entries_.find(client_id);
  return it == entries_.end() ? 0 : it->second.warns;
}

int TrustLedger::count(TrustStatus s, int num_clients) const {
  int warned = 0, excluded = 0;
  for (const auto& [id, e] : entries_) {
    if (e.status == TrustStatus::Warned) ++warned;
    if (e.status == TrustStatus::Excluded) ++excluded;
  }
  switch (s) {
    case TrustStatus::Warned: return warned;
    case TrustStatus::Excluded: return excluded;
    case TrustStatus::Honest: return num_clients - warned - excluded;
  }
  return 0;
}

std::optional<AggregateResult> aggregate(std::span<const ClientUpdate> updates,
                                         std::span<const Verdict> verdicts,
                                         const ParamVector& global_theta,
                                         const ParamVector& global_phi) {
  if (updates.size() != verdicts.size())
    throw contract_error("aggregate: updates/verdicts size mismatch");

  std::vector<std::size_t> kept;
  std::vector<double> volumes;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    const Verdict& v = verdicts[i];
    double vol;
    if (v.status == VerdictStatus::Accept) {
      vol = static_cast<double>(updates[i].claimed_volume);
    } else if (v.estimated_volume) {
      vol = static_cast<double>(*v.estimated_volume);
    } else {
      continue;  // NotEstimable: dropped from this round
    }
    kept.push_back(i);
    volumes.push_back(vol);
  }
  if (kept.empty()) return std::nullopt;

  const double total = std::accumulate(volumes.begin(), volumes.end(), 0.0);
  AggregateResult out;
  out.weights.resize(kept.size());
  double partial = 0.0;
  for (std::size_t k = 0; k + 1 < kept.size(); ++k) {
    out.weights[k] = volumes[k] / total;
    partial += out.weights[k];
  }
  out.weights.back() = 1.0 - partial;  // weights sum to 1 exactly

  out.theta = global_theta;
  out.phi = global_phi;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const ClientUpdate& up = updates[kept[k]];
    out.kept_ids.push_back(up.client_id);
    require_same_dim(global_theta, up.model_delta, "aggregate: model delta");
    axpy(out.theta, out.weights[k], up.model_delta);
    require_same_dim(global_phi, up.phi, "aggregate: phi");
    for (std::size_t i = 0; i < out.phi.dim(); ++i)
      out.phi[i] += out.weights[k] * (up.phi[i] - global_phi[i]);
  }
  check_finite(out.theta, "aggregate: theta");
  check_finite(out.phi, "aggregate: phi");
  return out;
}

std::vector<double> weight_perturbation(std::span<const double> claimed_volumes,
                                        std::span<const double> true_volumes) {
  if (claimed_volumes.size() != true_volumes.size())
    throw contract_error("weight_perturbation: length mismatch");
  double claimed_total = 0.0, true_total = 0.0;
  for (std::size_t i = 0; i < claimed_volumes.size(); ++i) {
    if (!(claimed_volumes[i] > 0.0) || !(true_volumes[i] > 0.0))
      throw contract_error("weight_perturbation: volumes must be positive");
    claimed_total += claimed_volumes[i];
    true_total += true_volumes[i];
  }
  std::vector<double> out(claimed_volumes.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = claimed_volumes[i] / claimed_total - true_volumes[i] / true_total;
  return out;
}

namespace {

// Draws a label-skewed shard of exactly `volume` rows from the shadow pool:
// a Dirichlet(beta) class profile, largest-remainder rounding, capacity
// overflow redistributed to the most-weighted classes with room left.
std::vector<int> draw_skewed_shard(const std::vector<std::vector<int>>& by_class, int volume,
                                   double beta, Rng& rng) {
  const int num_classes = static_cast<int>(by_class.size());
  std::vector<double> profile = rng.dirichlet(beta, num_classes);

  std::vector<int> counts(num_classes, 0);
  std::vector<std::pair<double, int>> frac_order;
  int assigned = 0;
  for (int c = 0; c < num_classes; ++c) {
    double target = profile[c] * volume;
    counts[c] = static_cast<int>(target);
    assigned += counts[c];
    frac_order.emplace_back(target - counts[c], c);
  }
  std::sort(frac_order.begin(), frac_order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; assigned < volume && i < num_classes; ++i) {
    counts[frac_order[i].second] += 1;
    ++assigned;
  }
  // Cap by pool capacity; push overflow onto classes with spare room.
  int overflow = 0;
  for (int c = 0; c < num_classes; ++c) {
    int cap = static_cast<int>(by_class[c].size());
    if (counts[c] > cap) {
      overflow += counts[c] - cap;
      counts[c] = cap;
    }
  }
  std::vector<std::pair<double, int>> weight_order;
  for (int c = 0; c < num_classes; ++c) weight_order.emplace_back(profile[c], c);
  std::sort(weight_order.begin(), weight_order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  while (overflow > 0) {
    bool progressed = false;
    for (const auto& [w, c] : weight_order) {
      int cap = static_cast<int>(by_class[c].size());
      if (counts[c] < cap) {
        counts[c] += 1;
        --overflow;
        progressed = true;
        if (overflow == 0) break;
      }
    }
    if (!progressed) throw config_error("calibrate_prior: insufficient shadow data for volume");
  }

  std::vector<int> rows;
  rows.reserve(volume);
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) continue;
    std::vector<int> pool = by_class[c];
    rng.shuffle(pool);
    rows.insert(rows.end(), pool.begin(), pool.begin() + counts[c]);
  }
  return rows;
}

}  // namespace

AlphaPrior calibrate_prior(const ModelSpec& spec, StrategyKind strategy,
                           const Dataset& shadow, const ExperimentConfig& cfg,
                           const ParamVector& theta0, const ParamVector& phi0,
                           int client_pool_size) {
  const std::vector<int>& volumes = cfg.calib_volumes;
  if (volumes.empty()) throw config_error("calibrate_prior: no calibration volumes");
  for (int v : volumes)
    if (v > shadow.size())
      throw config_error("calibrate_prior: shadow dataset (" + std::to_string(shadow.size()) +
                         " rows) too small for calibration volume " + std::to_string(v));
  const int horizon = std::max(1, cfg.rounds);
  const int replicas = cfg.calib_replicas;
  if (replicas * cfg.calib_trajectories < 20)
    throw config_error("calibrate_prior: need >= 20 replicas per (round, volume) cell "
                       "(calib_replicas * calib_trajectories)");

  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(shadow.num_classes()));
  for (int i = 0; i < shadow.size(); ++i) by_class[shadow.labels[i]].push_back(i);

  LocalRoundConfig lrc;
  lrc.experiment_seed = cfg.seed;
  lrc.epochs_per_round = cfg.epochs_per_round;
  lrc.batch_size = cfg.batch_size;
  lrc.eta = cfg.eta;
  lrc.branch_steps = cfg.branch_steps;
  lrc.misreport_factor = 1.0;

  AlphaPrior prior(volumes, horizon);
  std::vector<std::vector<std::vector<double>>> cell_alphas(
      static_cast<std::size_t>(horizon),
      std::vector<std::vector<double>>(volumes.size()));

  // Several independent shadow trajectories, pooled per cell, so the bands
  // cover trajectory-to-trajectory variation and not just shard composition.
  for (int traj = 0; traj < cfg.calib_trajectories; ++traj) {
    const std::uint64_t t = static_cast<std::uint64_t>(traj);
    ParamVector theta = theta0;
    ParamVector phi = phi0;
    StrategyCtx traj_ctx;
    traj_ctx.kind = strategy;
    traj_ctx.mu = cfg.fedprox_mu;
    traj_ctx.lambda_d = cfg.ditto_lambda;
    traj_ctx.init(spec);
    const int kGridIdBase = (1 << 20) + traj * (1 << 18);  // outside real client ids
    const int kAdvanceIdBase = (1 << 24) + traj * (1 << 18);

    for (int r = 0; r < horizon; ++r) {
      for (std::size_t vi = 0; vi < volumes.size(); ++vi) {
        for (int k = 0; k < replicas; ++k) {
          const int replica_id = kGridIdBase + static_cast<int>(vi) * 4096 + k;
          Rng shard_rng = derive_rng(cfg.seed, {stream::kCalibShard, t,
                                                static_cast<std::uint64_t>(r), vi,
                                                static_cast<std::uint64_t>(k)});
          std::vector<int> rows = draw_skewed_shard(by_class, volumes[vi], cfg.dirichlet_beta,
                                                    shard_rng);
          traj_ctx.ensure_client_state(replica_id, theta);
          Rng round_rng = derive_rng(cfg.seed, {stream::kClientRound,
                                                static_cast<std::uint64_t>(replica_id),
                                                static_cast<std::uint64_t>(r)});
          QuantityBranch branch(cfg.branch_hidden, cfg.branch_lr, phi);
          ClientUpdate up = local_round(replica_id, shadow, rows, spec, theta, std::move(branch),
                                        client_view(traj_ctx, replica_id), lrc, round_rng);
          for (double a : up.alphas) cell_alphas[r][vi].push_back(a);
        }
      }

      // Advance this shadow trajectory like one federation round: K honest
      // advance-replicas with shard sizes drawn from the same Dirichlet size
      // process as the client partition.
      Rng adv_rng = derive_rng(cfg.seed, {stream::kCalibAdvance, t,
                                          static_cast<std::uint64_t>(r)});
      std::vector<double> virtual_sizes(static_cast<std::size_t>(cfg.num_clients), 0.0);
      const double pool_scale = static_cast<double>(client_pool_size) / shadow.size();
      for (const auto& pool : by_class) {
        std::vector<double> props = adv_rng.dirichlet(cfg.dirichlet_beta, cfg.num_clients);
        const double class_total = pool_scale * static_cast<double>(pool.size());
        for (int k = 0; k < cfg.num_clients; ++k) virtual_sizes[k] += class_total * props[k];
      }
      std::vector<int> virtual_ids(static_cast<std::size_t>(cfg.num_clients));
      std::iota(virtual_ids.begin(), virtual_ids.end(), 0);
      adv_rng.shuffle(virtual_ids);

      std::vector<ClientUpdate> chosen;
      std::vector<RoundSteps> chosen_steps;
      const int take = std::min(cfg.clients_per_round, cfg.num_clients);
      for (int j = 0; j < take; ++j) {
        int size = static_cast<int>(std::lround(virtual_sizes[virtual_ids[j]]));
        size = std::clamp(size, std::max(1, cfg.min_samples), shadow.size());
        const int replica_id = kAdvanceIdBase + j;
        std::vector<int> rows = draw_skewed_shard(by_class, size, cfg.dirichlet_beta, adv_rng);
        traj_ctx.ensure_client_state(replica_id, theta);
        Rng round_rng = derive_rng(cfg.seed, {stream::kCalibAdvance,
                                              static_cast<std::uint64_t>(replica_id),
                                              static_cast<std::uint64_t>(r)});
        QuantityBranch branch(cfg.branch_hidden, cfg.branch_lr, phi);
        ClientUpdate up = local_round(replica_id, shadow, rows, spec, theta, std::move(branch),
                                      client_view(traj_ctx, replica_id), lrc, round_rng);
        chosen_steps.push_back(RoundSteps{replica_id, up.num_local_steps});
        chosen.push_back(std::move(up));
      }
      std::vector<Verdict> verdicts(chosen.size());  // honest accepts, claimed volumes
      auto agg = aggregate(chosen, verdicts, theta, phi);
      if (agg) {
        theta = std::move(agg->theta);
        phi = std::move(agg->phi);
      }
      post_round(traj_ctx, chosen, chosen_steps, cfg.eta, cfg.num_clients);
    }
  }

  // Bands per cell, pooling a window of adjacent rounds: the alpha
  // distribution drifts slowly round to round, and the wider pool covers
  // trajectory noise the point estimate would miss.
  const int w = cfg.calib_round_window;
  for (int r = 0; r < horizon; ++r)
    for (std::size_t vi = 0; vi < volumes.size(); ++vi) {
      std::vector<double> pooled;
      for (int q = std::max(0, r - w); q <= std::min(horizon - 1, r + w); ++q)
        pooled.insert(pooled.end(), cell_alphas[q][vi].begin(), cell_alphas[q][vi].end());
      AlphaBand band;
      band.q_lo = empirical_quantile(pooled, cfg.quantile_lo);
      band.q_hi = empirical_quantile(pooled, cfg.quantile_hi);
      band.n_samples = static_cast<int>(cell_alphas[r][vi].size());
      prior.set_band(r, static_cast<int>(vi), band);
    }
  return prior;
}

}  // namespace feddua
