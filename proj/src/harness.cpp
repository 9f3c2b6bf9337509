#include "feddua/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "feddua/errors.hpp"

namespace feddua {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct SplitData {
  Dataset data;                 // shuffled working copy
  std::vector<int> test_rows;
  std::vector<int> shadow_rows;
  std::vector<int> train_rows;  // partitioned across clients
};

// Stratified split: per class, test_fraction to the test set, then
// shadow_fraction of the remaining training pool to the server.
SplitData split_dataset(Dataset ds, const ExperimentConfig& cfg) {
  SplitData out;
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(ds.num_classes()));
  for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  Rng rng = derive_rng(cfg.seed, {stream::kSplit});
  for (auto& pool : by_class) {
    rng.shuffle(pool);
    const int n = static_cast<int>(pool.size());
    const int n_test = static_cast<int>(std::lround(cfg.test_fraction * n));
    const int n_shadow = static_cast<int>(std::lround(cfg.shadow_fraction * (n - n_test)));
    for (int i = 0; i < n; ++i) {
      if (i < n_test) out.test_rows.push_back(pool[i]);
      else if (i < n_test + n_shadow) out.shadow_rows.push_back(pool[i]);
      else out.train_rows.push_back(pool[i]);
    }
  }
  std::sort(out.test_rows.begin(), out.test_rows.end());
  std::sort(out.shadow_rows.begin(), out.shadow_rows.end());
  std::sort(out.train_rows.begin(), out.train_rows.end());
  out.data = std::move(ds);
  return out;
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == "csv") return load_csv(cfg.csv_path);
  Rng rng = derive_rng(cfg.seed, {stream::kDataset});
  return make_blobs(cfg.blob_classes, cfg.blob_dim, cfg.blob_samples_per_class, cfg.blob_spread,
                    rng);
}

}  // namespace

std::vector<int> sample_clients(Rng& rng, const std::vector<int>& eligible, int k) {
  if (eligible.empty()) throw contract_error("sample_clients: no eligible clients");
  std::vector<int> pool = eligible;
  const int take = std::min<int>(k, static_cast<int>(pool.size()));
  for (int i = 0; i < take; ++i) {
    std::size_t j = i + rng.next_below(pool.size() - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  return pool;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentConfig cfg = config;
  cfg.resolve_and_validate();

  Dataset full = build_dataset(cfg);
  full.validate();
  const int num_classes = full.num_classes();
  if (num_classes < 2) throw config_error("run_experiment: dataset needs >= 2 classes");
  const ModelSpec spec = cfg.model_spec(full.dim, num_classes);

  SplitData split = split_dataset(std::move(full), cfg);
  const Dataset& data = split.data;
  if (split.test_rows.empty()) throw config_error("run_experiment: empty test split");

  // Partition the client pool over a view dataset holding only train rows.
  Shard train_shard = gather(data, split.train_rows);
  Dataset train_view{std::move(train_shard.features), std::move(train_shard.labels), data.dim,
                     "train"};
  Rng part_rng = derive_rng(cfg.seed, {stream::kPartition});
  Partition part =
      dirichlet_partition(train_view, cfg.num_clients, cfg.dirichlet_beta, cfg.min_samples,
                          part_rng);
  // Map partition indices back to rows of the full dataset.
  std::vector<std::vector<int>> shards(part.assignments.size());
  for (std::size_t k = 0; k < part.assignments.size(); ++k)
    for (int local : part.assignments[k]) shards[k].push_back(split.train_rows[local]);

  ExperimentResult result;
  result.true_volumes.resize(cfg.num_clients);
  for (int k = 0; k < cfg.num_clients; ++k)
    result.true_volumes[k] = static_cast<long>(shards[k].size());

  // Initial global model and branch.
  Rng theta_rng = derive_rng(cfg.seed, {stream::kInitTheta});
  ParamVector theta = init_params(spec, theta_rng);
  Rng phi_rng = derive_rng(cfg.seed, {stream::kInitPhi});
  QuantityBranch branch0(cfg.branch_hidden, cfg.branch_lr, spec.param_count(), phi_rng);
  ParamVector phi = branch0.phi();

  // Prior: load from file or calibrate by shadow pre-training.
  AlphaPrior prior;
  if (cfg.feddua_enabled) {
    if (!cfg.prior_file.empty()) {
      prior = AlphaPrior::load(cfg.prior_file);
    } else {
      Shard shadow_shard = gather(data, split.shadow_rows);
      Dataset shadow{std::move(shadow_shard.features), std::move(shadow_shard.labels), data.dim,
                     "shadow"};
      prior = calibrate_prior(spec, cfg.strategy, shadow, cfg, theta, phi,
                              static_cast<int>(split.train_rows.size()));
    }
  }

  StrategyCtx ctx;
  ctx.kind = cfg.strategy;
  ctx.mu = cfg.fedprox_mu;
  ctx.lambda_d = cfg.ditto_lambda;
  ctx.init(spec);

  TrustLedger ledger;
  const TrustConfig trust_cfg{cfg.warn_exclude, cfg.warn_clear};
  const VerifyConfig verify_cfg{cfg.tau, cfg.batch_size};

  std::vector<bool> is_attacker(cfg.num_clients, false);
  for (int id : cfg.attacker_ids) is_attacker[id] = true;

  for (int round = 0; round < cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<int> eligible;
    for (int k = 0; k < cfg.num_clients; ++k)
      if (!ledger.excluded(k)) eligible.push_back(k);
    if (eligible.empty()) break;

    Rng sample_rng = derive_rng(cfg.seed, {stream::kSampling, static_cast<std::uint64_t>(round)});
    std::vector<int> sampled = sample_clients(sample_rng, eligible, cfg.clients_per_round);

    for (int id : sampled) ctx.ensure_client_state(id, theta);

    // Fan the sampled clients out over a worker pool. Per-client RNG streams
    // and the fixed merge order keep results independent of thread count.
    std::vector<ClientUpdate> updates(sampled.size());
    auto run_one = [&](std::size_t i) {
      const int id = sampled[i];
      LocalRoundConfig lrc;
      lrc.experiment_seed = cfg.seed;
      lrc.epochs_per_round = cfg.epochs_per_round;
      lrc.batch_size = cfg.batch_size;
      lrc.eta = cfg.eta;
      lrc.branch_steps = cfg.branch_steps;
      lrc.misreport_factor = is_attacker[id] ? cfg.misreport_factor : 1.0;
      Rng rng = derive_rng(cfg.seed, {stream::kClientRound, static_cast<std::uint64_t>(id),
                                      static_cast<std::uint64_t>(round)});
      QuantityBranch branch(cfg.branch_hidden, cfg.branch_lr, phi);
      updates[i] = local_round(id, data, shards[id], spec, theta, std::move(branch),
                               client_view(ctx, id), lrc, rng);
    };
    const int workers = std::min<int>(cfg.threads, static_cast<int>(sampled.size()));
    if (workers <= 1) {
      for (std::size_t i = 0; i < sampled.size(); ++i) run_one(i);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < sampled.size(); i += workers) run_one(i);
        });
      for (auto& t : pool) t.join();
    }

    std::vector<Verdict> verdicts(updates.size());
    if (cfg.feddua_enabled) {
      for (std::size_t i = 0; i < updates.size(); ++i)
        verdicts[i] = verify(updates[i], prior, round, verify_cfg);
    }  // else: default Accept verdicts with claimed volumes

    for (std::size_t i = 0; i < updates.size(); ++i)
      ledger.apply(updates[i].client_id, round, verdicts[i], trust_cfg);

    // Weight-perturbation diagnostic over this round's participants.
    std::vector<double> claimed(updates.size()), truev(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i) {
      claimed[i] = static_cast<double>(updates[i].claimed_volume);
      truev[i] = static_cast<double>(result.true_volumes[updates[i].client_id]);
    }
    std::vector<double> dw = weight_perturbation(claimed, truev);

    auto agg = aggregate(updates, verdicts, theta, phi);
    std::vector<RoundSteps> steps(updates.size());
    for (std::size_t i = 0; i < updates.size(); ++i)
      steps[i] = RoundSteps{updates[i].client_id, updates[i].num_local_steps};
    if (agg) {
      theta = agg->theta;
      phi = agg->phi;
      post_round(ctx, updates, steps, cfg.eta, cfg.num_clients);
    }

    RoundRecord rec;
    rec.round = round;
    rec.aggregated = agg.has_value();
    rec.accuracy = accuracy(spec, theta, data, split.test_rows);
    for (std::size_t i = 0; i < updates.size(); ++i) {
      RoundClientRecord c;
      c.client_id = updates[i].client_id;
      c.claimed_volume = updates[i].claimed_volume;
      c.true_volume = result.true_volumes[c.client_id];
      c.estimated_volume = verdicts[i].estimated_volume;
      c.status = verdicts[i].status;
      c.reason = verdicts[i].reason;
      c.delta_w = dw[i];
      rec.clients.push_back(c);
    }
    rec.honest = ledger.count(TrustStatus::Honest, cfg.num_clients);
    rec.warned = ledger.count(TrustStatus::Warned, cfg.num_clients);
    rec.excluded = ledger.count(TrustStatus::Excluded, cfg.num_clients);
    rec.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.records.push_back(std::move(rec));
  }

  result.ledger_events = ledger.events();
  if (!result.records.empty()) result.final_accuracy = result.records.back().accuracy;
  return result;
}

void emit_outputs(const ExperimentResult& result, const ExperimentConfig& config,
                  const std::string& out_dir) {
  ExperimentConfig cfg = config;
  cfg.resolve_and_validate();
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw io_error("emit_outputs: cannot create directory", out_dir);

  {
    std::ofstream out(out_dir + "/metrics.csv");
    if (!out) throw io_error("emit_outputs: cannot open", out_dir + "/metrics.csv");
    out << "round,accuracy,aggregated,honest,warned,excluded,sampled,clients\n";
    for (const RoundRecord& r : result.records) {
      out << r.round << "," << fmt(r.accuracy) << "," << (r.aggregated ? 1 : 0) << ","
          << r.honest << "," << r.warned << "," << r.excluded << "," << r.clients.size() << ",";
      for (std::size_t i = 0; i < r.clients.size(); ++i) {
        const RoundClientRecord& c = r.clients[i];
        if (i) out << ";";
        out << c.client_id << ":" << c.claimed_volume << ":" << c.true_volume << ":";
        if (c.estimated_volume) out << *c.estimated_volume;
        out << ":" << to_string(c.status) << ":" << to_string(c.reason) << ":" << fmt(c.delta_w);
      }
      out << "\n";
    }
    if (!out) throw io_error("emit_outputs: write failed", out_dir + "/metrics.csv");
  }
  {
    std::ofstream out(out_dir + "/verdicts.log");
    if (!out) throw io_error("emit_outputs: cannot open", out_dir + "/verdicts.log");
    for (const auto& ev : result.ledger_events) {
      out << ev.round << "," << ev.client_id << "," << to_string(ev.verdict.status) << ","
          << to_string(ev.verdict.reason) << ",";
      // claimed volume is recoverable from metrics; the ledger stores what
      // verification saw: claimed and (when estimable) re-estimated volume.
      long claimed = 0;
      for (const RoundRecord& r : result.records) {
        if (r.round != ev.round) continue;
        for (const auto& c : r.clients)
          if (c.client_id == ev.client_id) claimed = c.claimed_volume;
      }
      out << claimed << ",";
      if (ev.verdict.estimated_volume) out << *ev.verdict.estimated_volume;
      out << "\n";
    }
    if (!out) throw io_error("emit_outputs: write failed", out_dir + "/verdicts.log");
  }
  {
    std::ofstream out(out_dir + "/config.resolved");
    if (!out) throw io_error("emit_outputs: cannot open", out_dir + "/config.resolved");
    cfg.echo(out);
    if (!out) throw io_error("emit_outputs: write failed", out_dir + "/config.resolved");
  }
  {
    std::ofstream out(out_dir + "/accuracy_curve.tsv");
    if (!out) throw io_error("emit_outputs: cannot open", out_dir + "/accuracy_curve.tsv");
    out << "round\taccuracy\n";
    for (const RoundRecord& r : result.records) out << r.round << "\t" << fmt(r.accuracy) << "\n";
    if (!out) throw io_error("emit_outputs: write failed", out_dir + "/accuracy_curve.tsv");
  }
  {
    // Wall-clock is inherently non-deterministic, so it lives apart from the
    // byte-stable outputs.
    std::ofstream out(out_dir + "/timings.log");
    if (!out) throw io_error("emit_outputs: cannot open", out_dir + "/timings.log");
    for (const RoundRecord& r : result.records)
      out << r.round << " " << r.wallclock_ms << "\n";
  }
}

namespace {

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

long parse_long(const std::string& s, long line_no) {
  long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw parse_error("metrics: bad integer '" + s + "'", line_no);
  return v;
}

double parse_dbl(const std::string& s, long line_no) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw parse_error("metrics: bad number '" + s + "'", line_no);
  return v;
}

VerdictStatus status_from(const std::string& s, long line_no) {
  if (s == "Accept") return VerdictStatus::Accept;
  if (s == "Flag") return VerdictStatus::Flag;
  throw parse_error("metrics: bad status '" + s + "'", line_no);
}

FlagReason reason_from(const std::string& s, long line_no) {
  if (s == "None") return FlagReason::None;
  if (s == "AlphaOutOfBand") return FlagReason::AlphaOutOfBand;
  if (s == "VolumeInconsistent") return FlagReason::VolumeInconsistent;
  if (s == "NotEstimable") return FlagReason::NotEstimable;
  throw parse_error("metrics: bad reason '" + s + "'", line_no);
}

}  // namespace

std::vector<RoundRecord> parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("parse_metrics_csv: cannot open", path);
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw parse_error("metrics: empty file", 1);
  ++line_no;
  std::vector<RoundRecord> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_on(line, ',');
    if (fields.size() != 8) throw parse_error("metrics: expected 8 columns", line_no);
    RoundRecord r;
    r.round = static_cast<int>(parse_long(fields[0], line_no));
    r.accuracy = parse_dbl(fields[1], line_no);
    r.aggregated = parse_long(fields[2], line_no) != 0;
    r.honest = static_cast<int>(parse_long(fields[3], line_no));
    r.warned = static_cast<int>(parse_long(fields[4], line_no));
    r.excluded = static_cast<int>(parse_long(fields[5], line_no));
    const long sampled = parse_long(fields[6], line_no);
    if (!fields[7].empty()) {
      for (const std::string& cell : split_on(fields[7], ';')) {
        auto parts = split_on(cell, ':');
        if (parts.size() != 7) throw parse_error("metrics: bad client cell", line_no);
        RoundClientRecord c;
        c.client_id = static_cast<int>(parse_long(parts[0], line_no));
        c.claimed_volume = parse_long(parts[1], line_no);
        c.true_volume = parse_long(parts[2], line_no);
        if (!parts[3].empty()) c.estimated_volume = parse_long(parts[3], line_no);
        c.status = status_from(parts[4], line_no);
        c.reason = reason_from(parts[5], line_no);
        c.delta_w = parse_dbl(parts[6], line_no);
        r.clients.push_back(c);
      }
    }
    if (static_cast<long>(r.clients.size()) != sampled)
      throw parse_error("metrics: sampled count mismatch", line_no);
    out.push_back(std::move(r));
  }
  return out;
}

std::string check_ledger_file(const std::string& path, const TrustConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw io_error("check_ledger_file: cannot open", path);
  std::string line;
  long line_no = 0;
  TrustLedger replay;
  long events = 0, accepts = 0, flags = 0;
  int last_round = -1;
  std::vector<int> seen_clients;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_on(line, ',');
    if (fields.size() != 6)
      throw parse_error("ledger: expected round,client,status,reason,claimed,estimated", line_no);
    Verdict v;
    v.status = status_from(fields[2], line_no);
    v.reason = reason_from(fields[3], line_no);
    if (!fields[5].empty()) v.estimated_volume = parse_long(fields[5], line_no);
    const int round = static_cast<int>(parse_long(fields[0], line_no));
    const int client = static_cast<int>(parse_long(fields[1], line_no));
    if (round < last_round) throw parse_error("ledger: rounds not non-decreasing", line_no);
    last_round = round;
    if (v.status == VerdictStatus::Flag && v.reason == FlagReason::None)
      throw parse_error("ledger: Flag without reason", line_no);
    if (v.status == VerdictStatus::Flag && v.reason != FlagReason::NotEstimable &&
        !v.estimated_volume)
      throw parse_error("ledger: Flag without estimated volume", line_no);
    // Re-applying every event checks that no verdict follows an exclusion.
    try {
      replay.apply(client, round, v, cfg);
    } catch (const contract_error& e) {
      throw parse_error(std::string("ledger: ") + e.what(), line_no);
    }
    seen_clients.push_back(client);
    ++events;
    if (v.status == VerdictStatus::Accept) ++accepts;
    else ++flags;
  }
  std::sort(seen_clients.begin(), seen_clients.end());
  seen_clients.erase(std::unique(seen_clients.begin(), seen_clients.end()), seen_clients.end());
  int warned = 0, excluded = 0;
  for (int id : seen_clients) {
    if (replay.status(id) == TrustStatus::Warned) ++warned;
    if (replay.status(id) == TrustStatus::Excluded) ++excluded;
  }
  std::ostringstream report;
  report << "events=" << events << " accepts=" << accepts << " flags=" << flags
         << " clients=" << seen_clients.size() << " warned=" << warned
         << " excluded=" << excluded << " (policy warn_exclude=" << cfg.warn_exclude
         << ", warn_clear=" << cfg.warn_clear << ")";
  return report.str();
}

}  // namespace feddua
