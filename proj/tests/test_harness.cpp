#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "feddua/harness.hpp"
#include "test_util.hpp"

using namespace feddua;

namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig mini_config() {
  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.num_clients = 8;
  cfg.clients_per_round = 3;
  cfg.rounds = 5;
  cfg.epochs_per_round = 2;
  cfg.batch_size = 8;
  cfg.eta = 0.3;
  cfg.dirichlet_beta = 0.5;
  cfg.blob_classes = 3;
  cfg.blob_dim = 6;
  cfg.blob_samples_per_class = 200;
  cfg.blob_spread = 0.8;
  cfg.model = "mlp1";
  cfg.hidden_dim = 16;
  cfg.branch_hidden = 1;
  cfg.calib_volumes = {16, 32};
  cfg.calib_replicas = 10;
  cfg.calib_trajectories = 2;
  return cfg;
}

std::string temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("sample_clients: exhaustion returns all eligible, sorted") {
  Rng rng(1);
  std::vector<int> eligible = {5, 2, 9, 1};
  auto got = sample_clients(rng, eligible, 10);
  CHECK(got == std::vector<int>{1, 2, 5, 9});
}

TEST_CASE("sample_clients: fixed seed gives a fixed sample") {
  std::vector<int> eligible(100);
  for (int i = 0; i < 100; ++i) eligible[i] = i;
  Rng a(42), b(42);
  CHECK(sample_clients(a, eligible, 10) == sample_clients(b, eligible, 10));
}

TEST_CASE("sample_clients: uniform frequencies over 10000 draws") {
  std::vector<int> eligible(100);
  for (int i = 0; i < 100; ++i) eligible[i] = i;
  std::vector<int> counts(100, 0);
  Rng rng(7);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d)
    for (int id : sample_clients(rng, eligible, 10)) counts[id]++;
  const double sigma = std::sqrt(0.1 * 0.9 / draws);
  for (int c : counts) {
    double freq = static_cast<double>(c) / draws;
    CHECK(std::abs(freq - 0.1) <= 3.0 * sigma);
  }
}

TEST_CASE("config: file parsing, comments, overrides, unknown keys") {
  auto path = (fs::temp_directory_path() / "feddua_cfg_test.cfg").string();
  {
    std::ofstream out(path);
    out << "# comment\n";
    out << "seed = 9\n";
    out << "rounds = 4   # trailing comment\n";
    out << "strategy = scaffold\n";
    out << "attacker_ids = 1,3\n";
  }
  ExperimentConfig cfg = parse_config_file(path);
  CHECK(cfg.seed == 9);
  CHECK(cfg.rounds == 4);
  CHECK(cfg.strategy == StrategyKind::Scaffold);
  CHECK(cfg.attacker_ids == std::vector<int>{1, 3});

  apply_override(cfg, "eta=0.125");
  CHECK(cfg.eta == 0.125);
  CHECK_THROWS_AS(apply_override(cfg, "not_a_key=1"), config_error);
  CHECK_THROWS_AS(apply_override(cfg, "eta"), config_error);
  fs::remove(path);
}

TEST_CASE("config: invariant violations are named configuration errors") {
  ExperimentConfig cfg = mini_config();
  cfg.clients_per_round = 99;
  CHECK_THROWS_AS(cfg.resolve_and_validate(), config_error);

  cfg = mini_config();
  cfg.eta = 0.0;
  CHECK_THROWS_AS(cfg.resolve_and_validate(), config_error);

  cfg = mini_config();
  cfg.attacker_ids = {100};
  CHECK_THROWS_AS(cfg.resolve_and_validate(), config_error);

  cfg = mini_config();
  cfg.min_samples = 0;
  cfg.resolve_and_validate();
  CHECK(cfg.min_samples == 2 * cfg.batch_size);
}

TEST_CASE("run_experiment: same config twice gives byte-identical outputs") {
  ExperimentConfig cfg = mini_config();
  ExperimentResult r1 = run_experiment(cfg);
  ExperimentResult r2 = run_experiment(cfg);
  REQUIRE(r1.records.size() == r2.records.size());
  for (std::size_t i = 0; i < r1.records.size(); ++i)
    CHECK(r1.records[i].accuracy == r2.records[i].accuracy);

  std::string d1 = temp_dir("feddua_out_a");
  std::string d2 = temp_dir("feddua_out_b");
  emit_outputs(r1, cfg, d1);
  emit_outputs(r2, cfg, d2);
  CHECK(slurp(d1 + "/metrics.csv") == slurp(d2 + "/metrics.csv"));
  CHECK(slurp(d1 + "/verdicts.log") == slurp(d2 + "/verdicts.log"));
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("run_experiment: thread count does not change results") {
  ExperimentConfig cfg = mini_config();
  cfg.threads = 1;
  ExperimentResult r1 = run_experiment(cfg);
  cfg.threads = 8;
  ExperimentResult r8 = run_experiment(cfg);
  REQUIRE(r1.records.size() == r8.records.size());
  for (std::size_t i = 0; i < r1.records.size(); ++i) {
    CHECK(r1.records[i].accuracy == r8.records[i].accuracy);
    REQUIRE(r1.records[i].clients.size() == r8.records[i].clients.size());
    for (std::size_t j = 0; j < r1.records[i].clients.size(); ++j) {
      CHECK(r1.records[i].clients[j].client_id == r8.records[i].clients[j].client_id);
      CHECK(r1.records[i].clients[j].delta_w == r8.records[i].clients[j].delta_w);
      CHECK(r1.records[i].clients[j].estimated_volume ==
            r8.records[i].clients[j].estimated_volume);
    }
  }
}

TEST_CASE("emit_outputs: metrics round-trip to 1e-9 and zero rounds leave headers") {
  ExperimentConfig cfg = mini_config();
  ExperimentResult result = run_experiment(cfg);
  std::string dir = temp_dir("feddua_out_rt");
  emit_outputs(result, cfg, dir);

  auto parsed = parse_metrics_csv(dir + "/metrics.csv");
  REQUIRE(parsed.size() == result.records.size());
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    CHECK(parsed[i].round == result.records[i].round);
    CHECK(std::abs(parsed[i].accuracy - result.records[i].accuracy) <= 1e-9);
    REQUIRE(parsed[i].clients.size() == result.records[i].clients.size());
    for (std::size_t j = 0; j < parsed[i].clients.size(); ++j) {
      const auto& a = parsed[i].clients[j];
      const auto& b = result.records[i].clients[j];
      CHECK(a.client_id == b.client_id);
      CHECK(a.claimed_volume == b.claimed_volume);
      CHECK(a.true_volume == b.true_volume);
      CHECK(a.estimated_volume == b.estimated_volume);
      CHECK(std::abs(a.delta_w - b.delta_w) <= 1e-9);
    }
  }
  fs::remove_all(dir);

  ExperimentConfig zero = mini_config();
  zero.rounds = 0;
  ExperimentResult empty = run_experiment(zero);
  std::string zdir = temp_dir("feddua_out_zero");
  emit_outputs(empty, zero, zdir);
  CHECK(slurp(zdir + "/metrics.csv") ==
        "round,accuracy,aggregated,honest,warned,excluded,sampled,clients\n");
  CHECK(slurp(zdir + "/accuracy_curve.tsv") == "round\taccuracy\n");
  fs::remove_all(zdir);
}

TEST_CASE("config echo replay reproduces the identical run") {
  ExperimentConfig cfg = mini_config();
  ExperimentResult r1 = run_experiment(cfg);
  std::string dir = temp_dir("feddua_out_echo");
  emit_outputs(r1, cfg, dir);

  ExperimentConfig replay = parse_config_file(dir + "/config.resolved");
  ExperimentResult r2 = run_experiment(replay);
  std::string dir2 = temp_dir("feddua_out_echo2");
  emit_outputs(r2, replay, dir2);
  CHECK(slurp(dir + "/metrics.csv") == slurp(dir2 + "/metrics.csv"));
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("excluded clients are never sampled after exclusion") {
  // An aggressive trust policy plus an always-lying attacker forces an
  // exclusion quickly even in a tiny run.
  ExperimentConfig cfg = mini_config();
  cfg.rounds = 12;
  cfg.clients_per_round = 6;
  cfg.attacker_ids = {0};
  cfg.misreport_factor = 3.0;
  cfg.warn_exclude = 1;
  ExperimentResult result = run_experiment(cfg);

  std::map<int, int> excluded_at;  // client -> round of exclusion
  std::map<int, int> flags;
  for (const auto& ev : result.ledger_events) {
    if (ev.verdict.status == VerdictStatus::Flag) {
      flags[ev.client_id]++;
      if (flags[ev.client_id] >= cfg.warn_exclude &&
          excluded_at.find(ev.client_id) == excluded_at.end())
        excluded_at[ev.client_id] = ev.round;
    } else {
      // mirror the ledger reset rule loosely; exclusion is what matters here
    }
  }
  for (const auto& rec : result.records)
    for (const auto& c : rec.clients) {
      auto it = excluded_at.find(c.client_id);
      if (it != excluded_at.end()) CHECK(rec.round <= it->second);
    }
}

TEST_CASE("verdict ledger file passes offline checks; corrupted file fails") {
  ExperimentConfig cfg = mini_config();
  cfg.attacker_ids = {0};
  ExperimentResult result = run_experiment(cfg);
  std::string dir = temp_dir("feddua_out_ledger");
  emit_outputs(result, cfg, dir);

  TrustConfig tc{cfg.warn_exclude, cfg.warn_clear};
  std::string report = check_ledger_file(dir + "/verdicts.log", tc);
  CHECK(report.find("events=") != std::string::npos);

  {
    std::ofstream out(dir + "/verdicts.log", std::ios::app);
    out << "9,0,Flag,None,10,\n";  // Flag without reason violates the format
  }
  CHECK_THROWS_AS(check_ledger_file(dir + "/verdicts.log", tc), parse_error);
  fs::remove_all(dir);
}

TEST_CASE("run_experiment: invalid config fails before any work") {
  ExperimentConfig cfg = mini_config();
  cfg.clients_per_round = 0;
  CHECK_THROWS_AS(run_experiment(cfg), config_error);
}
