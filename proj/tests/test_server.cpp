#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "feddua/server.hpp"
#include "test_util.hpp"

using namespace feddua;

namespace {

ClientUpdate fake_update(int id, long claimed, std::vector<double> alphas,
                         std::vector<EpochObservation> obs, ParamVector delta, ParamVector phi) {
  ClientUpdate up;
  up.client_id = id;
  up.claimed_volume = claimed;
  up.alphas = std::move(alphas);
  up.observations = std::move(obs);
  up.model_delta = std::move(delta);
  up.phi = std::move(phi);
  return up;
}

EpochObservation obs_for(double delta, double gbar, double eta) {
  return EpochObservation{delta, gbar, eta, 0};
}

AlphaPrior flat_prior(double lo, double hi, std::vector<int> volumes = {10, 100},
                      int horizon = 5) {
  AlphaPrior prior(volumes, horizon);
  for (int r = 0; r < horizon; ++r)
    for (std::size_t j = 0; j < volumes.size(); ++j)
      prior.set_band(r, static_cast<int>(j), AlphaBand{lo, hi, 40});
  return prior;
}

}  // namespace

TEST_CASE("empirical_quantile: known order statistics") {
  std::vector<double> xs = {4.0, 1.0, 3.0, 2.0};
  CHECK(empirical_quantile(xs, 0.0) == 1.0);
  CHECK(empirical_quantile(xs, 1.0) == 4.0);
  CHECK(empirical_quantile(xs, 0.5) == doctest::Approx(2.5));
  CHECK(median(std::vector<double>{5.0, 1.0, 9.0}) == 5.0);
}

TEST_CASE("alpha prior: interpolation in log volume, clamped at the edges") {
  AlphaPrior prior({10, 100}, 3);
  for (int r = 0; r < 3; ++r) {
    prior.set_band(r, 0, AlphaBand{1.0, 2.0, 30});
    prior.set_band(r, 1, AlphaBand{3.0, 4.0, 30});
  }
  AlphaBand mid = prior.lookup(0, std::sqrt(10.0 * 100.0));  // log midpoint
  CHECK(mid.q_lo == doctest::Approx(2.0));
  CHECK(mid.q_hi == doctest::Approx(3.0));
  CHECK(prior.lookup(0, 5.0).q_lo == doctest::Approx(1.0));     // below grid
  CHECK(prior.lookup(0, 1000.0).q_hi == doctest::Approx(4.0));  // above grid
}

TEST_CASE("alpha prior: carry-forward beyond the horizon") {
  AlphaPrior prior({10, 100}, 2);
  prior.set_band(0, 0, AlphaBand{1.0, 2.0, 20});
  prior.set_band(0, 1, AlphaBand{1.0, 2.0, 20});
  prior.set_band(1, 0, AlphaBand{5.0, 6.0, 20});
  prior.set_band(1, 1, AlphaBand{5.0, 6.0, 20});
  CHECK(prior.lookup(10, 50.0).q_lo == doctest::Approx(5.0));
}

TEST_CASE("alpha prior: degenerate band widens at lookup") {
  AlphaPrior prior({10, 100}, 1);
  prior.set_band(0, 0, AlphaBand{0.7, 0.7, 25});
  prior.set_band(0, 1, AlphaBand{0.7, 0.7, 25});
  AlphaBand band = prior.lookup(0, 10.0);
  CHECK(band.q_hi > band.q_lo);
  CHECK(band.q_hi - band.q_lo >= 1e-6 * 0.7);
  CHECK(band.q_lo < 0.7);
  CHECK(band.q_hi > 0.7);
}

TEST_CASE("alpha prior: save/load round-trip") {
  AlphaPrior prior({16, 64, 256}, 4);
  Rng rng(5);
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 3; ++j) {
      double lo = rng.uniform(0.1, 0.5);
      prior.set_band(r, j, AlphaBand{lo, lo + rng.uniform(0.01, 0.2), 20 + r});
    }
  auto path = (std::filesystem::temp_directory_path() / "feddua_prior_test.txt").string();
  prior.save(path);
  AlphaPrior back = AlphaPrior::load(path);
  CHECK(back.horizon() == 4);
  CHECK(back.volumes() == std::vector<int>{16, 64, 256});
  for (int r = 0; r < 4; ++r)
    for (int j = 0; j < 3; ++j) {
      CHECK(back.cell(r, j).q_lo == prior.cell(r, j).q_lo);
      CHECK(back.cell(r, j).q_hi == prior.cell(r, j).q_hi);
      CHECK(back.cell(r, j).n_samples == prior.cell(r, j).n_samples);
    }
  std::filesystem::remove(path);
}

TEST_CASE("verify: self-consistent honest update is accepted") {
  // alpha chosen via alpha_direct so the estimate equals the claim exactly.
  EpochObservation o = obs_for(2.0, 0.5, 0.1);
  long v = 40;
  double alpha = *alpha_direct(o, static_cast<double>(v), 1);
  auto up = fake_update(1, v, {alpha, alpha}, {o, o}, ParamVector(3), ParamVector(2));
  AlphaPrior prior = flat_prior(alpha * 0.5, alpha * 1.5);
  Verdict verdict = verify(up, prior, 0, VerifyConfig{0.5, 1});
  CHECK(verdict.status == VerdictStatus::Accept);
  CHECK(verdict.reason == FlagReason::None);
  REQUIRE(verdict.estimated_volume.has_value());
  CHECK(*verdict.estimated_volume == v);
}

TEST_CASE("verify: alpha outside the claimed-volume band flags AlphaOutOfBand") {
  EpochObservation o = obs_for(2.0, 0.5, 0.1);
  double alpha = *alpha_direct(o, 40.0, 1);
  auto up = fake_update(1, 40, {alpha}, {o}, ParamVector(3), ParamVector(2));
  AlphaPrior prior = flat_prior(alpha * 2.0, alpha * 3.0);  // band excludes alpha
  Verdict verdict = verify(up, prior, 0, VerifyConfig{0.5, 1});
  CHECK(verdict.status == VerdictStatus::Flag);
  CHECK(verdict.reason == FlagReason::AlphaOutOfBand);
  REQUIRE(verdict.estimated_volume.has_value());
  CHECK(*verdict.estimated_volume == 40);
}

TEST_CASE("verify: 3x claim flags VolumeInconsistent with a usable estimate") {
  EpochObservation o = obs_for(2.0, 0.5, 0.1);
  double alpha = *alpha_direct(o, 40.0, 1);  // truth is 40
  auto up = fake_update(1, 120, {alpha, alpha}, {o, o}, ParamVector(3), ParamVector(2));
  AlphaPrior prior = flat_prior(alpha * 0.5, alpha * 1.5);  // band passes
  Verdict verdict = verify(up, prior, 0, VerifyConfig{0.5, 1});
  CHECK(verdict.status == VerdictStatus::Flag);
  CHECK(verdict.reason == FlagReason::VolumeInconsistent);
  CHECK(*verdict.estimated_volume == 40);  // within 50% of truth by construction
}

TEST_CASE("verify: all epochs not estimable flags NotEstimable without estimate") {
  EpochObservation o = obs_for(0.0, 0.0, 0.1);
  auto up = fake_update(1, 40, {0.7, 0.7}, {o, o}, ParamVector(3), ParamVector(2));
  AlphaPrior prior = flat_prior(0.1, 2.0);
  Verdict verdict = verify(up, prior, 0, VerifyConfig{0.5, 1});
  CHECK(verdict.status == VerdictStatus::Flag);
  CHECK(verdict.reason == FlagReason::NotEstimable);
  CHECK_FALSE(verdict.estimated_volume.has_value());
}

TEST_CASE("verify: deterministic") {
  EpochObservation o = obs_for(1.3, 0.4, 0.2);
  auto up = fake_update(2, 33, {0.8, 0.9}, {o, o}, ParamVector(3), ParamVector(2));
  AlphaPrior prior = flat_prior(0.1, 2.0);
  Verdict a = verify(up, prior, 1, VerifyConfig{0.5, 4});
  Verdict b = verify(up, prior, 1, VerifyConfig{0.5, 4});
  CHECK(a.status == b.status);
  CHECK(a.reason == b.reason);
  CHECK(a.estimated_volume == b.estimated_volume);
  CHECK(a.alpha_median == b.alpha_median);
}

TEST_CASE("apply_trust: spec examples") {
  TrustConfig cfg{3, 2};
  Verdict accept;
  Verdict flag;
  flag.status = VerdictStatus::Flag;
  flag.reason = FlagReason::VolumeInconsistent;
  flag.estimated_volume = 10;

  SUBCASE("honest + accept stays honest") {
    TrustLedger ledger;
    ledger.apply(1, 0, accept, cfg);
    CHECK(ledger.status(1) == TrustStatus::Honest);
  }
  SUBCASE("three consecutive flags exclude") {
    TrustLedger ledger;
    ledger.apply(1, 0, flag, cfg);
    CHECK(ledger.status(1) == TrustStatus::Warned);
    ledger.apply(1, 1, flag, cfg);
    CHECK(ledger.status(1) == TrustStatus::Warned);
    CHECK(ledger.warn_count(1) == 2);
    ledger.apply(1, 2, flag, cfg);
    CHECK(ledger.status(1) == TrustStatus::Excluded);
  }
  SUBCASE("two consecutive accepts reset a warned client") {
    TrustLedger ledger;
    ledger.apply(1, 0, flag, cfg);
    ledger.apply(1, 1, accept, cfg);
    CHECK(ledger.status(1) == TrustStatus::Warned);
    ledger.apply(1, 2, accept, cfg);
    CHECK(ledger.status(1) == TrustStatus::Honest);
    CHECK(ledger.warn_count(1) == 0);
  }
}

TEST_CASE("apply_trust: exclusion is absorbing over random verdict strings") {
  TrustConfig cfg{3, 2};
  Rng rng(71);
  for (int sweep = 0; sweep < 200; ++sweep) {
    TrustLedger ledger;
    bool excluded_seen = false;
    for (int step = 0; step < 40; ++step) {
      Verdict v;
      if (rng.uniform01() < 0.5) {
        v.status = VerdictStatus::Flag;
        v.reason = FlagReason::VolumeInconsistent;
        v.estimated_volume = 5;
      }
      if (ledger.excluded(9)) {
        excluded_seen = true;
        CHECK_THROWS_AS(ledger.apply(9, step, v, cfg), contract_error);
        CHECK(ledger.status(9) == TrustStatus::Excluded);
      } else {
        ledger.apply(9, step, v, cfg);
      }
    }
    (void)excluded_seen;
  }
}

TEST_CASE("aggregate: equal volumes average the deltas") {
  ParamVector global(1), phi(1);
  auto u1 = fake_update(1, 1, {1.0}, {obs_for(1, 1, 0.1)}, ParamVector(1, 1.0), ParamVector(1));
  auto u2 = fake_update(2, 1, {1.0}, {obs_for(1, 1, 0.1)}, ParamVector(1, 3.0), ParamVector(1));
  std::vector<ClientUpdate> ups = {u1, u2};
  std::vector<Verdict> verdicts(2);
  auto out = aggregate(ups, verdicts, global, phi);
  REQUIRE(out.has_value());
  CHECK(out->theta[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(out->weights[0] + out->weights[1] == 1.0);
}

TEST_CASE("aggregate: volumes 1 and 3 weight 0.25/0.75") {
  ParamVector global(1), phi(1);
  auto u1 = fake_update(1, 1, {1.0}, {obs_for(1, 1, 0.1)}, ParamVector(1, 1.0), ParamVector(1));
  auto u2 = fake_update(2, 3, {1.0}, {obs_for(1, 1, 0.1)}, ParamVector(1, 3.0), ParamVector(1));
  std::vector<ClientUpdate> ups = {u1, u2};
  std::vector<Verdict> verdicts(2);
  auto out = aggregate(ups, verdicts, global, phi);
  REQUIRE(out.has_value());
  CHECK(out->theta[0] == doctest::Approx(0.25 * 1.0 + 0.75 * 3.0).epsilon(1e-15));
}

TEST_CASE("aggregate: flagged update uses the estimated volume") {
  ParamVector global(1), phi(1);
  auto honest = fake_update(1, 10, {1.0}, {obs_for(1, 1, 0.1)}, ParamVector(1, 0.0),
                            ParamVector(1));
  auto attacker = fake_update(2, 30, {1.0}, {obs_for(1, 1, 0.1)}, ParamVector(1, 4.0),
                              ParamVector(1));
  std::vector<ClientUpdate> ups = {honest, attacker};
  std::vector<Verdict> verdicts(2);
  verdicts[1].status = VerdictStatus::Flag;
  verdicts[1].reason = FlagReason::VolumeInconsistent;
  verdicts[1].estimated_volume = 10;  // re-weighted to the estimate, not the claim
  auto out = aggregate(ups, verdicts, global, phi);
  REQUIRE(out.has_value());
  CHECK(out->theta[0] == doctest::Approx(0.5 * 4.0).epsilon(1e-15));
}

TEST_CASE("aggregate: NotEstimable clients are dropped; all-dropped skips") {
  ParamVector global(1), phi(1);
  auto u1 = fake_update(1, 10, {1.0}, {obs_for(0, 0, 0.1)}, ParamVector(1, 5.0), ParamVector(1));
  std::vector<ClientUpdate> ups = {u1};
  std::vector<Verdict> verdicts(1);
  verdicts[0].status = VerdictStatus::Flag;
  verdicts[0].reason = FlagReason::NotEstimable;
  auto out = aggregate(ups, verdicts, global, phi);
  CHECK_FALSE(out.has_value());
}

TEST_CASE("aggregate: equal deltas are conserved regardless of weights") {
  ParamVector global(3), phi(2);
  ParamVector d(3);
  d[0] = 0.5;
  d[1] = -1.5;
  d[2] = 2.0;
  std::vector<ClientUpdate> ups;
  Rng rng(83);
  for (int i = 0; i < 7; ++i)
    ups.push_back(fake_update(i, 1 + static_cast<long>(rng.next_below(500)), {1.0},
                              {obs_for(1, 1, 0.1)}, d, ParamVector(2)));
  std::vector<Verdict> verdicts(7);
  auto out = aggregate(ups, verdicts, global, phi);
  REQUIRE(out.has_value());
  for (int j = 0; j < 3; ++j) CHECK(out->theta[j] == doctest::Approx(d[j]).epsilon(1e-12));
  double total = 0.0;
  for (double w : out->weights) total += w;
  CHECK(total == 1.0);
}

TEST_CASE("weight_perturbation: honest identity, worked example, zero sum") {
  std::vector<double> truth = {1.0, 1.0};
  std::vector<double> same = {1.0, 1.0};
  for (double dw : weight_perturbation(same, truth)) CHECK(dw == 0.0);

  std::vector<double> claimed = {3.0, 1.0};
  auto dw = weight_perturbation(claimed, truth);
  CHECK(dw[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(dw[1] == doctest::Approx(-0.25).epsilon(1e-15));

  Rng rng(91);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> c(5), t(5);
    for (int i = 0; i < 5; ++i) {
      c[i] = rng.uniform(1.0, 100.0);
      t[i] = rng.uniform(1.0, 100.0);
    }
    double total = 0.0;
    for (double x : weight_perturbation(c, t)) total += x;
    CHECK(std::abs(total) < 1e-12);
  }
}

TEST_CASE("calibrate_prior: deterministic and structurally sound") {
  ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.num_clients = 10;
  cfg.clients_per_round = 4;
  cfg.rounds = 3;
  cfg.epochs_per_round = 2;
  cfg.batch_size = 8;
  cfg.eta = 0.2;
  cfg.calib_replicas = 10;
  cfg.calib_trajectories = 2;  // 20 replicas per cell pooled
  cfg.calib_volumes = {16, 48};
  cfg.blob_classes = 3;
  cfg.blob_dim = 4;
  cfg.blob_samples_per_class = 80;
  cfg.model = "logreg";
  cfg.branch_hidden = 2;
  cfg.resolve_and_validate();

  Rng data_rng(6);
  Dataset shadow = make_blobs(3, 4, 60, 0.8, data_rng);
  ModelSpec spec = cfg.model_spec(4, 3);
  Rng trng(7), prng(8);
  ParamVector theta = init_params(spec, trng);
  QuantityBranch branch = testutil::make_branch(cfg.branch_hidden, cfg.branch_lr, prng);

  AlphaPrior a =
      calibrate_prior(spec, StrategyKind::FedAvg, shadow, cfg, theta, branch.phi(), 1600);
  AlphaPrior b =
      calibrate_prior(spec, StrategyKind::FedAvg, shadow, cfg, theta, branch.phi(), 1600);
  CHECK(a.horizon() == 3);
  for (int r = 0; r < 3; ++r)
    for (int j = 0; j < 2; ++j) {
      CHECK(a.cell(r, j).q_lo == b.cell(r, j).q_lo);
      CHECK(a.cell(r, j).q_hi == b.cell(r, j).q_hi);
      CHECK(a.cell(r, j).n_samples == 40);  // replicas * trajectories * epochs
      CHECK(a.cell(r, j).q_lo <= a.cell(r, j).q_hi);
      CHECK(a.cell(r, j).q_lo > 0.0);
    }
}

TEST_CASE("calibrate_prior: volume larger than shadow pool is a configuration error") {
  ExperimentConfig cfg;
  cfg.calib_volumes = {1000};
  cfg.calib_replicas = 10;
  cfg.calib_trajectories = 2;
  cfg.epochs_per_round = 2;
  Rng data_rng(9);
  Dataset shadow = make_blobs(2, 3, 20, 0.5, data_rng);  // 40 rows
  ModelSpec spec{ModelKind::LogisticRegression, 3, 0, 2};
  Rng trng(1), prng(2);
  ParamVector theta = init_params(spec, trng);
  QuantityBranch branch = testutil::make_branch(2, 0.01, prng);
  CHECK_THROWS_AS(
      calibrate_prior(spec, StrategyKind::FedAvg, shadow, cfg, theta, branch.phi(), 400),
      config_error);
}
