#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "feddua/data.hpp"
#include "feddua/errors.hpp"
#include "test_util.hpp"

using namespace feddua;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("make_blobs: zero spread collapses each class onto its mean") {
  Rng rng(1);
  Dataset ds = make_blobs(3, 4, 10, 0.0, rng);
  for (int c = 0; c < 3; ++c) {
    const double* first = ds.row(c * 10);
    for (int s = 1; s < 10; ++s) {
      const double* x = ds.row(c * 10 + s);
      for (int j = 0; j < 4; ++j) CHECK(x[j] == first[j]);
    }
  }
}

TEST_CASE("make_blobs: exact per-class counts") {
  Rng rng(2);
  Dataset ds = make_blobs(4, 6, 100, 1.0, rng);
  CHECK(ds.size() == 400);
  std::vector<int> hist(4, 0);
  for (int y : ds.labels) hist[y]++;
  for (int c = 0; c < 4; ++c) CHECK(hist[c] == 100);
}

TEST_CASE("make_blobs: tighter spread trains to higher central accuracy") {
  // Train-and-compare oracle over 5 seeds.
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto run = [&](double spread) {
      Rng rng(100 + seed);
      Dataset ds = make_blobs(4, 8, 80, spread, rng);
      ModelSpec spec{ModelKind::LogisticRegression, 8, 0, 4};
      Rng init_rng(200 + seed);
      ParamVector theta = init_params(spec, init_rng);
      std::vector<int> rows(ds.size());
      for (int i = 0; i < ds.size(); ++i) rows[i] = i;
      Shard sh = gather(ds, rows);
      BatchView all{sh.features.data(), sh.labels.data(), sh.size(), sh.dim};
      std::vector<BatchView> batches = {all};
      for (int e = 0; e < 60; ++e) theta = sgd_epoch(spec, theta, 0.5, batches).theta;
      return accuracy(spec, theta, ds, rows);
    };
    if (run(0.1) > run(5.0)) ++wins;
  }
  CHECK(wins == 5);
}

TEST_CASE("dirichlet_partition: conservation and disjointness") {
  Rng data_rng(3);
  Dataset ds = make_blobs(5, 4, 60, 1.0, data_rng);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    double beta = 0.1 + 0.7 * seed;
    Partition p = dirichlet_partition(ds, 7, beta, 2, rng);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& a : p.assignments) {
      total += a.size();
      for (int idx : a) {
        CHECK(seen.insert(idx).second);  // disjoint
        CHECK(idx >= 0);
        CHECK(idx < ds.size());
      }
      CHECK(a.size() >= 2);
    }
    CHECK(total == static_cast<std::size_t>(ds.size()));  // conservation
  }
}

TEST_CASE("dirichlet_partition: deterministic under fixed seed") {
  Rng data_rng(4);
  Dataset ds = make_blobs(3, 4, 50, 1.0, data_rng);
  Rng r1(77), r2(77);
  Partition a = dirichlet_partition(ds, 6, 0.5, 2, r1);
  Partition b = dirichlet_partition(ds, 6, 0.5, 2, r2);
  REQUIRE(a.assignments.size() == b.assignments.size());
  for (std::size_t k = 0; k < a.assignments.size(); ++k)
    CHECK(a.assignments[k] == b.assignments[k]);
}

TEST_CASE("dirichlet_partition: smaller beta skews label shares harder") {
  // Skew oracle: mean over 20 seeds of the max per-client label fraction.
  Rng data_rng(5);
  Dataset ds = make_blobs(4, 4, 100, 1.0, data_rng);
  auto mean_max_fraction = [&](double beta) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(1000 + seed);
      Partition p = dirichlet_partition(ds, 5, beta, 2, rng);
      double run_max = 0.0;
      for (const auto& a : p.assignments) {
        std::vector<int> hist(4, 0);
        for (int idx : a) hist[ds.labels[idx]]++;
        for (int c = 0; c < 4; ++c)
          run_max = std::max(run_max, static_cast<double>(hist[c]) / a.size());
      }
      total += run_max;
    }
    return total / 20.0;
  };
  CHECK(mean_max_fraction(0.1) > mean_max_fraction(10.0));
}

TEST_CASE("dirichlet_partition: too-small dataset is a configuration error") {
  Rng data_rng(6);
  Dataset ds = make_blobs(2, 3, 5, 1.0, data_rng);  // 10 samples
  Rng rng(1);
  CHECK_THROWS_AS(dirichlet_partition(ds, 4, 0.5, 4, rng), config_error);
}

TEST_CASE("load_csv: well-formed file") {
  std::string path = temp_path("feddua_test_ok.csv");
  {
    std::ofstream out(path);
    out << "f0,f1,label\n";
    out << "0.5,-1.25,0\n";
    out << "1.5,2.25,1\n";
    out << "-0.125,3.5,1\n";
  }
  Dataset ds = load_csv(path);
  CHECK(ds.size() == 3);
  CHECK(ds.dim == 2);
  CHECK(ds.labels == std::vector<int>{0, 1, 1});
  CHECK(ds.row(1)[1] == 2.25);
  std::filesystem::remove(path);
}

TEST_CASE("load_csv: parse error names the offending line") {
  std::string path = temp_path("feddua_test_bad.csv");
  {
    std::ofstream out(path);
    out << "f0,f1,label\n";
    for (int i = 0; i < 5; ++i) out << "1.0,2.0,0\n";
    out << "1.0,oops,1\n";  // line 7
  }
  try {
    load_csv(path);
    FAIL("expected parse_error");
  } catch (const parse_error& e) {
    CHECK(e.line == 7);
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST_CASE("load_csv: empty file is a parse error") {
  std::string path = temp_path("feddua_test_empty.csv");
  { std::ofstream out(path); }
  CHECK_THROWS_AS(load_csv(path), parse_error);
  std::filesystem::remove(path);
}

TEST_CASE("csv round-trip preserves numeric content") {
  Rng rng(9);
  Dataset ds = make_blobs(3, 5, 20, 0.7, rng);
  std::string path = temp_path("feddua_test_roundtrip.csv");
  write_csv(ds, path);
  Dataset back = load_csv(path);
  REQUIRE(back.size() == ds.size());
  REQUIRE(back.dim == ds.dim);
  for (int i = 0; i < ds.size(); ++i) {
    CHECK(back.labels[i] == ds.labels[i]);
    for (int j = 0; j < ds.dim; ++j)
      CHECK(std::abs(back.row(i)[j] - ds.row(i)[j]) <= 1e-12 * std::abs(ds.row(i)[j]));
  }
  std::filesystem::remove(path);
}
