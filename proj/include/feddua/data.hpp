#pragma once

#include <string>
#include <vector>

#include "feddua/model.hpp"
#include "feddua/rng.hpp"

namespace feddua {

// Immutable after construction. Features are row-major n x dim.
struct Dataset {
  std::vector<double> features;
  std::vector<int> labels;
  int dim = 0;
  std::string name;

  int size() const { return static_cast<int>(labels.size()); }
  const double* row(int i) const { return features.data() + static_cast<std::size_t>(i) * dim; }
  int num_classes() const;
  void validate() const;
};

// Per-client sample indices. Disjoint, and their union covers the source.
struct Partition {
  std::vector<std::vector<int>> assignments;
  double beta = 0.0;
  std::uint64_t seed = 0;
};

// Gaussian clusters, one per class, means on a seeded random sphere of
// radius 1. Exactly samples_per_class rows per class, in class-block order.
Dataset make_blobs(int num_classes, int input_dim, int samples_per_class, double spread,
                   Rng& rng);

// Label-skew Dirichlet split: for each class, proportions over clients drawn
// from Dirichlet(beta,...,beta). Clients below min_samples are topped up by
// reassigning from the largest client.
Partition dirichlet_partition(const Dataset& ds, int num_clients, double beta, int min_samples,
                              Rng& rng);

// Header `f0,...,fK,label`; UTF-8, comma-separated, `.` decimal, LF endings.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& ds, const std::string& path);

// Gathers the given rows into a dense matrix usable for batching.
struct Shard {
  std::vector<double> features;
  std::vector<int> labels;
  int dim = 0;
  int size() const { return static_cast<int>(labels.size()); }
};
Shard gather(const Dataset& ds, const std::vector<int>& rows);

double accuracy(const ModelSpec& spec, const ParamVector& theta, const Dataset& ds,
                const std::vector<int>& rows);

}  // namespace feddua
