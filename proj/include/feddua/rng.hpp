#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace feddua {

// Deterministic xoshiro256** generator seeded through splitmix64.
//
// The integer stream and uniform01() (pure bit arithmetic) are bit-exact
// across platforms. normal() and gamma() go through libm and are bit-exact
// per build, which is what the reproducibility tests compare.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01();

  double uniform(double lo, double hi);

  // Unbiased integer in [0, bound); bound must be > 0.
  std::uint64_t next_below(std::uint64_t bound);

  // Box-Muller; consumes exactly two uniforms per call.
  double normal();

  // Marsaglia-Tsang; shape > 0. Consumes a variable number of draws.
  double gamma(double shape);

  // k-dimensional symmetric Dirichlet(concentration).
  std::vector<double> dirichlet(double concentration, int k);

  // Fisher-Yates in-place shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::array<std::uint64_t, 4> state_;
};

// splitmix64 finalizer, the mixing core for stream derivation.
std::uint64_t splitmix64(std::uint64_t& state);

// Deterministic sub-stream derivation: hashes `path` into `seed` so that
// distinct paths give statistically independent streams.
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

// Fixed tags for sub-stream derivation. Client/round/replica ids are appended
// after the tag so distinct uses can never collide.
namespace stream {
constexpr std::uint64_t kDataset = 1;
constexpr std::uint64_t kSplit = 2;
constexpr std::uint64_t kShadow = 3;
constexpr std::uint64_t kPartition = 4;
constexpr std::uint64_t kInitTheta = 5;
constexpr std::uint64_t kInitPhi = 6;
constexpr std::uint64_t kEmbedding = 7;
constexpr std::uint64_t kSampling = 8;
constexpr std::uint64_t kClientRound = 9;
constexpr std::uint64_t kCalibShard = 10;
constexpr std::uint64_t kCalibAdvance = 11;
}  // namespace stream

}  // namespace feddua
