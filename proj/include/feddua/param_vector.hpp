#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "feddua/errors.hpp"

namespace feddua {

// Flat parameter vector; the unit of model exchange and aggregation.
// All arithmetic requires equal dims and every entry stays finite.
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values(dim, fill) {}

  std::size_t dim() const { return values.size(); }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
};

inline void require_same_dim(const ParamVector& a, const ParamVector& b, const char* what) {
  if (a.dim() != b.dim())
    throw contract_error(std::string(what) + ": dim mismatch (" + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()) + ")");
}

inline void check_finite(const ParamVector& v, const char* what) {
  for (double x : v.values)
    if (!std::isfinite(x)) throw contract_error(std::string(what) + ": non-finite entry");
}

inline bool all_finite(const ParamVector& v) {
  for (double x : v.values)
    if (!std::isfinite(x)) return false;
  return true;
}

inline double l2_norm(const ParamVector& v) {
  double s = 0.0;
  for (double x : v.values) s += x * x;
  return std::sqrt(s);
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

// dst += a * x
inline void axpy(ParamVector& dst, double a, const ParamVector& x) {
  require_same_dim(dst, x, "axpy");
  for (std::size_t i = 0; i < dst.dim(); ++i) dst[i] += a * x[i];
}

inline ParamVector subtract(const ParamVector& a, const ParamVector& b) {
  require_same_dim(a, b, "subtract");
  ParamVector out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline void scale(ParamVector& v, double a) {
  for (double& x : v.values) x *= a;
}

}  // namespace feddua
