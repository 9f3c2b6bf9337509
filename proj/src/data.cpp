#include "feddua/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "feddua/errors.hpp"

namespace feddua {

int Dataset::num_classes() const {
  int m = -1;
  for (int y : labels) m = std::max(m, y);
  return m + 1;
}

void Dataset::validate() const {
  if (size() < 1) throw contract_error("Dataset: empty");
  if (dim <= 0) throw contract_error("Dataset: non-positive dim");
  if (features.size() != static_cast<std::size_t>(size()) * dim)
    throw contract_error("Dataset: feature matrix shape mismatch");
  for (double x : features)
    if (!std::isfinite(x)) throw contract_error("Dataset: non-finite feature");
  for (int y : labels)
    if (y < 0) throw contract_error("Dataset: negative label");
}

Dataset make_blobs(int num_classes, int input_dim, int samples_per_class, double spread,
                   Rng& rng) {
  if (num_classes < 1 || input_dim < 1 || samples_per_class < 1)
    throw contract_error("make_blobs: counts must be positive");
  if (spread < 0.0) throw contract_error("make_blobs: spread must be >= 0");

  // Class means: gaussian direction normalized onto the unit sphere.
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(input_dim));
  for (auto& mu : means) {
    double norm2 = 0.0;
    for (auto& m : mu) {
      m = rng.normal();
      norm2 += m * m;
    }
    double norm = std::sqrt(norm2);
    if (norm < 1e-12) {
      mu.assign(input_dim, 0.0);
      mu[0] = 1.0;
    } else {
      for (auto& m : mu) m /= norm;
    }
  }

  Dataset ds;
  ds.dim = input_dim;
  ds.name = "blobs";
  ds.features.reserve(static_cast<std::size_t>(num_classes) * samples_per_class * input_dim);
  ds.labels.reserve(static_cast<std::size_t>(num_classes) * samples_per_class);
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < samples_per_class; ++s) {
      for (int j = 0; j < input_dim; ++j)
        ds.features.push_back(means[c][j] + spread * rng.normal());
      ds.labels.push_back(c);
    }
  }
  return ds;
}

Partition dirichlet_partition(const Dataset& ds, int num_clients, double beta, int min_samples,
                              Rng& rng) {
  if (num_clients < 1) throw contract_error("dirichlet_partition: num_clients must be >= 1");
  if (!(beta > 0.0)) throw contract_error("dirichlet_partition: beta must be positive");
  if (min_samples < 1) throw contract_error("dirichlet_partition: min_samples must be >= 1");
  if (ds.size() < min_samples * num_clients)
    throw config_error("dirichlet_partition: dataset too small for min_samples * num_clients (" +
                       std::to_string(ds.size()) + " < " +
                       std::to_string(min_samples * num_clients) + ")");

  const int num_classes = ds.num_classes();
  std::vector<std::vector<int>> by_class(num_classes);
  for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  Partition part;
  part.assignments.assign(num_clients, {});
  part.beta = beta;

  for (int c = 0; c < num_classes; ++c) {
    auto& pool = by_class[c];
    if (pool.empty()) continue;
    rng.shuffle(pool);
    std::vector<double> props = rng.dirichlet(beta, num_clients);
    const int n = static_cast<int>(pool.size());
    // Cut the shuffled pool at cumulative proportions.
    double cum = 0.0;
    int start = 0;
    for (int k = 0; k < num_clients; ++k) {
      cum += props[k];
      int stop = (k == num_clients - 1) ? n : std::min(n, static_cast<int>(cum * n));
      for (int i = start; i < stop; ++i) part.assignments[k].push_back(pool[i]);
      start = std::max(start, stop);
    }
  }

  // Top up clients below the floor by reassigning from the current largest.
  for (;;) {
    int smallest = 0, largest = 0;
    for (int k = 1; k < num_clients; ++k) {
      if (part.assignments[k].size() < part.assignments[smallest].size()) smallest = k;
      if (part.assignments[k].size() > part.assignments[largest].size()) largest = k;
    }
    if (static_cast<int>(part.assignments[smallest].size()) >= min_samples) break;
    if (largest == smallest || part.assignments[largest].empty())
      throw config_error("dirichlet_partition: cannot satisfy min_samples");
    part.assignments[smallest].push_back(part.assignments[largest].back());
    part.assignments[largest].pop_back();
  }

  for (auto& a : part.assignments) std::sort(a.begin(), a.end());
  return part;
}

namespace {

double parse_double_field(const std::string& field, long line_no) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw parse_error("load_csv: non-numeric field '" + field + "'", line_no);
  return value;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("load_csv: cannot open", path);

  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) throw parse_error("load_csv: empty file", 1);
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();

  auto header = split_commas(line);
  if (header.size() < 2 || header.back() != "label")
    throw parse_error("load_csv: header must be f0,...,fK,label", 1);
  const int dim = static_cast<int>(header.size()) - 1;
  for (int j = 0; j < dim; ++j)
    if (header[j] != "f" + std::to_string(j))
      throw parse_error("load_csv: unexpected header column '" + header[j] + "'", 1);

  Dataset ds;
  ds.dim = dim;
  ds.name = path;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_commas(line);
    if (static_cast<int>(fields.size()) != dim + 1)
      throw parse_error("load_csv: expected " + std::to_string(dim + 1) + " fields, got " +
                            std::to_string(fields.size()),
                        line_no);
    for (int j = 0; j < dim; ++j) ds.features.push_back(parse_double_field(fields[j], line_no));
    double label = parse_double_field(fields[dim], line_no);
    long rounded = std::lround(label);
    if (std::abs(label - rounded) > 1e-9 || rounded < 0)
      throw parse_error("load_csv: label must be a non-negative integer", line_no);
    ds.labels.push_back(static_cast<int>(rounded));
  }
  if (ds.labels.empty()) throw parse_error("load_csv: no data rows", line_no);
  ds.validate();
  return ds;
}

void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("write_csv: cannot open", path);
  for (int j = 0; j < ds.dim; ++j) out << "f" << j << ",";
  out << "label\n";
  char buf[40];
  for (int i = 0; i < ds.size(); ++i) {
    const double* x = ds.row(i);
    for (int j = 0; j < ds.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", x[j]);
      out << buf << ",";
    }
    out << ds.labels[i] << "\n";
  }
  if (!out) throw io_error("write_csv: write failed", path);
}

Shard gather(const Dataset& ds, const std::vector<int>& rows) {
  Shard sh;
  sh.dim = ds.dim;
  sh.features.reserve(rows.size() * static_cast<std::size_t>(ds.dim));
  sh.labels.reserve(rows.size());
  for (int r : rows) {
    const double* x = ds.row(r);
    sh.features.insert(sh.features.end(), x, x + ds.dim);
    sh.labels.push_back(ds.labels[r]);
  }
  return sh;
}

double accuracy(const ModelSpec& spec, const ParamVector& theta, const Dataset& ds,
                const std::vector<int>& rows) {
  if (rows.empty()) throw contract_error("accuracy: empty row set");
  int correct = 0;
  for (int r : rows)
    if (predict_class(spec, theta, ds.row(r)) == ds.labels[r]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace feddua
