#include "feddua/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "feddua/errors.hpp"

namespace feddua {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

long to_long(const std::string& key, const std::string& v) {
  long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw config_error("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw config_error("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_long(key, trim(item))));
  return out;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ModelSpec ExperimentConfig::model_spec(int input_dim, int num_classes) const {
  ModelSpec spec;
  spec.input_dim = input_dim;
  spec.num_classes = num_classes;
  if (model == "logreg") {
    spec.kind = ModelKind::LogisticRegression;
  } else if (model == "mlp1") {
    spec.kind = ModelKind::Mlp1;
    spec.hidden_dim = hidden_dim;
  } else {
    throw config_error("config: model must be 'logreg' or 'mlp1', got '" + model + "'");
  }
  spec.validate();
  return spec;
}

void ExperimentConfig::resolve_and_validate() {
  if (min_samples == 0) min_samples = 2 * batch_size;

  if (num_clients < 1) throw config_error("config: num_clients must be >= 1");
  if (clients_per_round < 1 || clients_per_round > num_clients)
    throw config_error("config: clients_per_round must be in [1, num_clients]");
  if (rounds < 0) throw config_error("config: rounds must be >= 0");
  if (epochs_per_round < 1) throw config_error("config: epochs_per_round must be >= 1");
  if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
  if (!(eta > 0.0)) throw config_error("config: eta must be positive");
  if (!(dirichlet_beta > 0.0)) throw config_error("config: dirichlet_beta must be positive");
  if (min_samples < 1) throw config_error("config: min_samples must be >= 1");
  if (fedprox_mu < 0.0) throw config_error("config: fedprox_mu must be >= 0");
  if (ditto_lambda < 0.0) throw config_error("config: ditto_lambda must be >= 0");
  for (int id : attacker_ids)
    if (id < 0 || id >= num_clients)
      throw config_error("config: attacker id " + std::to_string(id) + " out of range");
  if (!(misreport_factor > 0.0)) throw config_error("config: misreport_factor must be positive");
  if (!(tau > 0.0)) throw config_error("config: tau must be positive");
  if (!(quantile_lo >= 0.0 && quantile_lo < quantile_hi && quantile_hi <= 1.0))
    throw config_error("config: need 0 <= quantile_lo < quantile_hi <= 1");
  if (warn_exclude < 1) throw config_error("config: warn_exclude must be >= 1");
  if (warn_clear < 1) throw config_error("config: warn_clear must be >= 1");
  if (calib_replicas < 1) throw config_error("config: calib_replicas must be >= 1");
  if (calib_trajectories < 1) throw config_error("config: calib_trajectories must be >= 1");
  if (calib_round_window < 0) throw config_error("config: calib_round_window must be >= 0");
  if (!(shadow_fraction > 0.0 && shadow_fraction < 1.0))
    throw config_error("config: shadow_fraction must be in (0, 1)");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw config_error("config: test_fraction must be in (0, 1)");
  if (dataset != "blobs" && dataset != "csv")
    throw config_error("config: dataset must be 'blobs' or 'csv'");
  if (dataset == "csv" && csv_path.empty())
    throw config_error("config: dataset=csv requires csv_path");
  if (dataset == "blobs") {
    if (blob_classes < 2) throw config_error("config: blob_classes must be >= 2");
    if (blob_dim < 1) throw config_error("config: blob_dim must be >= 1");
    if (blob_samples_per_class < 1)
      throw config_error("config: blob_samples_per_class must be >= 1");
    if (!(blob_spread >= 0.0)) throw config_error("config: blob_spread must be >= 0");
  }
  if (model != "logreg" && model != "mlp1")
    throw config_error("config: model must be 'logreg' or 'mlp1'");
  if (model == "mlp1" && hidden_dim < 1) throw config_error("config: hidden_dim must be >= 1");
  if (branch_hidden < 1) throw config_error("config: branch_hidden must be >= 1");
  if (!(branch_lr > 0.0)) throw config_error("config: branch_lr must be positive");
  if (branch_steps < 0) throw config_error("config: branch_steps must be >= 0");
  if (threads < 1) throw config_error("config: threads must be >= 1");

  if (calib_volumes.empty()) {
    // Geometric grid around the expected shard size, wide enough to cover a
    // 3x misreport of the largest typical shard.
    double total = dataset == "blobs"
                       ? static_cast<double>(blob_classes) * blob_samples_per_class
                       : 0.0;
    double pool = total * (1.0 - test_fraction) * (1.0 - shadow_fraction);
    double mean_shard = pool > 0.0 ? pool / num_clients : 8.0 * min_samples;
    double v = std::max<double>(min_samples, mean_shard / 4.0);
    while (v <= mean_shard * 12.0) {
      calib_volumes.push_back(static_cast<int>(std::lround(v)));
      v *= 2.0;
    }
  }
  std::sort(calib_volumes.begin(), calib_volumes.end());
  for (int v : calib_volumes)
    if (v < 1) throw config_error("config: calibration volumes must be positive");
  if (feddua_enabled && calib_volumes.size() < 2)
    throw config_error("config: need at least two calibration volumes");
}

void ExperimentConfig::echo(std::ostream& out) const {
  out << "attacker_ids = " << join_ints(attacker_ids) << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "blob_classes = " << blob_classes << "\n";
  out << "blob_dim = " << blob_dim << "\n";
  out << "blob_samples_per_class = " << blob_samples_per_class << "\n";
  out << "blob_spread = " << fmt_double(blob_spread) << "\n";
  out << "branch_hidden = " << branch_hidden << "\n";
  out << "branch_lr = " << fmt_double(branch_lr) << "\n";
  out << "branch_steps = " << branch_steps << "\n";
  out << "calib_replicas = " << calib_replicas << "\n";
  out << "calib_round_window = " << calib_round_window << "\n";
  out << "calib_trajectories = " << calib_trajectories << "\n";
  out << "calib_volumes = " << join_ints(calib_volumes) << "\n";
  out << "clients_per_round = " << clients_per_round << "\n";
  out << "csv_path = " << csv_path << "\n";
  out << "dataset = " << dataset << "\n";
  out << "dirichlet_beta = " << fmt_double(dirichlet_beta) << "\n";
  out << "ditto_lambda = " << fmt_double(ditto_lambda) << "\n";
  out << "epochs_per_round = " << epochs_per_round << "\n";
  out << "eta = " << fmt_double(eta) << "\n";
  out << "feddua_enabled = " << (feddua_enabled ? "true" : "false") << "\n";
  out << "fedprox_mu = " << fmt_double(fedprox_mu) << "\n";
  out << "hidden_dim = " << hidden_dim << "\n";
  out << "min_samples = " << min_samples << "\n";
  out << "misreport_factor = " << fmt_double(misreport_factor) << "\n";
  out << "model = " << model << "\n";
  out << "num_clients = " << num_clients << "\n";
  out << "out_dir = " << out_dir << "\n";
  out << "prior_file = " << prior_file << "\n";
  out << "quantile_hi = " << fmt_double(quantile_hi) << "\n";
  out << "quantile_lo = " << fmt_double(quantile_lo) << "\n";
  out << "rounds = " << rounds << "\n";
  out << "seed = " << seed << "\n";
  out << "shadow_fraction = " << fmt_double(shadow_fraction) << "\n";
  out << "strategy = " << strategy_name(strategy) << "\n";
  out << "tau = " << fmt_double(tau) << "\n";
  out << "test_fraction = " << fmt_double(test_fraction) << "\n";
  out << "threads = " << threads << "\n";
  out << "warn_clear = " << warn_clear << "\n";
  out << "warn_exclude = " << warn_exclude << "\n";
}

void apply_override(ExperimentConfig& cfg, const std::string& key_eq_value) {
  std::size_t eq = key_eq_value.find('=');
  if (eq == std::string::npos)
    throw config_error("config: override '" + key_eq_value + "' is not key=value");
  const std::string key = trim(key_eq_value.substr(0, eq));
  const std::string value = trim(key_eq_value.substr(eq + 1));

  if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_long(key, value));
  else if (key == "num_clients") cfg.num_clients = static_cast<int>(to_long(key, value));
  else if (key == "clients_per_round") cfg.clients_per_round = static_cast<int>(to_long(key, value));
  else if (key == "rounds") cfg.rounds = static_cast<int>(to_long(key, value));
  else if (key == "epochs_per_round") cfg.epochs_per_round = static_cast<int>(to_long(key, value));
  else if (key == "batch_size") cfg.batch_size = static_cast<int>(to_long(key, value));
  else if (key == "eta") cfg.eta = to_double(key, value);
  else if (key == "dirichlet_beta") cfg.dirichlet_beta = to_double(key, value);
  else if (key == "min_samples") cfg.min_samples = static_cast<int>(to_long(key, value));
  else if (key == "strategy") cfg.strategy = strategy_from_string(value);
  else if (key == "fedprox_mu") cfg.fedprox_mu = to_double(key, value);
  else if (key == "ditto_lambda") cfg.ditto_lambda = to_double(key, value);
  else if (key == "feddua_enabled") cfg.feddua_enabled = to_bool(key, value);
  else if (key == "attacker_ids") cfg.attacker_ids = to_int_list(key, value);
  else if (key == "misreport_factor") cfg.misreport_factor = to_double(key, value);
  else if (key == "tau") cfg.tau = to_double(key, value);
  else if (key == "quantile_lo") cfg.quantile_lo = to_double(key, value);
  else if (key == "quantile_hi") cfg.quantile_hi = to_double(key, value);
  else if (key == "warn_exclude") cfg.warn_exclude = static_cast<int>(to_long(key, value));
  else if (key == "warn_clear") cfg.warn_clear = static_cast<int>(to_long(key, value));
  else if (key == "calib_volumes") cfg.calib_volumes = to_int_list(key, value);
  else if (key == "calib_replicas") cfg.calib_replicas = static_cast<int>(to_long(key, value));
  else if (key == "calib_trajectories")
    cfg.calib_trajectories = static_cast<int>(to_long(key, value));
  else if (key == "calib_round_window")
    cfg.calib_round_window = static_cast<int>(to_long(key, value));
  else if (key == "shadow_fraction") cfg.shadow_fraction = to_double(key, value);
  else if (key == "prior_file") cfg.prior_file = value;
  else if (key == "dataset") cfg.dataset = value;
  else if (key == "csv_path") cfg.csv_path = value;
  else if (key == "blob_classes") cfg.blob_classes = static_cast<int>(to_long(key, value));
  else if (key == "blob_dim") cfg.blob_dim = static_cast<int>(to_long(key, value));
  else if (key == "blob_samples_per_class")
    cfg.blob_samples_per_class = static_cast<int>(to_long(key, value));
  else if (key == "blob_spread") cfg.blob_spread = to_double(key, value);
  else if (key == "test_fraction") cfg.test_fraction = to_double(key, value);
  else if (key == "model") cfg.model = value;
  else if (key == "hidden_dim") cfg.hidden_dim = static_cast<int>(to_long(key, value));
  else if (key == "branch_hidden") cfg.branch_hidden = static_cast<int>(to_long(key, value));
  else if (key == "branch_lr") cfg.branch_lr = to_double(key, value);
  else if (key == "branch_steps") cfg.branch_steps = static_cast<int>(to_long(key, value));
  else if (key == "threads") cfg.threads = static_cast<int>(to_long(key, value));
  else if (key == "out_dir") cfg.out_dir = value;
  else throw config_error("config: unknown key '" + key + "'");
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open '" + path + "'");
  ExperimentConfig cfg;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string body = line;
    std::size_t hash = body.find('#');
    if (hash != std::string::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw config_error("config: line " + std::to_string(line_no) + " is not key = value");
    try {
      apply_override(cfg, body);
    } catch (const config_error& e) {
      throw config_error(std::string(e.what()) + " at " + path + ":" + std::to_string(line_no));
    }
  }
  return cfg;
}

}  // namespace feddua
