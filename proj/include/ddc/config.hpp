#pragma once
// Declarative configuration: one JSON document with model / design /
// experiment sections, parsed into the library structs. Also the dataset CSV
// format (header a,x,x_next; 1-based integers) and the run manifest.
#include "ddc/bus.hpp"
#include "ddc/dgp.hpp"
#include "ddc/mc.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

namespace ddc {

using nlohmann::json;

inline constexpr const char* kVersion = "1.0.0";

inline VectorXd vector_from_json(const json& j) {
  VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

inline ModelSpec model_from_json(const json& j) {
  std::string family = j.value("family", "bus");
  if (family == "bus") {
    return bus_model(j.value("n_states", 20), j.value("beta", 0.9999),
                     j.value("alpha_bound", 10.0));
  }
  if (family == "table") {
    ModelSpec m;
    m.n_states = j.at("n_states").get<int>();
    m.n_actions = j.at("n_actions").get<int>();
    m.beta = j.at("beta").get<double>();
    m.utility.alpha_bound = j.value("alpha_bound", 10.0);
    for (const auto& fa : j.at("features")) {
      MatrixXd F(m.n_states, fa[0].size());
      for (int x = 0; x < m.n_states; ++x)
        for (int c = 0; c < F.cols(); ++c) F(x, c) = fa[x][c].get<double>();
      m.utility.features.push_back(F);
    }
    if (j.contains("extra")) {
      m.utility.extra.resize(m.n_states, m.n_actions);
      for (int x = 0; x < m.n_states; ++x)
        for (int a = 0; a < m.n_actions; ++a) m.utility.extra(x, a) = j["extra"][x][a];
    }
    m.transition.d_theta_f = 0;
    m.transition.theta_f_lo = VectorXd(0);
    m.transition.theta_f_hi = VectorXd(0);
    std::vector<MatrixXd> kernels;
    for (const auto& fa : j.at("transition")) {
      MatrixXd F(m.n_states, m.n_states);
      for (int x = 0; x < m.n_states; ++x)
        for (int xp = 0; xp < m.n_states; ++xp) F(x, xp) = fa[x][xp].get<double>();
      kernels.push_back(F);
    }
    m.transition.kernel = [kernels](const VectorXd&) { return kernels; };
    validate_model(m);
    return m;
  }
  throw std::invalid_argument("config: unknown model family '" + family + "'");
}

inline DesignSpec design_from_json(const json& j, const ModelSpec& m) {
  DesignSpec d;
  d.delta = j.at("delta").get<double>();
  d.theta_f_true = j.contains("theta_f") ? vector_from_json(j["theta_f"]) : VectorXd(0);
  if (!j.contains("marginal") || j["marginal"] == "log_spec")
    d.marginal = marginal_log_spec(m.n_states);
  else
    d.marginal = vector_from_json(j["marginal"]);
  if (std::abs(d.marginal.sum() - 1.0) > 1e-10 || d.marginal.minCoeff() <= 0.0)
    throw std::invalid_argument("config: marginal must be a positive distribution");

  VectorXd theta_u = vector_from_json(j.at("theta_u"));
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "correct") {
    d.kind = CorrectSpec{theta_u};
  } else if (kind == "quadratic") {
    QuadraticUtility q;
    q.theta_u = theta_u;
    q.c = j.value("c", -0.025);
    q.action = j.value("action", 1) - 1;  // config uses 1-based action labels
    if (q.action < 0 || q.action >= m.n_actions)
      throw std::invalid_argument("config: quadratic drift action out of range");
    d.kind = q;
  } else if (kind == "mixture") {
    Mixture mx;
    mx.theta_A = theta_u;
    mx.theta_B = vector_from_json(j.at("theta_u_b"));
    d.kind = mx;
  } else if (kind == "quantal") {
    QuantalResponse q;
    q.theta_u = theta_u;
    q.c = j.value("c", 10.0);
    q.draws = j.value("draws", 200000);
    q.mc_seed = j.value("mc_seed", std::uint64_t{20240501});
    d.kind = q;
  } else {
    throw std::invalid_argument("config: unknown design kind '" + kind + "'");
  }
  return d;
}

inline std::string design_label(const DesignSpec& d) {
  if (std::holds_alternative<CorrectSpec>(d.kind)) return "correct";
  if (std::holds_alternative<QuadraticUtility>(d.kind)) return "quadratic";
  if (std::holds_alternative<Mixture>(d.kind)) return "mixture";
  return "quantal";
}

inline ExperimentConfig experiment_from_json(const json& root) {
  ExperimentConfig cfg;
  cfg.model = model_from_json(root.at("model"));
  cfg.design = design_from_json(root.at("design"), cfg.model);
  cfg.design_label = design_label(cfg.design);
  if (!root.contains("experiment")) return cfg;
  const json& e = root["experiment"];
  if (e.contains("sample_sizes")) {
    cfg.sample_sizes.clear();
    for (const auto& n : e["sample_sizes"]) cfg.sample_sizes.push_back(n.get<int>());
  }
  if (e.contains("k_values")) {
    cfg.k_values.clear();
    for (const auto& k : e["k_values"]) cfg.k_values.push_back(k.get<int>());
  }
  if (e.contains("estimators")) {
    cfg.estimators.clear();
    for (const auto& s : e["estimators"]) {
      EstimatorSpec es;
      std::string kind = s.at("kind").get<std::string>();
      if (kind == "kml") {
        es.kind = EstimatorKind::KML;
        es.weight = EstimatorSpec::Weight::None;
      } else if (kind == "kmd") {
        es.kind = EstimatorKind::KMD;
        std::string w = s.value("weight", "identity");
        if (w == "identity")
          es.weight = EstimatorSpec::Weight::Identity;
        else if (w == "w_av")
          es.weight = EstimatorSpec::Weight::OptimalAV;
        else
          throw std::invalid_argument("config: unknown weight '" + w + "'");
      } else {
        throw std::invalid_argument("config: unknown estimator kind '" + kind + "'");
      }
      cfg.estimators.push_back(es);
    }
  }
  cfg.replications = e.value("replications", cfg.replications);
  cfg.full_scale_replications = e.value("full_scale_replications", cfg.full_scale_replications);
  cfg.base_seed = e.value("base_seed", cfg.base_seed);
  cfg.scale_r = e.value("scale_r", cfg.scale_r);
  return cfg;
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

// FNV-1a over the canonical (key-sorted) dump
inline std::uint64_t config_hash(const json& root) {
  std::string s = root.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  os << "a,x,x_next\n";
  for (int i = 0; i < ds.n; ++i)
    os << ds.a[i] + 1 << ',' << ds.x[i] + 1 << ',' << ds.xp[i] + 1 << '\n';
}

inline Dataset read_dataset_csv(std::istream& is, const ModelSpec& m) {
  Dataset ds;
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset: empty file");
  // tolerate trailing carriage returns
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  if (line != "a,x,x_next")
    throw std::runtime_error("dataset: expected header 'a,x,x_next', got '" + line + "'");
  while (std::getline(is, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) continue;
    int a, x, xp;
    if (std::sscanf(line.c_str(), "%d,%d,%d", &a, &x, &xp) != 3)
      throw std::runtime_error("dataset: malformed row '" + line + "'");
    if (a < 1 || a > m.n_actions || x < 1 || x > m.n_states || xp < 1 || xp > m.n_states)
      throw std::runtime_error("dataset: value out of range in row '" + line + "'");
    ds.a.push_back(a - 1);
    ds.x.push_back(x - 1);
    ds.xp.push_back(xp - 1);
  }
  ds.n = static_cast<int>(ds.a.size());
  if (ds.n == 0) throw std::runtime_error("dataset: no observations");
  return ds;
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline json make_manifest(const json& config, int workers, bool full_scale,
                          const std::string& status) {
  json m;
  m["config_hash"] = hash_hex(config_hash(config));
  m["rng"] = kRngIdentity;
  m["version"] = kVersion;
  m["created_utc"] = utc_timestamp();
  m["workers"] = workers;
  m["full_scale"] = full_scale;
  m["status"] = status;
  m["files"] = {{"records", "records.jsonl"}, {"summary", "summary.csv"}, {"table", "table.txt"}};
  return m;
}

}  // namespace ddc
