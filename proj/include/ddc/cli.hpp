#pragma once
// Subcommand implementations behind the command-line tool. They are library
// functions so tests can drive exactly the code the binary runs.
// Exit codes: 0 success, 1 a check or run failed, 2 usage/config errors.
#include "ddc/config.hpp"
#include "ddc/verify.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

namespace ddc {

inline json ccp_to_json(const CCPMatrix& P) {
  json out = json::array();
  for (Eigen::Index x = 0; x < P.probs.cols(); ++x) {
    json col = json::array();
    for (Eigen::Index a = 0; a < P.probs.rows(); ++a) col.push_back(P.probs(a, x));
    out.push_back(col);
  }
  return out;
}

inline json vector_to_json(const VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

// solve the model CCP fixed point at the design's limiting parameters
inline int cmd_solve(const json& config, std::ostream& os) {
  ModelSpec m = model_from_json(config.at("model"));
  DesignSpec d = design_from_json(config.at("design"), m);
  FixedPointResult fp = solve_ccp_fixed_point(m, theta_u_limit(d), d.theta_f_true);
  json out;
  out["alpha"] = vector_to_json(theta_u_limit(d));
  out["theta_f"] = vector_to_json(d.theta_f_true);
  out["iterations"] = fp.iterations;
  out["residual"] = fp.residual;
  out["converged"] = fp.converged;
  out["ccp"] = ccp_to_json(fp.ccp);
  out["value"] = vector_to_json(fp.value);
  os << out.dump(2) << '\n';
  return 0;
}

inline int cmd_estimate(const json& config, const std::string& data_path, int K,
                        const std::string& estimator, const std::string& weight,
                        std::ostream& os) {
  ModelSpec m = model_from_json(config.at("model"));
  DesignSpec d = design_from_json(config.at("design"), m);
  std::ifstream in(data_path);
  if (!in) {
    std::cerr << "cannot open dataset: " << data_path << '\n';
    return 2;
  }
  Dataset ds = read_dataset_csv(in, m);
  SampleAnalogues s = sample_analogues(m, ds);

  EstimateOptions opt;
  opt.K = K;
  if (estimator == "kml") {
    opt.kind = EstimatorKind::KML;
  } else if (estimator == "kmd") {
    opt.kind = EstimatorKind::KMD;
    if (weight == "identity") {
      opt.weight = WeightSpec::identity();
    } else if (weight == "w_av") {
      FirstStepGradientFn g;
      if (m.transition.d_theta_f > 0)
        g = [](const ModelSpec& mm, const JointDist& pi) {
          return MatrixXd(bus_first_step_gradient(mm, pi));
        };
      opt.weight = WeightSpec::fixed(w_av(make_limit_inputs(m, d, g)));
    } else {
      std::cerr << "unknown weight: " << weight << '\n';
      return 2;
    }
  } else {
    std::cerr << "unknown estimator: " << estimator << '\n';
    return 2;
  }
  if (m.transition.d_theta_f > 0)
    opt.first_step = [](const ModelSpec& mm, const SampleAnalogues& sa) {
      return first_step_theta_f_bus(mm, sa);
    };

  EstimateTrace t = k_stage_estimate(m, s, opt);
  if (!t.first_step_ok) {
    std::cerr << "first step failed: no usable transitions\n";
    return 1;
  }
  json out;
  out["n"] = ds.n;
  out["estimator"] = estimator;
  if (opt.kind == EstimatorKind::KMD) out["weight"] = weight;
  out["K"] = K;
  out["theta_f_hat"] = vector_to_json(t.theta_f_hat);
  json stages = json::array();
  for (const auto& a : t.alpha_stages) stages.push_back(vector_to_json(a));
  out["alpha_stages"] = stages;
  out["alpha_hat"] = vector_to_json(t.alpha_stages.back());
  out["criterion_values"] = t.criterion_values;
  out["converged"] = t.converged;
  out["at_bound"] = t.at_bound;
  out["empty_cells"] = std::any_of(s.empty_ax.begin(), s.empty_ax.end(),
                                   [](std::uint8_t f) { return f != 0; });
  os << out.dump(2) << '\n';
  return 0;
}

inline int cmd_experiment(const json& config, const std::string& out_dir, int workers,
                          bool full_scale, bool resume, bool force, std::ostream& os) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg = experiment_from_json(config);
  fs::path dir(out_dir);
  fs::path manifest_path = dir / "manifest.json";

  if (fs::exists(manifest_path) && !resume && !force) {
    json prev;
    std::ifstream in(manifest_path);
    in >> prev;
    std::string status = prev.value("status", "unknown");
    std::string prev_hash = prev.value("config_hash", "");
    if (status != "complete") {
      std::cerr << "refusing: " << out_dir
                << " holds a partial run (status=" << status
                << "); pass --resume to redo it or --force to discard it\n";
      return 2;
    }
    if (prev_hash != hash_hex(config_hash(config))) {
      std::cerr << "refusing: " << out_dir
                << " holds results for a different config (hash " << prev_hash
                << "); pass --force to overwrite\n";
      return 2;
    }
  }
  if (force && fs::exists(dir)) {
    for (const char* f : {"manifest.json", "records.jsonl", "summary.csv", "table.txt"})
      fs::remove(dir / f);
  }
  fs::create_directories(dir);

  int W = resolve_workers(workers);
  {
    std::ofstream mf(manifest_path);
    mf << make_manifest(config, W, full_scale, "running").dump(2) << '\n';
  }

  std::ofstream records(dir / "records.jsonl");
  ExperimentResult res = run_experiment(cfg, W, &records, full_scale);
  records.close();

  std::string csv = summary_csv(res.summary);
  {
    std::ofstream sf(dir / "summary.csv", std::ios::binary);
    sf << csv;
  }
  std::string tbl;
  for (int c = 1; c <= cfg.model.utility.d_alpha(); ++c)
    tbl += format_table(cfg, res.summary, c) + "\n";
  {
    std::ofstream tf(dir / "table.txt");
    tf << tbl;
  }
  {
    std::ofstream mf(manifest_path);
    mf << make_manifest(config, W, full_scale, "complete").dump(2) << '\n';
  }
  os << tbl;
  KInvarianceReport kir = k_invariance_report(res.summary);
  if (kir.has_pairs)
    os << "K-invariance: max |K=3 - K=10| = " << kir.max_diff_3_10
       << ", max |K=2 - K=10| = " << kir.max_diff_2_10 << '\n';
  os << "written: " << (dir / "summary.csv").string() << '\n';
  return 0;
}

inline int cmd_verify(const std::string& suite, std::ostream& os) {
  if (suite != "model" && suite != "asymptotics" && suite != "all") {
    std::cerr << "unknown suite: " << suite << " (expected model|asymptotics|all)\n";
    return 2;
  }
  std::vector<CheckResult> checks = run_verify_suite(suite);
  bool all_pass = true;
  for (const auto& c : checks) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-42s %-4s  value=%-12.4g tol=%-8.3g %s", c.name.c_str(),
                  c.pass ? "PASS" : "FAIL", c.value, c.tol, c.note.c_str());
    os << buf << '\n';
    all_pass = all_pass && c.pass;
  }
  os << (all_pass ? "verify: all checks passed" : "verify: FAILURES present") << '\n';
  return all_pass ? 0 : 1;
}

}  // namespace ddc
