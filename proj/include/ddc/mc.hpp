#pragma once
// Monte Carlo harness. One experiment = one (design, delta) pair run over a
// grid of sample sizes, stage counts and estimators, with S independent
// replications. Replication r draws its own RNG stream from (base_seed, r),
// so results are bit-identical for any worker count; records are buffered by
// replication index and flushed in order by a single logical writer.
#include "ddc/asymptotics.hpp"
#include "ddc/bus.hpp"
#include "ddc/dgp.hpp"
#include "ddc/estimate.hpp"
#include "ddc/model.hpp"
#include "ddc/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace ddc {

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::KML;
  enum class Weight { None, Identity, OptimalAV } weight = Weight::None;

  std::string label() const {
    if (kind == EstimatorKind::KML) return "kml";
    return weight == Weight::OptimalAV ? "kmd_w_av" : "kmd_identity";
  }
  std::string weight_label() const {
    if (kind == EstimatorKind::KML) return "";
    return weight == Weight::OptimalAV ? "w_av" : "identity";
  }
};

inline std::vector<EstimatorSpec> default_estimators() {
  return {{EstimatorKind::KMD, EstimatorSpec::Weight::Identity},
          {EstimatorKind::KMD, EstimatorSpec::Weight::OptimalAV},
          {EstimatorKind::KML, EstimatorSpec::Weight::None}};
}

struct ExperimentConfig {
  ModelSpec model;
  DesignSpec design;
  std::string design_label = "design";
  std::vector<int> sample_sizes{200, 500, 1000};
  std::vector<int> k_values{1, 2, 3, 10};
  std::vector<EstimatorSpec> estimators = default_estimators();
  int replications = 2000;              // desk scale
  int full_scale_replications = 20000;  // behind the --full-scale flag
  std::uint64_t base_seed = 20250815;
  double scale_r = 0.5;  // summary scaling exponent: stats use n^r (mse n^2r)
};

struct RepRecord {
  int n = 0, rep = 0;
  std::uint64_t seed = 0;
  double theta_f_hat = std::numeric_limits<double>::quiet_NaN();
  bool failed = false;
  bool flagged = false;  // empty cells, boundary projection, or stage trouble
  std::string error;
  // alpha[estimator][k_index] over config.k_values
  std::vector<std::vector<VectorXd>> alpha;
};

struct SummaryRow {
  std::string design;
  double delta = 0.0;
  std::string estimator, weight;
  int K = 0, n = 0, coord = 0;  // coord is 1-based
  double scaled_bias = 0, scaled_sd = 0, scaled_mse = 0, mcse_bias = 0;
  int S_valid = 0, S_flagged = 0;
  double scaled_bias_excl = 0, scaled_sd_excl = 0, scaled_mse_excl = 0;
};

struct ExperimentResult {
  std::vector<RepRecord> records;  // ordered by (n index, replication)
  std::vector<SummaryRow> summary;
};

namespace detail {

inline std::string fmt_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// flushes lines in replication order regardless of completion order
class OrderedWriter {
 public:
  explicit OrderedWriter(std::ostream* out) : out_(out) {}
  void push(std::size_t idx, std::string line) {
    if (!out_) return;
    std::lock_guard<std::mutex> lock(mu_);
    pending_[idx] = std::move(line);
    while (!pending_.empty() && pending_.begin()->first == next_) {
      (*out_) << pending_.begin()->second << '\n';
      pending_.erase(pending_.begin());
      ++next_;
    }
  }

 private:
  std::ostream* out_;
  std::mutex mu_;
  std::map<std::size_t, std::string> pending_;
  std::size_t next_ = 0;
};

inline nlohmann::json record_to_json(const ExperimentConfig& cfg, const RepRecord& r) {
  nlohmann::json j;
  j["rep"] = r.rep;
  j["n"] = r.n;
  j["seed"] = r.seed;
  j["failed"] = r.failed;
  j["flagged"] = r.flagged;
  if (r.failed) {
    j["error"] = r.error;
    return j;
  }
  if (std::isfinite(r.theta_f_hat)) j["theta_f"] = r.theta_f_hat;
  nlohmann::json est;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    nlohmann::json per_k;
    for (std::size_t ki = 0; ki < cfg.k_values.size(); ++ki) {
      std::vector<double> a(r.alpha[e][ki].data(),
                            r.alpha[e][ki].data() + r.alpha[e][ki].size());
      per_k[std::to_string(cfg.k_values[ki])] = a;
    }
    est[cfg.estimators[e].label()] = per_k;
  }
  j["estimates"] = est;
  return j;
}

}  // namespace detail

inline std::vector<SummaryRow> summarize(const ExperimentConfig& cfg,
                                         const std::vector<RepRecord>& records, int S);

// one replication: draw data, build analogues, run every estimator once at
// K = max(k_values) and read the K-stage estimates off the stage trace
inline RepRecord run_replication(const ExperimentConfig& cfg, const JointDist& joint, int n,
                                 int rep, std::uint64_t seed, const MatrixXd* w_av_matrix) {
  RepRecord rec;
  rec.n = n;
  rec.rep = rep;
  rec.seed = seed;
  try {
    Dataset ds = sample_dataset(joint, n, seed);
    SampleAnalogues s = sample_analogues(cfg.model, ds);
    rec.flagged = s.any_empty;

    int kmax = 0;
    for (int k : cfg.k_values) kmax = std::max(kmax, k);
    rec.alpha.resize(cfg.estimators.size());
    for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
      EstimateOptions opt;
      opt.kind = cfg.estimators[e].kind;
      opt.K = kmax;
      if (cfg.model.transition.d_theta_f > 0)
        opt.first_step = [](const ModelSpec& m, const SampleAnalogues& sa) {
          return first_step_theta_f_bus(m, sa);
        };
      if (cfg.estimators[e].kind == EstimatorKind::KMD &&
          cfg.estimators[e].weight == EstimatorSpec::Weight::OptimalAV) {
        if (!w_av_matrix) throw std::logic_error("run_replication: missing W_AV matrix");
        opt.weight = WeightSpec::fixed(*w_av_matrix);
      }
      EstimateTrace t = k_stage_estimate(cfg.model, s, opt);
      if (!t.first_step_ok) {
        rec.failed = true;
        rec.error = "first step had an empty denominator";
        return rec;
      }
      if (t.theta_f_hat.size() > 0) rec.theta_f_hat = t.theta_f_hat[0];
      rec.flagged = rec.flagged || t.at_bound || !t.converged || t.interior_clamped;
      for (int k : cfg.k_values) {
        const VectorXd& a = t.alpha_stages[k - 1];
        if (!a.allFinite()) throw std::runtime_error("non-finite estimate");
        rec.alpha[e].push_back(a);
      }
    }
  } catch (const std::exception& ex) {
    rec.failed = true;
    rec.error = ex.what();
    rec.alpha.clear();
  }
  return rec;
}

inline int resolve_workers(int workers) {
  if (workers > 0) return workers;
  if (const char* env = std::getenv("DDC_WORKERS")) {
    int w = std::atoi(env);
    if (w > 0) return w;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, int workers = 0,
                                       std::ostream* records_out = nullptr,
                                       bool full_scale = false) {
  validate_model(cfg.model);
  const int S = full_scale ? cfg.full_scale_replications : cfg.replications;
  const int n_count = static_cast<int>(cfg.sample_sizes.size());

  // per-n joint distributions and, if requested, the variance-optimal weight,
  // all built once up front from exact limiting objects
  std::vector<JointDist> joints;
  joints.reserve(n_count);
  for (int n : cfg.sample_sizes) joints.push_back(joint_at_n(cfg.model, cfg.design, n));

  std::unique_ptr<MatrixXd> w_av_matrix;
  for (const auto& e : cfg.estimators)
    if (e.kind == EstimatorKind::KMD && e.weight == EstimatorSpec::Weight::OptimalAV &&
        !w_av_matrix) {
      FirstStepGradientFn g;
      if (cfg.model.transition.d_theta_f > 0)
        g = [](const ModelSpec& m, const JointDist& pi) {
          return MatrixXd(bus_first_step_gradient(m, pi));
        };
      w_av_matrix = std::make_unique<MatrixXd>(w_av(make_limit_inputs(cfg.model, cfg.design, g)));
    }

  ExperimentResult out;
  out.records.resize(static_cast<std::size_t>(n_count) * S);
  detail::OrderedWriter writer(records_out);

  std::atomic<std::size_t> next{0};
  const std::size_t total = out.records.size();
  auto worker_fn = [&]() {
    for (std::size_t t = next.fetch_add(1); t < total; t = next.fetch_add(1)) {
      int n_idx = static_cast<int>(t / S), rep = static_cast<int>(t % S);
      std::uint64_t seed = replication_seed(cfg.base_seed, t);
      out.records[t] = run_replication(cfg, joints[n_idx], cfg.sample_sizes[n_idx], rep, seed,
                                       w_av_matrix.get());
      writer.push(t, detail::record_to_json(cfg, out.records[t]).dump());
    }
  };

  int W = resolve_workers(workers);
  if (W <= 1) {
    worker_fn();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < W; ++w) pool.emplace_back(worker_fn);
    for (auto& th : pool) th.join();
  }

  out.summary = summarize(cfg, out.records, S);
  return out;
}

// scaled bias / sd / mse per (estimator, K, n, coordinate); inclusive stats
// plus the same stats excluding flagged replications
inline std::vector<SummaryRow> summarize(const ExperimentConfig& cfg,
                                         const std::vector<RepRecord>& records, int S) {
  const VectorXd& alpha_star = theta_u_limit(cfg.design);
  const int d = static_cast<int>(alpha_star.size());
  std::vector<SummaryRow> rows;
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e)
    for (std::size_t ki = 0; ki < cfg.k_values.size(); ++ki)
      for (std::size_t ni = 0; ni < cfg.sample_sizes.size(); ++ni) {
        int n = cfg.sample_sizes[ni];
        double scale = std::pow(n, cfg.scale_r);
        for (int c = 0; c < d; ++c) {
          // two passes share the same accumulation order for determinism
          auto accumulate = [&](bool exclude_flagged, double& bias, double& sd, double& mse,
                                int& count) {
            double sum = 0, sumsq = 0, sumsq_err = 0;
            count = 0;
            for (int r = 0; r < S; ++r) {
              const RepRecord& rec = records[ni * S + r];
              if (rec.failed || (exclude_flagged && rec.flagged)) continue;
              double v = rec.alpha[e][ki][c];
              sum += v;
              sumsq += v * v;
              double err = v - alpha_star[c];
              sumsq_err += err * err;
              ++count;
            }
            if (count == 0) {
              bias = sd = mse = std::numeric_limits<double>::quiet_NaN();
              return;
            }
            double mean = sum / count;
            double var = count > 1 ? (sumsq - count * mean * mean) / (count - 1) : 0.0;
            bias = scale * (mean - alpha_star[c]);
            sd = scale * std::sqrt(std::max(var, 0.0));
            mse = scale * scale * (sumsq_err / count);
          };
          SummaryRow row;
          row.design = cfg.design_label;
          row.delta = cfg.design.delta;
          row.estimator = cfg.estimators[e].kind == EstimatorKind::KML ? "kml" : "kmd";
          row.weight = cfg.estimators[e].weight_label();
          row.K = cfg.k_values[ki];
          row.n = n;
          row.coord = c + 1;
          int n_valid = 0, n_kept = 0;
          accumulate(false, row.scaled_bias, row.scaled_sd, row.scaled_mse, n_valid);
          row.S_valid = n_valid;
          row.mcse_bias = n_valid > 0 ? row.scaled_sd / std::sqrt(double(n_valid)) : 0.0;
          accumulate(true, row.scaled_bias_excl, row.scaled_sd_excl, row.scaled_mse_excl,
                     n_kept);
          row.S_flagged = n_valid - n_kept;
          rows.push_back(row);
        }
      }
  return rows;
}

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "design,delta,estimator,W,K,n,coord,scaled_bias,scaled_sd,scaled_mse,mcse_bias,"
        "S_valid,S_flagged,scaled_bias_excl,scaled_sd_excl,scaled_mse_excl\n";
  for (const auto& r : rows) {
    os << r.design << ',' << detail::fmt_full(r.delta) << ',' << r.estimator << ',' << r.weight
       << ',' << r.K << ',' << r.n << ',' << r.coord << ',' << detail::fmt_full(r.scaled_bias)
       << ',' << detail::fmt_full(r.scaled_sd) << ',' << detail::fmt_full(r.scaled_mse) << ','
       << detail::fmt_full(r.mcse_bias) << ',' << r.S_valid << ',' << r.S_flagged << ','
       << detail::fmt_full(r.scaled_bias_excl) << ',' << detail::fmt_full(r.scaled_sd_excl)
       << ',' << detail::fmt_full(r.scaled_mse_excl) << '\n';
  }
  return os.str();
}

// plain-text table in the usual layout: statistics as rows grouped by K,
// sample sizes as columns within each estimator panel, 2 decimals
inline std::string format_table(const ExperimentConfig& cfg, const std::vector<SummaryRow>& rows,
                                int coord /*1-based*/) {
  auto find = [&](const EstimatorSpec& e, int K, int n, double SummaryRow::*field) {
    for (const auto& r : rows)
      if (r.estimator == (e.kind == EstimatorKind::KML ? "kml" : "kmd") &&
          r.weight == e.weight_label() && r.K == K && r.n == n && r.coord == coord)
        return r.*field;
    return std::numeric_limits<double>::quiet_NaN();
  };
  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", cfg.scale_r);
  os << "design=" << cfg.design_label << " delta=" << cfg.design.delta << " coord=" << coord
     << " (stats scaled by n^" << buf << ", mse by n^" << 2 * cfg.scale_r << ")\n\n";

  auto panel_name = [](const EstimatorSpec& e) {
    if (e.kind == EstimatorKind::KML) return std::string("K-ML");
    return e.weight == EstimatorSpec::Weight::OptimalAV ? std::string("K-MD(W_AV)")
                                                        : std::string("K-MD(I)");
  };
  os << "  K  stat ";
  for (const auto& e : cfg.estimators) {
    os << " | " << panel_name(e);
    for (std::size_t i = panel_name(e).size(); i < cfg.sample_sizes.size() * 8; ++i) os << ' ';
  }
  os << "\n           ";
  for (std::size_t e = 0; e < cfg.estimators.size(); ++e) {
    os << " | ";
    for (int n : cfg.sample_sizes) {
      std::snprintf(buf, sizeof(buf), "n=%-6d", n);
      os << buf;
    }
  }
  os << '\n';
  const std::array<std::pair<const char*, double SummaryRow::*>, 3> stats{
      {{"bias", &SummaryRow::scaled_bias},
       {"sd", &SummaryRow::scaled_sd},
       {"mse", &SummaryRow::scaled_mse}}};
  for (int K : cfg.k_values)
    for (const auto& [name, field] : stats) {
      std::snprintf(buf, sizeof(buf), "%3d  %-5s", K, name);
      os << buf;
      for (const auto& e : cfg.estimators) {
        os << " | ";
        for (int n : cfg.sample_sizes) {
          std::snprintf(buf, sizeof(buf), "%-8.2f", find(e, K, n, field));
          os << buf;
        }
      }
      os << '\n';
    }
  return os.str();
}

struct KInvarianceReport {
  double max_diff_3_10 = 0.0;  // scaled summary stats, K=3 vs K=10
  double max_diff_2_10 = 0.0;  // K=2 vs K=10
  bool has_pairs = false;
  std::string text;
};

inline KInvarianceReport k_invariance_report(const std::vector<SummaryRow>& rows) {
  KInvarianceReport rep;
  std::ostringstream os;
  auto locate = [&](const SummaryRow& like, int K) -> const SummaryRow* {
    for (const auto& r : rows)
      if (r.estimator == like.estimator && r.weight == like.weight && r.n == like.n &&
          r.coord == like.coord && r.K == K)
        return &r;
    return nullptr;
  };
  for (const auto& r : rows) {
    if (r.K != 10) continue;
    for (int K : {2, 3}) {
      const SummaryRow* other = locate(r, K);
      if (!other) continue;
      rep.has_pairs = true;
      double d = std::max({std::abs(r.scaled_bias - other->scaled_bias),
                           std::abs(r.scaled_sd - other->scaled_sd),
                           std::abs(r.scaled_mse - other->scaled_mse)});
      (K == 3 ? rep.max_diff_3_10 : rep.max_diff_2_10) =
          std::max(K == 3 ? rep.max_diff_3_10 : rep.max_diff_2_10, d);
      os << r.estimator << (r.weight.empty() ? "" : "(" + r.weight + ")") << " n=" << r.n
         << " coord=" << r.coord << " K=" << K << " vs 10: " << detail::fmt_full(d) << '\n';
    }
  }
  std::ostringstream head;
  head << "max |K=3 - K=10| = " << detail::fmt_full(rep.max_diff_3_10)
       << "\nmax |K=2 - K=10| = " << detail::fmt_full(rep.max_diff_2_10) << '\n';
  rep.text = head.str() + os.str();
  return rep;
}

}  // namespace ddc
