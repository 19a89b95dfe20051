#pragma once
// Fast property checks over the solved bus model: identities that must hold at
// machine-ish precision if the operators, derivatives and asymptotic matrices
// are implemented correctly. Runs in well under a minute.
#include "ddc/asymptotics.hpp"
#include "ddc/bus.hpp"
#include "ddc/dgp.hpp"
#include "ddc/estimate.hpp"
#include "ddc/mc.hpp"
#include "ddc/model.hpp"
#include "ddc/rng.hpp"

#include <string>
#include <vector>

namespace ddc {

struct CheckResult {
  std::string name;
  double value = 0.0;  // residual / statistic being compared against tol
  double tol = 0.0;
  bool pass = false;
  std::string note;
};

namespace detail {

inline CheckResult make_check(std::string name, double value, double tol, std::string note = "") {
  CheckResult c;
  c.name = std::move(name);
  c.value = value;
  c.tol = tol;
  c.pass = value < tol;
  c.note = std::move(note);
  return c;
}

inline DesignSpec verify_design_correct(const ModelSpec& m) {
  DesignSpec d;
  CorrectSpec k;
  k.theta_u = (VectorXd(2) << 1.0, 0.05).finished();
  d.kind = k;
  d.delta = 0.5;
  d.theta_f_true = VectorXd::Constant(1, 0.25);
  d.marginal = marginal_log_spec(m.n_states);
  return d;
}

inline DesignSpec verify_design_quadratic(const ModelSpec& m) {
  DesignSpec d = verify_design_correct(m);
  QuadraticUtility q;
  q.theta_u = (VectorXd(2) << 1.0, 0.05).finished();
  d.kind = q;
  return d;
}

inline FirstStepGradientFn bus_gradient_fn() {
  return [](const ModelSpec& m, const JointDist& pi) {
    return MatrixXd(bus_first_step_gradient(m, pi));
  };
}

inline double min_eigenvalue(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()));
  return es.eigenvalues().minCoeff();
}

}  // namespace detail

inline std::vector<CheckResult> verify_model_suite() {
  std::vector<CheckResult> out;
  ModelSpec m = bus_model();
  VectorXd alpha = (VectorXd(2) << 1.0, 0.05).finished();
  VectorXd theta_f = VectorXd::Constant(1, 0.25);
  TransitionKernel F = make_kernel(m, theta_f);

  FixedPointResult fp = solve_ccp_fixed_point(m, alpha, F, uniform_ccp(m));

  // the policy operator has a zero derivative in P at its fixed point
  MatrixXd J = jacobian_psi_wrt_P(m, alpha, F, fp.ccp);
  out.push_back(detail::make_check("zero_jacobian_at_fixed_point",
                                   J.cwiseAbs().maxCoeff(), 1e-5));

  // the fixed point does not depend on the start
  SplitMix64 rng(911);
  double multistart = 0.0;
  for (int s = 0; s < 10; ++s) {
    CCPMatrix start;
    start.probs.resize(m.n_actions, m.n_states);
    for (int x = 0; x < m.n_states; ++x) {
      double u = 0.02 + 0.96 * rng.next_uniform();
      start.probs(0, x) = u;
      start.probs(1, x) = 1.0 - u;
    }
    FixedPointResult alt = solve_ccp_fixed_point(m, alpha, F, start);
    multistart = std::max(multistart,
                          (alt.ccp.probs - fp.ccp.probs).cwiseAbs().maxCoeff());
  }
  out.push_back(detail::make_check("fixed_point_multistart_agreement", multistart, 1e-10,
                                   "10 random interior starts"));

  // value iteration and the CCP fixed point describe the same policy
  ValueIterationResult vi = solve_value_function(m, alpha, F, 3e-9);
  CCPMatrix from_vi = lambda_map(choice_values(m, alpha, F, vi.value));
  out.push_back(detail::make_check("value_iteration_vs_fixed_point_ccp",
                                   (from_vi.probs - fp.ccp.probs).cwiseAbs().maxCoeff(), 1e-8,
                                   std::to_string(vi.iterations) + " value iterations"));

  // differentiating Psi in theta at fixed P equals differentiating the fixed
  // point itself (zero-Jacobian envelope argument)
  MatrixXd D_psi = dP_dtheta(m, alpha, theta_f);
  VectorXd theta(3);
  theta << alpha, theta_f;
  auto solve_reduced = [&](const VectorXd& th) {
    FixedPointOptions tight;
    tight.tol = 1e-12;
    tight.max_iter = 20000;
    return VectorXd(to_reduced(
        m, solve_ccp_fixed_point(m, VectorXd(th.head(2)), make_kernel(m, VectorXd(th.tail(1))),
                                 uniform_ccp(m), tight)
               .ccp));
  };
  MatrixXd D_resolve = fd_jacobian_richardson(solve_reduced, theta, 1e-4);
  out.push_back(detail::make_check("dP_dtheta_vs_full_resolve",
                                   (D_psi - D_resolve).cwiseAbs().maxCoeff(), 1e-4));
  return out;
}

inline std::vector<CheckResult> verify_asymptotics_suite() {
  std::vector<CheckResult> out;
  ModelSpec m = bus_model();
  VectorXd alpha = (VectorXd(2) << 1.0, 0.05).finished();
  VectorXd theta_f = VectorXd::Constant(1, 0.25);
  VectorXd m_star = marginal_log_spec(m.n_states);

  LemmaA3Residuals lr = lemma_a3_check(m, alpha, theta_f, m_star);
  out.push_back(detail::make_check("score_identity_log_ccp", lr.identity1, 1e-6));
  out.push_back(detail::make_check("score_identity_outer_product", lr.identity2, 1e-6));

  DesignSpec quad = detail::verify_design_quadratic(m);
  LimitInputs L = make_limit_inputs(m, quad, detail::bus_gradient_fn());

  MatrixXd S = sigma_matrix(L.P_star, L.m_star);
  out.push_back(detail::make_check("sigma_annihilates_j_star",
                                   (S * L.J_star).cwiseAbs().maxCoeff(), 1e-12));

  MatrixXd U_ml = upsilon_ml(L);
  MatrixXd Phi = phi_matrix(L.P_star, L.m_star);
  MatrixXd U_md_phi = upsilon_md(L, WeightSpec::fixed(Phi));
  out.push_back(detail::make_check("ml_equals_md_weighted_by_phi",
                                   (U_ml - U_md_phi).cwiseAbs().maxCoeff(), 1e-10));

  // fault injection: a 1% distortion of one entry of Phi must break the
  // equality above; the check records whether the distortion was detected
  MatrixXd Phi_bad = Phi;
  Phi_bad(0, 0) *= 1.01;
  double bad = (U_ml - upsilon_md(L, WeightSpec::fixed(Phi_bad))).cwiseAbs().maxCoeff();
  CheckResult self;
  self.name = "self_test_distorted_phi_detected";
  self.value = bad;
  self.tol = 1e-10;
  self.pass = bad > 1e-10;
  self.note = "residual must exceed 1e-10 here";
  out.push_back(self);

  // weight optimality in the positive-semidefinite order
  MatrixXd Wav = w_av(L);
  AsySummary s_id = asy_summary(L, 1.0, upsilon_md(L, WeightSpec::identity()));
  AsySummary s_av = asy_summary(L, 1.0, upsilon_md(L, WeightSpec::fixed(Wav)));
  double gap_av = detail::min_eigenvalue(s_id.AV - s_av.AV);
  out.push_back(detail::make_check("w_av_dominates_identity", std::max(0.0, -gap_av), 1e-10,
                                   "min eigenvalue of AV(I) - AV(W_av)"));

  MatrixXd Wamse = w_amse(L);
  AsySummary k_av = asy_summary(L, 0.5, upsilon_md(L, WeightSpec::fixed(Wav)));
  AsySummary k_amse = asy_summary(L, 0.5, upsilon_md(L, WeightSpec::fixed(Wamse)));
  double gap_amse = detail::min_eigenvalue(k_av.AMSE - k_amse.AMSE);
  out.push_back(detail::make_check("w_amse_dominates_w_av_at_knife_edge",
                                   std::max(0.0, -gap_amse), 1e-10,
                                   "min eigenvalue of AMSE(W_av) - AMSE(W_amse)"));

  // empirical CLT for the cell frequencies against the multinomial covariance
  {
    DesignSpec corr = detail::verify_design_correct(m);
    JointDist Pi = joint_at_n(m, corr, std::numeric_limits<double>::infinity());
    const int S_reps = 5000, n = 1000;
    const int cells = static_cast<int>(Pi.pi.size());
    MatrixXd Z(cells, S_reps);
    for (int r = 0; r < S_reps; ++r) {
      Dataset ds = sample_dataset(Pi, n, replication_seed(4242, r));
      VectorXd freq = VectorXd::Zero(cells);
      for (int i = 0; i < n; ++i) freq[Pi.index(ds.a[i], ds.x[i], ds.xp[i])] += 1.0;
      Z.col(r) = std::sqrt(double(n)) * (freq / n - Pi.pi);
    }
    MatrixXd M2 = (Z * Z.transpose()) / S_reps;
    MatrixXd Zsq = Z.cwiseProduct(Z);
    MatrixXd M4 = (Zsq * Zsq.transpose()) / S_reps;
    MatrixXd Omega = omega_matrix(Pi);
    double worst = 0.0;
    for (int i = 0; i < cells; ++i)
      for (int j = 0; j <= i; ++j) {
        double var = std::max(M4(i, j) - M2(i, j) * M2(i, j), 0.0);
        double se = std::sqrt(var / S_reps);
        double diff = std::abs(M2(i, j) - Omega(i, j));
        if (se == 0.0) {
          if (diff > 1e-12) worst = std::max(worst, 1e9);
          continue;
        }
        worst = std::max(worst, diff / se);
      }
    out.push_back(detail::make_check("clt_cell_frequencies_within_5se", worst, 5.0,
                                     "max |cov diff| / SE over cell pairs, 5000 reps"));
  }
  return out;
}

inline std::vector<CheckResult> run_verify_suite(const std::string& which) {
  std::vector<CheckResult> out;
  if (which == "model" || which == "all") {
    auto v = verify_model_suite();
    out.insert(out.end(), v.begin(), v.end());
  }
  if (which == "asymptotics" || which == "all") {
    auto v = verify_asymptotics_suite();
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

}  // namespace ddc
