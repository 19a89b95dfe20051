#pragma once
// Asymptotic distributions of the K-stage estimators under drifting
// misspecification. Everything is indexed consistently with the rest of the
// library: reduced CCP vectors drop the last action (a inner, x outer), the
// (a,x) frequency vector has a inner, and the joint distribution over
// (a,x,x') has a innermost and x' outermost.
#include "ddc/dgp.hpp"
#include "ddc/estimate.hpp"
#include "ddc/model.hpp"

namespace ddc {

// block-diagonal information weight: block x equals
//   m(x) [ diag(1/P(a|x))_{a in reduced set} + 11' / P(last|x) ]
inline MatrixXd phi_matrix(const CCPMatrix& P, const VectorXd& m_star) {
  const int A = static_cast<int>(P.probs.rows()), X = static_cast<int>(P.probs.cols());
  const int r = A - 1;
  MatrixXd Phi = MatrixXd::Zero(r * X, r * X);
  for (int x = 0; x < X; ++x) {
    double rest = P.probs(A - 1, x);
    MatrixXd blk = MatrixXd::Constant(r, r, m_star[x] / rest);
    for (int a = 0; a < r; ++a) blk(a, a) += m_star[x] / P.probs(a, x);
    Phi.block(x * r, x * r, r, r) = blk;
  }
  return Phi;
}

// maps (a,x) frequency perturbations into reduced CCP perturbations: block x is
//   [ I | 0 ] - P_reduced(x) 1'  all divided by m(x)
inline MatrixXd sigma_matrix(const CCPMatrix& P, const VectorXd& m_star) {
  const int A = static_cast<int>(P.probs.rows()), X = static_cast<int>(P.probs.cols());
  const int r = A - 1;
  MatrixXd S = MatrixXd::Zero(r * X, A * X);
  for (int x = 0; x < X; ++x) {
    for (int a = 0; a < r; ++a) {
      S(x * r + a, x * A + a) += 1.0 / m_star[x];
      for (int b = 0; b < A; ++b) S(x * r + a, x * A + b) -= P.probs(a, x) / m_star[x];
    }
  }
  return S;
}

// derivative of (frequency vector over (a,x), first-step theta_f) with respect
// to the joint distribution; the top block marginalizes over x'
inline MatrixXd delta_matrix(int n_actions, int n_states, const MatrixXd& dG1_dPi) {
  const int ax = n_actions * n_states, axx = ax * n_states;
  const int df = static_cast<int>(dG1_dPi.rows());
  if (df > 0 && dG1_dPi.cols() != axx)
    throw std::invalid_argument("delta_matrix: first-step gradient has wrong width");
  MatrixXd D = MatrixXd::Zero(ax + df, axx);
  for (int xp = 0; xp < n_states; ++xp) D.block(0, xp * ax, ax, ax).setIdentity();
  if (df > 0) D.bottomRows(df) = dG1_dPi;
  return D;
}

// multinomial covariance of the cell frequencies
inline MatrixXd omega_matrix(const JointDist& Pi) {
  return MatrixXd(Pi.pi.asDiagonal()) - Pi.pi * Pi.pi.transpose();
}

// limiting objects a design pins down, computed once and reused
struct LimitInputs {
  int n_actions = 0, n_states = 0;
  CCPMatrix P_star;
  VectorXd m_star;
  VectorXd J_star;  // (a,x) frequencies, a inner
  JointDist Pi_star;
  MatrixXd D_alpha;   // reduced dP/dalpha'
  MatrixXd D_thetaf;  // reduced dP/dtheta_f'
  VectorXd B;         // drift direction of Pi
  MatrixXd dG1_dPi;   // d_theta_f x |A||X||X|
};

using FirstStepGradientFn =
    std::function<MatrixXd(const ModelSpec&, const JointDist&)>;

inline LimitInputs make_limit_inputs(const ModelSpec& model, const DesignSpec& design,
                                     const FirstStepGradientFn& first_step_gradient = {}) {
  validate_model(model);
  LimitInputs L;
  L.n_actions = model.n_actions;
  L.n_states = model.n_states;
  L.P_star = true_ccp(model, design, std::numeric_limits<double>::infinity());
  L.m_star = design.marginal;
  L.Pi_star = assemble_joint(model, make_kernel(model, design.theta_f_true), L.P_star,
                             design.marginal);
  L.J_star = j_of(L.Pi_star);
  MatrixXd D = dP_dtheta(model, theta_u_limit(design), design.theta_f_true);
  const int da = model.utility.d_alpha();
  L.D_alpha = D.leftCols(da);
  L.D_thetaf = D.rightCols(model.transition.d_theta_f);
  L.B = bias_direction(model, design);
  if (first_step_gradient)
    L.dG1_dPi = first_step_gradient(model, L.Pi_star);
  else
    L.dG1_dPi = MatrixXd::Zero(model.transition.d_theta_f, L.Pi_star.pi.size());
  if (model.transition.d_theta_f > 0 && !first_step_gradient)
    throw std::invalid_argument("make_limit_inputs: model has theta_f but no first-step gradient");
  return L;
}

namespace detail {

inline double spd_condition(const MatrixXd& M) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
  double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

// [Sigma, -D_thetaf]: the sensitivity of the reduced CCP target to the
// frequency vector and the first-step parameter
inline MatrixXd sensitivity_block(const LimitInputs& L) {
  MatrixXd S = sigma_matrix(L.P_star, L.m_star);
  MatrixXd R(S.rows(), S.cols() + L.D_thetaf.cols());
  R << S, -L.D_thetaf;
  return R;
}

inline MatrixXd upsilon_generic(const LimitInputs& L, const MatrixXd& W) {
  MatrixXd G = L.D_alpha;
  MatrixXd GWG = G.transpose() * W * G;
  if (spd_condition(GWG) > 1e10)
    throw std::runtime_error("upsilon: weighted Jacobian cross-product is ill conditioned");
  return GWG.ldlt().solve(G.transpose() * W * sensitivity_block(L));
}

}  // namespace detail

inline MatrixXd upsilon_ml(const LimitInputs& L) {
  return detail::upsilon_generic(L, phi_matrix(L.P_star, L.m_star));
}

inline MatrixXd upsilon_md(const LimitInputs& L, const WeightSpec& w) {
  return detail::upsilon_generic(L, materialize_weight(w, (L.n_actions - 1) * L.n_states));
}

struct AsySummary {
  VectorXd AB;    // asymptotic bias of n^min(delta,1/2) (alpha_hat - alpha*)
  MatrixXd AV;    // asymptotic variance
  MatrixXd AMSE;  // bias^2 + variance in the knife-edge regime
};

// regimes: delta < 1/2 bias only, delta = 1/2 both, delta > 1/2 variance only
inline AsySummary asy_summary(const LimitInputs& L, double delta, const MatrixXd& Upsilon) {
  const double tol = 1e-12;
  MatrixXd Delta = delta_matrix(L.n_actions, L.n_states, L.dG1_dPi);
  MatrixXd UD = Upsilon * Delta;
  VectorXd bias_term = UD * L.B;
  MatrixXd var_term = UD * omega_matrix(L.Pi_star) * UD.transpose();

  AsySummary s;
  int d = static_cast<int>(Upsilon.rows());
  s.AB = delta <= 0.5 + tol ? bias_term : VectorXd::Zero(d);
  s.AV = delta >= 0.5 - tol ? var_term : MatrixXd::Zero(d, d);
  if (delta < 0.5 - tol)
    s.AMSE = bias_term * bias_term.transpose();
  else if (delta > 0.5 + tol)
    s.AMSE = var_term;
  else
    s.AMSE = var_term + bias_term * bias_term.transpose();
  return s;
}

namespace detail {

inline MatrixXd optimal_weight(const LimitInputs& L, const MatrixXd& mid) {
  MatrixXd R = sensitivity_block(L);
  MatrixXd Delta = delta_matrix(L.n_actions, L.n_states, L.dG1_dPi);
  MatrixXd M = R * Delta * mid * Delta.transpose() * R.transpose();
  if (spd_condition(M) > 1e12)
    throw std::runtime_error("optimal weight: target covariance is ill conditioned");
  MatrixXd W = M.inverse();
  return 0.5 * (W + W.transpose());
}

}  // namespace detail

// minimizes asymptotic variance (any delta >= 1/2)
inline MatrixXd w_av(const LimitInputs& L) {
  return detail::optimal_weight(L, omega_matrix(L.Pi_star));
}

// minimizes asymptotic mean squared error at the knife edge delta = 1/2
inline MatrixXd w_amse(const LimitInputs& L) {
  return detail::optimal_weight(L, omega_matrix(L.Pi_star) + L.B * L.B.transpose());
}

struct LemmaA3Residuals {
  double identity1 = 0.0;  // d ln P / d theta  vs  (dP/dtheta)' Phi Sigma
  double identity2 = 0.0;  // J*-weighted score outer product  vs  (dP/dtheta)' Phi dP/dtheta
};

// numerical check of the two score identities linking the log-CCP derivatives
// to the CCP derivatives through Phi and Sigma
inline LemmaA3Residuals lemma_a3_check(const ModelSpec& model, const VectorXd& alpha,
                                       const VectorXd& theta_f, const VectorXd& m_star,
                                       double step_scale = 1e-4) {
  validate_model(model);
  const int A = model.n_actions, X = model.n_states, da = static_cast<int>(alpha.size());
  VectorXd theta(da + theta_f.size());
  theta << alpha, theta_f;
  FixedPointOptions tight;
  tight.tol = 1e-12;
  tight.max_iter = 20000;

  auto solve_at = [&](const VectorXd& th) {
    VectorXd al = th.head(da), tf = th.tail(th.size() - da);
    return solve_ccp_fixed_point(model, al, make_kernel(model, tf), uniform_ccp(model), tight).ccp;
  };
  auto log_full = [&](const VectorXd& th) {
    CCPMatrix P = solve_at(th);
    VectorXd v(A * X);
    for (int x = 0; x < X; ++x)
      for (int a = 0; a < A; ++a) v[x * A + a] = std::log(P.probs(a, x));
    return v;
  };
  auto reduced_at = [&](const VectorXd& th) {
    ModelSpec mm = model;
    return VectorXd(to_reduced(mm, solve_at(th)));
  };

  MatrixXd Llog = fd_jacobian_richardson(log_full, theta, step_scale);  // (AX) x d
  MatrixXd D = fd_jacobian_richardson(reduced_at, theta, step_scale);   // reduced x d

  CCPMatrix P = solve_at(theta);
  MatrixXd Phi = phi_matrix(P, m_star);
  MatrixXd S = sigma_matrix(P, m_star);

  LemmaA3Residuals r;
  MatrixXd lhs1 = Llog.transpose();                      // d x (AX)
  MatrixXd rhs1 = D.transpose() * Phi * S;               // d x (AX)
  r.identity1 = (lhs1 - rhs1).cwiseAbs().maxCoeff();

  VectorXd Jstar(A * X);
  for (int x = 0; x < X; ++x)
    for (int a = 0; a < A; ++a) Jstar[x * A + a] = P.probs(a, x) * m_star[x];
  MatrixXd lhs2 = MatrixXd::Zero(theta.size(), theta.size());
  for (int i = 0; i < A * X; ++i)
    lhs2 += Jstar[i] * Llog.row(i).transpose() * Llog.row(i);
  MatrixXd rhs2 = D.transpose() * Phi * D;
  r.identity2 = (lhs2 - rhs2).cwiseAbs().maxCoeff();
  return r;
}

}  // namespace ddc
