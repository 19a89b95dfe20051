#pragma once
// K-stage policy-iteration estimators. Each stage maximizes a sample criterion
// in alpha holding the CCP argument fixed, then advances the CCP through Psi:
//   alpha_k = argmax Q_n(alpha, theta_f_hat, P_{k-1}),  P_k = Psi(P_{k-1}).
// Utility is linear in alpha and varphi is affine in it, so each stage reduces
// to multinomial logit shapes: v(x,a; alpha) = c0(x,a) + C1(x,a)'alpha with
// c0, C1 computed from (theta_f_hat, P_{k-1}) by one linear solve.
#include "ddc/dgp.hpp"
#include "ddc/model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace ddc {

struct SampleAnalogues {
  JointDist pi_hat;
  CCPMatrix p_hat;  // conditional frequencies, clamped into the open simplex
  TransitionKernel f_hat;
  VectorXd m_hat;                      // state frequencies
  VectorXd j_hat;                      // (a,x) frequencies, a inner
  std::vector<std::uint8_t> empty_ax;  // 1 where the (a,x) cell had no observations
  bool any_empty = false;
};

inline SampleAnalogues sample_analogues(const ModelSpec& m, const Dataset& ds,
                                        double clamp_eps = 1e-6) {
  const int A = m.n_actions, X = m.n_states;
  SampleAnalogues s;
  s.pi_hat.n_actions = A;
  s.pi_hat.n_states = X;
  s.pi_hat.pi = VectorXd::Zero(A * X * X);
  for (int i = 0; i < ds.n; ++i) s.pi_hat.pi[s.pi_hat.index(ds.a[i], ds.x[i], ds.xp[i])] += 1.0;
  s.pi_hat.pi /= ds.n;

  s.j_hat = j_of(s.pi_hat);
  s.m_hat = marginal_of(s.pi_hat);
  s.empty_ax.assign(A * X, 0);

  // conditional choice frequencies; unvisited states get the uniform fill,
  // boundary frequencies are clamped into the interior so ln P stays finite
  s.p_hat.probs.resize(A, X);
  for (int x = 0; x < X; ++x) {
    if (s.m_hat[x] <= 0.0) {
      s.p_hat.probs.col(x).setConstant(1.0 / A);
      continue;
    }
    for (int a = 0; a < A; ++a) {
      double p = s.j_hat[x * A + a] / s.m_hat[x];
      s.p_hat.probs(a, x) = std::min(std::max(p, clamp_eps), 1.0 - clamp_eps);
    }
    s.p_hat.probs.col(x) /= s.p_hat.probs.col(x).sum();
  }

  s.f_hat.assign(A, MatrixXd::Zero(X, X));
  for (int x = 0; x < X; ++x)
    for (int a = 0; a < A; ++a) {
      double cell = s.j_hat[x * A + a];
      if (cell <= 0.0) {
        s.empty_ax[x * A + a] = 1;
        s.any_empty = true;
        s.f_hat[a].row(x).setConstant(1.0 / X);
        continue;
      }
      for (int xp = 0; xp < X; ++xp) s.f_hat[a](x, xp) = s.pi_hat(a, x, xp) / cell;
    }
  return s;
}

struct FirstStepResult {
  VectorXd theta_f;
  bool ok = false;
};

// bus renewal probability: share of keep decisions below the top state whose
// mileage did not advance
inline FirstStepResult first_step_theta_f_bus(const ModelSpec& m, const JointDist& pi_hat) {
  double num = 0.0, den = 0.0;
  for (int x = 0; x + 1 < m.n_states; ++x) {
    num += pi_hat(0, x, x);
    for (int xp = 0; xp < m.n_states; ++xp) den += pi_hat(0, x, xp);
  }
  FirstStepResult r;
  if (den <= 0.0) return r;
  r.theta_f = VectorXd::Constant(1, num / den);
  r.ok = true;
  return r;
}

inline FirstStepResult first_step_theta_f_bus(const ModelSpec& m, const SampleAnalogues& s) {
  return first_step_theta_f_bus(m, s.pi_hat);
}

// gradient of the ratio above with respect to the joint distribution (row over
// the (a,x,x') layout), by the quotient rule
inline Eigen::RowVectorXd bus_first_step_gradient(const ModelSpec& m, const JointDist& pi) {
  int sz = m.n_actions * m.n_states * m.n_states;
  Eigen::RowVectorXd srow = Eigen::RowVectorXd::Zero(sz), trow = Eigen::RowVectorXd::Zero(sz);
  double num = 0.0, den = 0.0;
  for (int x = 0; x + 1 < m.n_states; ++x) {
    srow[pi.index(0, x, x)] = 1.0;
    num += pi(0, x, x);
    for (int xp = 0; xp < m.n_states; ++xp) {
      trow[pi.index(0, x, xp)] = 1.0;
      den += pi(0, x, xp);
    }
  }
  return (srow - (num / den) * trow) / den;
}

struct WeightSpec {
  enum class Kind { Identity, Fixed } kind = Kind::Identity;
  MatrixXd W;

  static WeightSpec identity() { return {}; }
  static WeightSpec fixed(MatrixXd W) { return {Kind::Fixed, std::move(W)}; }
};

inline MatrixXd materialize_weight(const WeightSpec& w, int dim) {
  if (w.kind == WeightSpec::Kind::Identity) return MatrixXd::Identity(dim, dim);
  if (w.W.rows() != dim || w.W.cols() != dim)
    throw std::invalid_argument("weight: wrong dimension");
  if ((w.W - w.W.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::domain_error("weight: matrix must be symmetric");
  if (w.W.llt().info() != Eigen::Success)
    throw std::domain_error("weight: matrix must be positive definite");
  return w.W;
}

// standalone criterion values (the stage solvers use the linearized forms)
inline double pseudo_loglik(const ModelSpec& m, const VectorXd& alpha, const VectorXd& theta_f,
                            const CCPMatrix& P, const VectorXd& j_hat) {
  TransitionKernel F = make_kernel(m, theta_f);
  MatrixXd v = choice_values(m, alpha, F, varphi_map(m, alpha, F, P));
  double q = 0.0;
  for (int x = 0; x < m.n_states; ++x) {
    double lse = logsumexp(v.row(x));
    for (int a = 0; a < m.n_actions; ++a) q += j_hat[x * m.n_actions + a] * (v(x, a) - lse);
  }
  return q;
}

inline double md_criterion(const ModelSpec& m, const VectorXd& alpha, const VectorXd& theta_f,
                           const CCPMatrix& P, const ReducedCCPVector& p_hat_reduced,
                           const MatrixXd& W) {
  ReducedCCPVector e = p_hat_reduced - to_reduced(m, psi_map(m, alpha, theta_f, P));
  return -e.dot(W * e);
}

// v(x,a; alpha) = c0(x,a) + C1[a].row(x) . alpha, exact given (theta_f, P)
struct StageLinearization {
  MatrixXd c0;                  // |X| x |A|
  std::vector<MatrixXd> C1;     // per action, |X| x d_alpha
};

inline StageLinearization make_stage_linearization(const ModelSpec& m, const TransitionKernel& F,
                                                   const CCPMatrix& P) {
  validate_ccp(m, P);
  const int X = m.n_states, A = m.n_actions, d = m.utility.d_alpha();
  MatrixXd Fbar = MatrixXd::Zero(X, X), B1 = MatrixXd::Zero(X, d);
  VectorXd h = VectorXd::Zero(X);
  for (int a = 0; a < A; ++a) {
    VectorXd pa = P.probs.row(a).transpose();
    Fbar += pa.asDiagonal() * F[a];
    B1 += pa.asDiagonal() * m.utility.features[a];
    h += pa.cwiseProduct((kEulerGamma - pa.array().log()).matrix());
    if (m.utility.extra.size() != 0) h += pa.cwiseProduct(m.utility.extra.col(a));
  }
  Eigen::PartialPivLU<MatrixXd> lu(MatrixXd::Identity(X, X) - m.beta * Fbar);
  VectorXd m0 = lu.solve(h);
  MatrixXd M1 = lu.solve(B1);
  // Both solves scale like 1/(1-beta); recentering shifts every choice value
  // by the same amount per column of M1 (logit-invariant) and keeps the
  // F[a] * m0 products from rounding at that scale.
  m0.array() -= m0.mean();
  M1.rowwise() -= M1.colwise().mean();

  StageLinearization lin;
  lin.c0.resize(X, A);
  lin.C1.resize(A);
  for (int a = 0; a < A; ++a) {
    lin.c0.col(a) = m.beta * (F[a] * m0);
    if (m.utility.extra.size() != 0) lin.c0.col(a) += m.utility.extra.col(a);
    lin.C1[a] = m.utility.features[a] + m.beta * (F[a] * M1);
  }
  return lin;
}

inline CCPMatrix psi_from_linearization(const StageLinearization& lin, const VectorXd& alpha) {
  MatrixXd v = lin.c0;
  for (std::size_t a = 0; a < lin.C1.size(); ++a) v.col(a) += lin.C1[a] * alpha;
  return lambda_map(v);
}

struct StageOptions {
  int max_iter = 500;
  double grad_tol = 1e-9;
};

struct StageResult {
  VectorXd alpha;
  double criterion = 0.0;
  int iterations = 0;
  bool converged = false;
  bool at_bound = false;
};

namespace detail {

// multinomial logit log likelihood with weights j_hat; globally concave
inline StageResult ml_newton(const ModelSpec& m, const StageLinearization& lin,
                             const VectorXd& j_hat, VectorXd alpha, const StageOptions& opt) {
  const int X = m.n_states, A = m.n_actions, d = m.utility.d_alpha();
  auto loglik = [&](const VectorXd& al) {
    MatrixXd v = lin.c0;
    for (int a = 0; a < A; ++a) v.col(a) += lin.C1[a] * al;
    double q = 0.0;
    for (int x = 0; x < X; ++x) {
      double lse = logsumexp(v.row(x));
      for (int a = 0; a < A; ++a) q += j_hat[x * A + a] * (v(x, a) - lse);
    }
    return q;
  };
  StageResult out;
  double f = loglik(alpha);
  for (int it = 1; it <= opt.max_iter; ++it) {
    out.iterations = it;
    CCPMatrix Psi = psi_from_linearization(lin, alpha);
    VectorXd g = VectorXd::Zero(d);
    MatrixXd H = MatrixXd::Zero(d, d);
    for (int x = 0; x < X; ++x) {
      VectorXd cbar = VectorXd::Zero(d);
      MatrixXd sq = MatrixXd::Zero(d, d);
      for (int a = 0; a < A; ++a) {
        VectorXd c1 = lin.C1[a].row(x).transpose();
        g += j_hat[x * A + a] * c1;
        cbar += Psi.probs(a, x) * c1;
        sq += Psi.probs(a, x) * c1 * c1.transpose();
      }
      double mx = 0.0;
      for (int a = 0; a < A; ++a) mx += j_hat[x * A + a];
      g -= mx * cbar;
      H -= mx * (sq - cbar * cbar.transpose());
    }
    if (g.cwiseAbs().maxCoeff() < opt.grad_tol) {
      out.converged = true;
      break;
    }
    VectorXd step = (-H).ldlt().solve(g);
    // full Newton step is accepted while the objective is flat to machine
    // precision (terminal quadratic phase); otherwise backtrack for ascent
    double flat = 1e-12 * (1.0 + std::abs(f));
    double s = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half) {
      double fnew = loglik(alpha + s * step);
      if (fnew > f || (half == 0 && fnew >= f - flat)) {
        alpha += s * step;
        f = fnew;
        moved = true;
        break;
      }
      s *= 0.5;
    }
    if (!moved) break;
  }
  out.alpha = alpha;
  out.criterion = f;
  return out;
}

// weighted least squares in the softmax probabilities; Gauss-Newton with
// backtracking, warm started from the ML solution
inline StageResult md_gauss_newton(const ModelSpec& m, const StageLinearization& lin,
                                   const ReducedCCPVector& target, const MatrixXd& W,
                                   VectorXd alpha, const StageOptions& opt) {
  const int X = m.n_states, A = m.n_actions, d = m.utility.d_alpha();
  auto resid = [&](const VectorXd& al) {
    return ReducedCCPVector(target - to_reduced(m, psi_from_linearization(lin, al)));
  };
  StageResult out;
  VectorXd e = resid(alpha);
  double f = e.dot(W * e);
  for (int it = 1; it <= opt.max_iter; ++it) {
    out.iterations = it;
    CCPMatrix Psi = psi_from_linearization(lin, alpha);
    MatrixXd J(reduced_dim(m), d);  // d Psi_reduced / d alpha'
    for (int x = 0; x < X; ++x) {
      VectorXd cbar = VectorXd::Zero(d);
      for (int a = 0; a < A; ++a) cbar += Psi.probs(a, x) * lin.C1[a].row(x).transpose();
      for (int a = 0; a < A - 1; ++a)
        J.row(reduced_index(m, a, x)) =
            Psi.probs(a, x) * (lin.C1[a].row(x) - cbar.transpose());
    }
    VectorXd g = -2.0 * J.transpose() * (W * e);  // gradient of e'We
    if (g.cwiseAbs().maxCoeff() < opt.grad_tol) {
      out.converged = true;
      break;
    }
    MatrixXd JtWJ = J.transpose() * W * J;
    VectorXd step = (JtWJ + 1e-12 * MatrixXd::Identity(d, d)).ldlt().solve(J.transpose() * W * e);
    double flat = 1e-12 * (1.0 + f);
    double s = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half) {
      VectorXd enew = resid(alpha + s * step);
      double fnew = enew.dot(W * enew);
      if (fnew < f || (half == 0 && fnew <= f + flat)) {
        alpha += s * step;
        e = enew;
        f = fnew;
        moved = true;
        break;
      }
      s *= 0.5;
    }
    if (!moved) break;  // no descent left at machine precision
  }
  out.alpha = alpha;
  out.criterion = -f;
  return out;
}

inline void project_box(StageResult& r, double bound) {
  for (Eigen::Index j = 0; j < r.alpha.size(); ++j)
    if (std::abs(r.alpha[j]) > bound) {
      r.alpha[j] = std::clamp(r.alpha[j], -bound, bound);
      r.at_bound = true;
    }
}

}  // namespace detail

enum class EstimatorKind { KML, KMD };

// one stage: maximize the chosen criterion in alpha at fixed (theta_f, P)
inline StageResult maximize_stage(const ModelSpec& m, const TransitionKernel& F,
                                  const CCPMatrix& P_prev, EstimatorKind kind,
                                  const VectorXd& j_hat, const ReducedCCPVector& p_hat_reduced,
                                  const MatrixXd& W, const VectorXd& warm,
                                  const StageOptions& opt = {}) {
  StageLinearization lin = make_stage_linearization(m, F, P_prev);
  StageResult r = detail::ml_newton(m, lin, j_hat, warm, opt);
  if (kind == EstimatorKind::KMD) {
    bool ml_ok = r.converged;
    r = detail::md_gauss_newton(m, lin, p_hat_reduced, W, r.alpha, opt);
    r.converged = r.converged && ml_ok;
  }
  detail::project_box(r, m.utility.alpha_bound);
  return r;
}

struct EstimateOptions {
  EstimatorKind kind = EstimatorKind::KML;
  WeightSpec weight;
  int K = 1;
  StageOptions stage;
  double interior_eps = 1e-12;  // guard for Psi iterates before taking logs
  std::function<FirstStepResult(const ModelSpec&, const SampleAnalogues&)> first_step;
};

struct EstimateTrace {
  VectorXd theta_f_hat;
  std::vector<VectorXd> alpha_stages;     // K entries
  std::vector<CCPMatrix> p_stages;        // K+1 entries, P_0 .. P_K
  std::vector<double> criterion_values;   // per stage
  std::vector<bool> stage_converged;
  bool first_step_ok = true;
  bool converged = true;   // all stages converged
  bool at_bound = false;
  bool interior_clamped = false;
};

inline CCPMatrix clamp_interior(const CCPMatrix& P, double eps, bool* touched = nullptr) {
  CCPMatrix out = P;
  for (Eigen::Index x = 0; x < out.probs.cols(); ++x)
    for (Eigen::Index a = 0; a < out.probs.rows(); ++a)
      if (out.probs(a, x) < eps) {
        out.probs(a, x) = eps;
        if (touched) *touched = true;
      }
  for (Eigen::Index x = 0; x < out.probs.cols(); ++x) out.probs.col(x) /= out.probs.col(x).sum();
  return out;
}

inline EstimateTrace k_stage_estimate(const ModelSpec& m, const SampleAnalogues& s,
                                      const EstimateOptions& opt) {
  validate_model(m);
  EstimateTrace t;
  if (opt.first_step) {
    FirstStepResult fs = opt.first_step(m, s);
    t.first_step_ok = fs.ok;
    if (!fs.ok) {
      t.converged = false;
      return t;
    }
    t.theta_f_hat = fs.theta_f;
  } else {
    if (m.transition.d_theta_f != 0)
      throw std::invalid_argument("k_stage_estimate: model needs a first-step estimator");
    t.theta_f_hat = VectorXd(0);
  }
  TransitionKernel F = make_kernel(m, t.theta_f_hat);
  MatrixXd W = materialize_weight(opt.weight, reduced_dim(m));
  ReducedCCPVector target = to_reduced(m, s.p_hat);

  CCPMatrix P = s.p_hat;
  t.p_stages.push_back(P);
  VectorXd warm = VectorXd::Zero(m.utility.d_alpha());
  for (int k = 1; k <= opt.K; ++k) {
    StageResult r = maximize_stage(m, F, P, opt.kind, s.j_hat, target, W, warm, opt.stage);
    t.alpha_stages.push_back(r.alpha);
    t.criterion_values.push_back(r.criterion);
    t.stage_converged.push_back(r.converged);
    t.converged = t.converged && r.converged;
    t.at_bound = t.at_bound || r.at_bound;
    P = clamp_interior(psi_map(m, r.alpha, F, P), opt.interior_eps, &t.interior_clamped);
    t.p_stages.push_back(P);
    warm = r.alpha;
  }
  return t;
}

}  // namespace ddc
