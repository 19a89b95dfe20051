#pragma once
// Single-agent dynamic discrete choice model with additive extreme value
// type I shocks, and the conditional-choice-probability operators built on it:
//   lambda_map   Lambda: choice values -> CCPs (multinomial logit)
//   varphi_map   varphi: CCPs -> ex-ante value function (Hotz-Miller inversion)
//   psi_map      Psi = Lambda(choice_values(varphi(P))), the policy operator
// The model CCP P_theta is the unique fixed point of Psi, and d Psi / d P = 0
// there, which is what makes fixed-point iteration on Psi converge so fast.
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kEulerGamma = 0.5772156649015328606;

// kernel[a](x, x') = prob of next state x' given current x and action a (0-based)
using TransitionKernel = std::vector<MatrixXd>;

struct TransitionSpec {
  int d_theta_f = 0;
  VectorXd theta_f_lo, theta_f_hi;  // admissible box, size d_theta_f
  std::function<TransitionKernel(const VectorXd&)> kernel;
};

struct UtilitySpec {
  // features[a] is |X| x d_alpha; u(x,a) = features[a].row(x) * alpha + extra(x,a)
  std::vector<MatrixXd> features;
  MatrixXd extra;  // |X| x |A| additive known term; empty means zero
  double alpha_bound = 10.0;

  int d_alpha() const { return features.empty() ? 0 : static_cast<int>(features[0].cols()); }
};

struct ModelSpec {
  int n_states = 0;
  int n_actions = 0;
  double beta = 0.0;
  UtilitySpec utility;
  TransitionSpec transition;
};

// CCP matrix: probs(a, x) = P(a|x); columns are distributions over actions
struct CCPMatrix {
  MatrixXd probs;
};

using ReducedCCPVector = VectorXd;  // P(a|x), a = 1..|A|-1 inner, x outer
using ValueVector = VectorXd;       // ex-ante value V(x)

inline int reduced_dim(const ModelSpec& m) { return (m.n_actions - 1) * m.n_states; }
inline int reduced_index(const ModelSpec& m, int a, int x) { return x * (m.n_actions - 1) + a; }

inline void validate_model(const ModelSpec& m) {
  if (m.n_states < 1) throw std::invalid_argument("model: n_states must be >= 1");
  if (m.n_actions < 2) throw std::invalid_argument("model: n_actions must be >= 2");
  if (!(m.beta >= 0.0 && m.beta < 1.0)) throw std::invalid_argument("model: beta must be in [0,1)");
  if (static_cast<int>(m.utility.features.size()) != m.n_actions)
    throw std::invalid_argument("model: need one feature matrix per action");
  for (const auto& f : m.utility.features)
    if (f.rows() != m.n_states || f.cols() != m.utility.d_alpha())
      throw std::invalid_argument("model: feature matrix has wrong shape");
  if (m.utility.extra.size() != 0 &&
      (m.utility.extra.rows() != m.n_states || m.utility.extra.cols() != m.n_actions))
    throw std::invalid_argument("model: extra utility term has wrong shape");
}

// builds the kernel at theta_f and checks every row is a distribution
inline TransitionKernel make_kernel(const ModelSpec& m, const VectorXd& theta_f) {
  if (theta_f.size() != m.transition.d_theta_f)
    throw std::invalid_argument("transition: theta_f has wrong dimension");
  for (int j = 0; j < m.transition.d_theta_f; ++j)
    if (theta_f[j] < m.transition.theta_f_lo[j] || theta_f[j] > m.transition.theta_f_hi[j])
      throw std::domain_error("transition: theta_f outside admissible box");
  TransitionKernel F = m.transition.kernel(theta_f);
  if (static_cast<int>(F.size()) != m.n_actions)
    throw std::invalid_argument("transition: kernel must return one matrix per action");
  for (int a = 0; a < m.n_actions; ++a) {
    if (F[a].rows() != m.n_states || F[a].cols() != m.n_states)
      throw std::invalid_argument("transition: kernel matrix has wrong shape");
    for (int x = 0; x < m.n_states; ++x) {
      if (F[a].row(x).minCoeff() < -1e-12)
        throw std::domain_error("transition: negative probability in kernel");
      if (std::abs(F[a].row(x).sum() - 1.0) > 1e-12)
        throw std::domain_error("transition: kernel row does not sum to 1");
    }
  }
  return F;
}

inline void validate_ccp(const ModelSpec& m, const CCPMatrix& P, bool require_interior = true) {
  if (P.probs.rows() != m.n_actions || P.probs.cols() != m.n_states)
    throw std::invalid_argument("ccp: wrong shape");
  for (int x = 0; x < m.n_states; ++x) {
    if (std::abs(P.probs.col(x).sum() - 1.0) > 1e-10)
      throw std::domain_error("ccp: column does not sum to 1");
    for (int a = 0; a < m.n_actions; ++a) {
      double p = P.probs(a, x);
      if (require_interior ? (p <= 0.0 || p >= 1.0) : (p < 0.0 || p > 1.0))
        throw std::domain_error("ccp: probability outside the open interval (0,1)");
    }
  }
}

inline CCPMatrix uniform_ccp(const ModelSpec& m) {
  CCPMatrix P;
  P.probs = MatrixXd::Constant(m.n_actions, m.n_states, 1.0 / m.n_actions);
  return P;
}

inline ReducedCCPVector to_reduced(const ModelSpec& m, const CCPMatrix& P) {
  ReducedCCPVector r(reduced_dim(m));
  for (int x = 0; x < m.n_states; ++x)
    for (int a = 0; a < m.n_actions - 1; ++a) r[reduced_index(m, a, x)] = P.probs(a, x);
  return r;
}

inline CCPMatrix from_reduced(const ModelSpec& m, const ReducedCCPVector& r) {
  CCPMatrix P;
  P.probs.resize(m.n_actions, m.n_states);
  for (int x = 0; x < m.n_states; ++x) {
    double s = 0.0;
    for (int a = 0; a < m.n_actions - 1; ++a) {
      P.probs(a, x) = r[reduced_index(m, a, x)];
      s += P.probs(a, x);
    }
    P.probs(m.n_actions - 1, x) = 1.0 - s;  // last action absorbs the remainder
  }
  return P;
}

// u(x,a) laid out |X| x |A|
inline MatrixXd utility_matrix(const ModelSpec& m, const VectorXd& alpha) {
  if (alpha.size() != m.utility.d_alpha())
    throw std::invalid_argument("utility: alpha has wrong dimension");
  MatrixXd u(m.n_states, m.n_actions);
  for (int a = 0; a < m.n_actions; ++a) u.col(a) = m.utility.features[a] * alpha;
  if (m.utility.extra.size() != 0) u += m.utility.extra;
  return u;
}

// v(x,a) = u(x,a) + beta * sum_x' f(x'|x,a) V(x'), laid out |X| x |A|
inline MatrixXd choice_values(const ModelSpec& m, const VectorXd& alpha,
                              const TransitionKernel& F, const ValueVector& V) {
  MatrixXd v = utility_matrix(m, alpha);
  for (int a = 0; a < m.n_actions; ++a) v.col(a) += m.beta * (F[a] * V);
  return v;
}

inline MatrixXd choice_values(const ModelSpec& m, const VectorXd& alpha,
                              const VectorXd& theta_f, const ValueVector& V) {
  return choice_values(m, alpha, make_kernel(m, theta_f), V);
}

// Lambda: multinomial logit probabilities column by column, max-subtracted so
// large values cannot overflow
inline CCPMatrix lambda_map(const MatrixXd& v) {
  CCPMatrix P;
  P.probs.resize(v.cols(), v.rows());
  for (int x = 0; x < v.rows(); ++x) {
    double mx = v.row(x).maxCoeff();
    Eigen::ArrayXd e = (v.row(x).array() - mx).exp();
    P.probs.col(x) = (e / e.sum()).matrix();
  }
  return P;
}

// log sum exp of a row vector, max-subtracted
inline double logsumexp(const Eigen::Ref<const Eigen::RowVectorXd>& v) {
  double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

// varphi: value implied by CCPs, solving (I - beta Fbar_P) V = ubar_P with
//   ubar_P(x) = sum_a P(a|x) [u(x,a) + gamma - ln P(a|x)]
//   Fbar_P(x,x') = sum_a P(a|x) f(x'|x,a)
inline ValueVector varphi_map(const ModelSpec& m, const VectorXd& alpha,
                              const TransitionKernel& F, const CCPMatrix& P) {
  validate_ccp(m, P);
  MatrixXd u = utility_matrix(m, alpha);
  MatrixXd Fbar = MatrixXd::Zero(m.n_states, m.n_states);
  VectorXd ubar = VectorXd::Zero(m.n_states);
  for (int a = 0; a < m.n_actions; ++a) {
    Fbar += P.probs.row(a).transpose().asDiagonal() * F[a];
    ubar += P.probs.row(a).transpose().cwiseProduct(
        u.col(a) + (kEulerGamma - P.probs.row(a).transpose().array().log()).matrix());
  }
  MatrixXd A = MatrixXd::Identity(m.n_states, m.n_states) - m.beta * Fbar;
  return A.partialPivLu().solve(ubar);
}

inline ValueVector varphi_map(const ModelSpec& m, const VectorXd& alpha,
                              const VectorXd& theta_f, const CCPMatrix& P) {
  return varphi_map(m, alpha, make_kernel(m, theta_f), P);
}

// Psi: best response in CCP space to the value implied by P. The value is
// centered first: V has scale 1/(1-beta), and removing the mean (which shifts
// every choice value equally, so the logit is unchanged) keeps rounding noise
// in the F_a * V products at the scale of the value differences instead.
inline CCPMatrix psi_map(const ModelSpec& m, const VectorXd& alpha,
                         const TransitionKernel& F, const CCPMatrix& P) {
  ValueVector V = varphi_map(m, alpha, F, P);
  V.array() -= V.mean();
  return lambda_map(choice_values(m, alpha, F, V));
}

inline CCPMatrix psi_map(const ModelSpec& m, const VectorXd& alpha,
                         const VectorXd& theta_f, const CCPMatrix& P) {
  return psi_map(m, alpha, make_kernel(m, theta_f), P);
}

struct FixedPointResult {
  CCPMatrix ccp;
  ValueVector value;  // varphi at the fixed point
  int iterations = 0;
  double residual = std::numeric_limits<double>::infinity();  // last sup-norm step
  bool converged = false;
};

struct FixedPointOptions {
  double tol = 1e-12;
  int max_iter = 10000;
  bool throw_on_failure = true;
};

inline FixedPointResult solve_ccp_fixed_point(const ModelSpec& m, const VectorXd& alpha,
                                              const TransitionKernel& F,
                                              const CCPMatrix& start,
                                              const FixedPointOptions& opt = {}) {
  validate_model(m);
  FixedPointResult out;
  out.ccp = start;
  for (int it = 1; it <= opt.max_iter; ++it) {
    CCPMatrix next = psi_map(m, alpha, F, out.ccp);
    out.residual = (next.probs - out.ccp.probs).cwiseAbs().maxCoeff();
    out.ccp = next;
    out.iterations = it;
    if (out.residual < opt.tol) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged && opt.throw_on_failure)
    throw std::runtime_error("solve_ccp_fixed_point: no convergence after " +
                             std::to_string(opt.max_iter) + " iterations");
  out.value = varphi_map(m, alpha, F, out.ccp);
  return out;
}

inline FixedPointResult solve_ccp_fixed_point(const ModelSpec& m, const VectorXd& alpha,
                                              const VectorXd& theta_f,
                                              const FixedPointOptions& opt = {}) {
  return solve_ccp_fixed_point(m, alpha, make_kernel(m, theta_f), uniform_ccp(m), opt);
}

struct ValueIterationResult {
  ValueVector value;
  int iterations = 0;
  double last_change = std::numeric_limits<double>::infinity();
  bool converged = false;
};

// plain value iteration on V(x) = gamma + logsumexp_a v(x,a); independent of
// the CCP fixed-point path, so the two can cross-check each other.
// Stops when the sup-norm change is below tol*(1-beta)/beta, which bounds the
// sup-norm distance to the true V by tol.
inline ValueIterationResult solve_value_function(const ModelSpec& m, const VectorXd& alpha,
                                                 const TransitionKernel& F, double tol = 1e-8,
                                                 int max_iter = 2000000) {
  validate_model(m);
  ValueIterationResult out;
  MatrixXd u = utility_matrix(m, alpha);
  VectorXd V = VectorXd::Zero(m.n_states);
  double threshold = m.beta > 0.0 ? tol * (1.0 - m.beta) / m.beta
                                  : std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iter; ++it) {
    MatrixXd v = u;
    for (int a = 0; a < m.n_actions; ++a) v.col(a) += m.beta * (F[a] * V);
    VectorXd Vnext(m.n_states);
    for (int x = 0; x < m.n_states; ++x) Vnext[x] = kEulerGamma + logsumexp(v.row(x));
    out.last_change = (Vnext - V).cwiseAbs().maxCoeff();
    V = Vnext;
    out.iterations = it;
    if (out.last_change < threshold) {
      out.converged = true;
      break;
    }
  }
  if (!out.converged)
    throw std::runtime_error("solve_value_function: no convergence after " +
                             std::to_string(max_iter) + " iterations");
  out.value = V;
  return out;
}

inline ValueIterationResult solve_value_function(const ModelSpec& m, const VectorXd& alpha,
                                                 const VectorXd& theta_f, double tol = 1e-8,
                                                 int max_iter = 2000000) {
  return solve_value_function(m, alpha, make_kernel(m, theta_f), tol, max_iter);
}

// d Psi / d P in reduced coordinates by central differences; perturbing a
// reduced entry moves the matching amount out of the last action's probability
inline MatrixXd jacobian_psi_wrt_P(const ModelSpec& m, const VectorXd& alpha,
                                   const TransitionKernel& F, const CCPMatrix& P,
                                   double h = 1e-6) {
  int d = reduced_dim(m);
  MatrixXd J(d, d);
  ReducedCCPVector base = to_reduced(m, P);
  for (int j = 0; j < d; ++j) {
    ReducedCCPVector rp = base, rm = base;
    rp[j] += h;
    rm[j] -= h;
    ReducedCCPVector fp = to_reduced(m, psi_map(m, alpha, F, from_reduced(m, rp)));
    ReducedCCPVector fm = to_reduced(m, psi_map(m, alpha, F, from_reduced(m, rm)));
    J.col(j) = (fp - fm) / (2.0 * h);
  }
  return J;
}

// Richardson-extrapolated central difference of a vector-valued function
template <typename F>
inline MatrixXd fd_jacobian_richardson(const F& f, const VectorXd& theta, double step_scale) {
  VectorXd f0 = f(theta);
  MatrixXd J(f0.size(), theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    double h = step_scale * std::max(1.0, std::abs(theta[j]));
    auto central = [&](double hh) {
      VectorXd tp = theta, tm = theta;
      tp[j] += hh;
      tm[j] -= hh;
      return VectorXd(((f(tp) - f(tm)) / (2.0 * hh)).eval());
    };
    VectorXd dh = central(h), dh2 = central(0.5 * h);
    J.col(j) = (4.0 * dh2 - dh) / 3.0;
  }
  return J;
}

// d P_theta / d theta at the fixed point, theta = (alpha, theta_f) stacked.
// Because d Psi / d P vanishes at P_theta, this equals the derivative of
// theta |-> Psi_theta(P) holding P fixed at the solved point, which is what
// gets differenced here (step 1e-6 * max(1,|theta_j|) per coordinate).
inline MatrixXd dP_dtheta(const ModelSpec& m, const VectorXd& alpha, const VectorXd& theta_f,
                          double step_scale = 1e-6) {
  int da = static_cast<int>(alpha.size());
  int df = static_cast<int>(theta_f.size());
  CCPMatrix Pstar = solve_ccp_fixed_point(m, alpha, theta_f).ccp;
  MatrixXd D(reduced_dim(m), da + df);
  for (int j = 0; j < da + df; ++j) {
    VectorXd ap = alpha, am = alpha, fp = theta_f, fm = theta_f;
    double v = j < da ? alpha[j] : theta_f[j - da];
    double h = step_scale * std::max(1.0, std::abs(v));
    if (j < da) {
      ap[j] += h;
      am[j] -= h;
    } else {
      fp[j - da] += h;
      fm[j - da] -= h;
    }
    ReducedCCPVector up = to_reduced(m, psi_map(m, ap, fp, Pstar));
    ReducedCCPVector dn = to_reduced(m, psi_map(m, am, fm, Pstar));
    D.col(j) = (up - dn) / (2.0 * h);
  }
  return D;
}

}  // namespace ddc
