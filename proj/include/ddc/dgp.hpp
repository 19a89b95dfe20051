#pragma once
// Data generating processes: the correctly specified model plus three drifting
// deviations whose size shrinks like tau_n = c * n^(-delta). Each design yields
// a joint distribution Pi_n over (a, x, x') from which i.i.d. cross sections
// are drawn.
#include "ddc/model.hpp"
#include "ddc/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <variant>
#include <vector>

namespace ddc {

// Pi(a, x, x') stored with a innermost, then x, then x' outermost, so the
// marginalization over x' is a stack of identity blocks.
struct JointDist {
  int n_actions = 0, n_states = 0;
  VectorXd pi;

  int index(int a, int x, int xp) const { return a + n_actions * (x + n_states * xp); }
  double operator()(int a, int x, int xp) const { return pi[index(a, x, xp)]; }
};

struct Dataset {
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<int> a, x, xp;  // 0-based
};

struct CorrectSpec {
  VectorXd theta_u;
};
struct QuadraticUtility {
  VectorXd theta_u;
  double c = -0.025;
  int action = 0;  // which action's utility picks up the squared-index drift
};
struct Mixture {
  VectorXd theta_A, theta_B;  // limit is type A; type-B share is tau_n
};
struct QuantalResponse {
  VectorXd theta_u;
  double c = 10.0;        // temperature tau_n = c * n^(-delta)
  int draws = 200000;     // Monte Carlo draws per state for the shock integral
  std::uint64_t mc_seed = 20240501;
};

struct DesignSpec {
  std::variant<CorrectSpec, QuadraticUtility, Mixture, QuantalResponse> kind;
  double delta = 0.5;
  VectorXd theta_f_true;
  VectorXd marginal;  // m*(x); sums to 1
};

inline const VectorXd& theta_u_limit(const DesignSpec& d) {
  return std::visit(
      [](const auto& k) -> const VectorXd& {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Mixture>)
          return k.theta_A;
        else
          return k.theta_u;
      },
      d.kind);
}

inline double drift_scale(const DesignSpec& d) {
  return std::visit(
      [](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, CorrectSpec>)
          return 0.0;
        else if constexpr (std::is_same_v<T, Mixture>)
          return 1.0;
        else
          return k.c;
      },
      d.kind);
}

// m(x) proportional to 1 + ln(x) over 1-based labels
inline VectorXd marginal_log_spec(int n_states) {
  VectorXd m(n_states);
  for (int x = 0; x < n_states; ++x) m[x] = 1.0 + std::log(x + 1.0);
  return m / m.sum();
}

namespace detail {

// CCP under softmax play at temperature tau of the rational choice values,
// integrated over the additive shocks by Monte Carlo with fixed seed
inline CCPMatrix quantal_ccp(const ModelSpec& m, const MatrixXd& v, double tau, int draws,
                             std::uint64_t seed) {
  SplitMix64 rng(seed);
  CCPMatrix out;
  out.probs = MatrixXd::Zero(m.n_actions, m.n_states);
  VectorXd z(m.n_actions);
  for (int x = 0; x < m.n_states; ++x) {
    for (int r = 0; r < draws; ++r) {
      for (int a = 0; a < m.n_actions; ++a) z[a] = (v(x, a) + rng.next_gumbel()) / tau;
      double mx = z.maxCoeff();
      double denom = (z.array() - mx).exp().sum();
      for (int a = 0; a < m.n_actions; ++a) out.probs(a, x) += std::exp(z[a] - mx) / denom;
    }
    out.probs.col(x) /= draws;
  }
  return out;
}

}  // namespace detail

// CCP actually played at sample size n; n = +infinity returns the limit.
// tau_n = 0 short-circuits to the correctly specified fixed point.
inline CCPMatrix true_ccp(const ModelSpec& model, const DesignSpec& d, double n) {
  validate_model(model);
  double tau = std::isinf(n) ? 0.0 : drift_scale(d) * std::pow(n, -d.delta);
  const VectorXd& alpha = theta_u_limit(d);
  if (tau == 0.0) return solve_ccp_fixed_point(model, alpha, d.theta_f_true).ccp;

  if (const auto* q = std::get_if<QuadraticUtility>(&d.kind)) {
    ModelSpec drifted = model;
    if (drifted.utility.extra.size() == 0)
      drifted.utility.extra = MatrixXd::Zero(model.n_states, model.n_actions);
    // squared 0-based state index; squaring the 1-based label instead differs
    // by an affine term that a theta_u shift absorbs exactly
    for (int x = 0; x < model.n_states; ++x)
      drifted.utility.extra(x, q->action) += tau * double(x) * double(x);
    return solve_ccp_fixed_point(drifted, alpha, d.theta_f_true).ccp;
  }
  if (const auto* mx = std::get_if<Mixture>(&d.kind)) {
    CCPMatrix PA = solve_ccp_fixed_point(model, mx->theta_A, d.theta_f_true).ccp;
    CCPMatrix PB = solve_ccp_fixed_point(model, mx->theta_B, d.theta_f_true).ccp;
    CCPMatrix out;
    out.probs = (1.0 - tau) * PA.probs + tau * PB.probs;
    return out;
  }
  if (const auto* q = std::get_if<QuantalResponse>(&d.kind)) {
    TransitionKernel F = make_kernel(model, d.theta_f_true);
    FixedPointResult fp = solve_ccp_fixed_point(model, alpha, F, uniform_ccp(model));
    MatrixXd v = choice_values(model, alpha, F, fp.value);
    return detail::quantal_ccp(model, v, tau, q->draws, q->mc_seed);
  }
  throw std::logic_error("true_ccp: unhandled design kind");
}

// Pi(a,x,x') = f(x'|x,a) P(a|x) m(x)
inline JointDist assemble_joint(const ModelSpec& model, const TransitionKernel& F,
                                const CCPMatrix& P, const VectorXd& marginal) {
  JointDist J;
  J.n_actions = model.n_actions;
  J.n_states = model.n_states;
  J.pi.resize(model.n_actions * model.n_states * model.n_states);
  for (int xp = 0; xp < model.n_states; ++xp)
    for (int x = 0; x < model.n_states; ++x)
      for (int a = 0; a < model.n_actions; ++a)
        J.pi[J.index(a, x, xp)] = F[a](x, xp) * P.probs(a, x) * marginal[x];
  return J;
}

inline JointDist joint_at_n(const ModelSpec& model, const DesignSpec& d, double n) {
  return assemble_joint(model, make_kernel(model, d.theta_f_true), true_ccp(model, d, n),
                        d.marginal);
}

// recovery identities (marginalizations of Pi)
inline VectorXd marginal_of(const JointDist& J) {
  VectorXd m = VectorXd::Zero(J.n_states);
  for (int xp = 0; xp < J.n_states; ++xp)
    for (int x = 0; x < J.n_states; ++x)
      for (int a = 0; a < J.n_actions; ++a) m[x] += J(a, x, xp);
  return m;
}

inline VectorXd j_of(const JointDist& J) {  // over (a,x), a inner
  VectorXd v = VectorXd::Zero(J.n_actions * J.n_states);
  for (int xp = 0; xp < J.n_states; ++xp)
    for (int x = 0; x < J.n_states; ++x)
      for (int a = 0; a < J.n_actions; ++a) v[x * J.n_actions + a] += J(a, x, xp);
  return v;
}

inline CCPMatrix ccp_of(const JointDist& J) {
  VectorXd jv = j_of(J), m = marginal_of(J);
  CCPMatrix P;
  P.probs.resize(J.n_actions, J.n_states);
  for (int x = 0; x < J.n_states; ++x)
    for (int a = 0; a < J.n_actions; ++a) P.probs(a, x) = jv[x * J.n_actions + a] / m[x];
  return P;
}

// B = c * d Pi / d tau at tau = 0. Mixture: exact, by bilinearity of the
// assembly in P. Quadratic: central differences with a Richardson consistency
// check. Quantal response: the one-sided derivative at tau = 0+ is zero (the
// deviation is second order in tau; see the decay test), and tau < 0 is not a
// valid temperature, so the exact limit 0 is returned.
inline VectorXd bias_direction(const ModelSpec& model, const DesignSpec& d,
                               double fd_step = 1e-4) {
  int sz = model.n_actions * model.n_states * model.n_states;
  if (std::holds_alternative<CorrectSpec>(d.kind) ||
      std::holds_alternative<QuantalResponse>(d.kind))
    return VectorXd::Zero(sz);

  TransitionKernel F = make_kernel(model, d.theta_f_true);
  if (const auto* mx = std::get_if<Mixture>(&d.kind)) {
    CCPMatrix PA = solve_ccp_fixed_point(model, mx->theta_A, F, uniform_ccp(model)).ccp;
    CCPMatrix PB = solve_ccp_fixed_point(model, mx->theta_B, F, uniform_ccp(model)).ccp;
    CCPMatrix diff;
    diff.probs = PB.probs - PA.probs;
    return assemble_joint(model, F, diff, d.marginal).pi;
  }

  const auto* q = std::get_if<QuadraticUtility>(&d.kind);
  const VectorXd& alpha = theta_u_limit(d);
  auto pi_at_tau = [&](double tau) {
    ModelSpec drifted = model;
    if (drifted.utility.extra.size() == 0)
      drifted.utility.extra = MatrixXd::Zero(model.n_states, model.n_actions);
    for (int x = 0; x < model.n_states; ++x)
      drifted.utility.extra(x, q->action) += tau * double(x) * double(x);
    CCPMatrix P = solve_ccp_fixed_point(drifted, alpha, F, uniform_ccp(model)).ccp;
    return assemble_joint(model, F, P, d.marginal).pi;
  };
  VectorXd d1 = (pi_at_tau(fd_step) - pi_at_tau(-fd_step)) / (2.0 * fd_step);
  VectorXd d2 = (pi_at_tau(2.0 * fd_step) - pi_at_tau(-2.0 * fd_step)) / (4.0 * fd_step);
  double scale = std::max(d1.cwiseAbs().maxCoeff(), 1e-12);
  if ((d1 - d2).cwiseAbs().maxCoeff() > 0.01 * scale)
    throw std::runtime_error("bias_direction: finite-difference estimates disagree by > 1%");
  return drift_scale(d) * d1;
}

// i.i.d. draws from Pi by inverse CDF over the flattened table
inline Dataset sample_dataset(const JointDist& J, int n, std::uint64_t seed) {
  std::vector<double> cum(J.pi.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < J.pi.size(); ++i) {
    acc += J.pi[i];
    cum[i] = acc;
  }
  if (std::abs(acc - 1.0) > 1e-12)
    throw std::domain_error("sample_dataset: joint distribution does not sum to 1");

  Dataset ds;
  ds.n = n;
  ds.seed = seed;
  ds.a.resize(n);
  ds.x.resize(n);
  ds.xp.resize(n);
  SplitMix64 rng(seed);
  for (int i = 0; i < n; ++i) {
    double u = rng.next_uniform() * acc;  // acc, not 1.0: immune to rounding in the tail
    auto it = std::upper_bound(cum.begin(), cum.end(), u);
    int idx = static_cast<int>(std::min<std::ptrdiff_t>(it - cum.begin(),
                                                        static_cast<std::ptrdiff_t>(cum.size()) - 1));
    ds.a[i] = idx % J.n_actions;
    ds.x[i] = (idx / J.n_actions) % J.n_states;
    ds.xp[i] = idx / (J.n_actions * J.n_states);
  }
  return ds;
}

}  // namespace ddc
