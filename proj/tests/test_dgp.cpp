#include <catch2/catch_amalgamated.hpp>

#include "ddc/bus.hpp"
#include "ddc/dgp.hpp"
#include "oracles.hpp"

#include <cmath>
#include <limits>

using namespace ddc;
using Catch::Approx;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

VectorXd theta_u() { return Eigen::Vector2d(1.0, 0.05); }
VectorXd theta_f() { return VectorXd::Constant(1, 0.25); }

DesignSpec base_design(double delta) {
  DesignSpec d;
  d.delta = delta;
  d.theta_f_true = theta_f();
  d.marginal = marginal_log_spec(20);
  return d;
}

DesignSpec correct_design() {
  DesignSpec d = base_design(0.5);
  d.kind = CorrectSpec{theta_u()};
  return d;
}

DesignSpec quadratic_design(double delta) {
  DesignSpec d = base_design(delta);
  d.kind = QuadraticUtility{theta_u()};
  return d;
}

DesignSpec mixture_design(double delta) {
  DesignSpec d = base_design(delta);
  d.kind = Mixture{theta_u(), Eigen::Vector2d(0.95, -0.05)};
  return d;
}

DesignSpec quantal_design(double delta) {
  DesignSpec d = base_design(delta);
  d.kind = QuantalResponse{theta_u()};
  return d;
}

double sup_diff(const CCPMatrix& A, const CCPMatrix& B) {
  return (A.probs - B.probs).cwiseAbs().maxCoeff();
}

// smoothed two-action choice probability by logistic quadrature:
// P(a0) = E_z[ sigmoid((v0 - v1 + z) / tau) ], z standard logistic
double smoothed_keep_prob(double gap, double tau) {
  return oracle::logistic_expectation(
      [&](double z) { return 1.0 / (1.0 + std::exp(-(gap + z) / tau)); });
}

}  // namespace

TEST_CASE("state marginal follows 1 + log of the label", "[dgp]") {
  VectorXd m2 = marginal_log_spec(2);
  double denom = 2.0 + std::log(2.0);
  CHECK(m2[0] == Approx(1.0 / denom).epsilon(1e-14));
  CHECK(m2[1] == Approx((1.0 + std::log(2.0)) / denom).epsilon(1e-14));

  VectorXd m20 = marginal_log_spec(20);
  CHECK(m20.sum() == Approx(1.0).margin(1e-14));
  CHECK(m20.minCoeff() > 0.0);
  for (int x = 0; x + 1 < 20; ++x) CHECK(m20[x] < m20[x + 1]);  // increasing in the label
}

TEST_CASE("design dispatch: limit parameter and drift scale", "[dgp]") {
  CHECK(theta_u_limit(correct_design()) == theta_u());
  CHECK(theta_u_limit(mixture_design(0.5)) == theta_u());  // limit is the type-A parameter
  CHECK(theta_u_limit(quadratic_design(1.0)) == theta_u());
  CHECK(drift_scale(correct_design()) == 0.0);
  CHECK(drift_scale(mixture_design(0.5)) == 1.0);
  CHECK(drift_scale(quadratic_design(1.0)) == Approx(-0.025));
  CHECK(drift_scale(quantal_design(1.0)) == Approx(10.0));
}

TEST_CASE("correct specification does not drift", "[dgp]") {
  ModelSpec m = bus_model();
  DesignSpec d = correct_design();
  CCPMatrix limit = true_ccp(m, d, kInf);
  CCPMatrix fixed = solve_ccp_fixed_point(m, theta_u(), theta_f()).ccp;
  CHECK(sup_diff(limit, fixed) == 0.0);  // same code path, same start
  CHECK(sup_diff(true_ccp(m, d, 200.0), limit) == 0.0);
  CHECK(bias_direction(m, d).isZero());
}

TEST_CASE("quadratic drift decays at the design rate", "[dgp]") {
  ModelSpec m = bus_model();
  DesignSpec d = quadratic_design(1.0 / 3.0);
  CCPMatrix limit = true_ccp(m, d, kInf);
  // n large enough that the utility perturbation tau * x^2 is well inside the
  // linear regime (at n = 1000 it reaches 1.0 at the top state)
  double dev1 = sup_diff(true_ccp(m, d, 1e6), limit);
  double dev2 = sup_diff(true_ccp(m, d, 8e6), limit);
  CHECK(dev1 > 1e-6);                                    // the drift is real
  CHECK(dev2 / dev1 == Approx(0.5).margin(0.03));        // n -> 8n halves tau at delta=1/3
  REQUIRE_NOTHROW(validate_ccp(m, true_ccp(m, d, 200.0)));
}

TEST_CASE("quadratic bias direction matches the drift path", "[dgp]") {
  ModelSpec m = bus_model();
  DesignSpec d = quadratic_design(0.5);
  VectorXd B = bias_direction(m, d);
  CHECK(B.size() == 2 * 20 * 20);
  CHECK(std::abs(B.sum()) < 1e-10);  // probability mass is conserved along the path
  CHECK(B.cwiseAbs().maxCoeff() > 1e-4);

  // independent check: extrapolate n^delta * (Pi_n - Pi_inf) along the path
  // (n -> 4n halves tau, so 2 * path(4n) - path(n) kills the O(tau) remainder)
  auto path = [&](double n) -> VectorXd {
    return (joint_at_n(m, d, n).pi - joint_at_n(m, d, kInf).pi) * std::pow(n, d.delta);
  };
  VectorXd extrap = 2.0 * path(4e6) - path(1e6);
  CHECK((extrap - B).cwiseAbs().maxCoeff() < 1e-3 * B.cwiseAbs().maxCoeff());
}

TEST_CASE("mixture path is exactly linear in tau", "[dgp]") {
  ModelSpec m = bus_model();
  DesignSpec d = mixture_design(0.5);
  const auto& mix = std::get<Mixture>(d.kind);

  CCPMatrix PA = solve_ccp_fixed_point(m, mix.theta_A, theta_f()).ccp;
  CCPMatrix PB = solve_ccp_fixed_point(m, mix.theta_B, theta_f()).ccp;
  double n = 100.0, tau = std::pow(n, -d.delta);
  CCPMatrix blended;
  blended.probs = (1.0 - tau) * PA.probs + tau * PB.probs;
  CHECK(sup_diff(true_ccp(m, d, n), blended) < 1e-15);

  // the finite-n secant recovers the bias direction with no truncation error
  VectorXd B = bias_direction(m, d);
  VectorXd secant = (joint_at_n(m, d, n).pi - joint_at_n(m, d, kInf).pi) / tau;
  CHECK((secant - B).cwiseAbs().maxCoeff() < 1e-13);
  CHECK(std::abs(B.sum()) < 1e-13);
  CHECK(B.cwiseAbs().maxCoeff() > 1e-3);

  DesignSpec degenerate = d;
  degenerate.kind = Mixture{theta_u(), theta_u()};
  CHECK(bias_direction(m, degenerate).isZero());
}

TEST_CASE("smoothed choice probabilities match logistic quadrature", "[dgp]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, theta_f());
  FixedPointResult fp = solve_ccp_fixed_point(m, theta_u(), F, uniform_ccp(m));
  MatrixXd v = choice_values(m, theta_u(), F, fp.value);

  double tau = 1.0;
  CCPMatrix mc = detail::quantal_ccp(m, v, tau, 200000, 20240501);
  for (int x : {0, 9, 19}) {
    double want = smoothed_keep_prob(v(x, 0) - v(x, 1), tau);
    CHECK(mc.probs(0, x) == Approx(want).margin(2.5e-3));  // 200k draws, ~5 standard errors
    CHECK(mc.probs(0, x) + mc.probs(1, x) == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("smoothing deviation is second order in the temperature", "[dgp]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, theta_f());
  FixedPointResult fp = solve_ccp_fixed_point(m, theta_u(), F, uniform_ccp(m));
  MatrixXd v = choice_values(m, theta_u(), F, fp.value);

  // deterministic quadrature so the decay is visible below the MC noise floor
  auto dev = [&](double tau) {
    double worst = 0.0;
    for (int x = 0; x < m.n_states; ++x) {
      double exact = 1.0 / (1.0 + std::exp(-(v(x, 0) - v(x, 1))));
      worst = std::max(worst, std::abs(smoothed_keep_prob(v(x, 0) - v(x, 1), tau) - exact));
    }
    return worst;
  };
  double d4 = dev(0.2), d2 = dev(0.1), d1 = dev(0.05);
  CHECK(d4 > 1e-5);
  CHECK(d4 / d2 == Approx(4.0).margin(0.3));  // halving tau quarters the deviation
  CHECK(d2 / d1 == Approx(4.0).margin(0.3));
  CHECK(bias_direction(m, quantal_design(0.5)).isZero());  // first-order term vanishes
}

TEST_CASE("quantal response draws are seeded and reproducible", "[dgp]") {
  ModelSpec m = bus_model();
  DesignSpec d = quantal_design(1.0 / 3.0);
  CCPMatrix a = true_ccp(m, d, 1000.0);  // tau = 10 * 1000^(-1/3) = 1
  CCPMatrix b = true_ccp(m, d, 1000.0);
  CHECK(sup_diff(a, b) == 0.0);
  REQUIRE_NOTHROW(validate_ccp(m, a));
  CHECK(sup_diff(a, true_ccp(m, d, kInf)) > 1e-3);  // visible deviation at tau = 1
}

TEST_CASE("joint distribution factors into kernel, choice and marginal", "[dgp]") {
  ModelSpec m = bus_model();
  DesignSpec d = mixture_design(0.5);
  double n = 500.0;
  JointDist J = joint_at_n(m, d, n);

  REQUIRE(J.pi.size() == 2 * 20 * 20);
  CHECK(J.pi.minCoeff() >= 0.0);
  CHECK(J.pi.sum() == Approx(1.0).margin(1e-13));

  CHECK((marginal_of(J) - d.marginal).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(sup_diff(ccp_of(J), true_ccp(m, d, n)) < 1e-13);

  // conditional transition recovers the kernel wherever the cell has mass
  TransitionKernel F = make_kernel(m, theta_f());
  VectorXd jv = j_of(J);
  for (int a = 0; a < 2; ++a)
    for (int x : {0, 7, 19})
      for (int xp : {0, x, std::min(x + 1, 19)})
        CHECK(J(a, x, xp) / jv[x * 2 + a] == Approx(F[a](x, xp)).margin(1e-13));
}

TEST_CASE("sampling is deterministic in the seed", "[dgp]") {
  ModelSpec m = bus_model();
  JointDist J = joint_at_n(m, correct_design(), kInf);
  Dataset d1 = sample_dataset(J, 1000, 7);
  Dataset d2 = sample_dataset(J, 1000, 7);
  Dataset d3 = sample_dataset(J, 1000, 8);
  CHECK(d1.a == d2.a);
  CHECK(d1.x == d2.x);
  CHECK(d1.xp == d2.xp);
  CHECK(d1.x != d3.x);
  for (int i = 0; i < d1.n; ++i) {
    CHECK((d1.a[i] == 0 || d1.a[i] == 1));
    CHECK((d1.x[i] >= 0 && d1.x[i] < 20));
    CHECK((d1.xp[i] >= 0 && d1.xp[i] < 20));
  }
}

TEST_CASE("sampling a point mass returns only that cell", "[dgp]") {
  JointDist J;
  J.n_actions = 2;
  J.n_states = 3;
  J.pi = VectorXd::Zero(2 * 3 * 3);
  J.pi[J.index(1, 2, 0)] = 1.0;
  Dataset ds = sample_dataset(J, 50, 123);
  for (int i = 0; i < ds.n; ++i) {
    CHECK(ds.a[i] == 1);
    CHECK(ds.x[i] == 2);
    CHECK(ds.xp[i] == 0);
  }
}

TEST_CASE("sampled cell frequencies concentrate on the joint", "[dgp]") {
  ModelSpec m = bus_model();
  JointDist J = joint_at_n(m, correct_design(), kInf);
  const int n = 200000;
  Dataset ds = sample_dataset(J, n, 99);
  VectorXd freq = VectorXd::Zero(J.pi.size());
  for (int i = 0; i < n; ++i) freq[J.index(ds.a[i], ds.x[i], ds.xp[i])] += 1.0 / n;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < J.pi.size(); ++i) {
    double se = std::sqrt(J.pi[i] * (1.0 - J.pi[i]) / n);
    if (se == 0.0)
      CHECK(freq[i] == 0.0);  // zero-probability cells must never be drawn
    else
      worst = std::max(worst, std::abs(freq[i] - J.pi[i]) / se);
  }
  CHECK(worst < 5.0);
}

TEST_CASE("joint rejects a distribution that does not sum to one", "[dgp]") {
  JointDist J;
  J.n_actions = 1;
  J.n_states = 1;
  J.pi = VectorXd::Constant(1, 0.5);
  CHECK_THROWS_AS(sample_dataset(J, 10, 1), std::domain_error);
}
