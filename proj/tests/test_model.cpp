#include "ddc/bus.hpp"
#include "ddc/model.hpp"
#include "ddc/rng.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace ddc;
using Catch::Approx;

namespace {

ModelSpec one_state_model(double beta, std::vector<double> u) {
  ModelSpec m;
  m.n_states = 1;
  m.n_actions = static_cast<int>(u.size());
  m.beta = beta;
  for (std::size_t a = 0; a < u.size(); ++a) {
    MatrixXd f(1, 1);
    f(0, 0) = u[a];
    m.utility.features.push_back(f);
  }
  int A = m.n_actions;
  m.transition.d_theta_f = 0;
  m.transition.theta_f_lo = VectorXd(0);
  m.transition.theta_f_hi = VectorXd(0);
  m.transition.kernel = [A](const VectorXd&) { return TransitionKernel(A, MatrixXd::Ones(1, 1)); };
  return m;
}

VectorXd bus_alpha() { return (VectorXd(2) << 1.0, 0.05).finished(); }
VectorXd bus_theta_f() { return VectorXd::Constant(1, 0.25); }

}  // namespace

TEST_CASE("logit map on simple values", "[model]") {
  MatrixXd v(2, 2);
  v << 0.0, 0.0, std::log(3.0), 0.0;  // state 0: equal; state 1: odds 3:1
  CCPMatrix P = lambda_map(v);
  CHECK(P.probs(0, 0) == Approx(0.5).margin(1e-15));
  CHECK(P.probs(1, 0) == Approx(0.5).margin(1e-15));
  CHECK(P.probs(0, 1) == Approx(0.75).margin(1e-12));
  CHECK(P.probs(1, 1) == Approx(0.25).margin(1e-12));
}

TEST_CASE("logit map survives huge values", "[model]") {
  MatrixXd v(1, 2);
  v << 1000.0, 0.0;
  CCPMatrix P = lambda_map(v);
  REQUIRE(std::isfinite(P.probs(0, 0)));
  REQUIRE(std::isfinite(P.probs(1, 0)));
  CHECK(P.probs(0, 0) == Approx(1.0).margin(1e-15));
  CHECK(P.probs.col(0).sum() == Approx(1.0).margin(1e-15));
}

TEST_CASE("logit map is shift invariant", "[model]") {
  MatrixXd v(1, 3);
  v << 0.3, -1.2, 2.0;
  MatrixXd w = v.array() + 123.456;
  CCPMatrix P = lambda_map(v), Q = lambda_map(w);
  CHECK((P.probs - Q.probs).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("choice values match a brute-force sum", "[model]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, bus_theta_f());
  SplitMix64 rng(7);
  VectorXd V(m.n_states);
  for (int x = 0; x < m.n_states; ++x) V[x] = 10.0 * rng.next_uniform() - 5.0;
  MatrixXd v = choice_values(m, bus_alpha(), F, V);
  for (int x = 0; x < m.n_states; ++x)
    for (int a = 0; a < m.n_actions; ++a)
      CHECK(v(x, a) == Approx(oracle::choice_value_brute(m, bus_alpha(), F, V, x, a))
                           .margin(1e-12));
}

TEST_CASE("choice values reduce to utility when beta is zero", "[model]") {
  ModelSpec m = bus_model(20, 0.0);
  TransitionKernel F = make_kernel(m, bus_theta_f());
  MatrixXd v = choice_values(m, bus_alpha(), F, VectorXd::Zero(20));
  CHECK(v(4, 0) == Approx(-0.05 * 5.0).margin(1e-15));  // keep at state label 5
  CHECK(v(4, 1) == Approx(-1.0).margin(1e-15));         // replace
}

TEST_CASE("value implied by uniform CCPs in a one-state model", "[model]") {
  // V = (gamma + entropy of the uniform CCP) / (1 - beta), u = 0
  ModelSpec m = one_state_model(0.5, {0.0, 0.0});
  CCPMatrix P = uniform_ccp(m);
  ValueVector V = varphi_map(m, VectorXd::Zero(1), VectorXd(0), P);
  CHECK(V[0] == Approx((kEulerGamma + std::log(2.0)) / 0.5).margin(1e-12));
}

TEST_CASE("policy operator at one state is the static logit", "[model]") {
  // with a single state, continuation values cancel and Psi(P) is softmax(u)
  ModelSpec m = one_state_model(0.9, {0.4, -0.3});
  VectorXd alpha = VectorXd::Ones(1);
  CCPMatrix P1 = uniform_ccp(m);
  CCPMatrix P2;
  P2.probs.resize(2, 1);
  P2.probs << 0.9, 0.1;
  CCPMatrix Q1 = psi_map(m, alpha, VectorXd(0), P1);
  CCPMatrix Q2 = psi_map(m, alpha, VectorXd(0), P2);
  auto want = oracle::softmax_brute({0.4, -0.3});
  CHECK(Q1.probs(0, 0) == Approx(want[0]).margin(1e-12));
  CHECK(Q1.probs(1, 0) == Approx(want[1]).margin(1e-12));
  CHECK((Q1.probs - Q2.probs).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("fixed point solves and is interior", "[model]") {
  ModelSpec m = bus_model();
  FixedPointResult fp = solve_ccp_fixed_point(m, bus_alpha(), bus_theta_f());
  REQUIRE(fp.converged);
  CHECK(fp.iterations < 100);
  REQUIRE_NOTHROW(validate_ccp(m, fp.ccp));
  // fixed point property under the operator itself
  CCPMatrix again = psi_map(m, bus_alpha(), bus_theta_f(), fp.ccp);
  CHECK((again.probs - fp.ccp.probs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("fixed point is start independent", "[model]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, bus_theta_f());
  FixedPointResult base = solve_ccp_fixed_point(m, bus_alpha(), F, uniform_ccp(m));
  SplitMix64 rng(123);
  for (int s = 0; s < 10; ++s) {
    CCPMatrix start;
    start.probs.resize(2, m.n_states);
    for (int x = 0; x < m.n_states; ++x) {
      double u = 0.05 + 0.9 * rng.next_uniform();
      start.probs(0, x) = u;
      start.probs(1, x) = 1.0 - u;
    }
    FixedPointResult alt = solve_ccp_fixed_point(m, bus_alpha(), F, start);
    CHECK((alt.ccp.probs - base.ccp.probs).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("value iteration closed forms", "[model]") {
  SECTION("beta = 0 is one logsumexp") {
    ModelSpec m = one_state_model(0.0, {0.7, -0.2});
    ValueIterationResult r = solve_value_function(m, VectorXd::Ones(1), VectorXd(0));
    double want = kEulerGamma + std::log(std::exp(0.7) + std::exp(-0.2));
    CHECK(r.value[0] == Approx(want).margin(1e-12));
  }
  SECTION("one state geometric sum") {
    ModelSpec m = one_state_model(0.5, {0.0, 0.0});
    ValueIterationResult r = solve_value_function(m, VectorXd::Ones(1), VectorXd(0), 1e-10);
    CHECK(r.value[0] == Approx((kEulerGamma + std::log(2.0)) / 0.5).margin(1e-9));
  }
}

TEST_CASE("value iteration agrees with the fixed point on the bus model", "[model]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, bus_theta_f());
  FixedPointResult fp = solve_ccp_fixed_point(m, bus_alpha(), F, uniform_ccp(m));
  ValueIterationResult vi = solve_value_function(m, bus_alpha(), F, 3e-9);
  CCPMatrix from_vi = lambda_map(choice_values(m, bus_alpha(), F, vi.value));
  CHECK((from_vi.probs - fp.ccp.probs).cwiseAbs().maxCoeff() < 1e-8);
  // values also agree up to the iteration tolerance
  CHECK((vi.value - fp.value).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("policy operator has zero derivative at the fixed point", "[model]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, bus_theta_f());
  FixedPointResult fp = solve_ccp_fixed_point(m, bus_alpha(), F, uniform_ccp(m));
  MatrixXd J = jacobian_psi_wrt_P(m, bus_alpha(), F, fp.ccp);
  CHECK(J.cwiseAbs().maxCoeff() < 1e-5);
  // away from the fixed point the derivative is not zero
  MatrixXd J_uniform = jacobian_psi_wrt_P(m, bus_alpha(), F, uniform_ccp(m));
  CHECK(J_uniform.cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("one-state policy operator has exactly zero derivative", "[model]") {
  ModelSpec m = one_state_model(0.9, {0.4, -0.3});
  CCPMatrix P;
  P.probs.resize(2, 1);
  P.probs << 0.3, 0.7;
  MatrixXd J = jacobian_psi_wrt_P(m, VectorXd::Ones(1), m.transition.kernel(VectorXd(0)), P);
  CHECK(J.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("derivative of the fixed point in theta", "[model]") {
  ModelSpec m = bus_model();
  VectorXd alpha = bus_alpha(), tf = bus_theta_f();
  MatrixXd D = dP_dtheta(m, alpha, tf);
  REQUIRE(D.rows() == reduced_dim(m));
  REQUIRE(D.cols() == 3);

  // oracle: differentiate the re-solved fixed point directly
  VectorXd theta(3);
  theta << alpha, tf;
  auto resolve = [&](const VectorXd& th) {
    FixedPointOptions tight;
    tight.tol = 1e-12;
    tight.max_iter = 20000;
    return VectorXd(to_reduced(m, solve_ccp_fixed_point(m, VectorXd(th.head(2)),
                                                        make_kernel(m, VectorXd(th.tail(1))),
                                                        uniform_ccp(m), tight)
                                      .ccp));
  };
  MatrixXd D_oracle = fd_jacobian_richardson(resolve, theta, 1e-4);
  CHECK((D - D_oracle).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("value implied by CCPs is affine in alpha", "[model]") {
  ModelSpec m = bus_model();
  TransitionKernel F = make_kernel(m, bus_theta_f());
  CCPMatrix P = uniform_ccp(m);
  VectorXd a1 = (VectorXd(2) << 0.5, 0.01).finished();
  VectorXd a2 = (VectorXd(2) << 2.0, 0.09).finished();
  ValueVector v1 = varphi_map(m, a1, F, P);
  ValueVector v2 = varphi_map(m, a2, F, P);
  ValueVector vm = varphi_map(m, VectorXd(0.5 * (a1 + a2)), F, P);
  CHECK((0.5 * (v1 + v2) - vm).cwiseAbs().maxCoeff() < 1e-10 * vm.cwiseAbs().maxCoeff());
}

TEST_CASE("validators reject broken inputs", "[model]") {
  ModelSpec m = bus_model();
  SECTION("boundary CCP") {
    CCPMatrix P = uniform_ccp(m);
    P.probs(0, 3) = 0.0;
    P.probs(1, 3) = 1.0;
    CHECK_THROWS_AS(validate_ccp(m, P), std::domain_error);
  }
  SECTION("column sum off") {
    CCPMatrix P = uniform_ccp(m);
    P.probs(0, 3) = 0.6;  // column sums to 1.1
    CHECK_THROWS_AS(validate_ccp(m, P), std::domain_error);
  }
  SECTION("theta_f outside the admissible box") {
    CHECK_THROWS_AS(make_kernel(m, VectorXd::Constant(1, 1.2)), std::domain_error);
  }
  SECTION("non-stochastic kernel") {
    ModelSpec bad = m;
    bad.transition.kernel = [&](const VectorXd& tf) {
      TransitionKernel F = bus_model().transition.kernel(tf);
      F[0](0, 0) += 1e-9;
      return F;
    };
    CHECK_THROWS_AS(make_kernel(bad, VectorXd::Constant(1, 0.25)), std::domain_error);
  }
  SECTION("beta out of range") {
    ModelSpec bad = m;
    bad.beta = 1.0;
    CHECK_THROWS_AS(validate_model(bad), std::invalid_argument);
  }
}

TEST_CASE("random small models: uniqueness and zero derivative", "[model]") {
  SplitMix64 rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    ModelSpec m = oracle::random_small_model(rng);
    VectorXd alpha = oracle::random_alpha(rng, m.utility.d_alpha());
    TransitionKernel F = make_kernel(m, VectorXd(0));
    FixedPointResult base = solve_ccp_fixed_point(m, alpha, F, uniform_ccp(m));
    REQUIRE(base.converged);

    for (int s = 0; s < 3; ++s) {
      CCPMatrix start;
      start.probs.resize(m.n_actions, m.n_states);
      for (int x = 0; x < m.n_states; ++x) {
        double sum = 0.0;
        for (int a = 0; a < m.n_actions; ++a) {
          start.probs(a, x) = 0.05 + rng.next_uniform();
          sum += start.probs(a, x);
        }
        start.probs.col(x) /= sum;
      }
      FixedPointResult alt = solve_ccp_fixed_point(m, alpha, F, start);
      CHECK((alt.ccp.probs - base.ccp.probs).cwiseAbs().maxCoeff() < 1e-11);
    }

    MatrixXd J = jacobian_psi_wrt_P(m, alpha, F, base.ccp);
    CHECK(J.cwiseAbs().maxCoeff() < 1e-5);

    // value iteration cross-check (betas here are small enough to be cheap)
    ValueIterationResult vi = solve_value_function(m, alpha, F, 1e-10);
    CCPMatrix from_vi = lambda_map(choice_values(m, alpha, F, vi.value));
    CHECK((from_vi.probs - base.ccp.probs).cwiseAbs().maxCoeff() < 1e-8);
  }
}
