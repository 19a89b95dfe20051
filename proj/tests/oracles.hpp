#pragma once
// Independent oracles used to pin expected values in the tests. Deliberately
// written with plain loops (no shared code with the library paths they check).
#include "ddc/model.hpp"
#include "ddc/rng.hpp"

#include <cmath>
#include <vector>

namespace oracle {

// brute-force v(x,a) = u(x,a) + beta * sum_x' f(x'|x,a) V(x')
inline double choice_value_brute(const ddc::ModelSpec& m, const Eigen::VectorXd& alpha,
                                 const ddc::TransitionKernel& F, const Eigen::VectorXd& V,
                                 int x, int a) {
  double u = 0.0;
  for (int j = 0; j < alpha.size(); ++j) u += m.utility.features[a](x, j) * alpha[j];
  if (m.utility.extra.size() != 0) u += m.utility.extra(x, a);
  double cont = 0.0;
  for (int xp = 0; xp < m.n_states; ++xp) cont += F[a](x, xp) * V[xp];
  return u + m.beta * cont;
}

// softmax by direct summation
inline std::vector<double> softmax_brute(const std::vector<double>& v) {
  double mx = v[0];
  for (double t : v) mx = std::max(mx, t);
  double denom = 0.0;
  for (double t : v) denom += std::exp(t - mx);
  std::vector<double> p;
  for (double t : v) p.push_back(std::exp(t - mx) / denom);
  return p;
}

// exhaustive grid maximizer for a 2-argument criterion over a box
template <typename F>
inline Eigen::Vector2d grid_argmax(const F& f, double lo1, double hi1, double lo2, double hi2,
                                   int points) {
  Eigen::Vector2d best(lo1, lo2);
  double best_val = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < points; ++i)
    for (int j = 0; j < points; ++j) {
      double a1 = lo1 + (hi1 - lo1) * i / (points - 1);
      double a2 = lo2 + (hi2 - lo2) * j / (points - 1);
      double val = f(Eigen::Vector2d(a1, a2));
      if (val > best_val) {
        best_val = val;
        best = Eigen::Vector2d(a1, a2);
      }
    }
  return best;
}

// quadrature for E_z[ g(z) ] with z standard logistic, for the two-action
// smoothed-choice integrals: transform z = log(u/(1-u)), u uniform on (0,1),
// then midpoint rule with many panels (the integrand is smooth and bounded)
template <typename G>
inline double logistic_expectation(const G& g, int panels = 200000) {
  double acc = 0.0;
  for (int i = 0; i < panels; ++i) {
    double u = (i + 0.5) / panels;
    acc += g(std::log(u / (1.0 - u)));
  }
  return acc / panels;
}

// random small model with a fixed (parameter-free) transition kernel
inline ddc::ModelSpec random_small_model(ddc::SplitMix64& rng, int max_states = 4,
                                         int max_actions = 3, double max_beta = 0.95) {
  ddc::ModelSpec m;
  m.n_states = 1 + static_cast<int>(rng.next_uniform() * max_states);
  m.n_actions = 2 + static_cast<int>(rng.next_uniform() * (max_actions - 1));
  m.beta = rng.next_uniform() * max_beta;
  int d = 1 + static_cast<int>(rng.next_uniform() * 3);
  for (int a = 0; a < m.n_actions; ++a) {
    Eigen::MatrixXd f(m.n_states, d);
    for (int x = 0; x < m.n_states; ++x)
      for (int j = 0; j < d; ++j) f(x, j) = 2.0 * rng.next_uniform() - 1.0;
    m.utility.features.push_back(f);
  }
  std::vector<Eigen::MatrixXd> kernels;
  for (int a = 0; a < m.n_actions; ++a) {
    Eigen::MatrixXd F(m.n_states, m.n_states);
    for (int x = 0; x < m.n_states; ++x) {
      double sum = 0.0;
      for (int xp = 0; xp < m.n_states; ++xp) {
        F(x, xp) = -std::log(rng.next_uniform_open());
        sum += F(x, xp);
      }
      F.row(x) /= sum;
    }
    kernels.push_back(F);
  }
  m.transition.d_theta_f = 0;
  m.transition.theta_f_lo = Eigen::VectorXd(0);
  m.transition.theta_f_hi = Eigen::VectorXd(0);
  m.transition.kernel = [kernels](const Eigen::VectorXd&) { return kernels; };
  return m;
}

inline Eigen::VectorXd random_alpha(ddc::SplitMix64& rng, int d) {
  Eigen::VectorXd a(d);
  for (int j = 0; j < d; ++j) a[j] = 2.0 * rng.next_uniform() - 1.0;
  return a;
}

}  // namespace oracle
