#pragma once
// Bus engine replacement model: two actions (index 0 = keep, 1 = replace),
// mileage states labelled 1..n_states.
//   u(x, keep)    = -theta_u2 * x
//   u(x, replace) = -theta_u1
//   keep:    mileage advances to min(x+1, X) w.p. 1 - theta_f, stays w.p. theta_f
//   replace: mileage resets to 1
#include "ddc/model.hpp"

namespace ddc {

inline ModelSpec bus_model(int n_states = 20, double beta = 0.9999, double alpha_bound = 10.0) {
  ModelSpec m;
  m.n_states = n_states;
  m.n_actions = 2;
  m.beta = beta;

  m.utility.alpha_bound = alpha_bound;
  MatrixXd keep = MatrixXd::Zero(n_states, 2), replace = MatrixXd::Zero(n_states, 2);
  for (int x = 0; x < n_states; ++x) keep(x, 1) = -(x + 1.0);  // state label is 1-based
  replace.col(0).setConstant(-1.0);
  m.utility.features = {keep, replace};

  m.transition.d_theta_f = 1;
  m.transition.theta_f_lo = VectorXd::Zero(1);
  m.transition.theta_f_hi = VectorXd::Ones(1);
  m.transition.kernel = [n_states](const VectorXd& tf) {
    double p = tf[0];
    MatrixXd Fk = MatrixXd::Zero(n_states, n_states), Fr = MatrixXd::Zero(n_states, n_states);
    for (int x = 0; x < n_states; ++x) {
      int up = std::min(x + 1, n_states - 1);
      Fk(x, up) += 1.0 - p;  // += so the top state accumulates to 1
      Fk(x, x) += p;
      Fr(x, 0) = 1.0;
    }
    return TransitionKernel{Fk, Fr};
  };
  return m;
}

}  // namespace ddc
