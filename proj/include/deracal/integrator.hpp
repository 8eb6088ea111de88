#pragma once

// Fixed-step classical RK4 for the (augmented) state plus the discrete-time
// transition Jacobian used by the EKF. Inputs are zero-order held over a
// step; the caller owns input scheduling.

#include <Eigen/Dense>

#include <utility>

#include "deracal/errors.hpp"

namespace deracal {

struct StepResult {
    Eigen::VectorXd next_state;
    Eigen::MatrixXd transition_jacobian; // square, same dimension as the state
};

// exact: stage Jacobians include the inner chain-rule sensitivities, so the
//        result is the true Jacobian of the RK4 map.
// literal: stage-point Jacobians summed as the appendix formula reads.
enum class JacobianChain { exact, literal };

template <class F>
Eigen::VectorXd rk4_step(const Eigen::VectorXd& x, double dt, F&& f) {
    if (!(dt > 0.0)) throw InvalidArgument("rk4_step: dt must be positive");
    const Eigen::VectorXd k1 = f(x);
    const Eigen::VectorXd k2 = f(x + (0.5 * dt) * k1);
    const Eigen::VectorXd k3 = f(x + (0.5 * dt) * k2);
    const Eigen::VectorXd k4 = f(x + dt * k3);
    Eigen::VectorXd next = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) throw SimulationFault("rk4_step: non-finite state produced");
    return next;
}

// f evaluates the RHS, jac its Jacobian at a point. Returns the next state
// and F = I + dt/6 (J1 + 2 J2 + 2 J3 + J4).
template <class F, class J>
StepResult rk4_step_with_jacobian(const Eigen::VectorXd& x, double dt, F&& f, J&& jac,
                                  JacobianChain mode = JacobianChain::exact) {
    if (!(dt > 0.0)) throw InvalidArgument("rk4_step_with_jacobian: dt must be positive");
    const auto n = x.size();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

    const Eigen::VectorXd k1 = f(x);
    const Eigen::VectorXd x2 = x + (0.5 * dt) * k1;
    const Eigen::VectorXd k2 = f(x2);
    const Eigen::VectorXd x3 = x + (0.5 * dt) * k2;
    const Eigen::VectorXd k3 = f(x3);
    const Eigen::VectorXd x4 = x + dt * k3;
    const Eigen::VectorXd k4 = f(x4);

    Eigen::MatrixXd J1 = jac(x);
    Eigen::MatrixXd J2 = jac(x2);
    Eigen::MatrixXd J3 = jac(x3);
    Eigen::MatrixXd J4 = jac(x4);
    if (mode == JacobianChain::exact) {
        J2 = J2 * (I + (0.5 * dt) * J1);
        J3 = J3 * (I + (0.5 * dt) * J2);
        J4 = J4 * (I + dt * J3);
    }

    StepResult r;
    r.next_state = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    r.transition_jacobian = I + (dt / 6.0) * (J1 + 2.0 * J2 + 2.0 * J3 + J4);
    if (!r.next_state.allFinite() || !r.transition_jacobian.allFinite())
        throw SimulationFault("rk4_step_with_jacobian: non-finite result");
    return r;
}

} // namespace deracal
