#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deracal/augmented.hpp"
#include "deracal/integrator.hpp"
#include "deracal/scenario_io.hpp"

#include <cmath>
#include <random>

using namespace deracal;

namespace {

Eigen::VectorXd scalar_vec(double v) {
    Eigen::VectorXd x(1);
    x(0) = v;
    return x;
}

// Matrix exponential truncated at the dt^4 term: what one RK4 step applies
// to a linear system.
Eigen::MatrixXd rk4_series(const Eigen::MatrixXd& A, double dt) {
    const Eigen::Index n = A.rows();
    Eigen::MatrixXd F = Eigen::MatrixXd::Identity(n, n);
    Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
    double fact = 1.0;
    for (int k = 1; k <= 4; ++k) {
        term = (term * A * dt).eval();
        fact *= k;
        F += term / fact;
    }
    return F;
}

} // namespace

TEST_CASE("zero field leaves the state unchanged") {
    Eigen::VectorXd x(3);
    x << 1.0, -2.0, 0.5;
    const auto next = rk4_step(x, 0.1, [](const Eigen::VectorXd& v) {
        return Eigen::VectorXd::Zero(v.size()).eval();
    });
    CHECK((next - x).norm() == 0.0);
}

TEST_CASE("scalar exponential decay oracle") {
    const auto f = [](const Eigen::VectorXd& v) { return (-v).eval(); };
    const auto next = rk4_step(scalar_vec(1.0), 0.01, f);
    CHECK(std::abs(next(0) - std::exp(-0.01)) < 1e-10);
    CHECK(next(0) == doctest::Approx(0.99004983).epsilon(1e-8));
}

TEST_CASE("linear system step equals the truncated matrix exponential") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        Eigen::MatrixXd A(3, 3);
        for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = gauss(rng);
        Eigen::VectorXd x(3);
        for (int i = 0; i < 3; ++i) x(i) = gauss(rng);
        const double dt = 0.02;
        const auto next = rk4_step(x, dt, [&](const Eigen::VectorXd& v) { return (A * v).eval(); });
        const Eigen::VectorXd ref = rk4_series(A, dt) * x;
        CHECK((next - ref).norm() < 1e-12 * std::max(1.0, ref.norm()));
    }
}

TEST_CASE("transition Jacobian: zero field gives identity") {
    Eigen::VectorXd x(2);
    x << 0.3, -0.4;
    const auto r = rk4_step_with_jacobian(
        x, 0.1, [](const Eigen::VectorXd& v) { return Eigen::VectorXd::Zero(v.size()).eval(); },
        [](const Eigen::VectorXd& v) {
            return Eigen::MatrixXd::Zero(v.size(), v.size()).eval();
        });
    CHECK((r.transition_jacobian - Eigen::MatrixXd::Identity(2, 2)).norm() == 0.0);
}

TEST_CASE("scalar transition Jacobian equals the RK4 polynomial") {
    const double dt = 0.01;
    const auto r = rk4_step_with_jacobian(
        scalar_vec(1.0), dt, [](const Eigen::VectorXd& v) { return (-v).eval(); },
        [](const Eigen::VectorXd& v) {
            return (-Eigen::MatrixXd::Identity(v.size(), v.size())).eval();
        });
    const double poly = 1.0 - dt + dt * dt / 2.0 - dt * dt * dt / 6.0 + dt * dt * dt * dt / 24.0;
    CHECK(r.transition_jacobian(0, 0) == doctest::Approx(poly).epsilon(1e-14));
    CHECK(r.transition_jacobian(0, 0) == doctest::Approx(0.990049834).epsilon(1e-9));
}

TEST_CASE("literal mode drops the stage chain and differs on nonlinear maps") {
    const auto f = [](const Eigen::VectorXd& v) { return (v.array() * v.array()).matrix().eval(); };
    const auto jac = [](const Eigen::VectorXd& v) {
        return (2.0 * v.asDiagonal().toDenseMatrix()).eval();
    };
    const Eigen::VectorXd x = scalar_vec(0.7);
    const auto exact = rk4_step_with_jacobian(x, 0.1, f, jac, JacobianChain::exact);
    const auto literal = rk4_step_with_jacobian(x, 0.1, f, jac, JacobianChain::literal);
    CHECK(exact.next_state(0) == literal.next_state(0));
    CHECK(exact.transition_jacobian(0, 0) != literal.transition_jacobian(0, 0));

    // finite difference of the flow map validates the exact mode
    const double h = 1e-7;
    const auto plus = rk4_step(scalar_vec(0.7 + h), 0.1, f);
    const auto minus = rk4_step(scalar_vec(0.7 - h), 0.1, f);
    const double fd = (plus(0) - minus(0)) / (2.0 * h);
    CHECK(exact.transition_jacobian(0, 0) == doctest::Approx(fd).epsilon(1e-7));
}

TEST_CASE("der_a transition Jacobian matches the finite-difference flow map") {
    // 50 random interior points around the case-1 equilibrium.
    const DeraParameters base = default_parameters();
    AugmentedSystem sys(AugmentedSpec::case1_reduced(), base);
    DeraInputs u;
    u.V = 0.9; // off-equilibrium so states move
    sys.set_inputs(u);
    DeraInputs u0;
    sys.set_background(solve_equilibrium(base, FlagConfig::case1(), u0));

    std::mt19937_64 rng(37);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double dt = 1.0 / 960.0;
    const Eigen::VectorXd center = sys.selected_point();

    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd x = center;
        for (int i = 0; i < 5; ++i) x(i) += 0.02 * gauss(rng);
        for (int i = 5; i < 10; ++i) x(i) *= 1.0 + 0.1 * gauss(rng);
        if (x.tail(5).minCoeff() < 1e-3) continue;

        const auto f = [&](const Eigen::VectorXd& z) { return sys.f_full(sys.pack_full(z)); };
        const auto fsel = [&](const Eigen::VectorXd& z) {
            const Eigen::VectorXd full = f(z);
            return sys.extract_selected(full).eval();
        };
        const auto jac = [&](const Eigen::VectorXd& z) {
            const Eigen::MatrixXd Jf = sys.jac_full(sys.pack_full(z), 0.0);
            Eigen::MatrixXd J(10, 10);
            const auto& sel = sys.selected_indices();
            for (int i = 0; i < 10; ++i)
                for (int j = 0; j < 10; ++j) J(i, j) = Jf(sel[i], sel[j]);
            return J;
        };
        const auto step = rk4_step_with_jacobian(x, dt, fsel, jac, JacobianChain::exact);

        Eigen::MatrixXd F_fd(10, 10);
        for (int j = 0; j < 10; ++j) {
            const double h = 1e-6 * (1.0 + std::abs(x(j)));
            Eigen::VectorXd xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            F_fd.col(j) = (rk4_step(xp, dt, fsel) - rk4_step(xm, dt, fsel)) / (2.0 * h);
        }
        const double rel = (F_fd - step.transition_jacobian).cwiseAbs().maxCoeff() /
                           F_fd.cwiseAbs().maxCoeff();
        CHECK(rel < 1e-4);
        ++checked;
    }
    CHECK(checked >= 40);
}

TEST_CASE("step halving shows fourth-order convergence on a 3 s run") {
    const DeraParameters p = default_parameters();
    const FlagConfig fl = FlagConfig::case1();
    AugmentedSystem sys(AugmentedSpec::case1_reduced(), p);
    DeraInputs u;
    const auto x0full = solve_equilibrium(p, fl, u);

    // Trajectory error is taken as the sup over all frame boundaries; the
    // final state alone forgets the transient once it has decayed.
    const auto run = [&](double dt) {
        StateVec<double> x = x0full;
        VoltageProfileSpec prof;
        prof.b = 6.0;
        DeraInputs ui = u;
        const int frames = 90;
        std::vector<StateVec<double>> traj;
        for (int k = 0; k < frames; ++k) {
            ui.V = voltage_profile(k / 30.0, prof);
            const int sub = int(std::round((1.0 / 30.0) / dt));
            for (int s = 0; s < sub; ++s) {
                const auto f = [&](const StateVec<double>& xs) { return dera_rhs(xs, ui, p, fl); };
                const auto k1 = f(x);
                StateVec<double> xt;
                for (int i = 0; i < kNumStates; ++i) xt[i] = x[i] + 0.5 * dt * k1[i];
                const auto k2 = f(xt);
                for (int i = 0; i < kNumStates; ++i) xt[i] = x[i] + 0.5 * dt * k2[i];
                const auto k3 = f(xt);
                for (int i = 0; i < kNumStates; ++i) xt[i] = x[i] + dt * k3[i];
                const auto k4 = f(xt);
                for (int i = 0; i < kNumStates; ++i)
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            traj.push_back(x);
        }
        return traj;
    };

    const auto ref = run(1.0 / 7680.0);
    const auto err = [&](const std::vector<StateVec<double>>& traj) {
        double e = 0.0;
        for (std::size_t k = 0; k < traj.size(); ++k)
            for (int i = 0; i < kNumStates; ++i)
                e = std::max(e, std::abs(traj[k][i] - ref[k][i]));
        return e;
    };
    const double e960 = err(run(1.0 / 960.0));
    const double e1920 = err(run(1.0 / 1920.0));
    // halving should cut the error by about 2^4; stage cancellations can
    // push the observed order somewhat above 4
    const double ratio = e960 / e1920;
    CHECK(ratio > 10.0);
    CHECK(ratio < 200.0);
}

TEST_CASE("invalid step sizes are rejected") {
    const auto f = [](const Eigen::VectorXd& v) { return (-v).eval(); };
    CHECK_THROWS_AS(rk4_step(scalar_vec(1.0), 0.0, f), InvalidArgument);
    CHECK_THROWS_AS(rk4_step(scalar_vec(1.0), -1.0, f), InvalidArgument);
}

TEST_CASE("NaN propagation raises a simulation fault") {
    const auto f = [](const Eigen::VectorXd& v) {
        return (v * std::numeric_limits<double>::quiet_NaN()).eval();
    };
    CHECK_THROWS_AS(rk4_step(scalar_vec(1.0), 0.1, f), SimulationFault);
}
