#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deracal/dera.hpp"
#include "deracal/scenario_io.hpp"

#include <cmath>
#include <random>

using namespace deracal;

namespace {

DeraInputs nominal_inputs() {
    DeraInputs u;
    u.V = 1.0;
    u.freq = 1.0;
    return u;
}

// Hard-operator twin of the right-hand side, used as the k -> infinity
// oracle. Mirrors the same equations with the exact piecewise operators.
StateVec<double> hard_rhs(const StateVec<double>& x, const DeraInputs& u,
                          const DeraParameters& p, const FlagConfig& fl) {
    StateVec<double> dx{};
    const double vf = std::max(x[0], 0.01);
    dx[0] = (u.V - x[0]) / p.T_rv;
    if (fl.fflag) dx[1] = (x[8] - x[1]) / p.T_p;
    if (fl.pflag == 0)
        dx[2] = (u.Q_ref / vf - x[2]) / p.T_iq;
    else
        dx[2] = (x[1] * std::tan(p.pfaref) / vf - x[2]) / p.T_iq;
    {
        const double iqv = p.k_qv * hard_db(u.V_ref0 - x[0], p.dbd1, p.dbd2);
        double lim = hard_sat(x[2] - hard_sat(iqv, p.I_ql, p.I_qh), p.I_qmin, p.I_qmax);
        if (fl.vtripflag) lim *= x[4];
        dx[3] = (lim - x[3]) / p.T_g;
    }
    if (fl.vtripflag) dx[4] = (voltage_trip(u.V, u.trip_timer, p) - x[4]) / p.T_v;
    if (fl.fflag) dx[5] = (u.freq - x[5]) / p.T_rf;
    if (fl.fflag) {
        const double dfp = hard_db(u.f_ref - x[5], p.fbd1, p.fbd2);
        const double droop = p.D_dn * std::min(dfp, 0.0) + p.D_up * std::max(dfp, 0.0);
        const double plim = hard_sat(u.P_ref + droop - x[1], p.f_emin, p.f_emax);
        const double pa = hard_sat(x[6] + p.k_pg * plim, p.P_min, p.P_max);
        dx[6] = p.k_ig * plim + p.k_w * (pa - p.k_pg * plim - x[6]);
        dx[7] = hard_sat((hard_sat(x[6], p.P_min, p.P_max) - x[7]) / u.dt_input, p.dP_min,
                         p.dP_max);
    }
    const double x9s = hard_sat(x[8], p.P_min, p.P_max);
    dx[8] = (x[7] - x9s) / p.T_pord;
    {
        double num = x9s;
        if (fl.vtripflag) num *= x[4];
        const double idl = hard_sat(num / vf, p.I_dmin, p.I_dmax);
        dx[9] = hard_sat((idl - x[9]) / p.T_g, -p.rrpwr, p.rrpwr);
    }
    return dx;
}

StateVec<double> simulate(const DeraParameters& p, const FlagConfig& fl,
                          const StateVec<double>& x0, double t_end, double dt,
                          bool use_hard, const VoltageProfileSpec& prof) {
    StateVec<double> x = x0;
    DeraInputs u = nominal_inputs();
    const int steps = int(std::round(t_end / dt));
    for (int s = 0; s < steps; ++s) {
        const double t = s * dt;
        // inputs held over each 1/30 s frame, like the scenario driver
        u.V = voltage_profile(std::floor(t * 30.0) / 30.0, prof);
        const auto f = [&](const StateVec<double>& xs) {
            return use_hard ? hard_rhs(xs, u, p, fl) : dera_rhs(xs, u, p, fl);
        };
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
    return x;
}

} // namespace

TEST_CASE("current limit logic for both priorities") {
    const auto q0 = current_limits(0, 0.0, 0.0, 1.2);
    CHECK(q0.id_max == doctest::Approx(1.2));
    CHECK(q0.iq_max == 1.2);
    CHECK(q0.iq_min == -1.2);
    CHECK(q0.id_min == 0.0);

    const auto p1 = current_limits(1, 1.2, 0.0, 1.2);
    CHECK(p1.iq_max == doctest::Approx(0.0));
    CHECK(p1.id_max == 1.2);

    const auto q6 = current_limits(0, 0.0, 0.6, 1.2);
    CHECK(q6.id_max == doctest::Approx(std::sqrt(1.44 - 0.36)));

    // command beyond the ceiling is clipped before the square root
    const auto big = current_limits(0, 0.0, 5.0, 1.2);
    CHECK(big.id_max == doctest::Approx(0.0));
    CHECK_THROWS_AS(current_limits(0, 0.0, 0.0, -1.0), InvalidArgument);
}

TEST_CASE("voltage trip logic branch values") {
    const DeraParameters p = default_parameters();
    // normal band, timer inside
    CHECK(voltage_trip(1.0, 0.0, p) == 1.0);
    // below V_l0
    CHECK(voltage_trip(0.2, 0.0, p) == 0.0);
    // numerator vanishes at V_l0
    CHECK(voltage_trip(p.V_l0, 0.0, p) == doctest::Approx(0.0));
    // linear low-voltage branch
    CHECK(voltage_trip(0.45, 0.0, p) ==
          doctest::Approx((0.45 - p.V_l0) / (p.V_l1 - p.V_l0)));
    // high-voltage branch
    CHECK(voltage_trip(1.18, 0.0, p) ==
          doctest::Approx((p.V_h0 - 1.18) / (p.V_h0 - p.V_h1)));
    // partial recovery rows engage after the timers
    CHECK(voltage_trip(0.47, 1.0, p) ==
          doctest::Approx(p.V_frac * (0.47 - p.V_min) / (p.V_l1 - p.V_l0)));
    CHECK(voltage_trip(1.0, 1.0, p) ==
          doctest::Approx(p.V_frac * (p.V_l1 - p.V_min) / (p.V_l1 - p.V_l0)));
    CHECK(voltage_trip(1.16, 1.0, p) ==
          doctest::Approx(p.V_frac * (p.V_max - 1.16) / (p.V_h0 - p.V_h1)));
    CHECK(voltage_trip(1.19, 1.0, p) ==
          doctest::Approx((p.V_h0 - 1.19) / (p.V_h0 - p.V_h1)));
}

TEST_CASE("voltage trip output stays in [0,1] on a dense grid") {
    const DeraParameters p = default_parameters();
    for (double V = 0.0; V <= 1.5; V += 0.003) {
        for (double t : {0.0, 0.05, 0.1599, 0.1601, 0.5, 2.0}) {
            const double m = voltage_trip(V, t, p);
            CHECK(m >= 0.0);
            CHECK(m <= 1.0);
        }
    }
}

TEST_CASE("rhs linear filter states") {
    const DeraParameters p = default_parameters();
    DeraInputs u = nominal_inputs();
    StateVec<double> x{};
    x[0] = 0.9;
    const auto dx = dera_rhs(x, u, p, FlagConfig::case1());
    CHECK(dx[0] == doctest::Approx((1.0 - 0.9) / 0.02)); // 5.0
}

TEST_CASE("rhs constant-Q branch hand evaluation") {
    DeraParameters p = default_parameters();
    DeraInputs u = nominal_inputs();
    u.Q_ref = 0.2;
    StateVec<double> x{};
    x[0] = 1.0;
    x[2] = 10.0;
    const auto dx = dera_rhs(x, u, p, FlagConfig::case1());
    CHECK(dx[2] == doctest::Approx((0.2 / 1.0 - 10.0) / 0.02)); // -490
}

TEST_CASE("flag gating freezes the right states") {
    const DeraParameters p = default_parameters();
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> un(-0.5, 1.5);
    DeraInputs u = nominal_inputs();
    u.V = 0.85;
    u.freq = 1.01;
    for (int trial = 0; trial < 20; ++trial) {
        StateVec<double> x;
        for (auto& v : x) v = un(rng);
        const auto d1 = dera_rhs(x, u, p, FlagConfig::case1());
        CHECK(d1[1] == 0.0); // x2
        CHECK(d1[4] == 0.0); // x5
        CHECK(d1[5] == 0.0); // x6
        CHECK(d1[6] == 0.0); // x7
        CHECK(d1[7] == 0.0); // x8 (Fflag = 0 branch)
        const auto d2 = dera_rhs(x, u, p, FlagConfig::case2());
        CHECK(d2[4] == 0.0);
        CHECK(d2[1] != 0.0);
    }
}

TEST_CASE("equilibrium: derivatives vanish at the solved fixed point") {
    const DeraParameters p = default_parameters();
    const DeraInputs u = nominal_inputs();
    for (const auto& fl : {FlagConfig::case1(), FlagConfig::case2()}) {
        const auto x = solve_equilibrium(p, fl, u);
        const auto dx = dera_rhs(x, u, p, fl);
        for (int i = 0; i < kNumStates; ++i) CHECK(std::abs(dx[i]) < 1e-8);
        // the operating point carries the requested power
        const auto y = dera_outputs(x, u, p);
        CHECK(y.P == doctest::Approx(u.P_ref).epsilon(1e-3));
        CHECK(y.Q == doctest::Approx(u.Q_ref).epsilon(2e-2));
    }
}

TEST_CASE("outputs map and frame identities") {
    const DeraParameters p = default_parameters();
    DeraInputs u = nominal_inputs();
    StateVec<double> x{};
    x[9] = 0.5;
    x[3] = 0.0;
    auto y = dera_outputs(x, u, p);
    CHECK(y.P == doctest::Approx(0.5));
    CHECK(y.Q == doctest::Approx(0.0));

    x[3] = 0.2;
    y = dera_outputs(x, u, p);
    CHECK(y.E_d == doctest::Approx(1.0 - 0.2 * p.X_e)); // 0.98 with X_e = 0.1
    CHECK(y.P == doctest::Approx(y.V_d * y.I_d + y.V_q * y.I_q));
    CHECK(y.Q == doctest::Approx(y.V_d * y.I_q - y.V_q * y.I_d));

    x[9] = 0.0;
    x[3] = 0.0;
    u.V = 0.7;
    y = dera_outputs(x, u, p);
    CHECK(y.P == 0.0);
    CHECK(y.Q == 0.0);
}

TEST_CASE("Q strictly increases with injected reactive current") {
    const DeraParameters p = default_parameters();
    DeraInputs u = nominal_inputs();
    StateVec<double> x{};
    double prev = -1e9;
    for (double iq = -1.0; iq <= 1.0; iq += 0.05) {
        x[3] = iq;
        const double q = dera_outputs(x, u, p).Q;
        CHECK(q > prev);
        prev = q;
    }
}

TEST_CASE("smooth trajectories approach the hard-operator trajectory as k grows") {
    DeraParameters p = default_parameters();
    const FlagConfig fl = FlagConfig::case1();
    VoltageProfileSpec prof; // sag to 0.8 at t = 1
    prof.b = 6.0;            // 0.1 s sag, then the slow ramp branch
    const DeraInputs u = nominal_inputs();
    const auto x0 = solve_equilibrium(p, fl, u);

    const double t_end = 1.5, dt = 1.0 / 960.0;
    const auto x_hard = simulate(p, fl, x0, t_end, dt, true, prof);

    double gap_prev = 1e9;
    for (int k : {4, 12, 64}) {
        p.k_sat = k;
        p.k_db = k;
        const auto x_smooth = simulate(p, fl, x0, t_end, dt, false, prof);
        double gap = 0.0;
        for (int i = 0; i < kNumStates; ++i) gap = std::max(gap, std::abs(x_smooth[i] - x_hard[i]));
        CHECK(gap < gap_prev);
        gap_prev = gap;
    }
    CHECK(gap_prev < 5e-3);
}

TEST_CASE("rhs checked wrapper names the offending state") {
    DeraParameters p = default_parameters();
    DeraInputs u = nominal_inputs();
    StateVec<double> x{};
    x[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(dera_rhs_checked(x, u, p, FlagConfig::case1()),
                         doctest::Contains("x1"), SimulationFault);
}

TEST_CASE("parameter table lookup and validation") {
    DeraParameters p = default_parameters();
    CHECK(get_parameter(p, "T_rv") == 0.02);
    set_parameter(p, "T_rv", 0.21);
    CHECK(p.T_rv == 0.21);
    CHECK_THROWS_AS(get_parameter(p, "bogus"), InvalidArgument);
    CHECK(is_parameter_name("D_up"));
    CHECK(!is_parameter_name("D_sideways"));
    CHECK(parameter_names().size() == 44);

    p.T_rv = -1.0;
    CHECK_THROWS_AS(validate_parameters(p), InvalidArgument);
    p = default_parameters();
    p.V_min = 0.2; // outside [V_l0, V_l1]
    CHECK_THROWS_AS(validate_parameters(p), InvalidArgument);
}
