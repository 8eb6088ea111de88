#pragma once

// The der_a aggregated DER plant: parameter set, flags, current-limit and
// voltage-trip logics, the 10-state right-hand side and the output map.
//
// The right-hand side is templated over the scalar carrier so the same code
// produces forward trajectories (double), Jacobians (ad::Grad) and Taylor
// jets for Lie derivatives (ad::Series). Two-sided limiters are smoothed;
// one-sided limits (the 0.01 voltage floor, the droop half-axes) stay hard.

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "deracal/ad.hpp"
#include "deracal/errors.hpp"
#include "deracal/smoothing.hpp"

namespace deracal {

inline constexpr int kNumStates = 10;

template <class S>
using StateVec = std::array<S, kNumStates>;

// Binary flags selecting control branches (Table-style presets below).
struct FlagConfig {
    int pflag = 0;     // kappa1: 0 constant-Q, 1 power-factor control
    int fflag = 0;     // kappa2: 0 constant-P, 1 frequency-watt loop active
    int vtripflag = 0; // kappa3: voltage tripping multiplies injected currents
    int pqflag = 0;    // kappa4: 0 reactive priority, 1 active priority

    static FlagConfig case1() { return {0, 0, 0, 0}; }
    static FlagConfig case2() { return {1, 1, 0, 0}; }

    void validate() const;
    bool operator==(const FlagConfig&) const = default;
};

// States frozen at their initial values for a flag choice: the trip state
// when tripping is off, the P/f-loop states when that loop is off.
inline std::array<bool, kNumStates> frozen_states(const FlagConfig& fl) {
    std::array<bool, kNumStates> frozen{};
    if (!fl.fflag) frozen[1] = frozen[5] = frozen[6] = true; // x2, x6, x7
    if (!fl.vtripflag) frozen[4] = true;                     // x5
    return frozen;
}

// All named model constants. Values in pu on the unit base except time
// constants and timers (s), ramp limits (pu/s) and pfaref (rad).
template <class S>
struct DeraParamsT {
    S T_rv{}, T_p{}, T_iq{}, T_g{}, T_v{}, T_rf{}, T_pord{};
    S k_qv{}, k_pg{}, k_ig{}, k_w{};
    S D_dn{}, D_up{};
    S dbd1{}, dbd2{}, fbd1{}, fbd2{};
    S f_emin{}, f_emax{};
    S P_min{}, P_max{}, dP_min{}, dP_max{};
    S I_max{}, I_qmax{}, I_qmin{}, I_dmax{}, I_dmin{}, I_qh{}, I_ql{};
    S rrpwr{};
    S V_l0{}, V_l1{}, V_h0{}, V_h1{}, V_min{}, V_max{};
    S t_l1{}, t_h1{};
    S t_l0{}, t_h0{}; // named in the nomenclature, unused by the trip logic
    S V_frac{};
    S X_e{};
    S pfaref{};

    int k_sat = 12; // SSF sharpness
    int k_db = 12;  // SDBF sharpness
};

using DeraParameters = DeraParamsT<double>;

// Visits every real-valued parameter as (name, field). One list drives file
// I/O, parameter selection and AD lifting.
template <class S, class F>
void visit_params(DeraParamsT<S>& p, F&& f) {
    f("T_rv", p.T_rv); f("T_p", p.T_p); f("T_iq", p.T_iq); f("T_g", p.T_g);
    f("T_v", p.T_v); f("T_rf", p.T_rf); f("T_pord", p.T_pord);
    f("k_qv", p.k_qv); f("k_pg", p.k_pg); f("k_ig", p.k_ig); f("k_w", p.k_w);
    f("D_dn", p.D_dn); f("D_up", p.D_up);
    f("dbd1", p.dbd1); f("dbd2", p.dbd2); f("fbd1", p.fbd1); f("fbd2", p.fbd2);
    f("f_emin", p.f_emin); f("f_emax", p.f_emax);
    f("P_min", p.P_min); f("P_max", p.P_max); f("dP_min", p.dP_min); f("dP_max", p.dP_max);
    f("I_max", p.I_max); f("I_qmax", p.I_qmax); f("I_qmin", p.I_qmin);
    f("I_dmax", p.I_dmax); f("I_dmin", p.I_dmin); f("I_qh", p.I_qh); f("I_ql", p.I_ql);
    f("rrpwr", p.rrpwr);
    f("V_l0", p.V_l0); f("V_l1", p.V_l1); f("V_h0", p.V_h0); f("V_h1", p.V_h1);
    f("V_min", p.V_min); f("V_max", p.V_max);
    f("t_l1", p.t_l1); f("t_h1", p.t_h1); f("t_l0", p.t_l0); f("t_h0", p.t_h0);
    f("V_frac", p.V_frac);
    f("X_e", p.X_e);
    f("pfaref", p.pfaref);
}

template <class S, class F>
void visit_params(const DeraParamsT<S>& p, F&& f) {
    visit_params(const_cast<DeraParamsT<S>&>(p),
                 [&](const char* n, S& v) { f(n, const_cast<const S&>(v)); });
}

std::vector<std::string> parameter_names();
bool is_parameter_name(const std::string& name);
double get_parameter(const DeraParameters& p, const std::string& name);
void set_parameter(DeraParameters& p, const std::string& name, double value);

// NERC-guideline-flavoured defaults; the operating point matches the default
// references below (Pary 0.9 pu, Q 0.2 pu injection).
DeraParameters default_parameters();
void validate_parameters(const DeraParameters& p);

// Lift a double parameter set onto another carrier. mk maps double -> S and
// fixes the carrier shape (series length, gradient size).
template <class S, class Make>
DeraParamsT<S> lift_params(const DeraParameters& src, Make&& mk) {
    DeraParamsT<S> out;
    visit_params(out, [&](const char* name, S& field) {
        field = mk(get_parameter(src, name));
    });
    out.k_sat = src.k_sat;
    out.k_db = src.k_db;
    return out;
}

template <class S>
void set_param_field(DeraParamsT<S>& p, const std::string& name, const S& value) {
    bool found = false;
    visit_params(p, [&](const char* n, S& field) {
        if (name == n) {
            field = value;
            found = true;
        }
    });
    if (!found) throw InvalidArgument("unknown parameter: " + name);
}

// Exogenous inputs, zero-order held over an integration interval.
struct DeraInputs {
    double V = 1.0;
    double freq = 1.0;
    double V_ref0 = 1.0;
    double Q_ref = 0.2;
    double P_ref = 0.9;
    double f_ref = 1.0;
    double dt_input = 1.0 / 30.0; // sampling time of the input signal
    double trip_timer = 0.0;      // time since V left the normal band
};

struct DeraOutputs {
    double P, Q, I_d, I_q, V_d, V_q, E_d, E_q, theta;
};

struct CurrentLimits {
    double id_max, id_min, iq_max, iq_min;
};

// Current priority logic: commands are clipped to |.| <= I_max before the
// square root so the radicand stays nonnegative.
CurrentLimits current_limits(int pqflag, double ip_cmd, double iq_cmd, double i_max);

// Voltage tripping logic output m_v in [0,1]; t is the time since the
// voltage left the [V_l1, V_h1] normal band.
template <class S>
S voltage_trip_t(double V, double t, const DeraParamsT<S>& p) {
    using ad::constant_like;
    using ad::scalar_value;
    const double vl0 = scalar_value(p.V_l0), vl1 = scalar_value(p.V_l1);
    const double vh0 = scalar_value(p.V_h0), vh1 = scalar_value(p.V_h1);
    const double vmin = scalar_value(p.V_min), vmax = scalar_value(p.V_max);
    const double tl1 = scalar_value(p.t_l1), th1 = scalar_value(p.t_h1);

    S m = constant_like(p.V_l0, 0.0);
    if (V >= vl0 && V <= vmin) {
        m = (V - p.V_l0) / (p.V_l1 - p.V_l0);
    } else if (V > vmin && V <= vl1 && t <= tl1) {
        m = (V - p.V_l0) / (p.V_l1 - p.V_l0);
    } else if (V > vl1 && V < vh1 && t <= th1) {
        m = constant_like(p.V_l0, 1.0);
    } else if (V >= vh1 && V <= vh0 && t <= th1) {
        m = (p.V_h0 - V) / (p.V_h0 - p.V_h1);
    } else if (V >= vmin && V <= vl1 && t >= tl1) {
        m = p.V_frac * ((V - p.V_min) / (p.V_l1 - p.V_l0));
    } else if (V > vl1 && V < vh1 && t >= th1) {
        m = p.V_frac * ((p.V_l1 - p.V_min) / (p.V_l1 - p.V_l0));
    } else if (V >= vh1 && V <= vmax && t >= th1) {
        m = p.V_frac * ((p.V_max - V) / (p.V_h0 - p.V_h1));
    } else if (V > vmax && V <= vh0) {
        m = (p.V_h0 - V) / (p.V_h0 - p.V_h1);
    }
    return ad::vmax(ad::vmin(m, 1.0), 0.0);
}

double voltage_trip(double V, double t, const DeraParameters& p);

struct EvalOptions {
    double deriv_clamp = 0.0; // SSF/SDBF derivative floor, Grad carrier only
};

// The 10-state right-hand side, Eqs-style flag branches included. Frozen
// states return exactly zero.
template <class S>
StateVec<S> dera_rhs(const StateVec<S>& x, const DeraInputs& u,
                     const DeraParamsT<S>& p, const FlagConfig& fl,
                     const EvalOptions& opt = {}) {
    using ad::constant_like;
    using ad::vmax;
    using ad::vmin;
    using smooth::deadband;
    using smooth::sat;
    using std::tan;

    const S& x1 = x[0];
    const S& x2 = x[1];
    const S& x3 = x[2];
    const S& x4 = x[3];
    const S& x5 = x[4];
    const S& x6 = x[5];
    const S& x7 = x[6];
    const S& x8 = x[7];
    const S& x9 = x[8];
    const S& x10 = x[9];

    const int ks = p.k_sat;
    const int kd = p.k_db;
    const double cl = opt.deriv_clamp;
    const S zero = constant_like(x1, 0.0);

    StateVec<S> dx;
    dx.fill(zero);

    const S vf = vmax(x1, 0.01); // hard one-sided voltage floor

    // x1: terminal voltage measurement filter
    dx[0] = (u.V - x1) / p.T_rv;

    // x2: generated active power filter
    if (fl.fflag) dx[1] = (x9 - x2) / p.T_p;

    // x3: reactive current command from Q reference or power-factor control
    if (fl.pflag == 0)
        dx[2] = (u.Q_ref / vf - x3) / p.T_iq;
    else
        dx[2] = (x2 * tan(p.pfaref) / vf - x3) / p.T_iq;

    // x4: injected reactive current
    {
        const S iqv = p.k_qv * deadband(u.V_ref0 - x1, p.dbd1, p.dbd2, kd, cl);
        const S cmd = x3 - sat(iqv, p.I_ql, p.I_qh, ks, cl);
        S lim = sat(cmd, p.I_qmin, p.I_qmax, ks, cl);
        if (fl.vtripflag) lim = lim * x5;
        dx[3] = (lim - x4) / p.T_g;
    }

    // x5: trip voltage state
    if (fl.vtripflag) {
        const S mv = voltage_trip_t(u.V, u.trip_timer, p);
        dx[4] = (mv - x5) / p.T_v;
    }

    // x6: frequency measurement filter
    if (fl.fflag) dx[5] = (u.freq - x6) / p.T_rf;

    // x7: PI control effort with anti-windup
    if (fl.fflag) {
        const S dfp = deadband(u.f_ref - x6, p.fbd1, p.fbd2, kd, cl);
        const S droop = p.D_dn * vmin(dfp, 0.0) + p.D_up * vmax(dfp, 0.0);
        const S plim = sat(u.P_ref + droop - x2, p.f_emin, p.f_emax, ks, cl);
        const S pa = sat(x7 + p.k_pg * plim, p.P_min, p.P_max, ks, cl);
        dx[6] = p.k_ig * plim + p.k_w * (pa - p.k_pg * plim - x7);
    }

    // x8: ramp-rate limited power order
    if (fl.fflag) {
        const S x7s = sat(x7, p.P_min, p.P_max, ks, cl);
        dx[7] = sat((x7s - x8) / u.dt_input, p.dP_min, p.dP_max, ks, cl);
    }

    // x9: generated active power lag
    const S x9s = sat(x9, p.P_min, p.P_max, ks, cl);
    dx[8] = (x8 - x9s) / p.T_pord;

    // x10: injected active current with current limit and recovery ramp
    {
        S num = x9s;
        if (fl.vtripflag) num = x5 * num;
        const S ip_cmd = num / vf;
        const S id_lim = sat(ip_cmd, p.I_dmin, p.I_dmax, ks, cl);
        dx[9] = sat((id_lim - x10) / p.T_g, -p.rrpwr, p.rrpwr, ks, cl);
    }

    return dx;
}

// Double-path wrapper with finiteness checking; names the offending state.
StateVec<double> dera_rhs_checked(const StateVec<double>& x, const DeraInputs& u,
                                  const DeraParameters& p, const FlagConfig& fl);

// Output map in the terminal-voltage-aligned dq frame (V_d = V, V_q = 0).
DeraOutputs dera_outputs(const StateVec<double>& x, const DeraInputs& u,
                         const DeraParameters& p);

std::array<std::string, kNumStates> state_names();
int state_index(const std::string& name); // "x1".."x10" -> 0..9

// Pre-disturbance fixed point: damped Newton on the active sub-vector with
// frozen states held at consistent values. Targets P = P_ref, Q = Q_ref at
// the given terminal voltage.
StateVec<double> solve_equilibrium(const DeraParameters& p, const FlagConfig& fl,
                                   const DeraInputs& u);

} // namespace deracal
