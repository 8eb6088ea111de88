#include "deracal/dera.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace deracal {

void FlagConfig::validate() const {
    for (int v : {pflag, fflag, vtripflag, pqflag})
        if (v != 0 && v != 1) throw InvalidArgument("FlagConfig: flags must be 0 or 1");
}

std::vector<std::string> parameter_names() {
    std::vector<std::string> names;
    DeraParameters p;
    visit_params(p, [&](const char* n, const double&) { names.emplace_back(n); });
    return names;
}

bool is_parameter_name(const std::string& name) {
    bool found = false;
    DeraParameters p;
    visit_params(p, [&](const char* n, const double&) { found |= (name == n); });
    return found;
}

double get_parameter(const DeraParameters& p, const std::string& name) {
    double out = 0.0;
    bool found = false;
    visit_params(p, [&](const char* n, const double& v) {
        if (name == n) {
            out = v;
            found = true;
        }
    });
    if (!found) throw InvalidArgument("unknown parameter: " + name);
    return out;
}

void set_parameter(DeraParameters& p, const std::string& name, double value) {
    set_param_field(p, name, value);
}

DeraParameters default_parameters() {
    DeraParameters p;
    // Time constants (s). The estimable subset mirrors the NERC guideline.
    p.T_rv = 0.02;
    p.T_p = 0.02;
    p.T_iq = 0.02;
    p.T_g = 0.02;
    p.T_v = 0.02;
    p.T_rf = 0.02;
    p.T_pord = 0.02;
    // Gains.
    p.k_qv = 5.0;
    p.k_pg = 0.10;
    p.k_ig = 10.0;
    p.k_w = 1.0; // anti-windup gain, not listed in the guideline tables
    p.D_dn = 20.0;
    p.D_up = 20.0;
    // Deadbands (pu). Symmetric so the nominal point sits at the band centre.
    p.dbd1 = -0.02;
    p.dbd2 = 0.02;
    p.fbd1 = -0.0006;
    p.fbd2 = 0.0006;
    // Frequency-error limits effectively disable that saturation.
    p.f_emin = -99.0;
    p.f_emax = 99.0;
    // Power and ramp limits.
    p.P_min = 0.0;
    p.P_max = 1.1;
    p.dP_min = -0.5;
    p.dP_max = 0.5;
    // Current limits; I_dmax/I_qmax/I_qmin are re-derived from the priority
    // logic at scenario setup, these are standalone defaults.
    p.I_max = 1.2;
    p.I_qmax = 1.2;
    p.I_qmin = -1.2;
    p.I_dmax = 1.2;
    p.I_dmin = 0.0;
    p.I_qh = 1.0;
    p.I_ql = -1.0;
    p.rrpwr = 2.0;
    // Voltage tripping breakpoints, timers and recovery fraction.
    p.V_l0 = 0.44;
    p.V_l1 = 0.49;
    p.V_h0 = 1.20;
    p.V_h1 = 1.15;
    p.V_min = 0.46;
    p.V_max = 1.17;
    p.t_l1 = 0.16;
    p.t_h1 = 0.16;
    p.t_l0 = 0.16;
    p.t_h0 = 0.16;
    p.V_frac = 0.7;
    // Interface reactance and power-factor reference for the default
    // operating point (P 0.9 pu, Q 0.2 pu).
    p.X_e = 0.1;
    p.pfaref = std::atan(0.2 / 0.9);
    return p;
}

void validate_parameters(const DeraParameters& p) {
    auto positive = [&](double v, const char* n) {
        if (!(v > 0.0)) throw InvalidArgument(std::string("parameter must be positive: ") + n);
    };
    positive(p.T_rv, "T_rv");
    positive(p.T_p, "T_p");
    positive(p.T_iq, "T_iq");
    positive(p.T_g, "T_g");
    positive(p.T_v, "T_v");
    positive(p.T_rf, "T_rf");
    positive(p.T_pord, "T_pord");
    positive(p.I_max, "I_max");
    positive(p.rrpwr, "rrpwr");
    auto ordered = [&](double lo, double hi, const char* n) {
        if (!(lo < hi)) throw InvalidArgument(std::string("limit pair out of order: ") + n);
    };
    ordered(p.dbd1, p.dbd2, "dbd1/dbd2");
    ordered(p.fbd1, p.fbd2, "fbd1/fbd2");
    ordered(p.f_emin, p.f_emax, "f_emin/f_emax");
    ordered(p.P_min, p.P_max, "P_min/P_max");
    ordered(p.dP_min, p.dP_max, "dP_min/dP_max");
    ordered(p.I_qmin, p.I_qmax, "I_qmin/I_qmax");
    ordered(p.I_dmin, p.I_dmax, "I_dmin/I_dmax");
    ordered(p.I_ql, p.I_qh, "I_ql/I_qh");
    if (!(p.V_l0 < p.V_l1 && p.V_l1 < p.V_h1 && p.V_h1 < p.V_h0))
        throw InvalidArgument("trip breakpoints must satisfy V_l0 < V_l1 < V_h1 < V_h0");
    if (!(p.V_l0 <= p.V_min && p.V_min <= p.V_l1))
        throw InvalidArgument("V_min must lie in [V_l0, V_l1]");
    if (!(p.V_h1 <= p.V_max && p.V_max <= p.V_h0))
        throw InvalidArgument("V_max must lie in [V_h1, V_h0]");
    if (!(p.V_frac >= 0.0 && p.V_frac <= 1.0))
        throw InvalidArgument("V_frac must lie in [0, 1]");
    if (p.k_sat < 2 || p.k_sat % 2 != 0 || p.k_db < 2 || p.k_db % 2 != 0)
        throw InvalidArgument("smoothing sharpness must be even and >= 2");
}

CurrentLimits current_limits(int pqflag, double ip_cmd, double iq_cmd, double i_max) {
    if (!(i_max > 0.0)) throw InvalidArgument("current_limits: I_max must be positive");
    if (!std::isfinite(ip_cmd) || !std::isfinite(iq_cmd))
        throw InvalidArgument("current_limits: non-finite command");
    CurrentLimits lim{};
    if (pqflag == 0) {
        const double iq = std::clamp(iq_cmd, -i_max, i_max);
        lim.iq_max = i_max;
        lim.iq_min = -i_max;
        lim.id_max = std::sqrt(i_max * i_max - iq * iq);
        lim.id_min = 0.0;
    } else {
        const double ip = std::clamp(ip_cmd, -i_max, i_max);
        lim.id_max = i_max;
        lim.id_min = 0.0;
        lim.iq_max = std::sqrt(i_max * i_max - ip * ip);
        lim.iq_min = -lim.iq_max;
    }
    return lim;
}

double voltage_trip(double V, double t, const DeraParameters& p) {
    return voltage_trip_t(V, t, p);
}

StateVec<double> dera_rhs_checked(const StateVec<double>& x, const DeraInputs& u,
                                  const DeraParameters& p, const FlagConfig& fl) {
    StateVec<double> dx = dera_rhs(x, u, p, fl);
    for (int i = 0; i < kNumStates; ++i)
        if (!std::isfinite(dx[i]))
            throw SimulationFault("non-finite derivative in state " + state_names()[i]);
    return dx;
}

DeraOutputs dera_outputs(const StateVec<double>& x, const DeraInputs& u,
                         const DeraParameters& p) {
    DeraOutputs o{};
    o.V_d = u.V;
    o.V_q = 0.0;
    o.I_d = x[9];
    o.I_q = x[3];
    o.P = o.V_d * o.I_d + o.V_q * o.I_q;
    o.Q = o.V_d * o.I_q - o.V_q * o.I_d;
    o.E_q = o.V_q + o.I_d * p.X_e;
    o.E_d = o.V_d - o.I_q * p.X_e;
    // Vbar = (E_d + j E_q) e^{j theta} with Vbar = V + j0.
    o.theta = -std::atan2(o.E_q, o.E_d);
    return o;
}

std::array<std::string, kNumStates> state_names() {
    return {"x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9", "x10"};
}

int state_index(const std::string& name) {
    const auto names = state_names();
    for (int i = 0; i < kNumStates; ++i)
        if (names[i] == name) return i;
    throw InvalidArgument("unknown state name: " + name);
}

namespace {

// Monotone 1-D solve of g(s) = target on [lo, hi] by bisection.
double solve_monotone(const std::function<double(double)>& g, double target,
                      double lo, double hi) {
    double flo = g(lo) - target;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fm = g(mid) - target;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

} // namespace

StateVec<double> solve_equilibrium(const DeraParameters& p, const FlagConfig& fl,
                                   const DeraInputs& u) {
    validate_parameters(p);
    fl.validate();

    const int ks = p.k_sat;
    const double vf = std::max(u.V, 0.01);

    // Closed-form style initial guess. Choose x9 so the injected current
    // matches P_ref at the terminal voltage, then make the upstream chain
    // consistent with it.
    const double id_target = u.P_ref / u.V;
    const double x9_guess = solve_monotone(
        [&](double x9) {
            const double x9s = smooth::sat(x9, p.P_min, p.P_max, ks);
            return smooth::sat(x9s / vf, p.I_dmin, p.I_dmax, ks);
        },
        id_target, p.P_min - 0.5, p.P_max + 0.5);

    StateVec<double> x{};
    x[0] = u.V;
    x[1] = x9_guess;
    x[2] = u.Q_ref / vf;
    x[3] = smooth::sat(x[2], p.I_qmin, p.I_qmax, ks);
    x[4] = 1.0;
    x[5] = u.freq;
    x[6] = x9_guess;
    x[7] = smooth::sat(x9_guess, p.P_min, p.P_max, ks);
    x[8] = x9_guess;
    x[9] = smooth::sat(x[7] / vf, p.I_dmin, p.I_dmax, ks);

    // Newton variables: states whose derivative is structurally nonzero.
    std::vector<int> act;
    const auto frozen = frozen_states(fl);
    for (int i = 0; i < kNumStates; ++i) {
        if (frozen[i]) continue;
        if (i == 7 && !fl.fflag) continue; // x8 has zero derivative with Fflag = 0
        act.push_back(i);
    }
    const int n = int(act.size());

    auto residual = [&](const StateVec<double>& xs) {
        const auto dx = dera_rhs(xs, u, p, fl);
        Eigen::VectorXd r(n);
        for (int i = 0; i < n; ++i) r(i) = dx[act[i]];
        return r;
    };

    Eigen::VectorXd r = residual(x);
    for (int iter = 0; iter < 100 && r.norm() > 1e-13; ++iter) {
        // Jacobian of the active residual via forward AD.
        StateVec<ad::Grad> xg;
        for (int i = 0; i < kNumStates; ++i) xg[i] = ad::Grad(x[i]);
        for (int i = 0; i < n; ++i) xg[act[i]] = ad::Grad::seeded(x[act[i]], n, i);
        const auto pg = lift_params<ad::Grad>(p, [](double v) { return ad::Grad(v); });
        const auto dxg = dera_rhs(xg, u, pg, fl);
        Eigen::MatrixXd J(n, n);
        for (int i = 0; i < n; ++i) {
            const auto& gi = dxg[act[i]].g;
            for (int j = 0; j < n; ++j) J(i, j) = gi.size() ? gi(j) : 0.0;
        }
        const Eigen::VectorXd step = J.fullPivLu().solve(-r);
        double alpha = 1.0;
        const double r0 = r.norm();
        for (int halving = 0; halving < 40; ++halving) {
            StateVec<double> xt = x;
            for (int i = 0; i < n; ++i) xt[act[i]] = x[act[i]] + alpha * step(i);
            const Eigen::VectorXd rt = residual(xt);
            if (rt.norm() < r0 || rt.norm() < 1e-13) {
                x = xt;
                r = rt;
                break;
            }
            alpha *= 0.5;
        }
    }
    if (r.norm() > 1e-8)
        throw NumericalFault("solve_equilibrium: Newton did not converge, residual " +
                             std::to_string(r.norm()));
    return x;
}

} // namespace deracal
