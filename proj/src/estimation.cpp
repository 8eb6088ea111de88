#include "deracal/estimation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace deracal {

void FilterConfig::validate() const {
    if (!(r_default > 0.0 && w_state > 0.0 && w_param > 0.0 && p0_state > 0.0))
        throw InvalidArgument("FilterConfig: variances must be positive");
    if (!(ukf_alpha > 0.0 && ukf_alpha <= 1.0))
        throw InvalidArgument("FilterConfig: ukf_alpha must lie in (0, 1]");
    if (!(ukf_beta >= 0.0)) throw InvalidArgument("FilterConfig: ukf_beta must be nonnegative");
    if (!(deriv_clamp_eps >= 0.0))
        throw InvalidArgument("FilterConfig: deriv_clamp_eps must be nonnegative");
    if (substeps < 1) throw InvalidArgument("FilterConfig: substeps must be >= 1");
    if (tail_samples < 2) throw InvalidArgument("FilterConfig: tail_samples must be >= 2");
    for (const auto& [name, b] : parameter_bounds)
        if (!(b.first < b.second))
            throw InvalidArgument("FilterConfig: bounds min must be below max for " + name);
}

AugmentedState make_initial_state(const AugmentedSpec& spec, const DeraParameters& init_params,
                                  const DeraInputs& refs) {
    AugmentedState s;
    s.full_state = solve_equilibrium(init_params, spec.flags, refs);
    s.params.resize(Eigen::Index(spec.parameters.size()));
    for (std::size_t j = 0; j < spec.parameters.size(); ++j)
        s.params(Eigen::Index(j)) = get_parameter(init_params, spec.parameters[j]);
    return s;
}

namespace {

struct Bounds {
    std::vector<double> lo, hi;
};

Bounds resolve_bounds(const std::vector<std::string>& names, const FilterConfig& cfg,
                      double dt_sub) {
    Bounds b;
    for (const auto& name : names) {
        const auto it = cfg.parameter_bounds.find(name);
        if (it != cfg.parameter_bounds.end()) {
            b.lo.push_back(it->second.first);
            b.hi.push_back(it->second.second);
        } else if (!name.empty() && name[0] == 'T') {
            // positivity plus explicit-integrator stability: a time constant
            // below ~3 substeps would blow up the RK4 prediction
            b.lo.push_back(std::max(cfg.param_floor, 3.0 * dt_sub));
            b.hi.push_back(std::numeric_limits<double>::infinity());
        } else if (!name.empty() && (name[0] == 'k' || name[0] == 'D')) {
            b.lo.push_back(cfg.param_floor);
            b.hi.push_back(std::numeric_limits<double>::infinity());
        } else {
            b.lo.push_back(-std::numeric_limits<double>::infinity());
            b.hi.push_back(std::numeric_limits<double>::infinity());
        }
    }
    return b;
}

void project_params(Eigen::VectorXd& xa, int n_states, const Bounds& b) {
    for (std::size_t j = 0; j < b.lo.size(); ++j) {
        double& v = xa(n_states + Eigen::Index(j));
        v = std::clamp(v, b.lo[j], b.hi[j]);
    }
}

Eigen::VectorXd process_noise_diag(const PlantHooks& plant, const FilterConfig& cfg,
                                   const Eigen::VectorXd& x0) {
    if (cfg.process_noise.size()) {
        if (cfg.process_noise.size() != plant.dim)
            throw InvalidArgument("process_noise override has wrong length");
        return cfg.process_noise;
    }
    Eigen::VectorXd w(plant.dim);
    w.head(plant.n_states).setConstant(cfg.w_state);
    for (int j = plant.n_states; j < plant.dim; ++j) {
        const double rel = cfg.w_param_rel * std::abs(x0(j));
        w(j) = cfg.w_param + rel * rel;
    }
    return w;
}

Eigen::VectorXd initial_cov_diag(const PlantHooks& plant, const FilterConfig& cfg,
                                 const Eigen::VectorXd& x0) {
    if (cfg.initial_covariance.size()) {
        if (cfg.initial_covariance.size() != plant.dim)
            throw InvalidArgument("initial_covariance override has wrong length");
        return cfg.initial_covariance;
    }
    Eigen::VectorXd p0(plant.dim);
    p0.head(plant.n_states).setConstant(cfg.p0_state);
    for (int j = plant.n_states; j < plant.dim; ++j) {
        const double s = cfg.p0_param_rel * std::abs(x0(j)) + cfg.p0_param_abs;
        p0(j) = s * s;
    }
    return p0;
}

Eigen::Vector2d measurement_noise_diag(const FilterConfig& cfg) {
    if (cfg.measurement_noise.size()) {
        if (cfg.measurement_noise.size() != 2)
            throw InvalidArgument("measurement_noise override has wrong length");
        return cfg.measurement_noise;
    }
    return Eigen::Vector2d::Constant(cfg.r_default);
}

void symmetrize(Eigen::MatrixXd& P) { P = 0.5 * (P + P.transpose()).eval(); }

void repair_pd(Eigen::MatrixXd& P, std::size_t step) {
    symmetrize(P);
    for (double jit = 1e-12; jit <= 1.0001e-6; jit *= 10.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(P);
        if (llt.info() == Eigen::Success) return;
        P += jit * Eigen::MatrixXd::Identity(P.rows(), P.cols());
    }
    throw DivergenceError("covariance lost positive definiteness at step " +
                          std::to_string(step));
}

Eigen::MatrixXd chol_with_jitter(Eigen::MatrixXd P, std::size_t step) {
    symmetrize(P);
    for (double jit = 1e-12; jit <= 1.0001e-6; jit *= 10.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(P);
        if (llt.info() == Eigen::Success) return llt.matrixL();
        P += jit * Eigen::MatrixXd::Identity(P.rows(), P.cols());
    }
    throw DivergenceError("sigma-point Cholesky failed after max jitter at step " +
                          std::to_string(step));
}

void check_data(const PlantHooks& plant, const std::vector<MeasurementRecord>& data) {
    if (data.size() < 2) throw ContractError("calibration needs at least two measurements");
    bool any = false;
    for (const auto& r : data)
        any = any || (r.valid[std::size_t(plant.channels[0])] &&
                      r.valid[std::size_t(plant.channels[1])]);
    if (!any) throw ContractError("no record carries the update channels of this spec");
}

struct Logger {
    CalibrationResult res;
    int n_states = 0;

    void init(const PlantHooks& plant, std::size_t T, int tail) {
        n_states = plant.n_states;
        res.parameter_names = plant.parameter_names;
        res.tail_samples = tail;
        res.estimates.resize(Eigen::Index(T), Eigen::Index(plant.dim - plant.n_states));
        res.state_estimates.resize(Eigen::Index(T), n_states);
        res.innovations.setZero(Eigen::Index(T), 2);
        res.times.resize(T);
    }

    void log(std::size_t k, double t, const Eigen::VectorXd& xa, const Eigen::VectorXd& innov,
             const Eigen::MatrixXd& P) {
        res.times[k] = t;
        res.state_estimates.row(Eigen::Index(k)) = xa.head(n_states).transpose();
        res.estimates.row(Eigen::Index(k)) = xa.tail(xa.size() - n_states).transpose();
        if (innov.size() == 2) res.innovations.row(Eigen::Index(k)) = innov.transpose();
        res.covariance_trace.push_back(P.trace());
    }

    void finish(const Eigen::VectorXd& xa, const Eigen::MatrixXd& P) {
        res.final_estimate = xa.tail(xa.size() - n_states);
        res.final_covariance = P;
        const Eigen::Index T = res.estimates.rows();
        const Eigen::Index tail = std::min<Eigen::Index>(res.tail_samples, T);
        res.cov_tail.resize(res.estimates.cols());
        for (Eigen::Index j = 0; j < res.estimates.cols(); ++j) {
            const auto col = res.estimates.col(j).tail(tail);
            const double mean = col.mean();
            const double var = (col.array() - mean).square().sum() / double(tail);
            res.cov_tail(j) = std::abs(mean) > 0 ? std::sqrt(var) / std::abs(mean) : 0.0;
        }
        res.innovation_lag1.resize(2);
        for (Eigen::Index c = 0; c < 2; ++c) {
            const auto col = res.innovations.col(c).tail(tail);
            const double mean = col.mean();
            double num = 0.0, den = 0.0;
            for (Eigen::Index i = 0; i < tail; ++i) {
                const double d = col(i) - mean;
                den += d * d;
                if (i + 1 < tail) num += d * (col(i + 1) - mean);
            }
            res.innovation_lag1(c) = den > 0.0 ? num / den : 0.0;
        }
    }
};

} // namespace

CalibrationResult kalman_run(FilterKind kind, const PlantHooks& plant, const FilterConfig& cfg,
                             const std::vector<MeasurementRecord>& data,
                             const Eigen::VectorXd& x0) {
    cfg.validate();
    check_data(plant, data);
    if (x0.size() != plant.dim) throw ContractError("initial state has wrong dimension");

    const int na = plant.dim;
    const double dt_sub = (data[1].t - data[0].t) / cfg.substeps;
    const Bounds bounds = resolve_bounds(plant.parameter_names, cfg, dt_sub);
    Eigen::VectorXd xa = x0;
    for (std::size_t j = 0; j < bounds.lo.size(); ++j)
        if (xa(plant.n_states + Eigen::Index(j)) < bounds.lo[j] ||
            xa(plant.n_states + Eigen::Index(j)) > bounds.hi[j])
            throw ContractError("initial parameter outside bounds: " + plant.parameter_names[j]);

    Eigen::MatrixXd P = initial_cov_diag(plant, cfg, x0).asDiagonal();
    const Eigen::MatrixXd W = process_noise_diag(plant, cfg, x0).asDiagonal();
    const Eigen::Vector2d rdiag = measurement_noise_diag(cfg);

    // Scaled unscented transform weights.
    const double L = na;
    const double lambda = cfg.ukf_alpha * cfg.ukf_alpha * (L + cfg.ukf_kappa) - L;
    const double gamma = std::sqrt(L + lambda);
    const double wm0 = lambda / (L + lambda);
    const double wc0 = wm0 + 1.0 - cfg.ukf_alpha * cfg.ukf_alpha + cfg.ukf_beta;
    const double wi = 0.5 / (L + lambda);
    const int nsig = 2 * na + 1;

    Logger log;
    log.init(plant, data.size(), cfg.tail_samples);

    for (std::size_t k = 0; k < data.size(); ++k) {
        const auto& rec = data[k];
        if (k > 0) {
            const double dt_frame = rec.t - data[k - 1].t;
            if (!(dt_frame > 0.0)) throw DataFault("non-increasing timestamps in data");
            if (kind == FilterKind::ekf) {
                Eigen::MatrixXd F(na, na);
                xa = plant.predict(xa, data[k - 1], dt_frame, true, &F);
                P = F * P * F.transpose() + W;
                symmetrize(P);
            } else {
                const Eigen::MatrixXd Lc = chol_with_jitter(P, k);
                Eigen::MatrixXd sig(na, nsig);
                sig.col(0) = xa;
                for (int i = 0; i < na; ++i) {
                    sig.col(1 + i) = xa + gamma * Lc.col(i);
                    sig.col(1 + na + i) = xa - gamma * Lc.col(i);
                }
                // Non-centre points first; the centre advances the plant's
                // internal background exactly once.
                for (int i = 1; i < nsig; ++i)
                    sig.col(i) = plant.predict(sig.col(i), data[k - 1], dt_frame, false, nullptr);
                sig.col(0) = plant.predict(sig.col(0), data[k - 1], dt_frame, true, nullptr);

                xa = wm0 * sig.col(0);
                for (int i = 1; i < nsig; ++i) xa += wi * sig.col(i);
                P = W;
                const Eigen::VectorXd d0 = sig.col(0) - xa;
                P += wc0 * d0 * d0.transpose();
                for (int i = 1; i < nsig; ++i) {
                    const Eigen::VectorXd d = sig.col(i) - xa;
                    P += wi * d * d.transpose();
                }
                symmetrize(P);
            }
        }

        const bool have0 = rec.valid[std::size_t(plant.channels[0])];
        const bool have1 = rec.valid[std::size_t(plant.channels[1])];
        Eigen::VectorXd innov = Eigen::VectorXd::Zero(2);
        if (have0 || have1) {
            const int m = (have0 ? 1 : 0) + (have1 ? 1 : 0);
            Eigen::VectorXd nu(m);
            Eigen::MatrixXd S(m, m), K(na, m);

            if (kind == FilterKind::ekf) {
                Eigen::MatrixXd Hfull(2, na);
                const Eigen::VectorXd zhat = plant.measure(xa, rec, &Hfull);
                Eigen::MatrixXd H(m, na);
                Eigen::MatrixXd R = Eigen::MatrixXd::Zero(m, m);
                int r = 0;
                for (int c = 0; c < 2; ++c) {
                    if (!rec.valid[std::size_t(plant.channels[std::size_t(c)])]) continue;
                    nu(r) = rec.channel(plant.channels[std::size_t(c)]) - zhat(c);
                    H.row(r) = Hfull.row(c);
                    R(r, r) = rdiag(c);
                    innov(c) = nu(r);
                    ++r;
                }
                if (!nu.allFinite()) throw DataFault("NaN innovation at step " + std::to_string(k));
                S = H * P * H.transpose() + R;
                K = P * H.transpose() * S.inverse();
                xa += K * nu;
                // Joseph form: stays positive semidefinite under the wide
                // parameter priors
                const Eigen::MatrixXd IKH = Eigen::MatrixXd::Identity(na, na) - K * H;
                P = IKH * P * IKH.transpose() + K * R * K.transpose();
            } else {
                const Eigen::MatrixXd Lc = chol_with_jitter(P, k);
                Eigen::MatrixXd sig(na, nsig);
                sig.col(0) = xa;
                for (int i = 0; i < na; ++i) {
                    sig.col(1 + i) = xa + gamma * Lc.col(i);
                    sig.col(1 + na + i) = xa - gamma * Lc.col(i);
                }
                Eigen::MatrixXd Z(m, nsig);
                for (int i = 0; i < nsig; ++i) {
                    const Eigen::VectorXd zi = plant.measure(sig.col(i), rec, nullptr);
                    int r = 0;
                    for (int c = 0; c < 2; ++c)
                        if (rec.valid[std::size_t(plant.channels[std::size_t(c)])])
                            Z(r++, i) = zi(c);
                }
                Eigen::VectorXd zbar = wm0 * Z.col(0);
                for (int i = 1; i < nsig; ++i) zbar += wi * Z.col(i);

                S = Eigen::MatrixXd::Zero(m, m);
                Eigen::MatrixXd C = Eigen::MatrixXd::Zero(na, m);
                const Eigen::VectorXd dz0 = Z.col(0) - zbar;
                S += wc0 * dz0 * dz0.transpose();
                C += wc0 * (sig.col(0) - xa) * dz0.transpose();
                for (int i = 1; i < nsig; ++i) {
                    const Eigen::VectorXd dz = Z.col(i) - zbar;
                    S += wi * dz * dz.transpose();
                    C += wi * (sig.col(i) - xa) * dz.transpose();
                }
                int r = 0;
                for (int c = 0; c < 2; ++c) {
                    if (!rec.valid[std::size_t(plant.channels[std::size_t(c)])]) continue;
                    S(r, r) += rdiag(c);
                    nu(r) = rec.channel(plant.channels[std::size_t(c)]) - zbar(r);
                    innov(c) = nu(r);
                    ++r;
                }
                if (!nu.allFinite()) throw DataFault("NaN innovation at step " + std::to_string(k));
                K = C * S.inverse();
                xa += K * nu;
                P -= K * S * K.transpose();
            }
            repair_pd(P, k);
            project_params(xa, plant.n_states, bounds);
            if (plant.after_update) plant.after_update(xa);
        }
        log.log(k, rec.t, xa, innov, P);
    }
    log.finish(xa, P);
    return log.res;
}

namespace {

// Adapter binding the generic recursion to the augmented der_a.
struct DeraPlant {
    AugmentedSystem sys;
    FilterConfig cfg;
    AugmentedSpec spec;

    DeraPlant(const AugmentedSpec& s, const DeraParameters& base, const DeraInputs& refs,
              const FilterConfig& c, const AugmentedState& init)
        : sys(s, base), cfg(c), spec(s) {
        sys.set_inputs(refs);
        sys.set_background(init.full_state);
    }

    PlantHooks hooks() {
        PlantHooks h;
        h.dim = sys.dim();
        h.n_states = sys.n_states();
        h.channels = spec.measurement_set == MeasurementSet::vpq ? std::array<int, 2>{2, 3}
                                                                 : std::array<int, 2>{4, 5};
        h.parameter_names = spec.parameters;
        h.predict = [this](const Eigen::VectorXd& xa, const MeasurementRecord& prev,
                           double dt_frame, bool is_center, Eigen::MatrixXd* F) {
            return predict(xa, prev, dt_frame, is_center, F);
        };
        h.measure = [this](const Eigen::VectorXd& xa, const MeasurementRecord& rec,
                           Eigen::MatrixXd* H) {
            if (H) *H = sys.h_filter_jacobian(xa, rec.V);
            return sys.h_filter(xa, rec.V);
        };
        h.after_update = [this](Eigen::VectorXd& xa) {
            StateVec<double> bg = sys.background();
            for (int i = 0; i < sys.n_states(); ++i)
                bg[std::size_t(state_index(spec.states[std::size_t(i)]))] = xa(i);
            sys.set_background(bg);
        };
        return h;
    }

    Eigen::VectorXd predict(const Eigen::VectorXd& xa, const MeasurementRecord& prev,
                            double dt_frame, bool is_center, Eigen::MatrixXd* F) {
        DeraInputs uh = sys.inputs();
        uh.V = prev.V;
        uh.freq = prev.freq;
        sys.set_inputs(uh);
        const double dt = dt_frame / cfg.substeps;
        const int na = sys.dim();

        Eigen::VectorXd z = sys.pack_full(xa);
        if (F && cfg.jacobian == JacobianKind::ad) {
            Eigen::MatrixXd F_full =
                Eigen::MatrixXd::Identity(sys.full_dim(), sys.full_dim());
            for (int s = 0; s < cfg.substeps; ++s) {
                const StepResult st = rk4_step_with_jacobian(
                    z, dt, [&](const Eigen::VectorXd& zz) { return sys.f_full(zz); },
                    [&](const Eigen::VectorXd& zz) { return sys.jac_full(zz, cfg.deriv_clamp_eps); },
                    cfg.chain);
                z = st.next_state;
                F_full = st.transition_jacobian * F_full;
            }
            const auto& sel = sys.selected_indices();
            F->resize(na, na);
            for (int i = 0; i < na; ++i)
                for (int j = 0; j < na; ++j)
                    (*F)(i, j) = F_full(sel[std::size_t(i)], sel[std::size_t(j)]);
        } else {
            if (F) {
                // Analytic mode: Jacobian on the selected subspace with the
                // background frozen over the frame.
                Eigen::VectorXd xs = xa;
                Eigen::MatrixXd F_sel = Eigen::MatrixXd::Identity(na, na);
                for (int s = 0; s < cfg.substeps; ++s) {
                    const StepResult st = rk4_step_with_jacobian(
                        xs, dt,
                        [&](const Eigen::VectorXd& y) {
                            std::vector<double> v(y.data(), y.data() + y.size());
                            auto out = sys.f_selected(v, [](double x) { return x; });
                            return Eigen::Map<Eigen::VectorXd>(out.data(),
                                                               Eigen::Index(out.size()))
                                .eval();
                        },
                        [&](const Eigen::VectorXd& y) {
                            return analytic_jacobian(sys, y, cfg.deriv_clamp_eps);
                        },
                        cfg.chain);
                    xs = st.next_state;
                    F_sel = st.transition_jacobian * F_sel;
                }
                *F = F_sel;
            }
            for (int s = 0; s < cfg.substeps; ++s)
                z = rk4_step(z, dt, [&](const Eigen::VectorXd& zz) { return sys.f_full(zz); });
        }
        if (is_center) {
            StateVec<double> bg;
            for (int i = 0; i < kNumStates; ++i) bg[std::size_t(i)] = z(i);
            sys.set_background(bg);
        }
        return sys.extract_selected(z);
    }
};

Eigen::VectorXd initial_vector(const AugmentedSystem& sys, const AugmentedSpec& spec,
                               const AugmentedState& init) {
    Eigen::VectorXd xa(sys.dim());
    for (int i = 0; i < sys.n_states(); ++i)
        xa(i) = init.full_state[std::size_t(state_index(spec.states[std::size_t(i)]))];
    xa.tail(sys.n_params()) = init.params;
    return xa;
}

} // namespace

CalibrationResult ekf_run(const AugmentedSpec& spec, const DeraParameters& base,
                          const DeraInputs& refs, const FilterConfig& cfg,
                          const std::vector<MeasurementRecord>& data,
                          const AugmentedState& init) {
    DeraPlant plant(spec, base, refs, cfg, init);
    return kalman_run(FilterKind::ekf, plant.hooks(), cfg, data,
                      initial_vector(plant.sys, spec, init));
}

CalibrationResult ukf_run(const AugmentedSpec& spec, const DeraParameters& base,
                          const DeraInputs& refs, const FilterConfig& cfg,
                          const std::vector<MeasurementRecord>& data,
                          const AugmentedState& init) {
    DeraPlant plant(spec, base, refs, cfg, init);
    return kalman_run(FilterKind::ukf, plant.hooks(), cfg, data,
                      initial_vector(plant.sys, spec, init));
}

namespace {

bool spec_matches(const AugmentedSpec& a, const AugmentedSpec& b) {
    return a.flags == b.flags && a.states == b.states && a.parameters == b.parameters;
}

double clamped_sat_deriv(double x, double lo, double hi, int k, double cl) {
    const double z = (x - 0.5 * (hi + lo)) / (0.5 * (hi - lo));
    return std::max(cl, smooth::unit_sat_deriv(z, k));
}

double clamped_db_deriv(double x, double lo, double hi, int k, double cl) {
    const double z = (x - 0.5 * (hi + lo)) / (0.5 * (hi - lo));
    return std::max(cl, 1.0 - smooth::unit_sat_deriv(z, k));
}

} // namespace

Eigen::MatrixXd analytic_jacobian(const AugmentedSystem& sys, const Eigen::VectorXd& xa,
                                  double cl) {
    const AugmentedSpec& spec = sys.spec();
    const bool case1 = spec_matches(spec, AugmentedSpec::case1_reduced());
    const bool case2 = spec_matches(spec, AugmentedSpec::case2_reduced());
    if (!case1 && !case2)
        throw ContractError("analytic_jacobian covers only the case1 (10x10) and case2 "
                            "(14x14) reduced augmentations");

    const DeraInputs& u = sys.inputs();
    const auto& bg = sys.background();
    DeraParameters p = sys.base_parameters();
    for (std::size_t j = 0; j < spec.parameters.size(); ++j)
        set_parameter(p, spec.parameters[j], xa(Eigen::Index(spec.states.size() + j)));

    const int ks = p.k_sat;
    const int kd = p.k_db;
    const int n = sys.dim();
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);

    if (case1) {
        // entries: x1 x3 x4 x9 x10 | T_rv k_qv T_g T_iq T_pord
        const double x1 = xa(0), x3 = xa(1), x4 = xa(2), x9 = xa(3), x10 = xa(4);
        const double x8 = bg[7];
        const double vf = std::max(x1, 0.01);
        const double dvf = x1 > 0.01 ? 1.0 : 0.0;

        J(0, 0) = -1.0 / p.T_rv;
        J(0, 5) = (x1 - u.V) / (p.T_rv * p.T_rv);

        J(1, 0) = -u.Q_ref * dvf / (vf * vf * p.T_iq);
        J(1, 1) = -1.0 / p.T_iq;
        J(1, 8) = (x3 - u.Q_ref / vf) / (p.T_iq * p.T_iq);

        const double e = u.V_ref0 - x1;
        const double db = smooth::deadband(e, p.dbd1, p.dbd2, kd);
        const double iqv = p.k_qv * db;
        const double inner = smooth::sat(iqv, p.I_ql, p.I_qh, ks);
        const double cmd = x3 - inner;
        const double lim = smooth::sat(cmd, p.I_qmin, p.I_qmax, ks);
        const double s_cmd = clamped_sat_deriv(cmd, p.I_qmin, p.I_qmax, ks, cl);
        const double s_in = clamped_sat_deriv(iqv, p.I_ql, p.I_qh, ks, cl);
        const double s_db = clamped_db_deriv(e, p.dbd1, p.dbd2, kd, cl);
        J(2, 0) = s_cmd * s_in * p.k_qv * s_db / p.T_g;
        J(2, 1) = s_cmd / p.T_g;
        J(2, 2) = -1.0 / p.T_g;
        J(2, 6) = -s_cmd * s_in * db / p.T_g;
        J(2, 7) = (x4 - lim) / (p.T_g * p.T_g);

        const double x9s = smooth::sat(x9, p.P_min, p.P_max, ks);
        const double s_p9 = clamped_sat_deriv(x9, p.P_min, p.P_max, ks, cl);
        J(3, 3) = -s_p9 / p.T_pord;
        J(3, 9) = (x9s - x8) / (p.T_pord * p.T_pord);

        const double ip = x9s / vf;
        const double idl = smooth::sat(ip, p.I_dmin, p.I_dmax, ks);
        const double w = (idl - x10) / p.T_g;
        const double s_rr = clamped_sat_deriv(w, -p.rrpwr, p.rrpwr, ks, cl);
        const double s_id = clamped_sat_deriv(ip, p.I_dmin, p.I_dmax, ks, cl);
        J(4, 0) = s_rr * s_id * (-x9s * dvf / (vf * vf)) / p.T_g;
        J(4, 3) = s_rr * s_id * s_p9 / (vf * p.T_g);
        J(4, 4) = -s_rr / p.T_g;
        J(4, 7) = -s_rr * w / p.T_g;
        return J;
    }

    // case 2 entries: x1 x2 x3 x4 x6 x7 x9 x10 | T_p T_rf k_pg k_ig D_dn D_up
    const double x1 = xa(0), x2 = xa(1), x3 = xa(2);
    const double x6 = xa(4), x7 = xa(5), x9 = xa(6), x10 = xa(7);
    const double vf = std::max(x1, 0.01);
    const double dvf = x1 > 0.01 ? 1.0 : 0.0;
    const double tpf = std::tan(p.pfaref);

    J(0, 0) = -1.0 / p.T_rv;

    J(1, 1) = -1.0 / p.T_p;
    J(1, 6) = 1.0 / p.T_p;
    J(1, 8) = (x2 - x9) / (p.T_p * p.T_p);

    J(2, 0) = -x2 * tpf * dvf / (vf * vf * p.T_iq);
    J(2, 1) = tpf / (vf * p.T_iq);
    J(2, 2) = -1.0 / p.T_iq;

    const double e = u.V_ref0 - x1;
    const double db = smooth::deadband(e, p.dbd1, p.dbd2, kd);
    const double iqv = p.k_qv * db;
    const double s_cmd = clamped_sat_deriv(x3 - smooth::sat(iqv, p.I_ql, p.I_qh, ks),
                                           p.I_qmin, p.I_qmax, ks, cl);
    const double s_in = clamped_sat_deriv(iqv, p.I_ql, p.I_qh, ks, cl);
    const double s_db = clamped_db_deriv(e, p.dbd1, p.dbd2, kd, cl);
    J(3, 0) = s_cmd * s_in * p.k_qv * s_db / p.T_g;
    J(3, 2) = s_cmd / p.T_g;
    J(3, 3) = -1.0 / p.T_g;

    J(4, 4) = -1.0 / p.T_rf;
    J(4, 9) = (x6 - u.freq) / (p.T_rf * p.T_rf);

    const double ef = u.f_ref - x6;
    const double dfp = smooth::deadband(ef, p.fbd1, p.fbd2, kd);
    const double droop = p.D_dn * std::min(dfp, 0.0) + p.D_up * std::max(dfp, 0.0);
    const double arg = u.P_ref + droop - x2;
    const double plim = smooth::sat(arg, p.f_emin, p.f_emax, ks);
    const double b = x7 + p.k_pg * plim;
    const double s_fe = clamped_sat_deriv(arg, p.f_emin, p.f_emax, ks, cl);
    const double s_b = clamped_sat_deriv(b, p.P_min, p.P_max, ks, cl);
    const double s_fb = clamped_db_deriv(ef, p.fbd1, p.fbd2, kd, cl);
    const double dsel = dfp < 0.0 ? p.D_dn : (dfp > 0.0 ? p.D_up : 0.0);
    const double G = p.k_ig + p.k_w * p.k_pg * (s_b - 1.0);
    J(5, 1) = -G * s_fe;
    J(5, 4) = -G * s_fe * dsel * s_fb;
    J(5, 5) = p.k_w * (s_b - 1.0);
    J(5, 10) = p.k_w * plim * (s_b - 1.0);
    J(5, 11) = plim;
    J(5, 12) = G * s_fe * std::min(dfp, 0.0);
    J(5, 13) = G * s_fe * std::max(dfp, 0.0);

    // x8 is carried algebraically as SSF(x7) in this reduced view
    const double s_px7 = clamped_sat_deriv(x7, p.P_min, p.P_max, ks, cl);
    const double s_p9 = clamped_sat_deriv(x9, p.P_min, p.P_max, ks, cl);
    J(6, 5) = s_px7 / p.T_pord;
    J(6, 6) = -s_p9 / p.T_pord;

    const double x9s = smooth::sat(x9, p.P_min, p.P_max, ks);
    const double ip = x9s / vf;
    const double idl = smooth::sat(ip, p.I_dmin, p.I_dmax, ks);
    const double w = (idl - x10) / p.T_g;
    const double s_rr = clamped_sat_deriv(w, -p.rrpwr, p.rrpwr, ks, cl);
    const double s_id = clamped_sat_deriv(ip, p.I_dmin, p.I_dmax, ks, cl);
    J(7, 0) = s_rr * s_id * (-x9s * dvf / (vf * vf)) / p.T_g;
    J(7, 6) = s_rr * s_id * s_p9 / (vf * p.T_g);
    J(7, 7) = -s_rr / p.T_g;
    return J;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void write_calibration_csv(const std::string& path, const CalibrationResult& r) {
    std::ofstream os(path);
    if (!os) throw DataFault("cannot open for writing: " + path);
    os << "t";
    for (const auto& n : r.parameter_names) os << ',' << n;
    os << ",innov_1,innov_2,cov_trace\n";
    for (std::size_t k = 0; k < r.times.size(); ++k) {
        os << fmt(r.times[k]);
        for (Eigen::Index j = 0; j < r.estimates.cols(); ++j)
            os << ',' << fmt(r.estimates(Eigen::Index(k), j));
        os << ',' << fmt(r.innovations(Eigen::Index(k), 0)) << ','
           << fmt(r.innovations(Eigen::Index(k), 1)) << ',' << fmt(r.covariance_trace[k]) << '\n';
    }
}

std::string format_calibration_summary(const CalibrationResult& r,
                                       const std::map<std::string, double>& initialization,
                                       const std::map<std::string, double>& reference) {
    std::ostringstream os;
    os << "parameter,initialization,estimate,cov";
    if (!reference.empty()) os << ",reference,rel_error";
    os << "\n";
    for (std::size_t j = 0; j < r.parameter_names.size(); ++j) {
        const std::string& name = r.parameter_names[j];
        const double est = r.final_estimate(Eigen::Index(j));
        os << name << ',';
        const auto iti = initialization.find(name);
        os << (iti != initialization.end() ? fmt(iti->second) : "") << ',';
        os << fmt(est) << ',' << fmt(r.cov_tail(Eigen::Index(j)));
        if (!reference.empty()) {
            const auto itr = reference.find(name);
            os << ',';
            if (itr != reference.end()) {
                os << fmt(itr->second) << ','
                   << fmt(std::abs(est - itr->second) / std::abs(itr->second));
            } else {
                os << ',';
            }
        }
        os << '\n';
    }
    return os.str();
}

} // namespace deracal
