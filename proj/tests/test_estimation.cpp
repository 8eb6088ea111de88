#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deracal/estimation.hpp"

#include <cmath>
#include <random>

using namespace deracal;

namespace {

// Discrete linear plant z_{k+1} = F z_k, y = H z, wired into the generic
// recursion so the filters can be checked against a classical Kalman filter.
PlantHooks linear_plant(const Eigen::MatrixXd& F, const Eigen::MatrixXd& H) {
    PlantHooks p;
    p.dim = int(F.rows());
    p.n_states = int(F.rows());
    p.channels = {2, 3};
    p.predict = [F](const Eigen::VectorXd& xa, const MeasurementRecord&, double, bool,
                    Eigen::MatrixXd* Fout) {
        if (Fout) *Fout = F;
        return (F * xa).eval();
    };
    p.measure = [H](const Eigen::VectorXd& xa, const MeasurementRecord&, Eigen::MatrixXd* Hout) {
        if (Hout) *Hout = H;
        return (H * xa).eval();
    };
    return p;
}

std::vector<MeasurementRecord> linear_records(const Eigen::MatrixXd& F, const Eigen::MatrixXd& H,
                                              Eigen::VectorXd x0, int T) {
    std::vector<MeasurementRecord> recs;
    Eigen::VectorXd x = std::move(x0);
    std::mt19937_64 rng(71);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int k = 0; k < T; ++k) {
        MeasurementRecord r;
        r.t = k / 30.0;
        const Eigen::VectorXd y = H * x;
        r.P = y(0) + 1e-3 * gauss(rng);
        r.Q = y(1) + 1e-3 * gauss(rng);
        recs.push_back(r);
        x = F * x;
    }
    return recs;
}

// Classical Kalman filter with the same update schedule as kalman_run
// (update at every record, predict between records).
Eigen::VectorXd classic_kf(const Eigen::MatrixXd& F, const Eigen::MatrixXd& H,
                           const std::vector<MeasurementRecord>& recs, Eigen::VectorXd x,
                           Eigen::MatrixXd P, const Eigen::MatrixXd& W,
                           const Eigen::MatrixXd& R) {
    const Eigen::Index n = x.size();
    for (std::size_t k = 0; k < recs.size(); ++k) {
        if (k > 0) {
            x = F * x;
            P = F * P * F.transpose() + W;
            P = 0.5 * (P + P.transpose()).eval();
        }
        Eigen::Vector2d z(recs[k].P, recs[k].Q);
        const Eigen::MatrixXd S = H * P * H.transpose() + R;
        const Eigen::MatrixXd K = P * H.transpose() * S.inverse();
        x += K * (z - H * x);
        P = (Eigen::MatrixXd::Identity(n, n) - K * H) * P;
        P = 0.5 * (P + P.transpose()).eval();
    }
    return x;
}

FilterConfig linear_cfg(int dim) {
    FilterConfig cfg;
    cfg.r_default = 1e-6;
    cfg.process_noise = Eigen::VectorXd::Constant(dim, 1e-8);
    cfg.initial_covariance = Eigen::VectorXd::Constant(dim, 1e-2);
    return cfg;
}

AugmentedSystem make_system(const AugmentedSpec& spec, const DeraParameters& base,
                            const DeraInputs& u, const StateVec<double>& bg) {
    AugmentedSystem sys(spec, base);
    sys.set_inputs(u);
    sys.set_background(bg);
    return sys;
}

Eigen::MatrixXd ad_jacobian_selected(const AugmentedSystem& sys, const Eigen::VectorXd& xa) {
    const int n = sys.dim();
    std::vector<ad::Grad> xg;
    xg.resize(std::size_t(n));
    for (int i = 0; i < n; ++i) xg[std::size_t(i)] = ad::Grad::seeded(xa(i), n, i);
    const auto out = sys.f_selected(xg, [](double v) { return ad::Grad(v); });
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
        if (out[std::size_t(i)].g.size()) J.row(i) = out[std::size_t(i)].g.transpose();
    return J;
}

} // namespace

TEST_CASE("EKF on a linear plant equals the classical Kalman filter") {
    Eigen::MatrixXd F(3, 3);
    F << 0.95, 0.10, 0.00, -0.05, 0.90, 0.08, 0.00, 0.02, 0.85;
    Eigen::MatrixXd H(2, 3);
    H << 1.0, 0.0, 0.5, 0.0, 1.0, -0.3;
    Eigen::VectorXd x0(3);
    x0 << 1.0, -0.5, 0.25;

    const auto recs = linear_records(F, H, x0, 60);
    const FilterConfig cfg = linear_cfg(3);
    Eigen::VectorXd start(3);
    start << 0.8, -0.2, 0.0;

    const auto res = kalman_run(FilterKind::ekf, linear_plant(F, H), cfg, recs, start);

    const Eigen::MatrixXd W = cfg.process_noise.asDiagonal();
    const Eigen::MatrixXd P0 = cfg.initial_covariance.asDiagonal();
    const Eigen::MatrixXd R = Eigen::Vector2d::Constant(cfg.r_default).asDiagonal();
    const Eigen::VectorXd ref = classic_kf(F, H, recs, start, P0, W, R);

    const Eigen::VectorXd got = res.state_estimates.row(res.state_estimates.rows() - 1);
    CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("UKF on a linear plant equals the classical Kalman filter") {
    Eigen::MatrixXd F(2, 2);
    F << 0.97, 0.05, -0.03, 0.92;
    Eigen::MatrixXd H(2, 2);
    H << 1.0, 0.0, 0.2, 1.0;
    Eigen::VectorXd x0(2);
    x0 << 0.6, -0.4;

    const auto recs = linear_records(F, H, x0, 50);
    FilterConfig cfg = linear_cfg(2);
    cfg.ukf_alpha = 0.5;

    Eigen::VectorXd start(2);
    start << 0.0, 0.0;
    const auto res = kalman_run(FilterKind::ukf, linear_plant(F, H), cfg, recs, start);

    const Eigen::MatrixXd W = cfg.process_noise.asDiagonal();
    const Eigen::MatrixXd P0 = cfg.initial_covariance.asDiagonal();
    const Eigen::MatrixXd R = Eigen::Vector2d::Constant(cfg.r_default).asDiagonal();
    const Eigen::VectorXd ref = classic_kf(F, H, recs, start, P0, W, R);

    const Eigen::VectorXd got = res.state_estimates.row(res.state_estimates.rows() - 1);
    CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("analytic Jacobians match forward AD at random interior points") {
    const DeraParameters base = default_parameters();
    DeraInputs u;
    u.V = 0.92;
    u.freq = 1.002;
    std::mt19937_64 rng(73);
    std::normal_distribution<double> gauss(0.0, 1.0);

    for (const auto& spec : {AugmentedSpec::case1_reduced(), AugmentedSpec::case2_reduced()}) {
        const auto bg = solve_equilibrium(base, spec.flags, DeraInputs{});
        AugmentedSystem sys = make_system(spec, base, u, bg);
        const Eigen::VectorXd center = sys.selected_point();
        int checked = 0;
        for (int trial = 0; trial < 50; ++trial) {
            Eigen::VectorXd xa = center;
            const int ns = int(spec.states.size());
            for (int i = 0; i < ns; ++i) xa(i) += 0.03 * gauss(rng);
            for (int i = ns; i < sys.dim(); ++i) xa(i) *= 1.0 + 0.1 * gauss(rng);
            if (xa.tail(sys.dim() - ns).minCoeff() < 1e-3) continue;

            // interior points only: the clamp floor must not bind anywhere
            const Eigen::MatrixXd Ja = analytic_jacobian(sys, xa, 0.0);
            const Eigen::MatrixXd Jad = ad_jacobian_selected(sys, xa);
            const double scale = Jad.cwiseAbs().maxCoeff();
            const double err = (Ja - Jad).cwiseAbs().maxCoeff();
            CHECK(err < 1e-6 * std::max(1.0, scale));
            ++checked;

            // parameter rows are the random-walk block
            for (int i = ns; i < sys.dim(); ++i) CHECK(Ja.row(i).cwiseAbs().maxCoeff() == 0.0);
        }
        CHECK(checked >= 40);
    }
}

TEST_CASE("analytic Jacobian rejects other specs") {
    const DeraParameters base = default_parameters();
    AugmentedSystem sys(AugmentedSpec::case2_calibration(), base);
    CHECK_THROWS_AS(analytic_jacobian(sys, sys.selected_point(), 1e-6), ContractError);
}

TEST_CASE("spec example entries of the case-1 analytic Jacobian") {
    const DeraParameters base = default_parameters();
    DeraInputs u;
    u.V = 0.95;
    const auto bg = solve_equilibrium(base, FlagConfig::case1(), DeraInputs{});
    AugmentedSystem sys = make_system(AugmentedSpec::case1_reduced(), base, u, bg);
    Eigen::VectorXd xa = sys.selected_point();
    xa(0) = 0.97; // x1 off the input so the T_rv column is alive

    const Eigen::MatrixXd J = analytic_jacobian(sys, xa, 1e-6);
    CHECK(J(0, 0) == doctest::Approx(-1.0 / base.T_rv));
    CHECK(J(0, 5) == doctest::Approx((xa(0) - u.V) / (base.T_rv * base.T_rv)));
}

TEST_CASE("zero-noise data with truth initialization is a fixed point") {
    ScenarioConfig sc;
    sc.flags = FlagConfig::case1();
    sc.noise_std.fill(0.0);
    const auto sim = synthesize(sc);
    const DeraParameters truth = scenario_parameters(sc);

    AugmentedSpec spec = AugmentedSpec::case1_reduced();
    spec.parameters = {"T_rv", "k_qv", "T_g", "T_iq"}; // x9 rests under case-1 flags
    FilterConfig cfg;
    cfg.process_noise = Eigen::VectorXd::Constant(9, 1e-16);
    cfg.r_default = 1e-8;

    const auto init = make_initial_state(spec, truth, sc.refs);
    const auto res = ekf_run(spec, truth, sc.refs, cfg, sim.noisy, init);
    for (Eigen::Index j = 0; j < res.final_estimate.size(); ++j) {
        const double tv = get_parameter(truth, spec.parameters[std::size_t(j)]);
        CHECK(res.final_estimate(j) == doctest::Approx(tv).epsilon(1e-3));
    }
}

TEST_CASE("case-1 self-calibration recovers perturbed parameters") {
    ScenarioConfig sc;
    sc.flags = FlagConfig::case1();
    sc.profile.b = 6.0; // narrative sag: 0.1 s dip then ramp
    sc.noise_std.fill(1e-4);
    const auto sim = synthesize(sc);
    const DeraParameters truth = scenario_parameters(sc);

    AugmentedSpec spec = AugmentedSpec::case1_reduced();
    spec.parameters = {"T_rv", "k_qv", "T_g", "T_iq"};

    DeraParameters init_params = truth;
    set_parameter(init_params, "T_rv", 0.03);
    set_parameter(init_params, "k_qv", 4.0);
    set_parameter(init_params, "T_g", 0.012);
    set_parameter(init_params, "T_iq", 0.03);

    FilterConfig cfg;
    const auto init = make_initial_state(spec, init_params, sc.refs);

    for (auto kind : {FilterKind::ekf, FilterKind::ukf}) {
        const auto res = kind == FilterKind::ekf
                             ? ekf_run(spec, truth, sc.refs, cfg, sim.noisy, init)
                             : ukf_run(spec, truth, sc.refs, cfg, sim.noisy, init);
        for (Eigen::Index j = 0; j < res.final_estimate.size(); ++j) {
            const double tv = get_parameter(truth, spec.parameters[std::size_t(j)]);
            CHECK(std::abs(res.final_estimate(j) - tv) / tv < 0.05);
            CHECK(res.cov_tail(j) < 1e-2);
        }
        // covariance contracts from its initial value over the run
        CHECK(res.covariance_trace.back() < res.covariance_trace.front());
    }
}

TEST_CASE("deterministic reruns produce identical trajectories") {
    ScenarioConfig sc;
    sc.flags = FlagConfig::case1();
    const auto sim = synthesize(sc);
    const DeraParameters truth = scenario_parameters(sc);

    AugmentedSpec spec = AugmentedSpec::case1_reduced();
    spec.parameters = {"T_rv", "k_qv"};
    DeraParameters init_params = truth;
    set_parameter(init_params, "T_rv", 0.03);
    const auto init = make_initial_state(spec, init_params, sc.refs);
    FilterConfig cfg;

    const auto a = ukf_run(spec, truth, sc.refs, cfg, sim.noisy, init);
    const auto b = ukf_run(spec, truth, sc.refs, cfg, sim.noisy, init);
    CHECK((a.estimates - b.estimates).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.innovations - b.innovations).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("masked channels are skipped and fully masked data is rejected") {
    ScenarioConfig sc;
    sc.flags = FlagConfig::case1();
    const auto sim = synthesize(sc);
    const DeraParameters truth = scenario_parameters(sc);

    AugmentedSpec spec = AugmentedSpec::case1_reduced();
    spec.parameters = {"T_rv"};
    const auto init = make_initial_state(spec, truth, sc.refs);
    FilterConfig cfg;

    auto data = sim.noisy;
    for (std::size_t k = 0; k < data.size(); k += 3) data[k].valid[2] = false; // P masked
    const auto res = ekf_run(spec, truth, sc.refs, cfg, data, init);
    CHECK(res.estimates.rows() == Eigen::Index(data.size()));

    for (auto& r : data) {
        r.valid[2] = false;
        r.valid[3] = false;
    }
    CHECK_THROWS_AS(ekf_run(spec, truth, sc.refs, cfg, data, init), ContractError);
}

TEST_CASE("initial parameters outside bounds are rejected") {
    ScenarioConfig sc;
    sc.flags = FlagConfig::case1();
    const auto sim = synthesize(sc);
    const DeraParameters truth = scenario_parameters(sc);
    AugmentedSpec spec = AugmentedSpec::case1_reduced();
    spec.parameters = {"T_rv"};
    auto init = make_initial_state(spec, truth, sc.refs);
    FilterConfig cfg;
    cfg.parameter_bounds["T_rv"] = {0.1, 0.5}; // truth 0.02 sits below
    CHECK_THROWS_AS(ekf_run(spec, truth, sc.refs, cfg, sim.noisy, init), ContractError);
}
