#include "deracal/augmented.hpp"

#include <algorithm>
#include <set>

namespace deracal {

MeasurementSet measurement_set_from_string(const std::string& s) {
    if (s == "vpq") return MeasurementSet::vpq;
    if (s == "vidiq") return MeasurementSet::vidiq;
    throw InvalidArgument("unknown measurement set: " + s + " (expected vpq or vidiq)");
}

std::string to_string(MeasurementSet ms) {
    return ms == MeasurementSet::vpq ? "vpq" : "vidiq";
}

void AugmentedSpec::validate() const {
    flags.validate();
    std::set<std::string> seen;
    for (const auto& s : states) {
        state_index(s); // throws on unknown
        if (!seen.insert(s).second) throw InvalidArgument("duplicate state in spec: " + s);
    }
    for (const auto& q : parameters) {
        if (!is_parameter_name(q)) throw InvalidArgument("unknown parameter in spec: " + q);
        if (q == "pfaref")
            throw InvalidArgument("pfaref is an operating-point angle, not an estimable parameter");
        if (!seen.insert(q).second) throw InvalidArgument("duplicate parameter in spec: " + q);
    }
    if (states.empty()) throw InvalidArgument("spec must select at least one state");
}

AugmentedSpec AugmentedSpec::case1_full() {
    AugmentedSpec s;
    s.flags = FlagConfig::case1();
    s.states = {"x1", "x3", "x4", "x8", "x9", "x10"};
    s.parameters = {"P_max", "P_min", "I_dmax", "I_dmin", "I_qh",   "I_ql",
                    "k_qv",  "T_iq",  "T_pord", "T_rv",   "T_g",    "I_qmax",
                    "I_qmin", "dbd1", "dbd2",   "dP_max", "dP_min"};
    return s;
}

AugmentedSpec AugmentedSpec::case1_reduced() {
    AugmentedSpec s;
    s.flags = FlagConfig::case1();
    s.states = {"x1", "x3", "x4", "x9", "x10"};
    s.parameters = {"T_rv", "k_qv", "T_g", "T_iq", "T_pord"};
    return s;
}

AugmentedSpec AugmentedSpec::case2_reduced() {
    AugmentedSpec s;
    s.flags = FlagConfig::case2();
    s.states = {"x1", "x2", "x3", "x4", "x6", "x7", "x9", "x10"};
    s.parameters = {"T_p", "T_rf", "k_pg", "k_ig", "D_dn", "D_up"};
    return s;
}

AugmentedSpec AugmentedSpec::case2_calibration() {
    AugmentedSpec s;
    s.flags = FlagConfig::case2();
    s.states = {"x1", "x2", "x3", "x4", "x6", "x7", "x9", "x10"};
    s.parameters = {"T_rv", "k_qv", "T_g", "T_iq", "T_pord",
                    "T_p",  "k_pg", "k_ig", "T_rf", "D_dn", "D_up"};
    return s;
}

const std::vector<std::string>& threshold_parameter_names() {
    static const std::vector<std::string> names = {
        "P_min",  "P_max",  "dP_min", "dP_max", "I_max", "I_qmax", "I_qmin",
        "I_dmax", "I_dmin", "I_qh",   "I_ql",   "dbd1",  "dbd2",   "fbd1",
        "fbd2",   "f_emin", "f_emax", "rrpwr",  "V_l0",  "V_l1",   "V_h0",
        "V_h1",   "V_min",  "V_max",  "t_l1",   "t_h1",  "t_l0",   "t_h0",
        "V_frac"};
    return names;
}

bool is_threshold_parameter(const std::string& name) {
    const auto& v = threshold_parameter_names();
    return std::find(v.begin(), v.end(), name) != v.end();
}

AugmentedSystem::AugmentedSystem(AugmentedSpec spec, DeraParameters base)
    : spec_(std::move(spec)), base_(std::move(base)) {
    spec_.validate();
    validate_parameters(base_);
    for (const auto& s : spec_.states) state_idx_.push_back(state_index(s));

    // Resolve each selected parameter to its visit-order position once.
    std::vector<std::string> order;
    visit_params(base_, [&](const char* n, const double&) { order.emplace_back(n); });
    for (const auto& q : spec_.parameters) {
        const auto it = std::find(order.begin(), order.end(), q);
        param_visit_idx_.push_back(int(it - order.begin()));
    }

    for (int idx : state_idx_) sel_full_idx_.push_back(idx);
    for (std::size_t j = 0; j < param_visit_idx_.size(); ++j)
        sel_full_idx_.push_back(kNumStates + int(j));

    x8_algebraic_ = spec_.flags.fflag == 1 &&
                    std::find(state_idx_.begin(), state_idx_.end(), 7) == state_idx_.end();

    background_.fill(0.0);
    background_[0] = 1.0;
    background_[4] = 1.0;
    background_[5] = 1.0;
}

Eigen::VectorXd AugmentedSystem::pack_full(const Eigen::VectorXd& xa) const {
    Eigen::VectorXd z(full_dim());
    for (int i = 0; i < kNumStates; ++i) z(i) = background_[i];
    for (int i = 0; i < n_states(); ++i) z(state_idx_[i]) = xa(i);
    for (int j = 0; j < n_params(); ++j) z(kNumStates + j) = xa(n_states() + j);
    return z;
}

Eigen::VectorXd AugmentedSystem::extract_selected(const Eigen::VectorXd& z) const {
    Eigen::VectorXd xa(dim());
    for (int i = 0; i < dim(); ++i) xa(i) = z(sel_full_idx_[i]);
    return xa;
}

Eigen::VectorXd AugmentedSystem::selected_point() const {
    Eigen::VectorXd xa(dim());
    for (int i = 0; i < n_states(); ++i) xa(i) = background_[state_idx_[i]];
    for (int j = 0; j < n_params(); ++j)
        xa(n_states() + j) = get_parameter(base_, spec_.parameters[j]);
    return xa;
}

Eigen::VectorXd AugmentedSystem::f_full(const Eigen::VectorXd& z) const {
    StateVec<double> x;
    for (int i = 0; i < kNumStates; ++i) x[i] = z(i);
    DeraParameters p = base_;
    for (int j = 0; j < n_params(); ++j)
        assign_param_by_visit_index(p, param_visit_idx_[j], z(kNumStates + j));
    const auto dx = dera_rhs(x, u_, p, spec_.flags);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(full_dim());
    for (int i = 0; i < kNumStates; ++i) out(i) = dx[i];
    return out;
}

Eigen::MatrixXd AugmentedSystem::jac_full(const Eigen::VectorXd& z, double deriv_clamp) const {
    const int n = full_dim();
    StateVec<ad::Grad> x;
    for (int i = 0; i < kNumStates; ++i) x[i] = ad::Grad::seeded(z(i), n, i);
    auto pg = lift_params<ad::Grad>(base_, [](double v) { return ad::Grad(v); });
    for (int j = 0; j < n_params(); ++j)
        assign_param_by_visit_index(pg, param_visit_idx_[j],
                                    ad::Grad::seeded(z(kNumStates + j), n, kNumStates + j));
    const EvalOptions opt{deriv_clamp};
    const auto dx = dera_rhs(x, u_, pg, spec_.flags, opt);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < kNumStates; ++i)
        if (dx[i].g.size()) J.row(i) = dx[i].g.transpose();
    return J;
}

Eigen::VectorXd AugmentedSystem::h_filter(const Eigen::VectorXd& xa, double V) const {
    const Eigen::VectorXd z = pack_full(xa);
    Eigen::VectorXd out(2);
    if (spec_.measurement_set == MeasurementSet::vpq) {
        out(0) = V * z(9); // P
        out(1) = V * z(3); // Q
    } else {
        out(0) = z(9); // Id
        out(1) = z(3); // Iq
    }
    return out;
}

Eigen::MatrixXd AugmentedSystem::h_filter_jacobian(const Eigen::VectorXd& xa, double V) const {
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(2, dim());
    const double gain = spec_.measurement_set == MeasurementSet::vpq ? V : 1.0;
    for (int i = 0; i < n_states(); ++i) {
        if (state_idx_[i] == 9) H(0, i) = gain;
        if (state_idx_[i] == 3) H(1, i) = gain;
    }
    (void)xa;
    return H;
}

} // namespace deracal
