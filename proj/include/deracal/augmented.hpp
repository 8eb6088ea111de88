#pragma once

// Parameter-augmented views of the der_a model. An AugmentedSpec names the
// states and parameters under study; AugmentedSystem embeds that selection
// into the full 10-state model so the same plant serves Lie-derivative
// analysis (selected coordinates, background frozen) and filter prediction
// (full coordinates, background co-simulated).

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "deracal/dera.hpp"

namespace deracal {

enum class MeasurementSet { vpq, vidiq };

MeasurementSet measurement_set_from_string(const std::string& s);
std::string to_string(MeasurementSet ms);

struct AugmentedSpec {
    FlagConfig flags;
    std::vector<std::string> states;     // subset of x1..x10, ordered
    std::vector<std::string> parameters; // subset of parameter names, ordered
    MeasurementSet measurement_set = MeasurementSet::vpq;

    int dim() const { return int(states.size() + parameters.size()); }
    void validate() const;

    // Table-configured presets. case1_full is the 23-entry augmentation;
    // the reduced presets follow the published reduced state vectors; the
    // calibration preset augments the case-2 states with every parameter
    // carried through the calibration study.
    static AugmentedSpec case1_full();
    static AugmentedSpec case1_reduced();
    static AugmentedSpec case2_reduced();
    static AugmentedSpec case2_calibration();
};

// Saturation bounds, deadbands and trip thresholds: fixed by firmware or
// industry standards, excluded from estimation by default.
const std::vector<std::string>& threshold_parameter_names();
bool is_threshold_parameter(const std::string& name);

class AugmentedSystem {
public:
    AugmentedSystem(AugmentedSpec spec, DeraParameters base);

    const AugmentedSpec& spec() const { return spec_; }
    const DeraParameters& base_parameters() const { return base_; }
    int n_states() const { return int(state_idx_.size()); }
    int n_params() const { return int(param_visit_idx_.size()); }
    int dim() const { return n_states() + n_params(); }
    int full_dim() const { return kNumStates + n_params(); }
    int n_outputs() const { return 3; }

    void set_inputs(const DeraInputs& u) { u_ = u; }
    const DeraInputs& inputs() const { return u_; }
    void set_background(const StateVec<double>& x) { background_ = x; }
    const StateVec<double>& background() const { return background_; }

    // Index of each selected entry inside the full coordinate vector.
    const std::vector<int>& selected_indices() const { return sel_full_idx_; }

    // --- full coordinates: z = [x1..x10, theta] -----------------------------
    Eigen::VectorXd pack_full(const Eigen::VectorXd& xa) const;
    Eigen::VectorXd extract_selected(const Eigen::VectorXd& z) const;
    Eigen::VectorXd f_full(const Eigen::VectorXd& z) const;
    Eigen::MatrixXd jac_full(const Eigen::VectorXd& z, double deriv_clamp) const;

    // --- selected coordinates (background held constant) --------------------
    Eigen::VectorXd selected_point() const; // background + base parameter values

    template <class S, class Make>
    std::vector<S> f_selected(const std::vector<S>& xa, Make&& mk) const {
        StateVec<S> x;
        DeraParamsT<S> p = lift_params<S>(base_, mk);
        embed(xa, mk, x, p);
        const auto dx = dera_rhs(x, u_, p, spec_.flags);
        std::vector<S> out(std::size_t(dim()), mk(0.0));
        for (std::size_t i = 0; i < state_idx_.size(); ++i) out[i] = dx[state_idx_[i]];
        return out; // parameter entries keep zero dynamics
    }

    // Structural output map for observability: the filtered-voltage state
    // stands in for the terminal voltage so powers are state expressions.
    template <class S, class Make>
    std::vector<S> h_selected(const std::vector<S>& xa, Make&& mk) const {
        StateVec<S> x;
        DeraParamsT<S> p = lift_params<S>(base_, mk);
        embed(xa, mk, x, p);
        std::vector<S> out;
        out.reserve(3);
        out.push_back(x[0]);
        if (spec_.measurement_set == MeasurementSet::vpq) {
            out.push_back(x[0] * x[9]);
            out.push_back(x[0] * x[3]);
        } else {
            out.push_back(x[9]);
            out.push_back(x[3]);
        }
        return out;
    }

    // Filter output map: predicted update channels at the measured terminal
    // voltage. V itself is an exogenous input, so the update channels are
    // P,Q (vpq) or Id,Iq (vidiq).
    Eigen::VectorXd h_filter(const Eigen::VectorXd& xa, double V) const;
    Eigen::MatrixXd h_filter_jacobian(const Eigen::VectorXd& xa, double V) const;

private:
    template <class S, class Make>
    void embed(const std::vector<S>& xa, Make&& mk, StateVec<S>& x, DeraParamsT<S>& p) const {
        for (int i = 0; i < kNumStates; ++i) x[i] = mk(background_[i]);
        for (std::size_t i = 0; i < state_idx_.size(); ++i) x[state_idx_[i]] = xa[i];
        for (std::size_t j = 0; j < param_visit_idx_.size(); ++j)
            assign_param_by_visit_index(p, param_visit_idx_[j], xa[state_idx_.size() + j]);
        // Reduced view of an active P/f loop: the excluded rate limiter sits
        // at its quasi-steady value, keeping the x7 -> x9 chain connected.
        if (x8_algebraic_) x[7] = smooth::sat(x[6], p.P_min, p.P_max, p.k_sat);
    }

    template <class S>
    static void assign_param_by_visit_index(DeraParamsT<S>& p, int target, const S& v) {
        int i = 0;
        visit_params(p, [&](const char*, S& field) {
            if (i++ == target) field = v;
        });
    }

    AugmentedSpec spec_;
    DeraParameters base_;
    DeraInputs u_{};
    StateVec<double> background_{};
    std::vector<int> state_idx_;       // selected state -> 0..9
    std::vector<int> param_visit_idx_; // selected parameter -> visit order index
    std::vector<int> sel_full_idx_;    // selected entry -> index in full coords
    bool x8_algebraic_ = false;        // x8 excluded while the P/f loop runs
};

} // namespace deracal
