#pragma once

// Joint state-parameter calibration with augmented-state EKF and UKF.
// The recursion itself (kalman_run) is plant-agnostic; the der_a adapters
// co-simulate excluded states as deterministic background and restrict the
// transition Jacobian to the filter entries. All smooth-operator partials
// inside EKF Jacobians use the clamped derivatives.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "deracal/augmented.hpp"
#include "deracal/integrator.hpp"
#include "deracal/scenario_io.hpp"

namespace deracal {

enum class JacobianKind { ad, analytic };
enum class FilterKind { ekf, ukf };

struct FilterConfig {
    // Diagonal noise defaults (variances, pu^2); full overrides below win.
    double r_default = 1e-8;  // (1e-4)^2 per channel
    double w_state = 1e-12;   // (1e-6)^2 per dynamic state
    double w_param = 1e-10;   // (1e-5)^2 pseudo-noise so parameters can move
    double w_param_rel = 0.0; // adds (rel*|theta0_i|)^2, useful when spans differ
    double p0_state = 1e-6;
    double p0_param_rel = 0.25; // P0_ii = (rel*|theta0_i| + abs)^2
    double p0_param_abs = 1e-3;
    Eigen::VectorXd process_noise;      // optional, length dim
    Eigen::VectorXd measurement_noise;  // optional, length 2
    Eigen::VectorXd initial_covariance; // optional, length dim

    double ukf_alpha = 0.1;
    double ukf_beta = 2.0;
    double ukf_kappa = 0.0;

    std::map<std::string, std::pair<double, double>> parameter_bounds;
    double param_floor = 1e-4; // positivity floor for T_*/k_*/D_* parameters

    std::uint64_t seed = 0; // recorded for manifests; the filters are deterministic
    double deriv_clamp_eps = 1e-6;
    int substeps = 32;
    JacobianChain chain = JacobianChain::exact;
    JacobianKind jacobian = JacobianKind::ad;
    int tail_samples = 30;

    void validate() const;
};

struct AugmentedState {
    StateVec<double> full_state{}; // all ten states; selected entries seed the filter
    Eigen::VectorXd params;        // per spec.parameters
};

// Equilibrium initial condition for a calibration run: states at the fixed
// point of the initial parameter guess.
AugmentedState make_initial_state(const AugmentedSpec& spec, const DeraParameters& init_params,
                                  const DeraInputs& refs);

struct CalibrationResult {
    std::vector<std::string> parameter_names;
    std::vector<double> times;
    Eigen::MatrixXd estimates;        // (T, p) per-step parameter estimates
    Eigen::MatrixXd state_estimates;  // (T, n_states)
    Eigen::VectorXd final_estimate;   // p
    Eigen::VectorXd cov_tail;         // coefficient of variation over the tail
    Eigen::MatrixXd innovations;      // (T, 2)
    Eigen::VectorXd innovation_lag1;  // lag-1 autocorrelation per channel, tail
    Eigen::MatrixXd final_covariance; // (dim, dim)
    std::vector<double> covariance_trace;
    int tail_samples = 30;
};

// Plant interface for the generic recursion. predict advances the mean over
// one inter-sample frame with inputs held at the previous record's values;
// it fills *F with the transition Jacobian when requested (EKF). The UKF
// calls predict once per sigma point with F null, the centre point last so
// any internal background state advances exactly once per frame.
struct PlantHooks {
    int dim = 0;
    int n_states = 0; // leading entries; the rest are parameters
    std::array<int, 2> channels{2, 3}; // MeasurementRecord channel indices
    std::vector<std::string> parameter_names;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& xa, const MeasurementRecord& prev,
                                  double dt_frame, bool is_center, Eigen::MatrixXd* F)>
        predict;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& xa, const MeasurementRecord& rec,
                                  Eigen::MatrixXd* H)>
        measure;
    std::function<void(Eigen::VectorXd& xa)> after_update; // optional write-back
};

CalibrationResult kalman_run(FilterKind kind, const PlantHooks& plant, const FilterConfig& cfg,
                             const std::vector<MeasurementRecord>& data,
                             const Eigen::VectorXd& x0);

// base supplies the non-augmented parameter values, refs the reference
// inputs; measured V and freq drive the prediction (zero-order held).
CalibrationResult ekf_run(const AugmentedSpec& spec, const DeraParameters& base,
                          const DeraInputs& refs, const FilterConfig& cfg,
                          const std::vector<MeasurementRecord>& data,
                          const AugmentedState& init);

CalibrationResult ukf_run(const AugmentedSpec& spec, const DeraParameters& base,
                          const DeraInputs& refs, const FilterConfig& cfg,
                          const std::vector<MeasurementRecord>& data,
                          const AugmentedState& init);

// Hand-derived sparse Jacobian for the two published reduced augmentations
// (case1 10x10, case2 14x14); entries use the clamped smooth derivatives.
Eigen::MatrixXd analytic_jacobian(const AugmentedSystem& sys, const Eigen::VectorXd& xa,
                                  double deriv_clamp);

// CSV/table export mirroring the calibration summary layout.
void write_calibration_csv(const std::string& path, const CalibrationResult& r);
std::string format_calibration_summary(const CalibrationResult& r,
                                       const std::map<std::string, double>& initialization,
                                       const std::map<std::string, double>& reference);

} // namespace deracal
