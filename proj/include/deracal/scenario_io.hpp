#pragma once

// Disturbance profiles, truth-model measurement synthesis and measurement
// file I/O: the data plumbing around the estimator.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deracal/dera.hpp"
#include "deracal/observability.hpp"

namespace deracal {

// Substation voltage profile: a sag of depth a lasting b cycles at 60 Hz,
// a slow ramp from a with slope (d-a)/9 until t_event + c, then nominal.
struct VoltageProfileSpec {
    double a = 0.80;      // sag depth (pu)
    double b = 60.0;      // sag duration in 60 Hz cycles
    double c = 0.90;      // ramp-hold duration (s)
    double d = 0.90;      // ramp start voltage (pu)
    double t_event = 1.0; // sag onset (s)
    void validate() const;
};

double voltage_profile(double t, const VoltageProfileSpec& spec);

// Optional frequency excursion for the frequency-watt loop: a dip to
// 1 - dip, recovery through nominal to 1 + dip, back to nominal. Both droop
// gains see excitation. All segments end by t_start + 0.5 s.
struct FrequencyEventSpec {
    bool enabled = false;
    double t_start = 1.5;
    double dip = 0.01; // pu
};

double frequency_profile(double t, const FrequencyEventSpec& spec);

struct MeasurementRecord {
    double t = 0.0;
    double V = 0.0, freq = 0.0, P = 0.0, Q = 0.0, Id = 0.0, Iq = 0.0;
    std::array<bool, 6> valid{true, true, true, true, true, true};

    double channel(int i) const;
    void set_channel(int i, double v);
    static const std::array<std::string, 6>& channel_names();
};

// How the pre-disturbance states are set: the solved fixed point, or the
// guideline-style nominal referencing (x9 = P_ref etc.), which leaves a
// short convergence transient at t = 0.
enum class InitStyle { equilibrium, nominal };

struct ScenarioConfig {
    FlagConfig flags;
    DeraParameters params = default_parameters(); // truth values
    VoltageProfileSpec profile;
    FrequencyEventSpec freq_event;
    DeraInputs refs; // V_ref0, Q_ref, P_ref, f_ref, dt_input
    double duration = 3.0;
    double sample_rate = 30.0;
    std::array<double, 6> noise_std{1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 1e-4};
    std::uint64_t seed = 1;
    int substeps = 32; // RK4 substeps per sample frame
    bool derive_current_limits = true; // apply the priority logic at setup
    bool derive_pfaref = true;         // pfaref = atan(Q_ref / P_ref)
    InitStyle init = InitStyle::equilibrium;

    void validate() const;
};

// Nominal-referencing initial state for given inputs.
StateVec<double> nominal_initial_state(const DeraParameters& p, const DeraInputs& u);

// Resolved parameter set after the setup conventions above.
DeraParameters scenario_parameters(const ScenarioConfig& cfg);

struct SynthesisResult {
    std::vector<MeasurementRecord> noisy;
    std::vector<MeasurementRecord> truth;
    std::vector<SamplePoint> trajectory; // full states + held inputs per sample
    StateVec<double> x0{};
};

SynthesisResult synthesize(const ScenarioConfig& cfg);

void write_measurements(const std::string& path, const std::vector<MeasurementRecord>& records);
std::vector<MeasurementRecord> read_measurements(const std::string& path);

// Re-simulate the model under the V/freq inputs of an existing record
// sequence (zero-order held), starting from the equilibrium at the first
// sample. Returns records with model P, Q, Id, Iq at the input timestamps.
std::vector<MeasurementRecord> replay_model(const DeraParameters& p, const FlagConfig& flags,
                                            const DeraInputs& refs,
                                            const std::vector<MeasurementRecord>& inputs,
                                            int substeps = 32);

} // namespace deracal
