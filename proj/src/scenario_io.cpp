#include "deracal/scenario_io.hpp"

#include "deracal/integrator.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace deracal {

void VoltageProfileSpec::validate() const {
    if (!(a > 0.0 && a <= d && d <= 1.0))
        throw InvalidArgument("voltage profile requires 0 < a <= d <= 1");
    if (!(b > 0.0)) throw InvalidArgument("voltage profile requires b > 0");
    if (!(c > 0.0)) throw InvalidArgument("voltage profile requires c > 0");
    if (!(t_event >= 0.0)) throw InvalidArgument("voltage profile requires t_event >= 0");
}

double voltage_profile(double t, const VoltageProfileSpec& s) {
    if (!(t >= 0.0)) throw InvalidArgument("voltage_profile: t must be nonnegative");
    const double t0 = s.t_event;
    const double sag_end = t0 + s.b / 60.0;
    if (t >= t0 && t < sag_end) return s.a;
    if (t >= sag_end && t < t0 + s.c) return (s.d - s.a) / 9.0 * (t - sag_end) + s.a;
    return 1.0;
}

double frequency_profile(double t, const FrequencyEventSpec& s) {
    if (!s.enabled) return 1.0;
    const double u = t - s.t_start;
    const double d = s.dip;
    if (u < 0.0) return 1.0;
    if (u < 0.10) return 1.0 - d * (u / 0.10);        // ramp down
    if (u < 0.20) return 1.0 - d;                     // hold low
    if (u < 0.35) return 1.0 - d + 2.0 * d * ((u - 0.20) / 0.15); // ramp up through nominal
    if (u < 0.45) return 1.0 + d;                     // hold high
    if (u < 0.50) return 1.0 + d * (1.0 - (u - 0.45) / 0.05);     // back to nominal
    return 1.0;
}

double MeasurementRecord::channel(int i) const {
    switch (i) {
        case 0: return V;
        case 1: return freq;
        case 2: return P;
        case 3: return Q;
        case 4: return Id;
        case 5: return Iq;
        default: throw InvalidArgument("bad channel index");
    }
}

void MeasurementRecord::set_channel(int i, double v) {
    switch (i) {
        case 0: V = v; break;
        case 1: freq = v; break;
        case 2: P = v; break;
        case 3: Q = v; break;
        case 4: Id = v; break;
        case 5: Iq = v; break;
        default: throw InvalidArgument("bad channel index");
    }
}

const std::array<std::string, 6>& MeasurementRecord::channel_names() {
    static const std::array<std::string, 6> names{"V", "freq", "P", "Q", "Id", "Iq"};
    return names;
}

void ScenarioConfig::validate() const {
    flags.validate();
    validate_parameters(params);
    profile.validate();
    if (!(duration > 0.0)) throw InvalidArgument("scenario duration must be positive");
    if (!(sample_rate > 0.0)) throw InvalidArgument("sample rate must be positive");
    const double n = duration * sample_rate;
    if (std::abs(n - std::round(n)) > 1e-9)
        throw InvalidArgument("duration * sample_rate must be an integer number of frames");
    if (substeps < 1) throw InvalidArgument("substeps must be >= 1");
    for (double s : noise_std)
        if (s < 0.0) throw InvalidArgument("noise std must be nonnegative");
}

DeraParameters scenario_parameters(const ScenarioConfig& cfg) {
    DeraParameters p = cfg.params;
    if (cfg.derive_pfaref) p.pfaref = std::atan(cfg.refs.Q_ref / cfg.refs.P_ref);
    if (cfg.derive_current_limits) {
        const double v0 = 1.0;
        const CurrentLimits lim = current_limits(cfg.flags.pqflag, cfg.refs.P_ref / v0,
                                                 cfg.refs.Q_ref / v0, p.I_max);
        p.I_dmax = lim.id_max;
        p.I_dmin = lim.id_min;
        p.I_qmax = lim.iq_max;
        p.I_qmin = lim.iq_min;
    }
    validate_parameters(p);
    return p;
}

StateVec<double> nominal_initial_state(const DeraParameters& p, const DeraInputs& u) {
    const double vf = std::max(u.V, 0.01);
    StateVec<double> x{};
    x[0] = u.V;
    x[1] = u.P_ref;
    x[2] = u.Q_ref / vf;
    x[3] = u.Q_ref / vf;
    x[4] = 1.0;
    x[5] = u.freq;
    x[6] = u.P_ref;
    x[7] = u.P_ref;
    x[8] = u.P_ref;
    x[9] = u.P_ref / vf;
    (void)p;
    return x;
}

SynthesisResult synthesize(const ScenarioConfig& cfg) {
    cfg.validate();
    const DeraParameters p = scenario_parameters(cfg);
    const int frames = int(std::round(cfg.duration * cfg.sample_rate));
    const double frame_dt = 1.0 / cfg.sample_rate;
    const double dt = frame_dt / cfg.substeps;

    DeraInputs u = cfg.refs;
    u.V = voltage_profile(0.0, cfg.profile);
    u.freq = frequency_profile(0.0, cfg.freq_event);

    SynthesisResult out;
    out.x0 = cfg.init == InitStyle::equilibrium ? solve_equilibrium(p, cfg.flags, u)
                                                : nominal_initial_state(p, u);

    StateVec<double> x = out.x0;
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    double trip_timer = 0.0;
    const auto in_normal_band = [&](double V) { return V > p.V_l1 && V < p.V_h1; };

    for (int k = 0; k <= frames; ++k) {
        const double t = k * frame_dt;
        u.V = voltage_profile(t, cfg.profile);
        u.freq = frequency_profile(t, cfg.freq_event);
        u.trip_timer = trip_timer;

        const DeraOutputs y = dera_outputs(x, u, p);
        MeasurementRecord rec;
        rec.t = t;
        rec.V = u.V;
        rec.freq = u.freq;
        rec.P = y.P;
        rec.Q = y.Q;
        rec.Id = y.I_d;
        rec.Iq = y.I_q;
        out.truth.push_back(rec);
        out.trajectory.push_back(SamplePoint{t, x, u});

        MeasurementRecord noisy = rec;
        for (int c = 0; c < 6; ++c)
            if (cfg.noise_std[std::size_t(c)] > 0.0)
                noisy.set_channel(c, noisy.channel(c) + cfg.noise_std[std::size_t(c)] * gauss(rng));
        out.noisy.push_back(noisy);

        if (k == frames) break;

        // Advance one frame with the inputs held (zero-order hold).
        for (int s = 0; s < cfg.substeps; ++s) {
            const auto f = [&](const StateVec<double>& xs) { return dera_rhs(xs, u, p, cfg.flags); };
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
            for (int i = 0; i < kNumStates; ++i)
                if (!std::isfinite(x[i]))
                    throw SimulationFault("synthesize: non-finite state " + state_names()[i] +
                                          " at t = " + std::to_string(t + (s + 1) * dt));
            if (cfg.flags.vtripflag) {
                if (in_normal_band(u.V))
                    trip_timer = 0.0; // latch resets on re-entry
                else
                    trip_timer += dt;
                u.trip_timer = trip_timer;
            }
        }
    }
    return out;
}

std::vector<MeasurementRecord> replay_model(const DeraParameters& p, const FlagConfig& flags,
                                            const DeraInputs& refs,
                                            const std::vector<MeasurementRecord>& inputs,
                                            int substeps) {
    if (inputs.size() < 2) throw ContractError("replay_model needs at least two input records");
    if (substeps < 1) throw InvalidArgument("replay_model: substeps must be >= 1");
    validate_parameters(p);

    DeraInputs u = refs;
    u.V = inputs.front().V;
    u.freq = inputs.front().freq;
    StateVec<double> x = solve_equilibrium(p, flags, u);

    std::vector<MeasurementRecord> out;
    out.reserve(inputs.size());
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        u.V = inputs[k].V;
        u.freq = inputs[k].freq;
        const DeraOutputs y = dera_outputs(x, u, p);
        MeasurementRecord rec;
        rec.t = inputs[k].t;
        rec.V = u.V;
        rec.freq = u.freq;
        rec.P = y.P;
        rec.Q = y.Q;
        rec.Id = y.I_d;
        rec.Iq = y.I_q;
        out.push_back(rec);
        if (k + 1 == inputs.size()) break;
        const double dt = (inputs[k + 1].t - inputs[k].t) / substeps;
        if (!(dt > 0.0)) throw DataFault("replay_model: non-increasing timestamps");
        for (int s = 0; s < substeps; ++s) {
            const auto f = [&](const StateVec<double>& xs) { return dera_rhs(xs, u, p, flags); };
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
        for (int i = 0; i < kNumStates; ++i)
            if (!std::isfinite(x[i]))
                throw SimulationFault("replay_model: non-finite state " + state_names()[i]);
    }
    return out;
}

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

void write_measurements(const std::string& path, const std::vector<MeasurementRecord>& records) {
    std::ofstream os(path);
    if (!os) throw DataFault("cannot open for writing: " + path);
    os << "t,V,freq,P,Q,Id,Iq\n";
    for (const auto& r : records) {
        os << format_double(r.t);
        for (int c = 0; c < 6; ++c) {
            os << ',';
            if (r.valid[std::size_t(c)]) os << format_double(r.channel(c));
        }
        os << '\n';
    }
    if (!os) throw DataFault("write failed: " + path);
}

std::vector<MeasurementRecord> read_measurements(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataFault("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataFault(path + ": missing header");
    if (line == "t,V,freq,P,Q,Id,Iq\r") line.pop_back();
    if (line != "t,V,freq,P,Q,Id,Iq")
        throw DataFault(path + ":1: unexpected header '" + line + "'");

    std::vector<MeasurementRecord> out;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t pos = 0;
        while (true) {
            const std::size_t comma = line.find(',', pos);
            cells.push_back(line.substr(pos, comma - pos));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (cells.size() != 7)
            throw DataFault(path + ":" + std::to_string(lineno) + ": expected 7 cells, got " +
                            std::to_string(cells.size()));
        const auto parse = [&](const std::string& cell, int col) {
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
                throw DataFault(path + ":" + std::to_string(lineno) + ": column " +
                                std::to_string(col + 1) + ": not a number: '" + cell + "'");
            return v;
        };
        MeasurementRecord r;
        r.t = parse(cells[0], 0);
        for (int c = 0; c < 6; ++c) {
            if (cells[std::size_t(c) + 1].empty()) {
                r.valid[std::size_t(c)] = false;
                r.set_channel(c, 0.0);
            } else {
                r.set_channel(c, parse(cells[std::size_t(c) + 1], c + 1));
            }
        }
        if (!out.empty() && !(r.t > out.back().t))
            throw DataFault(path + ":" + std::to_string(lineno) +
                            ": non-monotone timestamp " + format_double(r.t));
        out.push_back(r);
    }
    return out;
}

} // namespace deracal
