// deracal: simulate the der_a model, analyze parameter observability and
// calibrate estimable parameters from measurement time series.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "deracal/config.hpp"
#include "deracal/estimation.hpp"
#include "deracal/observability.hpp"
#include "deracal/scenario_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

json kv_to_json(const std::string& path) {
    const auto kv = deracal::KeyValueFile::parse_file(path);
    json j;
    j["path"] = path;
    for (const auto& [k, v] : kv.entries()) j["entries"][k] = v;
    return j;
}

void write_manifest(const fs::path& out_dir, const std::string& command, const json& configs,
                    std::uint64_t seed, const std::vector<std::string>& outputs) {
    json m;
    m["command"] = command;
    m["version"] = kVersion;
    m["seed"] = seed;
    m["configs"] = configs;
    m["outputs"] = outputs;
    std::ofstream os(out_dir / "manifest.json");
    os << m.dump(2) << "\n";
}

fs::path prepare_out(const std::string& out) {
    fs::path dir(out);
    fs::create_directories(dir);
    return dir;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out,
                 std::optional<std::uint64_t> seed) {
    deracal::ScenarioConfig cfg = deracal::load_scenario(scenario_path);
    if (seed) cfg.seed = *seed;
    const auto result = deracal::synthesize(cfg);
    const fs::path dir = prepare_out(out);
    deracal::write_measurements((dir / "measurements.csv").string(), result.noisy);
    deracal::write_measurements((dir / "truth.csv").string(), result.truth);
    deracal::write_parameters((dir / "truth_params.kv").string(),
                              deracal::scenario_parameters(cfg));
    json configs;
    configs["scenario"] = kv_to_json(scenario_path);
    write_manifest(dir, "simulate", configs, cfg.seed,
                   {"measurements.csv", "truth.csv", "truth_params.kv"});
    std::cout << "wrote " << result.noisy.size() << " samples to " << (dir / "measurements.csv")
              << "\n";
    return 0;
}

int cmd_observe(const std::string& scenario_path, const std::string& spec_path,
                const std::string& out, const std::string& mset,
                std::optional<std::uint64_t> seed) {
    deracal::ScenarioConfig cfg = deracal::load_scenario(scenario_path);
    if (seed) cfg.seed = *seed;
    deracal::CalibrationSetup setup = deracal::load_spec(spec_path);
    if (!mset.empty()) setup.spec.measurement_set = deracal::measurement_set_from_string(mset);

    // The evaluation trajectory starts from the nominal referencing so the
    // initialization transient excites the power-order chain.
    cfg.init = deracal::InitStyle::nominal;
    const auto sim = deracal::synthesize(cfg);
    const deracal::DeraParameters truth = deracal::scenario_parameters(cfg);
    const auto report = deracal::analyze(setup.spec, truth, sim.trajectory);
    const auto selection =
        deracal::select_estimable(setup.spec, truth, sim.trajectory);

    const fs::path dir = prepare_out(out);
    {
        std::ofstream os(dir / "report.txt");
        os << deracal::format_report(report);
        os << "\n[selection_audit]\n";
        for (const auto& line : selection.audit) os << line << "\n";
        os << "\n[selected_parameters]\n";
        for (const auto& q : selection.spec.parameters) os << q << "\n";
    }
    json configs;
    configs["scenario"] = kv_to_json(scenario_path);
    configs["spec"] = kv_to_json(spec_path);
    configs["measurement_set"] = to_string(setup.spec.measurement_set);
    write_manifest(dir, "observe", configs, cfg.seed, {"report.txt"});
    std::cout << deracal::format_report(report);
    return 0;
}

int cmd_calibrate(const std::string& measurements_path, const std::string& scenario_path,
                  const std::string& spec_path, const std::string& filter, const std::string& out,
                  const std::string& mset, std::optional<std::uint64_t> seed) {
    deracal::ScenarioConfig cfg = deracal::load_scenario(scenario_path);
    deracal::CalibrationSetup setup = deracal::load_spec(spec_path);
    if (!mset.empty()) setup.spec.measurement_set = deracal::measurement_set_from_string(mset);
    if (seed) setup.filter.seed = *seed;

    const auto data = deracal::read_measurements(measurements_path);
    const deracal::DeraParameters base = deracal::scenario_parameters(cfg);

    deracal::DeraParameters init_params = base;
    for (const auto& [name, value] : setup.init_overrides)
        deracal::set_parameter(init_params, name, value);
    const auto init = deracal::make_initial_state(setup.spec, init_params, cfg.refs);

    deracal::CalibrationResult result;
    if (filter == "ekf")
        result = deracal::ekf_run(setup.spec, base, cfg.refs, setup.filter, data, init);
    else if (filter == "ukf")
        result = deracal::ukf_run(setup.spec, base, cfg.refs, setup.filter, data, init);
    else
        throw deracal::InvalidArgument("--filter must be ekf or ukf");

    const fs::path dir = prepare_out(out);
    deracal::write_calibration_csv((dir / "estimates.csv").string(), result);
    std::map<std::string, double> init_map, ref_map;
    for (const auto& q : setup.spec.parameters) {
        init_map[q] = deracal::get_parameter(init_params, q);
        ref_map[q] = deracal::get_parameter(base, q);
    }
    const std::string summary = deracal::format_calibration_summary(result, init_map, ref_map);
    {
        std::ofstream os(dir / "summary.csv");
        os << summary;
    }
    json configs;
    configs["scenario"] = kv_to_json(scenario_path);
    configs["spec"] = kv_to_json(spec_path);
    configs["measurements"] = measurements_path;
    configs["filter"] = filter;
    write_manifest(dir, "calibrate", configs, setup.filter.seed,
                   {"estimates.csv", "summary.csv"});
    std::cout << summary;
    return 0;
}

int cmd_compare(const std::string& truth_path, const std::string& calibrated_path,
                const std::string& guideline_path, const std::string& scenario_path,
                const std::string& out) {
    const auto truth = deracal::read_measurements(truth_path);
    const deracal::ScenarioConfig cfg = deracal::load_scenario(scenario_path);
    const deracal::DeraParameters cal = deracal::load_parameters(calibrated_path);
    const deracal::DeraParameters gl = deracal::load_parameters(guideline_path);

    const auto run_cal = deracal::replay_model(cal, cfg.flags, cfg.refs, truth, cfg.substeps);
    const auto run_gl = deracal::replay_model(gl, cfg.flags, cfg.refs, truth, cfg.substeps);

    double se_p_cal = 0, se_q_cal = 0, se_p_gl = 0, se_q_gl = 0;
    const fs::path dir = prepare_out(out);
    {
        std::ofstream os(dir / "comparison.csv");
        os << "t,P_truth,Q_truth,P_calibrated,Q_calibrated,P_guideline,Q_guideline\n";
        for (std::size_t k = 0; k < truth.size(); ++k) {
            os << truth[k].t << ',' << truth[k].P << ',' << truth[k].Q << ',' << run_cal[k].P
               << ',' << run_cal[k].Q << ',' << run_gl[k].P << ',' << run_gl[k].Q << '\n';
            se_p_cal += std::pow(run_cal[k].P - truth[k].P, 2);
            se_q_cal += std::pow(run_cal[k].Q - truth[k].Q, 2);
            se_p_gl += std::pow(run_gl[k].P - truth[k].P, 2);
            se_q_gl += std::pow(run_gl[k].Q - truth[k].Q, 2);
        }
    }
    const double n = double(truth.size());
    json summary;
    summary["rmse_P_calibrated"] = std::sqrt(se_p_cal / n);
    summary["rmse_Q_calibrated"] = std::sqrt(se_q_cal / n);
    summary["rmse_P_guideline"] = std::sqrt(se_p_gl / n);
    summary["rmse_Q_guideline"] = std::sqrt(se_q_gl / n);
    {
        std::ofstream os(dir / "rmse.json");
        os << summary.dump(2) << "\n";
    }
    json configs;
    configs["truth"] = truth_path;
    configs["calibrated"] = kv_to_json(calibrated_path);
    configs["guideline"] = kv_to_json(guideline_path);
    configs["scenario"] = kv_to_json(scenario_path);
    write_manifest(dir, "compare", configs, cfg.seed, {"comparison.csv", "rmse.json"});
    std::cout << summary.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"der_a simulation, observability analysis and calibration toolkit"};
    app.require_subcommand(1);

    std::string scenario, spec, measurements, filter = "ekf", out = "out", mset;
    std::string truth, calibrated, guideline;
    std::optional<std::uint64_t> seed;

    auto* sim = app.add_subcommand("simulate", "synthesize measurement data for a scenario");
    sim->add_option("--scenario", scenario, "scenario file")->required();
    sim->add_option("--out", out, "output directory");
    sim->add_option("--seed", seed, "override the scenario seed");

    auto* obs = app.add_subcommand("observe", "observability analysis for an augmented spec");
    obs->add_option("--scenario", scenario, "scenario file")->required();
    obs->add_option("--spec", spec, "augmented spec file")->required();
    obs->add_option("--out", out, "output directory");
    obs->add_option("--measurement-set", mset, "vpq or vidiq");
    obs->add_option("--seed", seed, "override the scenario seed");

    auto* cal = app.add_subcommand("calibrate", "run EKF/UKF parameter calibration");
    cal->add_option("--measurements", measurements, "measurement CSV")->required();
    cal->add_option("--scenario", scenario, "scenario file (base parameters, references)")
        ->required();
    cal->add_option("--spec", spec, "augmented spec file")->required();
    cal->add_option("--filter", filter, "ekf or ukf");
    cal->add_option("--out", out, "output directory");
    cal->add_option("--measurement-set", mset, "vpq or vidiq");
    cal->add_option("--seed", seed, "manifest seed override");

    auto* cmp = app.add_subcommand("compare", "truth vs calibrated vs guideline trajectories");
    cmp->add_option("--truth", truth, "truth CSV")->required();
    cmp->add_option("--calibrated", calibrated, "calibrated parameter file")->required();
    cmp->add_option("--guideline", guideline, "guideline parameter file")->required();
    cmp->add_option("--scenario", scenario, "scenario file")->required();
    cmp->add_option("--out", out, "output directory");

    try {
        app.parse(argc, argv);
        if (sim->parsed()) return cmd_simulate(scenario, out, seed);
        if (obs->parsed()) return cmd_observe(scenario, spec, out, mset, seed);
        if (cal->parsed())
            return cmd_calibrate(measurements, scenario, spec, filter, out, mset, seed);
        if (cmp->parsed()) return cmd_compare(truth, calibrated, guideline, scenario, out);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const deracal::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const deracal::DataFault& e) {
        std::cerr << "data fault: " << e.what() << "\n";
        return 3;
    } catch (const deracal::ContractError& e) {
        std::cerr << "contract error: " << e.what() << "\n";
        return 3;
    } catch (const deracal::Error& e) {
        std::cerr << "numerical fault: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
