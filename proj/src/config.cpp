#include "deracal/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

extern char** environ;

namespace deracal {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string normalize_key(const std::string& k) {
    std::string out;
    for (char c : k) out.push_back(std::isalnum(static_cast<unsigned char>(c))
                                       ? char(std::tolower(static_cast<unsigned char>(c)))
                                       : '_');
    return out;
}

double parse_double(const std::string& s, const std::string& key) {
    double v = 0.0;
    const std::string t = trim(s);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw DataFault("config key '" + key + "': not a number: '" + s + "'");
    return v;
}

} // namespace

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataFault("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_text(ss.str(), path);
}

KeyValueFile KeyValueFile::parse_text(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw DataFault(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key.empty())
            throw DataFault(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.entries_.count(key))
            throw DataFault(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv.entries_[key] = val;
    }
    return kv;
}

bool KeyValueFile::has(const std::string& key) const {
    const auto it = entries_.find(key);
    if (it != entries_.end()) consumed_[key] = true;
    return it != entries_.end();
}

std::string KeyValueFile::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    consumed_[key] = true;
    return it->second;
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    consumed_[key] = true;
    return parse_double(it->second, key);
}

int KeyValueFile::get_int(const std::string& key, int fallback) const {
    const double v = get_double(key, double(fallback));
    return int(v);
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    consumed_[key] = true;
    const std::string v = it->second;
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw DataFault("config key '" + key + "': not a boolean: '" + v + "'");
}

std::uint64_t KeyValueFile::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    consumed_[key] = true;
    std::uint64_t v = 0;
    const std::string t = trim(it->second);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw DataFault("config key '" + key + "': not an unsigned integer: '" + it->second + "'");
    return v;
}

std::vector<std::string> KeyValueFile::get_list(const std::string& key) const {
    std::vector<std::string> out;
    const auto it = entries_.find(key);
    if (it == entries_.end()) return out;
    consumed_[key] = true;
    std::string cell;
    std::istringstream is(it->second);
    while (std::getline(is, cell, ',')) {
        const std::string t = trim(cell);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::vector<std::string> KeyValueFile::keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_)
        if (k.rfind(prefix, 0) == 0) out.push_back(k.substr(prefix.size()));
    return out;
}

void KeyValueFile::apply_env_overrides() {
    for (char** e = environ; e && *e; ++e) {
        const std::string entry(*e);
        if (entry.rfind("DERACAL_", 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        const std::string env_key = normalize_key(entry.substr(8, eq - 8));
        const std::string val = entry.substr(eq + 1);
        for (auto& [k, v] : entries_) {
            if (normalize_key(k) == env_key) {
                v = val;
                break;
            }
        }
    }
}

void KeyValueFile::reject_unknown_keys() const {
    for (const auto& [k, v] : entries_)
        if (!consumed_.count(k))
            throw DataFault(origin_ + ": unknown key '" + k + "'");
}

DeraParameters load_parameters(const std::string& path) {
    KeyValueFile kv = KeyValueFile::parse_file(path);
    kv.apply_env_overrides();
    DeraParameters p = default_parameters();
    visit_params(p, [&](const char* name, double& field) {
        field = kv.get_double(name, field);
    });
    p.k_sat = kv.get_int("k_sat", p.k_sat);
    p.k_db = kv.get_int("k_db", p.k_db);
    kv.reject_unknown_keys();
    validate_parameters(p);
    return p;
}

void write_parameters(const std::string& path, const DeraParameters& p) {
    std::ofstream os(path);
    if (!os) throw DataFault("cannot open for writing: " + path);
    os << "# der_a parameter set\n";
    visit_params(p, [&](const char* name, const double& v) {
        char buf[32];
        const auto res = std::to_chars(buf, buf + sizeof(buf), v);
        os << name << " = " << std::string(buf, res.ptr) << '\n';
    });
    os << "k_sat = " << p.k_sat << '\n';
    os << "k_db = " << p.k_db << '\n';
}

namespace {

FlagConfig flags_from_kv(const KeyValueFile& kv) {
    FlagConfig fl;
    const std::string preset = kv.get_string("case", "");
    if (preset == "case1")
        fl = FlagConfig::case1();
    else if (preset == "case2")
        fl = FlagConfig::case2();
    else if (!preset.empty())
        throw DataFault("unknown case preset: " + preset);
    fl.pflag = kv.get_int("flags.pflag", fl.pflag);
    fl.fflag = kv.get_int("flags.fflag", fl.fflag);
    fl.vtripflag = kv.get_int("flags.vtripflag", fl.vtripflag);
    fl.pqflag = kv.get_int("flags.pqflag", fl.pqflag);
    fl.validate();
    return fl;
}

} // namespace

ScenarioConfig load_scenario(const std::string& path) {
    KeyValueFile kv = KeyValueFile::parse_file(path);
    kv.apply_env_overrides();
    ScenarioConfig cfg;
    cfg.flags = flags_from_kv(kv);

    cfg.params = default_parameters();
    for (const auto& name : kv.keys_with_prefix("param.")) {
        if (name == "k_sat")
            cfg.params.k_sat = kv.get_int("param.k_sat", cfg.params.k_sat);
        else if (name == "k_db")
            cfg.params.k_db = kv.get_int("param.k_db", cfg.params.k_db);
        else
            set_parameter(cfg.params, name, kv.get_double("param." + name, 0.0));
    }

    cfg.profile.a = kv.get_double("profile.a", cfg.profile.a);
    cfg.profile.b = kv.get_double("profile.b", cfg.profile.b);
    cfg.profile.c = kv.get_double("profile.c", cfg.profile.c);
    cfg.profile.d = kv.get_double("profile.d", cfg.profile.d);
    cfg.profile.t_event = kv.get_double("profile.t_event", cfg.profile.t_event);

    cfg.freq_event.enabled = kv.get_bool("freq_event.enabled", cfg.flags.fflag != 0);
    cfg.freq_event.t_start = kv.get_double("freq_event.t_start", cfg.freq_event.t_start);
    cfg.freq_event.dip = kv.get_double("freq_event.dip", cfg.freq_event.dip);

    cfg.refs.V_ref0 = kv.get_double("refs.V_ref0", cfg.refs.V_ref0);
    cfg.refs.Q_ref = kv.get_double("refs.Q_ref", cfg.refs.Q_ref);
    cfg.refs.P_ref = kv.get_double("refs.P_ref", cfg.refs.P_ref);
    cfg.refs.f_ref = kv.get_double("refs.f_ref", cfg.refs.f_ref);
    cfg.refs.dt_input = kv.get_double("refs.dt_input", cfg.refs.dt_input);

    cfg.duration = kv.get_double("duration", cfg.duration);
    cfg.sample_rate = kv.get_double("sample_rate", cfg.sample_rate);
    cfg.seed = kv.get_u64("seed", cfg.seed);
    cfg.substeps = kv.get_int("substeps", cfg.substeps);
    cfg.derive_current_limits = kv.get_bool("derive_current_limits", cfg.derive_current_limits);
    cfg.derive_pfaref = kv.get_bool("derive_pfaref", cfg.derive_pfaref);
    const std::string init = kv.get_string("init", "equilibrium");
    if (init == "equilibrium")
        cfg.init = InitStyle::equilibrium;
    else if (init == "nominal")
        cfg.init = InitStyle::nominal;
    else
        throw DataFault("init must be 'equilibrium' or 'nominal'");

    const double all = kv.get_double("noise_std", 1e-4);
    cfg.noise_std.fill(all);
    const auto& names = MeasurementRecord::channel_names();
    for (int c = 0; c < 6; ++c)
        cfg.noise_std[std::size_t(c)] =
            kv.get_double("noise_std_" + names[std::size_t(c)], cfg.noise_std[std::size_t(c)]);

    kv.reject_unknown_keys();
    cfg.validate();
    return cfg;
}

CalibrationSetup load_spec(const std::string& path) {
    KeyValueFile kv = KeyValueFile::parse_file(path);
    kv.apply_env_overrides();
    CalibrationSetup setup;

    const std::string preset = kv.get_string("spec", "");
    if (preset == "case1_full")
        setup.spec = AugmentedSpec::case1_full();
    else if (preset == "case1_reduced")
        setup.spec = AugmentedSpec::case1_reduced();
    else if (preset == "case2_reduced")
        setup.spec = AugmentedSpec::case2_reduced();
    else if (preset == "case2_calibration")
        setup.spec = AugmentedSpec::case2_calibration();
    else if (!preset.empty())
        throw DataFault("unknown spec preset: " + preset);

    if (kv.has("case") || kv.has("flags.pflag") || kv.has("flags.fflag") ||
        kv.has("flags.vtripflag") || kv.has("flags.pqflag"))
        setup.spec.flags = flags_from_kv(kv);
    if (kv.has("states")) setup.spec.states = kv.get_list("states");
    if (kv.has("parameters")) setup.spec.parameters = kv.get_list("parameters");
    setup.spec.measurement_set = measurement_set_from_string(
        kv.get_string("measurement_set", to_string(setup.spec.measurement_set)));
    setup.spec.validate();

    FilterConfig& f = setup.filter;
    f.r_default = kv.get_double("filter.r", f.r_default);
    f.w_state = kv.get_double("filter.w_state", f.w_state);
    f.w_param = kv.get_double("filter.w_param", f.w_param);
    f.w_param_rel = kv.get_double("filter.w_param_rel", f.w_param_rel);
    f.p0_state = kv.get_double("filter.p0_state", f.p0_state);
    f.p0_param_rel = kv.get_double("filter.p0_param_rel", f.p0_param_rel);
    f.p0_param_abs = kv.get_double("filter.p0_param_abs", f.p0_param_abs);
    f.ukf_alpha = kv.get_double("filter.ukf_alpha", f.ukf_alpha);
    f.ukf_beta = kv.get_double("filter.ukf_beta", f.ukf_beta);
    f.ukf_kappa = kv.get_double("filter.ukf_kappa", f.ukf_kappa);
    f.deriv_clamp_eps = kv.get_double("filter.clamp_eps", f.deriv_clamp_eps);
    f.substeps = kv.get_int("filter.substeps", f.substeps);
    f.param_floor = kv.get_double("filter.param_floor", f.param_floor);
    f.tail_samples = kv.get_int("filter.tail_samples", f.tail_samples);
    const std::string jac = kv.get_string("filter.jacobian", "ad");
    if (jac == "ad")
        f.jacobian = JacobianKind::ad;
    else if (jac == "analytic")
        f.jacobian = JacobianKind::analytic;
    else
        throw DataFault("filter.jacobian must be 'ad' or 'analytic'");
    const std::string chain = kv.get_string("filter.chain", "exact");
    if (chain == "exact")
        f.chain = JacobianChain::exact;
    else if (chain == "literal")
        f.chain = JacobianChain::literal;
    else
        throw DataFault("filter.chain must be 'exact' or 'literal'");

    for (const auto& name : kv.keys_with_prefix("init.")) {
        if (!is_parameter_name(name)) throw DataFault("init.* names an unknown parameter: " + name);
        setup.init_overrides[name] = kv.get_double("init." + name, 0.0);
    }
    for (const auto& name : kv.keys_with_prefix("bounds.")) {
        const auto vals = kv.get_list("bounds." + name);
        if (vals.size() != 2) throw DataFault("bounds." + name + " must be 'min,max'");
        f.parameter_bounds[name] = {parse_double(vals[0], name), parse_double(vals[1], name)};
    }

    kv.reject_unknown_keys();
    f.validate();
    return setup;
}

} // namespace deracal
