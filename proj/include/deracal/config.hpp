#pragma once

// Flat key-value config documents ("key = value", '#' comments) and the
// loaders that turn them into scenario, spec and filter configurations.
// Unknown keys are rejected; missing keys fall back to the documented
// defaults. Environment variables prefixed DERACAL_ override any key.

#include <map>
#include <string>
#include <vector>

#include "deracal/augmented.hpp"
#include "deracal/estimation.hpp"
#include "deracal/scenario_io.hpp"

namespace deracal {

class KeyValueFile {
public:
    static KeyValueFile parse_file(const std::string& path);
    static KeyValueFile parse_text(const std::string& text, const std::string& origin = "<text>");

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;

    // Keys matching a prefix like "param."; returns the suffixes.
    std::vector<std::string> keys_with_prefix(const std::string& prefix) const;

    // Apply DERACAL_* environment overrides (keys normalized: lowercase,
    // non-alphanumerics to '_').
    void apply_env_overrides();

    // Every key must have been consumed by one of the getters; call last.
    void reject_unknown_keys() const;

    const std::map<std::string, std::string>& entries() const { return entries_; }
    const std::string& origin() const { return origin_; }

private:
    mutable std::map<std::string, bool> consumed_;
    std::map<std::string, std::string> entries_;
    std::string origin_;
};

// Parameter file: one key per nomenclature symbol; missing keys keep the
// guideline defaults, unknown keys are rejected.
DeraParameters load_parameters(const std::string& path);
void write_parameters(const std::string& path, const DeraParameters& p);

ScenarioConfig load_scenario(const std::string& path);

struct CalibrationSetup {
    AugmentedSpec spec;
    FilterConfig filter;
    std::map<std::string, double> init_overrides; // init.<param> entries
};

CalibrationSetup load_spec(const std::string& path);

} // namespace deracal
