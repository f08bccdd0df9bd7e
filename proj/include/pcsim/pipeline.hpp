#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pcsim/config.hpp"

namespace pcsim {

// End-to-end scenario runner: design -> FDTD -> far field -> spectra ->
// photon statistics, driven by a structured-text config. Stage list is a
// contiguous prefix of the pipeline; outputs are plain CSV/JSON plus a
// manifest with content hashes.

inline constexpr const char *kConfigRootEnv = "PCSIM_CONFIG_ROOT";

struct ScenarioOptions {
    uint64_t seed = 1;
    int threads = 1;
    std::string out_dir = "out";
};

struct ScenarioResult {
    std::string name;
    std::string out_root;                  // <out_dir>/<name>
    std::vector<std::string> variants;
    std::string manifest_path;             // scenario-level manifest
    std::map<std::string, std::string> variant_manifests;
};

// Resolves a scenario argument to a config file: literal path, then
// <arg>.cfg, then under $PCSIM_CONFIG_ROOT, then ./configs.
std::string resolve_config_path(const std::string &arg);

// Full validation pass (schema, value ranges, buildable designs). Throws
// ConfigError / GeometryError; performs no filesystem writes.
void validate_scenario_config(const ConfigDoc &doc);

ScenarioResult run_scenario(const ConfigDoc &doc, const ScenarioOptions &options);

struct CompareReport {
    struct Row {
        std::string key;
        double a = 0.0;
        double b = 0.0;
        double ratio = 0.0; // a / b
    };
    std::string manifest_a;
    std::string manifest_b;
    std::vector<Row> rows;

    std::string render() const;
};

CompareReport compare_manifests(const std::string &manifest_a_path, const std::string &manifest_b_path);

uint64_t fnv1a64(const void *data, size_t len);
uint64_t fnv1a64_file(const std::string &path);

} // namespace pcsim
