#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "pcsim/config.hpp"
#include "pcsim/errors.hpp"
#include "pcsim/pipeline.hpp"
#include "pcsim/version.hpp"

namespace {

// Exit codes: 1 config error, 2 numerical failure, 3 I/O error.
int run_guarded(const std::function<int()> &body) {
    try {
        return body();
    } catch (const pcsim::ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const pcsim::GeometryError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const pcsim::NumericalError &e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const pcsim::IoError &e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error &e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Photonic-crystal cavity single-photon source simulation pipeline"};
    app.set_version_flag("--version", std::string(pcsim::kVersion));
    app.require_subcommand(1);

    std::string scenario_arg;
    std::string out_dir = "out";
    uint64_t seed = 1;
    int threads = 1;

    auto *run = app.add_subcommand("run", "Run a scenario config end to end");
    run->add_option("scenario", scenario_arg, "Scenario config (path or name under $PCSIM_CONFIG_ROOT/configs)")
        ->required();
    run->add_option("--out-dir", out_dir, "Output directory root");
    run->add_option("--seed", seed, "Random seed recorded in every output");
    run->add_option("--threads", threads, "Worker cap; never changes results")->check(CLI::PositiveNumber);

    std::string manifest_a;
    std::string manifest_b;
    auto *compare = app.add_subcommand("compare", "Tabulate metric ratios of two variant manifests");
    compare->add_option("manifest_a", manifest_a, "First manifest.json")->required();
    compare->add_option("manifest_b", manifest_b, "Second manifest.json")->required();

    std::string config_path;
    auto *validate = app.add_subcommand("validate-config", "Parse and validate a scenario config");
    validate->add_option("config", config_path, "Scenario config path or name")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) {
        return run_guarded([&] {
            const std::string path = pcsim::resolve_config_path(scenario_arg);
            const pcsim::ConfigDoc doc = pcsim::ConfigDoc::parse_file(path);
            pcsim::ScenarioOptions options;
            options.seed = seed;
            options.threads = threads;
            options.out_dir = out_dir;
            const pcsim::ScenarioResult result = pcsim::run_scenario(doc, options);
            std::cout << "scenario '" << result.name << "' -> " << result.out_root << "\n";
            for (const auto &[variant, manifest] : result.variant_manifests) {
                std::cout << "  " << variant << ": " << manifest << "\n";
            }
            std::cout << "  manifest: " << result.manifest_path << "\n";
            return 0;
        });
    }
    if (compare->parsed()) {
        return run_guarded([&] {
            const pcsim::CompareReport report = pcsim::compare_manifests(manifest_a, manifest_b);
            std::cout << report.render();
            return 0;
        });
    }
    return run_guarded([&] {
        const std::string path = pcsim::resolve_config_path(config_path);
        pcsim::validate_scenario_config(pcsim::ConfigDoc::parse_file(path));
        std::cout << "ok: " << path << "\n";
        return 0;
    });
}
