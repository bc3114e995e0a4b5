#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mmv/errors.hpp"
#include "mmv/experiment.hpp"
#include "mmv/model_io.hpp"

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
};

void add_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "experiment or model config (JSON)")->required();
    cmd->add_option("--seed", f.seed, "top-level seed; overrides the config");
    cmd->add_option("--out", f.out, "output directory; overrides output_dir");
    cmd->add_option("--paths", f.paths, "Monte Carlo paths for this experiment's sampling stage");
    cmd->add_option("--steps", f.steps, "time steps for this experiment's solver or simulation");
}

int exit_code_for(mmv::ErrorCode code) {
    switch (code) {
        case mmv::ErrorCode::SaddleViolated:
        case mmv::ErrorCode::InvalidBound:
            return mmv::exit_status::kAssertionFailed;
        default:
            return mmv::exit_status::kInputError;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cone-constrained monotone mean-variance / mean-variance engine"};
    app.set_version_flag("--version", mmv::version_string());
    app.require_subcommand(1);

    Flags flags;
    const char* commands[][2] = {
        {"solve", "solve one BSDE (solve.equation: Y, P, P1 or P2)"},
        {"value", "MMV value vs. MV dual value from independent solves"},
        {"simulate", "Monte Carlo batch under a policy and an adversary"},
        {"saddle", "saddle-point scan over policy x adversary families"},
        {"equivalence", "compare MMV and MV feedback portfolios on a probe lattice"},
        {"dual-curve", "tabulate F(K), gamma_hat(K) and K - (theta/2) F(K)"},
    };
    for (const auto& c : commands) add_flags(app.add_subcommand(c[0], c[1]), flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : mmv::exit_status::kInputError;
    }

    const std::string experiment = app.get_subcommands().front()->get_name();
    try {
        mmv::RunOverrides ov;
        ov.experiment = experiment;
        ov.seed = flags.seed;
        ov.output_dir = flags.out;
        ov.paths = flags.paths;
        ov.steps = flags.steps;
        const mmv::ExperimentConfig cfg = mmv::resolve_config(mmv::read_json_file(flags.config), ov);
        const mmv::RunResult result = mmv::run(cfg);
        std::cout << result.results.dump(2) << "\n";
        std::cout << "manifest: " << result.manifest_path << "\n";
        if (result.exit_code != mmv::exit_status::kOk) std::cerr << experiment << ": " << result.message << "\n";
        return result.exit_code;
    } catch (const mmv::Error& e) {
        std::cerr << experiment << ": " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << experiment << ": " << e.what() << "\n";
        return mmv::exit_status::kInputError;
    }
}
