#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mmv/bsde_engine.hpp"
#include "mmv/model_io.hpp"

namespace mmv {

/// Command-line overrides applied on top of a config document.
struct RunOverrides {
    std::optional<std::string> experiment;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
};

/// Fully resolved experiment: defaults merged, overrides applied, validated.
struct ExperimentConfig {
    nlohmann::json resolved;
    ModelConfig model;
    std::string experiment;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    bool markovian = false;
};

namespace exit_status {
inline constexpr int kOk = 0;
inline constexpr int kInputError = 1;
inline constexpr int kAssertionFailed = 2;
}  // namespace exit_status

struct RunResult {
    int exit_code = exit_status::kOk;
    std::string manifest_path;
    nlohmann::json results;
    std::string message;
};

const char* version_string();

/// Defaults for every section; a user config is merged onto this.
nlohmann::json default_config();

/// Throws ConfigInvalid naming the offending field.
ExperimentConfig resolve_config(const nlohmann::json& user, const RunOverrides& overrides = {});

/// Solves one equation with the configured solver route.
BsdeSolution solve_configured(const ExperimentConfig& cfg, const MarketModel& model, Equation eq);

/// mmv_value and the MV dual value from independent solves:
/// {mmv, mv, abs_diff, combined_stderr}.
nlohmann::json compare_values(const ExperimentConfig& cfg);

/// Dispatches the named experiment and writes artifacts plus manifest.json.
/// Module errors propagate; SaddleViolated and failed checks set exit 2.
RunResult run(const ExperimentConfig& cfg);

}  // namespace mmv
