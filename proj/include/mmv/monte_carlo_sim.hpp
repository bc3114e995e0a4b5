#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmv/bsde_engine.hpp"
#include "mmv/errors.hpp"
#include "mmv/linalg.hpp"
#include "mmv/market_model.hpp"
#include "mmv/strategy_dual.hpp"

namespace mmv {

/// Portfolio rule for the simulator: no investment, or a scaled feedback strategy.
class Policy {
public:
    static Policy zero(std::string label = "0");
    static Policy feedback(FeedbackStrategy strategy, double scale = 1.0, std::string label = "");

    bool is_zero() const { return !strategy_.has_value() || scale_ == 0.0; }
    const std::optional<FeedbackStrategy>& strategy() const { return strategy_; }
    double scale() const { return scale_; }
    const std::string& label() const { return label_; }

private:
    std::optional<FeedbackStrategy> strategy_;
    double scale_ = 0.0;
    std::string label_;
};

enum class AdversaryKind { Zero, ScaledMinusPhi, ConstantVector, Saddle };

/// Bounded parametric density generator eta.
class Adversary {
public:
    static constexpr double kDefaultBound = 10.0;

    static Adversary zero(std::string label = "0");
    /// eta = -c phi(t, F).
    static Adversary scaled_minus_phi(double c, double bound = kDefaultBound, std::string label = "");
    static Adversary constant(Vector v, double bound = kDefaultBound, std::string label = "");
    static Adversary saddle(AdversaryMap map, double bound = kDefaultBound, std::string label = "eta_hat");

    AdversaryKind kind() const { return kind_; }
    double bound() const { return bound_; }
    const std::string& label() const { return label_; }

    /// Throws UnboundedAdversary if |eta| exceeds the declared bound.
    Vector at(double t, const MarketPoint& point, std::optional<double> factor) const;

private:
    AdversaryKind kind_ = AdversaryKind::Zero;
    double c_ = 0.0;
    Vector v_;
    std::optional<AdversaryMap> map_;
    double bound_ = kDefaultBound;
    std::string label_;
};

struct SimConfig {
    std::size_t paths = 10000;
    std::size_t steps = 100;
    std::uint64_t seed = 0;
    /// Brownian increments of each step are sums of this many finer
    /// increments, so runs with steps * substeps fixed share Brownian paths.
    std::size_t substeps = 1;
    bool antithetic = false;
    bool store_paths = false;
    std::string stream = "sim";

    void validate() const;
};

struct Trajectories {
    std::vector<double> times;     // steps+1
    std::vector<double> wealth;    // paths x (steps+1), path-major
    std::vector<double> density;   // paths x (steps+1)
    std::vector<double> factor;    // empty for deterministic models

    double x(std::size_t path, std::size_t k) const { return wealth[path * times.size() + k]; }
    double lambda(std::size_t path, std::size_t k) const { return density[path * times.size() + k]; }
};

struct SimBatchResult {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::uint64_t seed = 0;
    bool antithetic = false;
    bool zero_adversary = true;
    double theta = 1.0;
    std::vector<double> terminal_x;
    std::vector<double> terminal_lambda;
    /// MMV objective E[Lambda_T (X_T + (Lambda_T - 1)/(2 theta))].
    double objective_mean = 0.0;
    double objective_stderr = 0.0;
    double lambda_mean = 0.0;
    double lambda_stderr = 0.0;
    double mean_x = 0.0;
    std::optional<double> conservation_max_residual;
    std::optional<Trajectories> path_store;

    void write_json(const std::string& path) const;
    /// Columns t, path_id, X, Lambda, R with R = h X + (Lambda Y - 1)/(2 theta);
    /// Y is taken as 1 when no solution is given, which is exact at T.
    void write_trajectories_csv(const std::string& path, const MarketModel& model,
                                const BsdeSolution* y_sol = nullptr) const;
};

/// Euler-Maruyama under the physical measure; discounted wealth h_t X_t is
/// advanced so the riskless part is exact, Lambda in log space.
SimBatchResult simulate(const MarketModel& model, const Policy& policy, const Adversary& adversary,
                        const SimConfig& cfg);

/// max over paths and grid times of |theta h_t X_t + Y_t Lambda_t - (theta h0 x + Y0)|.
double conservation_residual(const SimBatchResult& batch, const MarketModel& model, const BsdeSolution& y_sol);

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// E[X_T] - (theta/2) Var[X_T] with delta-method standard error.
Estimate mv_objective(const SimBatchResult& batch, double theta);

struct SaddleCell {
    std::size_t pi = 0;
    std::size_t eta = 0;
    double mean = 0.0;
    double std_error = 0.0;
};

struct SaddleReport {
    std::vector<std::string> pi_labels;
    std::vector<std::string> eta_labels;
    std::vector<SaddleCell> cells;  // row-major, pi outer
    std::size_t saddle_pi = 0;
    std::size_t saddle_eta = 0;
    double r0 = 0.0;
    double tolerance_sigmas = 3.0;
    std::vector<std::string> violations;
    bool upper_ok = true;   // fixing eta_hat, no pi beats R0
    bool lower_ok = true;   // fixing pi_hat, no eta dips below R0
    bool saddle_ok = true;  // the saddle cell hits R0

    const SaddleCell& cell(std::size_t pi, std::size_t eta) const { return cells[pi * eta_labels.size() + eta]; }
    bool passed() const { return upper_ok && lower_ok && saddle_ok; }
    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

class SaddleViolation : public Error {
public:
    SaddleViolation(const std::string& what, SaddleReport report)
        : Error(ErrorCode::SaddleViolated, what), report_(std::move(report)) {}
    const SaddleReport& report() const noexcept { return report_; }

private:
    SaddleReport report_;
};

struct SaddleScanConfig {
    SimConfig sim;
    std::size_t saddle_pi = 0;
    std::size_t saddle_eta = 0;
    double tolerance_sigmas = 3.0;
};

/// Objective matrix over pi_family x eta_family with common random numbers.
/// Throws SaddleViolation when an inequality fails beyond the tolerance.
SaddleReport saddle_scan(const MarketModel& model, const BsdeSolution& y_sol, const std::vector<Policy>& pi_family,
                         const std::vector<Adversary>& eta_family, const SaddleScanConfig& cfg);

}  // namespace mmv
