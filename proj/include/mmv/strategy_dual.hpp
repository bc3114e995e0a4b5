#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mmv/bsde_engine.hpp"
#include "mmv/cone_geometry.hpp"
#include "mmv/linalg.hpp"
#include "mmv/market_model.hpp"

namespace mmv {

enum class StrategyKind { MMV, MV };

/// Feedback map pi(t, X) = (X - pivot)^+ slope_above + (X - pivot)^- slope_below.
struct FeedbackCoefficients {
    double pivot = 0.0;
    Vector slope_above;  // m
    Vector slope_below;  // m
};

class FeedbackStrategy {
public:
    StrategyKind kind() const { return kind_; }
    const MarketModel& model() const { return model_; }
    const Cone& cone() const { return cone_; }

    /// a = h0 x + Y0 / theta (MMV only).
    std::optional<double> a_const() const { return a_; }
    /// gamma_hat = x h0 + h0^2 / (theta P2_0) (MV only).
    std::optional<double> gamma_hat() const { return gamma_hat_; }

    FeedbackCoefficients coefficients(double t, std::optional<double> factor = std::nullopt) const;
    Vector portfolio(double t, double wealth, std::optional<double> factor = std::nullopt) const;

    /// MMV: xi = Proj_{sigma' Gamma}(Y phi - Z). MV: xi_1 and xi_2 in R^m.
    Vector xi(double t, std::optional<double> factor = std::nullopt) const;
    Vector xi1(double t, std::optional<double> factor = std::nullopt) const;
    Vector xi2(double t, std::optional<double> factor = std::nullopt) const;

    /// One-sided optimal MV form -(X - gamma_hat/h_t) xi_2.
    Vector optimal_one_sided(double t, double wealth, std::optional<double> factor = std::nullopt) const;

    /// Solutions the strategy was built from: {Y} for MMV, {P1, P2} for MV.
    const std::vector<BsdeSolution>& solutions() const { return solutions_; }

    std::size_t replicate_count() const;
    FeedbackStrategy replicate(std::size_t b) const;

private:
    friend FeedbackStrategy mmv_feedback(const MarketModel&, const Cone&, const BsdeSolution&);
    friend FeedbackStrategy mv_feedback(const MarketModel&, const Cone&, const BsdeSolution&, const BsdeSolution&);

    FeedbackStrategy(StrategyKind kind, MarketModel model, Cone cone, std::vector<BsdeSolution> sols)
        : kind_(kind), model_(std::move(model)), cone_(std::move(cone)), solutions_(std::move(sols)) {}

    StrategyKind kind_;
    MarketModel model_;
    Cone cone_;
    std::vector<BsdeSolution> solutions_;
    std::optional<double> a_;
    std::optional<double> gamma_hat_;
};

FeedbackStrategy mmv_feedback(const MarketModel& model, const Cone& cone, const BsdeSolution& y_sol);
FeedbackStrategy mv_feedback(const MarketModel& model, const Cone& cone, const BsdeSolution& p1_sol,
                             const BsdeSolution& p2_sol);

/// eta_hat = -(Z + xi) / Y.
class AdversaryMap {
public:
    AdversaryMap(MarketModel model, Cone cone, BsdeSolution y_sol);
    Vector operator()(double t, std::optional<double> factor = std::nullopt) const;
    const BsdeSolution& solution() const { return y_sol_; }

private:
    MarketModel model_;
    Cone cone_;
    BsdeSolution y_sol_;
};

AdversaryMap mmv_adversary(const BsdeSolution& y_sol, const Cone& cone, const MarketModel& model);

/// x h0 + (Y0 - 1) / (2 theta).
double mmv_value(const MarketModel& model, const BsdeSolution& y_sol);

// ---------------------------------------------------------------------------

/// Real number or one of the two infinities.
class ExtendedReal {
public:
    enum class Kind { Finite, PlusInfinity, MinusInfinity };

    static ExtendedReal finite(double v) { return ExtendedReal(Kind::Finite, v); }
    static ExtendedReal plus_infinity() { return ExtendedReal(Kind::PlusInfinity, 0.0); }
    static ExtendedReal minus_infinity() { return ExtendedReal(Kind::MinusInfinity, 0.0); }

    Kind kind() const { return kind_; }
    bool is_finite() const { return kind_ == Kind::Finite; }
    /// Throws InvalidBound on an infinite value.
    double value() const;
    /// Total order with -inf < finite < +inf.
    bool operator<(const ExtendedReal& other) const;
    bool operator==(const ExtendedReal& other) const;
    std::string to_string() const;

private:
    ExtendedReal(Kind k, double v) : kind_(k), value_(v) {}
    Kind kind_;
    double value_;
};

class DualCurve {
public:
    /// Requires 0 < p_i0 <= h0^2 (slack 1e-10) and theta > 0.
    static DualCurve build(double p1_0, double p2_0, double h0, double x, double theta);

    static constexpr double kBoundSlack = 1e-10;

    double p1_0() const { return p1_0_; }
    double p2_0() const { return p2_0_; }
    double h0() const { return h0_; }
    double x() const { return x_; }
    double theta() const { return theta_; }
    bool p1_at_bound() const { return p1_bound_; }
    bool p2_at_bound() const { return p2_bound_; }

    double j1(double k, double gamma) const;
    double j2(double k, double gamma) const;
    double j(double k, double gamma) const;
    /// Leading coefficients p_i0/h0^2 - 1 of J1, J2 in gamma.
    double j1_leading() const;
    double j2_leading() const;

    ExtendedReal sup_j1(double k) const;
    ExtendedReal sup_j2(double k) const;
    ExtendedReal f(double k) const;
    ExtendedReal gamma_hat(double k) const;
    /// K - (theta/2) F(K).
    ExtendedReal objective(double k) const;

    double k_hat() const;
    double mv_value() const;
    /// x h0 + h0^2 / (theta p2_0).
    double gamma_hat_optimal() const;

private:
    DualCurve() = default;
    double p1_0_ = 0, p2_0_ = 0, h0_ = 0, x_ = 0, theta_ = 0;
    bool p1_bound_ = false, p2_bound_ = false;
};

DualCurve dual_curve(double p1_0, double p2_0, double h0, double x, double theta);

// ---------------------------------------------------------------------------

struct ProbeGrid {
    std::vector<double> times;
    std::vector<double> wealth;
    /// Factor levels for Markovian strategies; ignored otherwise.
    std::vector<double> factors;

    /// n_t x n_x lattice over [t0, t1] x [x0, x1].
    static ProbeGrid lattice(double t0, double t1, std::size_t nt, double x0, double x1, std::size_t nx);
};

struct EquivalenceRow {
    double t = 0.0;
    double wealth = 0.0;
    std::optional<double> factor;
    Vector pi_mmv;
    Vector pi_mv;
    double gap = 0.0;
    double gap_stderr = 0.0;  // combined bootstrap stderr of the gap, 0 if none
    bool on_manifold = false;
};

struct EquivalenceReport {
    double value_mmv = 0.0;
    double value_mv = 0.0;
    double value_gap = 0.0;
    double value_stderr = 0.0;
    double gamma_hat = 0.0;
    double a_const = 0.0;
    double k_hat = 0.0;
    /// Largest portfolio gap over probes with h_t X <= min(a, gamma_hat).
    double max_gap = 0.0;
    /// Largest gap over the remaining probes; reported only.
    double max_gap_off_manifold = 0.0;
    /// Largest gap / stderr over on-manifold probes with stderr > 0.
    double max_gap_ratio = 0.0;
    std::size_t bootstrap_replicates = 0;
    std::vector<EquivalenceRow> rows;

    void write_csv(const std::string& path) const;
    void write_json(const std::string& path) const;
};

EquivalenceReport equivalence_check(const FeedbackStrategy& mmv, const FeedbackStrategy& mv, const ProbeGrid& grid);

}  // namespace mmv
