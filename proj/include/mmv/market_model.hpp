#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "mmv/linalg.hpp"

namespace mmv {

/// Deterministic short rate, constant on each segment (previous until, until].
struct RateSegment {
    double until;
    double value;
};

class PiecewiseRate {
public:
    PiecewiseRate() = default;
    explicit PiecewiseRate(std::vector<RateSegment> segments);
    static PiecewiseRate constant(double value, double until);

    double at(double t) const;
    /// Exact integral of r over [t1, t2], t1 <= t2.
    double integral(double t1, double t2) const;
    /// Segment ends strictly inside (t1, t2).
    std::vector<double> breakpoints_between(double t1, double t2) const;
    double max_abs() const;
    const std::vector<RateSegment>& segments() const { return segments_; }

private:
    std::vector<RateSegment> segments_;
};

/// Ornstein-Uhlenbeck factor dF = kappa (level - F) dt + vol dW_driver.
struct FactorDynamics {
    double kappa = 0.0;
    double level = 0.0;
    double vol = 0.0;
    std::size_t driver = 0;
    double initial = 0.0;

    /// Mean and standard deviation of the exact marginal of F_t.
    double marginal_mean(double t) const;
    double marginal_stddev(double t) const;
};

using VectorMap = std::function<Vector(double t, double factor)>;
using MatrixMap = std::function<Matrix(double t, double factor)>;

enum class CoefficientKind { Deterministic, MarkovFactor };

/// Excess return mu and volatility sigma as functions of time (and factor).
class CoefficientField {
public:
    /// Linear interpolation between knots, constant extrapolation.
    static CoefficientField deterministic(std::vector<double> knots, std::vector<Vector> mu,
                                          std::vector<Matrix> sigma);
    static CoefficientField constant(Vector mu, Matrix sigma);
    static CoefficientField markov_factor(FactorDynamics factor, VectorMap mu, MatrixMap sigma);

    CoefficientKind kind() const { return kind_; }
    bool is_markovian() const { return kind_ == CoefficientKind::MarkovFactor; }
    const FactorDynamics& factor() const { return factor_; }
    const std::vector<double>& knots() const { return knots_; }

    Vector mu(double t, std::optional<double> factor) const;
    Matrix sigma(double t, std::optional<double> factor) const;

private:
    CoefficientKind kind_ = CoefficientKind::Deterministic;
    std::vector<double> knots_;
    std::vector<Vector> mu_knots_;
    std::vector<Matrix> sigma_knots_;
    FactorDynamics factor_;
    VectorMap mu_map_;
    MatrixMap sigma_map_;
};

/// Coefficients frozen at one (t, factor) point together with the derived
/// quantities every driver needs.
struct MarketPoint {
    Matrix sigma;                 // m x n
    Vector mu;                    // m
    Vector phi;                   // n, sigma' (sigma sigma')^{-1} mu
    Eigen::LLT<Matrix> gram;      // factorization of sigma sigma'
    double rate = 0.0;

    /// (sigma sigma')^{-1} sigma v
    Vector pull_back(const Vector& v) const;
};

struct ModelSpec {
    std::size_t m = 1;
    std::size_t n = 1;
    double horizon = 1.0;
    double x0 = 1.0;
    double theta = 1.0;
    double delta = 1e-8;
    PiecewiseRate rate;
    CoefficientField coefficients;
    std::size_t probe_times = 101;
    std::size_t probe_factors = 21;
};

/// h_t = exp(int_t^T r_s ds), exact for piecewise-constant r.
class DiscountFactor {
public:
    DiscountFactor(PiecewiseRate rate, double horizon, std::vector<double> grid);

    double at(double t) const;
    const std::vector<double>& grid() const { return grid_; }
    const std::vector<double>& values() const { return values_; }

private:
    PiecewiseRate rate_;
    double horizon_;
    std::vector<double> grid_;
    std::vector<double> values_;
};

class MarketModel {
public:
    /// Validates the spec; throws DimensionMismatch, DegenerateVolatility,
    /// NonPositiveTheta or InvalidModel.
    static MarketModel build(ModelSpec spec);

    std::size_t m() const { return spec_.m; }
    std::size_t n() const { return spec_.n; }
    double horizon() const { return spec_.horizon; }
    double x0() const { return spec_.x0; }
    double theta() const { return spec_.theta; }
    double delta() const { return spec_.delta; }
    const PiecewiseRate& rate() const { return spec_.rate; }
    const CoefficientField& coefficients() const { return spec_.coefficients; }
    bool is_markovian() const { return spec_.coefficients.is_markovian(); }
    const ModelSpec& spec() const { return spec_; }

    /// Initial factor value, or nullopt for deterministic coefficients.
    std::optional<double> initial_factor() const;

    MarketPoint at(double t, std::optional<double> factor) const;
    Vector pricing_kernel(double t, std::optional<double> factor) const;
    double discount_h(double t) const;
    DiscountFactor discount_factor(std::vector<double> grid) const;

    /// max over the probe lattice of |2r| + |phi|^2; drives the positivity
    /// envelope exp(-C T) <= solution <= exp(C T).
    double growth_bound() const { return growth_bound_; }
    double min_gram_eigenvalue() const { return min_gram_eigenvalue_; }

    /// Probe lattice used by validation: (t, factor) pairs.
    std::vector<std::pair<double, std::optional<double>>> probe_lattice() const;

private:
    explicit MarketModel(ModelSpec spec) : spec_(std::move(spec)) {}
    void check_time(double t) const;

    ModelSpec spec_;
    double growth_bound_ = 0.0;
    double min_gram_eigenvalue_ = 0.0;
};

}  // namespace mmv
