#include "mmv/market_model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "mmv/errors.hpp"

namespace mmv {

namespace {

constexpr double kTimeSlack = 1e-12;

bool all_finite(const Matrix& a) { return a.allFinite(); }

template <class T>
T lerp_knots(const std::vector<double>& knots, const std::vector<T>& values, double t) {
    if (knots.size() == 1 || t <= knots.front()) return values.front();
    if (t >= knots.back()) return values.back();
    const auto it = std::upper_bound(knots.begin(), knots.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - knots.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - knots[lo]) / (knots[hi] - knots[lo]);
    return ((1.0 - w) * values[lo] + w * values[hi]).eval();
}

}  // namespace

// ---------------------------------------------------------------------------

PiecewiseRate::PiecewiseRate(std::vector<RateSegment> segments) : segments_(std::move(segments)) {
    require(!segments_.empty(), ErrorCode::InvalidModel, "rate needs at least one segment");
    double prev = 0.0;
    for (const auto& s : segments_) {
        require(std::isfinite(s.value) && std::isfinite(s.until), ErrorCode::InvalidModel,
                "rate segments must be finite");
        require(s.until > prev, ErrorCode::InvalidModel, "rate segment ends must be strictly increasing and positive");
        prev = s.until;
    }
}

PiecewiseRate PiecewiseRate::constant(double value, double until) { return PiecewiseRate({{until, value}}); }

double PiecewiseRate::at(double t) const {
    for (const auto& s : segments_) {
        if (t < s.until) return s.value;
    }
    return segments_.back().value;
}

double PiecewiseRate::integral(double t1, double t2) const {
    double total = 0.0;
    double start = 0.0;
    for (std::size_t k = 0; k < segments_.size(); ++k) {
        const bool last = k + 1 == segments_.size();
        const double end = last ? std::max(segments_[k].until, t2) : segments_[k].until;
        const double lo = std::max(start, t1);
        const double hi = std::min(end, t2);
        if (hi > lo) total += segments_[k].value * (hi - lo);
        start = end;
        if (start >= t2) break;
    }
    return total;
}

std::vector<double> PiecewiseRate::breakpoints_between(double t1, double t2) const {
    std::vector<double> out;
    for (std::size_t k = 0; k + 1 < segments_.size(); ++k) {
        const double u = segments_[k].until;
        if (u > t1 && u < t2) out.push_back(u);
    }
    return out;
}

double PiecewiseRate::max_abs() const {
    double out = 0.0;
    for (const auto& s : segments_) out = std::max(out, std::abs(s.value));
    return out;
}

// ---------------------------------------------------------------------------

double FactorDynamics::marginal_mean(double t) const {
    return level + (initial - level) * std::exp(-kappa * t);
}

double FactorDynamics::marginal_stddev(double t) const {
    if (kappa <= 0.0) return vol * std::sqrt(t);
    return vol * std::sqrt((1.0 - std::exp(-2.0 * kappa * t)) / (2.0 * kappa));
}

// ---------------------------------------------------------------------------

CoefficientField CoefficientField::deterministic(std::vector<double> knots, std::vector<Vector> mu,
                                                 std::vector<Matrix> sigma) {
    require(!knots.empty() && knots.size() == mu.size() && knots.size() == sigma.size(),
            ErrorCode::DimensionMismatch, "coefficient knots, mu and sigma must have equal nonzero length");
    require(std::is_sorted(knots.begin(), knots.end()) &&
                std::adjacent_find(knots.begin(), knots.end()) == knots.end(),
            ErrorCode::InvalidModel, "coefficient knots must be strictly increasing");
    CoefficientField out;
    out.kind_ = CoefficientKind::Deterministic;
    out.knots_ = std::move(knots);
    out.mu_knots_ = std::move(mu);
    out.sigma_knots_ = std::move(sigma);
    return out;
}

CoefficientField CoefficientField::constant(Vector mu, Matrix sigma) {
    return deterministic({0.0}, {std::move(mu)}, {std::move(sigma)});
}

CoefficientField CoefficientField::markov_factor(FactorDynamics factor, VectorMap mu, MatrixMap sigma) {
    require(factor.kappa >= 0.0 && factor.vol >= 0.0, ErrorCode::InvalidModel,
            "factor kappa and vol must be nonnegative");
    require(static_cast<bool>(mu) && static_cast<bool>(sigma), ErrorCode::InvalidModel,
            "factor coefficient maps must be set");
    CoefficientField out;
    out.kind_ = CoefficientKind::MarkovFactor;
    out.factor_ = factor;
    out.mu_map_ = std::move(mu);
    out.sigma_map_ = std::move(sigma);
    return out;
}

Vector CoefficientField::mu(double t, std::optional<double> factor) const {
    if (kind_ == CoefficientKind::Deterministic) return lerp_knots(knots_, mu_knots_, t);
    return mu_map_(t, factor.value_or(factor_.initial));
}

Matrix CoefficientField::sigma(double t, std::optional<double> factor) const {
    if (kind_ == CoefficientKind::Deterministic) return lerp_knots(knots_, sigma_knots_, t);
    return sigma_map_(t, factor.value_or(factor_.initial));
}

// ---------------------------------------------------------------------------

Vector MarketPoint::pull_back(const Vector& v) const { return gram.solve(sigma * v); }

// ---------------------------------------------------------------------------

DiscountFactor::DiscountFactor(PiecewiseRate rate, double horizon, std::vector<double> grid)
    : rate_(std::move(rate)), horizon_(horizon), grid_(std::move(grid)) {
    values_.reserve(grid_.size());
    for (double t : grid_) values_.push_back(at(t));
}

double DiscountFactor::at(double t) const {
    require(t >= -kTimeSlack && t <= horizon_ + kTimeSlack, ErrorCode::TimeOutOfRange,
            "discount factor evaluated outside [0, T]");
    return std::exp(rate_.integral(std::clamp(t, 0.0, horizon_), horizon_));
}

// ---------------------------------------------------------------------------

MarketModel MarketModel::build(ModelSpec spec) {
    require(spec.m >= 1 && spec.n >= 1, ErrorCode::DimensionMismatch, "m and n must be positive");
    require(spec.m <= spec.n, ErrorCode::DimensionMismatch, "number of assets m must not exceed Brownian dimension n");
    require(spec.theta > 0.0 && std::isfinite(spec.theta), ErrorCode::NonPositiveTheta, "theta must be > 0");
    require(spec.horizon > 0.0 && std::isfinite(spec.horizon), ErrorCode::InvalidModel, "horizon T must be > 0");
    require(std::isfinite(spec.x0), ErrorCode::InvalidModel, "initial wealth must be finite");
    require(spec.delta > 0.0, ErrorCode::InvalidModel, "ellipticity constant delta must be > 0");
    require(!spec.rate.segments().empty(), ErrorCode::InvalidModel, "rate is not set");
    require(spec.rate.segments().back().until >= spec.horizon - kTimeSlack, ErrorCode::InvalidModel,
            "rate segments must cover [0, T]");
    require(spec.probe_times >= 2 && spec.probe_factors >= 1, ErrorCode::InvalidModel,
            "probe lattice needs >= 2 times and >= 1 factor level");
    if (spec.coefficients.is_markovian()) {
        require(spec.coefficients.factor().driver < spec.n, ErrorCode::DimensionMismatch,
                "factor driver index must be < n");
        require(std::isfinite(spec.coefficients.factor().initial), ErrorCode::InvalidModel,
                "factor initial value must be finite");
    }

    MarketModel model(std::move(spec));
    double growth = 0.0;
    double min_eig = std::numeric_limits<double>::infinity();
    for (const auto& [t, f] : model.probe_lattice()) {
        const Vector mu = model.spec_.coefficients.mu(t, f);
        const Matrix sigma = model.spec_.coefficients.sigma(t, f);
        if (mu.size() != static_cast<Eigen::Index>(model.m()) || sigma.rows() != static_cast<Eigen::Index>(model.m()) ||
            sigma.cols() != static_cast<Eigen::Index>(model.n())) {
            std::ostringstream msg;
            msg << "coefficients at t=" << t << " have shapes mu " << mu.size() << ", sigma " << sigma.rows() << "x"
                << sigma.cols() << "; expected " << model.m() << " and " << model.m() << "x" << model.n();
            throw Error(ErrorCode::DimensionMismatch, msg.str());
        }
        require(all_finite(mu) && all_finite(sigma), ErrorCode::InvalidModel, "coefficients must be finite");
        const Matrix gram = sigma * sigma.transpose();
        const double eig = Eigen::SelfAdjointEigenSolver<Matrix>(gram, Eigen::EigenvaluesOnly).eigenvalues()(0);
        min_eig = std::min(min_eig, eig);
        if (eig < model.spec_.delta) {
            std::ostringstream msg;
            msg << "min eigenvalue of sigma sigma' is " << eig << " < delta=" << model.spec_.delta << " at t=" << t;
            if (f) msg << ", factor=" << *f;
            throw Error(ErrorCode::DegenerateVolatility, msg.str());
        }
        const Vector phi = sigma.transpose() * gram.llt().solve(mu);
        growth = std::max(growth, 2.0 * std::abs(model.spec_.rate.at(t)) + phi.squaredNorm());
    }
    model.growth_bound_ = growth;
    model.min_gram_eigenvalue_ = min_eig;
    return model;
}

std::optional<double> MarketModel::initial_factor() const {
    if (!is_markovian()) return std::nullopt;
    return spec_.coefficients.factor().initial;
}

void MarketModel::check_time(double t) const {
    require(t >= -kTimeSlack && t <= spec_.horizon + kTimeSlack, ErrorCode::TimeOutOfRange,
            "time outside [0, T]");
}

MarketPoint MarketModel::at(double t, std::optional<double> factor) const {
    check_time(t);
    MarketPoint p;
    p.mu = spec_.coefficients.mu(t, factor);
    p.sigma = spec_.coefficients.sigma(t, factor);
    p.gram.compute(p.sigma * p.sigma.transpose());
    require(p.gram.info() == Eigen::Success, ErrorCode::SingularGram, "sigma sigma' is not positive definite");
    p.phi = p.sigma.transpose() * p.gram.solve(p.mu);
    p.rate = spec_.rate.at(t);
    return p;
}

Vector MarketModel::pricing_kernel(double t, std::optional<double> factor) const { return at(t, factor).phi; }

double MarketModel::discount_h(double t) const {
    check_time(t);
    return std::exp(spec_.rate.integral(std::clamp(t, 0.0, spec_.horizon), spec_.horizon));
}

DiscountFactor MarketModel::discount_factor(std::vector<double> grid) const {
    return DiscountFactor(spec_.rate, spec_.horizon, std::move(grid));
}

std::vector<std::pair<double, std::optional<double>>> MarketModel::probe_lattice() const {
    std::vector<std::pair<double, std::optional<double>>> out;
    const std::size_t nt = spec_.probe_times;
    const boost::math::normal standard;
    for (std::size_t i = 0; i < nt; ++i) {
        const double t = spec_.horizon * static_cast<double>(i) / static_cast<double>(nt - 1);
        if (!is_markovian()) {
            out.emplace_back(t, std::nullopt);
            continue;
        }
        const auto& fd = spec_.coefficients.factor();
        const double mean = fd.marginal_mean(t);
        const double sd = fd.marginal_stddev(t);
        const std::size_t nf = spec_.probe_factors;
        for (std::size_t j = 0; j < nf; ++j) {
            const double p = (static_cast<double>(j) + 0.5) / static_cast<double>(nf);
            out.emplace_back(t, mean + sd * boost::math::quantile(standard, p));
        }
    }
    // deterministic knots are where interpolated coefficients bend
    if (!is_markovian()) {
        for (double k : spec_.coefficients.knots()) {
            if (k > 0.0 && k < spec_.horizon) out.emplace_back(k, std::nullopt);
        }
    }
    return out;
}

}  // namespace mmv
