#include "mmv/strategy_dual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmv/errors.hpp"

namespace mmv {

namespace {

void require_positive_solution(const BsdeSolution& sol, const char* what) {
    require(sol.bounds().lower > 0.0, ErrorCode::PositivityLost, std::string(what) + " is not uniformly positive");
    require(sol.initial_value() > 0.0, ErrorCode::PositivityLost, std::string(what) + " has a non-positive initial value");
}

double positive_part(double v) { return v > 0.0 ? v : 0.0; }
double negative_part(double v) { return v < 0.0 ? -v : 0.0; }

}  // namespace

// ---------------------------------------------------------------------------
// Feedback strategies

FeedbackStrategy mmv_feedback(const MarketModel& model, const Cone& cone, const BsdeSolution& y_sol) {
    require(y_sol.equation() == Equation::Y, ErrorCode::InvalidModel, "mmv_feedback needs a Y solution");
    require(cone.dim() == model.m(), ErrorCode::DimensionMismatch, "cone dimension must equal m");
    require_positive_solution(y_sol, "Y");
    FeedbackStrategy s(StrategyKind::MMV, model, cone, {y_sol});
    s.a_ = model.discount_h(0.0) * model.x0() + y_sol.initial_value() / model.theta();
    return s;
}

FeedbackStrategy mv_feedback(const MarketModel& model, const Cone& cone, const BsdeSolution& p1_sol,
                             const BsdeSolution& p2_sol) {
    require(p1_sol.equation() == Equation::P1 && p2_sol.equation() == Equation::P2, ErrorCode::InvalidModel,
            "mv_feedback needs P1 and P2 solutions");
    require(cone.dim() == model.m(), ErrorCode::DimensionMismatch, "cone dimension must equal m");
    require_positive_solution(p1_sol, "P1");
    require_positive_solution(p2_sol, "P2");
    const DualCurve curve = dual_curve(p1_sol.initial_value(), p2_sol.initial_value(), model.discount_h(0.0),
                                       model.x0(), model.theta());
    FeedbackStrategy s(StrategyKind::MV, model, cone, {p1_sol, p2_sol});
    s.gamma_hat_ = curve.gamma_hat_optimal();
    return s;
}

Vector FeedbackStrategy::xi(double t, std::optional<double> factor) const {
    require(kind_ == StrategyKind::MMV, ErrorCode::InvalidModel, "xi is defined for the MMV strategy");
    const MarketPoint point = model_.at(t, factor);
    const auto [y, z] = solutions_[0].evaluate(t, factor);
    require(y > 0.0, ErrorCode::PositivityLost, "Y is not positive");
    return project_transformed(cone_, point.sigma, y * point.phi - z).xi;
}

Vector FeedbackStrategy::xi1(double t, std::optional<double> factor) const {
    require(kind_ == StrategyKind::MV, ErrorCode::InvalidModel, "xi1 is defined for the MV strategy");
    const MarketPoint point = model_.at(t, factor);
    const auto [p, d] = solutions_[0].evaluate(t, factor);
    require(p > 0.0, ErrorCode::PositivityLost, "P1 is not positive");
    return point.pull_back(project_transformed(cone_, point.sigma, p_driver_argument(Equation::P1, point.phi, p, d)).xi);
}

Vector FeedbackStrategy::xi2(double t, std::optional<double> factor) const {
    require(kind_ == StrategyKind::MV, ErrorCode::InvalidModel, "xi2 is defined for the MV strategy");
    const MarketPoint point = model_.at(t, factor);
    const auto [p, d] = solutions_[1].evaluate(t, factor);
    require(p > 0.0, ErrorCode::PositivityLost, "P2 is not positive");
    return point.pull_back(project_transformed(cone_, point.sigma, p_driver_argument(Equation::P2, point.phi, p, d)).xi);
}

FeedbackCoefficients FeedbackStrategy::coefficients(double t, std::optional<double> factor) const {
    FeedbackCoefficients c;
    const double h = model_.discount_h(t);
    if (kind_ == StrategyKind::MMV) {
        // ((a - h X)/(h Y)) (sigma sigma')^{-1} sigma xi
        const MarketPoint point = model_.at(t, factor);
        const auto [y, z] = solutions_[0].evaluate(t, factor);
        require(y > 0.0, ErrorCode::PositivityLost, "Y is not positive");
        const Vector dir = point.pull_back(project_transformed(cone_, point.sigma, y * point.phi - z).xi) / y;
        c.pivot = *a_ / h;
        c.slope_below = dir;
        c.slope_above = -dir;
        return c;
    }
    c.pivot = *gamma_hat_ / h;
    c.slope_above = xi1(t, factor);
    c.slope_below = xi2(t, factor);
    return c;
}

Vector FeedbackStrategy::portfolio(double t, double wealth, std::optional<double> factor) const {
    const FeedbackCoefficients c = coefficients(t, factor);
    const double gap = wealth - c.pivot;
    return positive_part(gap) * c.slope_above + negative_part(gap) * c.slope_below;
}

Vector FeedbackStrategy::optimal_one_sided(double t, double wealth, std::optional<double> factor) const {
    require(kind_ == StrategyKind::MV, ErrorCode::InvalidModel, "one-sided form is defined for the MV strategy");
    return -(wealth - *gamma_hat_ / model_.discount_h(t)) * xi2(t, factor);
}

std::size_t FeedbackStrategy::replicate_count() const {
    std::size_t b = std::numeric_limits<std::size_t>::max();
    for (const auto& s : solutions_) b = std::min(b, s.replicate_count());
    return b;
}

FeedbackStrategy FeedbackStrategy::replicate(std::size_t b) const {
    if (kind_ == StrategyKind::MMV) return mmv_feedback(model_, cone_, solutions_[0].replicate(b));
    return mv_feedback(model_, cone_, solutions_[0].replicate(b), solutions_[1].replicate(b));
}

AdversaryMap::AdversaryMap(MarketModel model, Cone cone, BsdeSolution y_sol)
    : model_(std::move(model)), cone_(std::move(cone)), y_sol_(std::move(y_sol)) {}

Vector AdversaryMap::operator()(double t, std::optional<double> factor) const {
    const MarketPoint point = model_.at(t, factor);
    const auto [y, z] = y_sol_.evaluate(t, factor);
    require(y > 0.0, ErrorCode::PositivityLost, "Y is not positive");
    const Vector xi = project_transformed(cone_, point.sigma, y * point.phi - z).xi;
    return -(z + xi) / y;
}

AdversaryMap mmv_adversary(const BsdeSolution& y_sol, const Cone& cone, const MarketModel& model) {
    require(y_sol.equation() == Equation::Y, ErrorCode::InvalidModel, "mmv_adversary needs a Y solution");
    require_positive_solution(y_sol, "Y");
    return AdversaryMap(model, cone, y_sol);
}

double mmv_value(const MarketModel& model, const BsdeSolution& y_sol) {
    require(y_sol.equation() == Equation::Y, ErrorCode::InvalidModel, "mmv_value needs a Y solution");
    require_positive_solution(y_sol, "Y");
    return model.x0() * model.discount_h(0.0) + (y_sol.initial_value() - 1.0) / (2.0 * model.theta());
}

// ---------------------------------------------------------------------------
// Extended reals

double ExtendedReal::value() const {
    require(is_finite(), ErrorCode::InvalidBound, "value() of an infinite extended real");
    return value_;
}

bool ExtendedReal::operator<(const ExtendedReal& o) const {
    auto rank = [](Kind k) { return k == Kind::MinusInfinity ? 0 : k == Kind::Finite ? 1 : 2; };
    if (kind_ != o.kind_) return rank(kind_) < rank(o.kind_);
    return kind_ == Kind::Finite && value_ < o.value_;
}

bool ExtendedReal::operator==(const ExtendedReal& o) const {
    return kind_ == o.kind_ && (kind_ != Kind::Finite || value_ == o.value_);
}

std::string ExtendedReal::to_string() const {
    if (kind_ == Kind::PlusInfinity) return "+inf";
    if (kind_ == Kind::MinusInfinity) return "-inf";
    std::ostringstream s;
    s << std::setprecision(17) << value_;
    return s.str();
}

// ---------------------------------------------------------------------------
// Dual curve

DualCurve DualCurve::build(double p1_0, double p2_0, double h0, double x, double theta) {
    require(theta > 0.0, ErrorCode::NonPositiveTheta, "theta must be > 0");
    require(h0 > 0.0 && std::isfinite(h0) && std::isfinite(x), ErrorCode::InvalidBound, "h0 must be positive and x finite");
    const double bound = h0 * h0;
    auto check = [&](double p, const char* name) {
        require(p > 0.0 && std::isfinite(p), ErrorCode::InvalidBound, std::string(name) + " must be positive");
        if (p > bound + kBoundSlack) {
            std::ostringstream msg;
            msg << std::setprecision(12) << name << " = " << p << " exceeds h0^2 = " << bound;
            throw Error(ErrorCode::InvalidBound, msg.str());
        }
        return std::abs(p - bound) <= kBoundSlack;
    };
    DualCurve c;
    c.p1_0_ = p1_0;
    c.p2_0_ = p2_0;
    c.h0_ = h0;
    c.x_ = x;
    c.theta_ = theta;
    c.p1_bound_ = check(p1_0, "P1_0");
    c.p2_bound_ = check(p2_0, "P2_0");
    return c;
}

DualCurve dual_curve(double p1_0, double p2_0, double h0, double x, double theta) {
    return DualCurve::build(p1_0, p2_0, h0, x, theta);
}

namespace {

double quadratic_j(double p, double h0, double x, double k, double g) {
    return (p / (h0 * h0) - 1.0) * g * g - 2.0 * (x * p / h0 - k) * g + p * x * x - k * k;
}

}  // namespace

double DualCurve::j1(double k, double g) const { return quadratic_j(p1_0_, h0_, x_, k, g); }
double DualCurve::j2(double k, double g) const { return quadratic_j(p2_0_, h0_, x_, k, g); }
double DualCurve::j(double k, double g) const { return g < x_ * h0_ ? j1(k, g) : j2(k, g); }
double DualCurve::j1_leading() const { return p1_0_ / (h0_ * h0_) - 1.0; }
double DualCurve::j2_leading() const { return p2_0_ / (h0_ * h0_) - 1.0; }

ExtendedReal DualCurve::sup_j1(double k) const {
    const double k0 = x_ * h0_;
    const double d = k - k0;
    if (k == k0) return ExtendedReal::finite(0.0);
    if (k > k0) return ExtendedReal::finite(-d * d);
    if (p1_bound_) return ExtendedReal::plus_infinity();
    return ExtendedReal::finite(p1_0_ * d * d / (h0_ * h0_ - p1_0_));
}

ExtendedReal DualCurve::sup_j2(double k) const {
    const double k0 = x_ * h0_;
    const double d = k - k0;
    if (k == k0) return ExtendedReal::finite(0.0);
    if (k < k0) return ExtendedReal::finite(-d * d);
    if (p2_bound_) return ExtendedReal::plus_infinity();
    return ExtendedReal::finite(p2_0_ * d * d / (h0_ * h0_ - p2_0_));
}

ExtendedReal DualCurve::f(double k) const {
    const ExtendedReal a = sup_j1(k);
    const ExtendedReal b = sup_j2(k);
    return a < b ? b : a;
}

ExtendedReal DualCurve::gamma_hat(double k) const {
    const double k0 = x_ * h0_;
    const double h2 = h0_ * h0_;
    if (k == k0) return ExtendedReal::finite(k0);
    if (k > k0) {
        if (p2_bound_) return ExtendedReal::plus_infinity();
        return ExtendedReal::finite((h2 * k - x_ * p2_0_ * h0_) / (h2 - p2_0_));
    }
    if (p1_bound_) return ExtendedReal::minus_infinity();
    return ExtendedReal::finite((h2 * k - x_ * p1_0_ * h0_) / (h2 - p1_0_));
}

ExtendedReal DualCurve::objective(double k) const {
    const ExtendedReal fk = f(k);
    if (!fk.is_finite()) return ExtendedReal::minus_infinity();
    return ExtendedReal::finite(k - 0.5 * theta_ * fk.value());
}

double DualCurve::k_hat() const {
    if (p2_bound_) return x_ * h0_;
    return x_ * h0_ + (h0_ * h0_ / p2_0_ - 1.0) / theta_;
}

double DualCurve::mv_value() const {
    if (p2_bound_) return x_ * h0_;
    return x_ * h0_ + (h0_ * h0_ / p2_0_ - 1.0) / (2.0 * theta_);
}

double DualCurve::gamma_hat_optimal() const { return x_ * h0_ + h0_ * h0_ / (theta_ * p2_0_); }

// ---------------------------------------------------------------------------
// Equivalence

ProbeGrid ProbeGrid::lattice(double t0, double t1, std::size_t nt, double x0, double x1, std::size_t nx) {
    require(nt >= 2 && nx >= 2, ErrorCode::ConfigInvalid, "probe lattice needs at least 2 points per axis");
    ProbeGrid g;
    for (std::size_t i = 0; i < nt; ++i) g.times.push_back(t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(nt - 1));
    for (std::size_t j = 0; j < nx; ++j) g.wealth.push_back(x0 + (x1 - x0) * static_cast<double>(j) / static_cast<double>(nx - 1));
    g.times.back() = t1;
    g.wealth.back() = x1;
    return g;
}

namespace {

// Per-component bootstrap variance of a strategy's portfolio at one probe.
Vector replicate_variance(const std::vector<FeedbackStrategy>& reps, double t, double x, std::optional<double> f,
                          const Vector& like) {
    Vector var = Vector::Zero(like.size());
    if (reps.size() < 2) return var;
    Vector mean = Vector::Zero(like.size());
    std::vector<Vector> values;
    values.reserve(reps.size());
    for (const auto& r : reps) {
        values.push_back(r.portfolio(t, x, f));
        mean += values.back();
    }
    mean /= static_cast<double>(reps.size());
    for (const auto& v : values) var += (v - mean).cwiseAbs2();
    return var / static_cast<double>(reps.size() - 1);
}

double sample_stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

EquivalenceReport equivalence_check(const FeedbackStrategy& mmv, const FeedbackStrategy& mv, const ProbeGrid& grid) {
    require(mmv.kind() == StrategyKind::MMV && mv.kind() == StrategyKind::MV, ErrorCode::InvalidModel,
            "equivalence_check expects (MMV, MV) strategies");
    const MarketModel& model = mmv.model();
    const bool markov = model.is_markovian();
    const double h0 = model.discount_h(0.0);

    EquivalenceReport rep;
    const BsdeSolution& y = mmv.solutions()[0];
    const BsdeSolution& p1 = mv.solutions()[0];
    const BsdeSolution& p2 = mv.solutions()[1];
    const DualCurve curve = dual_curve(p1.initial_value(), p2.initial_value(), h0, model.x0(), model.theta());
    rep.value_mmv = mmv_value(model, y);
    rep.value_mv = curve.mv_value();
    rep.value_gap = std::abs(rep.value_mmv - rep.value_mv);
    rep.gamma_hat = *mv.gamma_hat();
    rep.a_const = *mmv.a_const();
    rep.k_hat = curve.k_hat();

    std::vector<FeedbackStrategy> reps_mmv, reps_mv;
    const std::size_t b = std::min(mmv.replicate_count(), mv.replicate_count());
    rep.bootstrap_replicates = b;
    if (b >= 2) {
        std::vector<double> v_mmv, v_mv;
        for (std::size_t k = 0; k < b; ++k) {
            reps_mmv.push_back(mmv.replicate(k));
            reps_mv.push_back(mv.replicate(k));
            v_mmv.push_back(mmv_value(model, reps_mmv.back().solutions()[0]));
            const auto& s = reps_mv.back().solutions();
            v_mv.push_back(dual_curve(s[0].initial_value(), s[1].initial_value(), h0, model.x0(), model.theta()).mv_value());
        }
        const double s1 = sample_stddev(v_mmv);
        const double s2 = sample_stddev(v_mv);
        rep.value_stderr = std::sqrt(s1 * s1 + s2 * s2);
    }

    const double manifold = std::min(rep.a_const, rep.gamma_hat);
    std::vector<std::optional<double>> factors;
    if (markov && !grid.factors.empty()) {
        for (double f : grid.factors) factors.emplace_back(f);
    } else {
        factors.push_back(model.initial_factor());
    }
    for (double t : grid.times) {
        const double h = model.discount_h(t);
        for (const auto& f : factors) {
            const FeedbackCoefficients c_mmv = mmv.coefficients(t, f);
            const FeedbackCoefficients c_mv = mv.coefficients(t, f);
            for (double x : grid.wealth) {
                EquivalenceRow row;
                row.t = t;
                row.wealth = x;
                row.factor = markov ? f : std::nullopt;
                const double g1 = x - c_mmv.pivot;
                const double g2 = x - c_mv.pivot;
                row.pi_mmv = positive_part(g1) * c_mmv.slope_above + negative_part(g1) * c_mmv.slope_below;
                row.pi_mv = positive_part(g2) * c_mv.slope_above + negative_part(g2) * c_mv.slope_below;
                row.gap = (row.pi_mmv - row.pi_mv).lpNorm<Eigen::Infinity>();
                row.on_manifold = h * x <= manifold;
                if (b >= 2) {
                    const Vector var = replicate_variance(reps_mmv, t, x, f, row.pi_mmv) +
                                       replicate_variance(reps_mv, t, x, f, row.pi_mv);
                    row.gap_stderr = std::sqrt(var.maxCoeff());
                }
                if (row.on_manifold) {
                    rep.max_gap = std::max(rep.max_gap, row.gap);
                    if (row.gap_stderr > 0.0) rep.max_gap_ratio = std::max(rep.max_gap_ratio, row.gap / row.gap_stderr);
                } else {
                    rep.max_gap_off_manifold = std::max(rep.max_gap_off_manifold, row.gap);
                }
                rep.rows.push_back(std::move(row));
            }
        }
    }
    return rep;
}

void EquivalenceReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17);
    const Eigen::Index m = rows.empty() ? 0 : rows.front().pi_mmv.size();
    const bool with_factor = !rows.empty() && rows.front().factor.has_value();
    out << "t,X";
    if (with_factor) out << ",factor";
    for (Eigen::Index c = 0; c < m; ++c) out << ",pi_mmv_" << c + 1;
    for (Eigen::Index c = 0; c < m; ++c) out << ",pi_mv_" << c + 1;
    out << ",abs_gap,gap_stderr,on_manifold\n";
    for (const auto& r : rows) {
        out << r.t << "," << r.wealth;
        if (with_factor) out << "," << *r.factor;
        for (Eigen::Index c = 0; c < m; ++c) out << "," << r.pi_mmv(c);
        for (Eigen::Index c = 0; c < m; ++c) out << "," << r.pi_mv(c);
        out << "," << r.gap << "," << r.gap_stderr << "," << (r.on_manifold ? 1 : 0) << "\n";
    }
}

void EquivalenceReport::write_json(const std::string& path) const {
    nlohmann::json j = {{"value_mmv", value_mmv},
                        {"value_mv", value_mv},
                        {"value_gap", value_gap},
                        {"value_stderr", value_stderr},
                        {"max_gap", max_gap},
                        {"max_gap_off_manifold", max_gap_off_manifold},
                        {"max_gap_ratio", max_gap_ratio},
                        {"gamma_hat", gamma_hat},
                        {"a", a_const},
                        {"K_hat", k_hat},
                        {"bootstrap_replicates", bootstrap_replicates},
                        {"probes", rows.size()}};
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17) << j.dump(2) << "\n";
}

}  // namespace mmv
