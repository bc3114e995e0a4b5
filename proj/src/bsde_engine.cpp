#include "mmv/bsde_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmv/errors.hpp"
#include "mmv/parallel.hpp"
#include "mmv/rng.hpp"

namespace mmv {

std::string_view to_string(Equation eq) {
    switch (eq) {
        case Equation::Y: return "Y";
        case Equation::P: return "P";
        case Equation::P1: return "P1";
        case Equation::P2: return "P2";
    }
    return "?";
}

Equation equation_from_string(std::string_view name) {
    if (name == "Y") return Equation::Y;
    if (name == "P") return Equation::P;
    if (name == "P1") return Equation::P1;
    if (name == "P2") return Equation::P2;
    throw Error(ErrorCode::ConfigInvalid, "unknown equation '" + std::string(name) + "' (expected Y, P, P1 or P2)");
}

namespace {

// Projection onto sigma' Gamma reusing the point's Gram factorization.
TransformedConePoint project_at(const Cone& cone, const MarketPoint& point, const Vector& a) {
    if (cone.kind() != ConeKind::FullSpace || a.isZero(0.0)) return project_transformed(cone, point.sigma, a);
    TransformedConePoint out;
    out.gamma_min = point.gram.solve(point.sigma * a);
    out.xi = point.sigma.transpose() * out.gamma_min;
    out.dist_sq = (a - out.xi).squaredNorm();
    return out;
}

double y_generator(const Cone& cone, const MarketPoint& point, double y, const Vector& z) {
    require(y > 0.0, ErrorCode::NonPositiveY, "Y driver needs y > 0");
    const Vector a = y * point.phi - z;
    const auto proj = project_at(cone, point, a);
    return -(proj.dist_sq - a.squaredNorm()) / y - z.squaredNorm() / y;
}

}  // namespace

double driver_f(const Cone& cone, const Matrix& sigma, const Vector& phi, double y, const Vector& z) {
    require(y > 0.0, ErrorCode::NonPositiveY, "driver_f needs y > 0");
    const auto proj = project_transformed(cone, sigma, y * phi - z);
    return -(z + proj.xi).squaredNorm() / y + 2.0 * phi.dot(proj.xi);
}

double driver_f_distance(const Cone& cone, const Matrix& sigma, const Vector& phi, double y, const Vector& z) {
    require(y > 0.0, ErrorCode::NonPositiveY, "driver_f needs y > 0");
    const Vector a = y * phi - z;
    return -cone_inf_quadratic(cone, sigma, a) / y - z.squaredNorm() / y;
}

Vector p_driver_argument(Equation eq, const Vector& phi, double value, const Vector& z) {
    if (eq == Equation::P1) return -phi - z / value;
    return phi + z / value;
}

double generator(Equation eq, const Cone& cone, const MarketPoint& point, double value, const Vector& z) {
    if (eq == Equation::Y) return y_generator(cone, point, value, z);
    require(value > 0.0, ErrorCode::PositivityLost, std::string(to_string(eq)) + " driver needs a positive value");
    // inf_pi [P pi' sigma sigma' pi -/+ 2 pi'(P mu + sigma Delta)] = P inf_pi[pi' sigma sigma' pi - 2 pi' sigma a]
    const Vector a = p_driver_argument(eq, point.phi, value, z);
    const auto proj = project_at(cone, point, a);
    const double inf = value * (proj.dist_sq - a.squaredNorm());
    if (eq == Equation::P) return inf;
    return 2.0 * point.rate * value + inf;
}

double full_space_generator(Equation eq, double rate, double phi_sq, double phi_z, double z_sq, double perp_z_sq,
                            double value) {
    // phi lies in range(sigma'), so the distance only sees the part of z outside it
    if (eq == Equation::Y) {
        require(value > 0.0, ErrorCode::NonPositiveY, "Y driver needs y > 0");
        return value * phi_sq - 2.0 * phi_z - perp_z_sq / value;
    }
    require(value > 0.0, ErrorCode::PositivityLost, std::string(to_string(eq)) + " driver needs a positive value");
    const double inf = (perp_z_sq - z_sq) / value - value * phi_sq - 2.0 * phi_z;
    if (eq == Equation::P) return inf;
    return 2.0 * rate * value + inf;
}

void McSolverConfig::validate() const {
    require(paths >= 1000, ErrorCode::ConfigInvalid, "solver.paths must be >= 1000");
    require(basis_degree <= 6, ErrorCode::ConfigInvalid, "solver.basis_degree must be in [0, 6]");
    require(steps >= 10, ErrorCode::ConfigInvalid, "solver.steps must be >= 10");
    require(implicit_weight >= 0.5 && implicit_weight <= 1.0, ErrorCode::ConfigInvalid,
            "solver.implicit_weight must be in [0.5, 1]");
}

SolutionBounds positivity_envelope(const MarketModel& model) {
    const double c = model.growth_bound() * model.horizon();
    return {std::exp(-c), std::exp(c)};
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

// Index i with grid[i] <= t < grid[i+1]; the last interval is closed.
std::size_t locate(const std::vector<double>& grid, double t) {
    const double slack = 1e-12 * std::max(1.0, grid.back());
    require(t >= grid.front() - slack && t <= grid.back() + slack, ErrorCode::TimeOutOfRange,
            "solution evaluated outside its grid");
    if (t >= grid.back()) return grid.size() - 2;
    const auto it = std::upper_bound(grid.begin(), grid.end(), t);
    const std::size_t i = it == grid.begin() ? 0 : static_cast<std::size_t>(it - grid.begin()) - 1;
    return std::min(i, grid.size() - 2);
}

Vector basis_row(const detail::RegressionNode& node, double factor) {
    const Eigen::Index d = node.y_coef.size();
    Vector row(d);
    const double x = (factor - node.center) / node.scale;
    double p = 1.0;
    for (Eigen::Index k = 0; k < d; ++k) {
        row(k) = p;
        p *= x;
    }
    return row;
}

}  // namespace

BsdeSolution BsdeSolution::from_grid(Equation eq, std::vector<double> grid, std::vector<double> values,
                                     std::vector<Vector> z, SolutionBounds bounds) {
    require(grid.size() >= 2 && values.size() == grid.size() && z.size() == grid.size(), ErrorCode::DimensionMismatch,
            "grid, values and z must have equal length >= 2");
    auto table = std::make_shared<detail::SolutionTable>();
    table->equation = eq;
    table->n = static_cast<std::size_t>(z.front().size());
    table->grid = std::move(grid);
    detail::GridField field;
    field.values = std::move(values);
    field.z = std::move(z);
    table->grid_field = std::move(field);
    BsdeSolution out;
    out.equation_ = eq;
    out.table_ = std::move(table);
    out.bounds_ = bounds;
    return out;
}

std::pair<double, Vector> BsdeSolution::evaluate_raw(const detail::SolutionTable& table, double t,
                                                     std::optional<double> factor) const {
    const auto& grid = table.grid;
    const std::size_t i = locate(grid, t);
    const double t0 = grid[i];
    const double t1 = grid[i + 1];
    const double w = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    if (table.grid_field) {
        const auto& g = *table.grid_field;
        const double v0 = g.values[i];
        const double v1 = g.values[i + 1];
        double v;
        if (!g.slope_start.empty()) {
            // cubic Hermite with the ODE slopes
            const double dt = t1 - t0;
            const double h00 = (1 + 2 * w) * (1 - w) * (1 - w);
            const double h10 = w * (1 - w) * (1 - w);
            const double h01 = w * w * (3 - 2 * w);
            const double h11 = w * w * (w - 1);
            v = h00 * v0 + h10 * dt * g.slope_start[i] + h01 * v1 + h11 * dt * g.slope_end[i];
        } else {
            v = (1 - w) * v0 + w * v1;
        }
        if (w == 0.0) v = v0;
        if (w == 1.0) v = v1;
        Vector z = (1 - w) * g.z[i] + w * g.z[i + 1];
        return {v, z};
    }
    const auto& reg = *table.regression;
    require(factor.has_value(), ErrorCode::DimensionMismatch, "Markovian solution needs a factor state");
    const auto& n0 = reg.nodes[i];
    const auto& n1 = reg.nodes[i + 1];
    const double v0 = basis_row(n0, *factor).dot(n0.y_coef);
    double v = v0;
    if (w > 0.0) v = (1 - w) * v0 + w * basis_row(n1, *factor).dot(n1.y_coef);
    Vector z = n0.z_coef.transpose() * basis_row(n0, *factor);
    if (w > 0.0) z = (1 - w) * z + w * (n1.z_coef.transpose() * basis_row(n1, *factor));
    return {v, z};
}

std::pair<double, Vector> BsdeSolution::apply_transform(double t, double value, Vector z) const {
    if (transform_ == Transform::None) return {value, std::move(z)};
    require(value > 0.0, ErrorCode::PositivityLost, "transform of a non-positive solution value");
    double s = 1.0;
    if (transform_ == Transform::DiscountedReciprocal) {
        const double h = discount_->at(t);
        s = h * h;
    }
    return {s / value, (-s / (value * value)) * z};
}

std::pair<double, Vector> BsdeSolution::evaluate(double t, std::optional<double> factor) const {
    auto [v, z] = evaluate_raw(*table_, t, factor);
    return apply_transform(t, v, std::move(z));
}

double BsdeSolution::value(double t, std::optional<double> factor) const { return evaluate(t, factor).first; }

Vector BsdeSolution::z(double t, std::optional<double> factor) const { return evaluate(t, factor).second; }

std::optional<double> BsdeSolution::initial_factor() const {
    if (!table_->regression) return std::nullopt;
    return table_->regression->initial_factor;
}

double BsdeSolution::initial_value() const { return value(0.0, initial_factor()); }

BsdeSolution BsdeSolution::replicate(std::size_t b) const {
    require(replicates_ && b < replicates_->size(), ErrorCode::DimensionMismatch, "bootstrap replicate out of range");
    BsdeSolution out = *this;
    out.table_ = std::shared_ptr<const detail::SolutionTable>(replicates_, &(*replicates_)[b]);
    out.replicates_.reset();
    return out;
}

double BsdeSolution::initial_stderr() const {
    const std::size_t b = replicate_count();
    if (b < 2) return 0.0;
    std::vector<double> v(b);
    for (std::size_t k = 0; k < b; ++k) v[k] = replicate(k).initial_value();
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(b);
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(b - 1));
}

void BsdeSolution::write_csv(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17);
    const auto& grid = table_->grid;
    if (table_->regression && transform_ == Transform::None) {
        const auto& nodes = table_->regression->nodes;
        std::size_t width = 0;
        for (const auto& nd : nodes) width = std::max<std::size_t>(width, static_cast<std::size_t>(nd.y_coef.size()));
        out << "t,center,scale";
        for (std::size_t k = 0; k < width; ++k) out << ",y_c" << k;
        for (std::size_t c = 0; c < table_->n; ++c) {
            for (std::size_t k = 0; k < width; ++k) out << ",z" << c + 1 << "_c" << k;
        }
        out << "\n";
        for (std::size_t i = 0; i < grid.size(); ++i) {
            const auto& nd = nodes[i];
            out << grid[i] << "," << nd.center << "," << nd.scale;
            for (std::size_t k = 0; k < width; ++k) {
                out << "," << (static_cast<Eigen::Index>(k) < nd.y_coef.size() ? nd.y_coef(static_cast<Eigen::Index>(k)) : 0.0);
            }
            for (std::size_t c = 0; c < table_->n; ++c) {
                for (std::size_t k = 0; k < width; ++k) {
                    const auto kk = static_cast<Eigen::Index>(k);
                    out << "," << (kk < nd.z_coef.rows() ? nd.z_coef(kk, static_cast<Eigen::Index>(c)) : 0.0);
                }
            }
            out << "\n";
        }
        return;
    }
    out << "t,y";
    for (std::size_t c = 0; c < table_->n; ++c) out << ",z_" << c + 1;
    out << "\n";
    const auto f = initial_factor();
    for (double t : grid) {
        const auto [v, z] = evaluate(t, f);
        out << t << "," << v;
        for (Eigen::Index c = 0; c < z.size(); ++c) out << "," << z(c);
        out << "\n";
    }
}

void BsdeSolution::write_metadata(const std::string& path) const {
    nlohmann::json meta;
    meta["equation"] = std::string(to_string(equation_));
    meta["source_equation"] = std::string(to_string(table_->equation));
    meta["transform"] = transform_ == Transform::None           ? "none"
                        : transform_ == Transform::Reciprocal   ? "reciprocal"
                                                                : "discounted_reciprocal";
    meta["scheme"] = is_markovian() ? "least_squares_monte_carlo" : "rk4_zero_z";
    meta["grid"] = {{"t0", grid().front()}, {"T", grid().back()}, {"steps", grid().size() - 1}};
    meta["initial_value"] = initial_value();
    meta["bounds"] = {{"lower", bounds_.lower}, {"upper", bounds_.upper}};
    if (is_markovian()) {
        meta["seed"] = diagnostics_.seed;
        meta["paths"] = diagnostics_.paths;
        meta["basis_degree"] = diagnostics_.basis_degree;
        meta["implicit_weight"] = diagnostics_.implicit_weight;
        meta["clamp_events"] = diagnostics_.clamp_events;
        meta["path_steps"] = diagnostics_.path_steps;
        meta["max_abs_z"] = diagnostics_.max_abs_z;
        meta["bootstrap_replicates"] = replicate_count();
        meta["initial_stderr"] = initial_stderr();
    }
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << meta.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Deterministic solver

BsdeSolution solve_deterministic(const MarketModel& model, const Cone& cone, Equation eq, std::size_t steps) {
    require(!model.is_markovian(), ErrorCode::InvalidModel, "solve_deterministic needs deterministic coefficients");
    require(steps >= 10, ErrorCode::ConfigInvalid, "deterministic solver needs >= 10 steps");
    require(cone.dim() == model.m(), ErrorCode::DimensionMismatch, "cone dimension must equal m");

    const double horizon = model.horizon();
    const Vector zero = Vector::Zero(static_cast<Eigen::Index>(model.n()));
    auto slope = [&](double t, double v) {
        const MarketPoint point = model.at(std::clamp(t, 0.0, horizon), std::nullopt);
        return -generator(eq, cone, point, v, zero);
    };

    std::vector<double> kinks;
    for (const auto& s : model.rate().segments()) kinks.push_back(s.until);
    for (double k : model.coefficients().knots()) kinks.push_back(k);
    std::sort(kinks.begin(), kinks.end());

    detail::GridField field;
    std::vector<double> grid(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) grid[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
    grid.back() = horizon;
    field.values.assign(steps + 1, 0.0);
    field.slope_start.assign(steps, 0.0);
    field.slope_end.assign(steps, 0.0);
    field.z.assign(steps + 1, zero);
    field.values[steps] = 1.0;

    const SolutionBounds bounds = positivity_envelope(model);
    const double nudge = 1e-12 * horizon;
    for (std::size_t i = steps; i-- > 0;) {
        // integrate from grid[i+1] down to grid[i], splitting at coefficient kinks
        std::vector<double> stops{grid[i + 1]};
        for (auto it = kinks.rbegin(); it != kinks.rend(); ++it) {
            if (*it > grid[i] && *it < grid[i + 1]) stops.push_back(*it);
        }
        stops.push_back(grid[i]);
        double v = field.values[i + 1];
        for (std::size_t s = 0; s + 1 < stops.size(); ++s) {
            const double ta = stops[s];
            const double tb = stops[s + 1];
            const double h = tb - ta;  // negative
            // stage times nudged inside the sub-interval so one-sided coefficients apply
            const double ta_in = ta - nudge;
            const double tb_in = tb + nudge;
            const double tm = 0.5 * (ta + tb);
            const double k1 = slope(ta_in, v);
            const double k2 = slope(tm, v + 0.5 * h * k1);
            const double k3 = slope(tm, v + 0.5 * h * k2);
            const double k4 = slope(tb_in, v + h * k3);
            v += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
        }
        // the envelope is attained exactly in saturated cases; allow roundoff
        if (!(v >= bounds.lower * (1 - 1e-9) && v <= bounds.upper * (1 + 1e-9))) {
            std::ostringstream msg;
            msg << to_string(eq) << " left its envelope [" << bounds.lower << ", " << bounds.upper << "] at t="
                << grid[i] << " (value " << v << ")";
            throw Error(ErrorCode::PositivityLost, msg.str());
        }
        field.values[i] = v;
        field.slope_start[i] = slope(grid[i] + nudge, v);
        field.slope_end[i] = slope(grid[i + 1] - nudge, field.values[i + 1]);
    }

    auto table = std::make_shared<detail::SolutionTable>();
    table->equation = eq;
    table->grid = std::move(grid);
    table->n = model.n();
    table->grid_field = std::move(field);

    BsdeSolution out;
    out.equation_ = eq;
    out.table_ = std::move(table);
    out.bounds_ = bounds;
    return out;
}

// ---------------------------------------------------------------------------
// Markovian solver

namespace {

struct FactorPaths {
    std::size_t paths = 0;
    std::size_t steps = 0;
    std::size_t n = 0;
    double dt = 0.0;
    std::vector<double> factor;  // (steps+1) x paths
    std::vector<double> dw;      // steps x paths x n

    double f(std::size_t i, std::size_t p) const { return factor[i * paths + p]; }
    const double* increment(std::size_t i, std::size_t p) const { return &dw[(i * paths + p) * n]; }
};

FactorPaths simulate_factor(const MarketModel& model, std::size_t paths, std::size_t steps, std::uint64_t key) {
    FactorPaths out;
    out.paths = paths;
    out.steps = steps;
    out.n = model.n();
    out.dt = model.horizon() / static_cast<double>(steps);
    out.factor.resize((steps + 1) * paths);
    out.dw.resize(steps * paths * out.n);
    const FactorDynamics fd = model.coefficients().factor();
    const double sq = std::sqrt(out.dt);
    parallel_for(paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            CounterRng rng(key, p);
            std::normal_distribution<double> normal;
            double f = fd.initial;
            out.factor[p] = f;
            for (std::size_t i = 0; i < steps; ++i) {
                double* inc = &out.dw[(i * paths + p) * out.n];
                for (std::size_t c = 0; c < out.n; ++c) inc[c] = sq * normal(rng);
                f += fd.kappa * (fd.level - f) * out.dt + fd.vol * inc[fd.driver];
                out.factor[(i + 1) * paths + p] = f;
            }
        }
    });
    return out;
}

// Market coefficients of every path at one node, shared by the main pass and
// all bootstrap replicates.
struct NodeCoefficients {
    bool full_space = false;
    std::size_t n = 0;
    std::vector<double> rate;
    std::vector<double> phi;          // paths x n
    std::vector<double> perp;         // paths x n x n, I - Pi (full space only)
    std::vector<MarketPoint> points;  // other cones

    NodeCoefficients(const MarketModel& model, const Cone& cone, double t, const FactorPaths& fp, std::size_t i)
        : full_space(cone.kind() == ConeKind::FullSpace), n(fp.n), rate(fp.paths) {
        if (full_space) {
            phi.resize(fp.paths * n);
            perp.resize(fp.paths * n * n);
        } else {
            points.resize(fp.paths);
        }
        parallel_for(fp.paths, [&](std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p) {
                MarketPoint pt = model.at(t, fp.f(i, p));
                rate[p] = pt.rate;
                if (!full_space) {
                    points[p] = std::move(pt);
                    continue;
                }
                const Matrix proj = pt.sigma.transpose() * pt.gram.solve(pt.sigma);
                for (std::size_t a = 0; a < n; ++a) {
                    phi[p * n + a] = pt.phi(static_cast<Eigen::Index>(a));
                    for (std::size_t b = 0; b < n; ++b) {
                        perp[(p * n + a) * n + b] =
                            (a == b ? 1.0 : 0.0) - proj(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
                    }
                }
            }
        });
    }
};

// The generator at one path with z frozen, as a function of the value.
class LocalGenerator {
public:
    LocalGenerator(Equation eq, const Cone& cone, const NodeCoefficients& nc, std::size_t p, const double* z)
        : eq_(eq), cone_(cone), nc_(nc), p_(p) {
        const std::size_t n = nc.n;
        if (nc.full_space) {
            const double* phi = &nc.phi[p * n];
            const double* perp = &nc.perp[p * n * n];
            for (std::size_t a = 0; a < n; ++a) {
                phi_sq_ += phi[a] * phi[a];
                phi_z_ += phi[a] * z[a];
                z_sq_ += z[a] * z[a];
                double w = 0.0;
                for (std::size_t b = 0; b < n; ++b) w += perp[a * n + b] * z[b];
                perp_z_sq_ += w * w;
            }
        } else {
            z_ = Eigen::Map<const Vector>(z, static_cast<Eigen::Index>(n));
        }
    }

    double operator()(double value) const {
        if (nc_.full_space) return full_space_generator(eq_, nc_.rate[p_], phi_sq_, phi_z_, z_sq_, perp_z_sq_, value);
        return generator(eq_, cone_, nc_.points[p_], value, z_);
    }

private:
    Equation eq_;
    const Cone& cone_;
    const NodeCoefficients& nc_;
    std::size_t p_;
    double phi_sq_ = 0.0, phi_z_ = 0.0, z_sq_ = 0.0, perp_z_sq_ = 0.0;
    Vector z_;
};

// One backward pass over a (re)sample of the simulated paths.
struct Pass {
    std::vector<std::size_t> index;  // sample slot -> path
    std::vector<double> v;           // value at the current node
    std::vector<double> g;           // generator at the current node
    detail::RegressionField field;
    detail::RegressionNode mid_next;  // z at the midpoint of the next interval
    bool has_mid_next = false;
    std::size_t clamp_events = 0;
    double max_abs_z = 0.0;
};

class BackwardSweep {
public:
    BackwardSweep(const MarketModel& model, const Cone& cone, Equation eq, const McSolverConfig& cfg,
                  const FactorPaths& fp, SolutionBounds bounds)
        : model_(model), cone_(cone), eq_(eq), cfg_(cfg), fp_(fp), bounds_(bounds) {
        grid_.resize(fp.steps + 1);
        for (std::size_t i = 0; i <= fp.steps; ++i) grid_[i] = fp.dt * static_cast<double>(i);
        grid_.back() = model.horizon();
    }

    void run(std::vector<Pass>& passes) const {
        const std::size_t steps = fp_.steps;
        const std::size_t n = fp_.n;
        const bool explicit_part = cfg_.implicit_weight < 1.0;
        {
            // terminal value 1 with z = 0
            const NodeCoefficients nc(model_, cone_, grid_[steps], fp_, steps);
            const std::vector<double> zero(n, 0.0);
            for (auto& pass : passes) {
                pass.field.initial_factor = model_.coefficients().factor().initial;
                pass.field.nodes.resize(steps + 1);
                auto& terminal = pass.field.nodes[steps];
                terminal.y_coef = Vector::Ones(1);
                terminal.z_coef = Matrix::Zero(1, static_cast<Eigen::Index>(n));
                pass.v.assign(pass.index.size(), 1.0);
                pass.g.assign(pass.index.size(), 0.0);
                if (!explicit_part) continue;
                for (std::size_t j = 0; j < pass.index.size(); ++j) {
                    pass.g[j] = LocalGenerator(eq_, cone_, nc, pass.index[j], zero.data())(1.0);
                }
            }
        }
        for (std::size_t i = steps; i-- > 0;) {
            const NodeCoefficients nc(model_, cone_, grid_[i], fp_, i);
            for (auto& pass : passes) step(pass, nc, i);
        }
    }

    const std::vector<double>& grid() const { return grid_; }

private:
    void step(Pass& pass, const NodeCoefficients& nc, std::size_t i) const {
        const std::size_t np = pass.index.size();
        const std::size_t n = fp_.n;
        const double dt = fp_.dt;
        const double t = grid_[i];
        const double wi = cfg_.implicit_weight;
        const double we = 1.0 - wi;

        double mean = 0.0;
        for (std::size_t j = 0; j < np; ++j) mean += fp_.f(i, pass.index[j]);
        mean /= static_cast<double>(np);
        double var = 0.0;
        for (std::size_t j = 0; j < np; ++j) {
            const double d = fp_.f(i, pass.index[j]) - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / static_cast<double>(np));
        const bool spread = sd > 1e-12 * (1.0 + std::abs(mean));
        const std::size_t d = spread ? cfg_.basis_degree : 0;
        const double scale = spread ? sd : 1.0;
        const auto cols = static_cast<Eigen::Index>(d + 1);
        const auto rows = static_cast<Eigen::Index>(np);

        Matrix basis(rows, cols);
        for (std::size_t j = 0; j < np; ++j) {
            const double x = (fp_.f(i, pass.index[j]) - mean) / scale;
            double p = 1.0;
            for (Eigen::Index k = 0; k < cols; ++k) {
                basis(static_cast<Eigen::Index>(j), k) = p;
                p *= x;
            }
        }
        const Eigen::ColPivHouseholderQR<Matrix> qr(basis);
        if (qr.rank() < cols) {
            std::ostringstream msg;
            msg << "regression basis of degree " << d << " has rank " << qr.rank() << " at t=" << t;
            throw Error(ErrorCode::RegressionIllConditioned, msg.str());
        }

        // continuation of the value plus the explicit share of the driver
        Vector target(rows);
        for (std::size_t j = 0; j < np; ++j) target(static_cast<Eigen::Index>(j)) = pass.v[j] + dt * we * pass.g[j];
        const Vector cont = basis * qr.solve(target);
        Matrix ztarget(rows, static_cast<Eigen::Index>(n));
        for (std::size_t j = 0; j < np; ++j) {
            const auto jj = static_cast<Eigen::Index>(j);
            const double r = target(jj) - cont(jj);
            const double* inc = fp_.increment(i, pass.index[j]);
            for (std::size_t c = 0; c < n; ++c) ztarget(jj, static_cast<Eigen::Index>(c)) = r * inc[c] / dt;
        }
        // E_i[target dW]/dt estimates z at the interval midpoint. The trapezoidal
        // scheme needs z at t_i: extrapolate linearly from this midpoint and the
        // next one (z_T = 0 on the last interval), which keeps second order.
        const Matrix mid_coef = qr.solve(ztarget);
        Matrix z_coef = mid_coef;
        if (we > 0.0) {
            Matrix zt = basis * mid_coef;
            if (pass.has_mid_next) {
                zt *= 1.5;
                for (std::size_t j = 0; j < np; ++j) {
                    const Vector row = basis_row(pass.mid_next, fp_.f(i, pass.index[j]));
                    zt.row(static_cast<Eigen::Index>(j)) -= 0.5 * (pass.mid_next.z_coef.transpose() * row).transpose();
                }
            } else {
                zt *= 2.0;
            }
            z_coef = qr.solve(zt);
            pass.mid_next.center = mean;
            pass.mid_next.scale = scale;
            pass.mid_next.z_coef = mid_coef;
            pass.mid_next.y_coef = Vector::Zero(cols);
            pass.has_mid_next = true;
        }
        const Matrix zhat = basis * z_coef;

        std::vector<unsigned char> clamped(np);
        parallel_for(np, [&](std::size_t begin, std::size_t end) {
            std::vector<double> zj(n);
            for (std::size_t j = begin; j < end; ++j) {
                const auto jj = static_cast<Eigen::Index>(j);
                for (std::size_t c = 0; c < n; ++c) zj[c] = zhat(jj, static_cast<Eigen::Index>(c));
                const LocalGenerator gen(eq_, cone_, nc, pass.index[j], zj.data());
                const double c = cont(jj);
                // implicit in the value, solved by fixed-point iteration
                double y = std::clamp(c, bounds_.lower, bounds_.upper);
                for (int it = 0; it < 50; ++it) {
                    const double y_new = std::clamp(c + dt * wi * gen(y), bounds_.lower, bounds_.upper);
                    const bool done = std::abs(y_new - y) <= 1e-14 * (1.0 + std::abs(y));
                    y = y_new;
                    if (done) break;
                }
                const double gy = gen(y);
                const double raw = c + dt * wi * gy;
                clamped[j] = (raw < bounds_.lower || raw > bounds_.upper) ? 1 : 0;
                pass.v[j] = y;
                pass.g[j] = gy;
            }
        });
        for (std::size_t j = 0; j < np; ++j) pass.clamp_events += clamped[j];
        pass.max_abs_z = std::max(pass.max_abs_z, zhat.cwiseAbs().maxCoeff());

        auto& node = pass.field.nodes[i];
        node.center = mean;
        node.scale = scale;
        node.y_coef = qr.solve(Eigen::Map<const Vector>(pass.v.data(), rows));
        node.z_coef = z_coef;
    }

    const MarketModel& model_;
    const Cone& cone_;
    Equation eq_;
    const McSolverConfig& cfg_;
    const FactorPaths& fp_;
    SolutionBounds bounds_;
    std::vector<double> grid_;
};

}  // namespace

BsdeSolution solve_markovian(const MarketModel& model, const Cone& cone, Equation eq, const McSolverConfig& cfg) {
    cfg.validate();
    require(model.is_markovian(), ErrorCode::InvalidModel, "solve_markovian needs Markov-factor coefficients");
    require(cone.dim() == model.m(), ErrorCode::DimensionMismatch, "cone dimension must equal m");

    const std::string stream = "bsde." + std::string(to_string(eq));
    const FactorPaths fp = simulate_factor(model, cfg.paths, cfg.steps, substream(cfg.seed, stream));
    const SolutionBounds bounds = positivity_envelope(model);

    std::vector<Pass> passes(1 + cfg.bootstrap);
    passes[0].index.resize(cfg.paths);
    std::iota(passes[0].index.begin(), passes[0].index.end(), std::size_t{0});
    const std::uint64_t key = substream(cfg.seed, stream + ".bootstrap");
    for (std::size_t b = 0; b < cfg.bootstrap; ++b) {
        CounterRng rng(key, b);
        std::uniform_int_distribution<std::size_t> pick(0, cfg.paths - 1);
        auto& sample = passes[b + 1].index;
        sample.resize(cfg.paths);
        for (auto& s : sample) s = pick(rng);
    }

    const BackwardSweep sweep(model, cone, eq, cfg, fp, bounds);
    sweep.run(passes);

    const Pass& main = passes[0];
    const std::size_t path_steps = cfg.paths * cfg.steps;
    if (static_cast<double>(main.clamp_events) > 1e-3 * static_cast<double>(path_steps)) {
        std::ostringstream msg;
        msg << to_string(eq) << ": " << main.clamp_events << " of " << path_steps
            << " path-steps clamped to the positivity envelope (limit 0.1%)";
        throw Error(ErrorCode::PositivityLost, msg.str());
    }

    auto make_table = [&](Pass& pass) {
        detail::SolutionTable table;
        table.equation = eq;
        table.n = fp.n;
        table.grid = sweep.grid();
        table.regression = std::move(pass.field);
        return table;
    };
    std::shared_ptr<std::vector<detail::SolutionTable>> replicates;
    if (cfg.bootstrap > 0) {
        replicates = std::make_shared<std::vector<detail::SolutionTable>>();
        replicates->reserve(cfg.bootstrap);
        for (std::size_t b = 0; b < cfg.bootstrap; ++b) replicates->push_back(make_table(passes[b + 1]));
    }

    BsdeSolution out;
    out.equation_ = eq;
    out.diagnostics_.clamp_events = main.clamp_events;
    out.diagnostics_.path_steps = path_steps;
    out.diagnostics_.seed = cfg.seed;
    out.diagnostics_.paths = cfg.paths;
    out.diagnostics_.basis_degree = cfg.basis_degree;
    out.diagnostics_.implicit_weight = cfg.implicit_weight;
    out.diagnostics_.max_abs_z = main.max_abs_z;
    out.table_ = std::make_shared<detail::SolutionTable>(make_table(passes[0]));
    out.replicates_ = std::move(replicates);
    out.bounds_ = bounds;
    return out;
}

// ---------------------------------------------------------------------------
// Transformations

BsdeSolution transform_p_to_y(const BsdeSolution& p_sol) {
    require(p_sol.equation() == Equation::P && !p_sol.is_transformed(), ErrorCode::InvalidModel,
            "transform_p_to_y expects an untransformed P solution");
    require(p_sol.bounds().lower > 0.0, ErrorCode::PositivityLost, "P solution is not uniformly positive");
    BsdeSolution out = p_sol;
    out.equation_ = Equation::Y;
    out.transform_ = BsdeSolution::Transform::Reciprocal;
    out.bounds_ = {1.0 / p_sol.bounds().upper, 1.0 / p_sol.bounds().lower};
    const auto f = p_sol.initial_factor();
    for (double t : p_sol.grid()) {
        if (!p_sol.is_markovian()) {
            require(p_sol.value(t, f) > 0.0, ErrorCode::PositivityLost, "P is not positive on the grid");
        }
    }
    return out;
}

BsdeSolution transform_p2_to_y(const BsdeSolution& p2_sol, const DiscountFactor& h) {
    require(p2_sol.equation() == Equation::P2 && !p2_sol.is_transformed(), ErrorCode::InvalidModel,
            "transform_p2_to_y expects an untransformed P2 solution");
    require(p2_sol.bounds().lower > 0.0, ErrorCode::PositivityLost, "P2 solution is not uniformly positive");
    BsdeSolution out = p2_sol;
    out.equation_ = Equation::Y;
    out.transform_ = BsdeSolution::Transform::DiscountedReciprocal;
    out.discount_ = std::make_shared<DiscountFactor>(h);
    double s_min = std::numeric_limits<double>::infinity();
    double s_max = 0.0;
    for (double t : p2_sol.grid()) {
        const double s = h.at(t) * h.at(t);
        s_min = std::min(s_min, s);
        s_max = std::max(s_max, s);
        if (!p2_sol.is_markovian()) {
            require(p2_sol.value(t) > 0.0, ErrorCode::PositivityLost, "P2 is not positive on the grid");
        }
    }
    out.bounds_ = {s_min / p2_sol.bounds().upper, s_max / p2_sol.bounds().lower};
    return out;
}

}  // namespace mmv
