#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmv/cone_geometry.hpp"
#include "mmv/linalg.hpp"
#include "mmv/market_model.hpp"

namespace mmv {

/// Y: MMV value process. P: its reciprocal partner. P1, P2: the pair that
/// solves the Lagrangian MV subproblem.
enum class Equation { Y, P, P1, P2 };

std::string_view to_string(Equation eq);
Equation equation_from_string(std::string_view name);

struct SolutionBounds {
    double lower = 0.0;
    double upper = 0.0;
};

/// Driver of the Y equation in projection form,
/// -(1/y)|z + xi|^2 + 2 phi' xi with xi = Proj_{sigma' Gamma}(y phi - z).
double driver_f(const Cone& cone, const Matrix& sigma, const Vector& phi, double y, const Vector& z);

/// Same driver through the distance identity,
/// -(1/y)[dist^2(y phi - z) - |y phi - z|^2] - |z|^2 / y.
double driver_f_distance(const Cone& cone, const Matrix& sigma, const Vector& phi, double y, const Vector& z);

/// Generator g of d(value) = -g dt + z' dW for any of the four equations.
double generator(Equation eq, const Cone& cone, const MarketPoint& point, double value, const Vector& z);

/// Scalar argument of the cone infimum inside the P, P1, P2 generators:
/// phi + z/value for P and P2, -phi - z/value for P1.
Vector p_driver_argument(Equation eq, const Vector& phi, double value, const Vector& z);

/// generator() for the unconstrained cone, in scalars: with Pi the projector
/// onto range(sigma'), phi_sq = |phi|^2, phi_z = phi'z, z_sq = |z|^2 and
/// perp_z_sq = |(I - Pi) z|^2.
double full_space_generator(Equation eq, double rate, double phi_sq, double phi_z, double z_sq, double perp_z_sq,
                            double value);

struct McSolverConfig {
    std::size_t paths = 50000;
    std::size_t basis_degree = 2;
    std::uint64_t seed = 0;
    std::size_t steps = 50;
    /// Bootstrap replicates for standard errors; 0 disables.
    std::size_t bootstrap = 0;
    /// Weight of the driver at t_i in each backward step, the rest taken
    /// explicitly at t_{i+1}: 1 is implicit Euler, 0.5 the trapezoidal
    /// theta-scheme (second order in time). Must lie in [0.5, 1].
    double implicit_weight = 0.5;

    void validate() const;
};

namespace detail {

struct GridField {
    std::vector<double> values;
    std::vector<double> slope_start;  // derivative at left end of interval i
    std::vector<double> slope_end;    // derivative at right end of interval i
    std::vector<Vector> z;
};

struct RegressionNode {
    double center = 0.0;
    double scale = 1.0;
    Vector y_coef;   // degree+1
    Matrix z_coef;   // (degree+1) x n
};

struct RegressionField {
    std::vector<RegressionNode> nodes;
    double initial_factor = 0.0;
};

struct SolutionTable {
    Equation equation = Equation::Y;
    std::vector<double> grid;
    std::size_t n = 1;
    std::optional<GridField> grid_field;
    std::optional<RegressionField> regression;
};

}  // namespace detail

struct SolverDiagnostics {
    std::size_t clamp_events = 0;
    std::size_t path_steps = 0;
    std::uint64_t seed = 0;
    std::size_t paths = 0;
    std::size_t basis_degree = 0;
    double implicit_weight = 1.0;
    double max_abs_z = 0.0;
};

/// Time-gridded solution (value, z) of one of the four equations. Markovian
/// solutions are regression tables over the factor; transformed solutions
/// are views of a source table through (s/p, -s z/p^2).
class BsdeSolution {
public:
    /// Solution given directly by grid values and z vectors; values in
    /// between are linearly interpolated.
    static BsdeSolution from_grid(Equation eq, std::vector<double> grid, std::vector<double> values,
                                  std::vector<Vector> z, SolutionBounds bounds);

    Equation equation() const { return equation_; }
    const std::vector<double>& grid() const { return table_->grid; }
    bool is_markovian() const { return table_->regression.has_value(); }
    bool is_transformed() const { return transform_ != Transform::None; }
    SolutionBounds bounds() const { return bounds_; }
    const SolverDiagnostics& diagnostics() const { return diagnostics_; }
    std::size_t n() const { return table_->n; }

    double value(double t, std::optional<double> factor = std::nullopt) const;
    Vector z(double t, std::optional<double> factor = std::nullopt) const;
    std::pair<double, Vector> evaluate(double t, std::optional<double> factor = std::nullopt) const;

    /// Value at t = 0 (at the initial factor for Markovian solutions).
    double initial_value() const;
    std::optional<double> initial_factor() const;

    std::size_t replicate_count() const { return replicates_ ? replicates_->size() : 0; }
    BsdeSolution replicate(std::size_t b) const;
    /// Bootstrap standard error of initial_value(); 0 when no replicates.
    double initial_stderr() const;

    void write_csv(const std::string& path) const;
    void write_metadata(const std::string& path) const;

private:
    friend BsdeSolution solve_deterministic(const MarketModel&, const Cone&, Equation, std::size_t);
    friend BsdeSolution solve_markovian(const MarketModel&, const Cone&, Equation, const McSolverConfig&);
    friend BsdeSolution transform_p_to_y(const BsdeSolution&);
    friend BsdeSolution transform_p2_to_y(const BsdeSolution&, const DiscountFactor&);

    enum class Transform { None, Reciprocal, DiscountedReciprocal };

    BsdeSolution() = default;
    std::pair<double, Vector> evaluate_raw(const detail::SolutionTable& table, double t,
                                           std::optional<double> factor) const;
    std::pair<double, Vector> apply_transform(double t, double value, Vector z) const;

    Equation equation_ = Equation::Y;
    std::shared_ptr<const detail::SolutionTable> table_;
    std::shared_ptr<const std::vector<detail::SolutionTable>> replicates_;
    Transform transform_ = Transform::None;
    std::shared_ptr<const DiscountFactor> discount_;
    SolutionBounds bounds_;
    SolverDiagnostics diagnostics_;
};

/// Positivity envelope exp(-C T) .. exp(C T) with C = model.growth_bound().
SolutionBounds positivity_envelope(const MarketModel& model);

/// Backward RK4 on the Z = 0 reduction; coefficients must be deterministic.
BsdeSolution solve_deterministic(const MarketModel& model, const Cone& cone, Equation eq, std::size_t steps);

/// Least-squares Monte Carlo backward induction over simulated factor paths.
BsdeSolution solve_markovian(const MarketModel& model, const Cone& cone, Equation eq, const McSolverConfig& cfg);

/// (Y, Z) = (1/P, -Delta/P^2).
BsdeSolution transform_p_to_y(const BsdeSolution& p_sol);

/// (Y, Z) = (h^2/P2, -(h^2/P2^2) Delta2).
BsdeSolution transform_p2_to_y(const BsdeSolution& p2_sol, const DiscountFactor& h);

}  // namespace mmv
