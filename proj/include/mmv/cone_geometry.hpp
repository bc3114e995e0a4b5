#pragma once

#include <cstddef>

#include "mmv/linalg.hpp"

namespace mmv {

enum class ConeKind { FullSpace, Orthant, Generated };

/// Closed convex cone in R^m: all of R^m, the nonnegative orthant, or the
/// conic hull {G lambda : lambda >= 0} of the columns of a generator matrix.
class Cone {
public:
    static Cone full_space(std::size_t m);
    static Cone orthant(std::size_t m);
    static Cone generated(Matrix generators);

    ConeKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }
    const Matrix& generators() const { return generators_; }

    bool contains(const Vector& p, double tol = 1e-10) const;

private:
    ConeKind kind_ = ConeKind::FullSpace;
    std::size_t dim_ = 0;
    Matrix generators_;
};

struct NnlsResult {
    Vector x;
    std::size_t iterations = 0;
};

/// Lawson-Hanson active-set solve of min |A x - b| over x >= 0. Entering
/// index ties go to the lowest index. Throws NoConvergence after
/// max_iterations passes of the inner/outer loops.
NnlsResult solve_nnls(const Matrix& a, const Vector& b, std::size_t max_iterations, double tol = 1e-12);

/// Euclidean projection of p onto the cone.
Vector project_cone(const Cone& cone, const Vector& p);

struct TransformedConePoint {
    Vector xi;          // projection of a onto sigma' Gamma, length n
    Vector gamma_min;   // gamma in Gamma with sigma' gamma = xi, length m
    double dist_sq = 0.0;
};

/// Projection of a in R^n onto the image cone sigma' Gamma, solved as
/// min over pi in Gamma of |a - sigma' pi|^2.
TransformedConePoint project_transformed(const Cone& cone, const Matrix& sigma, const Vector& a);

/// inf over pi in Gamma of pi' sigma sigma' pi - 2 pi' sigma a, evaluated as
/// dist^2(a, sigma' Gamma) - |a|^2. Never positive.
double cone_inf_quadratic(const Cone& cone, const Matrix& sigma, const Vector& a);

}  // namespace mmv
