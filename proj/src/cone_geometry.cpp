#include "mmv/cone_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mmv/errors.hpp"

namespace mmv {

Cone Cone::full_space(std::size_t m) {
    require(m >= 1, ErrorCode::DimensionMismatch, "cone dimension must be positive");
    Cone c;
    c.kind_ = ConeKind::FullSpace;
    c.dim_ = m;
    return c;
}

Cone Cone::orthant(std::size_t m) {
    require(m >= 1, ErrorCode::DimensionMismatch, "cone dimension must be positive");
    Cone c;
    c.kind_ = ConeKind::Orthant;
    c.dim_ = m;
    return c;
}

Cone Cone::generated(Matrix generators) {
    require(generators.rows() >= 1 && generators.cols() >= 1, ErrorCode::DimensionMismatch,
            "generator matrix must be nonempty");
    require(generators.allFinite(), ErrorCode::InvalidModel, "generator matrix must be finite");
    Cone c;
    c.kind_ = ConeKind::Generated;
    c.dim_ = static_cast<std::size_t>(generators.rows());
    c.generators_ = std::move(generators);
    return c;
}

bool Cone::contains(const Vector& p, double tol) const {
    require(p.size() == static_cast<Eigen::Index>(dim_), ErrorCode::DimensionMismatch, "membership test dimension");
    switch (kind_) {
        case ConeKind::FullSpace:
            return true;
        case ConeKind::Orthant:
            return p.minCoeff() >= -tol * (1.0 + p.norm());
        case ConeKind::Generated:
            return (project_cone(*this, p) - p).norm() <= tol * (1.0 + p.norm());
    }
    return false;
}

// ---------------------------------------------------------------------------

NnlsResult solve_nnls(const Matrix& a, const Vector& b, std::size_t max_iterations, double tol) {
    require(a.rows() == b.size(), ErrorCode::DimensionMismatch, "nnls: rows of A must match length of b");
    const Eigen::Index k = a.cols();
    NnlsResult out;
    out.x = Vector::Zero(k);
    const double scale = a.norm() * b.norm();
    if (scale == 0.0) return out;
    const double threshold = tol * scale;

    std::vector<bool> passive(static_cast<std::size_t>(k), false);
    std::vector<bool> blocked(static_cast<std::size_t>(k), false);
    Vector w = a.transpose() * b;

    auto solve_passive = [&](Vector& s) {
        std::vector<Eigen::Index> idx;
        for (Eigen::Index i = 0; i < k; ++i) {
            if (passive[static_cast<std::size_t>(i)]) idx.push_back(i);
        }
        s = Vector::Zero(k);
        if (idx.empty()) return;
        Matrix sub(a.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t c = 0; c < idx.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = a.col(idx[c]);
        const Vector coef = sub.colPivHouseholderQr().solve(b);
        for (std::size_t c = 0; c < idx.size(); ++c) s(idx[c]) = coef(static_cast<Eigen::Index>(c));
    };

    for (;;) {
        Eigen::Index enter = -1;
        double best = threshold;
        for (Eigen::Index i = 0; i < k; ++i) {
            const auto si = static_cast<std::size_t>(i);
            if (!passive[si] && !blocked[si] && w(i) > best) {
                best = w(i);
                enter = i;
            }
        }
        if (enter < 0) break;
        passive[static_cast<std::size_t>(enter)] = true;

        Vector s;
        for (;;) {
            if (++out.iterations > max_iterations) {
                throw Error(ErrorCode::NoConvergence,
                            "nnls exceeded " + std::to_string(max_iterations) + " iterations");
            }
            solve_passive(s);
            if (s(enter) <= 0.0 && out.x(enter) == 0.0) {
                // rounding made the entering column useless; skip it this round
                passive[static_cast<std::size_t>(enter)] = false;
                blocked[static_cast<std::size_t>(enter)] = true;
                solve_passive(s);
                if (s.minCoeff() >= 0.0) break;
            }
            bool feasible = true;
            for (Eigen::Index i = 0; i < k; ++i) {
                if (passive[static_cast<std::size_t>(i)] && s(i) <= 0.0) feasible = false;
            }
            if (feasible) break;

            double alpha = 1.0;
            Eigen::Index leave = -1;
            for (Eigen::Index i = 0; i < k; ++i) {
                if (passive[static_cast<std::size_t>(i)] && s(i) <= 0.0) {
                    const double step = out.x(i) / (out.x(i) - s(i));
                    if (step < alpha) {
                        alpha = step;
                        leave = i;
                    }
                }
            }
            out.x += alpha * (s - out.x);
            if (leave >= 0) out.x(leave) = 0.0;
            for (Eigen::Index i = 0; i < k; ++i) {
                if (passive[static_cast<std::size_t>(i)] && out.x(i) <= 0.0) {
                    passive[static_cast<std::size_t>(i)] = false;
                    out.x(i) = 0.0;
                }
            }
        }
        for (Eigen::Index i = 0; i < k; ++i) {
            out.x(i) = passive[static_cast<std::size_t>(i)] ? s(i) : 0.0;
        }
        if (passive[static_cast<std::size_t>(enter)]) std::fill(blocked.begin(), blocked.end(), false);
        w = a.transpose() * (b - a * out.x);
    }
    return out;
}

namespace {

std::size_t iteration_cap(const Matrix& a) {
    return 10 * static_cast<std::size_t>(a.cols()) * static_cast<std::size_t>(a.rows());
}

}  // namespace

Vector project_cone(const Cone& cone, const Vector& p) {
    require(p.size() == static_cast<Eigen::Index>(cone.dim()), ErrorCode::DimensionMismatch,
            "projection input has length " + std::to_string(p.size()) + ", cone dimension is " +
                std::to_string(cone.dim()));
    switch (cone.kind()) {
        case ConeKind::FullSpace:
            return p;
        case ConeKind::Orthant:
            return p.cwiseMax(0.0);
        case ConeKind::Generated: {
            if (p.isZero(0.0)) return Vector::Zero(p.size());
            const Matrix& g = cone.generators();
            return g * solve_nnls(g, p, iteration_cap(g)).x;
        }
    }
    return p;
}

TransformedConePoint project_transformed(const Cone& cone, const Matrix& sigma, const Vector& a) {
    require(sigma.rows() == static_cast<Eigen::Index>(cone.dim()), ErrorCode::DimensionMismatch,
            "sigma rows must equal the cone dimension");
    require(a.size() == sigma.cols(), ErrorCode::DimensionMismatch, "projected vector length must equal sigma cols");
    TransformedConePoint out;
    if (a.isZero(0.0)) {
        out.xi = Vector::Zero(a.size());
        out.gamma_min = Vector::Zero(sigma.rows());
        return out;
    }
    switch (cone.kind()) {
        case ConeKind::FullSpace: {
            Eigen::LLT<Matrix> gram(sigma * sigma.transpose());
            require(gram.info() == Eigen::Success, ErrorCode::SingularGram, "sigma sigma' is not positive definite");
            out.gamma_min = gram.solve(sigma * a);
            break;
        }
        case ConeKind::Orthant: {
            const Matrix st = sigma.transpose();
            out.gamma_min = solve_nnls(st, a, iteration_cap(st)).x;
            break;
        }
        case ConeKind::Generated: {
            const Matrix sg = sigma.transpose() * cone.generators();
            out.gamma_min = cone.generators() * solve_nnls(sg, a, iteration_cap(sg)).x;
            break;
        }
    }
    out.xi = sigma.transpose() * out.gamma_min;
    out.dist_sq = (a - out.xi).squaredNorm();
    return out;
}

double cone_inf_quadratic(const Cone& cone, const Matrix& sigma, const Vector& a) {
    return project_transformed(cone, sigma, a).dist_sq - a.squaredNorm();
}

}  // namespace mmv
