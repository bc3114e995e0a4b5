#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include <Eigen/Dense>

// Reference projections that share no code with the library solver.
namespace mmv::testing {

// Coefficients lambda >= 0 of the projection of p onto cone(G), by
// enumerating every subset of generators: the optimum is the unconstrained
// least-squares fit on some face whose coefficients are all nonnegative.
inline Eigen::VectorXd face_coefficients(const Eigen::MatrixXd& g, const Eigen::VectorXd& p) {
    const auto k = static_cast<int>(g.cols());
    Eigen::VectorXd best = Eigen::VectorXd::Zero(k);
    double best_dist = p.squaredNorm();
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        std::vector<int> cols;
        for (int j = 0; j < k; ++j)
            if (mask & (1u << j)) cols.push_back(j);
        Eigen::MatrixXd sub(g.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) sub.col(static_cast<Eigen::Index>(c)) = g.col(cols[c]);
        const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
        if (qr.rank() < sub.cols()) continue;
        const Eigen::VectorXd coef = qr.solve(p);
        if (coef.minCoeff() < -1e-13) continue;
        const double d = (sub * coef - p).squaredNorm();
        if (d < best_dist - 1e-15) {
            best_dist = d;
            best.setZero();
            for (std::size_t c = 0; c < cols.size(); ++c) best(cols[c]) = std::max(0.0, coef(static_cast<Eigen::Index>(c)));
        }
    }
    return best;
}

inline Eigen::VectorXd face_projection(const Eigen::MatrixXd& g, const Eigen::VectorXd& p) {
    return g * face_coefficients(g, p);
}

// Grid search over {G lambda : lambda in [lo, cap]^k}: a coarse sweep of the
// whole box, then finer grids around the winner down to spacing `step`. A
// level is repeated while its winner sits on an interior edge of the local box,
// so an elongated valley is followed rather than truncated (the objective is
// convex in lambda, so the walk ends at the optimum of the grid).
inline Eigen::VectorXd grid_projection(const Eigen::MatrixXd& g, const Eigen::VectorXd& p, double lo, double cap,
                                       double step, int coarse = 200) {
    const auto k = static_cast<int>(g.cols());
    Eigen::VectorXd best = Eigen::VectorXd::Zero(g.rows());
    double best_dist = std::numeric_limits<double>::infinity();
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(k);
    auto search = [&](const Eigen::VectorXd& from, const Eigen::VectorXd& to, double h, const Eigen::VectorXd& incumbent) {
        std::vector<long> n(k);
        for (int j = 0; j < k; ++j) n[j] = static_cast<long>(std::floor((to(j) - from(j)) / h + 1e-9)) + 1;
        std::vector<long> idx(k, 0);
        Eigen::VectorXd arg = incumbent;
        bool moved = false;
        while (true) {
            for (int j = 0; j < k; ++j) lambda(j) = from(j) + h * static_cast<double>(idx[j]);
            const double d = (g * lambda - p).squaredNorm();
            if (d < best_dist) {
                best_dist = d;
                best = g * lambda;
                arg = lambda;
                moved = true;
            }
            int j = 0;
            while (j < k && ++idx[j] >= n[j]) idx[j++] = 0;
            if (j == k) break;
        }
        return std::make_pair(arg, moved);
    };
    double h = std::max(step, (cap - lo) / coarse);
    Eigen::VectorXd arg =
        search(Eigen::VectorXd::Constant(k, lo), Eigen::VectorXd::Constant(k, cap), h, Eigen::VectorXd::Constant(k, lo)).first;
    while (h > step) {
        const double next = std::max(step, h / 10.0);
        for (int walk = 0; walk < 1000; ++walk) {
            const Eigen::VectorXd from = (arg.array() - 2 * h).max(lo);
            const Eigen::VectorXd to = (arg.array() + 2 * h).min(cap);
            const auto [a, moved] = search(from, to, next, arg);
            const bool on_edge = ((a - from).array().abs() < 0.5 * next && from.array() > lo).any() ||
                                 ((to - a).array().abs() < 0.5 * next && to.array() < cap).any();
            arg = a;
            if (!moved || !on_edge) break;
        }
        h = next;
    }
    return best;
}

}  // namespace mmv::testing
