#pragma once

#include <algorithm>
#include <cmath>

#include "mmv/cone_geometry.hpp"
#include "mmv/market_model.hpp"

namespace mmv::testing {

// m = n = 1, r = 0.02, mu = 0.06, sigma = 0.2, T = x = theta = 1.
inline ModelSpec scalar_spec(double mu, double r = 0.02) {
    ModelSpec s;
    s.m = 1;
    s.n = 1;
    s.horizon = 1.0;
    s.x0 = 1.0;
    s.theta = 1.0;
    s.delta = 1e-6;
    s.rate = PiecewiseRate::constant(r, 1.0);
    s.coefficients = CoefficientField::constant(Vector::Constant(1, mu), Matrix::Constant(1, 1, 0.2));
    return s;
}

inline MarketModel instance_a(double r = 0.02) { return MarketModel::build(scalar_spec(0.06, r)); }
inline MarketModel instance_b() { return MarketModel::build(scalar_spec(-0.06)); }

// One asset, two Brownian motions; mu = 0.2 clamp(F, 0, 0.6) with an OU
// factor on the second Brownian component.
inline ModelSpec instance_c_spec(double vol = 0.1) {
    ModelSpec s;
    s.m = 1;
    s.n = 2;
    s.horizon = 1.0;
    s.x0 = 1.0;
    s.theta = 1.0;
    s.delta = 1e-6;
    s.rate = PiecewiseRate::constant(0.02, 1.0);
    FactorDynamics fd;
    fd.kappa = 1.0;
    fd.level = 0.3;
    fd.vol = vol;
    fd.driver = 1;
    fd.initial = 0.3;
    Matrix sigma(1, 2);
    sigma << 0.16, 0.12;
    s.coefficients = CoefficientField::markov_factor(
        fd, [](double, double f) { return Vector::Constant(1, 0.2 * std::clamp(f, 0.0, 0.6)); },
        [sigma](double, double) { return sigma; });
    return s;
}

inline MarketModel instance_c(double vol = 0.1) { return MarketModel::build(instance_c_spec(vol)); }

// Two assets on two Brownian motions with time-varying coefficients; under the
// orthant the second asset's short position is cut off early on.
inline MarketModel two_asset_model() {
    ModelSpec s;
    s.m = 2;
    s.n = 2;
    s.x0 = 1.3;
    s.theta = 0.7;
    s.rate = PiecewiseRate({{0.4, 0.01}, {1.0, 0.03}});
    Matrix s0(2, 2), s1(2, 2);
    s0 << 0.3, 0.05, -0.1, 0.25;
    s1 << 0.2, 0.0, 0.05, 0.35;
    Vector m0(2), m1(2);
    m0 << 0.08, -0.03;
    m1 << 0.02, 0.06;
    s.coefficients = CoefficientField::deterministic({0.0, 1.0}, {m0, m1}, {s0, s1});
    return MarketModel::build(s);
}

}  // namespace mmv::testing
