#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "mmv/bsde_engine.hpp"
#include "mmv/errors.hpp"
#include "support.hpp"

using namespace mmv;

namespace {

Vector vec(std::initializer_list<double> xs) {
    Vector v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

MarketPoint point(const Matrix& sigma, const Vector& mu, double rate) {
    MarketPoint p;
    p.sigma = sigma;
    p.mu = mu;
    p.gram.compute(sigma * sigma.transpose());
    p.phi = sigma.transpose() * p.gram.solve(mu);
    p.rate = rate;
    return p;
}

// inf over pi = G lambda, lambda >= 0, of c pi'A pi - 2 pi'b, by enumerating
// the faces on which the stationarity system has a nonnegative solution.
double qp_oracle(const Matrix& g, const Matrix& a, const Vector& b, double c) {
    const auto k = static_cast<int>(g.cols());
    double best = 0.0;
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
        std::vector<int> cols;
        for (int j = 0; j < k; ++j)
            if (mask & (1u << j)) cols.push_back(j);
        Matrix sub(g.rows(), static_cast<Eigen::Index>(cols.size()));
        for (std::size_t s = 0; s < cols.size(); ++s) sub.col(static_cast<Eigen::Index>(s)) = g.col(cols[s]);
        const Matrix h = c * sub.transpose() * a * sub;
        const Eigen::FullPivLU<Matrix> lu(h);
        if (lu.rank() < h.rows()) continue;
        const Vector lam = lu.solve(sub.transpose() * b);
        if (lam.minCoeff() < 0.0) continue;
        const Vector pi = sub * lam;
        best = std::min(best, c * pi.dot(a * pi) - 2.0 * pi.dot(b));
    }
    return best;
}

Matrix generators_of(const Cone& cone) {
    const auto m = static_cast<Eigen::Index>(cone.dim());
    if (cone.kind() == ConeKind::Generated) return cone.generators();
    if (cone.kind() == ConeKind::Orthant) return Matrix::Identity(m, m);
    Matrix g(m, 2 * m);  // full space as the cone over +-e_i
    g << Matrix::Identity(m, m), -Matrix::Identity(m, m);
    return g;
}

// Simpson rule with n (even) panels.
template <class F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
    return s * h / 3.0;
}

// Knot-interpolated one-asset model: mu linear between knots, sigma constant.
ModelSpec knot_spec(std::vector<double> knots, std::vector<double> mus, double sigma, PiecewiseRate rate) {
    ModelSpec s = testing::scalar_spec(0.0);
    std::vector<Vector> mu;
    std::vector<Matrix> sg;
    for (double v : mus) {
        mu.push_back(Vector::Constant(1, v));
        sg.push_back(Matrix::Constant(1, 1, sigma));
    }
    s.rate = std::move(rate);
    s.coefficients = CoefficientField::deterministic(std::move(knots), std::move(mu), std::move(sg));
    return s;
}

double interp(const std::vector<double>& x, const std::vector<double>& y, double t) {
    if (t <= x.front()) return y.front();
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
        if (t <= x[i + 1]) return y[i] + (y[i + 1] - y[i]) * (t - x[i]) / (x[i + 1] - x[i]);
    }
    return y.back();
}

double bootstrap_se(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string tmp_dir() {
    const char* env = std::getenv("MMV_TEST_TMP");
    const std::string dir = std::string(env ? env : "/tmp") + "/bsde_engine";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("driver_f examples") {
    const Matrix s = Matrix::Constant(1, 1, 0.2);
    const Vector z0 = Vector::Zero(1);
    CHECK(driver_f(Cone::full_space(1), s, vec({0.3}), 1.0, z0) == doctest::Approx(0.09).epsilon(1e-14));
    CHECK(driver_f(Cone::orthant(1), s, vec({-0.3}), 1.0, z0) == 0.0);
    // xi = 0.6, f = -0.36/2 + 2*0.3*0.6
    CHECK(driver_f(Cone::orthant(1), s, vec({0.3}), 2.0, z0) == doctest::Approx(0.18).epsilon(1e-14));
    CHECK_THROWS_AS(driver_f(Cone::full_space(1), s, vec({0.3}), 0.0, z0), Error);
    try {
        driver_f_distance(Cone::full_space(1), s, vec({0.3}), -1.0, z0);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonPositiveY);
    }
}

TEST_CASE("driver forms and generators on random inputs") {
    std::mt19937_64 gen(23);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> pos(0.2, 3.0);
    double worst_forms = 0.0;
    double worst_qp = 0.0;
    double worst_closed = 0.0;
    for (int trial = 0; trial < 600; ++trial) {
        const int m = 1 + trial % 3;
        const int n = m + (trial / 3) % 2;
        Matrix sigma(m, n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) sigma(i, j) = 0.3 * nd(gen) + (i == j ? 0.5 : 0.0);
        Vector mu(m), z(n);
        for (int i = 0; i < m; ++i) mu(i) = 0.2 * nd(gen);
        for (int j = 0; j < n; ++j) z(j) = 0.3 * nd(gen);
        const double rate = 0.05 * nd(gen);
        Cone cone = Cone::full_space(m);
        if (trial % 3 == 1) cone = Cone::orthant(m);
        if (trial % 3 == 2) {
            Matrix g(m, m + 1);
            for (int i = 0; i < m; ++i)
                for (int j = 0; j <= m; ++j) g(i, j) = nd(gen);
            cone = Cone::generated(g);
        }
        const MarketPoint p = point(sigma, mu, rate);
        const double y = pos(gen);
        worst_forms = std::max(worst_forms, std::abs(driver_f(cone, sigma, p.phi, y, z) -
                                                     driver_f_distance(cone, sigma, p.phi, y, z)));

        // generator vs a direct QP over the cone in the original coordinates
        const Matrix g = generators_of(cone);
        const Matrix a = sigma * sigma.transpose();
        const Vector b = y * mu + sigma * z;
        const double inf_p = qp_oracle(g, a, b, y);    // P, P2: -2 pi'(P mu + sigma Delta)
        const double inf_p1 = qp_oracle(g, a, -b, y);  // P1: +2 pi'(P mu + sigma Delta)
        worst_qp = std::max(worst_qp, std::abs(generator(Equation::P, cone, p, y, z) - inf_p));
        worst_qp = std::max(worst_qp, std::abs(generator(Equation::P2, cone, p, y, z) - (2 * rate * y + inf_p)));
        worst_qp = std::max(worst_qp, std::abs(generator(Equation::P1, cone, p, y, z) - (2 * rate * y + inf_p1)));
        // Y: -(1/y) inf_pi [pi'A pi - 2 pi' sigma (y phi - z)] - |z|^2 / y
        const double inf_y = qp_oracle(g, a, sigma * (y * p.phi - z), 1.0);
        worst_qp = std::max(worst_qp, std::abs(generator(Equation::Y, cone, p, y, z) - (-inf_y / y - z.squaredNorm() / y)));

        if (cone.kind() == ConeKind::FullSpace) {
            const Matrix proj = sigma.transpose() * p.gram.solve(sigma);
            const Vector perp = z - proj * z;
            for (Equation eq : {Equation::Y, Equation::P, Equation::P1, Equation::P2}) {
                const double closed = full_space_generator(eq, rate, p.phi.squaredNorm(), p.phi.dot(z), z.squaredNorm(),
                                                           perp.squaredNorm(), y);
                const double ref = generator(eq, cone, p, y, z);
                worst_closed = std::max(worst_closed, std::abs(closed - ref) / (1.0 + std::abs(ref)));
            }
        }
    }
    CHECK(worst_forms <= 1e-10);
    CHECK(worst_qp <= 1e-9);
    CHECK(worst_closed <= 1e-12);
}

TEST_CASE("deterministic closed forms, instance A") {
    const MarketModel a = testing::instance_a();
    const Cone full = Cone::full_space(1);
    const BsdeSolution y = solve_deterministic(a, full, Equation::Y, 1000);
    CHECK(std::abs(y.initial_value() - std::exp(0.09)) <= 1e-8);
    CHECK(std::abs(solve_deterministic(a, full, Equation::P2, 1000).initial_value() - std::exp(-0.05)) <= 1e-8);
    CHECK(std::abs(solve_deterministic(a, full, Equation::P1, 1000).initial_value() - std::exp(-0.05)) <= 1e-8);
    // no rate term in P
    CHECK(std::abs(solve_deterministic(a, full, Equation::P, 1000).initial_value() - std::exp(-0.09)) <= 1e-8);

    // whole trajectory, terminal condition, z == 0
    for (double t : {0.0, 0.123, 0.5, 0.77, 1.0}) {
        CHECK(std::abs(y.value(t) - std::exp(0.09 * (1 - t))) <= 1e-8);
        CHECK(y.z(t).norm() == 0.0);
    }
    CHECK(y.value(1.0) == 1.0);
    CHECK_FALSE(y.is_markovian());
    CHECK(y.bounds().lower == doctest::Approx(std::exp(-0.13)));
    CHECK(y.bounds().upper == doctest::Approx(std::exp(0.13)));
    CHECK_THROWS_AS(y.value(1.2), Error);
}

TEST_CASE("no-trade orthant case, instance B") {
    const MarketModel b = testing::instance_b();
    const Cone orthant = Cone::orthant(1);
    const BsdeSolution y = solve_deterministic(b, orthant, Equation::Y, 200);
    for (double t : y.grid()) CHECK(std::abs(y.value(t) - 1.0) <= 1e-12);
    // P2 = h^2 when the driver infimum vanishes
    const BsdeSolution p2 = solve_deterministic(b, orthant, Equation::P2, 200);
    for (double t : {0.0, 0.4, 1.0}) CHECK(std::abs(p2.value(t) - std::exp(0.04 * (1 - t))) <= 1e-10);
    const BsdeSolution yt = transform_p2_to_y(p2, b.discount_factor(p2.grid()));
    for (double t : yt.grid()) CHECK(std::abs(yt.value(t) - 1.0) <= 1e-10);
}

TEST_CASE("time-dependent coefficients against quadrature") {
    // mu crosses zero at the middle knot; under the orthant only phi^+ enters Y
    const std::vector<double> knots{0.0, 0.5, 1.0};
    const std::vector<double> mus{0.10, 0.0, -0.06};
    const double sigma = 0.25;
    const PiecewiseRate rate({{0.3, 0.01}, {1.0, 0.05}});
    const MarketModel model = MarketModel::build(knot_spec(knots, mus, sigma, rate));
    auto phi = [&](double t) { return interp(knots, mus, t) / sigma; };
    auto pos_sq = [&](double t) {
        const double p = std::max(0.0, phi(t));
        return p * p;
    };

    const double y_full = std::exp(simpson([&](double t) { return phi(t) * phi(t); }, 0.0, 1.0, 2000));
    const double y_orth = std::exp(simpson(pos_sq, 0.0, 0.5, 2000));
    CHECK(std::abs(solve_deterministic(model, Cone::full_space(1), Equation::Y, 1000).initial_value() - y_full) <= 1e-9);
    CHECK(std::abs(solve_deterministic(model, Cone::orthant(1), Equation::Y, 1000).initial_value() - y_orth) <= 1e-9);

    // P2 = exp(int (2r - |phi^+|^2)) under the orthant
    const double p2 = std::exp(2 * rate.integral(0.0, 1.0) - simpson(pos_sq, 0.0, 0.5, 2000));
    const BsdeSolution p2_sol = solve_deterministic(model, Cone::orthant(1), Equation::P2, 1000);
    CHECK(std::abs(p2_sol.initial_value() - p2) <= 1e-9);
    // P1 sees -phi: only the negative part of phi enters
    const double p1 = std::exp(2 * rate.integral(0.0, 1.0) - simpson([&](double t) {
                                   const double q = std::min(0.0, phi(t));
                                   return q * q;
                               }, 0.5, 1.0, 2000));
    CHECK(std::abs(solve_deterministic(model, Cone::orthant(1), Equation::P1, 1000).initial_value() - p1) <= 1e-9);
}

TEST_CASE("grid refinement") {
    // two assets, orthant binding on one of them, time-varying coefficients
    ModelSpec s;
    s.m = 2;
    s.n = 2;
    s.rate = PiecewiseRate::constant(0.01, 1.0);
    Matrix s0(2, 2), s1(2, 2);
    s0 << 0.3, 0.05, -0.1, 0.25;
    s1 << 0.2, 0.0, 0.05, 0.35;
    s.coefficients = CoefficientField::deterministic({0.0, 1.0}, {vec({0.08, -0.03}), vec({0.02, 0.06})}, {s0, s1});
    const MarketModel model = MarketModel::build(s);
    std::vector<double> y0;
    for (std::size_t n : {10, 20, 40, 80}) y0.push_back(solve_deterministic(model, Cone::orthant(2), Equation::Y, n).initial_value());
    for (std::size_t k = 2; k < y0.size(); ++k) {
        const double prev = std::abs(y0[k - 1] - y0[k - 2]);
        const double cur = std::abs(y0[k] - y0[k - 1]);
        CHECK(cur < 4.0 * prev + 1e-15);
    }
}

TEST_CASE("cross identities, deterministic") {
    // constrained, constant coefficients
    const MarketModel model = MarketModel::build(testing::scalar_spec(0.06));
    const Cone orthant = Cone::orthant(1);
    const BsdeSolution y = solve_deterministic(model, orthant, Equation::Y, 1000);
    const BsdeSolution p2 = solve_deterministic(model, orthant, Equation::P2, 1000);
    const BsdeSolution yt = transform_p2_to_y(p2, model.discount_factor(p2.grid()));
    std::mt19937_64 gen(2);
    std::uniform_int_distribution<std::size_t> pick(0, 1000);
    CHECK(std::abs(y.initial_value() - yt.initial_value()) <= 1e-8);
    for (int k = 0; k < 10; ++k) {
        const double t = y.grid()[pick(gen)];
        CHECK(std::abs(y.value(t) - yt.value(t)) <= 1e-8);
    }
    // with r = 0, Y = 1/P, and transform_p2_to_y reduces to transform_p_to_y
    const MarketModel zero_rate = testing::instance_a(0.0);
    const BsdeSolution y0 = solve_deterministic(zero_rate, orthant, Equation::Y, 1000);
    const BsdeSolution p = solve_deterministic(zero_rate, orthant, Equation::P, 1000);
    const BsdeSolution inv = transform_p_to_y(p);
    CHECK(std::abs(p.initial_value() - std::exp(-0.09)) <= 1e-8);
    CHECK(std::abs(inv.initial_value() - std::exp(0.09)) <= 1e-8);
    // P2 coincides with P when r = 0
    const BsdeSolution p2_zero = solve_deterministic(zero_rate, orthant, Equation::P2, 1000);
    const BsdeSolution via_p2 = transform_p2_to_y(p2_zero, zero_rate.discount_factor(p2_zero.grid()));
    for (int k = 0; k < 10; ++k) {
        const double t = y0.grid()[pick(gen)];
        CHECK(std::abs(y0.value(t) - inv.value(t)) <= 1e-8);
        CHECK(std::abs(p2_zero.value(t) - p.value(t)) <= 1e-14);
        CHECK(std::abs(via_p2.value(t) - inv.value(t)) <= 1e-13);
    }
}

TEST_CASE("comparison bounds P_i0 <= h0^2") {
    for (const MarketModel& model : {testing::instance_a(), testing::instance_b(), MarketModel::build(testing::scalar_spec(0.06))}) {
        const double h0sq = model.discount_h(0.0) * model.discount_h(0.0);
        for (const Cone& cone : {Cone::full_space(1), Cone::orthant(1)}) {
            CHECK(solve_deterministic(model, cone, Equation::P1, 500).initial_value() <= h0sq + 1e-10);
            CHECK(solve_deterministic(model, cone, Equation::P2, 500).initial_value() <= h0sq + 1e-10);
        }
    }
}

TEST_CASE("transforms on explicit grids") {
    const SolutionBounds b{0.5, 2.0};
    SUBCASE("identity point") {
        const auto one = BsdeSolution::from_grid(Equation::P, {0.0, 1.0}, {1.0, 1.0}, {Vector::Zero(1), Vector::Zero(1)}, b);
        const BsdeSolution y = transform_p_to_y(one);
        CHECK(y.value(0.0) == 1.0);
        CHECK(y.z(0.0).norm() == 0.0);
        CHECK(y.equation() == Equation::Y);
        CHECK(y.is_transformed());
    }
    SUBCASE("arithmetic") {
        const auto p = BsdeSolution::from_grid(Equation::P, {0.0, 1.0}, {2.0, 1.0}, {vec({0.5}), vec({0.0})}, b);
        const BsdeSolution y = transform_p_to_y(p);
        CHECK(y.value(0.0) == 0.5);
        CHECK(y.value(1.0) == 1.0);
        CHECK(y.z(0.0)(0) == -0.125);
        CHECK(y.z(1.0)(0) == 0.0);
    }
    SUBCASE("wrong equation or nonpositive source") {
        const auto p2 = BsdeSolution::from_grid(Equation::P2, {0.0, 1.0}, {2.0, 1.0}, {vec({0.5}), vec({0.0})}, b);
        CHECK_THROWS_AS(transform_p_to_y(p2), Error);
        const auto bad = BsdeSolution::from_grid(Equation::P, {0.0, 1.0}, {2.0, 1.0}, {vec({0.5}), vec({0.0})}, {0.0, 2.0});
        try {
            transform_p_to_y(bad);
            FAIL("expected PositivityLost");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::PositivityLost);
        }
    }
    SUBCASE("instance A, P2 to Y") {
        const MarketModel a = testing::instance_a();
        const BsdeSolution p2 = solve_deterministic(a, Cone::full_space(1), Equation::P2, 1000);
        const BsdeSolution y = transform_p2_to_y(p2, a.discount_factor(p2.grid()));
        CHECK(std::abs(y.initial_value() - std::exp(0.04) / std::exp(-0.05)) <= 1e-8);
    }
}

TEST_CASE("solver configuration") {
    McSolverConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    McSolverConfig few = cfg;
    few.paths = 999;
    CHECK_THROWS_AS(few.validate(), Error);
    McSolverConfig deep = cfg;
    deep.basis_degree = 7;
    CHECK_THROWS_AS(deep.validate(), Error);
    McSolverConfig coarse = cfg;
    coarse.steps = 9;
    CHECK_THROWS_AS(coarse.validate(), Error);
    McSolverConfig weight = cfg;
    weight.implicit_weight = 0.4;
    CHECK_THROWS_AS(weight.validate(), Error);
    CHECK_THROWS_AS(solve_deterministic(testing::instance_a(), Cone::full_space(1), Equation::Y, 9), Error);
    CHECK_THROWS_AS(solve_deterministic(testing::instance_c(), Cone::full_space(1), Equation::Y, 100), Error);
    CHECK_THROWS_AS(solve_markovian(testing::instance_a(), Cone::full_space(1), Equation::Y, cfg), Error);
    CHECK(equation_from_string("P1") == Equation::P1);
    CHECK_THROWS_AS(equation_from_string("Q"), Error);
}

TEST_CASE("markovian solver with a frozen factor reproduces the deterministic solve") {
    // vol = 0 freezes F at 0.3: mu = 0.06, |sigma| = 0.2, the instance A market on two Brownian motions
    const MarketModel frozen = testing::instance_c(0.0);
    const Cone full = Cone::full_space(1);
    ModelSpec det = testing::scalar_spec(0.06);
    det.n = 2;
    Matrix sigma(1, 2);
    sigma << 0.16, 0.12;
    det.coefficients = CoefficientField::constant(Vector::Constant(1, 0.06), sigma);
    const MarketModel induced = MarketModel::build(det);

    McSolverConfig cfg;
    cfg.paths = 2000;
    cfg.steps = 50;
    cfg.seed = 99;
    for (Equation eq : {Equation::Y, Equation::P1, Equation::P2}) {
        const double ref = solve_deterministic(induced, full, eq, 1000).initial_value();
        const BsdeSolution mc = solve_markovian(frozen, full, eq, cfg);
        CHECK(std::abs(mc.initial_value() - ref) <= 5e-3);
        // with no factor noise the regression is exact and so is the trapezoidal step
        CHECK(std::abs(mc.initial_value() - ref) <= 1e-6);
        CHECK(mc.value(1.0, 0.3) == 1.0);
    }

    // degree 0: constant basis on constant data gives the path average, i.e. the ODE step
    McSolverConfig flat = cfg;
    flat.basis_degree = 0;
    flat.implicit_weight = 1.0;
    const BsdeSolution y = solve_markovian(frozen, full, Equation::Y, flat);
    double v = 1.0;
    for (int i = 0; i < 50; ++i) v /= 1.0 - 0.09 * 0.02;  // implicit Euler on y' = -0.09 y
    CHECK(std::abs(y.initial_value() - v) <= 1e-12);
    CHECK(y.diagnostics().clamp_events == 0);
}

TEST_CASE("markovian solver: reproducibility, diagnostics and cross identity") {
    const MarketModel c = testing::instance_c();
    const Cone full = Cone::full_space(1);
    McSolverConfig cfg;
    cfg.paths = 20000;
    cfg.steps = 50;
    cfg.seed = 314;
    cfg.bootstrap = 10;
    const BsdeSolution y = solve_markovian(c, full, Equation::Y, cfg);
    const BsdeSolution y_again = solve_markovian(c, full, Equation::Y, cfg);
    CHECK(y.initial_value() == y_again.initial_value());
    CHECK(y.initial_stderr() == y_again.initial_stderr());
    CHECK(y.is_markovian());
    CHECK(y.replicate_count() == 10);
    CHECK(y.initial_stderr() > 0.0);
    CHECK(y.initial_value() > 1.0);
    CHECK(y.diagnostics().path_steps == 20000 * 50);
    CHECK(static_cast<double>(y.diagnostics().clamp_events) <= 1e-3 * 20000 * 50);
    for (double f : {0.0, 0.3, 0.7}) CHECK(y.value(1.0, f) == 1.0);
    CHECK(y.value(0.5, 0.3) >= y.bounds().lower);
    CHECK_THROWS_AS(y.value(0.5), Error);  // factor state required

    const BsdeSolution p2 = solve_markovian(c, full, Equation::P2, cfg);
    const DiscountFactor h = c.discount_factor(p2.grid());
    const BsdeSolution yt = transform_p2_to_y(p2, h);
    auto check_at = [&](double t, double f) {
        std::vector<double> a, b;
        for (std::size_t k = 0; k < 10; ++k) {
            a.push_back(y.replicate(k).value(t, f));
            b.push_back(transform_p2_to_y(p2.replicate(k), h).value(t, f));
        }
        const double se = std::hypot(bootstrap_se(a), bootstrap_se(b));
        CHECK(std::abs(y.value(t, f) - yt.value(t, f)) <= 3.0 * se);
    };
    check_at(0.0, 0.3);
    std::mt19937_64 gen(8);
    std::uniform_int_distribution<std::size_t> pick(0, 49);
    const FactorDynamics fd = c.coefficients().factor();
    std::normal_distribution<double> nd;
    for (int k = 0; k < 10; ++k) {
        const double t = y.grid()[pick(gen)];
        check_at(t, fd.marginal_mean(t) + fd.marginal_stddev(t) * nd(gen));
    }

    const std::string dir = tmp_dir();
    y.write_csv(dir + "/y.csv");
    y.write_metadata(dir + "/y.meta.json");
    std::ifstream meta_in(dir + "/y.meta.json");
    const auto meta = nlohmann::json::parse(meta_in);
    CHECK(meta.at("equation") == "Y");
    CHECK(meta.at("seed") == 314);
    CHECK(meta.at("clamp_events") == y.diagnostics().clamp_events);
    CHECK(meta.at("grid").at("steps") == 50);
    std::ifstream csv(dir + "/y.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("t,center,scale,y_c0", 0) == 0);
}

TEST_CASE("deterministic CSV export") {
    const BsdeSolution y = solve_deterministic(testing::instance_a(), Cone::full_space(1), Equation::Y, 20);
    const std::string path = tmp_dir() + "/y_det.csv";
    y.write_csv(path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,y,z_1");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 21);
}
