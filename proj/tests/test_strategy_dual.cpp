#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mmv/bsde_engine.hpp"
#include "mmv/errors.hpp"
#include "mmv/strategy_dual.hpp"
#include "support.hpp"

using namespace mmv;

namespace {

struct Solved {
    MarketModel model;
    Cone cone;
    BsdeSolution y, p1, p2;
};

Solved solve_all(const MarketModel& model, const Cone& cone, std::size_t steps = 1000) {
    return {model, cone, solve_deterministic(model, cone, Equation::Y, steps),
            solve_deterministic(model, cone, Equation::P1, steps), solve_deterministic(model, cone, Equation::P2, steps)};
}

// sup over gamma of J(K, gamma) by a dense grid plus the approach to x h0 from below
double brute_force_f(const DualCurve& c, double k) {
    const double k0 = c.x() * c.h0();
    double best = -std::numeric_limits<double>::infinity();
    for (int i = -200000; i <= 200000; ++i) {
        const double g = k0 + 1e-4 * i;
        best = std::max(best, c.j(k, g));
    }
    return std::max(best, c.j1(k, k0));  // limit of J1 as gamma -> x h0 from below
}

std::string tmp_dir() {
    const char* env = std::getenv("MMV_TEST_TMP");
    const std::string dir = std::string(env ? env : "/tmp") + "/strategy_dual";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("instance A feedback strategies against closed forms") {
    const Solved a = solve_all(testing::instance_a(), Cone::full_space(1));
    const FeedbackStrategy mmv = mmv_feedback(a.model, a.cone, a.y);
    const FeedbackStrategy mv = mv_feedback(a.model, a.cone, a.p1, a.p2);
    const double h0 = std::exp(0.02);
    const double a_const = h0 + std::exp(0.09);

    CHECK(std::abs(*mmv.a_const() - a_const) <= 1e-8);
    CHECK(std::abs(*mv.gamma_hat() - a_const) <= 1e-8);
    CHECK(std::abs(*mmv.a_const() - *mv.gamma_hat()) <= 1e-10);

    // pi_hat(0, 1) = ((a - h0)/(h0 Y0)) (sigma sigma')^{-1} sigma (0.3 Y0) = 1.5 (a/h0 - 1)
    const double pi_hand = 1.5 * (a_const / h0 - 1.0);
    CHECK(std::abs(mmv.portfolio(0.0, 1.0)(0) - pi_hand) <= 1e-8);
    CHECK(std::abs(mv.portfolio(0.0, 1.0)(0) - pi_hand) <= 1e-8);
    CHECK(std::abs(mv.optimal_one_sided(0.0, 1.0)(0) - pi_hand) <= 1e-8);
    CHECK(std::abs(mv.xi2(0.3)(0) - 1.5) <= 1e-8);
    CHECK(std::abs(mmv.xi(0.3)(0) - 0.3 * std::exp(0.09 * 0.7)) <= 1e-8);

    // zero wealth gap
    for (double t : {0.0, 0.4, 1.0}) {
        CHECK(mmv.portfolio(t, *mmv.a_const() / a.model.discount_h(t)).norm() == 0.0);
        CHECK(mv.optimal_one_sided(t, *mv.gamma_hat() / a.model.discount_h(t)).norm() <= 1e-15);
    }
    // degree-1 homogeneity in the gap
    const double t = 0.37;
    const double pivot = *mmv.a_const() / a.model.discount_h(t);
    const double g1 = mmv.portfolio(t, pivot - 0.4)(0);
    const double g2 = mmv.portfolio(t, pivot - 0.8)(0);
    CHECK(g2 == doctest::Approx(2.0 * g1).epsilon(1e-14));

    // adversary: eta_hat = -phi
    const AdversaryMap eta = mmv_adversary(a.y, a.cone, a.model);
    for (double s : {0.0, 0.5, 0.99}) CHECK(std::abs(eta(s)(0) + 0.3) <= 1e-12);

    CHECK(std::abs(mmv_value(a.model, a.y) - (h0 + (std::exp(0.09) - 1.0) / 2.0)) <= 1e-8);
}

TEST_CASE("instance B: no trade") {
    const Solved b = solve_all(testing::instance_b(), Cone::orthant(1), 200);
    const FeedbackStrategy mmv = mmv_feedback(b.model, b.cone, b.y);
    const FeedbackStrategy mv = mv_feedback(b.model, b.cone, b.p1, b.p2);
    for (double t : {0.0, 0.5, 1.0}) {
        for (double x : {0.0, 1.0, 1.9}) {
            CHECK(mmv.portfolio(t, x).norm() == 0.0);
            CHECK(mv.optimal_one_sided(t, x).norm() == 0.0);
        }
        CHECK(mv.xi2(t).norm() == 0.0);
        CHECK(mmv_adversary(b.y, b.cone, b.model)(t).norm() <= 1e-12);
    }
    CHECK(std::abs(mmv_value(b.model, b.y) - std::exp(0.02)) <= 1e-12);
}

TEST_CASE("adversary in the unconstrained square case is -sigma^{-1} mu") {
    ModelSpec s;
    s.m = 2;
    s.n = 2;
    s.rate = PiecewiseRate::constant(0.01, 1.0);
    Matrix sigma(2, 2);
    sigma << 0.25, 0.1, -0.05, 0.3;
    Vector mu(2);
    mu << 0.05, 0.04;
    s.coefficients = CoefficientField::constant(mu, sigma);
    const MarketModel model = MarketModel::build(s);
    const BsdeSolution y = solve_deterministic(model, Cone::full_space(2), Equation::Y, 200);
    const Vector expected = -sigma.fullPivLu().solve(mu);
    const AdversaryMap eta = mmv_adversary(y, Cone::full_space(2), model);
    for (double t : {0.0, 0.3, 0.8}) CHECK((eta(t) - expected).norm() <= 1e-12);

    // Z = 0 in the full space: eta_hat does not depend on Y
    const auto ones = BsdeSolution::from_grid(Equation::Y, {0.0, 1.0}, {3.0, 1.0}, {Vector::Zero(2), Vector::Zero(2)}, {0.5, 4.0});
    const AdversaryMap eta_other = mmv_adversary(ones, Cone::full_space(2), model);
    CHECK((eta_other(0.2) - expected).norm() <= 1e-12);
}

TEST_CASE("riskless value when Y0 = 1 and r = 0") {
    const MarketModel m = testing::instance_a(0.0);
    const auto one = BsdeSolution::from_grid(Equation::Y, {0.0, 1.0}, {1.0, 1.0}, {Vector::Zero(1), Vector::Zero(1)}, {0.5, 2.0});
    CHECK(mmv_value(m, one) == m.x0());
}

TEST_CASE("dual curve, instance A") {
    const double h0 = std::exp(0.02);
    const double p2 = std::exp(-0.05);
    const DualCurve c = dual_curve(p2, p2, h0, 1.0, 1.0);
    const double k_hat = h0 + std::exp(0.09) - 1.0;
    CHECK(c.k_hat() == doctest::Approx(k_hat).epsilon(1e-14));
    CHECK(std::abs(c.k_hat() - 1.11437562) <= 1e-8);
    CHECK(c.f(c.k_hat()).value() == doctest::Approx(std::exp(0.09) - 1.0).epsilon(1e-12));
    CHECK(std::abs(c.objective(c.k_hat()).value() - 1.06728848) <= 1e-8);
    CHECK(std::abs(c.mv_value() - 1.06728848) <= 1e-8);
    CHECK(c.objective(c.k_hat()).value() == doctest::Approx(c.mv_value()).epsilon(1e-14));

    // breakpoint
    CHECK(c.f(h0) == ExtendedReal::finite(0.0));
    CHECK(c.gamma_hat(h0) == ExtendedReal::finite(h0));
    CHECK(c.j1_leading() < 0.0);
    CHECK(c.j2_leading() < 0.0);
    CHECK(c.k_hat() >= h0);
    CHECK(std::abs(c.gamma_hat(c.k_hat()).value() - (h0 + h0 * h0 / p2)) <= 1e-12);
}

TEST_CASE("F(K) is the supremum of J over gamma") {
    const DualCurve c = dual_curve(0.8, 0.9, 1.03, 1.2, 2.0);
    for (double k : {0.2, 0.9, 1.236, 1.3, 1.8, 2.5}) {
        const double brute = brute_force_f(c, k);
        CHECK(c.f(k).value() == doctest::Approx(brute).epsilon(1e-6));
        CHECK(c.f(k).value() >= brute - 1e-9);
        const ExtendedReal g = c.gamma_hat(k);
        // gamma_hat(K) attains the supremum
        CHECK(c.j(k, g.value()) == doctest::Approx(c.f(k).value()).epsilon(1e-10));
    }
}

TEST_CASE("boundary case P_i0 = h0^2") {
    const double h0 = 1.02;
    const double h2 = h0 * h0;
    const DualCurve c = dual_curve(0.9, h2 - 5e-11, h0, 1.0, 1.0);
    CHECK(c.p2_at_bound());
    CHECK_FALSE(c.p1_at_bound());
    CHECK(c.f(h0 + 0.1) == ExtendedReal::plus_infinity());
    CHECK(c.gamma_hat(h0 + 0.1) == ExtendedReal::plus_infinity());
    CHECK(c.objective(h0 + 0.1) == ExtendedReal::minus_infinity());
    CHECK(c.mv_value() == h0);
    CHECK(c.k_hat() == h0);
    CHECK(c.f(h0 - 0.1).is_finite());

    const DualCurve d = dual_curve(h2, 0.9, h0, 1.0, 1.0);
    CHECK(d.f(h0 - 0.1) == ExtendedReal::plus_infinity());
    CHECK(d.gamma_hat(h0 - 0.1) == ExtendedReal::minus_infinity());

    try {
        dual_curve(0.9, h2 + 1e-6, h0, 1.0, 1.0);
        FAIL("expected InvalidBound");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidBound);
    }
    CHECK_THROWS_AS(ExtendedReal::plus_infinity().value(), Error);
}

TEST_CASE("extended reals are totally ordered") {
    const auto lo = ExtendedReal::minus_infinity();
    const auto hi = ExtendedReal::plus_infinity();
    const auto a = ExtendedReal::finite(-1e300);
    const auto b = ExtendedReal::finite(2.0);
    CHECK(lo < a);
    CHECK(a < b);
    CHECK(b < hi);
    CHECK_FALSE(hi < hi);
    CHECK_FALSE(b < a);
    CHECK(hi.to_string() == "+inf");
    CHECK(lo.to_string() == "-inf");
    CHECK(b.to_string() == "2");
}

TEST_CASE("mv_feedback refuses P2_0 above h0^2") {
    const MarketModel a = testing::instance_a();
    const auto p1 = solve_deterministic(a, Cone::full_space(1), Equation::P1, 100);
    const auto big = BsdeSolution::from_grid(Equation::P2, {0.0, 1.0}, {1.2, 1.0}, {Vector::Zero(1), Vector::Zero(1)}, {0.5, 2.0});
    try {
        mv_feedback(a, Cone::full_space(1), p1, big);
        FAIL("expected InvalidBound");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidBound);
    }
}

TEST_CASE("membership and equivalence for a binding two-asset orthant") {
    const Solved s = solve_all(testing::two_asset_model(), Cone::orthant(2), 1000);
    const FeedbackStrategy mmv = mmv_feedback(s.model, s.cone, s.y);
    const FeedbackStrategy mv = mv_feedback(s.model, s.cone, s.p1, s.p2);
    CHECK(std::abs(*mmv.a_const() - *mv.gamma_hat()) <= 1e-10);
    bool binds = false;
    for (double t = 0.0; t <= 1.0; t += 0.05) {
        const double h = s.model.discount_h(t);
        for (double x = -1.0; x <= *mv.gamma_hat() / h; x += 0.25) {
            const Vector p = mmv.portfolio(t, x);
            const Vector q = mv.portfolio(t, x);
            CHECK(s.cone.contains(p, 1e-10));
            CHECK(s.cone.contains(q, 1e-10));
            CHECK((p - q).cwiseAbs().maxCoeff() <= 1e-8);
            binds = binds || (p(1) == 0.0 && p(0) > 0.0);
        }
        // xi lies in sigma' Gamma: xi = sigma' pi with pi in the orthant
        const MarketPoint pt = s.model.at(t, std::nullopt);
        const Vector pi = pt.pull_back(mmv.xi(t));
        CHECK((pt.sigma.transpose() * pi - mmv.xi(t)).norm() <= 1e-10);
        CHECK(s.cone.contains(pi, 1e-10));
    }
    CHECK(binds);

    const EquivalenceReport rep = equivalence_check(mmv, mv, ProbeGrid::lattice(0.0, 1.0, 41, 0.0, 2.0, 41));
    CHECK(rep.max_gap <= 1e-8);
    CHECK(rep.value_gap <= 1e-8);
}

TEST_CASE("equivalence_check, instance A on the 101 x 101 lattice") {
    const Solved a = solve_all(testing::instance_a(), Cone::full_space(1));
    const EquivalenceReport rep = equivalence_check(mmv_feedback(a.model, a.cone, a.y),
                                                    mv_feedback(a.model, a.cone, a.p1, a.p2),
                                                    ProbeGrid::lattice(0.0, 1.0, 101, 0.0, 2.0, 101));
    CHECK(rep.rows.size() == 101 * 101);
    CHECK(rep.max_gap <= 1e-8);
    CHECK(rep.value_gap <= 1e-8);
    CHECK(std::abs(rep.value_mmv - 1.06728848) <= 1e-8);
    CHECK(rep.bootstrap_replicates == 0);

    const std::string dir = tmp_dir();
    rep.write_csv(dir + "/eq.csv");
    rep.write_json(dir + "/eq.json");
    std::ifstream in(dir + "/eq.json");
    const auto j = nlohmann::json::parse(in);
    for (const char* key : {"value_mmv", "value_mv", "max_gap", "gamma_hat", "K_hat"}) CHECK(j.contains(key));
    std::ifstream csv(dir + "/eq.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("t,X,", 0) == 0);
    CHECK(header.find("abs_gap") != std::string::npos);
}

TEST_CASE("equivalence_check, instance B is identically zero") {
    const Solved b = solve_all(testing::instance_b(), Cone::orthant(1), 200);
    const EquivalenceReport rep = equivalence_check(mmv_feedback(b.model, b.cone, b.y),
                                                    mv_feedback(b.model, b.cone, b.p1, b.p2),
                                                    ProbeGrid::lattice(0.0, 1.0, 11, 0.0, 2.0, 11));
    CHECK(rep.max_gap == 0.0);
    for (const auto& row : rep.rows) {
        CHECK(row.pi_mmv.norm() == 0.0);
        if (row.on_manifold) CHECK(row.pi_mv.norm() == 0.0);
    }
    // above gamma_hat / h the MV rule switches to xi_1, which need not vanish
    CHECK(rep.max_gap_off_manifold > 0.0);
}
