#include "mmv/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mmv/errors.hpp"

namespace mmv {

using nlohmann::json;

namespace json_field {

namespace {

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': " + what);
}

std::string child(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) fail(where, "expected a number, got " + std::string(v.type_name()));
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(where, "must be finite");
    return d;
}

}  // namespace

const json& member(const json& obj, const std::string& key, const std::string& where) {
    if (!obj.is_object()) fail(where, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) fail(child(where, key), "is required");
    return *it;
}

double number(const json& obj, const std::string& key, const std::string& where) {
    return as_number(member(obj, key, where), child(where, key));
}

double number_or(const json& obj, const std::string& key, double fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    return as_number(obj.at(key), child(where, key));
}

std::size_t count(const json& obj, const std::string& key, const std::string& where) {
    const json& v = member(obj, key, where);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(child(where, key), "expected a nonnegative integer");
    return v.get<std::size_t>();
}

std::size_t count_or(const json& obj, const std::string& key, std::size_t fallback, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    return count(obj, key, where);
}

std::string text(const json& obj, const std::string& key, const std::string& where) {
    const json& v = member(obj, key, where);
    if (!v.is_string()) fail(child(where, key), "expected a string");
    return v.get<std::string>();
}

Vector vector(const json& v, std::size_t len, const std::string& where) {
    if (!v.is_array()) fail(where, "expected an array of " + std::to_string(len) + " numbers");
    if (v.size() != len) fail(where, "expected length " + std::to_string(len) + ", got " + std::to_string(v.size()));
    Vector out(static_cast<Eigen::Index>(len));
    for (std::size_t i = 0; i < len; ++i) out(static_cast<Eigen::Index>(i)) = as_number(v[i], where + "[" + std::to_string(i) + "]");
    return out;
}

Matrix matrix(const json& v, std::size_t rows, std::size_t cols, const std::string& where) {
    if (!v.is_array() || v.size() != rows) {
        fail(where, "expected " + std::to_string(rows) + " rows of " + std::to_string(cols) + " numbers");
    }
    Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows; ++i) {
        out.row(static_cast<Eigen::Index>(i)) = vector(v[i], cols, where + "[" + std::to_string(i) + "]").transpose();
    }
    return out;
}

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) fail(where, "expected an object");
    for (const auto& [key, _] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            fail(child(where, key), "unknown field");
        }
    }
}

}  // namespace json_field

namespace {

using namespace json_field;

PiecewiseRate parse_rate(const json& v, double horizon, const std::string& where) {
    if (v.is_number()) return PiecewiseRate::constant(v.get<double>(), horizon);
    if (!v.is_array() || v.empty()) {
        throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': expected a number or a nonempty array of {until, value}");
    }
    std::vector<RateSegment> segs;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string at = where + "[" + std::to_string(i) + "]";
        only_keys(v[i], {"until", "value"}, at);
        segs.push_back({number(v[i], "until", at), number(v[i], "value", at)});
    }
    try {
        return PiecewiseRate(std::move(segs));
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': " + e.what());
    }
}

CoefficientField parse_coefficients(const json& v, std::size_t m, std::size_t n, const std::string& where) {
    const std::string kind = text(v, "kind", where);
    if (kind == "deterministic") {
        only_keys(v, {"kind", "knots", "mu", "sigma"}, where);
        if (!v.contains("knots")) {
            return CoefficientField::constant(vector(member(v, "mu", where), m, where + ".mu"),
                                              matrix(member(v, "sigma", where), m, n, where + ".sigma"));
        }
        const json& knots = member(v, "knots", where);
        const json& mu = member(v, "mu", where);
        const json& sigma = member(v, "sigma", where);
        if (!knots.is_array() || knots.empty()) {
            throw Error(ErrorCode::ConfigInvalid, "field '" + where + ".knots': expected a nonempty array");
        }
        const std::size_t k = knots.size();
        if (!mu.is_array() || mu.size() != k || !sigma.is_array() || sigma.size() != k) {
            throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': mu and sigma need one entry per knot");
        }
        std::vector<double> t;
        std::vector<Vector> mus;
        std::vector<Matrix> sigmas;
        for (std::size_t i = 0; i < k; ++i) {
            const std::string idx = "[" + std::to_string(i) + "]";
            if (!knots[i].is_number()) throw Error(ErrorCode::ConfigInvalid, "field '" + where + ".knots" + idx + "': expected a number");
            t.push_back(knots[i].get<double>());
            mus.push_back(vector(mu[i], m, where + ".mu" + idx));
            sigmas.push_back(matrix(sigma[i], m, n, where + ".sigma" + idx));
        }
        try {
            return CoefficientField::deterministic(std::move(t), std::move(mus), std::move(sigmas));
        } catch (const Error& e) {
            throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': " + e.what());
        }
    }
    if (kind == "markov_factor") {
        only_keys(v, {"kind", "factor", "mu", "sigma"}, where);
        const std::string fw = where + ".factor";
        const json& fj = member(v, "factor", where);
        only_keys(fj, {"kappa", "level", "vol", "driver", "initial", "clamp"}, fw);
        FactorDynamics fd;
        fd.kappa = number(fj, "kappa", fw);
        fd.level = number(fj, "level", fw);
        fd.vol = number(fj, "vol", fw);
        fd.driver = count(fj, "driver", fw);
        fd.initial = number_or(fj, "initial", fd.level, fw);
        if (fd.driver >= n) throw Error(ErrorCode::ConfigInvalid, "field '" + fw + ".driver': must be < n");
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        if (fj.contains("clamp")) {
            const Vector c = vector(fj.at("clamp"), 2, fw + ".clamp");
            lo = c(0);
            hi = c(1);
            if (!(lo <= hi)) throw Error(ErrorCode::ConfigInvalid, "field '" + fw + ".clamp': need lo <= hi");
        }
        const std::string mw = where + ".mu";
        const json& mj = member(v, "mu", where);
        only_keys(mj, {"base", "slope"}, mw);
        const Vector mu_base = vector(member(mj, "base", mw), m, mw + ".base");
        const Vector mu_slope = mj.contains("slope") ? vector(mj.at("slope"), m, mw + ".slope") : Vector::Zero(static_cast<Eigen::Index>(m));
        const std::string sw = where + ".sigma";
        const json& sj = member(v, "sigma", where);
        only_keys(sj, {"base", "slope"}, sw);
        const Matrix s_base = matrix(member(sj, "base", sw), m, n, sw + ".base");
        const Matrix s_slope = sj.contains("slope") ? matrix(sj.at("slope"), m, n, sw + ".slope")
                                                    : Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
        // affine in the clamped factor; clamping keeps the coefficients bounded
        VectorMap mu_map = [=](double, double f) -> Vector { return mu_base + std::clamp(f, lo, hi) * mu_slope; };
        MatrixMap sigma_map = [=](double, double f) -> Matrix { return s_base + std::clamp(f, lo, hi) * s_slope; };
        try {
            return CoefficientField::markov_factor(fd, std::move(mu_map), std::move(sigma_map));
        } catch (const Error& e) {
            throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': " + e.what());
        }
    }
    throw Error(ErrorCode::ConfigInvalid,
                "field '" + where + ".kind': unknown coefficient kind '" + kind + "' (deterministic or markov_factor)");
}

}  // namespace

Cone parse_cone(const json& v, std::size_t m, const std::string& where) {
    const std::string kind = text(v, "kind", where);
    if (kind == "full") {
        only_keys(v, {"kind"}, where);
        return Cone::full_space(m);
    }
    if (kind == "orthant") {
        only_keys(v, {"kind"}, where);
        return Cone::orthant(m);
    }
    if (kind == "generated") {
        only_keys(v, {"kind", "G"}, where);
        const json& g = member(v, "G", where);
        if (!g.is_array() || g.empty()) {
            throw Error(ErrorCode::ConfigInvalid, "field '" + where + ".G': expected a nonempty list of generators");
        }
        // each entry is one generator (a column of G)
        Matrix gm(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(g.size()));
        for (std::size_t k = 0; k < g.size(); ++k) {
            gm.col(static_cast<Eigen::Index>(k)) = vector(g[k], m, where + ".G[" + std::to_string(k) + "]");
        }
        return Cone::generated(std::move(gm));
    }
    throw Error(ErrorCode::ConfigInvalid, "field '" + where + ".kind': unknown cone kind '" + kind + "' (full, orthant, generated)");
}

ModelConfig parse_model(const json& doc, const std::string& where) {
    only_keys(doc, {"m", "n", "T", "x0", "theta", "delta", "rate", "coefficients", "cone", "probe"}, where);
    ModelSpec spec;
    spec.m = count(doc, "m", where);
    spec.n = count(doc, "n", where);
    if (spec.m == 0 || spec.n == 0) throw Error(ErrorCode::ConfigInvalid, "field '" + where + ".m': m and n must be positive");
    spec.horizon = number(doc, "T", where);
    spec.x0 = number(doc, "x0", where);
    spec.theta = number(doc, "theta", where);
    spec.delta = number_or(doc, "delta", spec.delta, where);
    spec.rate = parse_rate(member(doc, "rate", where), spec.horizon, where + ".rate");
    if (spec.m <= spec.n) {
        spec.coefficients = parse_coefficients(member(doc, "coefficients", where), spec.m, spec.n, where + ".coefficients");
    }
    if (doc.contains("probe")) {
        const std::string pw = where + ".probe";
        only_keys(doc.at("probe"), {"times", "factors"}, pw);
        spec.probe_times = count_or(doc.at("probe"), "times", spec.probe_times, pw);
        spec.probe_factors = count_or(doc.at("probe"), "factors", spec.probe_factors, pw);
    }
    Cone cone = doc.contains("cone") ? parse_cone(doc.at("cone"), spec.m, where + ".cone") : Cone::full_space(spec.m);
    return {std::move(spec), std::move(cone)};
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::ConfigInvalid, "cannot open config file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigInvalid, "malformed JSON in '" + path + "': " + e.what());
    }
}

}  // namespace mmv
