#include "mmv/experiment.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mmv/errors.hpp"
#include "mmv/monte_carlo_sim.hpp"
#include "mmv/strategy_dual.hpp"

#ifndef MMV_VERSION
#define MMV_VERSION "unknown"
#endif

namespace mmv {

using nlohmann::json;
namespace fs = std::filesystem;
using namespace json_field;

const char* version_string() { return MMV_VERSION; }

json default_config() {
    return json{
        {"experiment", "solve"},
        {"output_dir", "out"},
        {"solver", {{"kind", "auto"}, {"paths", 50000}, {"basis_degree", 2}, {"bootstrap", 10}, {"implicit_weight", 0.5}}},
        {"solve", {{"equation", "Y"}}},
        {"simulate",
         {{"paths", 100000},
          {"steps", 200},
          {"policy", {{"kind", "mmv"}, {"scale", 1.0}}},
          {"adversary", {{"kind", "saddle"}}},
          {"antithetic", false},
          {"store_paths", false}}},
        {"saddle",
         {{"paths", 100000},
          {"steps", 200},
          {"pi_scales", {1.0, 0.0, 0.5, 1.5}},
          {"eta",
           json::array({{{"kind", "saddle"}},
                        {{"kind", "zero"}},
                        {{"kind", "scaled_minus_phi"}, {"c", 0.5}},
                        {{"kind", "scaled_minus_phi"}, {"c", 2.0}}})},
          {"antithetic", false},
          {"sigmas", 3.0}}},
        {"equivalence",
         {{"times", {{"from", 0.0}, {"count", 101}}},
          {"wealth", {{"from", 0.0}, {"to", 2.0}, {"count", 101}}},
          {"factors", json::array()},
          {"tolerance", 1e-8},
          {"sigmas", 3.0}}},
        {"dual_curve", {{"points", 1001}}},
    };
}

namespace {

const char* kExperiments[] = {"solve", "value", "simulate", "saddle", "equivalence", "dual-curve"};

bool uses_monte_carlo(const std::string& experiment, bool markovian) {
    return markovian || experiment == "simulate" || experiment == "saddle";
}

// Section whose paths/steps the command-line flags override.
std::string sampling_section(const std::string& experiment) {
    if (experiment == "simulate" || experiment == "saddle") return experiment;
    return "solver";
}

}  // namespace

ExperimentConfig resolve_config(const json& user, const RunOverrides& ov) {
    if (!user.is_object()) throw Error(ErrorCode::ConfigInvalid, "field '': config must be a JSON object");
    json doc = user;
    doc.erase("manifest");  // manifests are valid configs
    only_keys(doc, {"experiment", "seed", "output_dir", "model", "solver", "solve", "simulate", "saddle", "equivalence",
                    "dual_curve"},
              "");
    json resolved = default_config();
    resolved.merge_patch(doc);

    if (ov.experiment) resolved["experiment"] = *ov.experiment;
    if (ov.seed) resolved["seed"] = *ov.seed;
    if (ov.output_dir) resolved["output_dir"] = *ov.output_dir;

    ExperimentConfig cfg;
    cfg.experiment = text(resolved, "experiment", "");
    if (std::find(std::begin(kExperiments), std::end(kExperiments), cfg.experiment) == std::end(kExperiments)) {
        throw Error(ErrorCode::ConfigInvalid, "field 'experiment': unknown experiment '" + cfg.experiment +
                                                  "' (solve, value, simulate, saddle, equivalence, dual-curve)");
    }
    cfg.output_dir = text(resolved, "output_dir", "");
    cfg.model = parse_model(member(resolved, "model", ""), "model");
    cfg.markovian = cfg.model.spec.coefficients.is_markovian();

    json& solver = resolved["solver"];
    only_keys(solver, {"kind", "steps", "paths", "basis_degree", "bootstrap", "implicit_weight"}, "solver");
    std::string kind = text(solver, "kind", "solver");
    if (kind == "auto") kind = cfg.markovian ? "markovian" : "deterministic";
    if (kind != "deterministic" && kind != "markovian") {
        throw Error(ErrorCode::ConfigInvalid, "field 'solver.kind': expected auto, deterministic or markovian");
    }
    if ((kind == "markovian") != cfg.markovian) {
        throw Error(ErrorCode::ConfigInvalid, "field 'solver.kind': '" + kind + "' does not match the model coefficients");
    }
    solver["kind"] = kind;
    if (!solver.contains("steps")) solver["steps"] = cfg.markovian ? 50 : 1000;

    const std::string section = sampling_section(cfg.experiment);
    if (ov.paths) resolved[section]["paths"] = *ov.paths;
    if (ov.steps) resolved[section]["steps"] = *ov.steps;

    if (!resolved["equivalence"]["times"].contains("to")) resolved["equivalence"]["times"]["to"] = cfg.model.spec.horizon;

    if (resolved.contains("seed")) {
        const json& s = resolved["seed"];
        if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
            throw Error(ErrorCode::ConfigInvalid, "field 'seed': expected a nonnegative integer");
        }
        cfg.seed = s.get<std::uint64_t>();
    } else if (uses_monte_carlo(cfg.experiment, cfg.markovian)) {
        throw Error(ErrorCode::ConfigInvalid, "field 'seed': required when a Monte Carlo component runs (use --seed)");
    }

    // validate the sections this experiment reads
    count(solver, "steps", "solver");
    if (cfg.markovian) {
        McSolverConfig mc;
        mc.paths = count(solver, "paths", "solver");
        mc.basis_degree = count(solver, "basis_degree", "solver");
        mc.steps = count(solver, "steps", "solver");
        mc.bootstrap = count(solver, "bootstrap", "solver");
        mc.implicit_weight = number_or(solver, "implicit_weight", 0.5, "solver");
        try {
            mc.validate();
        } catch (const Error& e) {
            throw Error(ErrorCode::ConfigInvalid, std::string("field 'solver': ") + e.what());
        }
    }
    if (cfg.experiment == "solve") equation_from_string(text(resolved["solve"], "equation", "solve"));
    cfg.resolved = std::move(resolved);
    return cfg;
}

BsdeSolution solve_configured(const ExperimentConfig& cfg, const MarketModel& model, Equation eq) {
    const json& s = cfg.resolved.at("solver");
    if (!cfg.markovian) return solve_deterministic(model, cfg.model.cone, eq, s.at("steps").get<std::size_t>());
    McSolverConfig mc;
    mc.paths = s.at("paths").get<std::size_t>();
    mc.basis_degree = s.at("basis_degree").get<std::size_t>();
    mc.steps = s.at("steps").get<std::size_t>();
    mc.bootstrap = s.at("bootstrap").get<std::size_t>();
    mc.implicit_weight = s.at("implicit_weight").get<double>();
    mc.seed = cfg.seed.value_or(0);
    return solve_markovian(model, cfg.model.cone, eq, mc);
}

namespace {

double replicate_stddev(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

json value_comparison(const MarketModel& model, const BsdeSolution& y, const BsdeSolution& p1, const BsdeSolution& p2) {
    const double h0 = model.discount_h(0.0);
    const DualCurve curve = dual_curve(p1.initial_value(), p2.initial_value(), h0, model.x0(), model.theta());
    const double mmv = mmv_value(model, y);
    const double mv = curve.mv_value();
    double se = 0.0;
    const std::size_t b = std::min({y.replicate_count(), p1.replicate_count(), p2.replicate_count()});
    if (b >= 2) {
        std::vector<double> a, c;
        for (std::size_t k = 0; k < b; ++k) {
            a.push_back(mmv_value(model, y.replicate(k)));
            c.push_back(dual_curve(p1.replicate(k).initial_value(), p2.replicate(k).initial_value(), h0, model.x0(),
                                   model.theta())
                            .mv_value());
        }
        se = std::hypot(replicate_stddev(a), replicate_stddev(c));
    }
    return json{{"mmv", mmv},
                {"mv", mv},
                {"abs_diff", std::abs(mmv - mv)},
                {"combined_stderr", se},
                {"Y0", y.initial_value()},
                {"P1_0", p1.initial_value()},
                {"P2_0", p2.initial_value()},
                {"h0", h0}};
}

class Artifacts {
public:
    explicit Artifacts(const std::string& dir) : dir_(dir) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec || !fs::is_directory(dir_)) {
            throw Error(ErrorCode::ConfigInvalid, "field 'output_dir': cannot create directory '" + dir + "'");
        }
        const fs::path probe = dir_ / ".write_test";
        {
            std::ofstream t(probe);
            if (!t.good()) throw Error(ErrorCode::ConfigInvalid, "field 'output_dir': '" + dir + "' is not writable");
        }
        fs::remove(probe, ec);
        // never overwrite an earlier run: suffix every artifact with a run index
        if (fs::exists(dir_ / "manifest.json")) {
            index_ = 1;
            while (fs::exists(dir_ / ("manifest." + std::to_string(index_) + ".json"))) ++index_;
        }
    }

    std::string path(const std::string& stem, const std::string& ext) {
        const std::string name = index_ == 0 ? stem + "." + ext : stem + "." + std::to_string(index_) + "." + ext;
        files_.push_back(name);
        return (dir_ / name).string();
    }

    std::size_t index() const { return index_; }
    const std::vector<std::string>& files() const { return files_; }

private:
    fs::path dir_;
    std::size_t index_ = 0;
    std::vector<std::string> files_;
};

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

Adversary parse_adversary(const json& j, const MarketModel& model, const BsdeSolution* y, const Cone& cone,
                          const std::string& where) {
    only_keys(j, {"kind", "c", "v", "bound", "label"}, where);
    const std::string kind = text(j, "kind", where);
    const double bound = number_or(j, "bound", Adversary::kDefaultBound, where);
    const std::string label = j.contains("label") ? text(j, "label", where) : "";
    if (kind == "zero") return Adversary::zero(label.empty() ? "0" : label);
    if (kind == "scaled_minus_phi") return Adversary::scaled_minus_phi(number(j, "c", where), bound, label);
    if (kind == "constant") return Adversary::constant(vector(member(j, "v", where), model.n(), where + ".v"), bound, label);
    if (kind == "saddle") return Adversary::saddle(mmv_adversary(*y, cone, model), bound, label.empty() ? "eta_hat" : label);
    throw Error(ErrorCode::ConfigInvalid,
                "field '" + where + ".kind': unknown adversary '" + kind + "' (zero, scaled_minus_phi, constant, saddle)");
}

SimConfig sim_config(const json& s, const ExperimentConfig& cfg, const std::string& where, const std::string& stream) {
    SimConfig sc;
    sc.paths = count(s, "paths", where);
    sc.steps = count(s, "steps", where);
    sc.antithetic = s.value("antithetic", false);
    sc.store_paths = s.value("store_paths", false);
    sc.seed = cfg.seed.value_or(0);
    sc.stream = stream;
    try {
        sc.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::ConfigInvalid, "field '" + where + "': " + e.what());
    }
    return sc;
}

json run_solve(const ExperimentConfig& cfg, const MarketModel& model, Artifacts& art, bool& ok) {
    const json& sec = cfg.resolved.at("solve");
    const Equation eq = equation_from_string(text(sec, "equation", "solve"));
    const BsdeSolution sol = solve_configured(cfg, model, eq);
    const std::string stem = lower(std::string(to_string(eq))) + "_solution";
    sol.write_csv(art.path(stem, "csv"));
    sol.write_metadata(art.path(stem, "meta.json"));
    json r{{"equation", std::string(to_string(eq))}, {"initial_value", sol.initial_value()}};
    if (sol.is_markovian()) r["initial_stderr"] = sol.initial_stderr();
    if (eq == Equation::P1 || eq == Equation::P2) {
        const double h0 = model.discount_h(0.0);
        const bool bound = sol.initial_value() <= h0 * h0 + DualCurve::kBoundSlack;
        r["h0_squared"] = h0 * h0;
        r["bound_ok"] = bound;
        ok = ok && bound;
    }
    return r;
}

json run_value(const ExperimentConfig& cfg, const MarketModel& model, Artifacts& art, bool& ok) {
    json r = compare_values(cfg);
    const double se = r["combined_stderr"].get<double>();
    const double tol = cfg.markovian ? 3.0 * se : 1e-8;
    r["tolerance"] = tol;
    r["pass"] = r["abs_diff"].get<double>() <= tol;
    ok = ok && r["pass"].get<bool>();
    std::ofstream(art.path("value", "json")) << std::setprecision(17) << r.dump(2) << "\n";
    (void)model;
    return r;
}

json run_simulate(const ExperimentConfig& cfg, const MarketModel& model, Artifacts& art) {
    const json& sec = cfg.resolved.at("simulate");
    only_keys(sec, {"paths", "steps", "policy", "adversary", "antithetic", "store_paths"}, "simulate");
    const SimConfig sc = sim_config(sec, cfg, "simulate", "simulate");
    const json& pj = member(sec, "policy", "simulate");
    only_keys(pj, {"kind", "scale"}, "simulate.policy");
    const std::string pkind = text(pj, "kind", "simulate.policy");
    const double scale = number_or(pj, "scale", 1.0, "simulate.policy");
    const json& aj = member(sec, "adversary", "simulate");
    const bool need_y = pkind == "mmv" || text(aj, "kind", "simulate.adversary") == "saddle";

    std::optional<BsdeSolution> y;
    if (need_y) y = solve_configured(cfg, model, Equation::Y);
    Policy policy = Policy::zero();
    if (pkind == "mmv") {
        policy = Policy::feedback(mmv_feedback(model, cfg.model.cone, *y), scale);
    } else if (pkind == "mv") {
        const BsdeSolution p1 = solve_configured(cfg, model, Equation::P1);
        const BsdeSolution p2 = solve_configured(cfg, model, Equation::P2);
        policy = Policy::feedback(mv_feedback(model, cfg.model.cone, p1, p2), scale);
    } else if (pkind != "zero") {
        throw Error(ErrorCode::ConfigInvalid, "field 'simulate.policy.kind': expected mmv, mv or zero");
    }
    const Adversary adv = parse_adversary(aj, model, y ? &*y : nullptr, cfg.model.cone, "simulate.adversary");
    SimBatchResult batch = simulate(model, policy, adv, sc);
    if (sc.store_paths && pkind == "mmv" && scale == 1.0 && adv.kind() == AdversaryKind::Saddle) {
        batch.conservation_max_residual = conservation_residual(batch, model, *y);
    }
    batch.write_json(art.path("simulation", "json"));
    if (sc.store_paths) batch.write_trajectories_csv(art.path("trajectories", "csv"), model, y ? &*y : nullptr);
    json r{{"objective_mean", batch.objective_mean},
           {"objective_stderr", batch.objective_stderr},
           {"lambda_mean", batch.lambda_mean},
           {"lambda_stderr", batch.lambda_stderr},
           {"mean_X_T", batch.mean_x}};
    if (batch.zero_adversary) {
        const Estimate mv = mv_objective(batch, model.theta());
        r["mv_objective"] = mv.mean;
        r["mv_objective_stderr"] = mv.std_error;
    }
    if (batch.conservation_max_residual) r["conservation_max_residual"] = *batch.conservation_max_residual;
    return r;
}

json run_saddle(const ExperimentConfig& cfg, const MarketModel& model, Artifacts& art, bool& ok) {
    const json& sec = cfg.resolved.at("saddle");
    only_keys(sec, {"paths", "steps", "pi_scales", "eta", "antithetic", "sigmas"}, "saddle");
    SaddleScanConfig sc;
    sc.sim = sim_config(sec, cfg, "saddle", "saddle");
    sc.tolerance_sigmas = number_or(sec, "sigmas", 3.0, "saddle");
    const BsdeSolution y = solve_configured(cfg, model, Equation::Y);
    const FeedbackStrategy pi_hat = mmv_feedback(model, cfg.model.cone, y);

    std::vector<Policy> pis;
    const json& scales = member(sec, "pi_scales", "saddle");
    if (!scales.is_array() || scales.empty()) throw Error(ErrorCode::ConfigInvalid, "field 'saddle.pi_scales': expected a nonempty array");
    bool has_saddle_pi = false;
    for (std::size_t i = 0; i < scales.size(); ++i) {
        if (!scales[i].is_number()) throw Error(ErrorCode::ConfigInvalid, "field 'saddle.pi_scales[" + std::to_string(i) + "]': expected a number");
        const double s = scales[i].get<double>();
        if (s == 1.0 && !has_saddle_pi) {
            sc.saddle_pi = i;
            has_saddle_pi = true;
        }
        if (s == 0.0) {
            pis.push_back(Policy::zero());
        } else {
            std::ostringstream label;
            if (s == 1.0) label << "pi_hat";
            else label << s << "*pi_hat";
            pis.push_back(Policy::feedback(pi_hat, s, label.str()));
        }
    }
    std::vector<Adversary> etas;
    const json& ej = member(sec, "eta", "saddle");
    if (!ej.is_array() || ej.empty()) throw Error(ErrorCode::ConfigInvalid, "field 'saddle.eta': expected a nonempty array");
    bool has_saddle_eta = false;
    for (std::size_t j = 0; j < ej.size(); ++j) {
        etas.push_back(parse_adversary(ej[j], model, &y, cfg.model.cone, "saddle.eta[" + std::to_string(j) + "]"));
        if (etas.back().kind() == AdversaryKind::Saddle && !has_saddle_eta) {
            sc.saddle_eta = j;
            has_saddle_eta = true;
        }
    }
    if (!has_saddle_pi || !has_saddle_eta) {
        throw Error(ErrorCode::ConfigInvalid, "field 'saddle': families must contain pi_hat (scale 1) and a saddle adversary");
    }
    SaddleReport rep;
    try {
        rep = saddle_scan(model, y, pis, etas, sc);
    } catch (const SaddleViolation& v) {
        rep = v.report();
        ok = false;
    }
    rep.write_csv(art.path("saddle", "csv"));
    rep.write_json(art.path("saddle", "json"));
    return json{{"R0", rep.r0},
                {"saddle_objective", rep.cell(rep.saddle_pi, rep.saddle_eta).mean},
                {"saddle_stderr", rep.cell(rep.saddle_pi, rep.saddle_eta).std_error},
                {"passed", rep.passed()},
                {"violations", rep.violations}};
}

json run_equivalence(const ExperimentConfig& cfg, const MarketModel& model, Artifacts& art, bool& ok) {
    const json& sec = cfg.resolved.at("equivalence");
    only_keys(sec, {"times", "wealth", "factors", "tolerance", "sigmas"}, "equivalence");
    const json& tj = member(sec, "times", "equivalence");
    const json& wj = member(sec, "wealth", "equivalence");
    ProbeGrid grid = ProbeGrid::lattice(number(tj, "from", "equivalence.times"), number(tj, "to", "equivalence.times"),
                                        count(tj, "count", "equivalence.times"), number(wj, "from", "equivalence.wealth"),
                                        number(wj, "to", "equivalence.wealth"), count(wj, "count", "equivalence.wealth"));
    const json& fj = member(sec, "factors", "equivalence");
    if (!fj.is_array()) throw Error(ErrorCode::ConfigInvalid, "field 'equivalence.factors': expected an array");
    for (std::size_t i = 0; i < fj.size(); ++i) {
        if (!fj[i].is_number()) throw Error(ErrorCode::ConfigInvalid, "field 'equivalence.factors[" + std::to_string(i) + "]': expected a number");
        grid.factors.push_back(fj[i].get<double>());
    }
    const BsdeSolution y = solve_configured(cfg, model, Equation::Y);
    const BsdeSolution p1 = solve_configured(cfg, model, Equation::P1);
    const BsdeSolution p2 = solve_configured(cfg, model, Equation::P2);
    const FeedbackStrategy mmv = mmv_feedback(model, cfg.model.cone, y);
    const FeedbackStrategy mv = mv_feedback(model, cfg.model.cone, p1, p2);
    const EquivalenceReport rep = equivalence_check(mmv, mv, grid);
    rep.write_csv(art.path("equivalence", "csv"));
    rep.write_json(art.path("equivalence", "json"));
    bool pass;
    if (cfg.markovian) {
        const double k = number(sec, "sigmas", "equivalence");
        pass = rep.max_gap_ratio <= k && rep.value_gap <= k * rep.value_stderr;
    } else {
        const double tol = number(sec, "tolerance", "equivalence");
        pass = rep.max_gap <= tol && rep.value_gap <= tol;
    }
    ok = ok && pass;
    return json{{"value_mmv", rep.value_mmv},   {"value_mv", rep.value_mv},   {"value_gap", rep.value_gap},
                {"value_stderr", rep.value_stderr}, {"max_gap", rep.max_gap}, {"max_gap_ratio", rep.max_gap_ratio},
                {"max_gap_off_manifold", rep.max_gap_off_manifold}, {"gamma_hat", rep.gamma_hat},
                {"a", rep.a_const}, {"K_hat", rep.k_hat}, {"pass", pass}};
}

json run_dual_curve(const ExperimentConfig& cfg, const MarketModel& model, Artifacts& art) {
    const json& sec = cfg.resolved.at("dual_curve");
    only_keys(sec, {"points", "k_from", "k_to"}, "dual_curve");
    const BsdeSolution p1 = solve_configured(cfg, model, Equation::P1);
    const BsdeSolution p2 = solve_configured(cfg, model, Equation::P2);
    const double h0 = model.discount_h(0.0);
    const DualCurve curve = dual_curve(p1.initial_value(), p2.initial_value(), h0, model.x0(), model.theta());
    const double k0 = model.x0() * h0;
    const double span = std::max(curve.k_hat() - k0, 0.05);
    const double from = number_or(sec, "k_from", k0 - 2.0 * span, "dual_curve");
    const double to = number_or(sec, "k_to", k0 + 3.0 * span, "dual_curve");
    const std::size_t points = count(sec, "points", "dual_curve");
    if (points < 2 || !(from < to)) throw Error(ErrorCode::ConfigInvalid, "field 'dual_curve': need points >= 2 and k_from < k_to");

    std::ofstream csv(art.path("dual_curve", "csv"));
    csv << std::setprecision(17) << "K,F,gamma_hat,objective\n";
    for (std::size_t i = 0; i < points; ++i) {
        const double k = from + (to - from) * static_cast<double>(i) / static_cast<double>(points - 1);
        csv << k << "," << curve.f(k).to_string() << "," << curve.gamma_hat(k).to_string() << ","
            << curve.objective(k).to_string() << "\n";
    }
    json r{{"P1_0", curve.p1_0()},
           {"P2_0", curve.p2_0()},
           {"h0", h0},
           {"K_hat", curve.k_hat()},
           {"F_K_hat", curve.f(curve.k_hat()).to_string()},
           {"gamma_hat", curve.gamma_hat_optimal()},
           {"mv_value", curve.mv_value()},
           {"P1_at_bound", curve.p1_at_bound()},
           {"P2_at_bound", curve.p2_at_bound()}};
    std::ofstream(art.path("dual_curve", "json")) << std::setprecision(17) << r.dump(2) << "\n";
    return r;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

}  // namespace

json compare_values(const ExperimentConfig& cfg) {
    const MarketModel model = MarketModel::build(cfg.model.spec);
    const BsdeSolution y = solve_configured(cfg, model, Equation::Y);
    const BsdeSolution p1 = solve_configured(cfg, model, Equation::P1);
    const BsdeSolution p2 = solve_configured(cfg, model, Equation::P2);
    return value_comparison(model, y, p1, p2);
}

RunResult run(const ExperimentConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const std::string started = utc_now();
    const MarketModel model = MarketModel::build(cfg.model.spec);
    Artifacts art(cfg.output_dir);
    bool ok = true;
    json results;
    const std::string& e = cfg.experiment;
    if (e == "solve") results = run_solve(cfg, model, art, ok);
    else if (e == "value") results = run_value(cfg, model, art, ok);
    else if (e == "simulate") results = run_simulate(cfg, model, art);
    else if (e == "saddle") results = run_saddle(cfg, model, art, ok);
    else if (e == "equivalence") results = run_equivalence(cfg, model, art, ok);
    else results = run_dual_curve(cfg, model, art);

    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    RunResult out;
    out.exit_code = ok ? exit_status::kOk : exit_status::kAssertionFailed;
    out.results = results;
    out.message = ok ? "ok" : "assertion failed";
    out.manifest_path = art.path("manifest", "json");
    json manifest = cfg.resolved;
    manifest["manifest"] = {{"version", version_string()},
                            {"started_utc", started},
                            {"wall_clock_seconds", wall},
                            {"run_index", art.index()},
                            {"status", out.message},
                            {"exit_code", out.exit_code},
                            {"artifacts", art.files()},
                            {"results", results}};
    std::ofstream mf(out.manifest_path);
    require(mf.good(), ErrorCode::ConfigInvalid, "cannot write " + out.manifest_path);
    mf << std::setprecision(17) << manifest.dump(2) << "\n";
    return out;
}

}  // namespace mmv
