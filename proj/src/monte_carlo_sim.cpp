#include "mmv/monte_carlo_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmv/parallel.hpp"
#include "mmv/rng.hpp"

namespace mmv {

// ---------------------------------------------------------------------------
// Policies and adversaries

Policy Policy::zero(std::string label) {
    Policy p;
    p.label_ = std::move(label);
    return p;
}

Policy Policy::feedback(FeedbackStrategy strategy, double scale, std::string label) {
    require(std::isfinite(scale), ErrorCode::ConfigInvalid, "policy scale must be finite");
    Policy p;
    p.strategy_ = std::move(strategy);
    p.scale_ = scale;
    if (label.empty()) {
        std::ostringstream s;
        s << scale << "*" << (p.strategy_->kind() == StrategyKind::MMV ? "pi_hat" : "pi_gamma_hat");
        label = s.str();
    }
    p.label_ = std::move(label);
    return p;
}

Adversary Adversary::zero(std::string label) {
    Adversary a;
    a.kind_ = AdversaryKind::Zero;
    a.label_ = std::move(label);
    return a;
}

Adversary Adversary::scaled_minus_phi(double c, double bound, std::string label) {
    require(std::isfinite(c) && bound > 0.0, ErrorCode::ConfigInvalid, "adversary scale must be finite, bound > 0");
    Adversary a;
    a.kind_ = AdversaryKind::ScaledMinusPhi;
    a.c_ = c;
    a.bound_ = bound;
    if (label.empty()) {
        std::ostringstream s;
        s << "-" << c << "*phi";
        label = s.str();
    }
    a.label_ = std::move(label);
    return a;
}

Adversary Adversary::constant(Vector v, double bound, std::string label) {
    require(v.allFinite() && bound > 0.0, ErrorCode::ConfigInvalid, "adversary vector must be finite, bound > 0");
    require(v.norm() <= bound, ErrorCode::UnboundedAdversary, "constant adversary exceeds its declared bound");
    Adversary a;
    a.kind_ = AdversaryKind::ConstantVector;
    a.v_ = std::move(v);
    a.bound_ = bound;
    a.label_ = label.empty() ? "const" : std::move(label);
    return a;
}

Adversary Adversary::saddle(AdversaryMap map, double bound, std::string label) {
    require(bound > 0.0, ErrorCode::ConfigInvalid, "adversary bound must be > 0");
    Adversary a;
    a.kind_ = AdversaryKind::Saddle;
    a.map_ = std::move(map);
    a.bound_ = bound;
    a.label_ = std::move(label);
    return a;
}

Vector Adversary::at(double t, const MarketPoint& point, std::optional<double> factor) const {
    Vector eta;
    switch (kind_) {
        case AdversaryKind::Zero:
            return Vector::Zero(point.phi.size());
        case AdversaryKind::ScaledMinusPhi:
            eta = -c_ * point.phi;
            break;
        case AdversaryKind::ConstantVector:
            require(v_.size() == point.phi.size(), ErrorCode::DimensionMismatch, "adversary vector length must be n");
            eta = v_;
            break;
        case AdversaryKind::Saddle:
            eta = (*map_)(t, factor);
            break;
    }
    if (!(eta.norm() <= bound_)) {
        std::ostringstream msg;
        msg << "adversary '" << label_ << "' has |eta| = " << eta.norm() << " > bound " << bound_ << " at t=" << t;
        throw Error(ErrorCode::UnboundedAdversary, msg.str());
    }
    return eta;
}

void SimConfig::validate() const {
    require(paths >= 100, ErrorCode::ConfigInvalid, "simulation paths must be >= 100");
    require(steps >= 10, ErrorCode::ConfigInvalid, "simulation steps must be >= 10");
    require(substeps >= 1, ErrorCode::ConfigInvalid, "substeps must be >= 1");
    require(!antithetic || paths % 2 == 0, ErrorCode::ConfigInvalid, "antithetic sampling needs an even path count");
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

// Pairwise summation keeps the reduction independent of evaluation order.
double pairwise_sum(const double* v, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += v[i];
        return s;
    }
    const std::size_t half = n / 2;
    return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

// Mean and standard error; antithetic pairs are averaged first.
Estimate sample_estimate(const std::vector<double>& v, bool pairs) {
    std::vector<double> u;
    if (pairs) {
        u.resize(v.size() / 2);
        for (std::size_t i = 0; i < u.size(); ++i) u[i] = 0.5 * (v[2 * i] + v[2 * i + 1]);
    } else {
        u = v;
    }
    const std::size_t n = u.size();
    Estimate e;
    e.mean = pairwise_sum(u.data(), n) / static_cast<double>(n);
    for (auto& x : u) x = (x - e.mean) * (x - e.mean);
    const double var = n > 1 ? pairwise_sum(u.data(), n) / static_cast<double>(n - 1) : 0.0;
    e.std_error = std::sqrt(var / static_cast<double>(n));
    return e;
}

struct StepData {
    double pivot = 0.0;
    std::vector<double> above, below;  // m
    std::vector<double> mu;            // m
    std::vector<double> sigma;         // m x n, row-major
    std::vector<double> eta;           // n
    double eta_sq = 0.0;
};

void fill_step(StepData& s, const MarketPoint& point, const FeedbackCoefficients* c, double scale, const Vector& eta) {
    const auto m = point.sigma.rows();
    const auto n = point.sigma.cols();
    s.mu.assign(point.mu.data(), point.mu.data() + m);
    s.sigma.resize(static_cast<std::size_t>(m * n));
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) s.sigma[static_cast<std::size_t>(i * n + j)] = point.sigma(i, j);
    }
    s.above.assign(static_cast<std::size_t>(m), 0.0);
    s.below.assign(static_cast<std::size_t>(m), 0.0);
    if (c) {
        s.pivot = c->pivot;
        for (Eigen::Index i = 0; i < m; ++i) {
            s.above[static_cast<std::size_t>(i)] = scale * c->slope_above(i);
            s.below[static_cast<std::size_t>(i)] = scale * c->slope_below(i);
        }
    }
    s.eta.assign(eta.data(), eta.data() + n);
    s.eta_sq = eta.squaredNorm();
}

}  // namespace

SimBatchResult simulate(const MarketModel& model, const Policy& policy, const Adversary& adversary,
                        const SimConfig& cfg) {
    cfg.validate();
    const std::size_t m = model.m();
    const std::size_t n = model.n();
    const std::size_t steps = cfg.steps;
    const std::size_t paths = cfg.paths;
    const double horizon = model.horizon();
    const double dt = horizon / static_cast<double>(steps);
    const double sq_fine = std::sqrt(dt / static_cast<double>(cfg.substeps));
    const bool markov = model.is_markovian();
    const bool invest = !policy.is_zero();
    if (invest) {
        require(policy.strategy()->model().m() == m && policy.strategy()->model().n() == n,
                ErrorCode::DimensionMismatch, "strategy was built for a different market");
    }

    std::vector<double> times(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) times[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    times.back() = horizon;
    std::vector<double> ratio(steps);  // h_k / h_{k+1}
    {
        std::vector<double> h(steps + 1);
        for (std::size_t k = 0; k <= steps; ++k) h[k] = model.discount_h(times[k]);
        for (std::size_t k = 0; k < steps; ++k) ratio[k] = h[k] / h[k + 1];
    }

    // Deterministic coefficients: every path sees the same step data.
    std::vector<StepData> cache;
    if (!markov) {
        cache.resize(steps);
        for (std::size_t k = 0; k < steps; ++k) {
            const MarketPoint point = model.at(times[k], std::nullopt);
            std::optional<FeedbackCoefficients> c;
            if (invest) c = policy.strategy()->coefficients(times[k], std::nullopt);
            fill_step(cache[k], point, c ? &*c : nullptr, policy.scale(), adversary.at(times[k], point, std::nullopt));
        }
    }

    SimBatchResult out;
    out.paths = paths;
    out.steps = steps;
    out.seed = cfg.seed;
    out.antithetic = cfg.antithetic;
    out.zero_adversary = adversary.kind() == AdversaryKind::Zero;
    out.theta = model.theta();
    out.terminal_x.assign(paths, 0.0);
    out.terminal_lambda.assign(paths, 0.0);
    if (cfg.store_paths) {
        Trajectories tr;
        tr.times = times;
        tr.wealth.assign(paths * (steps + 1), 0.0);
        tr.density.assign(paths * (steps + 1), 0.0);
        if (markov) tr.factor.assign(paths * (steps + 1), 0.0);
        out.path_store = std::move(tr);
    }
    Trajectories* store = out.path_store ? &*out.path_store : nullptr;

    const std::uint64_t key = substream(cfg.seed, cfg.stream);
    const FactorDynamics fd = model.coefficients().factor();

    parallel_for(paths, [&](std::size_t begin, std::size_t end) {
        std::vector<double> dw(n), u(m);
        StepData local;
        for (std::size_t p = begin; p < end; ++p) {
            const std::uint64_t stream_index = cfg.antithetic ? p / 2 : p;
            const double sign = (cfg.antithetic && (p % 2 == 1)) ? -1.0 : 1.0;
            CounterRng rng(key, stream_index);
            std::normal_distribution<double> normal;
            double x = model.x0();
            double log_lambda = 0.0;
            double f = markov ? fd.initial : 0.0;
            const std::size_t row = p * (steps + 1);
            if (store) {
                store->wealth[row] = x;
                store->density[row] = 1.0;
                if (markov) store->factor[row] = f;
            }
            for (std::size_t k = 0; k < steps; ++k) {
                std::fill(dw.begin(), dw.end(), 0.0);
                for (std::size_t s = 0; s < cfg.substeps; ++s) {
                    for (std::size_t c = 0; c < n; ++c) dw[c] += sq_fine * normal(rng);
                }
                if (sign < 0) {
                    for (auto& v : dw) v = -v;
                }
                const StepData* sd = nullptr;
                if (markov) {
                    const MarketPoint point = model.at(times[k], f);
                    std::optional<FeedbackCoefficients> c;
                    if (invest) c = policy.strategy()->coefficients(times[k], f);
                    fill_step(local, point, c ? &*c : nullptr, policy.scale(), adversary.at(times[k], point, f));
                    sd = &local;
                } else {
                    sd = &cache[k];
                }
                double drift = 0.0, diffusion = 0.0;
                if (invest) {
                    const double gap = x - sd->pivot;
                    const double up = gap > 0.0 ? gap : 0.0;
                    const double down = gap < 0.0 ? -gap : 0.0;
                    for (std::size_t i = 0; i < m; ++i) u[i] = up * sd->above[i] + down * sd->below[i];
                    for (std::size_t i = 0; i < m; ++i) {
                        drift += u[i] * sd->mu[i];
                        double row_dw = 0.0;
                        for (std::size_t j = 0; j < n; ++j) row_dw += sd->sigma[i * n + j] * dw[j];
                        diffusion += u[i] * row_dw;
                    }
                }
                double eta_dw = 0.0;
                for (std::size_t j = 0; j < n; ++j) eta_dw += sd->eta[j] * dw[j];
                x = ratio[k] * (x + drift * dt + diffusion);
                log_lambda += eta_dw - 0.5 * sd->eta_sq * dt;
                if (markov) f += fd.kappa * (fd.level - f) * dt + fd.vol * dw[fd.driver];
                if (!std::isfinite(x) || !std::isfinite(log_lambda)) {
                    std::ostringstream msg;
                    msg << "non-finite state on path " << p << " at step " << k + 1 << "; reduce the step size";
                    throw Error(ErrorCode::ExplodedPath, msg.str());
                }
                if (store) {
                    store->wealth[row + k + 1] = x;
                    store->density[row + k + 1] = std::exp(log_lambda);
                    if (markov) store->factor[row + k + 1] = f;
                }
            }
            out.terminal_x[p] = x;
            out.terminal_lambda[p] = std::exp(log_lambda);
        }
    });

    std::vector<double> objective(paths);
    const double theta = model.theta();
    for (std::size_t p = 0; p < paths; ++p) {
        const double l = out.terminal_lambda[p];
        objective[p] = l * (out.terminal_x[p] + (l - 1.0) / (2.0 * theta));
    }
    const Estimate obj = sample_estimate(objective, cfg.antithetic);
    const Estimate lam = sample_estimate(out.terminal_lambda, cfg.antithetic);
    out.objective_mean = obj.mean;
    out.objective_stderr = obj.std_error;
    out.lambda_mean = lam.mean;
    out.lambda_stderr = lam.std_error;
    out.mean_x = sample_estimate(out.terminal_x, cfg.antithetic).mean;
    return out;
}

double conservation_residual(const SimBatchResult& batch, const MarketModel& model, const BsdeSolution& y_sol) {
    require(batch.path_store.has_value(), ErrorCode::MissingTrajectories,
            "conservation residual needs stored trajectories (store_paths)");
    require(y_sol.equation() == Equation::Y, ErrorCode::InvalidModel, "conservation residual needs a Y solution");
    const Trajectories& tr = *batch.path_store;
    const std::size_t nt = tr.times.size();
    const double theta = model.theta();
    const double target = theta * model.discount_h(0.0) * model.x0() + y_sol.initial_value();
    const bool markov = model.is_markovian();
    std::vector<double> h(nt), y(nt);
    for (std::size_t k = 0; k < nt; ++k) {
        h[k] = model.discount_h(tr.times[k]);
        if (!markov) y[k] = y_sol.value(tr.times[k]);
    }
    std::vector<double> worst(batch.paths, 0.0);
    parallel_for(batch.paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double w = 0.0;
            for (std::size_t k = 0; k < nt; ++k) {
                const double yk = markov ? y_sol.value(tr.times[k], tr.factor[p * nt + k]) : y[k];
                w = std::max(w, std::abs(theta * h[k] * tr.x(p, k) + yk * tr.lambda(p, k) - target));
            }
            worst[p] = w;
        }
    });
    return *std::max_element(worst.begin(), worst.end());
}

Estimate mv_objective(const SimBatchResult& batch, double theta) {
    require(batch.zero_adversary, ErrorCode::AdversaryNotZero, "MV objective needs a batch simulated with eta = 0");
    require(theta > 0.0, ErrorCode::NonPositiveTheta, "theta must be > 0");
    const std::size_t np = batch.terminal_x.size();
    const double m1 = pairwise_sum(batch.terminal_x.data(), np) / static_cast<double>(np);
    std::vector<double> sq(np);
    for (std::size_t i = 0; i < np; ++i) sq[i] = (batch.terminal_x[i] - m1) * (batch.terminal_x[i] - m1);
    const double var = pairwise_sum(sq.data(), np) / static_cast<double>(np);
    // influence function of m1 - (theta/2)(m2 - m1^2)
    std::vector<double> psi(np);
    for (std::size_t i = 0; i < np; ++i) {
        const double x = batch.terminal_x[i];
        psi[i] = (1.0 + theta * m1) * x - 0.5 * theta * x * x;
    }
    Estimate e;
    e.mean = m1 - 0.5 * theta * var;
    e.std_error = sample_estimate(psi, batch.antithetic).std_error;
    return e;
}

void SimBatchResult::write_json(const std::string& path) const {
    nlohmann::json j = {{"paths", paths},
                        {"steps", steps},
                        {"seed", seed},
                        {"antithetic", antithetic},
                        {"objective_mean", objective_mean},
                        {"objective_stderr", objective_stderr},
                        {"lambda_mean", lambda_mean},
                        {"lambda_stderr", lambda_stderr},
                        {"mean_X_T", mean_x}};
    if (zero_adversary) {
        const Estimate mv = mv_objective(*this, theta);
        j["mv_objective"] = mv.mean;
        j["mv_objective_stderr"] = mv.std_error;
    }
    if (conservation_max_residual) j["conservation_max_residual"] = *conservation_max_residual;
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17) << j.dump(2) << "\n";
}

void SimBatchResult::write_trajectories_csv(const std::string& path, const MarketModel& model,
                                            const BsdeSolution* y_sol) const {
    require(path_store.has_value(), ErrorCode::MissingTrajectories, "no stored trajectories to write");
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17) << "t,path_id,X,Lambda,R\n";
    const Trajectories& tr = *path_store;
    const std::size_t nt = tr.times.size();
    for (std::size_t p = 0; p < paths; ++p) {
        for (std::size_t k = 0; k < nt; ++k) {
            const double t = tr.times[k];
            double y = 1.0;
            if (y_sol) y = tr.factor.empty() ? y_sol->value(t) : y_sol->value(t, tr.factor[p * nt + k]);
            const double r = model.discount_h(t) * tr.x(p, k) + (tr.lambda(p, k) * y - 1.0) / (2.0 * theta);
            out << t << "," << p << "," << tr.x(p, k) << "," << tr.lambda(p, k) << "," << r << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// Saddle scan

SaddleReport saddle_scan(const MarketModel& model, const BsdeSolution& y_sol, const std::vector<Policy>& pi_family,
                         const std::vector<Adversary>& eta_family, const SaddleScanConfig& cfg) {
    require(!pi_family.empty() && !eta_family.empty(), ErrorCode::ConfigInvalid, "saddle families must be nonempty");
    require(cfg.saddle_pi < pi_family.size() && cfg.saddle_eta < eta_family.size(), ErrorCode::ConfigInvalid,
            "saddle pair index out of range");
    SaddleReport rep;
    rep.saddle_pi = cfg.saddle_pi;
    rep.saddle_eta = cfg.saddle_eta;
    rep.tolerance_sigmas = cfg.tolerance_sigmas;
    rep.r0 = mmv_value(model, y_sol);
    for (const auto& p : pi_family) rep.pi_labels.push_back(p.label());
    for (const auto& e : eta_family) rep.eta_labels.push_back(e.label());

    // the same seed and stream in every cell gives common random numbers
    for (std::size_t i = 0; i < pi_family.size(); ++i) {
        for (std::size_t j = 0; j < eta_family.size(); ++j) {
            const SimBatchResult b = simulate(model, pi_family[i], eta_family[j], cfg.sim);
            rep.cells.push_back({i, j, b.objective_mean, b.objective_stderr});
        }
    }

    const double k = cfg.tolerance_sigmas;
    auto describe = [&](const SaddleCell& c, const char* rule) {
        std::ostringstream s;
        s << std::setprecision(10) << rule << " violated at (pi=" << rep.pi_labels[c.pi] << ", eta="
          << rep.eta_labels[c.eta] << "): objective " << c.mean << " +- " << c.std_error << " vs R0 " << rep.r0;
        return s.str();
    };
    for (std::size_t i = 0; i < pi_family.size(); ++i) {
        const SaddleCell& c = rep.cell(i, cfg.saddle_eta);
        if (c.mean > rep.r0 + k * c.std_error) {
            rep.upper_ok = false;
            rep.violations.push_back(describe(c, "upper saddle inequality"));
        }
    }
    for (std::size_t j = 0; j < eta_family.size(); ++j) {
        const SaddleCell& c = rep.cell(cfg.saddle_pi, j);
        if (c.mean < rep.r0 - k * c.std_error) {
            rep.lower_ok = false;
            rep.violations.push_back(describe(c, "lower saddle inequality"));
        }
    }
    {
        const SaddleCell& c = rep.cell(cfg.saddle_pi, cfg.saddle_eta);
        if (std::abs(c.mean - rep.r0) > k * c.std_error) {
            rep.saddle_ok = false;
            rep.violations.push_back(describe(c, "saddle value"));
        }
    }
    if (!rep.passed()) throw SaddleViolation(rep.violations.front(), rep);
    return rep;
}

void SaddleReport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17) << "pi,eta,objective,stderr\n";
    for (const auto& c : cells) out << pi_labels[c.pi] << "," << eta_labels[c.eta] << "," << c.mean << "," << c.std_error << "\n";
}

void SaddleReport::write_json(const std::string& path) const {
    nlohmann::json cells_json = nlohmann::json::array();
    for (const auto& c : cells) {
        cells_json.push_back({{"pi", pi_labels[c.pi]}, {"eta", eta_labels[c.eta]}, {"objective", c.mean}, {"stderr", c.std_error}});
    }
    nlohmann::json j = {{"R0", r0},
                        {"tolerance_sigmas", tolerance_sigmas},
                        {"saddle_pi", pi_labels[saddle_pi]},
                        {"saddle_eta", eta_labels[saddle_eta]},
                        {"upper_ok", upper_ok},
                        {"lower_ok", lower_ok},
                        {"saddle_ok", saddle_ok},
                        {"passed", passed()},
                        {"violations", violations},
                        {"cells", cells_json}};
    std::ofstream out(path);
    require(out.good(), ErrorCode::ConfigInvalid, "cannot write " + path);
    out << std::setprecision(17) << j.dump(2) << "\n";
}

}  // namespace mmv
