#pragma once

#include <chrono>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bench.hpp"
#include "bsde.hpp"
#include "errors.hpp"
#include "paths.hpp"
#include "pde.hpp"
#include "problem.hpp"
#include "regression.hpp"
#include "report.hpp"

namespace pia {

enum class SchemeMode { mc_nonmarkovian, pde_markovian, mc_controlled_vol };

inline std::string mode_name(SchemeMode m) {
    switch (m) {
        case SchemeMode::mc_nonmarkovian: return "mc_nonmarkovian";
        case SchemeMode::pde_markovian: return "pde_markovian";
        case SchemeMode::mc_controlled_vol: return "mc_controlled_vol";
    }
    return "";
}

inline SchemeMode parse_mode(const std::string& s) {
    for (auto m : {SchemeMode::mc_nonmarkovian, SchemeMode::pde_markovian, SchemeMode::mc_controlled_vol})
        if (mode_name(m) == s) return m;
    throw ConfigError("unknown mode '" + s + "' (expected mc_nonmarkovian, pde_markovian or mc_controlled_vol)");
}

struct SchemeConfig {
    SchemeMode mode = SchemeMode::mc_nonmarkovian;
    PenaltySchedule schedule = PenaltySchedule::exponential(4.0);
    std::size_t n_max = 3;
    std::size_t num_paths = 100000;
    std::size_t num_steps = 100;
    GridSpec grid;
    RegressionBasis basis;
    ZEstimator z_estimator = ZEstimator::joint;
    std::uint64_t seed = 42;
    double stop_tol = 0.0;  // 0 disables early stopping
    unsigned workers = 1;
    int picard_iters = 2;
    double rate_floor = 1e-4;
    bool timing = false;  // wall_ms stays 0 unless set, keeping reports reproducible

    /// Configuration-level check; runs accept n_max = 0 (see validate_run).
    void validate() const {
        if (n_max < 1) throw ConfigError("n_max must be >= 1");
        validate_run();
    }

    void validate_run() const {
        if (num_paths < 2 || num_steps < 1) throw ConfigError("num_paths must be >= 2 and num_steps >= 1");
        if (!(stop_tol >= 0.0)) throw ConfigError("stop_tol must be nonnegative");
        if (workers < 1) throw ConfigError("workers must be >= 1");
        if (picard_iters < 1) throw ConfigError("picard_iters must be >= 1");
        if (!(rate_floor > 0.0)) throw ConfigError("rate_floor must be positive");
        if (basis.degree < 0 || !(basis.ridge >= 0.0)) throw ConfigError("basis needs degree >= 0 and ridge >= 0");
        grid.validate();
        schedule.require_range(n_max);
    }

    void validate(const ControlProblem& problem) const {
        validate_run();
        problem.validate();
        const bool vol = problem.flags.controlled_vol;
        if (mode == SchemeMode::mc_controlled_vol && !vol)
            throw ConfigError("mc_controlled_vol mode needs a controlled-volatility problem");
        if (mode != SchemeMode::mc_controlled_vol && vol)
            throw ConfigError(mode_name(mode) + " mode needs uncontrolled volatility");
        if (mode == SchemeMode::pde_markovian) grid.validate(problem);
        if (mode == SchemeMode::mc_controlled_vol) {
            if (basis.kind != RegressionBasis::Kind::markov) throw ConfigError("controlled-vol mode supports the Markov basis only");
            if (problem.state_dim != problem.noise_dim) throw ConfigError("controlled-vol mode needs m == d");
        }
        if (mode != SchemeMode::pde_markovian && basis.num_features(problem.state_dim) * 10 > num_paths)
            throw ConfigError("regression basis has more than num_paths/10 columns");
    }

    bool operator==(const SchemeConfig&) const = default;
};

/// Optional knowledge handed to a run: a reference value and a constant optimal control.
struct RunExtras {
    std::optional<Reference> reference;
    std::optional<std::vector<double>> analytic_control;
    std::optional<VolLipschitz> lipschitz;
};

inline RunExtras extras_from(const BenchmarkSpec& bench) {
    RunExtras x;
    if (bench.analytic_value) {
        Reference r;
        r.value = bench.analytic_at_initial();
        r.provenance = "analytic";
        x.reference = r;
    }
    x.analytic_control = bench.analytic_control;
    x.lipschitz = bench.lipschitz;
    return x;
}

/// Per-iteration representations kept for cross-checks (Z^n in index n).
struct McArtifacts {
    std::vector<ZRepresentation> z;
};

namespace detail {

class Stopwatch {
public:
    explicit Stopwatch(bool on) : on_(on), start_(std::chrono::steady_clock::now()) {}
    double ms() const {
        if (!on_) return 0.0;
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    bool on_;
    std::chrono::steady_clock::time_point start_;
};

struct PathAverage {
    double sum = 0.0, sum_sq = 0.0;
    PathAverage& operator+=(const PathAverage& o) {
        sum += o.sum;
        sum_sq += o.sum_sq;
        return *this;
    }
};

// Path average of integral_0^T |u(step j, path p) - target|^2 dt, with target
// another action sequence or a constant control.
inline PathAverage control_gap(const ControlProblem& problem, const PathEnsemble& e,
                               std::span<const std::uint32_t> a, std::span<const std::uint32_t> b,
                               const std::vector<double>* constant, unsigned workers) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps;
    const double dt = e.grid.step();
    return reduce_blocks(n, workers, PathAverage{}, [&](std::size_t begin, std::size_t end) {
        PathAverage acc;
        for (std::size_t p = begin; p < end; ++p) {
            double path_total = 0.0;
            for (std::size_t j = 0; j < steps; ++j) {
                const auto u = problem.actions.point(a[p * steps + j]);
                for (std::size_t c = 0; c < u.size(); ++c) {
                    const double target = constant ? (*constant)[c] : problem.actions.point(b[p * steps + j])[c];
                    path_total += (u[c] - target) * (u[c] - target) * dt;
                }
            }
            acc.sum += path_total;
            acc.sum_sq += path_total * path_total;
        }
        return acc;
    });
}

// Path average of integral_0^T |Z1 - Z2|^2 dt along the ensemble.
inline double z_gap(const ControlProblem& problem, const PathEnsemble& e, const ZRepresentation& z1,
                    std::span<const double> aux1, const ZRepresentation& z2, std::span<const double> aux2,
                    unsigned workers) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, m = problem.state_dim;
    const double dt = e.grid.step();
    const double total = reduce_blocks(n, workers, 0.0, [&](std::size_t begin, std::size_t end) {
        std::vector<double> in1(z1.basis().num_inputs(m)), in2(z2.basis().num_inputs(m)), v1(z1.dim()), v2(z2.dim());
        double acc = 0.0;
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t j = 0; j < steps; ++j) {
                if (!z1.is_zero()) regression_inputs(e, z1.basis(), aux1, p, j, in1);
                if (!z2.is_zero()) regression_inputs(e, z2.basis(), aux2, p, j, in2);
                z1.evaluate(j, in1, v1);
                z2.evaluate(j, in2, v2);
                for (std::size_t c = 0; c < v1.size(); ++c) acc += (v1[c] - v2[c]) * (v1[c] - v2[c]) * dt;
            }
        return acc;
    });
    return total / static_cast<double>(n);
}

// Accumulated running cost [path][step 0..N] under the given actions.
inline std::vector<double> accumulated_cost(const ControlProblem& problem, const PathEnsemble& e,
                                            std::span<const std::uint32_t> actions, unsigned workers) {
    return terminal_functional(problem, e, actions, workers).cost;
}

// Feedback of the full selector under a state-gradient representation along a fixed ensemble.
inline std::vector<std::uint32_t> full_policy_actions(const ControlProblem& problem, const PathEnsemble& e,
                                                      const ZRepresentation& z, unsigned workers) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, m = problem.state_dim;
    std::vector<std::uint32_t> actions(n * steps);
    const PolicySelector selector(problem, PolicySelector::Form::full);
    const RegressionBasis markov{};
    for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        CoefficientScratch scratch(problem);
        std::vector<double> inputs(m), g(m);
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t j = 0; j < steps; ++j) {
                regression_inputs(e, markov, {}, p, j, inputs);
                z.evaluate(j, inputs, g);
                actions[p * steps + j] =
                    static_cast<std::uint32_t>(selector.select(e.grid.time(j), e.prefix(p, j), g, scratch));
            }
    });
    return actions;
}

inline void finish_mc_report(ConvergenceReport& report, const RunExtras& extras, std::optional<double> fallback,
                             const std::string& fallback_provenance, double rate_floor) {
    if (extras.reference && extras.reference->value) report.reference = *extras.reference;
    else if (fallback) {
        report.reference.value = *fallback;
        report.reference.provenance = fallback_provenance;
    }
    double noise = 0.0;
    for (auto& r : report.records) {
        if (report.reference.value) r.err = r.value - *report.reference.value;
        noise = std::max(noise, 3.0 * r.std_error);
    }
    attach_rate(report, std::max(rate_floor, noise));
}

}  // namespace detail

/// Policy iteration on one driftless ensemble (common random numbers): at
/// step n the policy u*(., Z^{n-1}) is frozen, V^n is evaluated explicitly under
/// the Girsanov measure of b(u*), and Z^n is regressed from the intermediate values.
/// Without a supplied reference the value of the reference BSDE is used.
inline ConvergenceReport run_pia_mc(const ControlProblem& problem, const SchemeConfig& cfg, const RunExtras& extras = {},
                                    McArtifacts* artifacts = nullptr) {
    cfg.validate(problem);
    if (problem.flags.controlled_vol) throw ConfigError("run_pia_mc requires uncontrolled volatility");
    ConvergenceReport report;
    report.mode = mode_name(SchemeMode::mc_nonmarkovian);
    report.schedule = cfg.schedule.label();
    const TimeGrid grid(problem.horizon, cfg.num_steps);
    const unsigned w = cfg.workers;
    std::optional<double> bsde_value;
    try {
        auto batch = std::make_shared<const BrownianBatch>(
            BrownianBatch::generate(grid, cfg.num_paths, problem.noise_dim, cfg.seed, w));
        const PathEnsemble e = simulate_driftless(problem, grid, batch, w);
        const bool path_basis = cfg.basis.kind == RegressionBasis::Kind::path;
        ZRepresentation z_prev = ZRepresentation::zero(problem.noise_dim, cfg.num_steps, problem.z_clip,
                                                       ZRepresentation::Form::martingale, cfg.basis);
        std::vector<double> aux_prev;
        std::size_t clips = 0;
        std::vector<std::uint32_t> actions = policy_actions(problem, e, z_prev, w, &clips);
        for (std::size_t n = 0; n <= cfg.n_max; ++n) {
            const detail::Stopwatch watch(cfg.timing);
            const double phi = cfg.schedule(n);
            BackwardSolution sol = explicit_iterate_value(problem, e, actions, phi, cfg.basis, w);
            std::vector<double> aux;
            if (path_basis) aux = detail::accumulated_cost(problem, e, actions, w);
            ZRepresentation z = estimate_Z(problem, e, sol.y, cfg.basis, w, aux, ZRepresentation::Form::martingale, cfg.z_estimator);
            std::size_t next_clips = 0;
            std::vector<std::uint32_t> next_actions = policy_actions(problem, e, z, w, &next_clips);

            IterationRecord rec;
            rec.n = n;
            rec.phi_n = phi;
            rec.value = sol.value;
            rec.std_error = sol.std_error;
            rec.positivity_floors = sol.positivity_floors;
            rec.clip_activations = next_clips;
            rec.z_distance = detail::z_gap(problem, e, z, aux, z_prev, aux_prev, w);
            const auto moved = detail::control_gap(problem, e, next_actions, actions, nullptr, w);
            rec.control_distance = moved.sum / static_cast<double>(e.num_paths());
            if (extras.analytic_control) {
                const auto g = detail::control_gap(problem, e, next_actions, {}, &*extras.analytic_control, w);
                const double np = static_cast<double>(e.num_paths());
                const double mean = g.sum / np;
                const double var = std::max(0.0, g.sum_sq / np - mean * mean);
                rec.control_error = mean / problem.horizon;
                rec.control_error_stderr = std::sqrt(var / np) / problem.horizon;
            }
            double max_y = 0.0;
            for (double v : sol.y) max_y = std::max(max_y, std::abs(v));
            rec.max_abs_y = max_y;
            rec.wall_ms = watch.ms();
            report.records.push_back(rec);
            if (artifacts) artifacts->z.push_back(z);

            z_prev = std::move(z);
            aux_prev = std::move(aux);
            actions = std::move(next_actions);
            if (n >= 1 && cfg.stop_tol > 0.0 && std::abs(rec.value - report.records[n - 1].value) < cfg.stop_tol) break;
        }
        if (!(extras.reference && extras.reference->value)) {
            if (cfg.basis.kind != RegressionBasis::Kind::markov) {
                report.diagnostics.push_back("no reference: the BSDE oracle supports the Markov basis only");
            } else {
                const auto ref = solve_reference_bsde(problem, e, cfg.basis, cfg.picard_iters, w, nullptr, cfg.z_estimator);
                bsde_value = ref.value;
                report.reference.tolerance = 3.0 * ref.std_error;
            }
        }
    } catch (const NumericalError& err) {
        report.partial = true;
        report.abort_message = err.what();
    }
    detail::finish_mc_report(report, extras, bsde_value, "bsde-oracle", cfg.rate_floor);
    return report;
}

/// Controlled-volatility iteration: the forward SDE is re-simulated under
/// u*(., Z^{n-1}) on the same Brownian batch every iteration, then evaluated
/// like the uncontrolled scheme with Z in state-gradient form.
inline ConvergenceReport run_pia_vol(const ControlProblem& problem, const SchemeConfig& cfg, const RunExtras& extras = {}) {
    cfg.validate(problem);
    if (!problem.flags.controlled_vol) throw ConfigError("run_pia_vol requires controlled volatility");
    ConvergenceReport report;
    report.mode = mode_name(SchemeMode::mc_controlled_vol);
    report.schedule = cfg.schedule.label();
    if (extras.lipschitz) {
        const auto& l = *extras.lipschitz;
        const bool small = check_vol_smallness(problem, l.lip_G, l.lip_sigma_u, l.lip_ustar_x, l.lip_sigma_x);
        report.diagnostics.push_back(std::string("vol smallness condition: ") + (small ? "true" : "false"));
    } else {
        report.diagnostics.push_back("vol smallness condition: not evaluated (no Lipschitz constants)");
    }
    const TimeGrid grid(problem.horizon, cfg.num_steps);
    const unsigned w = cfg.workers;
    std::optional<double> oracle;
    try {
        auto batch = std::make_shared<const BrownianBatch>(
            BrownianBatch::generate(grid, cfg.num_paths, problem.noise_dim, cfg.seed, w));
        ZRepresentation z_prev = ZRepresentation::zero(problem.state_dim, cfg.num_steps, problem.z_clip,
                                                       ZRepresentation::Form::gradient, cfg.basis);
        for (std::size_t n = 0; n <= cfg.n_max; ++n) {
            const detail::Stopwatch watch(cfg.timing);
            const double phi = cfg.schedule(n);
            const PathEnsemble e = simulate_controlled_forward(problem, grid, batch, z_prev, w);
            BackwardSolution sol = explicit_iterate_value(problem, e, e.actions, phi, cfg.basis, w);
            ZRepresentation z =
                estimate_Z(problem, e, sol.y, cfg.basis, w, {}, ZRepresentation::Form::gradient, cfg.z_estimator);
            const auto next_actions = detail::full_policy_actions(problem, e, z, w);

            IterationRecord rec;
            rec.n = n;
            rec.phi_n = phi;
            rec.value = sol.value;
            rec.std_error = sol.std_error;
            rec.positivity_floors = sol.positivity_floors;
            rec.z_distance = detail::z_gap(problem, e, z, {}, z_prev, {}, w);
            rec.control_distance =
                detail::control_gap(problem, e, next_actions, e.actions, nullptr, w).sum / static_cast<double>(e.num_paths());
            double max_y = 0.0;
            for (double v : sol.y) max_y = std::max(max_y, std::abs(v));
            rec.max_abs_y = max_y;
            rec.wall_ms = watch.ms();
            report.records.push_back(rec);
            z_prev = std::move(z);
            if (n >= 1 && cfg.stop_tol > 0.0 && std::abs(rec.value - report.records[n - 1].value) < cfg.stop_tol) break;
        }
        if (!(extras.reference && extras.reference->value)) {
            if (problem.state_dim == 1 && problem.flags.markovian) {
                GridSpec g = cfg.grid;
                const double x0 = problem.initial_state[0];
                if (!(g.x_min < x0 && x0 < g.x_max)) g.x_min = x0 - 6.0, g.x_max = x0 + 6.0;
                oracle = solve_hjb_reference(problem, g).v.interpolate(0, x0);
            } else {
                report.diagnostics.push_back("no reference available for this controlled-volatility problem");
            }
        }
    } catch (const NumericalError& err) {
        report.partial = true;
        report.abort_message = err.what();
    }
    detail::finish_mc_report(report, extras, oracle, "pde-oracle", cfg.rate_floor);
    return report;
}

/// Grid scheme wrapper with the driver's configuration type.
inline ConvergenceReport run_pia_grid(const ControlProblem& problem, const SchemeConfig& cfg, const RunExtras& extras = {}) {
    cfg.validate(problem);
    PdeOptions options;
    options.reference = extras.reference;
    options.stop_tol = cfg.stop_tol;
    options.rate_floor = cfg.rate_floor;
    return run_pia_pde(problem, cfg.grid, cfg.schedule, cfg.n_max, options).report;
}

inline ConvergenceReport run_scheme(const ControlProblem& problem, const SchemeConfig& cfg, const RunExtras& extras = {}) {
    switch (cfg.mode) {
        case SchemeMode::mc_nonmarkovian: return run_pia_mc(problem, cfg, extras);
        case SchemeMode::pde_markovian: return run_pia_grid(problem, cfg, extras);
        case SchemeMode::mc_controlled_vol: return run_pia_vol(problem, cfg, extras);
    }
    throw ConfigError("unknown scheme mode");
}

/// Penalized entropic value of iterate n computed directly on paths of the
/// drifted equation dX = sigma b(u*) dt + sigma dB (u* frozen at Z^{n-1}),
/// compared with the reweighted value V^n of the policy iteration. The drifted
/// paths use an independent Brownian batch (seed + 1). One policy-iteration run
/// serves every requested n.
inline std::vector<CrosscheckResult> entropic_crosscheck(const ControlProblem& problem, const SchemeConfig& cfg,
                                                         const std::vector<std::size_t>& ns,
                                                         ConvergenceReport* report_out = nullptr) {
    if (problem.flags.controlled_vol) throw ConfigError("the entropic cross-check is defined for uncontrolled volatility only");
    if (!problem.flags.markovian) throw ConfigError("the entropic cross-check needs a Markovian problem");
    if (cfg.basis.kind != RegressionBasis::Kind::markov) throw ConfigError("the entropic cross-check needs the Markov basis");
    if (ns.empty()) throw ConfigError("no iterations requested for the cross-check");
    const std::size_t top = *std::max_element(ns.begin(), ns.end());
    SchemeConfig run_cfg = cfg;
    run_cfg.mode = SchemeMode::mc_nonmarkovian;
    run_cfg.n_max = std::max<std::size_t>(top, 1);
    run_cfg.stop_tol = 0.0;
    cfg.schedule.require_range(top);
    run_cfg.validate(problem);
    McArtifacts artifacts;
    RunExtras none;
    none.reference = Reference{0.0, "none", 0.0};  // skip the BSDE oracle
    const auto report = run_pia_mc(problem, run_cfg, none, &artifacts);
    if (report.partial) throw NumericalError("policy iteration aborted: " + report.abort_message);

    const TimeGrid grid(problem.horizon, cfg.num_steps);
    auto batch = std::make_shared<const BrownianBatch>(
        BrownianBatch::generate(grid, cfg.num_paths, problem.noise_dim, cfg.seed + 1, cfg.workers));
    std::vector<CrosscheckResult> results;
    for (std::size_t n : ns) {
        const ZRepresentation z_prev = n == 0 ? ZRepresentation::zero(problem.noise_dim, cfg.num_steps, problem.z_clip,
                                                                      ZRepresentation::Form::martingale, cfg.basis)
                                              : artifacts.z.at(n - 1);
        const PathEnsemble drifted = simulate_feedback_drifted(problem, grid, batch, z_prev, cfg.workers);
        const auto tv = terminal_functional(problem, drifted, drifted.actions, cfg.workers);
        const auto direct = penalized_certainty_equivalent({}, tv.F, cfg.schedule(n));
        CrosscheckResult out;
        out.n = n;
        out.v_tilde = direct.value;
        out.v_n = report.records.at(n).value;
        out.gap = std::abs(out.v_tilde - out.v_n);
        out.combined_stderr = std::sqrt(direct.std_error * direct.std_error +
                                        report.records.at(n).std_error * report.records.at(n).std_error);
        results.push_back(out);
    }
    if (report_out) {
        *report_out = report;
        report_out->crosschecks = results;
    }
    return results;
}

inline CrosscheckResult entropic_crosscheck(const ControlProblem& problem, const SchemeConfig& cfg, std::size_t n) {
    return entropic_crosscheck(problem, cfg, std::vector<std::size_t>{n}).front();
}

}  // namespace pia
