#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "pde.hpp"
#include "problem.hpp"

namespace pia {

/// Lipschitz constants fed to the controlled-volatility smallness check.
struct VolLipschitz {
    double lip_G = 0.0;
    double lip_sigma_u = 0.0;
    double lip_ustar_x = 0.0;
    double lip_sigma_x = 0.0;
};

/// Benchmark parameters that a configuration may override.
using BenchParams = std::map<std::string, double>;

/// A benchmark problem together with whatever closed forms it has.
struct BenchmarkSpec {
    std::string name;
    BenchParams params;
    ControlProblem problem;
    std::function<double(double x0, double horizon)> analytic_value;
    std::function<double(std::size_t n, double phi)> analytic_iterates;
    std::optional<std::vector<double>> analytic_control;  // constant optimal control
    std::string oracle_recipe;
    GridSpec grid;  // default grid for the oracle and the PDE scheme
    std::optional<VolLipschitz> lipschitz;

    double analytic_at_initial() const { return analytic_value(problem.initial_state[0], problem.horizon); }
};

namespace detail {

inline double param(const BenchParams& given, const BenchParams& defaults, const std::string& key) {
    const auto it = given.find(key);
    return it != given.end() ? it->second : defaults.at(key);
}

inline BenchParams resolve_params(const std::string& name, const BenchParams& given, const BenchParams& defaults) {
    for (const auto& [key, value] : given) {
        if (!defaults.contains(key)) {
            std::string known;
            for (const auto& [k, v] : defaults) known += (known.empty() ? "" : ", ") + k;
            throw ConfigError("benchmark '" + name + "' has no parameter '" + key + "' (known: " + known + ")");
        }
        if (!std::isfinite(value)) throw ConfigError("benchmark parameter '" + key + "' must be finite");
    }
    BenchParams out = defaults;
    for (const auto& [key, value] : given) out[key] = value;
    return out;
}

inline std::size_t count_param(double v, const char* key) {
    if (!(v >= 2.0) || v != std::floor(v) || v > 1e6) throw ConfigError(std::string(key) + " must be an integer >= 2");
    return static_cast<std::size_t>(v);
}

// Scalar-action problem on [-1, 1]: dX = u dt + dB under the control, L = u^2/2.
inline ControlProblem scalar_unit_problem(const std::string& name, const BenchParams& p,
                                          std::function<double(double)> terminal) {
    ControlProblem cp;
    cp.name = name;
    cp.horizon = p.at("horizon");
    cp.initial_state = {p.at("x0")};
    const double lo = -1.0, hi = 1.0;
    const std::size_t count = count_param(p.at("action_points"), "action_points");
    cp.actions = ActionGrid::box({&lo, 1}, {&hi, 1}, {&count, 1});
    cp.drift = [](double, const PathPrefix&, std::span<const double> u, std::span<double> out) { out[0] = u[0]; };
    cp.vol = [](double, const PathPrefix&, std::span<const double>, std::span<double> out) { out[0] = 1.0; };
    cp.running_cost = [](double, const PathPrefix&, std::span<const double> u) { return 0.5 * u[0] * u[0]; };
    cp.terminal_reward = [terminal = std::move(terminal)](const PathPrefix& path) { return terminal(path.current()[0]); };
    cp.flags = {true, false, true};
    cp.drift_bound = 1.0;
    cp.vol_bound = 1.0;
    cp.z_clip = p.at("z_clip");
    return cp;
}

inline BenchmarkSpec make_bm_lin(const BenchParams& given) {
    const BenchParams defaults{{"x0", 0.0}, {"horizon", 1.0}, {"action_points", 101}, {"z_clip", 4.0}};
    BenchmarkSpec b;
    b.name = "bm-lin";
    b.params = resolve_params(b.name, given, defaults);
    b.problem = scalar_unit_problem(b.name, b.params, [](double x) { return x; });
    b.analytic_value = [](double x0, double horizon) { return x0 + horizon / 2.0; };
    const double x0 = b.params.at("x0"), horizon = b.params.at("horizon");
    // n = 0 runs the zero control, so X_T = x0 + B_T and phi(0) = 1 gives log E exp(X_T).
    b.analytic_iterates = [x0, horizon](std::size_t n, double phi) {
        return n == 0 ? x0 + horizon / 2.0 : x0 + horizon / 2.0 + horizon / (2.0 * phi);
    };
    b.analytic_control = std::vector<double>{1.0};
    b.oracle_recipe = "HJB grid solve (closed form available)";
    b.grid = GridSpec{x0 - 6.0, x0 + 6.0, 400, 400, 0.5};
    return b;
}

inline BenchmarkSpec make_bm_cos(const BenchParams& given) {
    const BenchParams defaults{{"x0", 0.0}, {"horizon", 1.0}, {"action_points", 101}, {"z_clip", 4.0}};
    BenchmarkSpec b;
    b.name = "bm-cos";
    b.params = resolve_params(b.name, given, defaults);
    b.problem = scalar_unit_problem(b.name, b.params, [](double x) { return std::cos(x); });
    b.oracle_recipe = "dense-grid HJB solve, cross-checked by the reference BSDE";
    const double x0 = b.params.at("x0");
    b.grid = GridSpec{x0 - 6.0, x0 + 6.0, 400, 400, 0.5};
    return b;
}

inline BenchmarkSpec make_bm_vol(const BenchParams& given) {
    const BenchParams defaults{{"x0", 0.0}, {"horizon", 1.0}, {"kappa", 0.25}, {"action_points", 41}, {"z_clip", 4.0}};
    BenchmarkSpec b;
    b.name = "bm-vol";
    b.params = resolve_params(b.name, given, defaults);
    const double kappa = b.params.at("kappa");
    if (!(kappa >= 0.0 && kappa <= 0.5)) throw ConfigError("bm-vol needs kappa in [0, 0.5]");
    auto& cp = b.problem;
    cp.name = b.name;
    cp.horizon = b.params.at("horizon");
    cp.initial_state = {b.params.at("x0")};
    const std::size_t count = count_param(b.params.at("action_points"), "action_points");
    const std::vector<double> lo{-1.0, -1.0}, hi{1.0, 1.0};
    const std::vector<std::size_t> counts{count, count};
    cp.actions = ActionGrid::box(lo, hi, counts);
    cp.drift = [](double, const PathPrefix&, std::span<const double> u, std::span<double> out) { out[0] = u[0]; };
    cp.vol = [kappa](double, const PathPrefix&, std::span<const double> u, std::span<double> out) {
        out[0] = 1.0 + kappa * u[1];
    };
    cp.running_cost = [](double, const PathPrefix&, std::span<const double> u) {
        return 0.5 * (u[0] * u[0] + u[1] * u[1]);
    };
    cp.terminal_reward = [](const PathPrefix& path) { return path.current()[0]; };
    cp.flags = {true, true, true};
    cp.drift_bound = 1.0;
    cp.vol_bound = 1.0 + kappa;
    cp.z_clip = b.params.at("z_clip");
    // sup over U of (1 + k u2) u1 - |u|^2/2 at unit gradient is attained at (1, k).
    const double x0 = cp.initial_state[0], horizon = cp.horizon, s = 1.0 + kappa * kappa;
    b.analytic_value = [kappa](double x, double t) { return x + t * (1.0 + kappa * kappa) / 2.0; };
    b.analytic_iterates = [x0, horizon, s](std::size_t n, double phi) {
        return n == 0 ? x0 + horizon / 2.0 : x0 + horizon * s / 2.0 + s * s * horizon / (2.0 * phi);
    };
    b.analytic_control = std::vector<double>{1.0, kappa};
    b.oracle_recipe = "per-node argmax HJB grid solve over the action grid (closed form available)";
    b.grid = GridSpec{x0 - 6.0, x0 + 6.0, 200, 200, 0.5};
    // G(x) = x; sigma depends on u2 only and u* does not depend on x.
    b.lipschitz = VolLipschitz{1.0, kappa, 0.0, 0.0};
    return b;
}

}  // namespace detail

inline std::vector<std::string> benchmark_names() { return {"bm-cos", "bm-lin", "bm-vol"}; }

/// Registry lookup with optional parameter overrides.
inline BenchmarkSpec benchmark(const std::string& name, const BenchParams& params = {}) {
    BenchmarkSpec b;
    if (name == "bm-lin") b = detail::make_bm_lin(params);
    else if (name == "bm-cos") b = detail::make_bm_cos(params);
    else if (name == "bm-vol") b = detail::make_bm_vol(params);
    else {
        std::string known;
        for (const auto& n : benchmark_names()) known += (known.empty() ? "" : ", ") + n;
        throw ConfigError("unknown benchmark '" + name + "' (registered: " + known + ")");
    }
    b.problem.validate();
    return b;
}

/// The uncontrolled-volatility problem with the same coefficients; only
/// meaningful when sigma does not actually depend on the action.
inline ControlProblem uncontrolled_variant(const ControlProblem& problem) {
    ControlProblem p = problem;
    p.flags.controlled_vol = false;
    return p;
}

struct OracleResult {
    double value = 0.0;
    double tolerance = 0.0;
};

/// Grid oracle value at (0, x0) on `grid`, with tolerance = change under one
/// halving of the spacing and the time step. A change above 10x `requested_tol`
/// means the recipe is unstable at this resolution.
inline OracleResult oracle_value(const BenchmarkSpec& bench, const GridSpec& grid, double requested_tol) {
    if (bench.oracle_recipe.empty()) throw ConfigError(bench.name + " has no oracle recipe");
    if (!(requested_tol > 0.0)) throw ConfigError("requested oracle tolerance must be positive");
    const double x0 = bench.problem.initial_state[0];
    GridSpec fine = grid;
    fine.num_nodes = 2 * grid.num_nodes - 1;
    fine.num_time_steps = 2 * grid.num_time_steps;
    const double coarse_value = solve_hjb_reference(bench.problem, grid).v.interpolate(0, x0);
    const double fine_value = solve_hjb_reference(bench.problem, fine).v.interpolate(0, x0);
    const double change = std::abs(fine_value - coarse_value);
    if (change > 10.0 * requested_tol)
        throw NumericalError("oracle unstable for " + bench.name + ": refinement changed the value by " +
                             format_double(change) + ", above 10x the requested tolerance " + format_double(requested_tol));
    return {coarse_value, change};
}

/// Human-readable registry listing.
inline void list_benchmarks(std::ostream& out) {
    for (const auto& name : benchmark_names()) {
        const auto b = benchmark(name);
        out << name << ": m=" << b.problem.state_dim << " d=" << b.problem.noise_dim
            << " actions=" << b.problem.actions.size() << " T=" << format_double(b.problem.horizon)
            << " x0=" << format_double(b.problem.initial_state[0])
            << (b.problem.flags.controlled_vol ? " controlled-vol" : "") << '\n';
        out << "  params:";
        for (const auto& [k, v] : b.params) out << ' ' << k << '=' << format_double(v);
        out << '\n';
        if (b.analytic_value) out << "  analytic value: " << format_double(b.analytic_at_initial()) << '\n';
        out << "  oracle: " << b.oracle_recipe << '\n';
    }
}

}  // namespace pia
