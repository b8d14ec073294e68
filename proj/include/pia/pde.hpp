#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "policy.hpp"
#include "problem.hpp"
#include "report.hpp"

namespace pia {

/// Uniform space-time grid on [x_min, x_max] x [0, T] for 1-D problems.
struct GridSpec {
    double x_min = -6.0;
    double x_max = 6.0;
    std::size_t num_nodes = 400;
    std::size_t num_time_steps = 400;
    double theta = 0.5;

    double dx() const { return (x_max - x_min) / static_cast<double>(num_nodes - 1); }
    double x(std::size_t i) const { return i + 1 == num_nodes ? x_max : x_min + dx() * static_cast<double>(i); }

    void validate() const {
        if (!(x_min < x_max) || !std::isfinite(x_min) || !std::isfinite(x_max)) throw ConfigError("grid needs x_min < x_max");
        if (num_nodes < 3) throw ConfigError("grid needs at least 3 nodes");
        if (num_time_steps < 1) throw ConfigError("grid needs at least 1 time step");
        if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must lie in [0, 1]");
    }

    void validate(const ControlProblem& problem) const {
        validate();
        if (problem.state_dim != 1 || problem.noise_dim != 1) throw ConfigError("grid solvers handle m = d = 1 only");
        if (!problem.flags.markovian) throw ConfigError("grid solvers need a Markovian problem");
        const double x0 = problem.initial_state.at(0);
        if (!(x_min < x0 && x0 < x_max)) throw ConfigError("initial state must lie strictly inside the grid");
    }

    bool operator==(const GridSpec&) const = default;
};

/// Values on every (time layer, node) of a grid; layer j sits at t_j = j T / num_time_steps.
struct GridField {
    GridSpec spec;
    double horizon = 1.0;
    std::vector<double> values;  // [layer][node]

    static GridField zeros(const GridSpec& spec, double horizon) {
        GridField f;
        f.spec = spec;
        f.horizon = horizon;
        f.values.assign((spec.num_time_steps + 1) * spec.num_nodes, 0.0);
        return f;
    }

    std::size_t layers() const { return spec.num_time_steps + 1; }
    double time(std::size_t j) const {
        return j == spec.num_time_steps ? horizon
                                        : horizon * static_cast<double>(j) / static_cast<double>(spec.num_time_steps);
    }
    double& at(std::size_t j, std::size_t i) { return values[j * spec.num_nodes + i]; }
    double at(std::size_t j, std::size_t i) const { return values[j * spec.num_nodes + i]; }
    std::span<double> layer(std::size_t j) { return std::span<double>(values).subspan(j * spec.num_nodes, spec.num_nodes); }
    std::span<const double> layer(std::size_t j) const {
        return std::span<const double>(values).subspan(j * spec.num_nodes, spec.num_nodes);
    }

    /// Linear interpolation in x on layer j.
    double interpolate(std::size_t j, double x) const {
        const double h = spec.dx();
        double s = (x - spec.x_min) / h;
        s = std::clamp(s, 0.0, static_cast<double>(spec.num_nodes - 1));
        const auto i = std::min(static_cast<std::size_t>(s), spec.num_nodes - 2);
        const double w = s - static_cast<double>(i);
        return (1.0 - w) * at(j, i) + w * at(j, i + 1);
    }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }
};

/// CSV matrix: header row of x-nodes, then one row per time layer.
inline void write_grid_csv(std::ostream& out, const GridField& f) {
    for (std::size_t i = 0; i < f.spec.num_nodes; ++i) out << (i ? "," : "") << format_double(f.spec.x(i));
    out << '\n';
    for (std::size_t j = 0; j < f.layers(); ++j) {
        for (std::size_t i = 0; i < f.spec.num_nodes; ++i) out << (i ? "," : "") << format_double(f.at(j, i));
        out << '\n';
    }
}

/// Sup-norm distance over the central window [x_min/2, x_max/2] on layer j.
inline double central_sup_gap(const GridField& a, const GridField& b, std::size_t j = 0) {
    const double lo = 0.5 * a.spec.x_min, hi = 0.5 * a.spec.x_max;
    double gap = 0.0;
    for (std::size_t i = 0; i < a.spec.num_nodes; ++i) {
        const double x = a.spec.x(i);
        if (x < lo || x > hi) continue;
        gap = std::max(gap, std::abs(a.at(j, i) - b.at(j, i)));
    }
    return gap;
}

namespace detail {

/// Generator (A w)_i = a w_xx + c w_x - r w + s on one time layer.
struct LayerOperator {
    std::vector<double> a, c, r, s;
    explicit LayerOperator(std::size_t n = 0) : a(n, 0.0), c(n, 0.0), r(n, 0.0), s(n, 0.0) {}
};

struct Stencil {
    double lo, di, up;
};

// Central drift differencing where the cell Peclet number is at most one,
// first-order upwinding otherwise.
inline Stencil stencil(const LayerOperator& op, std::size_t i, double h) {
    const double a = op.a[i], c = op.c[i];
    Stencil st{a / (h * h), -2.0 * a / (h * h) - op.r[i], a / (h * h)};
    if (std::abs(c) * h <= 2.0 * a) {
        st.lo -= c / (2.0 * h);
        st.up += c / (2.0 * h);
    } else if (c > 0.0) {
        st.di -= c / h;
        st.up += c / h;
    } else {
        st.di += c / h;
        st.lo -= c / h;
    }
    return st;
}

inline void thomas(std::vector<double>& lo, std::vector<double>& di, std::vector<double>& up, std::vector<double>& rhs) {
    const std::size_t n = di.size();
    for (std::size_t i = 1; i < n; ++i) {
        const double m = lo[i] / di[i - 1];
        di[i] -= m * up[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    rhs[n - 1] /= di[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - up[i] * rhs[i + 1]) / di[i];
}

/// One theta-scheme step backward: w_j from w_{j+1}, with operator `now` at t_j
/// and `next` at t_{j+1}. Boundary nodes carry a zero second derivative.
inline void theta_step(const GridSpec& spec, double dt, const LayerOperator& now, const LayerOperator& next,
                       std::span<const double> w_next, std::span<double> w) {
    const std::size_t n = spec.num_nodes;
    const double h = spec.dx(), th = spec.theta;
    const std::size_t k = n - 2;  // interior unknowns 1..n-2
    std::vector<double> lo(k), di(k), up(k), rhs(k);
    for (std::size_t i = 1; i + 1 < n; ++i) {
        const auto e = stencil(next, i, h);
        const double explicit_part = e.lo * w_next[i - 1] + e.di * w_next[i] + e.up * w_next[i + 1];
        const auto m = stencil(now, i, h);
        lo[i - 1] = -th * dt * m.lo;
        di[i - 1] = 1.0 - th * dt * m.di;
        up[i - 1] = -th * dt * m.up;
        rhs[i - 1] = w_next[i] + (1.0 - th) * dt * (explicit_part + next.s[i]) + th * dt * now.s[i];
    }
    if (k == 1) {
        w[1] = rhs[0] / (lo[0] + di[0] + up[0]);
        w[0] = w[2] = w[1];
        return;
    }
    // w_0 = 2 w_1 - w_2 and w_{n-1} = 2 w_{n-2} - w_{n-3}
    di[0] += 2.0 * lo[0];
    up[0] -= lo[0];
    lo[k - 1] -= up[k - 1];
    di[k - 1] += 2.0 * up[k - 1];
    lo[0] = 0.0;
    up[k - 1] = 0.0;
    thomas(lo, di, up, rhs);
    for (std::size_t i = 0; i < k; ++i) w[i + 1] = rhs[i];
    w[0] = 2.0 * w[1] - w[2];
    w[n - 1] = 2.0 * w[n - 2] - w[n - 3];
}

inline double node_vol(const ControlProblem& p, double t, double x, std::size_t action) {
    const std::array<double, 1> state{x};
    double sigma = 0.0;
    p.vol(t, PathPrefix(state, 1), p.actions.point(action), {&sigma, 1});
    require_finite(sigma, "vol");
    return sigma;
}

/// Frozen feedback on one layer for uncontrolled volatility: u*(t, x_i, z_i).
inline void feedback_layer(const ControlProblem& p, const PolicySelector& selector, const GridSpec& spec, double t,
                           std::span<const double> z, std::vector<std::uint32_t>& actions) {
    CoefficientScratch scratch(p);
    actions.resize(spec.num_nodes);
    for (std::size_t i = 0; i < spec.num_nodes; ++i) {
        const std::array<double, 1> state{spec.x(i)};
        actions[i] = static_cast<std::uint32_t>(selector.select(t, PathPrefix(state, 1), z.subspan(i, 1), scratch));
    }
}

/// a = sigma^2 / 2, c = sigma b, r = L * decay, s = -L * source_weight under the given actions.
inline LayerOperator operator_for(const ControlProblem& p, const GridSpec& spec, double t,
                                  std::span<const std::uint32_t> actions, double decay, double source_weight) {
    LayerOperator op(spec.num_nodes);
    CoefficientScratch scratch(p);
    const double zero = 0.0;
    for (std::size_t i = 0; i < spec.num_nodes; ++i) {
        const std::array<double, 1> state{spec.x(i)};
        const PathPrefix path(state, 1);
        const double h_at_zero = eval_full_h(p, t, path, {&zero, 1}, actions[i], scratch);  // -L
        const double sigma = scratch.sigma[0];
        op.a[i] = 0.5 * sigma * sigma;
        op.c[i] = scratch.sigma_b[0];
        op.r[i] = -h_at_zero * decay;
        op.s[i] = h_at_zero * source_weight;
    }
    return op;
}

inline void gradient_layer(const ControlProblem& p, const GridSpec& spec, double t, std::span<const double> v,
                           std::span<double> out, bool times_sigma, std::size_t action_for_sigma = 0) {
    const std::size_t n = spec.num_nodes;
    const double h = spec.dx();
    for (std::size_t i = 0; i < n; ++i) {
        double d;
        if (i == 0) d = (v[1] - v[0]) / h;
        else if (i + 1 == n) d = (v[n - 1] - v[n - 2]) / h;
        else d = (v[i + 1] - v[i - 1]) / (2.0 * h);
        out[i] = times_sigma ? d * node_vol(p, t, spec.x(i), action_for_sigma) : d;
    }
}

inline void terminal_layer(const ControlProblem& p, const GridSpec& spec, std::span<double> out) {
    for (std::size_t i = 0; i < spec.num_nodes; ++i) {
        const std::array<double, 1> state{spec.x(i)};
        out[i] = p.terminal_reward(PathPrefix(state, 1));
        require_finite(out[i], "terminal_reward");
    }
}

inline void check_uncontrolled_grid(const ControlProblem& p, const GridSpec& spec) {
    spec.validate(p);
    if (p.flags.controlled_vol) throw ConfigError("this grid solver requires uncontrolled volatility");
}

}  // namespace detail

/// Fields of one Cole-Hopf iterate. `grad` holds sigma * dv/dx (the Z field);
/// `actions` holds the frozen feedback index per (layer, node).
/// `u` is stored as exp((v - shift) / phi); multiply by exp(shift / phi) for exp(v / phi).
struct ColeHopfIterate {
    GridField u, v, grad;
    std::vector<std::uint32_t> actions;
    double shift = 0.0;
};

/// Iterate n on the grid: u = exp(v / phi) solves the linear equation
/// u_t + sigma^2/2 u_xx + sigma b(u*) u_x - L(u*)/phi u = 0, u(T) = exp(G/phi),
/// under the feedback u* = u*(t, x, grad_prev). The terminal layer is shifted
/// by max G inside the exponential so large rewards do not overflow.
inline ColeHopfIterate solve_colehopf_iterate(const ControlProblem& problem, const GridSpec& spec, double phi,
                                              const GridField& grad_prev) {
    detail::check_uncontrolled_grid(problem, spec);
    if (!(phi >= 1.0) || !std::isfinite(phi)) throw ConfigError("penalty phi(n) must be finite and >= 1");
    if (!(grad_prev.spec == spec)) throw ConfigError("previous gradient lives on a different grid");
    const std::size_t nt = spec.num_time_steps, nx = spec.num_nodes;
    const double dt = problem.horizon / static_cast<double>(nt);
    const PolicySelector selector(problem, PolicySelector::Form::reduced);

    ColeHopfIterate it{GridField::zeros(spec, problem.horizon), GridField::zeros(spec, problem.horizon),
                       GridField::zeros(spec, problem.horizon), std::vector<std::uint32_t>((nt + 1) * nx)};
    std::vector<double> g(nx);
    detail::terminal_layer(problem, spec, g);
    const double shift = *std::max_element(g.begin(), g.end());
    it.shift = shift;
    for (std::size_t i = 0; i < nx; ++i) it.u.at(nt, i) = std::exp((g[i] - shift) / phi);

    std::vector<std::uint32_t> acts;
    auto op_at = [&](std::size_t j) {
        const double t = it.u.time(j);
        detail::feedback_layer(problem, selector, spec, t, grad_prev.layer(j), acts);
        std::copy(acts.begin(), acts.end(), it.actions.begin() + static_cast<std::ptrdiff_t>(j * nx));
        return detail::operator_for(problem, spec, t, acts, 1.0 / phi, 0.0);
    };
    detail::LayerOperator next = op_at(nt);
    for (std::size_t j = nt; j-- > 0;) {
        detail::LayerOperator now = op_at(j);
        detail::theta_step(spec, dt, now, next, it.u.layer(j + 1), it.u.layer(j));
        for (std::size_t i = 0; i < nx; ++i)
            if (!(it.u.at(j, i) > 0.0) || !std::isfinite(it.u.at(j, i)))
                throw NumericalError("positivity violation of exp(v/phi) at layer " + std::to_string(j) + ", node " +
                                     std::to_string(i));
        next = std::move(now);
    }
    for (std::size_t k = 0; k < it.v.values.size(); ++k) it.v.values[k] = phi * std::log(it.u.values[k]) + shift;
    for (std::size_t j = 0; j <= nt; ++j)
        detail::gradient_layer(problem, spec, it.v.time(j), it.v.layer(j), it.grad.layer(j), true);
    return it;
}

/// Direct solve of the quadratic equation for the same iterate:
/// v_t + sigma^2/2 v_xx + sigma b(u*) v_x - L(u*) + |sigma v_x|^2 / (2 phi) = 0,
/// with the quadratic term taken explicitly from the already computed later layer.
inline GridField solve_quadratic_iterate(const ControlProblem& problem, const GridSpec& spec, double phi,
                                         const GridField& grad_prev) {
    detail::check_uncontrolled_grid(problem, spec);
    if (!(phi >= 1.0) || !std::isfinite(phi)) throw ConfigError("penalty phi(n) must be finite and >= 1");
    if (!(grad_prev.spec == spec)) throw ConfigError("previous gradient lives on a different grid");
    const std::size_t nt = spec.num_time_steps, nx = spec.num_nodes;
    const double dt = problem.horizon / static_cast<double>(nt);
    const PolicySelector selector(problem, PolicySelector::Form::reduced);
    GridField v = GridField::zeros(spec, problem.horizon);
    detail::terminal_layer(problem, spec, v.layer(nt));
    std::vector<std::uint32_t> acts;
    std::vector<double> z(nx);
    auto op_at = [&](std::size_t j) {
        const double t = v.time(j);
        detail::feedback_layer(problem, selector, spec, t, grad_prev.layer(j), acts);
        return detail::operator_for(problem, spec, t, acts, 0.0, 1.0);
    };
    detail::LayerOperator next = op_at(nt);
    for (std::size_t j = nt; j-- > 0;) {
        detail::LayerOperator now = op_at(j);
        detail::gradient_layer(problem, spec, v.time(j + 1), v.layer(j + 1), z, true);
        for (std::size_t i = 0; i < nx; ++i) {
            const double q = z[i] * z[i] / (2.0 * phi);
            now.s[i] += q;
            next.s[i] += q;
        }
        detail::theta_step(spec, dt, now, next, v.layer(j + 1), v.layer(j));
        for (std::size_t i = 0; i < nx; ++i) now.s[i] -= z[i] * z[i] / (2.0 * phi);
        next = std::move(now);
    }
    if (!v.all_finite()) throw NumericalError("non-finite value in the quadratic sweep");
    return v;
}

struct HjbDiagnostics {
    std::size_t layers_not_converged = 0;  // layers where > 1% of nodes still changed policy after the cap
    std::size_t max_inner_sweeps = 0;
    std::vector<std::string> warnings;
};

struct HjbSolution {
    GridField v, grad;  // grad is sigma v_x (uncontrolled) or v_x (controlled volatility)
    std::vector<std::uint32_t> actions;
    HjbDiagnostics diagnostics;
};

/// Backward theta-scheme for v_t + sup_u [ sigma(u)^2/2 v_xx + sigma b(u) v_x - L(u) ] = 0,
/// v(T) = G. On each step the policy is frozen from the later layer, the linear
/// step is solved, and the policy is refreshed from the new layer, up to 10 sweeps.
/// With uncontrolled volatility the argmax is u*(t, x, sigma v_x); otherwise every
/// grid action is scanned per node with the curvature term included.
inline HjbSolution solve_hjb_reference(const ControlProblem& problem, const GridSpec& spec, std::size_t max_sweeps = 10) {
    spec.validate(problem);
    const bool controlled = problem.flags.controlled_vol;
    const std::size_t nt = spec.num_time_steps, nx = spec.num_nodes, na = problem.actions.size();
    const double dt = problem.horizon / static_cast<double>(nt);
    HjbSolution sol{GridField::zeros(spec, problem.horizon), GridField::zeros(spec, problem.horizon),
                    std::vector<std::uint32_t>((nt + 1) * nx), {}};
    detail::terminal_layer(problem, spec, sol.v.layer(nt));
    std::optional<PolicySelector> selector;
    if (!controlled) selector.emplace(problem, PolicySelector::Form::reduced);

    std::vector<double> grad(nx), curv(nx);
    auto policy_from = [&](double t, std::span<const double> v, std::vector<std::uint32_t>& acts) {
        acts.resize(nx);
        if (!controlled) {
            detail::gradient_layer(problem, spec, t, v, grad, true);
            detail::feedback_layer(problem, *selector, spec, t, grad, acts);
            return;
        }
        detail::gradient_layer(problem, spec, t, v, grad, false);
        const double h = spec.dx();
        for (std::size_t i = 0; i < nx; ++i) {
            const std::size_t c = std::clamp<std::size_t>(i, 1, nx - 2);
            curv[i] = (v[c + 1] - 2.0 * v[c] + v[c - 1]) / (h * h);
        }
        CoefficientScratch scratch(problem);
        for (std::size_t i = 0; i < nx; ++i) {
            const std::array<double, 1> state{spec.x(i)};
            const PathPrefix path(state, 1);
            double best = -std::numeric_limits<double>::infinity();
            std::uint32_t arg = 0;
            for (std::size_t a = 0; a < na; ++a) {
                const double val = eval_full_h(problem, t, path, {&grad[i], 1}, a, scratch) +
                                   0.5 * scratch.sigma[0] * scratch.sigma[0] * curv[i];
                if (val > best) {
                    best = val;
                    arg = static_cast<std::uint32_t>(a);
                }
            }
            acts[i] = arg;
        }
    };

    std::vector<std::uint32_t> next_acts, acts, fresh;
    policy_from(problem.horizon, sol.v.layer(nt), next_acts);
    std::copy(next_acts.begin(), next_acts.end(), sol.actions.begin() + static_cast<std::ptrdiff_t>(nt * nx));
    detail::LayerOperator next = detail::operator_for(problem, spec, problem.horizon, next_acts, 0.0, 1.0);
    for (std::size_t j = nt; j-- > 0;) {
        const double t = sol.v.time(j);
        acts = next_acts;
        detail::LayerOperator now;
        std::size_t changed = 0, sweeps = 0;
        for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
            now = detail::operator_for(problem, spec, t, acts, 0.0, 1.0);
            detail::theta_step(spec, dt, now, next, sol.v.layer(j + 1), sol.v.layer(j));
            policy_from(t, sol.v.layer(j), fresh);
            changed = 0;
            for (std::size_t i = 0; i < nx; ++i) changed += fresh[i] != acts[i] ? 1 : 0;
            sweeps = sweep + 1;
            if (changed == 0) break;
            acts = fresh;
        }
        if (changed > 0) {
            now = detail::operator_for(problem, spec, t, acts, 0.0, 1.0);
            detail::theta_step(spec, dt, now, next, sol.v.layer(j + 1), sol.v.layer(j));
        }
        sol.diagnostics.max_inner_sweeps = std::max(sol.diagnostics.max_inner_sweeps, sweeps);
        if (static_cast<double>(changed) > 0.01 * static_cast<double>(nx)) {
            ++sol.diagnostics.layers_not_converged;
            if (sol.diagnostics.warnings.size() < 10)
                sol.diagnostics.warnings.push_back("policy still changing on " + std::to_string(changed) +
                                                   " nodes at layer " + std::to_string(j) + " after " +
                                                   std::to_string(max_sweeps) + " sweeps");
        }
        std::copy(acts.begin(), acts.end(), sol.actions.begin() + static_cast<std::ptrdiff_t>(j * nx));
        next = std::move(now);
        next_acts = acts;
    }
    if (!sol.v.all_finite()) throw NumericalError("non-finite value in the HJB reference solve");
    for (std::size_t j = 0; j <= nt; ++j)
        detail::gradient_layer(problem, spec, sol.v.time(j), sol.v.layer(j), sol.grad.layer(j), !controlled);
    return sol;
}

/// Time-integrated, window-averaged squared distance of two fields.
inline double central_l2_distance(const GridField& a, const GridField& b) {
    const double lo = 0.5 * a.spec.x_min, hi = 0.5 * a.spec.x_max;
    const double dt = a.horizon / static_cast<double>(a.spec.num_time_steps);
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < a.spec.num_nodes; ++i)
        if (a.spec.x(i) >= lo && a.spec.x(i) <= hi) ++count;
    if (count == 0) return 0.0;
    for (std::size_t j = 0; j < a.spec.num_time_steps; ++j)
        for (std::size_t i = 0; i < a.spec.num_nodes; ++i) {
            const double x = a.spec.x(i);
            if (x < lo || x > hi) continue;
            const double d = a.at(j, i) - b.at(j, i);
            total += d * d * dt;
        }
    return total / static_cast<double>(count);
}

struct PdeOptions {
    std::optional<Reference> reference;  // used for err when given; gaps always use the grid oracle
    double stop_tol = 0.0;
    double rate_floor = 1e-4;
    bool keep_iterates = false;
};

/// Result of the grid scheme: the report, the oracle fields and optionally every iterate.
struct PdeRun {
    ConvergenceReport report;
    std::vector<ColeHopfIterate> iterates;
    HjbSolution reference;
};

/// Grid policy iteration from grad^{-1} = 0, n = 0..n_max. Each record holds
/// v^n(0, x0), its error against the reference value, the central-window sup
/// gap to the HJB oracle field and the Z / control distances between iterates.
inline PdeRun run_pia_pde(const ControlProblem& problem, const GridSpec& spec, const PenaltySchedule& schedule,
                          std::size_t n_max, const PdeOptions& options = {}) {
    detail::check_uncontrolled_grid(problem, spec);
    schedule.require_range(n_max);
    PdeRun run{{}, {}, solve_hjb_reference(problem, spec)};
    auto& report = run.report;
    report.mode = "pde_markovian";
    report.schedule = schedule.label();
    const double x0 = problem.initial_state[0];
    if (options.reference && options.reference->value) {
        report.reference = *options.reference;
    } else {
        report.reference.value = run.reference.v.interpolate(0, x0);
        report.reference.provenance = "pde-oracle";
    }
    for (const auto& w : run.reference.diagnostics.warnings) report.diagnostics.push_back("hjb: " + w);

    const std::size_t nt = spec.num_time_steps, nx = spec.num_nodes;
    const PolicySelector selector(problem, PolicySelector::Form::reduced);
    GridField grad_prev = GridField::zeros(spec, problem.horizon);
    std::vector<std::uint32_t> acts;
    try {
        for (std::size_t n = 0; n <= n_max; ++n) {
            const double phi = schedule(n);
            ColeHopfIterate it = solve_colehopf_iterate(problem, spec, phi, grad_prev);
            IterationRecord rec;
            rec.n = n;
            rec.phi_n = phi;
            rec.value = it.v.interpolate(0, x0);
            rec.std_error = 0.0;
            rec.err = rec.value - *report.reference.value;
            rec.gap = central_sup_gap(it.v, run.reference.v);
            rec.z_distance = central_l2_distance(it.grad, grad_prev);
            const double lo = 0.5 * spec.x_min, hi = 0.5 * spec.x_max;
            const double dt = problem.horizon / static_cast<double>(nt);
            double dist = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < nx; ++i)
                if (spec.x(i) >= lo && spec.x(i) <= hi) ++count;
            for (std::size_t j = 0; j < nt; ++j) {
                detail::feedback_layer(problem, selector, spec, it.grad.time(j), it.grad.layer(j), acts);
                for (std::size_t i = 0; i < nx; ++i) {
                    if (spec.x(i) < lo || spec.x(i) > hi) continue;
                    const auto a = problem.actions.point(acts[i]);
                    const auto b = problem.actions.point(it.actions[j * nx + i]);
                    for (std::size_t c = 0; c < a.size(); ++c) dist += (a[c] - b[c]) * (a[c] - b[c]) * dt;
                }
            }
            rec.control_distance = count ? dist / static_cast<double>(count) : 0.0;
            double max_v = 0.0;
            for (double v : it.v.values) max_v = std::max(max_v, std::abs(v));
            rec.max_abs_y = max_v;
            report.records.push_back(rec);
            grad_prev = it.grad;
            if (options.keep_iterates) run.iterates.push_back(std::move(it));
            if (n >= 1 && options.stop_tol > 0.0 &&
                std::abs(rec.value - report.records[n - 1].value) < options.stop_tol)
                break;
        }
    } catch (const NumericalError& e) {
        report.partial = true;
        report.abort_message = e.what();
    }
    attach_rate(report, options.rate_floor);
    return run;
}

}  // namespace pia
