#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "paths.hpp"
#include "policy.hpp"
#include "problem.hpp"
#include "regression.hpp"

namespace pia {

/// Result of a backward solve on a path ensemble.
/// y is laid out [path][step 0..N]; every y[p][0] equals `value`.
struct BackwardSolution {
    std::vector<double> y;
    ZRepresentation z;
    double value = 0.0;
    double std_error = 0.0;
    std::size_t positivity_floors = 0;  // regressed exponentials that had to be floored
};

/// Estimate with its Monte-Carlo standard error.
struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
};

/// Feedback actions u*(t_j, X, Z_j) along every path of an uncontrolled-volatility ensemble.
/// With the path basis the accumulated running cost input is rebuilt along the
/// path from the actions chosen so far.
inline std::vector<std::uint32_t> policy_actions(const ControlProblem& problem, const PathEnsemble& e,
                                                 const ZRepresentation& z, unsigned workers,
                                                 std::size_t* clip_count = nullptr) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, m = problem.state_dim;
    const double dt = e.grid.step();
    std::vector<std::uint32_t> actions(n * steps);
    const PolicySelector selector(problem, PolicySelector::Form::reduced);
    const bool with_cost = z.basis().kind == RegressionBasis::Kind::path;
    std::vector<std::size_t> clips(num_blocks(n), 0);
    for_each_block(n, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
        CoefficientScratch scratch(problem);
        std::vector<double> inputs(z.basis().num_inputs(m)), zv(problem.noise_dim);
        for (std::size_t p = begin; p < end; ++p) {
            double cost = 0.0;
            for (std::size_t j = 0; j < steps; ++j) {
                const double t = e.grid.time(j);
                const auto path = e.prefix(p, j);
                if (!z.is_zero()) {
                    const auto x = e.state(p, j);
                    std::copy(x.begin(), x.end(), inputs.begin());
                    if (with_cost) inputs[m] = cost;
                }
                clips[b] += z.evaluate(j, inputs, zv) ? 1 : 0;
                const std::size_t a = selector.select(t, path, zv, scratch);
                actions[p * steps + j] = static_cast<std::uint32_t>(a);
                if (with_cost) cost += problem.running_cost(t, path, problem.actions.point(a)) * dt;
            }
        }
    });
    if (clip_count) {
        *clip_count = 0;
        for (auto c : clips) *clip_count += c;
    }
    return actions;
}

/// Drift b(t_j, X, u_j) along the ensemble for given actions, [path][step][d].
inline std::vector<double> drift_along(const ControlProblem& problem, const PathEnsemble& e,
                                       std::span<const std::uint32_t> actions, unsigned workers) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, d = problem.noise_dim;
    std::vector<double> theta(n * steps * d);
    for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t j = 0; j < steps; ++j) {
                std::span<double> out(theta.data() + (p * steps + j) * d, d);
                problem.drift(e.grid.time(j), e.prefix(p, j), problem.actions.point(actions[p * steps + j]), out);
                detail::require_finite(std::span<const double>(out), "drift");
            }
    });
    return theta;
}

/// F = G(X) - sum_j L(t_j, X, u_j) dt per path, and the running cost
/// accumulated up to each step ([path][step 0..N]).
struct TerminalValues {
    std::vector<double> F;
    std::vector<double> cost;
};

inline TerminalValues terminal_functional(const ControlProblem& problem, const PathEnsemble& e,
                                          std::span<const std::uint32_t> actions, unsigned workers = 1) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps;
    if (actions.size() != n * steps) throw ConfigError("one action per path and step is required");
    TerminalValues out;
    out.F.resize(n);
    out.cost.resize(n * (steps + 1));
    const double dt = e.grid.step();
    for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double* c = out.cost.data() + p * (steps + 1);
            c[0] = 0.0;
            for (std::size_t j = 0; j < steps; ++j) {
                const double l = problem.running_cost(e.grid.time(j), e.prefix(p, j),
                                                      problem.actions.point(actions[p * steps + j]));
                detail::require_finite(l, "running_cost");
                c[j + 1] = c[j] + l * dt;
            }
            const double g = problem.terminal_reward(e.prefix(p, steps));
            detail::require_finite(g, "terminal_reward");
            out.F[p] = g - c[steps];
        }
    });
    return out;
}

/// Terminal functional under the frozen policy u*(., Z_prev).
inline TerminalValues terminal_functional(const ControlProblem& problem, const PathEnsemble& e,
                                          const ZRepresentation& z_prev, unsigned workers = 1) {
    const auto actions = policy_actions(problem, e, z_prev, workers);
    return terminal_functional(problem, e, actions, workers);
}

/// phi log( sum_p w_p exp(F_p / phi) / sum_p w_p ) with w_p = exp(log_w_p), in
/// log space, with a delta-method standard error for the self-normalized ratio.
/// An empty `log_w` means unit weights.
inline Estimate penalized_certainty_equivalent(std::span<const double> log_w, std::span<const double> F, double phi) {
    const std::size_t n = F.size();
    if (n == 0) throw ConfigError("no samples");
    if (!(phi >= 1.0) || !std::isfinite(phi)) throw ConfigError("penalty phi(n) must be finite and >= 1");
    if (!log_w.empty() && log_w.size() != n) throw ConfigError("weights and samples differ in length");
    const double max_lw = log_w.empty() ? 0.0 : *std::max_element(log_w.begin(), log_w.end());
    double center = 0.0;
    for (double f : F) center += f;
    center /= static_cast<double>(n);
    double max_e = -std::numeric_limits<double>::infinity();
    for (double f : F) max_e = std::max(max_e, (f - center) / phi);
    // Shift exponents so the largest is <= 0 when they could overflow.
    const double shift = max_e > 30.0 ? max_e : 0.0;
    std::vector<double> w(n), g(n);
    double sum_w = 0.0, sum_wg_minus_1 = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        w[p] = log_w.empty() ? 1.0 : std::exp(log_w[p] - max_lw);
        g[p] = std::expm1((F[p] - center) / phi - shift);  // g - 1
        sum_w += w[p];
        sum_wg_minus_1 += w[p] * g[p];
    }
    const double ratio_minus_1 = sum_wg_minus_1 / sum_w;
    if (!(ratio_minus_1 > -1.0)) throw NumericalError("weighted exponential mean is not positive");
    Estimate out;
    out.value = center + phi * (shift + std::log1p(ratio_minus_1));
    double s2 = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
        const double dev = g[p] - ratio_minus_1;
        s2 += w[p] * w[p] * dev * dev;
    }
    // se(R)/R with R = 1 + ratio_minus_1
    out.std_error = phi * std::sqrt(s2) / (sum_w * (1.0 + ratio_minus_1));
    if (!std::isfinite(out.value) || !std::isfinite(out.std_error)) throw NumericalError("non-finite iterate value");
    return out;
}

namespace detail {

// Zero-mean noise terms dB_c and dB_c^2 - dt of step j. Regressing on them
// alongside the basis absorbs the martingale part of a one-step target.
inline void hermite_noise(const PathEnsemble& e, std::size_t p, std::size_t j, std::span<double> out) {
    const auto dB = e.brownian->increment(p, j);
    const double dt = e.grid.step();
    const std::size_t d = dB.size();
    for (std::size_t c = 0; c < d; ++c) {
        out[c] = dB[c];
        out[d + c] = dB[c] * dB[c] - dt;
    }
}

}  // namespace detail

/// Explicit evaluation of one iterate: with theta = b(., u_j) and
/// F = G - int L(., u_j), the value is phi log E^{P^n}[exp(F/phi)] where
/// dP^n/dP is the stochastic exponential of int theta . dB.
///
/// The intermediate values Y_t = phi log E^{P^n}[exp(F/phi) | F_t] are built one
/// step at a time: the one-step weighted exponential, centered at the previous
/// fit evaluated at the current state, is regressed on the basis and mapped back
/// through phi log; y[p][j] is Y at (p, j).
inline BackwardSolution explicit_iterate_value(const ControlProblem& problem, const PathEnsemble& e,
                                               std::span<const std::uint32_t> actions, double phi,
                                               const RegressionBasis& basis, unsigned workers = 1) {
    if (!(phi >= 1.0) || !std::isfinite(phi)) throw ConfigError("penalty phi(n) must be finite and >= 1");
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, d = problem.noise_dim;
    const double dt = e.grid.step();
    const auto theta = drift_along(problem, e, actions, workers);
    const auto tv = terminal_functional(problem, e, actions, workers);
    const std::span<const double> aux =
        basis.kind == RegressionBasis::Kind::path ? std::span<const double>(tv.cost) : std::span<const double>();

    // One-step log-weight increments and the total log-weight per path.
    std::vector<double> dlog(n * steps), log_w(n);
    for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < steps; ++j) {
                const auto dB = e.brownian->increment(p, j);
                const double* th = theta.data() + (p * steps + j) * d;
                double ito = 0.0, sq = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    ito += th[c] * dB[c];
                    sq += th[c] * th[c];
                }
                dlog[p * steps + j] = ito - 0.5 * sq * dt;
                acc += dlog[p * steps + j];
            }
            log_w[p] = acc;
        }
    });

    BackwardSolution sol;
    const auto est = penalized_certainty_equivalent(log_w, tv.F, phi);
    sol.value = est.value;
    sol.std_error = est.std_error;

    // Cost-to-go values K_j = Y_j + cost_j, Markov in the regression inputs.
    const std::size_t row = steps + 1;
    sol.y.assign(n * row, 0.0);
    std::vector<double> to_go(n);
    for (std::size_t p = 0; p < n; ++p) to_go[p] = tv.F[p] + tv.cost[p * row + steps];
    for (std::size_t p = 0; p < n; ++p) sol.y[p * row + steps] = tv.F[p];

    const std::size_t k = basis.num_inputs(problem.state_dim);
    auto inputs_fn = [&](std::size_t j) {
        return [&, j](std::size_t p, std::span<double> out) { regression_inputs(e, basis, aux, p, j, out); };
    };
    // Fit of the cost-to-go at step j+1, used as the centering anchor at step j.
    StepFit anchor = fit_step(basis, steps, n, k, inputs_fn(steps), 1,
                              [&](std::size_t p, std::span<double> out) { out[0] = to_go[p]; }, workers);
    std::vector<std::size_t> floors(num_blocks(n), 0);
    std::vector<double> next(n), center(n);
    for (std::size_t j = steps; j-- > 1;) {
        for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
            std::vector<double> x(k);
            for (std::size_t p = begin; p < end; ++p) {
                regression_inputs(e, basis, aux, p, j, x);
                center[p] = anchor.evaluate1(x);
            }
        });
        // The one-step weight w has conditional mean one, so w D - (w - 1) has the
        // same conditional mean as w D with far less variance; the fit is of that minus one.
        BlockFit qb = fit_blocks(
            basis, j, n, k, inputs_fn(j), 1,
            [&](std::size_t p, std::span<double> out) {
                out[0] = std::exp(dlog[p * steps + j]) * std::expm1((to_go[p] - center[p]) / phi);
            },
            2 * d, [&](std::size_t p, std::span<double> out) { detail::hermite_noise(e, p, j, out); }, workers);
        StepFit q = std::move(qb.base);
        q.coef = qb.coef.topRows(static_cast<Eigen::Index>(q.monomials.size()));
        for_each_block(n, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
            std::vector<double> x(k);
            for (std::size_t p = begin; p < end; ++p) {
                regression_inputs(e, basis, aux, p, j, x);
                double v = q.evaluate1(x);
                if (!(v > -1.0 + 1e-12)) {
                    v = -1.0 + 1e-12;
                    ++floors[b];
                }
                const double running = (tv.cost[p * row + j + 1] - tv.cost[p * row + j]);
                next[p] = center[p] + phi * std::log1p(v) - running;
            }
        });
        to_go.swap(next);
        for (std::size_t p = 0; p < n; ++p) sol.y[p * row + j] = to_go[p] - tv.cost[p * row + j];
        anchor = fit_step(basis, j, n, k, inputs_fn(j), 1,
                          [&](std::size_t p, std::span<double> out) { out[0] = to_go[p]; }, workers);
    }
    for (std::size_t p = 0; p < n; ++p) sol.y[p * row] = sol.value;
    for (auto f : floors) sol.positivity_floors += f;
    return sol;
}

/// How Z_j is read off the paths.
///  increment: regress (y_{j+1} - y_j) dB_j / dt on the basis at t_j.
///  joint:     regress y_{j+1} on [f(x_j), f(x_j) dB_j] and keep the dB block;
///             same conditional mean, with the Z^2 dt noise of the increment form removed.
enum class ZEstimator { increment, joint };

inline std::string z_estimator_name(ZEstimator e) { return e == ZEstimator::joint ? "joint" : "increment"; }

inline ZEstimator parse_z_estimator(const std::string& s) {
    if (s == "joint") return ZEstimator::joint;
    if (s == "increment") return ZEstimator::increment;
    throw ConfigError("unknown z estimator '" + s + "' (expected joint or increment)");
}

namespace detail {

// Noise multiplier of step j on path p: dB (martingale form) or sigma dB at the
// recorded action (gradient form, m == d).
inline void noise_multiplier(const ControlProblem& problem, const PathEnsemble& e, std::size_t p, std::size_t j,
                             bool gradient, std::span<double> out) {
    const auto dB = e.brownian->increment(p, j);
    if (!gradient) {
        std::copy(dB.begin(), dB.end(), out.begin());
        return;
    }
    const std::size_t m = problem.state_dim, d = problem.noise_dim;
    thread_local std::vector<double> sigma;
    sigma.resize(m * d);
    problem.vol(e.grid.time(j), e.prefix(p, j), problem.actions.point(e.action(p, j)), sigma);
    for (std::size_t i = 0; i < m; ++i) {
        double v = 0.0;
        for (std::size_t c = 0; c < d; ++c) v += sigma[i * d + c] * dB[c];
        out[i] = v;
    }
}

// One step of Z. `y_next(p)` is y at j+1; `y_now(p)` is y at j (increment form only).
template <class NextFn, class NowFn>
StepFit fit_z_step(const ControlProblem& problem, const PathEnsemble& e, const RegressionBasis& basis,
                   std::span<const double> aux, std::size_t j, NextFn&& y_next, NowFn&& y_now, bool gradient,
                   ZEstimator estimator, unsigned workers) {
    const std::size_t n = e.num_paths(), m = problem.state_dim, d = problem.noise_dim;
    const std::size_t k = basis.num_inputs(m);
    const std::size_t out_dim = gradient ? m : d;
    const double dt = e.grid.step();
    const InputsFn inputs = [&](std::size_t p, std::span<double> out) { regression_inputs(e, basis, aux, p, j, out); };
    if (estimator == ZEstimator::joint) {
        BlockFit bf = fit_blocks(
            basis, j, n, k, inputs, 1, [&](std::size_t p, std::span<double> out) { out[0] = y_next(p); }, out_dim + d,
            [&](std::size_t p, std::span<double> out) {
                noise_multiplier(problem, e, p, j, gradient, out.first(out_dim));
                const auto dB = e.brownian->increment(p, j);
                for (std::size_t c = 0; c < d; ++c) out[out_dim + c] = dB[c] * dB[c] - dt;
            },
            workers);
        const auto cols = static_cast<Eigen::Index>(bf.base.monomials.size());
        bf.base.coef.resize(cols, static_cast<Eigen::Index>(out_dim));
        for (std::size_t c = 0; c < out_dim; ++c)
            bf.base.coef.col(static_cast<Eigen::Index>(c)) = bf.coef.block(cols * static_cast<Eigen::Index>(c + 1), 0, cols, 1);
        return std::move(bf.base);
    }
    return fit_step(
        basis, j, n, k, inputs, out_dim,
        [&](std::size_t p, std::span<double> out) {
            const double dy = y_next(p) - y_now(p);
            const auto dB = e.brownian->increment(p, j);
            if (!gradient) {
                for (std::size_t c = 0; c < d; ++c) out[c] = dy * dB[c] / dt;
                return;
            }
            thread_local std::vector<double> sigma;
            sigma.resize(m * d);
            problem.vol(e.grid.time(j), e.prefix(p, j), problem.actions.point(e.action(p, j)), sigma);
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> S(
                sigma.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
            Eigen::VectorXd zv(static_cast<Eigen::Index>(d));
            for (std::size_t c = 0; c < d; ++c) zv[static_cast<Eigen::Index>(c)] = dy * dB[c] / dt;
            Eigen::FullPivLU<Eigen::MatrixXd> lu(S.transpose());
            if (!lu.isInvertible()) throw NumericalError("singular volatility in gradient recovery");
            const Eigen::VectorXd g = lu.solve(zv);
            for (std::size_t c = 0; c < m; ++c) out[c] = g[static_cast<Eigen::Index>(c)];
        },
        workers);
}

}  // namespace detail

/// Z_j = E[(y_{j+1} - y_j) dB_j | F_j] / dt per time step, evaluated with clipping.
///
/// In `gradient` form the state gradient p with sigma^T p = Z is returned
/// instead (sigma at the recorded action, m == d).
inline ZRepresentation estimate_Z(const ControlProblem& problem, const PathEnsemble& e, std::span<const double> y,
                                  const RegressionBasis& basis, unsigned workers = 1, std::span<const double> aux = {},
                                  ZRepresentation::Form form = ZRepresentation::Form::martingale,
                                  ZEstimator estimator = ZEstimator::joint) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, d = problem.noise_dim, m = problem.state_dim;
    const std::size_t row = steps + 1;
    if (y.size() != n * row) throw ConfigError("y must have one value per path and time point");
    const bool gradient = form == ZRepresentation::Form::gradient;
    if (gradient && (m != d || e.actions.size() != n * steps))
        throw ConfigError("gradient-form Z needs m == d and recorded actions");
    if (basis.num_features(m) * 10 > n) throw ConfigError("regression basis has more than num_paths/10 columns");
    std::vector<StepFit> fits(steps);
    for (std::size_t j = 0; j < steps; ++j)
        fits[j] = detail::fit_z_step(
            problem, e, basis, aux, j, [&](std::size_t p) { return y[p * row + j + 1]; },
            [&](std::size_t p) { return y[p * row + j]; }, gradient, estimator, workers);
    return ZRepresentation(gradient ? m : d, steps, problem.z_clip, form, basis, std::move(fits));
}

/// Diagnostics of the reference solve.
struct ReferenceDiagnostics {
    std::size_t clip_activations = 0;
    double max_abs_y = 0.0;
    double a_priori_bound = 0.0;
};

/// Least-squares Monte-Carlo solve of the BSDE with terminal G(X) and driver
/// H(t, X, Z). Values are propagated along paths (y_j target = y_{j+1} + H dt
/// on the path), while Z and the fitted y used for Z come from regression.
/// Each step runs `picard_iters` passes of Z <- estimate from (y_{j+1}, y_j),
/// y_j <- regress(target). The joint estimator does not read y_j, so its Z is fitted once.
inline BackwardSolution solve_reference_bsde(const ControlProblem& problem, const PathEnsemble& e,
                                             const RegressionBasis& basis, int picard_iters = 2, unsigned workers = 1,
                                             ReferenceDiagnostics* diag = nullptr,
                                             ZEstimator estimator = ZEstimator::joint) {
    if (problem.flags.controlled_vol) throw ConfigError("solve_reference_bsde requires uncontrolled volatility");
    if (basis.kind != RegressionBasis::Kind::markov) throw ConfigError("solve_reference_bsde supports the Markov basis only");
    const std::span<const double> aux;
    if (picard_iters < 1) throw ConfigError("picard_iters must be >= 1");
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, d = problem.noise_dim, m = problem.state_dim;
    const std::size_t row = steps + 1;
    const std::size_t cols = basis.num_features(m);
    if (cols * 10 > n) throw ConfigError("regression basis has more than num_paths/10 columns");
    const std::size_t k = basis.num_inputs(m);
    const double dt = e.grid.step();
    const PolicySelector selector(problem, PolicySelector::Form::reduced);

    BackwardSolution sol;
    sol.y.assign(n * row, 0.0);
    std::vector<double> target(n);
    for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            const double g = problem.terminal_reward(e.prefix(p, steps));
            detail::require_finite(g, "terminal_reward");
            target[p] = g;
            sol.y[p * row + steps] = g;
        }
    });
    double max_G = 0.0;
    for (double g : target) max_G = std::max(max_G, std::abs(g));
    double max_H = 0.0, max_y = 0.0;
    std::size_t clips = 0;

    std::vector<StepFit> zfits(steps);
    std::vector<double> H(n), yj(n);
    auto inputs = [&](std::size_t j) {
        return [&, j](std::size_t p, std::span<double> out) { regression_inputs(e, basis, aux, p, j, out); };
    };
    for (std::size_t j = steps; j-- > 0;) {
        const double t = e.grid.time(j);
        StepFit yfit = fit_step(basis, j, n, k, inputs(j), 1,
                                [&](std::size_t p, std::span<double> out) { out[0] = sol.y[p * row + j + 1]; }, workers);
        auto refresh_y = [&](const StepFit& f) {
            for_each_block(n, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
                std::vector<double> x(k);
                for (std::size_t p = begin; p < end; ++p) {
                    regression_inputs(e, basis, aux, p, j, x);
                    yj[p] = f.evaluate1(x);
                }
            });
        };
        refresh_y(yfit);
        for (int it = 0; it < picard_iters; ++it) {
            if (it == 0 || estimator == ZEstimator::increment)
                zfits[j] = detail::fit_z_step(
                    problem, e, basis, aux, j, [&](std::size_t p) { return sol.y[p * row + j + 1]; },
                    [&](std::size_t p) { return yj[p]; }, false, estimator, workers);
            const ZRepresentation zstep(d, 1, problem.z_clip, ZRepresentation::Form::martingale, basis, {zfits[j]});
            std::vector<std::size_t> block_clips(num_blocks(n), 0);
            for_each_block(n, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
                CoefficientScratch scratch(problem);
                std::vector<double> x(k), z(d);
                for (std::size_t p = begin; p < end; ++p) {
                    regression_inputs(e, basis, aux, p, j, x);
                    block_clips[b] += zstep.evaluate(0, x, z) ? 1 : 0;
                    const auto path = e.prefix(p, j);
                    const std::size_t a = selector.select(t, path, z, scratch);
                    H[p] = eval_h(problem, t, path, z, a, scratch);
                }
            });
            if (it + 1 == picard_iters)
                for (auto c : block_clips) clips += c;
            yfit = fit_step(basis, j, n, k, inputs(j), 1,
                            [&](std::size_t p, std::span<double> out) { out[0] = target[p] + H[p] * dt; }, workers);
            refresh_y(yfit);
        }
        for (std::size_t p = 0; p < n; ++p) {
            target[p] += H[p] * dt;
            sol.y[p * row + j] = yj[p];
            max_H = std::max(max_H, std::abs(H[p]));
            max_y = std::max(max_y, std::abs(yj[p]));
        }
        const double bound = max_G + problem.horizon * max_H;
        if (max_y > 10.0 * bound + 1e-12)
            throw NumericalError("reference BSDE diverged at step " + std::to_string(j) + ": |y| = " +
                                 std::to_string(max_y) + " exceeds 10x the a-priori bound " + std::to_string(bound));
    }
    double mean = 0.0;
    for (double v : target) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : target) var += (v - mean) * (v - mean);
    sol.value = mean;
    sol.std_error = std::sqrt(var / static_cast<double>(n - (n > 1 ? 1 : 0)) / static_cast<double>(n));
    for (std::size_t p = 0; p < n; ++p) sol.y[p * row] = mean;
    sol.z = ZRepresentation(d, steps, problem.z_clip, ZRepresentation::Form::martingale, basis, std::move(zfits));
    if (diag) {
        diag->clip_activations = clips;
        diag->max_abs_y = max_y;
        diag->a_priori_bound = max_G + problem.horizon * max_H;
    }
    return sol;
}

}  // namespace pia
