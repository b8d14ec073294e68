#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "problem.hpp"
#include "regression.hpp"

namespace pia {

/// Uniform time grid t_j = j T / N on [0, T].
struct TimeGrid {
    double horizon = 1.0;
    std::size_t num_steps = 100;

    TimeGrid() = default;
    TimeGrid(double horizon_, std::size_t num_steps_) : horizon(horizon_), num_steps(num_steps_) {
        if (!(horizon > 0.0) || num_steps == 0) throw ConfigError("time grid needs a positive horizon and step count");
    }

    double step() const { return horizon / static_cast<double>(num_steps); }
    double time(std::size_t j) const {
        return j == num_steps ? horizon : horizon * static_cast<double>(j) / static_cast<double>(num_steps);
    }
    bool operator==(const TimeGrid&) const = default;
};

/// Gaussian increments N(0, step I_d), laid out [path][step][component].
/// Each path draws from its own engine seeded by (seed, path index), so the
/// batch is reproducible and independent of how paths are split across threads.
struct BrownianBatch {
    std::size_t num_paths = 0;
    std::size_t num_steps = 0;
    std::size_t dim = 1;
    double step = 0.0;
    std::uint64_t seed = 0;
    std::vector<double> increments;

    static BrownianBatch generate(const TimeGrid& grid, std::size_t num_paths, std::size_t dim, std::uint64_t seed,
                                  unsigned workers = 1) {
        if (num_paths == 0 || dim == 0) throw ConfigError("Brownian batch needs paths and dimension");
        BrownianBatch out;
        out.num_paths = num_paths;
        out.num_steps = grid.num_steps;
        out.dim = dim;
        out.step = grid.step();
        out.seed = seed;
        out.increments.resize(num_paths * grid.num_steps * dim);
        const double sd = std::sqrt(out.step);
        const std::size_t per_path = grid.num_steps * dim;
        for_each_block(num_paths, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
            for (std::size_t p = begin; p < end; ++p) {
                std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                  static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p >> 32)};
                std::mt19937_64 engine(seq);
                std::normal_distribution<double> normal(0.0, sd);
                double* row = out.increments.data() + p * per_path;
                for (std::size_t i = 0; i < per_path; ++i) row[i] = normal(engine);
            }
        });
        return out;
    }

    std::span<const double> increment(std::size_t p, std::size_t j) const {
        return std::span<const double>(increments).subspan((p * num_steps + j) * dim, dim);
    }
};

/// Simulated state paths on a shared Brownian batch plus per-path log
/// measure-change weights. `actions` is filled only by simulators that apply a
/// feedback policy (one grid index per path and step).
struct PathEnsemble {
    TimeGrid grid;
    std::shared_ptr<const BrownianBatch> brownian;
    std::size_t state_dim = 1;
    std::vector<double> states;  // [path][step 0..N][component]
    std::vector<double> log_weights;
    std::vector<std::uint32_t> actions;

    std::size_t num_paths() const { return log_weights.size(); }
    std::size_t row_length() const { return (grid.num_steps + 1) * state_dim; }

    std::span<const double> state(std::size_t p, std::size_t j) const {
        return std::span<const double>(states).subspan(p * row_length() + j * state_dim, state_dim);
    }
    PathPrefix prefix(std::size_t p, std::size_t j) const {
        return PathPrefix(std::span<const double>(states).subspan(p * row_length(), (j + 1) * state_dim), state_dim);
    }
    std::uint32_t action(std::size_t p, std::size_t j) const { return actions[p * grid.num_steps + j]; }
};

namespace detail {

inline void check_batch(const ControlProblem& problem, const TimeGrid& grid, const BrownianBatch& b) {
    if (b.num_steps != grid.num_steps || b.dim != problem.noise_dim)
        throw ConfigError("Brownian batch does not match the time grid or noise dimension");
    if (std::abs(grid.horizon - problem.horizon) > 1e-12 * problem.horizon)
        throw ConfigError("time grid horizon differs from the problem horizon");
}

inline PathEnsemble empty_ensemble(const ControlProblem& problem, const TimeGrid& grid,
                                   std::shared_ptr<const BrownianBatch> brownian) {
    PathEnsemble e;
    e.grid = grid;
    e.state_dim = problem.state_dim;
    e.states.resize(brownian->num_paths * (grid.num_steps + 1) * problem.state_dim);
    e.log_weights.assign(brownian->num_paths, 0.0);
    e.brownian = std::move(brownian);
    return e;
}

// x_{j+1} = x_j + dt * sigma b + sigma dB, with the drift part optional.
inline void euler_step(const PathEnsemble& e, std::size_t p, std::size_t j, std::span<const double> sigma,
                       std::span<const double> b, std::span<double> next) {
    const std::size_t m = e.state_dim, d = e.brownian->dim;
    const auto x = e.state(p, j);
    const auto dB = e.brownian->increment(p, j);
    const double dt = e.grid.step();
    for (std::size_t i = 0; i < m; ++i) {
        double v = x[i];
        for (std::size_t c = 0; c < d; ++c) {
            v += sigma[i * d + c] * dB[c];
            if (!b.empty()) v += sigma[i * d + c] * b[c] * dt;
        }
        if (!std::isfinite(v))
            throw NumericalError("non-finite state on path " + std::to_string(p) + " at step " + std::to_string(j + 1));
        next[i] = v;
    }
}

inline std::span<double> state_mut(PathEnsemble& e, std::size_t p, std::size_t j) {
    return std::span<double>(e.states).subspan(p * e.row_length() + j * e.state_dim, e.state_dim);
}

}  // namespace detail

/// Euler-Maruyama for the driftless state equation dX = sigma(t, X) dB.
/// Log-weights start at zero (the reference measure).
inline PathEnsemble simulate_driftless(const ControlProblem& problem, const TimeGrid& grid,
                                       std::shared_ptr<const BrownianBatch> brownian, unsigned workers = 1) {
    if (problem.flags.controlled_vol) throw ConfigError("simulate_driftless requires uncontrolled volatility");
    detail::check_batch(problem, grid, *brownian);
    PathEnsemble e = detail::empty_ensemble(problem, grid, std::move(brownian));
    const auto any_action = problem.actions.point(0);  // sigma ignores it in this mode
    for_each_block(e.num_paths(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> sigma(problem.state_dim * problem.noise_dim);
        for (std::size_t p = begin; p < end; ++p) {
            std::copy(problem.initial_state.begin(), problem.initial_state.end(), detail::state_mut(e, p, 0).begin());
            for (std::size_t j = 0; j < grid.num_steps; ++j) {
                problem.vol(grid.time(j), e.prefix(p, j), any_action, sigma);
                for (double s : sigma)
                    if (!std::isfinite(s))
                        throw NumericalError("non-finite volatility on path " + std::to_string(p) + " at step " +
                                             std::to_string(j));
                detail::euler_step(e, p, j, sigma, {}, detail::state_mut(e, p, j + 1));
            }
        }
    });
    return e;
}

/// Log of the discrete stochastic exponential of int theta . dB per path:
/// sum_j theta_j . dB_j - 1/2 |theta_j|^2 dt, left-point. `theta` is laid out
/// [path][step][component].
inline std::vector<double> girsanov_log_weights(const PathEnsemble& e, std::span<const double> theta,
                                                unsigned workers = 1) {
    const std::size_t n = e.num_paths(), steps = e.grid.num_steps, d = e.brownian->dim;
    if (theta.size() != n * steps * d) throw ConfigError("theta must have one d-vector per path and step");
    std::vector<double> out(n, 0.0);
    const double dt = e.grid.step();
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
                acc += ito - 0.5 * sq * dt;
            }
            if (!std::isfinite(acc)) throw NumericalError("non-finite Girsanov weight on path " + std::to_string(p));
            out[p] = acc;
        }
    });
    return out;
}

/// Fills regression inputs for path p at step j: the current state, then the
/// accumulated running cost when the basis asks for it (`aux`, [path][step]).
inline void regression_inputs(const PathEnsemble& e, const RegressionBasis& basis, std::span<const double> aux,
                              std::size_t p, std::size_t j, std::span<double> out) {
    const auto x = e.state(p, j);
    std::copy(x.begin(), x.end(), out.begin());
    if (basis.kind == RegressionBasis::Kind::path) {
        if (aux.empty()) throw ConfigError("path basis needs the accumulated running cost");
        out[e.state_dim] = aux[p * (e.grid.num_steps + 1) + j];
    }
}

/// Euler-Maruyama for the controlled-volatility forward equation
/// dX = sigma(t, X, u*) dB, where u* maximizes sigma b . p - L over the grid
/// and p is the previous iterate's state gradient evaluated along the new path.
/// The chosen actions are recorded per path and step.
inline PathEnsemble simulate_controlled_forward(const ControlProblem& problem, const TimeGrid& grid,
                                                std::shared_ptr<const BrownianBatch> brownian,
                                                const ZRepresentation& z_prev, unsigned workers = 1) {
    if (!problem.flags.controlled_vol) throw ConfigError("simulate_controlled_forward requires controlled volatility");
    if (z_prev.form() != ZRepresentation::Form::gradient || z_prev.dim() != problem.state_dim)
        throw ConfigError("controlled forward simulation needs a state-gradient representation");
    if (!z_prev.is_zero() && z_prev.basis().kind != RegressionBasis::Kind::markov)
        throw ConfigError("controlled forward simulation supports the Markov basis only");
    detail::check_batch(problem, grid, *brownian);
    PathEnsemble e = detail::empty_ensemble(problem, grid, std::move(brownian));
    e.actions.resize(e.num_paths() * grid.num_steps);
    const PolicySelector selector(problem, PolicySelector::Form::full);
    const RegressionBasis markov{};
    for_each_block(e.num_paths(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        CoefficientScratch scratch(problem);
        std::vector<double> sigma(problem.state_dim * problem.noise_dim), gradient(problem.state_dim),
            inputs(problem.state_dim);
        for (std::size_t p = begin; p < end; ++p) {
            std::copy(problem.initial_state.begin(), problem.initial_state.end(), detail::state_mut(e, p, 0).begin());
            for (std::size_t j = 0; j < grid.num_steps; ++j) {
                const double t = grid.time(j);
                const auto path = e.prefix(p, j);
                regression_inputs(e, markov, {}, p, j, inputs);
                z_prev.evaluate(j, inputs, gradient);
                const std::size_t a = selector.select(t, path, gradient, scratch);
                e.actions[p * grid.num_steps + j] = static_cast<std::uint32_t>(a);
                problem.vol(t, path, problem.actions.point(a), sigma);
                detail::euler_step(e, p, j, sigma, {}, detail::state_mut(e, p, j + 1));
            }
        }
    });
    return e;
}

/// Euler-Maruyama for the drifted equation dX = sigma b(u*) dt + sigma dB under
/// the feedback u*(t, X, Z) of a martingale-form representation (uncontrolled volatility).
inline PathEnsemble simulate_feedback_drifted(const ControlProblem& problem, const TimeGrid& grid,
                                              std::shared_ptr<const BrownianBatch> brownian,
                                              const ZRepresentation& z_prev, unsigned workers = 1) {
    if (problem.flags.controlled_vol) throw ConfigError("drifted simulation requires uncontrolled volatility");
    if (z_prev.form() != ZRepresentation::Form::martingale || z_prev.dim() != problem.noise_dim)
        throw ConfigError("drifted simulation needs a martingale-form representation");
    if (!z_prev.is_zero() && z_prev.basis().kind != RegressionBasis::Kind::markov)
        throw ConfigError("drifted simulation supports the Markov basis only");
    detail::check_batch(problem, grid, *brownian);
    PathEnsemble e = detail::empty_ensemble(problem, grid, std::move(brownian));
    e.actions.resize(e.num_paths() * grid.num_steps);
    const PolicySelector selector(problem, PolicySelector::Form::reduced);
    const RegressionBasis markov{};
    for_each_block(e.num_paths(), workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        CoefficientScratch scratch(problem);
        std::vector<double> sigma(problem.state_dim * problem.noise_dim), z(problem.noise_dim),
            inputs(problem.state_dim), b(problem.noise_dim);
        for (std::size_t p = begin; p < end; ++p) {
            std::copy(problem.initial_state.begin(), problem.initial_state.end(), detail::state_mut(e, p, 0).begin());
            for (std::size_t j = 0; j < grid.num_steps; ++j) {
                const double t = grid.time(j);
                const auto path = e.prefix(p, j);
                regression_inputs(e, markov, {}, p, j, inputs);
                z_prev.evaluate(j, inputs, z);
                const std::size_t a = selector.select(t, path, z, scratch);
                e.actions[p * grid.num_steps + j] = static_cast<std::uint32_t>(a);
                const auto u = problem.actions.point(a);
                problem.vol(t, path, u, sigma);
                problem.drift(t, path, u, b);
                detail::euler_step(e, p, j, sigma, b, detail::state_mut(e, p, j + 1));
            }
        }
    });
    return e;
}

// Flat binary dump for debugging: magic, dims, seed, horizon, then
// increments, states and log-weights as native doubles, row-major.
inline constexpr char kEnsembleMagic[8] = {'P', 'I', 'A', 'E', 'N', 'S', '0', '1'};

inline void write_ensemble(const std::string& path, const PathEnsemble& e) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open " + path + " for writing");
    const std::uint64_t header[5] = {e.num_paths(), e.grid.num_steps, e.state_dim, e.brownian->dim, e.brownian->seed};
    out.write(kEnsembleMagic, sizeof kEnsembleMagic);
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(&e.grid.horizon), sizeof(double));
    auto dump = [&](const std::vector<double>& v) {
        out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    dump(e.brownian->increments);
    dump(e.states);
    dump(e.log_weights);
    if (!out) throw NumericalError("failed writing ensemble dump " + path);
}

inline PathEnsemble read_ensemble(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);
    char magic[8];
    std::uint64_t header[5];
    double horizon = 0.0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(header), sizeof header);
    in.read(reinterpret_cast<char*>(&horizon), sizeof horizon);
    if (!in || std::memcmp(magic, kEnsembleMagic, sizeof magic) != 0) throw ConfigError(path + " is not an ensemble dump");
    auto batch = std::make_shared<BrownianBatch>();
    batch->num_paths = header[0];
    batch->num_steps = header[1];
    batch->dim = header[3];
    batch->seed = header[4];
    PathEnsemble e;
    e.grid = TimeGrid(horizon, header[1]);
    batch->step = e.grid.step();
    e.state_dim = header[2];
    auto load = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    };
    load(batch->increments, header[0] * header[1] * header[3]);
    load(e.states, header[0] * (header[1] + 1) * header[2]);
    load(e.log_weights, header[0]);
    if (!in) throw ConfigError(path + " is truncated");
    e.brownian = std::move(batch);
    return e;
}

}  // namespace pia
