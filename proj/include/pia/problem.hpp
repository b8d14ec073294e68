#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace pia {

/// Read-only view of a state path from time index 0 up to and including the
/// current index. Storage is row-major, one row of `dim` values per time point.
class PathPrefix {
public:
    PathPrefix(std::span<const double> rows, std::size_t dim) : rows_(rows), dim_(dim) {}

    std::size_t dim() const { return dim_; }
    std::size_t length() const { return rows_.size() / dim_; }
    std::span<const double> at(std::size_t i) const { return rows_.subspan(i * dim_, dim_); }
    std::span<const double> current() const { return at(length() - 1); }

private:
    std::span<const double> rows_;
    std::size_t dim_;
};

/// Drift or volatility coefficient: writes its value (length d, or m*d row-major) into `out`.
using VectorCoefficient =
    std::function<void(double t, const PathPrefix& path, std::span<const double> u, std::span<double> out)>;
using ScalarCoefficient = std::function<double(double t, const PathPrefix& path, std::span<const double> u)>;
using TerminalFunctional = std::function<double(const PathPrefix& path)>;

/// Finite discretization of the compact action set. Points are kept in
/// lexicographic order, so index order is the tie-break order everywhere.
class ActionGrid {
public:
    ActionGrid() = default;

    ActionGrid(std::size_t dim, std::vector<double> flat_points, double resolution = 0.0)
        : dim_(dim), resolution_(resolution) {
        if (dim == 0) throw ConfigError("action grid dimension must be positive");
        if (flat_points.empty() || flat_points.size() % dim != 0)
            throw ConfigError("action grid needs at least one point of dimension " + std::to_string(dim));
        const std::size_t n = flat_points.size() / dim;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        auto row = [&](std::size_t i) { return std::span<const double>(flat_points).subspan(i * dim, dim); };
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::lexicographical_compare(row(a).begin(), row(a).end(), row(b).begin(), row(b).end());
        });
        points_.reserve(flat_points.size());
        for (std::size_t i = 0; i < n; ++i) {
            auto r = row(order[i]);
            if (!std::all_of(r.begin(), r.end(), [](double v) { return std::isfinite(v); }))
                throw ConfigError("action grid point is not finite");
            if (i > 0 && std::equal(r.begin(), r.end(), row(order[i - 1]).begin()))
                throw ConfigError("action grid points must be pairwise distinct");
            points_.insert(points_.end(), r.begin(), r.end());
        }
    }

    /// Tensor grid with `counts[i]` equally spaced points on [lo[i], hi[i]].
    static ActionGrid box(std::span<const double> lo, std::span<const double> hi, std::span<const std::size_t> counts) {
        const std::size_t k = lo.size();
        if (k == 0 || hi.size() != k || counts.size() != k) throw ConfigError("action box dimensions mismatch");
        std::vector<std::vector<double>> axes(k);
        double resolution = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            if (counts[i] == 0 || !(lo[i] <= hi[i])) throw ConfigError("invalid action box axis");
            if (counts[i] == 1) {
                axes[i] = {lo[i]};
                continue;
            }
            const double h = (hi[i] - lo[i]) / static_cast<double>(counts[i] - 1);
            resolution = std::max(resolution, h);
            for (std::size_t j = 0; j < counts[i]; ++j)
                axes[i].push_back(j + 1 == counts[i] ? hi[i] : lo[i] + h * static_cast<double>(j));
        }
        std::vector<double> flat;
        std::vector<std::size_t> idx(k, 0);
        while (true) {
            for (std::size_t i = 0; i < k; ++i) flat.push_back(axes[i][idx[i]]);
            std::size_t i = k;
            while (i > 0 && ++idx[i - 1] == axes[i - 1].size()) idx[--i] = 0;
            if (i == 0) break;
        }
        return ActionGrid(k, std::move(flat), resolution);
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return dim_ == 0 ? 0 : points_.size() / dim_; }
    double resolution() const { return resolution_; }
    std::span<const double> point(std::size_t i) const { return std::span<const double>(points_).subspan(i * dim_, dim_); }

    std::optional<std::size_t> find(std::span<const double> u) const {
        if (u.size() != dim_) return std::nullopt;
        for (std::size_t i = 0; i < size(); ++i)
            if (std::equal(u.begin(), u.end(), point(i).begin())) return i;
        return std::nullopt;
    }

private:
    std::size_t dim_ = 0;
    double resolution_ = 0.0;
    std::vector<double> points_;
};

struct ProblemFlags {
    bool markovian = true;       // coefficients read only the current state
    bool controlled_vol = false; // sigma depends on the action
    bool state_free = false;     // b, sigma, L depend on the action only (not on t or the path)
};

/// The control problem datum: horizon, dimensions, deterministic initial
/// state, action grid and coefficient callables.
struct ControlProblem {
    std::string name;
    double horizon = 1.0;
    std::size_t state_dim = 1;  // m
    std::size_t noise_dim = 1;  // d
    std::vector<double> initial_state;
    ActionGrid actions;
    VectorCoefficient drift;  // b, length d
    VectorCoefficient vol;    // sigma, m x d row-major
    ScalarCoefficient running_cost;
    TerminalFunctional terminal_reward;
    ProblemFlags flags;
    double drift_bound = 1.0;
    double vol_bound = 1.0;
    double z_clip = 4.0;

    std::size_t action_dim() const { return actions.dim(); }

    void validate() const {
        if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ConfigError(name + ": horizon must be positive");
        if (state_dim == 0 || noise_dim == 0) throw ConfigError(name + ": state and noise dimensions must be positive");
        if (initial_state.size() != state_dim) throw ConfigError(name + ": initial state has wrong length");
        if (actions.size() == 0) throw ConfigError(name + ": empty action grid");
        if (!drift || !vol || !running_cost || !terminal_reward)
            throw ConfigError(name + ": all coefficient callables must be set");
        if (!(drift_bound >= 0.0) || !(vol_bound >= 0.0)) throw ConfigError(name + ": coefficient bounds must be nonnegative");
        if (!(z_clip > 0.0)) throw ConfigError(name + ": z_clip must be positive");
    }
};

namespace detail {

inline void require_finite(double v, const char* coefficient) {
    if (!std::isfinite(v)) throw NumericalError(std::string("non-finite value from coefficient '") + coefficient + "'");
}

inline void require_finite(std::span<const double> v, const char* coefficient) {
    for (double x : v) require_finite(x, coefficient);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace detail

/// Small scratch buffers reused across coefficient evaluations.
struct CoefficientScratch {
    std::vector<double> b, sigma, sigma_b;
    explicit CoefficientScratch(const ControlProblem& p)
        : b(p.noise_dim), sigma(p.state_dim * p.noise_dim), sigma_b(p.state_dim) {}
};

/// Reduced Hamiltonian b(t,x,u).z - L(t,x,u) at a grid action.
inline double eval_h(const ControlProblem& problem, double t, const PathPrefix& path, std::span<const double> z,
                     std::size_t action, CoefficientScratch& scratch) {
    const auto u = problem.actions.point(action);
    problem.drift(t, path, u, scratch.b);
    detail::require_finite(scratch.b, "drift");
    const double cost = problem.running_cost(t, path, u);
    detail::require_finite(cost, "running_cost");
    return detail::dot(scratch.b, z) - cost;
}

inline double eval_h(const ControlProblem& problem, double t, const PathPrefix& path, std::span<const double> z,
                     std::span<const double> u) {
    const auto index = problem.actions.find(u);
    if (!index) throw ConfigError("action is not a point of the action grid");
    if (z.size() != problem.noise_dim) throw ConfigError("z must have length noise_dim");
    CoefficientScratch scratch(problem);
    return eval_h(problem, t, path, z, *index, scratch);
}

struct ArgmaxResult {
    double value;
    std::size_t action;  // index into the action grid
};

/// Optimized Hamiltonian H = max over grid actions of h, with the
/// lexicographically smallest maximizer.
inline ArgmaxResult eval_H_argmax(const ControlProblem& problem, double t, const PathPrefix& path,
                                  std::span<const double> z) {
    if (problem.flags.controlled_vol) throw ConfigError("eval_H_argmax requires uncontrolled volatility");
    if (problem.actions.size() == 0) throw ConfigError("empty action grid");
    CoefficientScratch scratch(problem);
    ArgmaxResult best{-std::numeric_limits<double>::infinity(), 0};
    for (std::size_t a = 0; a < problem.actions.size(); ++a) {
        const double v = eval_h(problem, t, path, z, a, scratch);
        if (v > best.value) best = {v, a};
    }
    return best;
}

/// sigma*b(u).z - L(u), where z has length m (the state gradient).
inline double eval_full_h(const ControlProblem& problem, double t, const PathPrefix& path, std::span<const double> z,
                          std::size_t action, CoefficientScratch& s) {
    const auto u = problem.actions.point(action);
    problem.drift(t, path, u, s.b);
    detail::require_finite(s.b, "drift");
    problem.vol(t, path, u, s.sigma);
    detail::require_finite(s.sigma, "vol");
    const std::size_t m = problem.state_dim, d = problem.noise_dim;
    for (std::size_t i = 0; i < m; ++i) s.sigma_b[i] = detail::dot(std::span<const double>(s.sigma).subspan(i * d, d), s.b);
    const double cost = problem.running_cost(t, path, u);
    detail::require_finite(cost, "running_cost");
    return detail::dot(s.sigma_b, z) - cost;
}

/// sigma sigma^T (m x m, row-major) at a grid action.
inline std::vector<double> vol_level(const ControlProblem& problem, double t, const PathPrefix& path, std::size_t action) {
    const std::size_t m = problem.state_dim, d = problem.noise_dim;
    std::vector<double> sigma(m * d), level(m * m, 0.0);
    problem.vol(t, path, problem.actions.point(action), sigma);
    detail::require_finite(sigma, "vol");
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            for (std::size_t c = 0; c < d; ++c) level[i * m + j] += sigma[i * d + c] * sigma[j * d + c];
    return level;
}

namespace detail {
inline double frobenius_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}
}  // namespace detail

/// Distinct values of sigma sigma^T over the grid at (t, path), with the
/// matching tolerance: half the smallest gap between distinct levels.
struct VolLevels {
    std::vector<std::vector<double>> levels;
    double tolerance = 0.0;
};

inline VolLevels vol_levels(const ControlProblem& problem, double t, const PathPrefix& path) {
    std::vector<std::vector<double>> all;
    all.reserve(problem.actions.size());
    double scale = 0.0;
    for (std::size_t a = 0; a < problem.actions.size(); ++a) {
        all.push_back(vol_level(problem, t, path, a));
        for (double v : all.back()) scale = std::max(scale, std::abs(v));
    }
    const double same = 1e-12 * std::max(1.0, scale);
    VolLevels out;
    for (auto& level : all) {
        bool seen = false;
        for (const auto& known : out.levels)
            if (detail::frobenius_distance(level, known) <= same) {
                seen = true;
                break;
            }
        if (!seen) out.levels.push_back(std::move(level));
    }
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < out.levels.size(); ++i)
        for (std::size_t j = i + 1; j < out.levels.size(); ++j)
            gap = std::min(gap, detail::frobenius_distance(out.levels[i], out.levels[j]));
    out.tolerance = std::isfinite(gap) ? 0.5 * gap : same;
    return out;
}

/// Full Hamiltonian restricted to the level set {u : sigma sigma^T(u) = sigma_level}.
/// A negative `level_tol` selects the default (half the level spacing).
inline ArgmaxResult eval_full_H_argmax(const ControlProblem& problem, double t, const PathPrefix& path,
                                       std::span<const double> z, std::span<const double> sigma_level,
                                       double level_tol = -1.0) {
    if (!problem.flags.controlled_vol) throw ConfigError("eval_full_H_argmax requires controlled volatility");
    const std::size_t m = problem.state_dim;
    if (z.size() != m || sigma_level.size() != m * m) throw ConfigError("eval_full_H_argmax: dimension mismatch");
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (std::abs(sigma_level[i * m + j] - sigma_level[j * m + i]) > 1e-12 * (1.0 + std::abs(sigma_level[i * m + j])))
                throw ConfigError("sigma_level must be symmetric");
    if (level_tol < 0.0) level_tol = vol_levels(problem, t, path).tolerance;
    CoefficientScratch scratch(problem);
    std::optional<ArgmaxResult> best;
    for (std::size_t a = 0; a < problem.actions.size(); ++a) {
        if (detail::frobenius_distance(vol_level(problem, t, path, a), sigma_level) > level_tol) continue;
        const double v = eval_full_h(problem, t, path, z, a, scratch);
        if (!best || v > best->value) best = ArgmaxResult{v, a};
    }
    if (!best) throw EmptyLevelSetError("no grid action on the requested volatility level");
    return *best;
}

/// Outer maximization over volatility levels of 1/2 Tr[Sigma gamma] + H(Sigma).
/// `gamma` (m x m) may be empty, meaning zero curvature.
inline ArgmaxResult eval_full_policy_by_levels(const ControlProblem& problem, double t, const PathPrefix& path,
                                               std::span<const double> z, std::span<const double> gamma = {}) {
    const auto levels = vol_levels(problem, t, path);
    const std::size_t m = problem.state_dim;
    std::optional<ArgmaxResult> best;
    for (const auto& level : levels.levels) {
        auto inner = eval_full_H_argmax(problem, t, path, z, level, levels.tolerance);
        if (!gamma.empty()) {
            double trace = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) trace += level[i * m + j] * gamma[j * m + i];
            inner.value += 0.5 * trace;
        }
        if (!best || inner.value > best->value || (inner.value == best->value && inner.action < best->action))
            best = inner;
    }
    return *best;
}

/// Smallness condition for convergence with controlled volatility, from the
/// Lipschitz constants of G, sigma in u, the selector in x and sigma in x.
inline bool check_vol_smallness(double horizon, double lip_G, double lip_sigma_u, double lip_ustar_x,
                                double lip_sigma_x) {
    for (double c : {lip_G, lip_sigma_u, lip_ustar_x, lip_sigma_x})
        if (!(c >= 0.0)) throw ConfigError("Lipschitz constants must be nonnegative");
    if (lip_G == 0.0 || lip_sigma_u == 0.0 || lip_ustar_x == 0.0) return true;
    const double coupling = lip_sigma_x + lip_sigma_u * lip_ustar_x;
    const double lhs = 8.0 * lip_G * lip_G * lip_sigma_u * lip_sigma_u * lip_ustar_x * lip_ustar_x *
                       std::exp(8.0 * coupling * coupling * horizon);
    return lhs < 1.0;
}

inline bool check_vol_smallness(const ControlProblem& problem, double lip_G, double lip_sigma_u, double lip_ustar_x,
                                double lip_sigma_x) {
    return check_vol_smallness(problem.horizon, lip_G, lip_sigma_u, lip_ustar_x, lip_sigma_x);
}

/// Non-decreasing penalty weights phi(n) with phi(0) = 1.
class PenaltySchedule {
public:
    enum class Kind { exponential, super_exponential, table };

    static PenaltySchedule exponential(double base) {
        if (!(base > 1.0) || !std::isfinite(base)) throw ConfigError("exponential schedule base must be > 1");
        return PenaltySchedule(Kind::exponential, base, {});
    }
    /// phi(n) = base^(n(n+1)/2)
    static PenaltySchedule super_exponential(double base) {
        if (!(base > 1.0) || !std::isfinite(base)) throw ConfigError("super-exponential schedule base must be > 1");
        return PenaltySchedule(Kind::super_exponential, base, {});
    }
    static PenaltySchedule table(std::vector<double> values) {
        if (values.empty()) throw ConfigError("penalty table must not be empty");
        if (values.front() != 1.0) throw ConfigError("penalty schedule must satisfy phi(0) = 1");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (!(values[i] > 0.0) || !std::isfinite(values[i])) throw ConfigError("penalty values must be positive and finite");
            if (i > 0 && values[i] < values[i - 1]) throw ConfigError("penalty schedule must be non-decreasing");
        }
        return PenaltySchedule(Kind::table, 0.0, std::move(values));
    }

    double operator()(std::size_t n) const {
        switch (kind_) {
            case Kind::exponential:
                return std::pow(base_, static_cast<double>(n));
            case Kind::super_exponential:
                return std::pow(base_, 0.5 * static_cast<double>(n) * static_cast<double>(n + 1));
            case Kind::table:
                if (n >= values_.size())
                    throw ConfigError("penalty table has no entry for n = " + std::to_string(n));
                return values_[n];
        }
        return 1.0;
    }

    /// Throws unless phi is finite for every n <= n_max.
    void require_range(std::size_t n_max) const {
        for (std::size_t n = 0; n <= n_max; ++n)
            if (!std::isfinite((*this)(n))) throw ConfigError("penalty schedule overflows before n_max");
    }

    Kind kind() const { return kind_; }
    double base() const { return base_; }
    const std::vector<double>& values() const { return values_; }

    std::string label() const {
        auto num = [](double v) {
            std::string s = std::to_string(v);
            s.erase(s.find_last_not_of('0') + 1);
            if (!s.empty() && s.back() == '.') s.pop_back();
            return s;
        };
        switch (kind_) {
            case Kind::exponential: return "exp" + num(base_);
            case Kind::super_exponential: return "superexp" + num(base_);
            case Kind::table: return "table";
        }
        return "";
    }

    bool operator==(const PenaltySchedule&) const = default;

private:
    PenaltySchedule(Kind kind, double base, std::vector<double> values)
        : kind_(kind), base_(base), values_(std::move(values)) {}

    Kind kind_;
    double base_;
    std::vector<double> values_;
};

}  // namespace pia
