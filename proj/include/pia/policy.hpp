#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "problem.hpp"

namespace pia {

/// Feedback selector u*(t, x, z) used inside the simulation loops.
///
/// `reduced` maximizes b.z - L (z of length d, uncontrolled volatility);
/// `full` maximizes sigma b.z - L over all grid actions (z of length m),
/// which equals the outer maximization over volatility levels at zero curvature.
///
/// For state-free problems with a scalar argument the maximizers of the family
/// of lines {slope_a z - cost_a} are read off their upper envelope. Queries
/// that land on an envelope breakpoint are re-resolved by exhaustive search so
/// the lexicographic tie-break is preserved exactly.
class PolicySelector {
public:
    enum class Form { reduced, full };

    PolicySelector(const ControlProblem& problem, Form form) : problem_(&problem), form_(form) {
        if (problem.actions.size() == 0) throw ConfigError("empty action grid");
        if (form == Form::reduced && problem.flags.controlled_vol)
            throw ConfigError("reduced selector requires uncontrolled volatility");
        const std::size_t zdim = form == Form::reduced ? problem.noise_dim : problem.state_dim;
        if (problem.flags.state_free && zdim == 1) build_envelope();
    }

    Form form() const { return form_; }
    bool uses_envelope() const { return !slope_.empty(); }

    std::size_t select(double t, const PathPrefix& path, std::span<const double> z, CoefficientScratch& scratch) const {
        if (uses_envelope()) return select_scalar(z[0]);
        ArgmaxResult best{-std::numeric_limits<double>::infinity(), 0};
        for (std::size_t a = 0; a < problem_->actions.size(); ++a) {
            const double v = form_ == Form::reduced ? eval_h(*problem_, t, path, z, a, scratch)
                                                    : eval_full_h(*problem_, t, path, z, a, scratch);
            if (v > best.value) best = {v, a};
        }
        return best.action;
    }

private:
    void build_envelope() {
        const auto& p = *problem_;
        std::vector<double> origin(p.initial_state);
        PathPrefix at_origin(origin, p.state_dim);
        CoefficientScratch scratch(p);
        const std::size_t n = p.actions.size();
        slope_.resize(n);
        cost_.resize(n);
        for (std::size_t a = 0; a < n; ++a) {
            // h(z) = slope * z - cost, with the same floating-point operations as the exhaustive route.
            const double zero = 0.0;
            const double at_zero = form_ == Form::reduced ? eval_h(p, 0.0, at_origin, {&zero, 1}, a, scratch)
                                                          : eval_full_h(p, 0.0, at_origin, {&zero, 1}, a, scratch);
            cost_[a] = -at_zero;
            slope_[a] = form_ == Form::reduced ? scratch.b[0] : scratch.sigma_b[0];
        }
        // Lines sorted by slope, then intercept (descending), then index.
        std::vector<std::size_t> order(n);
        for (std::size_t a = 0; a < n; ++a) order[a] = a;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (slope_[a] != slope_[b]) return slope_[a] < slope_[b];
            if (cost_[a] != cost_[b]) return cost_[a] < cost_[b];
            return a < b;
        });
        for (std::size_t idx : order) {
            if (!hull_.empty() && slope_[hull_.back()] == slope_[idx]) continue;  // dominated or later duplicate
            while (hull_.size() >= 2 && !needed(hull_[hull_.size() - 2], hull_.back(), idx)) hull_.pop_back();
            hull_.push_back(idx);
        }
        breaks_.resize(hull_.empty() ? 0 : hull_.size() - 1);
        for (std::size_t i = 0; i + 1 < hull_.size(); ++i) breaks_[i] = intersection(hull_[i], hull_[i + 1]);
    }

    // z where line a meets line b (slope_a < slope_b).
    double intersection(std::size_t a, std::size_t b) const {
        return (cost_[b] - cost_[a]) / (slope_[b] - slope_[a]);
    }

    // Whether the middle line still owns a non-empty interval.
    bool needed(std::size_t left, std::size_t mid, std::size_t right) const {
        return intersection(left, mid) < intersection(mid, right);
    }

    std::size_t select_scalar(double z) const {
        const auto it = std::upper_bound(breaks_.begin(), breaks_.end(), z);
        const std::size_t seg = static_cast<std::size_t>(it - breaks_.begin());
        const double tol = 1e-9 * (1.0 + std::abs(z));
        const bool near_left = seg > 0 && std::abs(z - breaks_[seg - 1]) <= tol;
        const bool near_right = seg < breaks_.size() && std::abs(z - breaks_[seg]) <= tol;
        if (!near_left && !near_right) return hull_[seg];
        std::size_t best = 0;
        double best_value = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < slope_.size(); ++a) {
            const double v = slope_[a] * z - cost_[a];
            if (v > best_value) {
                best_value = v;
                best = a;
            }
        }
        return best;
    }

    const ControlProblem* problem_;
    Form form_;
    std::vector<double> slope_, cost_;
    std::vector<std::size_t> hull_;
    std::vector<double> breaks_;
};

}  // namespace pia
