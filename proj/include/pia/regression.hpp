#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"

namespace pia {

/// Polynomial features for least-squares conditional expectations.
/// `markov` uses the current state; `path` appends the running cost accumulated so far.
struct RegressionBasis {
    enum class Kind { markov, path };
    Kind kind = Kind::markov;
    int degree = 3;
    double ridge = 1e-8;

    std::size_t num_inputs(std::size_t state_dim) const { return state_dim + (kind == Kind::path ? 1 : 0); }

    /// Exponent vectors of all monomials of total degree <= degree, graded order.
    std::vector<std::vector<int>> monomials(std::size_t inputs) const {
        std::vector<std::vector<int>> out{std::vector<int>(inputs, 0)};
        std::vector<std::vector<int>> frontier = out;
        for (int deg = 1; deg <= degree; ++deg) {
            std::vector<std::vector<int>> next;
            for (const auto& e : frontier) {
                // extend only at or after the last nonzero slot to avoid duplicates
                std::size_t last = 0;
                for (std::size_t i = 0; i < inputs; ++i)
                    if (e[i] > 0) last = i;
                for (std::size_t i = last; i < inputs; ++i) {
                    auto f = e;
                    ++f[i];
                    next.push_back(std::move(f));
                }
            }
            out.insert(out.end(), next.begin(), next.end());
            frontier = std::move(next);
        }
        return out;
    }

    std::size_t num_features(std::size_t state_dim) const { return monomials(num_inputs(state_dim)).size(); }

    bool operator==(const RegressionBasis&) const = default;
};

/// Fitted regression for one time step: inputs are standardized with the
/// sample mean and deviation; monomials in degenerate inputs are dropped.
struct StepFit {
    std::vector<double> mean, scale;
    std::vector<std::vector<int>> monomials;  // active columns only
    Eigen::MatrixXd coef;                      // columns x targets
    int max_degree = 0;

    std::size_t num_targets() const { return static_cast<std::size_t>(coef.cols()); }

    void features(std::span<const double> inputs, std::span<double> out) const {
        const std::size_t k = mean.size();
        const std::size_t width = static_cast<std::size_t>(max_degree) + 1;
        if (k * width <= 64) {
            double table[64];
            for (std::size_t i = 0; i < k; ++i) {
                const double s = scale[i] > 0.0 ? (inputs[i] - mean[i]) / scale[i] : 0.0;
                double* row = table + i * width;
                row[0] = 1.0;
                for (std::size_t e = 1; e < width; ++e) row[e] = row[e - 1] * s;
            }
            for (std::size_t c = 0; c < monomials.size(); ++c) {
                double v = 1.0;
                for (std::size_t i = 0; i < k; ++i) v *= table[i * width + static_cast<std::size_t>(monomials[c][i])];
                out[c] = v;
            }
            return;
        }
        thread_local std::vector<std::vector<double>> powers;
        if (powers.size() < k) powers.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            const double s = scale[i] > 0.0 ? (inputs[i] - mean[i]) / scale[i] : 0.0;
            powers[i].assign(static_cast<std::size_t>(max_degree) + 1, 1.0);
            for (int e = 1; e <= max_degree; ++e) powers[i][e] = powers[i][e - 1] * s;
        }
        for (std::size_t c = 0; c < monomials.size(); ++c) {
            double v = 1.0;
            for (std::size_t i = 0; i < k; ++i) v *= powers[i][monomials[c][i]];
            out[c] = v;
        }
    }

    void evaluate(std::span<const double> inputs, std::span<double> out) const {
        thread_local std::vector<double> f;
        f.resize(monomials.size());
        features(inputs, f);
        for (std::size_t t = 0; t < num_targets(); ++t) {
            double s = 0.0;
            for (std::size_t c = 0; c < f.size(); ++c) s += f[c] * coef(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t));
            out[t] = s;
        }
    }

    double evaluate1(std::span<const double> inputs) const {
        double v;
        evaluate(inputs, {&v, 1});
        return v;
    }
};

/// Per-path callbacks: fill the regression inputs / targets of path p.
using InputsFn = std::function<void(std::size_t p, std::span<double> out)>;
using TargetsFn = std::function<void(std::size_t p, std::span<double> out)>;
/// Optional per-path multipliers: the design gets one extra copy of the basis per multiplier.
using MultipliersFn = std::function<void(std::size_t p, std::span<double> out)>;

/// Coefficients of a block design [f, f * m_1, ..., f * m_k]; `base` carries the
/// standardization and active monomials, `coef` is (k+1) * columns x targets.
struct BlockFit {
    StepFit base;
    Eigen::MatrixXd coef;
};

/// Ridge least squares of `num_targets` targets onto the basis (and optionally
/// its products with `num_multipliers` per-path multipliers), accumulated over
/// paths in fixed blocks so the result does not depend on the worker count.
inline BlockFit fit_blocks(const RegressionBasis& basis, std::size_t step, std::size_t num_paths, std::size_t num_inputs,
                           const InputsFn& inputs, std::size_t num_targets, const TargetsFn& targets,
                           std::size_t num_multipliers, const MultipliersFn& multipliers, unsigned workers) {
    if (num_paths == 0) throw BasisError(step, "no paths");
    BlockFit out;
    StepFit& fit = out.base;
    const std::size_t k = num_inputs;
    const std::size_t blocks = num_blocks(num_paths);

    // Inputs are gathered once, then standardized with their sample moments.
    std::vector<double> xs(num_paths * k);
    for_each_block(num_paths, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) inputs(p, std::span<double>(xs).subspan(p * k, k));
    });
    std::vector<double> sum_partial(blocks * k, 0.0), var_partial(blocks * k, 0.0);
    for_each_block(num_paths, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t i = 0; i < k; ++i) sum_partial[b * k + i] += xs[p * k + i];
    });
    fit.mean.assign(k, 0.0);
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < k; ++i) fit.mean[i] += sum_partial[b * k + i];
    for (auto& m : fit.mean) m /= static_cast<double>(num_paths);
    for_each_block(num_paths, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p)
            for (std::size_t i = 0; i < k; ++i) {
                const double dx = xs[p * k + i] - fit.mean[i];
                var_partial[b * k + i] += dx * dx;
            }
    });
    fit.scale.assign(k, 0.0);
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t i = 0; i < k; ++i) fit.scale[i] += var_partial[b * k + i];
    for (std::size_t i = 0; i < k; ++i) {
        const double sd = std::sqrt(fit.scale[i] / static_cast<double>(num_paths));
        fit.scale[i] = sd > 1e-12 * (1.0 + std::abs(fit.mean[i])) ? sd : 0.0;
    }
    for (auto& m : basis.monomials(k)) {
        bool active = true;
        for (std::size_t i = 0; i < k; ++i)
            if (m[i] > 0 && fit.scale[i] == 0.0) active = false;
        if (active) {
            for (int e : m) fit.max_degree = std::max(fit.max_degree, e);
            fit.monomials.push_back(std::move(m));
        }
    }

    // Pass 2: normal equations.
    const auto base_cols = static_cast<Eigen::Index>(fit.monomials.size());
    const auto cols = base_cols * static_cast<Eigen::Index>(num_multipliers + 1);
    const auto nt = static_cast<Eigen::Index>(num_targets);
    std::vector<Eigen::MatrixXd> gram(blocks), rhs(blocks);
    for_each_block(num_paths, workers, [&](std::size_t b, std::size_t begin, std::size_t end) {
        const auto rows = static_cast<Eigen::Index>(end - begin);
        Eigen::MatrixXd X(rows, cols), Y(rows, nt);
        std::vector<double> f(static_cast<std::size_t>(base_cols)), y(num_targets), mult(num_multipliers);
        for (std::size_t p = begin; p < end; ++p) {
            fit.features(std::span<const double>(xs).subspan(p * k, k), f);
            targets(p, y);
            if (num_multipliers) multipliers(p, mult);
            const auto r = static_cast<Eigen::Index>(p - begin);
            for (Eigen::Index c = 0; c < base_cols; ++c) X(r, c) = f[static_cast<std::size_t>(c)];
            for (std::size_t q = 0; q < num_multipliers; ++q)
                for (Eigen::Index c = 0; c < base_cols; ++c)
                    X(r, base_cols * static_cast<Eigen::Index>(q + 1) + c) = f[static_cast<std::size_t>(c)] * mult[q];
            for (Eigen::Index t = 0; t < nt; ++t) {
                const double v = y[static_cast<std::size_t>(t)];
                if (!std::isfinite(v)) throw BasisError(step, "non-finite regression target");
                Y(r, t) = v;
            }
        }
        gram[b] = Eigen::MatrixXd::Zero(cols, cols);
        gram[b].selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
        rhs[b].noalias() = X.transpose() * Y;
    });
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(cols, cols), B = Eigen::MatrixXd::Zero(cols, nt);
    for (std::size_t b = 0; b < blocks; ++b) {
        A += gram[b];
        B += rhs[b];
    }
    A.triangularView<Eigen::StrictlyUpper>() = A.transpose();
    const double n = static_cast<double>(num_paths);
    A /= n;
    B /= n;
    A.diagonal().array() += basis.ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    const Eigen::VectorXd pivots = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || pivots.minCoeff() <= 1e-12 * pivots.maxCoeff() ||
        ldlt.rcond() < 1e-14)
        throw BasisError(step, "design matrix is rank deficient beyond ridge rescue");
    out.coef = ldlt.solve(B);
    if (!out.coef.allFinite()) throw BasisError(step, "non-finite regression coefficients");
    return out;
}

inline StepFit fit_step(const RegressionBasis& basis, std::size_t step, std::size_t num_paths, std::size_t num_inputs,
                        const InputsFn& inputs, std::size_t num_targets, const TargetsFn& targets, unsigned workers) {
    BlockFit b = fit_blocks(basis, step, num_paths, num_inputs, inputs, num_targets, targets, 0, {}, workers);
    b.base.coef = std::move(b.coef);
    return std::move(b.base);
}

/// Regression representation of a Z process: one fit per time step, values
/// clipped to norm <= clip on evaluation. An empty fit list is the zero process.
///
/// `martingale` form holds Z (length d, the dB integrand). `gradient` form holds
/// the state gradient (length m) used by the controlled-volatility selector.
class ZRepresentation {
public:
    enum class Form { martingale, gradient };

    ZRepresentation() = default;
    ZRepresentation(std::size_t dim, std::size_t num_steps, double clip, Form form, RegressionBasis basis = {},
                    std::vector<StepFit> fits = {})
        : dim_(dim), num_steps_(num_steps), clip_(clip), form_(form), basis_(basis), fits_(std::move(fits)) {}

    static ZRepresentation zero(std::size_t dim, std::size_t num_steps, double clip, Form form = Form::martingale,
                                RegressionBasis basis = {}) {
        return ZRepresentation(dim, num_steps, clip, form, basis);
    }

    std::size_t dim() const { return dim_; }
    std::size_t num_steps() const { return num_steps_; }
    double clip() const { return clip_; }
    Form form() const { return form_; }
    const RegressionBasis& basis() const { return basis_; }
    bool is_zero() const { return fits_.empty(); }
    const std::vector<StepFit>& fits() const { return fits_; }

    /// Writes Z at time step `step`; returns true when clipping was applied.
    bool evaluate(std::size_t step, std::span<const double> inputs, std::span<double> out) const {
        if (fits_.empty()) {
            for (auto& v : out) v = 0.0;
            return false;
        }
        fits_.at(step).evaluate(inputs, out);
        double norm2 = 0.0;
        for (double v : out) norm2 += v * v;
        if (norm2 <= clip_ * clip_) return false;
        const double f = clip_ / std::sqrt(norm2);
        for (auto& v : out) v *= f;
        return true;
    }

private:
    std::size_t dim_ = 1;
    std::size_t num_steps_ = 0;
    double clip_ = 1.0;
    Form form_ = Form::martingale;
    RegressionBasis basis_;
    std::vector<StepFit> fits_;
};

}  // namespace pia
