#pragma once

#include <functional>
#include <vector>

#include "pia/pia.hpp"

namespace pia_test {

// Scalar problem on the action grid [-1, 1] (`count` points) with
// dX = sigma (b(u) dt + dB), L(u) and G(x_T); x0 = 0 and T = 1 unless given.
inline pia::ControlProblem scalar_problem(std::function<double(double)> drift, std::function<double(double)> cost,
                                          std::function<double(double)> terminal, double sigma = 1.0,
                                          std::size_t count = 101, double x0 = 0.0, double horizon = 1.0) {
    pia::ControlProblem p;
    p.name = "scalar";
    p.horizon = horizon;
    p.initial_state = {x0};
    const double lo = -1.0, hi = 1.0;
    p.actions = pia::ActionGrid::box({&lo, 1}, {&hi, 1}, {&count, 1});
    p.drift = [drift](double, const pia::PathPrefix&, std::span<const double> u, std::span<double> out) {
        out[0] = drift(u[0]);
    };
    p.vol = [sigma](double, const pia::PathPrefix&, std::span<const double>, std::span<double> out) { out[0] = sigma; };
    p.running_cost = [cost](double, const pia::PathPrefix&, std::span<const double> u) { return cost(u[0]); };
    p.terminal_reward = [terminal](const pia::PathPrefix& path) { return terminal(path.current()[0]); };
    p.flags = {true, false, true};
    p.drift_bound = 1.0;
    p.vol_bound = std::abs(sigma);
    p.z_clip = 4.0;
    return p;
}

// Z process equal to `value` at every step and state.
inline pia::ZRepresentation constant_z(std::size_t steps, std::vector<double> value,
                                       pia::ZRepresentation::Form form = pia::ZRepresentation::Form::martingale,
                                       double clip = 4.0) {
    pia::StepFit fit;
    fit.mean = {0.0};
    fit.scale = {0.0};
    fit.monomials = {{0}};
    fit.coef.resize(1, static_cast<Eigen::Index>(value.size()));
    for (std::size_t c = 0; c < value.size(); ++c) fit.coef(0, static_cast<Eigen::Index>(c)) = value[c];
    return pia::ZRepresentation(value.size(), steps, clip, form, pia::RegressionBasis{},
                                std::vector<pia::StepFit>(steps, fit));
}

inline std::shared_ptr<const pia::BrownianBatch> batch(const pia::TimeGrid& grid, std::size_t paths, std::size_t dim,
                                                       std::uint64_t seed, unsigned workers = 1) {
    return std::make_shared<const pia::BrownianBatch>(pia::BrownianBatch::generate(grid, paths, dim, seed, workers));
}

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
}

}  // namespace pia_test
