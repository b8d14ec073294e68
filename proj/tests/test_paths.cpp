#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace pia;
using pia_test::batch;
using pia_test::constant_z;
using pia_test::mean_se;
using pia_test::scalar_problem;

namespace {

ControlProblem unit_problem(double sigma = 1.0) {
    return scalar_problem([](double u) { return u; }, [](double u) { return 0.5 * u * u; }, [](double x) { return x; },
                          sigma);
}

}  // namespace

TEST(TimeGrid, UniformAndEndsAtHorizon) {
    const TimeGrid g(2.0, 7);
    EXPECT_EQ(g.time(0), 0.0);
    EXPECT_EQ(g.time(7), 2.0);
    for (std::size_t j = 0; j < 7; ++j) EXPECT_LT(g.time(j), g.time(j + 1));
    EXPECT_THROW(TimeGrid(1.0, 0), ConfigError);
    EXPECT_THROW(TimeGrid(0.0, 5), ConfigError);
}

TEST(Driftless, IdentityVolatilitySumsIncrements) {
    const auto p = unit_problem();
    const TimeGrid g(1.0, 20);
    const auto e = simulate_driftless(p, g, batch(g, 300, 1, 1));
    for (std::size_t path = 0; path < 300; ++path) {
        double acc = 0.0;
        EXPECT_EQ(e.state(path, 0)[0], 0.0);
        for (std::size_t j = 0; j < 20; ++j) {
            acc += e.brownian->increment(path, j)[0];
            EXPECT_EQ(e.state(path, j + 1)[0], acc);
        }
    }
}

TEST(Driftless, ZeroVolatilityStaysAtStart) {
    auto p = unit_problem(0.0);
    p.initial_state = {0.25};
    const TimeGrid g(1.0, 10);
    const auto e = simulate_driftless(p, g, batch(g, 100, 1, 2));
    for (std::size_t path = 0; path < 100; ++path)
        for (std::size_t j = 0; j <= 10; ++j) EXPECT_EQ(e.state(path, j)[0], 0.25);
}

TEST(Driftless, TerminalVarianceIsHorizon) {
    const auto p = unit_problem();
    const TimeGrid g(1.0, 100);
    const std::size_t n = 100000;
    const auto e = simulate_driftless(p, g, batch(g, n, 1, 3));
    std::vector<double> x(n), sq(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = e.state(i, 100)[0];
    const double m = mean_se(x).mean;
    for (std::size_t i = 0; i < n; ++i) sq[i] = (x[i] - m) * (x[i] - m);
    const auto var = mean_se(sq);
    EXPECT_LE(std::abs(var.mean - 1.0), 3.0 * var.se);
}

TEST(Driftless, NonFiniteVolatilityNamesPathAndStep) {
    auto p = unit_problem();
    p.vol = [](double t, const PathPrefix&, std::span<const double>, std::span<double> out) {
        out[0] = t > 0.5 ? std::nan("") : 1.0;
    };
    const TimeGrid g(1.0, 10);
    try {
        simulate_driftless(p, g, batch(g, 10, 1, 4));
        FAIL() << "expected a numerical error";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(Driftless, IgnoresDriftAndCost) {
    const auto p = unit_problem();
    auto q = p;
    q.drift = [](double, const PathPrefix&, std::span<const double>, std::span<double> out) { out[0] = 123.0; };
    q.running_cost = [](double, const PathPrefix&, std::span<const double>) { return 1e9; };
    const TimeGrid g(1.0, 10);
    const auto b = batch(g, 50, 1, 5);
    EXPECT_EQ(simulate_driftless(p, g, b).states, simulate_driftless(q, g, b).states);
}

TEST(Brownian, ReproducibleAndWorkerIndependent) {
    const TimeGrid g(1.0, 16);
    const auto a = BrownianBatch::generate(g, 5000, 2, 77, 1);
    const auto b = BrownianBatch::generate(g, 5000, 2, 77, 4);
    const auto c = BrownianBatch::generate(g, 5000, 2, 78, 1);
    EXPECT_EQ(a.increments, b.increments);
    EXPECT_NE(a.increments, c.increments);
}

TEST(Girsanov, ZeroThetaGivesUnitDensity) {
    const auto p = unit_problem();
    const TimeGrid g(1.0, 10);
    const auto e = simulate_driftless(p, g, batch(g, 100, 1, 6));
    const std::vector<double> theta(100 * 10, 0.0);
    for (double w : girsanov_log_weights(e, theta)) EXPECT_EQ(w, 0.0);
}

TEST(Girsanov, ConstantThetaIsExponentialMartingale) {
    const auto p = unit_problem();
    const TimeGrid g(1.0, 50);
    const auto e = simulate_driftless(p, g, batch(g, 1000, 1, 7));
    const double c = 0.7;
    const std::vector<double> theta(1000 * 50, c);
    const auto w = girsanov_log_weights(e, theta);
    for (std::size_t path = 0; path < 1000; ++path)
        EXPECT_NEAR(w[path], c * e.state(path, 50)[0] - 0.5 * c * c * 1.0, 1e-12);
}

TEST(Girsanov, UnitMeanDensity) {
    const auto p = unit_problem();
    const TimeGrid g(1.0, 100);
    const std::size_t n = 100000;
    const auto e = simulate_driftless(p, g, batch(g, n, 1, 8));
    const std::vector<double> ones(n * 100, 1.0);
    std::vector<double> theta(n * 100);
    // path-dependent, clipped drift
    for (std::size_t path = 0; path < n; ++path)
        for (std::size_t j = 0; j < 100; ++j) theta[path * 100 + j] = std::clamp(e.state(path, j)[0], -1.0, 1.0);
    for (const std::vector<double>* th : {&ones, static_cast<const std::vector<double>*>(&theta)}) {
        const auto lw = girsanov_log_weights(e, *th);
        std::vector<double> w(n);
        for (std::size_t i = 0; i < n; ++i) w[i] = std::exp(lw[i]);
        const auto m = mean_se(w);
        EXPECT_LE(std::abs(m.mean - 1.0), 3.0 * m.se);
    }
}

TEST(ControlledForward, ZeroKappaEqualsDriftless) {
    const auto vol = benchmark("bm-vol", {{"kappa", 0.0}}).problem;
    const TimeGrid g(1.0, 20);
    const auto b = batch(g, 500, 1, 9);
    const auto z = constant_z(20, {0.8}, ZRepresentation::Form::gradient);
    const auto forward = simulate_controlled_forward(vol, g, b, z);
    auto flat = uncontrolled_variant(vol);
    const auto driftless = simulate_driftless(flat, g, b);
    EXPECT_EQ(forward.states, driftless.states);
}

TEST(ControlledForward, ZeroGradientReproducesUnitVolatility) {
    const auto vol = benchmark("bm-vol", {{"kappa", 0.5}}).problem;
    const TimeGrid g(1.0, 20);
    const auto b = batch(g, 400, 1, 10);
    const auto forward = simulate_controlled_forward(vol, g, b, constant_z(20, {0.0}, ZRepresentation::Form::gradient));
    const auto driftless = simulate_driftless(benchmark("bm-lin").problem, g, b);
    EXPECT_EQ(forward.states, driftless.states);
}

TEST(ControlledForward, QuadraticVariationMatchesSelectedVolatility) {
    const double kappa = 0.5;
    const auto vol = benchmark("bm-vol", {{"kappa", kappa}}).problem;
    const TimeGrid g(1.0, 100);
    const std::size_t n = 10000;
    const auto forward =
        simulate_controlled_forward(vol, g, batch(g, n, 1, 11), constant_z(100, {1.0}, ZRepresentation::Form::gradient));
    const auto u = vol.actions.point(forward.action(0, 0));
    // maximizer of (1 + k u2) u1 - |u|^2 / 2 at unit gradient
    EXPECT_EQ(u[0], 1.0);
    EXPECT_NEAR(u[1], kappa, 1e-12);
    const double sigma = 1.0 + kappa * u[1];
    for (std::size_t j : {0u, 10u, 50u, 99u}) {
        std::vector<double> qv(n);
        for (std::size_t path = 0; path < n; ++path) {
            const double dx = forward.state(path, j + 1)[0] - forward.state(path, j)[0];
            qv[path] = dx * dx;
        }
        const auto m = mean_se(qv);
        EXPECT_LE(std::abs(m.mean - sigma * sigma * g.step()), 3.0 * m.se) << "step " << j;
    }
}

TEST(FeedbackDrifted, UsesSelectedDrift) {
    const auto lin = benchmark("bm-lin").problem;
    const TimeGrid g(1.0, 10);
    const auto b = batch(g, 100, 1, 12);
    const auto drifted = simulate_feedback_drifted(lin, g, b, constant_z(10, {1.0}));
    for (std::size_t path = 0; path < 100; ++path)
        EXPECT_NEAR(drifted.state(path, 10)[0] - 1.0,
                    simulate_driftless(lin, g, b).state(path, 10)[0], 1e-12);
}

TEST(Ensemble, DumpRoundTrip) {
    const auto lin = benchmark("bm-lin").problem;
    const TimeGrid g(1.0, 8);
    const auto e = simulate_driftless(lin, g, batch(g, 64, 1, 13));
    const auto path = std::filesystem::temp_directory_path() / "pia_ensemble_roundtrip.bin";
    write_ensemble(path.string(), e);
    const auto back = read_ensemble(path.string());
    std::filesystem::remove(path);
    EXPECT_EQ(back.states, e.states);
    EXPECT_EQ(back.log_weights, e.log_weights);
    EXPECT_EQ(back.brownian->seed, 13u);
    EXPECT_EQ(back.brownian->increments, e.brownian->increments);
}

TEST(Ensemble, SameSeedSameEnsembleAcrossWorkers) {
    const auto lin = benchmark("bm-lin").problem;
    const TimeGrid g(1.0, 10);
    const auto a = simulate_driftless(lin, g, batch(g, 9000, 1, 14, 1), 1);
    const auto b = simulate_driftless(lin, g, batch(g, 9000, 1, 14, 3), 3);
    EXPECT_EQ(a.states, b.states);
}
