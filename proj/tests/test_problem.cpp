#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace pia;
using pia_test::scalar_problem;

namespace {

const std::vector<double> kOrigin{0.0};
const PathPrefix kAtOrigin(kOrigin, 1);

std::size_t index_of(const ControlProblem& p, std::vector<double> u) { return p.actions.find(u).value(); }

}  // namespace

TEST(ReducedHamiltonian, DirectFormula) {
    const auto lin = benchmark("bm-lin").problem;
    const double z1 = 1.0, z2 = 2.0, u1 = 1.0, u2 = 0.5;
    EXPECT_DOUBLE_EQ(eval_h(lin, 0.0, kAtOrigin, {&z1, 1}, {&u1, 1}), 0.5);
    EXPECT_DOUBLE_EQ(eval_h(lin, 0.0, kAtOrigin, {&z2, 1}, {&u2, 1}), 0.875);
}

TEST(ReducedHamiltonian, ZeroCase) {
    const auto lin = benchmark("bm-lin").problem;
    const double z = 0.0, u = 0.0;
    EXPECT_EQ(eval_h(lin, 0.3, kAtOrigin, {&z, 1}, {&u, 1}), 0.0);
}

TEST(ReducedHamiltonian, RejectsOffGridAction) {
    const auto lin = benchmark("bm-lin").problem;
    const double z = 1.0, u = 0.123;
    EXPECT_THROW(eval_h(lin, 0.0, kAtOrigin, {&z, 1}, {&u, 1}), ConfigError);
}

TEST(ReducedHamiltonian, NamesNonFiniteCoefficient) {
    auto p = scalar_problem([](double u) { return u; }, [](double) { return std::nan(""); }, [](double x) { return x; });
    const double z = 1.0, u = 0.0;
    try {
        eval_h(p, 0.0, kAtOrigin, {&z, 1}, {&u, 1});
        FAIL() << "expected a numerical error";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("running_cost"), std::string::npos);
    }
}

TEST(OptimizedHamiltonian, InteriorMaximum) {
    const auto lin = benchmark("bm-lin").problem;
    const double z = 0.5;
    const auto r = eval_H_argmax(lin, 0.0, kAtOrigin, {&z, 1});
    EXPECT_NEAR(r.value, 0.125, 1e-15);
    EXPECT_EQ(r.action, index_of(lin, {0.5}));
}

TEST(OptimizedHamiltonian, ClippedAtBoundary) {
    const auto lin = benchmark("bm-lin").problem;
    const double z = 2.0;
    const auto r = eval_H_argmax(lin, 0.0, kAtOrigin, {&z, 1});
    EXPECT_DOUBLE_EQ(r.value, 1.5);
    EXPECT_EQ(r.action, index_of(lin, {1.0}));
}

TEST(OptimizedHamiltonian, AllTiesPickFirstAction) {
    auto p = scalar_problem([](double) { return 0.0; }, [](double) { return 0.0; }, [](double) { return 0.0; });
    const double z = 0.7;
    const auto r = eval_H_argmax(p, 0.0, kAtOrigin, {&z, 1});
    EXPECT_EQ(r.value, 0.0);
    EXPECT_EQ(r.action, 0u);
}

TEST(OptimizedHamiltonian, ArgmaxIsExhaustiveMaximum) {
    const auto cos_p = benchmark("bm-cos").problem;
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    CoefficientScratch scratch(cos_p);
    for (int trial = 0; trial < 200; ++trial) {
        const double z = dist(rng);
        const auto r = eval_H_argmax(cos_p, 0.5, kAtOrigin, {&z, 1});
        EXPECT_EQ(eval_h(cos_p, 0.5, kAtOrigin, {&z, 1}, r.action, scratch), r.value);
        for (std::size_t a = 0; a < cos_p.actions.size(); ++a) {
            const double v = eval_h(cos_p, 0.5, kAtOrigin, {&z, 1}, a, scratch);
            EXPECT_LE(v, r.value);
            if (a < r.action) EXPECT_LT(v, r.value);
        }
    }
}

TEST(OptimizedHamiltonian, LipschitzInZ) {
    const auto lin = benchmark("bm-lin").problem;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double z1 = dist(rng), z2 = dist(rng);
        const double h1 = eval_H_argmax(lin, 0.0, kAtOrigin, {&z1, 1}).value;
        const double h2 = eval_H_argmax(lin, 0.0, kAtOrigin, {&z2, 1}).value;
        EXPECT_LE(std::abs(h1 - h2), lin.drift_bound * std::abs(z1 - z2) + 1e-12);
    }
}

TEST(OptimizedHamiltonian, RepeatedCallsAgree) {
    const auto lin = benchmark("bm-lin").problem;
    const double z = 0.305;
    const auto first = eval_H_argmax(lin, 0.0, kAtOrigin, {&z, 1});
    for (int i = 0; i < 10; ++i) EXPECT_EQ(eval_H_argmax(lin, 0.0, kAtOrigin, {&z, 1}).action, first.action);
}

TEST(OptimizedHamiltonian, RejectsControlledVolatility) {
    const auto vol = benchmark("bm-vol").problem;
    const double z = 1.0;
    EXPECT_THROW(eval_H_argmax(vol, 0.0, kAtOrigin, {&z, 1}), ConfigError);
}

TEST(FullHamiltonian, UnitLevelSlice) {
    const auto vol = benchmark("bm-vol", {{"kappa", 0.5}}).problem;
    const double z = 1.0, level = 1.0;
    const auto r = eval_full_H_argmax(vol, 0.0, kAtOrigin, {&z, 1}, {&level, 1});
    EXPECT_NEAR(r.value, 0.5, 1e-15);
    const auto u = vol.actions.point(r.action);
    EXPECT_EQ(u[0], 1.0);
    EXPECT_EQ(u[1], 0.0);
}

TEST(FullHamiltonian, ZeroGradientZeroCost) {
    auto vol = benchmark("bm-vol", {{"kappa", 0.5}}).problem;
    vol.running_cost = [](double, const PathPrefix&, std::span<const double>) { return 0.0; };
    const double z = 0.0, level = 1.0;
    const auto r = eval_full_H_argmax(vol, 0.0, kAtOrigin, {&z, 1}, {&level, 1});
    EXPECT_EQ(r.value, 0.0);
    // first grid action whose u2 is 0
    std::size_t first = 0;
    while (vol.actions.point(first)[1] != 0.0) ++first;
    EXPECT_EQ(r.action, first);
}

TEST(FullHamiltonian, ZeroKappaMatchesReduced) {
    const auto vol = benchmark("bm-vol", {{"kappa", 0.0}}).problem;
    const auto flat = uncontrolled_variant(vol);
    const double level = 1.0;
    for (double z = -2.0; z <= 2.0; z += 0.173) {
        const auto full = eval_full_H_argmax(vol, 0.0, kAtOrigin, {&z, 1}, {&level, 1});
        const auto reduced = eval_H_argmax(flat, 0.0, kAtOrigin, {&z, 1});
        EXPECT_EQ(full.value, reduced.value);
        EXPECT_EQ(full.action, reduced.action);
    }
}

TEST(FullHamiltonian, EmptyLevelSet) {
    const auto vol = benchmark("bm-vol", {{"kappa", 0.25}}).problem;
    const double z = 1.0, level = 9.0;
    EXPECT_THROW(eval_full_H_argmax(vol, 0.0, kAtOrigin, {&z, 1}, {&level, 1}), EmptyLevelSetError);
}

TEST(FullHamiltonian, LevelRouteMatchesFullSelector) {
    const auto vol = benchmark("bm-vol", {{"kappa", 0.25}, {"action_points", 21}}).problem;
    const PolicySelector selector(vol, PolicySelector::Form::full);
    CoefficientScratch scratch(vol);
    for (double z = -3.0; z <= 3.0; z += 0.37) {
        const auto by_levels = eval_full_policy_by_levels(vol, 0.0, kAtOrigin, {&z, 1});
        EXPECT_EQ(selector.select(0.0, kAtOrigin, {&z, 1}, scratch), by_levels.action) << "z = " << z;
    }
}

TEST(PolicySelector, EnvelopeMatchesExhaustiveSearch) {
    const auto lin = benchmark("bm-lin").problem;
    const PolicySelector fast(lin, PolicySelector::Form::reduced);
    ASSERT_TRUE(fast.uses_envelope());
    auto slow_problem = lin;
    slow_problem.flags.state_free = false;
    const PolicySelector slow(slow_problem, PolicySelector::Form::reduced);
    ASSERT_FALSE(slow.uses_envelope());
    CoefficientScratch scratch(lin);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(-4.0, 4.0);
    std::vector<double> probes;
    for (int i = 0; i < 2000; ++i) probes.push_back(dist(rng));
    // breakpoints of the envelope sit at midpoints of grid actions
    for (int i = -100; i <= 100; ++i) probes.push_back(0.01 * i + 0.005);
    for (double z : probes)
        EXPECT_EQ(fast.select(0.0, kAtOrigin, {&z, 1}, scratch), slow.select(0.0, kAtOrigin, {&z, 1}, scratch))
            << "z = " << z;
}

TEST(VolSmallness, SeparatedCoefficients) {
    EXPECT_TRUE(check_vol_smallness(1.0, 5.0, 3.0, 0.0, 2.0));
}

TEST(VolSmallness, ZeroTerminalReward) {
    EXPECT_TRUE(check_vol_smallness(1.0, 0.0, 3.0, 7.0, 2.0));
}

TEST(VolSmallness, UnitConstantsFail) {
    EXPECT_FALSE(check_vol_smallness(1.0, 1.0, 1.0, 1.0, 0.0));
}

TEST(VolSmallness, TinyConstantsPass) {
    EXPECT_TRUE(check_vol_smallness(1.0, 0.1, 0.1, 0.1, 0.0));
    EXPECT_THROW(check_vol_smallness(1.0, -1.0, 0.1, 0.1, 0.0), ConfigError);
}

TEST(PenaltySchedule, PresetsStartAtOneAndGrow) {
    for (const auto& s : {PenaltySchedule::exponential(4.0), PenaltySchedule::exponential(2.0),
                          PenaltySchedule::super_exponential(2.0)}) {
        EXPECT_EQ(s(0), 1.0);
        for (std::size_t n = 0; n < 12; ++n) EXPECT_GE(s(n + 1), s(n));
    }
    EXPECT_EQ(PenaltySchedule::super_exponential(2.0)(3), 64.0);
    EXPECT_EQ(PenaltySchedule::exponential(4.0)(3), 64.0);
}

TEST(PenaltySchedule, TableValidation) {
    EXPECT_THROW(PenaltySchedule::table({2.0, 4.0}), ConfigError);
    EXPECT_THROW(PenaltySchedule::table({1.0, 4.0, 3.0}), ConfigError);
    EXPECT_THROW(PenaltySchedule::table({}), ConfigError);
    const auto t = PenaltySchedule::table({1.0, 3.0, 9.0});
    EXPECT_EQ(t(2), 9.0);
    EXPECT_THROW(t(3), ConfigError);
    EXPECT_THROW(t.require_range(3), ConfigError);
    EXPECT_THROW(PenaltySchedule::exponential(1.0), ConfigError);
}

TEST(PenaltySchedule, OverflowDetected) {
    EXPECT_THROW(PenaltySchedule::super_exponential(10.0).require_range(40), ConfigError);
}

TEST(ActionGrid, SortedAndDistinct) {
    const ActionGrid g(1, {0.5, -1.0, 0.0});
    EXPECT_EQ(g.point(0)[0], -1.0);
    EXPECT_EQ(g.point(2)[0], 0.5);
    EXPECT_THROW(ActionGrid(1, {0.5, 0.5}), ConfigError);
    EXPECT_THROW(ActionGrid(1, {}), ConfigError);
    const double lo = -1.0, hi = 1.0;
    const std::size_t count = 101;
    const auto box = ActionGrid::box({&lo, 1}, {&hi, 1}, {&count, 1});
    EXPECT_EQ(box.size(), 101u);
    EXPECT_NEAR(box.resolution(), 0.02, 1e-15);
    EXPECT_EQ(box.point(100)[0], 1.0);
}

TEST(ControlProblem, ValidationCatchesMissingPieces) {
    auto p = benchmark("bm-lin").problem;
    p.initial_state = {0.0, 1.0};
    EXPECT_THROW(p.validate(), ConfigError);
    p = benchmark("bm-lin").problem;
    p.terminal_reward = nullptr;
    EXPECT_THROW(p.validate(), ConfigError);
    p = benchmark("bm-lin").problem;
    p.z_clip = 0.0;
    EXPECT_THROW(p.validate(), ConfigError);
}
