// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "pia/pia.hpp"

using namespace pia;

namespace tol {
constexpr double kSigmas = 3.0;              // Monte-Carlo agreement, in standard errors
constexpr double kRateSlack = 0.15;          // fitted log-rate may exceed -log 2 by this much
constexpr double kRateAbsolute = 2e-2;       // additive slack in v^n - v_ref <= C / phi(n)
constexpr double kControlError = 0.02;       // mean squared control distance at n = 3
constexpr double kTriangulation = 2e-2;      // pairwise oracle agreement
constexpr double kColeHopf = 5e-3;           // sup-norm, Cole-Hopf vs direct quadratic sweep
constexpr double kBudgetLadder = 60.0;       // seconds
constexpr double kBudgetRate = 30.0;
constexpr double kBudgetVol = 120.0;
}  // namespace tol

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

SchemeConfig mc(std::size_t paths, std::size_t steps, std::size_t n_max) {
    SchemeConfig c;
    c.mode = SchemeMode::mc_nonmarkovian;
    c.schedule = PenaltySchedule::exponential(4.0);
    c.num_paths = paths;
    c.num_steps = steps;
    c.n_max = n_max;
    c.seed = 42;
    c.workers = 1;
    return c;
}

std::string report_bytes(const ConvergenceReport& r) { return report_body(r).dump(2) + "\n" + to_csv(r); }

// State shared between criteria so the expensive runs happen once.
struct Shared {
    ConvergenceReport ladder;
    SchemeConfig ladder_cfg;
    ConvergenceReport rate;
    SchemeConfig rate_cfg;
    ConvergenceReport vol;
    SchemeConfig vol_cfg;
};

Outcome criterion1(Shared& s) {
    Outcome o;
    const auto bench = benchmark("bm-lin");
    s.ladder_cfg = mc(100000, 100, 3);
    const auto start = Clock::now();
    s.ladder = run_pia_mc(bench.problem, s.ladder_cfg, extras_from(bench));
    const double secs = seconds_since(start);
    o.require(!s.ladder.partial, "run completed");
    o.require(s.ladder.records.size() == 4, "four iterates");
    for (const auto& r : s.ladder.records) {
        const double exact = bench.analytic_iterates(r.n, r.phi_n);
        const double dev = std::abs(r.value - exact);
        o.detail << " V" << r.n << "=" << num(r.value) << "(" << num(dev / r.std_error) << "se)";
        o.require(dev <= tol::kSigmas * r.std_error, "V" + std::to_string(r.n) + " within 3 se of the closed form");
    }
    o.detail << " time=" << num(secs) << "s";
    o.require(secs < tol::kBudgetLadder, "runtime under 60 s");
    return o;
}

Outcome criterion2(Shared& s) {
    Outcome o;
    const auto bench = benchmark("bm-cos");
    s.rate_cfg.mode = SchemeMode::pde_markovian;
    s.rate_cfg.schedule = PenaltySchedule::exponential(2.0);
    s.rate_cfg.n_max = 6;
    s.rate_cfg.grid = bench.grid;
    s.rate_cfg.grid.num_nodes = 400;
    s.rate_cfg.grid.num_time_steps = 400;
    s.rate_cfg.workers = 1;
    const auto start = Clock::now();
    s.rate = run_scheme(bench.problem, s.rate_cfg, extras_from(bench));
    const double secs = seconds_since(start);
    o.require(!s.rate.partial && s.rate.records.size() == 7, "seven iterates");
    o.require(s.rate.fitted_rate.has_value(), "rate fitted");
    if (s.rate.fitted_rate) {
        const auto& f = *s.rate.fitted_rate;
        o.detail << " slope=" << num(f.slope) << " window=[" << f.first << "," << f.last << "]";
        o.require(f.slope <= -std::log(2.0) + tol::kRateSlack, "slope <= -log 2 + 0.15");
    }
    if (s.rate.records.size() > 1) {
        const auto& r1 = s.rate.records[1];
        const double C = std::max(r1.err, 0.0) * r1.phi_n;
        o.detail << " C=" << num(C);
        for (const auto& r : s.rate.records) {
            o.require(std::isfinite(r.err), "reference available");
            o.require(r.err <= C / r.phi_n + tol::kRateAbsolute, "v^" + std::to_string(r.n) + " - v_ref <= C/phi + 2e-2");
        }
    }
    o.detail << " time=" << num(secs) << "s";
    o.require(secs < tol::kBudgetRate, "runtime under 30 s");
    return o;
}

Outcome criterion3() {
    Outcome o;
    for (const char* name : {"bm-lin", "bm-cos"}) {
        const auto bench = benchmark(name);
        const auto results = entropic_crosscheck(bench.problem, mc(100000, 100, 2), {1, 2});
        for (const auto& c : results) {
            o.detail << " " << name << "/n" << c.n << " gap=" << num(c.gap) << "(" << num(c.gap / c.combined_stderr)
                     << "se)";
            o.require(c.gap <= tol::kSigmas * c.combined_stderr,
                      std::string(name) + " n=" + std::to_string(c.n) + " gap within 3 se");
        }
    }
    return o;
}

Outcome criterion4(const Shared& s) {
    Outcome o;
    const auto& recs = s.ladder.records;
    o.require(recs.size() == 4, "ladder to n = 3");
    if (recs.size() != 4) return o;
    for (const auto& r : recs) o.detail << " ce" << r.n << "=" << num(r.control_error);
    o.require(recs[3].control_error < tol::kControlError, "control error below 0.02 at n = 3");
    for (std::size_t n = 1; n < recs.size(); ++n) {
        const double se = std::hypot(recs[n].control_error_stderr, recs[n - 1].control_error_stderr);
        o.require(recs[n].control_error <= recs[n - 1].control_error + se,
                  "non-increasing within 1 se at n = " + std::to_string(n));
    }
    return o;
}

Outcome criterion5() {
    Outcome o;
    const TimeGrid grid(1.0, 100);
    const auto noise = std::make_shared<const BrownianBatch>(BrownianBatch::generate(grid, 100000, 1, 42, 1));

    const auto lin = benchmark("bm-lin");
    GridSpec spec = lin.grid;
    spec.num_nodes = 400;
    spec.num_time_steps = 400;
    const double analytic = lin.analytic_at_initial();
    const double hjb = solve_hjb_reference(lin.problem, spec).v.interpolate(0, 0.0);
    const double bsde =
        solve_reference_bsde(lin.problem, simulate_driftless(lin.problem, grid, noise), RegressionBasis{}).value;
    o.detail << " bm-lin analytic=" << num(analytic) << " hjb=" << num(hjb) << " bsde=" << num(bsde);
    o.require(std::abs(analytic - hjb) <= tol::kTriangulation, "bm-lin analytic vs HJB");
    o.require(std::abs(analytic - bsde) <= tol::kTriangulation, "bm-lin analytic vs BSDE");
    o.require(std::abs(hjb - bsde) <= tol::kTriangulation, "bm-lin HJB vs BSDE");

    const auto cos = benchmark("bm-cos");
    spec = cos.grid;
    spec.num_nodes = 400;
    spec.num_time_steps = 400;
    const double hjb_cos = solve_hjb_reference(cos.problem, spec).v.interpolate(0, 0.0);
    const double bsde_cos =
        solve_reference_bsde(cos.problem, simulate_driftless(cos.problem, grid, noise), RegressionBasis{}).value;
    o.detail << " bm-cos hjb=" << num(hjb_cos) << " bsde=" << num(bsde_cos);
    o.require(std::abs(hjb_cos - bsde_cos) <= tol::kTriangulation, "bm-cos HJB vs BSDE");
    return o;
}

Outcome criterion6() {
    Outcome o;
    const auto lin = benchmark("bm-lin");
    GridSpec spec = lin.grid;
    spec.num_nodes = 400;
    spec.num_time_steps = 400;
    const auto schedule = PenaltySchedule::exponential(4.0);
    auto grad = GridField::zeros(spec, lin.problem.horizon);
    grad = solve_colehopf_iterate(lin.problem, spec, schedule(0), grad).grad;
    for (std::size_t n = 1; n <= 3; ++n) {
        const auto it = solve_colehopf_iterate(lin.problem, spec, schedule(n), grad);
        const auto q = solve_quadratic_iterate(lin.problem, spec, schedule(n), grad);
        const double gap = central_sup_gap(it.v, q);
        o.detail << " n" << n << "=" << num(gap);
        o.require(gap <= tol::kColeHopf, "sup gap at n = " + std::to_string(n));
        grad = it.grad;
    }
    return o;
}

Outcome criterion7(Shared& s) {
    Outcome o;
    const auto start = Clock::now();
    const auto flat = benchmark("bm-vol", {{"kappa", 0.0}});
    const auto lin = benchmark("bm-lin");
    auto vc = mc(50000, 100, 3);
    vc.mode = SchemeMode::mc_controlled_vol;
    const auto a = run_pia_vol(flat.problem, vc, extras_from(flat));
    const auto b = run_pia_mc(lin.problem, mc(50000, 100, 3), extras_from(lin));
    o.require(a.records.size() == b.records.size(), "same number of iterates");
    for (std::size_t n = 0; n < std::min(a.records.size(), b.records.size()); ++n) {
        const double se = std::hypot(a.records[n].std_error, b.records[n].std_error);
        const double dev = std::abs(a.records[n].value - b.records[n].value);
        o.detail << " k0/n" << n << "=" << num(dev / se) << "se";
        o.require(dev <= tol::kSigmas * se, "kappa = 0 matches uncontrolled at n = " + std::to_string(n));
    }

    const auto vol = benchmark("bm-vol", {{"kappa", 0.25}});
    s.vol_cfg = vc;
    s.vol_cfg.n_max = 4;
    s.vol = run_pia_vol(vol.problem, s.vol_cfg, extras_from(vol));
    const auto& r = s.vol.records;
    o.require(!s.vol.partial && r.size() == 5, "kappa = 0.25 ladder to n = 4");
    std::vector<double> diffs;
    for (std::size_t n = 1; n < r.size(); ++n) diffs.push_back(std::abs(r[n].value - r[n - 1].value));
    for (std::size_t k = 0; k < diffs.size(); ++k) o.detail << " d" << k + 1 << "=" << num(diffs[k]);
    for (std::size_t k = 1; k < diffs.size(); ++k)
        o.require(diffs[k] < diffs[k - 1], "|V^n - V^{n-1}| decreasing at n = " + std::to_string(k + 1));
    bool small = false;
    for (const auto& d : s.vol.diagnostics) small = small || d == "vol smallness condition: true";
    o.detail << " smallness=" << (small ? "true" : "false");
    o.require(small, "smallness check reports true");

    const double secs = seconds_since(start);
    o.detail << " time=" << num(secs) << "s";
    o.require(secs < tol::kBudgetVol, "runtime under 120 s");
    return o;
}

Outcome criterion8(const Shared& s) {
    Outcome o;
    const auto lin = benchmark("bm-lin");
    const auto cos = benchmark("bm-cos");
    const auto vol = benchmark("bm-vol", {{"kappa", 0.25}});
    struct Case {
        const char* label;
        const ControlProblem* problem;
        SchemeConfig cfg;
        RunExtras extras;
        std::string base;
    };
    const std::vector<Case> cases = {
        {"ladder", &lin.problem, s.ladder_cfg, extras_from(lin), report_bytes(s.ladder)},
        {"rate", &cos.problem, s.rate_cfg, extras_from(cos), report_bytes(s.rate)},
        {"vol", &vol.problem, s.vol_cfg, extras_from(vol), report_bytes(s.vol)},
    };
    for (const auto& c : cases) {
        for (unsigned w : {2u, 8u}) {
            auto cfg = c.cfg;
            cfg.workers = w;
            const bool same = report_bytes(run_scheme(*c.problem, cfg, c.extras)) == c.base;
            o.detail << " " << c.label << "/w" << w << "=" << (same ? "identical" : "differs");
            o.require(same, std::string(c.label) + " with " + std::to_string(w) + " workers");
        }
    }
    return o;
}

}  // namespace

int main() {
    Shared shared;
    const std::vector<std::function<Outcome()>> criteria = {
        [&] { return criterion1(shared); }, [&] { return criterion2(shared); }, [] { return criterion3(); },
        [&] { return criterion4(shared); }, [] { return criterion5(); },        [] { return criterion6(); },
        [&] { return criterion7(shared); }, [&] { return criterion8(shared); },
    };
    int failures = 0;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        Outcome out;
        try {
            out = criteria[k]();
        } catch (const std::exception& e) {
            out.pass = false;
            out.detail << " [exception: " << e.what() << "]";
        }
        failures += out.pass ? 0 : 1;
        std::cout << "criterion " << k + 1 << ": " << (out.pass ? "PASS" : "FAIL") << out.detail.str() << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
