#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "pia/pia.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInvalid = 2;
constexpr int kNumerical = 3;

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> format;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--seed", flags.seed, "override the configured seed");
    cmd->add_option("--out", flags.out, "output file stem (.csv / .json are appended)");
    cmd->add_option("--format", flags.format, "csv, json or both");
}

struct Prepared {
    pia::ExperimentConfig cfg;
    pia::BenchmarkSpec bench;
};

// Parses and validates everything before any numerical work.
Prepared prepare(const CommonFlags& flags) {
    Prepared p;
    p.cfg = pia::load_config(flags.config_path);
    if (flags.seed) p.cfg.scheme.seed = *flags.seed;
    if (flags.out) p.cfg.output = *flags.out;
    if (flags.format) p.cfg.format = pia::parse_format(*flags.format);
    p.bench = pia::benchmark(p.cfg.benchmark, p.cfg.params);
    p.cfg.scheme.validate(p.bench.problem);
    return p;
}

void emit(const pia::ExperimentConfig& cfg, const std::string& csv, const pia::json& envelope) {
    const std::string json_text = envelope.dump(2) + "\n";
    const bool want_csv = cfg.format != pia::ReportFormat::json;
    const bool want_json = cfg.format != pia::ReportFormat::csv;
    if (cfg.output.empty()) {
        if (want_csv) std::cout << csv;
        if (want_json) std::cout << json_text;
        return;
    }
    if (want_csv) pia::write_atomic(cfg.output + ".csv", csv);
    if (want_json) pia::write_atomic(cfg.output + ".json", json_text);
}

std::string summary(const pia::ConvergenceReport& r) {
    std::ostringstream s;
    const auto& last = r.records.back();
    s << "n=" << last.n << " value=" << pia::format_double(last.value);
    if (r.reference.value)
        s << " reference=" << pia::format_double(*r.reference.value) << " (" << r.reference.provenance
          << ") err=" << pia::format_double(last.err);
    else
        s << " reference=none";
    s << " fitted_rate=" << (r.fitted_rate ? pia::format_double(r.fitted_rate->slope) : std::string("n/a"));
    return s.str();
}

void report_diagnostics(const pia::ConvergenceReport& r) {
    for (const auto& d : r.diagnostics) std::cerr << "diagnostic: " << d << '\n';
    if (r.partial) std::cerr << "aborted: " << r.abort_message << '\n';
}

// Summary lines go to stderr when the report itself occupies stdout.
std::ostream& summary_stream(const pia::ExperimentConfig& cfg) { return cfg.output.empty() ? std::cerr : std::cout; }

int cmd_solve(const CommonFlags& flags) {
    const auto p = prepare(flags);
    const auto report = pia::run_scheme(p.bench.problem, p.cfg.scheme, pia::extras_from(p.bench));
    report_diagnostics(report);
    if (report.records.empty()) {
        std::cerr << "error: no iteration completed\n";
        return kNumerical;
    }
    emit(p.cfg, pia::to_csv(report), pia::report_envelope(p.cfg, report));
    summary_stream(p.cfg) << summary(report) << '\n';
    return report.partial ? kNumerical : kOk;
}

int cmd_converge(const CommonFlags& flags) {
    const auto p = prepare(flags);
    if (p.cfg.schedules.empty()) throw pia::ConfigError("converge needs at least one entry in 'schedules'");
    std::vector<pia::ConvergenceReport> reports;
    pia::json runs = pia::json::array();
    bool partial = false;
    for (const auto& schedule : p.cfg.schedules) {
        auto scheme = p.cfg.scheme;
        scheme.schedule = schedule;
        reports.push_back(pia::run_scheme(p.bench.problem, scheme, pia::extras_from(p.bench)));
        report_diagnostics(reports.back());
        partial = partial || reports.back().partial;
        runs.push_back(pia::report_body(reports.back()));
        if (!reports.back().records.empty())
            summary_stream(p.cfg) << reports.back().schedule << ": " << summary(reports.back()) << '\n';
    }
    pia::json envelope = {{"config", pia::config_to_json(p.cfg)},
                          {"runs", runs},
                          {"seed", p.cfg.scheme.seed},
                          {"versions", pia::versions_json()}};
    emit(p.cfg, pia::to_long_csv(reports), envelope);
    return partial ? kNumerical : kOk;
}

int cmd_crosscheck(const CommonFlags& flags) {
    const auto p = prepare(flags);
    pia::ConvergenceReport report;
    const auto results = pia::entropic_crosscheck(p.bench.problem, p.cfg.scheme, {p.cfg.crosscheck_n}, &report);
    emit(p.cfg, pia::to_csv(report), pia::report_envelope(p.cfg, report));
    const auto& c = results.front();
    summary_stream(p.cfg) << "n=" << c.n << " v_tilde=" << pia::format_double(c.v_tilde)
                          << " v_n=" << pia::format_double(c.v_n) << " gap=" << pia::format_double(c.gap)
                          << " combined_stderr=" << pia::format_double(c.combined_stderr)
                          << (c.passed() ? " PASS" : " FAIL") << '\n';
    return c.passed() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"penalized policy iteration for stochastic control"};
    app.require_subcommand(1);
    CommonFlags solve_flags, converge_flags, cross_flags;
    auto* solve = app.add_subcommand("solve", "run the configured scheme and write its report");
    add_common(solve, solve_flags);
    auto* converge = app.add_subcommand("converge", "run one experiment per configured schedule");
    add_common(converge, converge_flags);
    auto* cross = app.add_subcommand("crosscheck", "compare V^n with the directly simulated entropic value");
    add_common(cross, cross_flags);
    auto* list = app.add_subcommand("list-benchmarks", "print the benchmark registry");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kInvalid;
    }

    try {
        if (*list) {
            pia::list_benchmarks(std::cout);
            return kOk;
        }
        if (*solve) return cmd_solve(solve_flags);
        if (*converge) return cmd_converge(converge_flags);
        if (*cross) return cmd_crosscheck(cross_flags);
    } catch (const pia::ConfigError& e) {
        std::cerr << "invalid configuration: " << e.what() << '\n';
        return kInvalid;
    } catch (const pia::NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return kNumerical;
    }
    return kInvalid;
}
