#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "bench.hpp"
#include "driver.hpp"
#include "errors.hpp"
#include "report.hpp"

namespace pia {

inline constexpr const char* kVersion = "1.0.0";

enum class ReportFormat { csv, json, both };

inline std::string format_name(ReportFormat f) {
    switch (f) {
        case ReportFormat::csv: return "csv";
        case ReportFormat::json: return "json";
        case ReportFormat::both: return "both";
    }
    return "";
}

inline ReportFormat parse_format(const std::string& s) {
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    if (s == "both") return ReportFormat::both;
    throw ConfigError("unknown report format '" + s + "' (expected csv, json or both)");
}

/// Everything one CLI invocation needs. `schedules` is read by the converge
/// command and `crosscheck_n` by the crosscheck command.
struct ExperimentConfig {
    std::string benchmark = "bm-lin";
    BenchParams params;
    SchemeConfig scheme;
    std::vector<PenaltySchedule> schedules;
    std::size_t crosscheck_n = 1;
    std::string output;  // file stem; empty writes to standard output
    ReportFormat format = ReportFormat::csv;

    bool operator==(const ExperimentConfig&) const = default;
};

using json = nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    const std::set<std::string> names(known.begin(), known.end());
    for (const auto& item : j.items())
        if (!names.contains(item.key())) {
            std::string list;
            for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
            throw ConfigError("unknown key '" + item.key() + "' in " + where + " (allowed: " + list + ")");
        }
}

template <class T>
void read(const json& j, const char* key, const std::string& where, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("wrong type for '" + std::string(key) + "' in " + where);
    }
}

inline void read_count(const json& j, const char* key, const std::string& where, std::size_t& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_unsigned()) throw ConfigError("'" + std::string(key) + "' in " + where + " must be a nonnegative integer");
    out = v.get<std::size_t>();
}

}  // namespace detail

inline json schedule_to_json(const PenaltySchedule& s) {
    switch (s.kind()) {
        case PenaltySchedule::Kind::exponential: return {{"kind", "exponential"}, {"base", s.base()}};
        case PenaltySchedule::Kind::super_exponential: return {{"kind", "super_exponential"}, {"base", s.base()}};
        case PenaltySchedule::Kind::table: return {{"kind", "table"}, {"values", s.values()}};
    }
    return {};
}

inline PenaltySchedule schedule_from_json(const json& j) {
    detail::reject_unknown(j, "schedule", {"kind", "base", "values"});
    std::string kind;
    detail::read(j, "kind", "schedule", kind);
    if (kind == "exponential" || kind == "super_exponential") {
        if (j.contains("values")) throw ConfigError("'values' only applies to table schedules");
        double base = kind == "exponential" ? 4.0 : 2.0;
        detail::read(j, "base", "schedule", base);
        return kind == "exponential" ? PenaltySchedule::exponential(base) : PenaltySchedule::super_exponential(base);
    }
    if (kind == "table") {
        if (j.contains("base")) throw ConfigError("'base' does not apply to table schedules");
        std::vector<double> values;
        detail::read(j, "values", "schedule", values);
        return PenaltySchedule::table(std::move(values));
    }
    throw ConfigError("schedule kind must be exponential, super_exponential or table");
}

inline json grid_to_json(const GridSpec& g) {
    return {{"x_min", g.x_min}, {"x_max", g.x_max}, {"num_nodes", g.num_nodes},
            {"num_time_steps", g.num_time_steps}, {"theta", g.theta}};
}

inline GridSpec grid_from_json(const json& j) {
    detail::reject_unknown(j, "grid", {"x_min", "x_max", "num_nodes", "num_time_steps", "theta"});
    GridSpec g;
    detail::read(j, "x_min", "grid", g.x_min);
    detail::read(j, "x_max", "grid", g.x_max);
    detail::read_count(j, "num_nodes", "grid", g.num_nodes);
    detail::read_count(j, "num_time_steps", "grid", g.num_time_steps);
    detail::read(j, "theta", "grid", g.theta);
    return g;
}

inline json scheme_to_json(const SchemeConfig& c) {
    return {{"mode", mode_name(c.mode)},
            {"schedule", schedule_to_json(c.schedule)},
            {"n_max", c.n_max},
            {"num_paths", c.num_paths},
            {"num_steps", c.num_steps},
            {"grid", grid_to_json(c.grid)},
            {"basis",
             {{"kind", c.basis.kind == RegressionBasis::Kind::path ? "path" : "markov"},
              {"degree", c.basis.degree},
              {"ridge", c.basis.ridge}}},
            {"z_estimator", z_estimator_name(c.z_estimator)},
            {"seed", c.seed},
            {"stop_tol", c.stop_tol},
            {"workers", c.workers},
            {"picard_iters", c.picard_iters},
            {"rate_floor", c.rate_floor},
            {"timing", c.timing}};
}

inline SchemeConfig scheme_from_json(const json& j) {
    const std::string w = "scheme";
    detail::reject_unknown(j, w,
                           {"mode", "schedule", "n_max", "num_paths", "num_steps", "grid", "basis", "z_estimator", "seed",
                            "stop_tol", "workers", "picard_iters", "rate_floor", "timing"});
    SchemeConfig c;
    if (j.contains("mode")) {
        std::string mode;
        detail::read(j, "mode", w, mode);
        c.mode = parse_mode(mode);
    }
    if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
    detail::read_count(j, "n_max", w, c.n_max);
    detail::read_count(j, "num_paths", w, c.num_paths);
    detail::read_count(j, "num_steps", w, c.num_steps);
    if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
    if (j.contains("basis")) {
        const auto& b = j.at("basis");
        detail::reject_unknown(b, "basis", {"kind", "degree", "ridge"});
        std::string kind = "markov";
        detail::read(b, "kind", "basis", kind);
        if (kind == "markov") c.basis.kind = RegressionBasis::Kind::markov;
        else if (kind == "path") c.basis.kind = RegressionBasis::Kind::path;
        else throw ConfigError("basis kind must be markov or path");
        detail::read(b, "degree", "basis", c.basis.degree);
        detail::read(b, "ridge", "basis", c.basis.ridge);
    }
    if (j.contains("z_estimator")) {
        std::string est;
        detail::read(j, "z_estimator", w, est);
        c.z_estimator = parse_z_estimator(est);
    }
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) throw ConfigError("'seed' must be a nonnegative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    detail::read(j, "stop_tol", w, c.stop_tol);
    if (j.contains("workers")) {
        std::size_t workers = 0;
        detail::read_count(j, "workers", w, workers);
        if (workers < 1 || workers > 1024) throw ConfigError("workers must be in [1, 1024]");
        c.workers = static_cast<unsigned>(workers);
    }
    detail::read(j, "picard_iters", w, c.picard_iters);
    detail::read(j, "rate_floor", w, c.rate_floor);
    detail::read(j, "timing", w, c.timing);
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    json params = json::object();
    for (const auto& [k, v] : c.params) params[k] = v;
    json schedules = json::array();
    for (const auto& s : c.schedules) schedules.push_back(schedule_to_json(s));
    return {{"benchmark", c.benchmark}, {"params", params},          {"scheme", scheme_to_json(c.scheme)},
            {"schedules", schedules},   {"crosscheck_n", c.crosscheck_n}, {"output", c.output},
            {"format", format_name(c.format)}};
}

/// Schema check of a parsed document; no benchmark is built and nothing runs.
inline ExperimentConfig config_from_json(const json& j) {
    const std::string w = "config";
    detail::reject_unknown(j, w, {"benchmark", "params", "scheme", "schedules", "crosscheck_n", "output", "format"});
    ExperimentConfig c;
    detail::read(j, "benchmark", w, c.benchmark);
    if (j.contains("params")) {
        const auto& p = j.at("params");
        if (!p.is_object()) throw ConfigError("params must be a JSON object");
        for (const auto& item : p.items()) {
            if (!item.value().is_number()) throw ConfigError("benchmark parameter '" + item.key() + "' must be a number");
            c.params[item.key()] = item.value().get<double>();
        }
    }
    if (j.contains("scheme")) c.scheme = scheme_from_json(j.at("scheme"));
    if (j.contains("schedules")) {
        if (!j.at("schedules").is_array()) throw ConfigError("schedules must be a JSON array");
        for (const auto& s : j.at("schedules")) c.schedules.push_back(schedule_from_json(s));
    }
    detail::read_count(j, "crosscheck_n", w, c.crosscheck_n);
    detail::read(j, "output", w, c.output);
    if (j.contains("format")) {
        std::string f;
        detail::read(j, "format", w, f);
        c.format = parse_format(f);
    }
    c.scheme.validate();
    for (const auto& s : c.schedules) s.require_range(c.scheme.n_max);
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

namespace detail {

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace detail

inline json record_to_json(const IterationRecord& r) {
    using detail::number_or_null;
    return {{"n", r.n},
            {"phi_n", number_or_null(r.phi_n)},
            {"value", number_or_null(r.value)},
            {"stderr", number_or_null(r.std_error)},
            {"err", number_or_null(r.err)},
            {"z_distance", number_or_null(r.z_distance)},
            {"control_distance", number_or_null(r.control_distance)},
            {"control_error", number_or_null(r.control_error)},
            {"control_error_stderr", number_or_null(r.control_error_stderr)},
            {"gap", number_or_null(r.gap)},
            {"max_abs_y", number_or_null(r.max_abs_y)},
            {"clip_activations", r.clip_activations},
            {"positivity_floors", r.positivity_floors},
            {"wall_ms", number_or_null(r.wall_ms)}};
}

inline json crosscheck_to_json(const CrosscheckResult& c) {
    return {{"n", c.n},
            {"v_tilde", c.v_tilde},
            {"v_n", c.v_n},
            {"gap", c.gap},
            {"combined_stderr", c.combined_stderr},
            {"passed", c.passed()}};
}

inline json versions_json() {
    const std::string eigen = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION);
    return {{"pia", kVersion}, {"eigen", eigen}, {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

/// Body of a report without the config: records, reference, rate, cross-checks.
inline json report_body(const ConvergenceReport& r) {
    json records = json::array();
    for (const auto& rec : r.records) records.push_back(record_to_json(rec));
    json crosschecks = json::array();
    for (const auto& c : r.crosschecks) crosschecks.push_back(crosscheck_to_json(c));
    json rate = nullptr;
    if (r.fitted_rate) rate = {{"slope", r.fitted_rate->slope}, {"window", {r.fitted_rate->first, r.fitted_rate->last}}};
    return {{"mode", r.mode},
            {"schedule", r.schedule},
            {"records", records},
            {"reference",
             {{"value", r.reference.value ? json(*r.reference.value) : json(nullptr)},
              {"provenance", r.reference.provenance},
              {"tolerance", r.reference.tolerance}}},
            {"crosschecks", crosschecks},
            {"fitted_rate", rate},
            {"diagnostics", r.diagnostics},
            {"partial", r.partial},
            {"abort_message", r.abort_message}};
}

/// JSON envelope of one run.
inline json report_envelope(const ExperimentConfig& cfg, const ConvergenceReport& r) {
    json out = report_body(r);
    out["config"] = config_to_json(cfg);
    out["seed"] = cfg.scheme.seed;
    out["versions"] = versions_json();
    return out;
}

/// Writes `text` to `path` through a temporary file in the same directory and a rename.
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot open " + tmp.string() + " for writing");
        out << text;
        out.flush();
        if (!out) throw ConfigError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw ConfigError("cannot move report into place at " + path.string());
    }
}

}  // namespace pia
