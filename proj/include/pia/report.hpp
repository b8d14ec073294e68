#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace pia {

/// One iteration of a scheme. Distances are integrated over [0, T] and averaged
/// over paths (MC) or over the central grid window (PDE).
struct IterationRecord {
    std::size_t n = 0;
    double phi_n = 1.0;
    double value = 0.0;
    double std_error = 0.0;
    double err = std::numeric_limits<double>::quiet_NaN();  // value - reference
    double z_distance = 0.0;
    double control_distance = 0.0;
    double control_error = std::numeric_limits<double>::quiet_NaN();  // time average of |u*(Z^n) - nu*|^2
    double control_error_stderr = std::numeric_limits<double>::quiet_NaN();
    double gap = std::numeric_limits<double>::quiet_NaN();  // PDE mode: sup-norm distance to the reference field
    double max_abs_y = 0.0;
    std::size_t clip_activations = 0;
    std::size_t positivity_floors = 0;
    double wall_ms = 0.0;
};

struct Reference {
    std::optional<double> value;
    std::string provenance = "none";  // analytic, pde-oracle, bsde-oracle, none
    double tolerance = 0.0;
};

struct RateFit {
    double slope = 0.0;
    std::size_t first = 0;  // window [first, last] of record indices
    std::size_t last = 0;
};

struct CrosscheckResult {
    std::size_t n = 0;
    double v_tilde = 0.0;
    double v_n = 0.0;
    double gap = 0.0;
    double combined_stderr = 0.0;
    bool passed() const { return gap <= 3.0 * combined_stderr; }
};

struct ConvergenceReport {
    std::string mode;
    std::string schedule;
    std::vector<IterationRecord> records;
    Reference reference;
    std::optional<RateFit> fitted_rate;
    std::vector<CrosscheckResult> crosschecks;
    std::vector<std::string> diagnostics;
    bool partial = false;
    std::string abort_message;
};

/// Thrown when a rate fit has fewer than three usable points.
class InsufficientDataError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Least-squares slope of log|e_n| against n over the first contiguous run of
/// entries with |e_n| > floor.
inline RateFit fit_rate(const std::vector<double>& errors, double floor) {
    std::size_t first = 0;
    while (first < errors.size() && !(std::abs(errors[first]) > floor)) ++first;
    std::size_t last = first;
    while (last < errors.size() && std::abs(errors[last]) > floor) ++last;
    if (last - first < 3) throw InsufficientDataError("fewer than 3 errors above the floor");
    const double k = static_cast<double>(last - first);
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = first; i < last; ++i) {
        const double x = static_cast<double>(i), y = std::log(std::abs(errors[i]));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    RateFit fit;
    fit.slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    fit.first = first;
    fit.last = last - 1;
    return fit;
}

/// Shortest round-trip text of a double ("nan" for NaN).
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline const char* kCsvHeader = "n,phi_n,value,stderr,err,z_distance,control_distance,wall_ms";

inline void write_csv_row(std::ostream& out, const IterationRecord& r) {
    out << r.n << ',' << format_double(r.phi_n) << ',' << format_double(r.value) << ',' << format_double(r.std_error)
        << ',' << format_double(r.err) << ',' << format_double(r.z_distance) << ','
        << format_double(r.control_distance) << ',' << format_double(r.wall_ms) << '\n';
}

inline std::string to_csv(const ConvergenceReport& report) {
    std::ostringstream out;
    out << kCsvHeader << '\n';
    for (const auto& r : report.records) write_csv_row(out, r);
    return out.str();
}

/// Long format across schedules: the schedule label is the first column.
inline std::string to_long_csv(const std::vector<ConvergenceReport>& reports) {
    std::ostringstream out;
    out << "schedule," << kCsvHeader << '\n';
    for (const auto& rep : reports)
        for (const auto& r : rep.records) {
            out << rep.schedule << ',';
            write_csv_row(out, r);
        }
    return out.str();
}

/// errors e_n = V^n - V_ref of the records (empty when there is no reference).
inline std::vector<double> record_errors(const ConvergenceReport& report) {
    std::vector<double> e;
    if (!report.reference.value) return e;
    for (const auto& r : report.records) e.push_back(r.err);
    return e;
}

/// Fits the convergence rate of the record errors; a failed fit is noted in the diagnostics.
inline void attach_rate(ConvergenceReport& report, double floor) {
    const auto errors = record_errors(report);
    if (errors.empty()) return;
    try {
        report.fitted_rate = fit_rate(errors, floor);
    } catch (const InsufficientDataError& e) {
        report.diagnostics.push_back(std::string("rate fit: ") + e.what());
    }
}

}  // namespace pia
