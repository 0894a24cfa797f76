#pragma once

#include <string>

#include "gfmeq/core.hpp"

namespace gfmeq {

struct FitConfig {
    double r_min = 1.0e-5, r_max = 0.5;  // pu bounds on r_th
    double l_min = 0.05, l_max = 1.0;    // pu bounds on l_th
    int multistart_grid = 4;             // starts per axis
    double param_tol = 1.0e-8;           // simplex diameter at convergence
    double eps = 0.01;                   // max acceptable rms_error

    void validate() const;
};

enum class ComplianceLocation : std::uint8_t { lv, mv, hv };

ComplianceLocation location_from_string(const std::string& s);
const char* to_string(ComplianceLocation loc);

struct ComplianceRow {
    double x_min, x_default, x_max;  // pu at the fundamental
};

/// Effective-reactance ranges per connection location, with the recommended
/// R/X ratio. Per-unit reactance is frequency-base invariant, so the same
/// rows apply at 50 or 60 Hz system frequency.
struct ComplianceTable {
    ComplianceRow lv{0.17, 0.25, 0.27};
    ComplianceRow mv{0.25, 0.33, 0.35};
    ComplianceRow hv{0.40, 0.48, 0.50};
    double r_over_x = 0.1;

    const ComplianceRow& row(ComplianceLocation loc) const;
    void validate() const;
};

struct ComplianceReport {
    TheveninEquivalent fitted;
    ComplianceLocation location = ComplianceLocation::hv;
    bool in_range = false;
    bool eps_satisfied = false;
    double eps = 0.0;

    bool pass() const { return in_range && eps_satisfied; }
    std::string to_json() const;
};

/// Frequency-weighted relative-magnitude RMS misfit between the candidate
/// (r_th, l_th) and the measured y_qd column:
///   sqrt( sum_k 1/(2 pi f_k) ((|Y_th(f_k)| - |Y_full(f_k)|)/|Y_full(f_k)|)^2 )
double objective(double r_th, double l_th, const AdmittanceSpectrum& spec);

/// Bounded multistart Nelder-Mead minimization of the objective over
/// (r_th, l_th). Starts run independently; the reduction picks the lowest
/// residual with a lowest-r, lowest-l tie-break.
TheveninEquivalent fit(const AdmittanceSpectrum& spec, const FitConfig& cfg);

ComplianceReport check_compliance(const TheveninEquivalent& fitted, ComplianceLocation location,
                                  const ComplianceTable& table, double eps);

}  // namespace gfmeq
