#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gfmeq/core.hpp"
#include "gfmeq/sim.hpp"

namespace gfmeq {

enum class ScanSpacing : std::uint8_t { log_spaced, linear };

struct ScanConfig {
    double f_min_hz = 5.0;
    double f_max_hz = 100.0;
    int n_points = 30;
    ScanSpacing spacing = ScanSpacing::log_spaced;
    double amplitude = 0.01;        // pu perturbation
    int settle_cycles = 10;         // of f_k, before the measure window
    int measure_periods = 10;       // of f_k
    double fundamental_guard_hz = 1.0;  // exclusion band around f1
    double min_settle_s = 1.0;      // floor on the settle interval
    int drift_check_periods = 2;    // pre-injection window; 0 disables the check
    bool measure_q_axis = false;    // q column doubles the runtime, off by default
    int parallel = 1;               // worker threads across frequency points
    SimConfig sim;

    void validate() const;
    /// Requested grid with points inside the fundamental guard band removed.
    std::vector<double> frequency_grid(double f1_hz) const;
};

struct RawResponse {
    double f_hz = 0.0;
    Injection::Axis axis = Injection::Axis::d;
    Complex v_response;    // measured POI voltage perturbation at f_k
    Complex i_d_response;
    Complex i_q_response;
    bool drift_warning = false;
};

/// Captured measure-window samples of one scan point, for raw export.
struct RawTrace {
    double f_hz = 0.0;
    Injection::Axis axis = Injection::Axis::d;
    double amplitude = 0.0;
    double dt = 0.0;
    int settle_cycles = 0;
    int measure_periods = 0;
    std::vector<double> t, v_d, v_q, i_d, i_q;
};

struct SweepDiagnostics {
    std::vector<double> flagged_frequencies;  // diverged points, excluded
    std::vector<std::string> warnings;
    std::vector<RawTrace> raw;  // filled when capture_raw is set
    bool capture_raw = false;
};

/// Complex amplitude of the f_k component of a uniformly sampled signal,
/// normalized so A cos(2 pi f_k t + theta) maps to A e^{j theta}. The window
/// must span an integer number of f_k periods to within one sample.
Complex single_bin_dft(const std::vector<double>& samples, double dt, double f_k);

/// One-frequency perturbation run: inject on the chosen axis, settle, then
/// extract the POI voltage/current phasors at f_k. Responses are referenced
/// to the measured (not commanded) voltage perturbation.
RawResponse measure_column(const SimModel& model, double f_k, Injection::Axis axis,
                           const ScanConfig& cfg, RawTrace* keep_raw = nullptr);

/// Full admittance sweep under the source convention -I = Y V. The d-axis
/// column yields (y_dd, y_qd); the optional q-axis column (y_dq, y_qq).
/// Diverged points are excluded; more than 20% excluded fails the sweep.
AdmittanceSpectrum sweep(const SimModel& model, const ScanConfig& cfg,
                         SweepDiagnostics* diag = nullptr);

/// Re-runs the measure_column post-processing on externally recorded traces.
/// The manifest is a JSON array of {file, f_hz, axis, amplitude, dt,
/// settle_cycles, measure_periods}; read_file maps a manifest file name to
/// the CSV text of its measure window.
AdmittanceSpectrum import_trace_scan(const std::string& manifest_json,
                                     const std::function<std::string(const std::string&)>& read_file,
                                     const PerUnitBase& base);

/// Serialization helpers for raw traces (time-series CSV, POI block only).
std::string raw_trace_to_csv(const RawTrace& trace);
std::string raw_manifest_json(const std::vector<RawTrace>& traces,
                              const std::vector<std::string>& file_names);

}  // namespace gfmeq
