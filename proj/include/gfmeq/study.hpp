#pragma once

#include <string>
#include <vector>

#include "gfmeq/core.hpp"
#include "gfmeq/fit.hpp"
#include "gfmeq/sim.hpp"

namespace gfmeq {

struct StepStudyResult {
    TimeSeries traces_full;
    TimeSeries traces_equiv;
    double rms_error_q = 0.0;      // normalized by the full model's Q excursion
    double rms_error_p = 0.0;
    double rms_error_q_raw = 0.0;  // unnormalized, pu
    double rms_error_p_raw = 0.0;
    double window_t0 = 0.0;
    double window_t1 = 0.0;

    std::string summary_json() const;
};

/// Simulates the full model and its fitted equivalent under the same grid
/// event from a matched POI operating point, and scores the POI reactive
/// (and active) power agreement over the post-event window.
StepStudyResult step_compare(const SimModel& full, const TheveninEquivalent& equiv,
                             const DisturbanceEvent& event, double window_s,
                             const SimConfig& cfg);

enum class CaseId : std::uint8_t { I, II, III, IV };

CaseId case_from_string(const std::string& s);
const char* to_string(CaseId id);

/// Peak deviation metrics of one device response: max |signal - pre-event|
/// over the window and the time from the event to the first local maximum.
struct PeakMetrics {
    double peak_p = 0.0, t_peak_p = 0.0;
    double peak_q = 0.0, t_peak_q = 0.0;
    double peak_i = 0.0, t_peak_i = 0.0;
};

PeakMetrics peak_metrics(const TimeSeries& ts, MeasPoint pt, double t_event);

struct CaseEntry {
    std::string label;
    double param = 0.0;  // the swept quantity, when applicable
    PeakMetrics metrics;
};

struct CaseStudyConfig {
    double z_gfm_x = 0.2;       // VCP -> POI reactance (Cases I-III); IV uses 0.33
    double x_over_r = 10.0;
    double z_filter_x = 0.15;
    std::vector<double> sweep;  // Case II: z_gfm values; Cases III/IV: z_filter values
    DisturbanceEvent event{0.05, -0.1, -5.0 * kPi / 180.0};
    double window_s = 0.25;
    SimConfig sim;
    GfmPlantModel gfm;          // gains and droop settings for the GFM variants
};

struct CaseStudyReport {
    CaseId id = CaseId::I;
    std::vector<CaseEntry> entries;

    std::string to_json() const;
    std::string to_csv() const;
};

/// Step studies at the no-load operating point comparing the (idealistic or
/// realistic) GFM against ideal-source references, measured at the VCP and
/// the source internal node respectively.
CaseStudyReport case_study(CaseId id, const CaseStudyConfig& cfg);

enum class PvTermination : std::uint8_t { non_convergence, collapse, schedule_end };

const char* to_string(PvTermination t);

struct PvCurve {
    std::vector<std::pair<double, double>> points;  // (p_load, v_poi)
    double p_max = 0.0;
    double v_at_pmax = 0.0;
    PvTermination terminated_by = PvTermination::schedule_end;

    std::string to_csv() const;
};

struct PvTraceConfig {
    double base_p = 0.125;
    double base_q = 0.0625;
    double step_p = 0.05;
    double step_q = 0.025;
    int max_steps = 200;
    int refine_rounds = 2;
    double load_tau_s = 1.0e-3;

    void validate() const;
};

/// Steps a constant-power load at the POI of an islanded model, re-solving
/// the steady state per level (warm-started), until the load flow stops
/// converging; the nose is then refined with halved steps.
PvCurve pv_trace(const SimModel& islanded_base_load_model, const PvTraceConfig& cfg);

/// Same trace for the fitted equivalent, solved algebraically. The internal
/// voltage is anchored at the base-load operating point with the POI at
/// 1.0 pu, matching how the full model is initialized.
PvCurve pv_trace(const TheveninEquivalent& equiv, const PvTraceConfig& cfg);

/// Islanded GFM prototype whose references put the POI at 1.0 pu under the
/// base load; the pv_trace starting point for the full model.
SimModel gfm_islanded_at_base_load(const GfmPlantModel& params, const PvTraceConfig& cfg);

/// Islanded ideal-source prototype at the base load with the POI at 1.0 pu.
SimModel idvs_islanded_at_base_load(const RlImpedance& z, const PerUnitBase& base,
                                    const PvTraceConfig& cfg);

}  // namespace gfmeq
