#include "gfmeq/study.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "gfmeq/analytic.hpp"

namespace gfmeq {

namespace {

struct PoiOp {
    double p = 0.0, q = 0.0, v = 0.0;
};

PoiOp poi_operating_point(const SimModel& m) {
    const ModelOutputs o = m.outputs(m.initial_state().data(),
                                     std::polar(m.grid_source().v, m.grid_source().delta));
    return {o.poi.p, o.poi.q, o.poi.v.magnitude()};
}

double window_rms(const std::vector<double>& t, const std::vector<double>& a,
                  const std::vector<double>& b, double t0, double t1) {
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] < t0 || t[k] > t1) continue;
        const double d = a[k] - b[k];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw ValidationError("step_compare: window contains no samples");
    return std::sqrt(acc / static_cast<double>(n));
}

double window_excursion(const std::vector<double>& t, const std::vector<double>& a, double t0,
                        double t1) {
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (std::size_t k = 0; k < t.size(); ++k) {
        if (t[k] < t0 || t[k] > t1) continue;
        if (first) {
            lo = hi = a[k];
            first = false;
        } else {
            lo = std::min(lo, a[k]);
            hi = std::max(hi, a[k]);
        }
    }
    return hi - lo;
}

}  // namespace

StepStudyResult step_compare(const SimModel& full, const TheveninEquivalent& equiv,
                             const DisturbanceEvent& event, double window_s,
                             const SimConfig& cfg) {
    if (!(window_s > 0.0)) throw ValidationError("step_compare: window must be positive");
    if (full.islanded()) throw ValidationError("step_compare: needs a grid-connected model");

    const PoiOp op = poi_operating_point(full);
    const SimModel eq_model = SimModel::idvs_at_poi_op(
        RlImpedance(equiv.r_eff, equiv.l_eff), full.base(), op.p, op.q, op.v);

    const PoiOp op_eq = poi_operating_point(eq_model);
    if (std::abs(op_eq.p - op.p) > 1.0e-3 || std::abs(op_eq.q - op.q) > 1.0e-3 ||
        std::abs(op_eq.v - op.v) > 1.0e-3)
        throw ValidationError("step_compare: pre-event operating points differ by more than 1e-3 pu");

    SimConfig run = cfg;
    run.t_end = event.t + window_s;

    StepStudyResult res;
    res.traces_full = simulate(full, {event}, run);
    res.traces_equiv = simulate(eq_model, {event}, run);
    res.window_t0 = event.t;
    res.window_t1 = event.t + window_s;

    const auto& t = res.traces_full.t;
    res.rms_error_q_raw = window_rms(t, res.traces_full.poi.q, res.traces_equiv.poi.q,
                                     res.window_t0, res.window_t1);
    res.rms_error_p_raw = window_rms(t, res.traces_full.poi.p, res.traces_equiv.poi.p,
                                     res.window_t0, res.window_t1);
    const double exc_q = window_excursion(t, res.traces_full.poi.q, res.window_t0, res.window_t1);
    const double exc_p = window_excursion(t, res.traces_full.poi.p, res.window_t0, res.window_t1);
    res.rms_error_q = res.rms_error_q_raw < 1.0e-15 ? 0.0
                                                    : res.rms_error_q_raw / std::max(exc_q, 1.0e-12);
    res.rms_error_p = res.rms_error_p_raw < 1.0e-15 ? 0.0
                                                    : res.rms_error_p_raw / std::max(exc_p, 1.0e-12);
    return res;
}

std::string StepStudyResult::summary_json() const {
    nlohmann::ordered_json j;
    j["rms_error_q"] = rms_error_q;
    j["rms_error_p"] = rms_error_p;
    j["rms_error_q_raw_pu"] = rms_error_q_raw;
    j["rms_error_p_raw_pu"] = rms_error_p_raw;
    j["window_s"] = window_t1 - window_t0;
    return j.dump(2) + "\n";
}

CaseId case_from_string(const std::string& s) {
    if (s == "I" || s == "1") return CaseId::I;
    if (s == "II" || s == "2") return CaseId::II;
    if (s == "III" || s == "3") return CaseId::III;
    if (s == "IV" || s == "4") return CaseId::IV;
    throw ValidationError("unknown case '" + s + "' (expected I, II, III or IV)");
}

const char* to_string(CaseId id) {
    switch (id) {
        case CaseId::I: return "I";
        case CaseId::II: return "II";
        case CaseId::III: return "III";
        case CaseId::IV: return "IV";
    }
    return "?";
}

PeakMetrics peak_metrics(const TimeSeries& ts, MeasPoint pt, double t_event) {
    const ChannelBlock& b = ts.at(pt);
    if (ts.t.empty() || b.p.empty()) throw ValidationError("peak_metrics: empty trace");

    // Pre-event reference: the last sample strictly before the event.
    std::size_t pre = 0;
    for (std::size_t k = 0; k < ts.t.size(); ++k)
        if (ts.t[k] < t_event) pre = k;

    auto analyze = [&](const std::function<double(std::size_t)>& sig, double& peak, double& tpk) {
        const double ref = sig(pre);
        std::vector<double> dev;
        std::vector<double> tv;
        for (std::size_t k = 0; k < ts.t.size(); ++k) {
            if (ts.t[k] < t_event) continue;
            dev.push_back(std::abs(sig(k) - ref));
            tv.push_back(ts.t[k]);
        }
        peak = 0.0;
        std::size_t argmax = 0;
        for (std::size_t k = 0; k < dev.size(); ++k)
            if (dev[k] > peak) {
                peak = dev[k];
                argmax = k;
            }
        // Time to the first local maximum of the deviation.
        tpk = tv.empty() ? 0.0 : tv[argmax] - t_event;
        for (std::size_t k = 1; k + 1 < dev.size(); ++k) {
            if (dev[k] >= dev[k - 1] && dev[k] >= dev[k + 1] && dev[k] > 1.0e-9) {
                tpk = tv[k] - t_event;
                break;
            }
        }
    };

    PeakMetrics m;
    analyze([&](std::size_t k) { return b.p[k]; }, m.peak_p, m.t_peak_p);
    analyze([&](std::size_t k) { return b.q[k]; }, m.peak_q, m.t_peak_q);
    analyze([&](std::size_t k) { return b.i[k].magnitude(); }, m.peak_i, m.t_peak_i);
    return m;
}

namespace {

PeakMetrics run_idvs_case(double z_x, double x_over_r, const CaseStudyConfig& cfg) {
    const PerUnitBase base;
    const IdvsConfig ic(1.0, rl_from_x_over_r(z_x, x_over_r, base), base);
    const SimModel m = SimModel::idvs(ic, GridSource{1.0, 0.0});
    SimConfig run = cfg.sim;
    run.t_end = cfg.event.t + cfg.window_s;
    const TimeSeries ts = simulate(m, {cfg.event}, run);
    return peak_metrics(ts, MeasPoint::vcp, cfg.event.t);
}

PeakMetrics run_gfm_case(double z_gfm_x, double z_filter_x, bool idealistic,
                         const CaseStudyConfig& cfg) {
    const PerUnitBase base;
    GfmPlantModel g = cfg.gfm;
    g.z_coupling_plus_grid = rl_from_x_over_r(z_gfm_x, cfg.x_over_r, base);
    g.filter_l = z_filter_x;
    g.filter_r = z_filter_x / 50.0;
    g.filter_c = cfg.gfm.filter_c;
    g.kpc = 0.0;  // retune the current loop for the swept filter
    g.kic = 0.0;
    g.virtual_z = RlImpedance(0.0, 0.0);
    g.p_ref = 0.0;
    g.q_ref = 0.0;
    g.v_ref = 1.0;
    IdealisticMode mode;
    mode.enabled = idealistic;
    const SimModel m = SimModel::droop_gfm(g, mode, GridSource{1.0, 0.0});
    SimConfig run = cfg.sim;
    run.t_end = cfg.event.t + cfg.window_s;
    const TimeSeries ts = simulate(m, {cfg.event}, run);
    return peak_metrics(ts, MeasPoint::vcp, cfg.event.t);
}

void check_range(double v, double lo, double hi, const char* what) {
    if (v < lo - 1.0e-12 || v > hi + 1.0e-12)
        throw ValidationError(std::string(what) + " = " + std::to_string(v) +
                              " outside the allowed range [" + std::to_string(lo) + ", " +
                              std::to_string(hi) + "]");
}

}  // namespace

CaseStudyReport case_study(CaseId id, const CaseStudyConfig& cfg) {
    CaseStudyReport rep;
    rep.id = id;

    switch (id) {
        case CaseId::I: {
            rep.entries.push_back(
                {"gfm_idealistic", cfg.z_gfm_x,
                 run_gfm_case(cfg.z_gfm_x, cfg.z_filter_x, true, cfg)});
            rep.entries.push_back(
                {"idvs_z_gfm", cfg.z_gfm_x, run_idvs_case(cfg.z_gfm_x, cfg.x_over_r, cfg)});
            rep.entries.push_back({"idvs_z_gfm_plus_filter", cfg.z_gfm_x + cfg.z_filter_x,
                                   run_idvs_case(cfg.z_gfm_x + cfg.z_filter_x, cfg.x_over_r, cfg)});
            break;
        }
        case CaseId::II: {
            std::vector<double> sweep = cfg.sweep.empty()
                                            ? std::vector<double>{0.125, 0.2, 0.333}
                                            : cfg.sweep;
            for (double z : sweep) {
                check_range(z, 0.125, 0.333, "case II z_gfm");
                rep.entries.push_back(
                    {"gfm_idealistic", z, run_gfm_case(z, cfg.z_filter_x, true, cfg)});
                rep.entries.push_back({"idvs", z, run_idvs_case(z, cfg.x_over_r, cfg)});
            }
            break;
        }
        case CaseId::III:
        case CaseId::IV: {
            const bool idealistic = id == CaseId::III;
            const double z_gfm = id == CaseId::III ? cfg.z_gfm_x : 0.33;
            std::vector<double> sweep = cfg.sweep.empty()
                                            ? std::vector<double>{0.075, 0.15, 0.1875}
                                            : cfg.sweep;
            for (double zf : sweep) {
                check_range(zf, 0.075, 0.1875, "z_filter");
                rep.entries.push_back({idealistic ? "gfm_idealistic" : "gfm_realistic", zf,
                                       run_gfm_case(z_gfm, zf, idealistic, cfg)});
            }
            rep.entries.push_back({"idvs_reference", z_gfm, run_idvs_case(z_gfm, cfg.x_over_r, cfg)});
            break;
        }
    }
    return rep;
}

std::string CaseStudyReport::to_json() const {
    nlohmann::ordered_json j;
    j["case"] = to_string(id);
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        j["entries"].push_back({{"label", e.label},
                                {"param", e.param},
                                {"peak_p", e.metrics.peak_p},
                                {"t_peak_p_s", e.metrics.t_peak_p},
                                {"peak_q", e.metrics.peak_q},
                                {"t_peak_q_s", e.metrics.t_peak_q},
                                {"peak_i", e.metrics.peak_i},
                                {"t_peak_i_s", e.metrics.t_peak_i}});
    }
    return j.dump(2) + "\n";
}

std::string CaseStudyReport::to_csv() const {
    std::ostringstream out;
    out << "label,param,peak_p,t_peak_p_s,peak_q,t_peak_q_s,peak_i,t_peak_i_s\n";
    char buf[320];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      e.label.c_str(), e.param, e.metrics.peak_p, e.metrics.t_peak_p,
                      e.metrics.peak_q, e.metrics.t_peak_q, e.metrics.peak_i, e.metrics.t_peak_i);
        out << buf;
    }
    return out.str();
}

const char* to_string(PvTermination t) {
    switch (t) {
        case PvTermination::non_convergence: return "non-convergence";
        case PvTermination::collapse: return "collapse";
        case PvTermination::schedule_end: return "schedule-end";
    }
    return "?";
}

void PvTraceConfig::validate() const {
    if (!(base_p > 0.0)) throw ValidationError("pv.base_p must be positive");
    if (!(step_p > 0.0)) throw ValidationError("pv.step_p must be positive");
    if (base_q < 0.0 || step_q < 0.0) throw ValidationError("pv loads must be non-negative");
    if (max_steps < 1) throw ValidationError("pv.max_steps must be >= 1");
    if (refine_rounds < 0) throw ValidationError("pv.refine_rounds must be >= 0");
    if (!(load_tau_s > 0.0)) throw ValidationError("pv.load_tau_s must be positive");
}

std::string PvCurve::to_csv() const {
    std::ostringstream out;
    out << "p_load_pu,v_poi_pu\n";
    char buf[96];
    for (const auto& [p, v] : points) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p, v);
        out << buf;
    }
    return out.str();
}

namespace {

constexpr double kCollapseVoltage = 0.25;

// Shared stepping/refinement logic; solve_level returns the POI voltage for
// a solvable level and advances any warm-start context it captured.
PvCurve trace_generic(const PvTraceConfig& cfg,
                      const std::function<std::optional<double>(double, double)>& solve_level) {
    cfg.validate();
    PvCurve curve;

    const auto base = solve_level(cfg.base_p, cfg.base_q);
    if (!base) throw ValidationError("pv_trace: base load case is unsolvable");
    curve.points.emplace_back(cfg.base_p, *base);

    double p_last = cfg.base_p, q_last = cfg.base_q, v_last = *base;
    bool hit_limit = false;
    bool collapsed = false;

    double dp = cfg.step_p, dq = cfg.step_q;
    for (int round = 0; round <= cfg.refine_rounds; ++round) {
        if (round > 0) {
            if (!hit_limit) break;  // schedule ended without reaching the nose
            dp *= 0.5;
            dq *= 0.5;
        }
        hit_limit = false;
        for (int k = 1; k <= cfg.max_steps; ++k) {
            const double p = p_last + dp;
            const double q = q_last + dq;
            const auto v = solve_level(p, q);
            if (!v) {
                hit_limit = true;
                break;
            }
            if (*v < kCollapseVoltage) {
                hit_limit = true;
                collapsed = true;
                break;
            }
            curve.points.emplace_back(p, *v);
            p_last = p;
            q_last = q;
            v_last = *v;
        }
    }

    curve.p_max = p_last;
    curve.v_at_pmax = v_last;
    curve.terminated_by = collapsed          ? PvTermination::collapse
                          : hit_limit        ? PvTermination::non_convergence
                                             : PvTermination::schedule_end;
    return curve;
}

}  // namespace

PvCurve pv_trace(const SimModel& islanded_base_load_model, const PvTraceConfig& cfg) {
    if (!islanded_base_load_model.islanded())
        throw ValidationError("pv_trace: model must be islanded (constant-power load at the POI)");

    std::vector<double> warm = islanded_base_load_model.initial_state();
    auto solve_level = [&](double p, double q) -> std::optional<double> {
        try {
            const SimModel level =
                reload_islanded(islanded_base_load_model, CplLoad{p, q, cfg.load_tau_s}, &warm);
            warm = level.initial_state();
            const ModelOutputs o = level.outputs(warm.data(), Complex(0.0, 0.0));
            return o.poi.v.magnitude();
        } catch (const NumericalError&) {
            return std::nullopt;
        }
    };
    return trace_generic(cfg, solve_level);
}

PvCurve pv_trace(const TheveninEquivalent& equiv, const PvTraceConfig& cfg) {
    const RlImpedance z(equiv.r_eff, equiv.l_eff);
    const Complex i0 = std::conj(Complex(cfg.base_p, cfg.base_q) / Complex(1.0, 0.0));
    const double e = std::abs(Complex(1.0, 0.0) + z.as_complex() * i0);

    auto solve_level = [&](double p, double q) -> std::optional<double> {
        return two_bus_load_voltage(e, z, p, q);
    };
    return trace_generic(cfg, solve_level);
}

SimModel gfm_islanded_at_base_load(const GfmPlantModel& params, const PvTraceConfig& cfg) {
    cfg.validate();
    GfmPlantModel g = params;
    const Complex i0 = std::conj(Complex(cfg.base_p, cfg.base_q) / Complex(1.0, 0.0));
    const Complex vc0 = Complex(1.0, 0.0) +
                        (g.z_coupling_plus_grid.as_complex() + g.virtual_z.as_complex()) * i0;
    const Complex s_vcp = vc0 * std::conj(i0);
    g.p_ref = s_vcp.real();
    g.q_ref = s_vcp.imag();
    g.v_ref = std::abs(vc0);
    return SimModel::droop_gfm_islanded(g, IdealisticMode{}, CplLoad{cfg.base_p, cfg.base_q,
                                                                     cfg.load_tau_s});
}

SimModel idvs_islanded_at_base_load(const RlImpedance& z, const PerUnitBase& base,
                                    const PvTraceConfig& cfg) {
    cfg.validate();
    const Complex i0 = std::conj(Complex(cfg.base_p, cfg.base_q) / Complex(1.0, 0.0));
    const double e = std::abs(Complex(1.0, 0.0) + z.as_complex() * i0);
    return SimModel::idvs_islanded(IdvsConfig(e, z, base),
                                   CplLoad{cfg.base_p, cfg.base_q, cfg.load_tau_s});
}

}  // namespace gfmeq
