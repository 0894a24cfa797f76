#include "gfmeq/scan.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace gfmeq {

void ScanConfig::validate() const {
    if (!(f_min_hz > 0.0) || !(f_max_hz > f_min_hz))
        throw ValidationError("scan: need 0 < f_min < f_max");
    if (n_points < 2) throw ValidationError("scan.n_points: need at least 2 points");
    if (!(amplitude > 0.0) || amplitude > 0.05)
        throw ValidationError("scan.amplitude: must be in (0, 0.05] pu");
    if (measure_periods < 5) throw ValidationError("scan.measure_periods: must be >= 5");
    if (settle_cycles < 0) throw ValidationError("scan.settle_cycles: must be >= 0");
    if (min_settle_s < 0.0) throw ValidationError("scan.min_settle_s: must be >= 0");
    if (drift_check_periods < 0) throw ValidationError("scan.drift_check_periods: must be >= 0");
    if (fundamental_guard_hz < 0.0)
        throw ValidationError("scan.fundamental_guard: must be >= 0");
    if (parallel < 1) throw ValidationError("scan.parallel: must be >= 1");
    sim.validate();
}

std::vector<double> ScanConfig::frequency_grid(double f1_hz) const {
    std::vector<double> grid;
    grid.reserve(static_cast<std::size_t>(n_points));
    for (int i = 0; i < n_points; ++i) {
        const double a = n_points == 1 ? 0.0 : static_cast<double>(i) / (n_points - 1);
        double f;
        if (spacing == ScanSpacing::log_spaced)
            f = f_min_hz * std::pow(f_max_hz / f_min_hz, a);
        else
            f = f_min_hz + a * (f_max_hz - f_min_hz);
        if (std::abs(f - f1_hz) < fundamental_guard_hz) continue;  // guarded
        grid.push_back(f);
    }
    return grid;
}

Complex single_bin_dft(const std::vector<double>& samples, double dt, double f_k) {
    if (!(f_k > 0.0)) throw ValidationError("single_bin_dft: f_k must be positive");
    if (!(dt > 0.0)) throw ValidationError("single_bin_dft: dt must be positive");
    const std::size_t n = samples.size();
    if (n < 2) throw ValidationError("single_bin_dft: empty window");
    const double periods = static_cast<double>(n) * dt * f_k;
    const double nearest = std::round(periods);
    if (nearest < 1.0 || std::abs(periods - nearest) > f_k * dt)
        throw ValidationError(
            "single_bin_dft: window does not span an integer number of periods "
            "(got " +
            std::to_string(periods) + ")");

    // Recurrence-free correlation; the rotation is regenerated from the angle
    // each sample to avoid drift over long windows.
    double re = 0.0, im = 0.0;
    double leak_re = 0.0, leak_im = 0.0;
    double mean = 0.0;
    const double w = 2.0 * kPi * f_k * dt;
    for (std::size_t k = 0; k < n; ++k) {
        const double ang = w * static_cast<double>(k);
        const double c = std::cos(ang), s = std::sin(ang);
        const double x = samples[k];
        re += x * c;
        im -= x * s;
        leak_re += c;
        leak_im -= s;
        mean += x;
    }
    const double scale = 2.0 / static_cast<double>(n);
    mean /= static_cast<double>(n);
    // A window that misses integer periodicity by a fraction of a sample
    // leaks the signal's DC component into the bin; the leakage transfer is
    // exactly the bin of a unit constant, so it can be removed.
    return {(re - mean * leak_re) * scale, (im - mean * leak_im) * scale};
}

namespace {

struct WindowPlan {
    long n_pre = 0;     // pre-injection hold (drift check)
    long n_settle = 0;  // injected, discarded
    long n_meas = 0;    // injected, analyzed
};

WindowPlan plan_windows(const ScanConfig& cfg, double f_k) {
    WindowPlan w;
    const double dt = cfg.sim.dt;
    if (cfg.drift_check_periods > 0)
        w.n_pre = std::lround(cfg.drift_check_periods / (f_k * dt));
    const double settle = std::max(cfg.settle_cycles / f_k, cfg.min_settle_s);
    w.n_settle = std::lround(settle / dt);
    w.n_meas = std::lround(cfg.measure_periods / (f_k * dt));
    return w;
}

}  // namespace

RawResponse measure_column(const SimModel& model, double f_k, Injection::Axis axis,
                           const ScanConfig& cfg, RawTrace* keep_raw) {
    cfg.validate();
    if (model.islanded())
        throw ValidationError("measure_column: admittance scans need a grid-connected model");
    const double f1 = model.base().f1;
    if (std::abs(f_k - f1) < cfg.fundamental_guard_hz)
        throw ValidationError("measure_column: f_k inside the fundamental guard band");
    if (!(f_k > 0.0)) throw ValidationError("measure_column: f_k must be positive");

    const WindowPlan w = plan_windows(cfg, f_k);
    Stepper st(model, cfg.sim);

    std::vector<double> pre_vd, pre_iq;
    pre_vd.reserve(static_cast<std::size_t>(w.n_pre));
    pre_iq.reserve(static_cast<std::size_t>(w.n_pre));
    for (long k = 0; k < w.n_pre; ++k) {
        const ModelOutputs o = st.outputs();
        pre_vd.push_back(o.poi.v.d);
        pre_iq.push_back(o.poi.i.q);
        st.step();
    }

    Injection inj;
    inj.active = true;
    inj.axis = axis;
    inj.amplitude = cfg.amplitude;
    inj.f_hz = f_k;
    inj.t_start = st.time();
    st.source().inj = inj;

    for (long k = 0; k < w.n_settle; ++k) st.step();

    std::vector<double> vd, vq, id, iq, tv;
    vd.reserve(static_cast<std::size_t>(w.n_meas));
    vq.reserve(static_cast<std::size_t>(w.n_meas));
    id.reserve(static_cast<std::size_t>(w.n_meas));
    iq.reserve(static_cast<std::size_t>(w.n_meas));
    for (long k = 0; k < w.n_meas; ++k) {
        const ModelOutputs o = st.outputs();
        vd.push_back(o.poi.v.d);
        vq.push_back(o.poi.v.q);
        id.push_back(o.poi.i.d);
        iq.push_back(o.poi.i.q);
        if (keep_raw) tv.push_back(st.time());
        st.step();
    }

    RawResponse r;
    r.f_hz = f_k;
    r.axis = axis;
    r.v_response = single_bin_dft(axis == Injection::Axis::d ? vd : vq, cfg.sim.dt, f_k);
    r.i_d_response = single_bin_dft(id, cfg.sim.dt, f_k);
    r.i_q_response = single_bin_dft(iq, cfg.sim.dt, f_k);
    if (std::abs(r.v_response) <= 0.0)
        throw NumericalError("measure_column: no voltage perturbation measured at the POI");

    if (w.n_pre > 0) {
        const double floor = std::max(1.0e-9, 1.0e-6 * cfg.amplitude);
        if (std::abs(single_bin_dft(pre_vd, cfg.sim.dt, f_k)) > floor ||
            std::abs(single_bin_dft(pre_iq, cfg.sim.dt, f_k)) > floor)
            r.drift_warning = true;
    }

    if (keep_raw) {
        keep_raw->f_hz = f_k;
        keep_raw->axis = axis;
        keep_raw->amplitude = cfg.amplitude;
        keep_raw->dt = cfg.sim.dt;
        keep_raw->settle_cycles = cfg.settle_cycles;
        keep_raw->measure_periods = cfg.measure_periods;
        keep_raw->t = std::move(tv);
        keep_raw->v_d = std::move(vd);
        keep_raw->v_q = std::move(vq);
        keep_raw->i_d = std::move(id);
        keep_raw->i_q = std::move(iq);
    }
    return r;
}

namespace {

struct PointResult {
    bool ok = false;
    bool guard_excluded = false;
    std::string error;
    AdmittancePoint point;
    bool drift = false;
    RawTrace raw_d, raw_q;
    bool has_raw_q = false;
};

void fill_point_from_responses(PointResult& pr, const RawResponse& rd, const RawResponse* rq) {
    pr.point.f_hz = rd.f_hz;
    pr.point.y_dd = -rd.i_d_response / rd.v_response;
    pr.point.y_qd = -rd.i_q_response / rd.v_response;
    if (rq) {
        pr.point.y_dq = -rq->i_d_response / rq->v_response;
        pr.point.y_qq = -rq->i_q_response / rq->v_response;
    }
    pr.drift = rd.drift_warning || (rq && rq->drift_warning);
}

}  // namespace

AdmittanceSpectrum sweep(const SimModel& model, const ScanConfig& cfg, SweepDiagnostics* diag) {
    cfg.validate();
    const std::vector<double> grid = cfg.frequency_grid(model.base().f1);
    if (grid.size() < 2)
        throw ValidationError("sweep: fewer than 2 usable frequency points after guarding");

    std::vector<PointResult> results(grid.size());
    const bool capture = diag && diag->capture_raw;

    auto run_point = [&](std::size_t idx) {
        PointResult& pr = results[idx];
        try {
            RawResponse rd = measure_column(model, grid[idx], Injection::Axis::d, cfg,
                                            capture ? &pr.raw_d : nullptr);
            if (cfg.measure_q_axis) {
                RawResponse rq = measure_column(model, grid[idx], Injection::Axis::q, cfg,
                                                capture ? &pr.raw_q : nullptr);
                pr.has_raw_q = capture;
                fill_point_from_responses(pr, rd, &rq);
            } else {
                fill_point_from_responses(pr, rd, nullptr);
            }
            pr.ok = true;
        } catch (const NumericalError& e) {
            pr.ok = false;
            pr.error = e.what();
        }
    };

    if (cfg.parallel <= 1 || grid.size() < 2) {
        for (std::size_t i = 0; i < grid.size(); ++i) run_point(i);
    } else {
        std::atomic<std::size_t> next{0};
        const int workers = std::min<int>(cfg.parallel, static_cast<int>(grid.size()));
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers));
        for (int wkr = 0; wkr < workers; ++wkr)
            pool.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= results.size()) return;
                    run_point(i);
                }
            });
        for (auto& th : pool) th.join();
    }

    std::vector<AdmittancePoint> pts;
    std::size_t flagged = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        PointResult& pr = results[i];
        if (!pr.ok) {
            ++flagged;
            if (diag) {
                diag->flagged_frequencies.push_back(grid[i]);
                diag->warnings.push_back("point " + std::to_string(grid[i]) +
                                         " Hz excluded: " + pr.error);
            }
            continue;
        }
        if (diag) {
            if (pr.drift)
                diag->warnings.push_back("point " + std::to_string(grid[i]) +
                                         " Hz: residual drift above noise floor");
            if (capture) {
                diag->raw.push_back(std::move(pr.raw_d));
                if (pr.has_raw_q) diag->raw.push_back(std::move(pr.raw_q));
            }
        }
        pts.push_back(pr.point);
    }
    if (flagged * 5 > grid.size())
        throw NumericalError("sweep: more than 20% of points diverged (" +
                             std::to_string(flagged) + " of " + std::to_string(grid.size()) + ")");
    return AdmittanceSpectrum(model.base(), std::move(pts));
}

std::string raw_trace_to_csv(const RawTrace& trace) {
    std::ostringstream out;
    out << "t,point,v_d,v_q,i_d,i_q,p,q\n";
    char buf[256];
    for (std::size_t n = 0; n < trace.t.size(); ++n) {
        double p, q;
        const DqPhasor v{trace.v_d[n], trace.v_q[n]};
        const DqPhasor i{trace.i_d[n], trace.i_q[n]};
        measure_pq(v, i, p, q);
        std::snprintf(buf, sizeof buf, "%.17g,POI,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      trace.t[n], v.d, v.q, i.d, i.q, p, q);
        out << buf;
    }
    return out.str();
}

std::string raw_manifest_json(const std::vector<RawTrace>& traces,
                              const std::vector<std::string>& file_names) {
    if (traces.size() != file_names.size())
        throw ValidationError("raw manifest: trace/file-name count mismatch");
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const RawTrace& tr = traces[i];
        j.push_back({{"file", file_names[i]},
                     {"f_hz", tr.f_hz},
                     {"axis", tr.axis == Injection::Axis::d ? "d" : "q"},
                     {"amplitude", tr.amplitude},
                     {"dt", tr.dt},
                     {"settle_cycles", tr.settle_cycles},
                     {"measure_periods", tr.measure_periods}});
    }
    return j.dump(2) + "\n";
}

AdmittanceSpectrum import_trace_scan(
    const std::string& manifest_json,
    const std::function<std::string(const std::string&)>& read_file, const PerUnitBase& base) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_json);
    } catch (const std::exception& e) {
        throw ValidationError(std::string("import manifest: ") + e.what());
    }
    if (!manifest.is_array()) throw ValidationError("import manifest: expected a JSON array");

    struct Partial {
        std::optional<Complex> y_dd, y_dq, y_qd, y_qq;
    };
    std::vector<std::pair<double, Partial>> acc;

    for (const auto& entry : manifest) {
        const std::string file = entry.at("file").get<std::string>();
        const double f_k = entry.at("f_hz").get<double>();
        const std::string axis_s = entry.at("axis").get<std::string>();
        const double dt = entry.at("dt").get<double>();
        if (axis_s != "d" && axis_s != "q")
            throw ValidationError("import manifest: axis must be 'd' or 'q' in " + file);
        if (!(f_k > 0.0)) throw ValidationError("import manifest: bad f_hz in " + file);

        TimeSeries ts;
        try {
            ts = TimeSeries::from_csv(read_file(file));
        } catch (const std::exception& e) {
            throw ValidationError("import " + file + ": " + e.what());
        }
        if (ts.poi.v.empty()) throw ValidationError("import " + file + ": no POI channel block");
        if (ts.t.size() >= 2) {
            const double file_dt = ts.t[1] - ts.t[0];
            if (std::abs(file_dt - dt) > 1.0e-12 * std::max(1.0, std::abs(dt)))
                throw ValidationError("import " + file + ": dt mismatch between manifest and trace");
            for (std::size_t n = 2; n < ts.t.size(); ++n)
                if (std::abs((ts.t[n] - ts.t[n - 1]) - file_dt) > 1.0e-9)
                    throw ValidationError("import " + file + ": non-uniform time grid");
        }

        std::vector<double> vd, vq, id, iq;
        for (std::size_t n = 0; n < ts.poi.v.size(); ++n) {
            vd.push_back(ts.poi.v[n].d);
            vq.push_back(ts.poi.v[n].q);
            id.push_back(ts.poi.i[n].d);
            iq.push_back(ts.poi.i[n].q);
        }
        Complex v_resp, y_first, y_second;
        try {
            v_resp = single_bin_dft(axis_s == "d" ? vd : vq, dt, f_k);
            y_first = -single_bin_dft(id, dt, f_k) / v_resp;
            y_second = -single_bin_dft(iq, dt, f_k) / v_resp;
        } catch (const ValidationError& e) {
            throw ValidationError("import " + file + ": " + e.what());
        }

        auto it = std::find_if(acc.begin(), acc.end(),
                               [&](const auto& pr) { return pr.first == f_k; });
        if (it == acc.end()) {
            acc.push_back({f_k, {}});
            it = std::prev(acc.end());
        }
        if (axis_s == "d") {
            it->second.y_dd = y_first;
            it->second.y_qd = y_second;
        } else {
            it->second.y_dq = y_first;
            it->second.y_qq = y_second;
        }
    }

    std::sort(acc.begin(), acc.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<AdmittancePoint> pts;
    for (const auto& [f, part] : acc) {
        AdmittancePoint p;
        p.f_hz = f;
        p.y_dd = part.y_dd;
        p.y_dq = part.y_dq;
        p.y_qd = part.y_qd;
        p.y_qq = part.y_qq;
        pts.push_back(p);
    }
    return AdmittanceSpectrum(base, std::move(pts));
}

}  // namespace gfmeq
