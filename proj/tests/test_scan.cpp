#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "gfmeq/analytic.hpp"
#include "gfmeq/scan.hpp"

using namespace gfmeq;

namespace {

const PerUnitBase kBase60(2.0e8, 230.0e3, 60.0);

std::vector<double> tone(double amp, double f, double phase, double dt, int periods) {
    const long n = std::lround(periods / (f * dt));
    std::vector<double> s(static_cast<std::size_t>(n));
    for (long k = 0; k < n; ++k) s[k] = amp * std::cos(2.0 * kPi * f * k * dt + phase);
    return s;
}

ScanConfig quick_scan() {
    ScanConfig cfg;
    cfg.n_points = 12;
    cfg.settle_cycles = 10;
    cfg.measure_periods = 10;
    cfg.min_settle_s = 0.6;
    cfg.drift_check_periods = 2;
    return cfg;
}

SimModel hv_idvs() {
    return SimModel::idvs(IdvsConfig(1.0, rl_from_x_over_r(0.48, 10.0, kBase60), kBase60),
                          GridSource{1.0, 0.0});
}

}  // namespace

TEST_CASE("single-bin DFT: cosine, sine, and DC exactness") {
    const double dt = 2.0e-5;
    SUBCASE("cosine maps to a real amplitude") {
        const Complex c = single_bin_dft(tone(0.01, 25.0, 0.0, dt, 10), dt, 25.0);
        CHECK(std::abs(c - Complex(0.01, 0.0)) < 1e-10);
    }
    SUBCASE("sine maps to -90 degrees") {
        const Complex c = single_bin_dft(tone(0.01, 25.0, -kPi / 2.0, dt, 10), dt, 25.0);
        CHECK(std::abs(c - Complex(0.0, -0.01)) < 1e-10);
    }
    SUBCASE("a constant has no component at f_k") {
        std::vector<double> s(20000, 1.0);
        const Complex c = single_bin_dft(s, dt, 25.0);
        CHECK(std::abs(c) < 1e-12);
    }
    SUBCASE("phase is preserved") {
        const Complex c = single_bin_dft(tone(0.02, 40.0, 0.7, dt, 8), dt, 40.0);
        CHECK(std::abs(c - std::polar(0.02, 0.7)) < 1e-10);
    }
}

TEST_CASE("single-bin DFT rejects non-integer-periodic windows") {
    const double dt = 2.0e-5;
    std::vector<double> s(12345, 0.0);  // 12345*2e-5*25 = 6.1725 periods
    CHECK_THROWS_AS(single_bin_dft(s, dt, 25.0), ValidationError);
}

TEST_CASE("measure_column on the HV source matches the analytic admittance") {
    const SimModel m = hv_idvs();
    const ScanConfig cfg = quick_scan();
    const RawResponse r = measure_column(m, 10.0, Injection::Axis::d, cfg);
    const Complex y_qd_meas = -r.i_q_response / r.v_response;
    const Complex y_qd_ref = thevenin_yqd(0.048, 0.48, 60.0, 10.0);
    CHECK(std::abs(y_qd_meas - y_qd_ref) / std::abs(y_qd_ref) < 0.005);
    CHECK_FALSE(r.drift_warning);
}

TEST_CASE("measure_column rejects frequencies inside the fundamental guard") {
    const SimModel m = hv_idvs();
    const ScanConfig cfg = quick_scan();
    CHECK_THROWS_AS(measure_column(m, 60.0, Injection::Axis::d, cfg), ValidationError);
    CHECK_THROWS_AS(measure_column(m, 60.4, Injection::Axis::d, cfg), ValidationError);
}

TEST_CASE("extracted admittance is amplitude-independent (small-signal regime)") {
    const SimModel m = hv_idvs();
    ScanConfig a = quick_scan(), b = quick_scan();
    a.amplitude = 0.01;
    b.amplitude = 0.005;
    const RawResponse ra = measure_column(m, 15.0, Injection::Axis::d, a);
    const RawResponse rb = measure_column(m, 15.0, Injection::Axis::d, b);
    const Complex ya = -ra.i_q_response / ra.v_response;
    const Complex yb = -rb.i_q_response / rb.v_response;
    CHECK(std::abs(ya - yb) / std::abs(ya) < 1e-3);
}

TEST_CASE("sweep reproduces the analytic spectrum within half a percent") {
    const SimModel m = hv_idvs();
    ScanConfig cfg = quick_scan();
    cfg.n_points = 12;
    cfg.parallel = 2;
    const AdmittanceSpectrum spec = sweep(m, cfg);
    REQUIRE(spec.size() >= 10);
    for (const auto& p : spec.points()) {
        REQUIRE(p.y_qd.has_value());
        const Complex ref = thevenin_yqd(0.048, 0.48, 60.0, p.f_hz);
        CHECK(std::abs(std::abs(*p.y_qd) - std::abs(ref)) / std::abs(ref) < 0.005);
        const double dphase = std::arg(*p.y_qd / ref) * 180.0 / kPi;
        CHECK(std::abs(dphase) < 1.0);
    }
}

TEST_CASE("sweep frequencies equal the requested grid minus guarded points") {
    const SimModel m = hv_idvs();
    ScanConfig cfg = quick_scan();
    cfg.n_points = 16;
    const auto grid = cfg.frequency_grid(60.0);
    const AdmittanceSpectrum spec = sweep(m, cfg);
    REQUIRE(spec.size() == grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        CHECK(spec.points()[i].f_hz == grid[i]);
    for (double f : grid) CHECK(std::abs(f - 60.0) >= cfg.fundamental_guard_hz);
}

TEST_CASE("parallel sweep equals serial sweep point-for-point") {
    const SimModel m = hv_idvs();
    ScanConfig serial = quick_scan(), parallel = quick_scan();
    serial.parallel = 1;
    parallel.parallel = 2;
    const AdmittanceSpectrum a = sweep(m, serial);
    const AdmittanceSpectrum b = sweep(m, parallel);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.points()[i].f_hz == b.points()[i].f_hz);
        CHECK(*a.points()[i].y_qd == *b.points()[i].y_qd);
        CHECK(*a.points()[i].y_dd == *b.points()[i].y_dd);
    }
}

TEST_CASE("q-axis column fills the full matrix and matches the analytic dq entry") {
    const SimModel m = hv_idvs();
    ScanConfig cfg = quick_scan();
    cfg.n_points = 6;
    cfg.measure_q_axis = true;
    const AdmittanceSpectrum spec = sweep(m, cfg);
    for (const auto& p : spec.points()) {
        REQUIRE(p.y_dq.has_value());
        REQUIRE(p.y_qq.has_value());
        const IdvsConfig ic(1.0, rl_from_x_over_r(0.48, 10.0, kBase60), kBase60);
        const Admittance2x2 ref = idvs_admittance(ic, p.f_hz);
        CHECK(std::abs(*p.y_dq - ref.y_dq) / std::abs(ref.y_dq) < 0.005);
        CHECK(std::abs(*p.y_qq - ref.y_qq) / std::abs(ref.y_qq) < 0.005);
    }
}

TEST_CASE("raw export and re-import give the identical spectrum bit-for-bit") {
    const SimModel m = hv_idvs();
    ScanConfig cfg = quick_scan();
    cfg.n_points = 6;
    SweepDiagnostics diag;
    diag.capture_raw = true;
    const AdmittanceSpectrum direct = sweep(m, cfg, &diag);
    REQUIRE(diag.raw.size() == direct.size());

    std::vector<std::string> names;
    std::map<std::string, std::string> files;
    for (std::size_t i = 0; i < diag.raw.size(); ++i) {
        const std::string name = "trace_" + std::to_string(i) + ".csv";
        names.push_back(name);
        files[name] = raw_trace_to_csv(diag.raw[i]);
    }
    const std::string manifest = raw_manifest_json(diag.raw, names);
    const AdmittanceSpectrum imported = import_trace_scan(
        manifest, [&](const std::string& f) { return files.at(f); }, kBase60);

    REQUIRE(imported.size() == direct.size());
    for (std::size_t i = 0; i < direct.size(); ++i) {
        CHECK(imported.points()[i].f_hz == direct.points()[i].f_hz);
        CHECK(imported.points()[i].y_qd->real() == direct.points()[i].y_qd->real());
        CHECK(imported.points()[i].y_qd->imag() == direct.points()[i].y_qd->imag());
        CHECK(imported.points()[i].y_dd->real() == direct.points()[i].y_dd->real());
    }
}

TEST_CASE("import rejects a manifest whose dt contradicts the trace") {
    const SimModel m = hv_idvs();
    ScanConfig cfg = quick_scan();
    RawTrace raw;
    measure_column(m, 20.0, Injection::Axis::d, cfg, &raw);
    std::string manifest = raw_manifest_json({raw}, {"t.csv"});
    // Corrupt the manifest dt.
    auto pos = manifest.find("\"dt\"");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, manifest.find(',', pos) - pos, "\"dt\": 4e-05");
    const std::string csv = raw_trace_to_csv(raw);
    CHECK_THROWS_AS(import_trace_scan(manifest, [&](const std::string&) { return csv; }, kBase60),
                    ValidationError);
}

TEST_CASE("synthetic trace built from the analytic phasors imports exactly") {
    // Construct the measure window directly from the admittance matrix and
    // check the import path recovers the same y_qd.
    const double f_k = 12.5, dt = 2.0e-5;
    const IdvsConfig ic(1.0, rl_from_x_over_r(0.48, 10.0, kBase60), kBase60);
    const Admittance2x2 y = idvs_admittance(ic, f_k);
    const double amp = 0.01;

    RawTrace tr;
    tr.f_hz = f_k;
    tr.axis = Injection::Axis::d;
    tr.amplitude = amp;
    tr.dt = dt;
    tr.settle_cycles = 0;
    tr.measure_periods = 10;
    const long n = std::lround(10.0 / (f_k * dt));
    for (long k = 0; k < n; ++k) {
        const double t = k * dt;
        const Complex vd = amp * std::exp(Complex(0.0, 2.0 * kPi * f_k * t));
        const Complex id = -y.y_dd * vd;  // source convention
        const Complex iq = -y.y_qd * vd;
        tr.t.push_back(t);
        tr.v_d.push_back(1.0 + vd.real());
        tr.v_q.push_back(0.0);
        tr.i_d.push_back(id.real());
        tr.i_q.push_back(iq.real());
    }
    // Need two frequencies for a valid spectrum: clone shifted.
    RawTrace tr2 = tr;
    tr2.f_hz = 25.0;
    const Admittance2x2 y2 = idvs_admittance(ic, 25.0);
    const long n2 = std::lround(10.0 / (25.0 * dt));
    tr2.t.assign(0, 0.0);
    tr2.v_d.clear();
    tr2.v_q.clear();
    tr2.i_d.clear();
    tr2.i_q.clear();
    tr2.t.clear();
    for (long k = 0; k < n2; ++k) {
        const double t = k * dt;
        const Complex vd = amp * std::exp(Complex(0.0, 2.0 * kPi * 25.0 * t));
        tr2.t.push_back(t);
        tr2.v_d.push_back(1.0 + vd.real());
        tr2.v_q.push_back(0.0);
        tr2.i_d.push_back((-y2.y_dd * vd).real());
        tr2.i_q.push_back((-y2.y_qd * vd).real());
    }

    const std::string manifest = raw_manifest_json({tr, tr2}, {"a.csv", "b.csv"});
    std::map<std::string, std::string> files{{"a.csv", raw_trace_to_csv(tr)},
                                             {"b.csv", raw_trace_to_csv(tr2)}};
    const AdmittanceSpectrum spec = import_trace_scan(
        manifest, [&](const std::string& f) { return files.at(f); }, kBase60);
    REQUIRE(spec.size() == 2);
    CHECK(std::abs(*spec.points()[0].y_qd - y.y_qd) < 1e-9);
    CHECK(std::abs(*spec.points()[1].y_qd - y2.y_qd) < 1e-9);
}

TEST_CASE("a sweep over a diverging device fails once too many points are lost") {
    GfmPlantModel g;
    g.kpv = 2.6e4;  // voltage loop far beyond the current loop: every point blows up
    g.kiv = 5.8e4;
    const SimModel m = SimModel::droop_gfm(g, IdealisticMode{}, GridSource{1.0, 0.0});
    ScanConfig cfg = quick_scan();
    cfg.n_points = 5;
    SweepDiagnostics diag;
    CHECK_THROWS_AS(sweep(m, cfg, &diag), NumericalError);
    CHECK(diag.flagged_frequencies.size() > 0);
}

TEST_CASE("scan config invariants") {
    ScanConfig cfg;
    cfg.n_points = 0;
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("scan.n_points"), ValidationError);
    cfg = ScanConfig{};
    cfg.amplitude = 0.2;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = ScanConfig{};
    cfg.measure_periods = 3;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = ScanConfig{};
    cfg.f_min_hz = 10.0;
    cfg.f_max_hz = 5.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
