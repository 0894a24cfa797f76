#include "gfmeq/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

namespace gfmeq {

PerUnitBase::PerUnitBase(double s, double v, double f) : s_base(s), v_base(v), f1(f) {
    if (!(s > 0.0)) throw ValidationError("PerUnitBase: s_base must be positive");
    if (!(v > 0.0)) throw ValidationError("PerUnitBase: v_base must be positive");
    if (!(f > 0.0)) throw ValidationError("PerUnitBase: f1 must be positive");
    omega1 = 2.0 * kPi * f;
}

RlImpedance::RlImpedance(double r_, double l_) : r(r_), l(l_) {
    if (r < 0.0 || l < 0.0 || !std::isfinite(r) || !std::isfinite(l))
        throw ValidationError("RlImpedance: r and l must be finite and non-negative");
}

RlImpedance rl_from_x_over_r(double x_eff, double x_over_r, const PerUnitBase&) {
    if (!(x_eff > 0.0)) throw ValidationError("rl_from_x_over_r: x_eff must be positive");
    if (!(x_over_r > 0.0)) throw ValidationError("rl_from_x_over_r: x_over_r must be positive");
    return RlImpedance(x_eff / x_over_r, x_eff);
}

const char* to_string(YEntry e) {
    switch (e) {
        case YEntry::dd: return "dd";
        case YEntry::dq: return "dq";
        case YEntry::qd: return "qd";
        case YEntry::qq: return "qq";
    }
    return "?";
}

const std::optional<Complex>& AdmittancePoint::entry(YEntry e) const {
    switch (e) {
        case YEntry::dd: return y_dd;
        case YEntry::dq: return y_dq;
        case YEntry::qd: return y_qd;
        case YEntry::qq: return y_qq;
    }
    return y_dd;
}

std::optional<Complex>& AdmittancePoint::entry(YEntry e) {
    switch (e) {
        case YEntry::dd: return y_dd;
        case YEntry::dq: return y_dq;
        case YEntry::qd: return y_qd;
        case YEntry::qq: return y_qq;
    }
    return y_dd;
}

namespace {

bool finite_entry(const std::optional<Complex>& c) {
    return !c || (std::isfinite(c->real()) && std::isfinite(c->imag()));
}

// %.17g round-trips doubles exactly through text.
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

AdmittanceSpectrum::AdmittanceSpectrum(PerUnitBase base, std::vector<AdmittancePoint> points)
    : base_(std::move(base)), points_(std::move(points)) {
    if (points_.size() < 2)
        throw ValidationError("AdmittanceSpectrum: at least 2 points required");
    for (std::size_t i = 0; i < points_.size(); ++i) {
        const auto& p = points_[i];
        if (!(p.f_hz > 0.0))
            throw ValidationError("AdmittanceSpectrum: frequencies must be positive");
        if (i > 0 && !(p.f_hz > points_[i - 1].f_hz))
            throw ValidationError("AdmittanceSpectrum: frequencies must be strictly increasing");
        if (!finite_entry(p.y_dd) || !finite_entry(p.y_dq) || !finite_entry(p.y_qd) ||
            !finite_entry(p.y_qq))
            throw ValidationError("AdmittanceSpectrum: measured entries must be finite");
    }
}

bool AdmittanceSpectrum::entry_measured_everywhere(YEntry e) const {
    return std::all_of(points_.begin(), points_.end(),
                       [e](const AdmittancePoint& p) { return p.entry(e).has_value(); });
}

std::string AdmittanceSpectrum::to_csv() const {
    std::ostringstream out;
    out << "f_hz,y_dd_re,y_dd_im,y_dq_re,y_dq_im,y_qd_re,y_qd_im,y_qq_re,y_qq_im\n";
    for (const auto& p : points_) {
        out << fmt_double(p.f_hz);
        for (YEntry e : {YEntry::dd, YEntry::dq, YEntry::qd, YEntry::qq}) {
            const auto& v = p.entry(e);
            if (v)
                out << ',' << fmt_double(v->real()) << ',' << fmt_double(v->imag());
            else
                out << ",,";
        }
        out << '\n';
    }
    return out.str();
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    cells.push_back(cur);
    return cells;
}

double parse_double(const std::string& s, const char* what) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ValidationError(std::string("could not parse number for ") + what + ": '" + s + "'");
    }
}

}  // namespace

AdmittanceSpectrum AdmittanceSpectrum::from_csv(const std::string& text, const PerUnitBase& base) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw ValidationError("spectrum CSV: empty file");
    if (split_csv_line(line).size() != 9 || line.rfind("f_hz,", 0) != 0)
        throw ValidationError("spectrum CSV: unexpected header: " + line);
    std::vector<AdmittancePoint> pts;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 9)
            throw ValidationError("spectrum CSV: expected 9 cells per row, got " +
                                  std::to_string(cells.size()));
        AdmittancePoint p;
        p.f_hz = parse_double(cells[0], "f_hz");
        int col = 1;
        for (YEntry e : {YEntry::dd, YEntry::dq, YEntry::qd, YEntry::qq}) {
            const std::string& re = cells[col];
            const std::string& im = cells[col + 1];
            col += 2;
            if (re.empty() && im.empty()) continue;
            if (re.empty() || im.empty())
                throw ValidationError("spectrum CSV: half-empty complex cell for y_" +
                                      std::string(to_string(e)));
            p.entry(e) = Complex(parse_double(re, "re"), parse_double(im, "im"));
        }
        pts.push_back(p);
    }
    return AdmittanceSpectrum(base, std::move(pts));
}

std::string AdmittanceSpectrum::to_json() const {
    nlohmann::ordered_json j;
    j["base"] = {{"s_base_va", base_.s_base}, {"v_base_v", base_.v_base}, {"f1_hz", base_.f1}};
    j["points"] = nlohmann::ordered_json::array();
    for (const auto& p : points_) {
        nlohmann::ordered_json jp;
        jp["f_hz"] = p.f_hz;
        for (YEntry e : {YEntry::dd, YEntry::dq, YEntry::qd, YEntry::qq}) {
            const auto& v = p.entry(e);
            std::string key = std::string("y_") + to_string(e);
            if (v)
                jp[key] = {v->real(), v->imag()};
            else
                jp[key] = nullptr;
        }
        j["points"].push_back(std::move(jp));
    }
    return j.dump(2) + "\n";
}

AdmittanceSpectrum AdmittanceSpectrum::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const std::exception& e) {
        throw ValidationError(std::string("spectrum JSON: ") + e.what());
    }
    if (!j.contains("base") || !j.contains("points"))
        throw ValidationError("spectrum JSON: missing 'base' or 'points'");
    PerUnitBase base(j["base"].value("s_base_va", 2.0e8), j["base"].value("v_base_v", 230.0e3),
                     j["base"].value("f1_hz", 60.0));
    std::vector<AdmittancePoint> pts;
    for (const auto& jp : j["points"]) {
        AdmittancePoint p;
        p.f_hz = jp.at("f_hz").get<double>();
        for (YEntry e : {YEntry::dd, YEntry::dq, YEntry::qd, YEntry::qq}) {
            std::string key = std::string("y_") + to_string(e);
            if (jp.contains(key) && !jp[key].is_null())
                p.entry(e) = Complex(jp[key][0].get<double>(), jp[key][1].get<double>());
        }
        pts.push_back(p);
    }
    return AdmittanceSpectrum(base, std::move(pts));
}

ResonancePeak spectrum_resonance(const AdmittanceSpectrum& spec, YEntry entry) {
    const auto& pts = spec.points();
    if (pts.size() < 3)
        throw ValidationError("spectrum_resonance: need at least 3 points");
    if (!spec.entry_measured_everywhere(entry))
        throw ValidationError(std::string("spectrum_resonance: y_") + to_string(entry) +
                              " not measured at every point");

    std::size_t k = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        double m = std::abs(*pts[i].entry(entry));
        if (m > best) {
            best = m;
            k = i;
        }
    }

    ResonancePeak peak;
    peak.magnitude = best;
    if (k == 0 || k + 1 == pts.size()) {
        peak.f_hz = pts[k].f_hz;
        peak.refined = false;
        return peak;
    }

    // Quadratic through (f, log|Y|) at k-1, k, k+1; vertex of the parabola.
    const double x0 = pts[k - 1].f_hz, x1 = pts[k].f_hz, x2 = pts[k + 1].f_hz;
    const double y0 = std::log(std::abs(*pts[k - 1].entry(entry)));
    const double y1 = std::log(std::abs(*pts[k].entry(entry)));
    const double y2 = std::log(std::abs(*pts[k + 1].entry(entry)));
    const double d01 = (y1 - y0) / (x1 - x0);
    const double d12 = (y2 - y1) / (x2 - x1);
    const double curv = (d12 - d01) / (x2 - x0);  // second divided difference
    if (curv >= 0.0) {
        // flat or non-concave neighborhood; no interior vertex to trust
        peak.f_hz = pts[k].f_hz;
        peak.refined = false;
        return peak;
    }
    // Newton form p(x) = y0 + d01 (x-x0) + curv (x-x0)(x-x1); p'(x) = 0 at:
    const double vertex = 0.5 * (x0 + x1) - d01 / (2.0 * curv);
    peak.f_hz = std::clamp(vertex, x0, x2);
    peak.magnitude = best;
    peak.refined = true;
    return peak;
}

}  // namespace gfmeq
