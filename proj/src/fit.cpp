#include "gfmeq/fit.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <thread>
#include <tuple>

#include <json.hpp>

#include "gfmeq/analytic.hpp"

namespace gfmeq {

void FitConfig::validate() const {
    if (!(r_min > 0.0) || !(r_max > r_min))
        throw ValidationError("fit.bounds_r: need 0 < min < max");
    if (!(l_min > 0.0) || !(l_max > l_min))
        throw ValidationError("fit.bounds_l: need 0 < min < max");
    if (multistart_grid < 1) throw ValidationError("fit.multistart_grid: must be >= 1");
    if (!(param_tol > 0.0)) throw ValidationError("fit.param_tol: must be positive");
    if (!(eps > 0.0)) throw ValidationError("fit.eps: must be positive");
}

ComplianceLocation location_from_string(const std::string& s) {
    if (s == "LV" || s == "lv") return ComplianceLocation::lv;
    if (s == "MV" || s == "mv") return ComplianceLocation::mv;
    if (s == "HV" || s == "hv") return ComplianceLocation::hv;
    throw ValidationError("unknown compliance location '" + s + "' (expected LV, MV or HV)");
}

const char* to_string(ComplianceLocation loc) {
    switch (loc) {
        case ComplianceLocation::lv: return "LV";
        case ComplianceLocation::mv: return "MV";
        case ComplianceLocation::hv: return "HV";
    }
    return "?";
}

const ComplianceRow& ComplianceTable::row(ComplianceLocation loc) const {
    switch (loc) {
        case ComplianceLocation::lv: return lv;
        case ComplianceLocation::mv: return mv;
        case ComplianceLocation::hv: return hv;
    }
    throw ValidationError("unknown compliance location");
}

void ComplianceTable::validate() const {
    for (const ComplianceRow* r : {&lv, &mv, &hv})
        if (!(r->x_min < r->x_default && r->x_default < r->x_max))
            throw ValidationError("compliance table rows must satisfy x_min < x_default < x_max");
    if (!(r_over_x > 0.0)) throw ValidationError("compliance table: r_over_x must be positive");
}

double objective(double r_th, double l_th, const AdmittanceSpectrum& spec) {
    if (r_th < 0.0 || !(l_th > 0.0))
        throw ValidationError("objective: need r_th >= 0 and l_th > 0");
    if (!spec.entry_measured_everywhere(YEntry::qd))
        throw ValidationError("objective: y_qd is not measured at every point");
    const double f1 = spec.base().f1;
    double acc = 0.0;
    for (const auto& p : spec.points()) {
        const double meas = std::abs(*p.y_qd);
        if (meas == 0.0)
            throw ValidationError("objective: zero |y_qd| at " + std::to_string(p.f_hz) + " Hz");
        const double model = std::abs(thevenin_yqd(r_th, l_th, f1, p.f_hz));
        const double rel = (model - meas) / meas;
        acc += rel * rel / (2.0 * kPi * p.f_hz);
    }
    return std::sqrt(acc);
}

namespace {

struct Candidate {
    double r = 0.0, l = 0.0, j = 0.0;
};

// Nelder-Mead on the box-projected 2-D objective. Runs until the simplex
// diameter drops below tol or the evaluation budget is spent.
Candidate nelder_mead(const AdmittanceSpectrum& spec, const FitConfig& cfg, double r0, double l0,
                      double size_r, double size_l, double tol, int max_iter) {
    auto clamp = [&](double r, double l) {
        return std::array<double, 2>{std::clamp(r, cfg.r_min, cfg.r_max),
                                     std::clamp(l, cfg.l_min, cfg.l_max)};
    };
    auto eval = [&](const std::array<double, 2>& p) { return objective(p[0], p[1], spec); };

    std::array<std::array<double, 2>, 3> v = {clamp(r0, l0), clamp(r0 + size_r, l0),
                                              clamp(r0, l0 + size_l)};
    // Degenerate start (clamping collapsed a vertex): nudge inward.
    if (v[1] == v[0]) v[1] = clamp(r0 - size_r, l0);
    if (v[2] == v[0]) v[2] = clamp(r0, l0 - size_l);
    std::array<double, 3> f = {eval(v[0]), eval(v[1]), eval(v[2])};

    for (int it = 0; it < max_iter; ++it) {
        // order: f[i0] <= f[i1] <= f[i2]
        std::array<int, 3> idx = {0, 1, 2};
        std::sort(idx.begin(), idx.end(), [&](int a, int b) { return f[a] < f[b]; });
        const int i0 = idx[0], i1 = idx[1], i2 = idx[2];

        const double diam = std::max(
            {std::hypot(v[0][0] - v[1][0], v[0][1] - v[1][1]),
             std::hypot(v[0][0] - v[2][0], v[0][1] - v[2][1]),
             std::hypot(v[1][0] - v[2][0], v[1][1] - v[2][1])});
        if (diam < tol) break;

        const std::array<double, 2> cen = {(v[i0][0] + v[i1][0]) / 2.0,
                                           (v[i0][1] + v[i1][1]) / 2.0};
        auto refl = clamp(cen[0] + (cen[0] - v[i2][0]), cen[1] + (cen[1] - v[i2][1]));
        const double fr = eval(refl);
        if (fr < f[i0]) {
            auto exp_ = clamp(cen[0] + 2.0 * (cen[0] - v[i2][0]), cen[1] + 2.0 * (cen[1] - v[i2][1]));
            const double fe = eval(exp_);
            if (fe < fr) {
                v[i2] = exp_;
                f[i2] = fe;
            } else {
                v[i2] = refl;
                f[i2] = fr;
            }
        } else if (fr < f[i1]) {
            v[i2] = refl;
            f[i2] = fr;
        } else {
            auto con = clamp(cen[0] + 0.5 * (v[i2][0] - cen[0]), cen[1] + 0.5 * (v[i2][1] - cen[1]));
            const double fc = eval(con);
            if (fc < f[i2]) {
                v[i2] = con;
                f[i2] = fc;
            } else {
                for (int k : {i1, i2}) {
                    v[k] = clamp(v[i0][0] + 0.5 * (v[k][0] - v[i0][0]),
                                 v[i0][1] + 0.5 * (v[k][1] - v[i0][1]));
                    f[k] = eval(v[k]);
                }
            }
        }
    }
    int best = 0;
    for (int k = 1; k < 3; ++k)
        if (f[k] < f[best]) best = k;
    return {v[best][0], v[best][1], f[best]};
}

Candidate polish(const AdmittanceSpectrum& spec, const FitConfig& cfg, Candidate c) {
    // Restart ladder: re-run from the incumbent with shrinking simplexes so
    // the final diameter lands well below param_tol.
    const double span_r = cfg.r_max - cfg.r_min;
    const double span_l = cfg.l_max - cfg.l_min;
    for (double scale : {1.0e-3, 1.0e-6}) {
        const double tol = std::max(1.0e-13, 0.01 * cfg.param_tol);
        c = nelder_mead(spec, cfg, c.r, c.l, scale * span_r, scale * span_l, tol, 400);
    }
    return c;
}

}  // namespace

TheveninEquivalent fit(const AdmittanceSpectrum& spec, const FitConfig& cfg) {
    cfg.validate();
    if (!spec.entry_measured_everywhere(YEntry::qd))
        throw ValidationError("fit: y_qd must be measured at every spectrum point");

    // Log-spaced multistart grid over the bounds.
    std::vector<std::array<double, 2>> starts;
    const int n = cfg.multistart_grid;
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            const double fr = n == 1 ? 0.5 : (a + 0.5) / n;
            const double fl = n == 1 ? 0.5 : (b + 0.5) / n;
            starts.push_back({cfg.r_min * std::pow(cfg.r_max / cfg.r_min, fr),
                              cfg.l_min * std::pow(cfg.l_max / cfg.l_min, fl)});
        }

    std::vector<Candidate> results(starts.size());
    auto run_start = [&](std::size_t i) {
        Candidate c = nelder_mead(spec, cfg, starts[i][0], starts[i][1],
                                  0.2 * (cfg.r_max - cfg.r_min), 0.2 * (cfg.l_max - cfg.l_min),
                                  std::max(1.0e-13, 0.01 * cfg.param_tol), 600);
        results[i] = polish(spec, cfg, c);
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (hw > 1 && starts.size() > 1) {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const unsigned workers = std::min<unsigned>(hw, static_cast<unsigned>(starts.size()));
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&]() {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= results.size()) return;
                    run_start(i);
                }
            });
        for (auto& th : pool) th.join();
    } else {
        for (std::size_t i = 0; i < results.size(); ++i) run_start(i);
    }

    const Candidate* best = &results[0];
    for (const Candidate& c : results)
        if (std::tie(c.j, c.r, c.l) < std::tie(best->j, best->r, best->l)) best = &c;

    TheveninEquivalent eq;
    eq.r_eff = best->r;
    eq.l_eff = best->l;
    eq.rms_error = best->j;

    const double edge = std::max(10.0 * cfg.param_tol, 1.0e-7);
    eq.boundary_solution = best->r <= cfg.r_min + edge || best->r >= cfg.r_max - edge ||
                           best->l <= cfg.l_min + edge || best->l >= cfg.l_max - edge;

    if (spec.size() >= 3) {
        const ResonancePeak peak = spectrum_resonance(spec, YEntry::qd);
        eq.resonance_hz = peak.f_hz;
        eq.resonance_refined = peak.refined;
    }
    return eq;
}

ComplianceReport check_compliance(const TheveninEquivalent& fitted, ComplianceLocation location,
                                  const ComplianceTable& table, double eps) {
    table.validate();
    if (!(eps > 0.0)) throw ValidationError("check_compliance: eps must be positive");
    const ComplianceRow& row = table.row(location);
    ComplianceReport rep;
    rep.fitted = fitted;
    rep.location = location;
    rep.eps = eps;
    rep.in_range = fitted.x_eff_at_f1() >= row.x_min && fitted.x_eff_at_f1() <= row.x_max;
    rep.eps_satisfied = fitted.rms_error <= eps;
    return rep;
}

std::string ComplianceReport::to_json() const {
    nlohmann::ordered_json j;
    j["r_eff"] = fitted.r_eff;
    j["l_eff"] = fitted.l_eff;
    j["x_eff"] = fitted.x_eff_at_f1();
    j["x_over_r"] = fitted.x_over_r();
    j["rms_error"] = fitted.rms_error;
    j["resonance_hz"] = fitted.resonance_hz;
    j["location"] = to_string(location);
    j["in_range"] = in_range;
    j["eps"] = eps;
    j["eps_satisfied"] = eps_satisfied;
    j["pass"] = pass();
    if (fitted.boundary_solution) j["boundary_solution"] = true;
    return j.dump(2) + "\n";
}

}  // namespace gfmeq
