#include "gfmeq/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace gfmeq {

namespace {

inline Complex cx(const double* p) { return {p[0], p[1]}; }
inline void put(double* p, Complex v) {
    p[0] = v.real();
    p[1] = v.imag();
}
inline Complex jmul(double w, Complex z) { return {-w * z.imag(), w * z.real()}; }

// GFM state indices. theta exists only in grid-connected mode; the islanded
// frame is the control frame itself.
struct GfmIdx {
    int pf, qf, theta, xi, gam, i_f, v_c, i_g, vl;
    int dim;
};

GfmIdx gfm_layout(bool islanded) {
    GfmIdx k{};
    int n = 0;
    k.pf = n++;
    k.qf = n++;
    k.theta = islanded ? -1 : n++;
    k.xi = n;
    n += 2;
    k.gam = n;
    n += 2;
    k.i_f = n;
    n += 2;
    k.v_c = n;
    n += 2;
    k.i_g = n;
    n += 2;
    k.vl = islanded ? n : -1;
    if (islanded) n += 2;
    k.dim = n;
    return k;
}

constexpr double kDivergenceLimit = 100.0;  // pu
constexpr double kMinLoadCurrent = 1.0e-9;

GfmPlantModel effective_gfm_params(const GfmPlantModel& params, IdealisticMode mode,
                                   const PerUnitBase& base) {
    GfmPlantModel g = params;
    if (mode.enabled) {
        g.droop_mp = 0.0;
        g.droop_mq = 0.0;
        g.kpv *= mode.gain_boost;
        g.kiv *= mode.gain_boost;
        g.virtual_z = RlImpedance(0.0, 0.0);
    }
    if (g.kpc == 0.0 && g.kic == 0.0) g = g.with_current_loop_bandwidth(300.0, base);
    g.validate();
    if (!(g.kic > 0.0))
        throw ValidationError("droop_gfm: kic must be positive (filter_r = 0 with auto-tuning?)");
    return g;
}

// Damped Newton on a 2-unknown residual, finite-difference Jacobian.
bool newton2(const std::function<void(const double*, double*)>& f, double* x, int max_iter,
             double tol) {
    double r[2], rt[2], xt[2], j[4];
    f(x, r);
    double best = std::max(std::abs(r[0]), std::abs(r[1]));
    for (int it = 0; it < max_iter; ++it) {
        if (best < tol) return true;
        for (int c = 0; c < 2; ++c) {
            const double h = 1.0e-7 * std::max(1.0, std::abs(x[c]));
            xt[0] = x[0];
            xt[1] = x[1];
            xt[c] += h;
            f(xt, rt);
            j[0 * 2 + c] = (rt[0] - r[0]) / h;
            j[1 * 2 + c] = (rt[1] - r[1]) / h;
        }
        const double det = j[0] * j[3] - j[1] * j[2];
        if (!std::isfinite(det) || std::abs(det) < 1.0e-300) return false;
        const double dx0 = (-r[0] * j[3] + r[1] * j[1]) / det;
        const double dx1 = (-r[1] * j[0] + r[0] * j[2]) / det;
        double lam = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            xt[0] = x[0] + lam * dx0;
            xt[1] = x[1] + lam * dx1;
            f(xt, rt);
            const double nrm = std::max(std::abs(rt[0]), std::abs(rt[1]));
            if (std::isfinite(nrm) && nrm < best) {
                x[0] = xt[0];
                x[1] = xt[1];
                r[0] = rt[0];
                r[1] = rt[1];
                best = nrm;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if (!accepted) return best < tol;
    }
    return best < tol;
}

}  // namespace

void GfmPlantModel::validate() const {
    if (!(filter_l > 0.0)) throw ValidationError("GfmPlantModel: filter_l must be positive");
    if (!(filter_c > 0.0)) throw ValidationError("GfmPlantModel: filter_c must be positive");
    if (filter_r < 0.0) throw ValidationError("GfmPlantModel: filter_r must be non-negative");
    if (droop_mp < 0.0 || droop_mq < 0.0)
        throw ValidationError("GfmPlantModel: droop gains must be non-negative");
    if (kpv < 0.0 || kiv <= 0.0 || kpc < 0.0 || kic < 0.0)
        throw ValidationError("GfmPlantModel: control gains must be non-negative (kiv > 0)");
    if (!(power_filter_cutoff > 0.0))
        throw ValidationError("GfmPlantModel: power_filter_cutoff must be positive");
    if (!(voltage_loop_scale > 0.0))
        throw ValidationError("GfmPlantModel: voltage_loop_scale must be positive");
    if (!(v_ref > 0.0)) throw ValidationError("GfmPlantModel: v_ref must be positive");
}

GfmPlantModel default_study_gfm() {
    GfmPlantModel g;
    g.filter_r = 0.003;
    g.filter_l = 0.15;
    g.filter_c = 0.05;
    g.z_coupling_plus_grid = RlImpedance(0.03, 0.30);
    g.droop_mp = 0.02;
    g.droop_mq = 0.03;
    g.kpv = 2.60;
    g.kiv = 5.80;
    g.power_filter_cutoff = 2.0 * kPi * 10.0;
    g.virtual_z = RlImpedance(0.012, 0.12);
    g.voltage_loop_scale = 20.0;
    g.v_ref = 1.0;
    return g;
}

GfmPlantModel GfmPlantModel::with_current_loop_bandwidth(double hz, const PerUnitBase& base) const {
    if (!(hz > 0.0)) throw ValidationError("current loop bandwidth must be positive");
    GfmPlantModel out = *this;
    const double wbw = 2.0 * kPi * hz;
    out.kpc = wbw * filter_l / base.omega1;
    out.kic = wbw * filter_r;
    return out;
}

void SimConfig::validate() const {
    if (!(dt > 0.0) || dt > 1.0e-4)
        throw ValidationError("SimConfig: dt must be in (0, 100 us]");
    if (!(t_end > 0.0)) throw ValidationError("SimConfig: t_end must be positive");
    if (record_decimation < 1)
        throw ValidationError("SimConfig: record_decimation must be >= 1");
}

DisturbanceEvent::DisturbanceEvent(double t_, double dv_, double dd) : t(t_), dv(dv_), ddelta(dd) {
    if (t < 0.0) throw ValidationError("DisturbanceEvent: t must be non-negative");
}

const ChannelBlock& TimeSeries::at(MeasPoint pt) const {
    switch (pt) {
        case MeasPoint::st: return st;
        case MeasPoint::vcp: return vcp;
        case MeasPoint::poi: return poi;
    }
    return poi;
}

std::string TimeSeries::to_csv() const {
    std::ostringstream out;
    out << "t,point,v_d,v_q,i_d,i_q,p,q\n";
    char buf[256];
    auto block = [&](const char* name, const ChannelBlock& b) {
        for (std::size_t n = 0; n < t.size(); ++n) {
            std::snprintf(buf, sizeof buf,
                          "%.17g,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", t[n], name,
                          b.v[n].d, b.v[n].q, b.i[n].d, b.i[n].q, b.p[n], b.q[n]);
            out << buf;
        }
    };
    block("ST", st);
    block("VCP", vcp);
    block("POI", poi);
    return out.str();
}

TimeSeries TimeSeries::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("t,point,", 0) != 0)
        throw ValidationError("time-series CSV: unexpected header");
    TimeSeries ts;
    bool t_done = false;
    std::size_t row_in_block = 0;
    std::string cur_point;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 8) throw ValidationError("time-series CSV: expected 8 cells per row");
        const std::string& pt = cells[1];
        if (pt != cur_point) {
            cur_point = pt;
            if (!ts.t.empty()) t_done = true;
            row_in_block = 0;
        }
        ChannelBlock* b = nullptr;
        if (pt == "ST")
            b = &ts.st;
        else if (pt == "VCP")
            b = &ts.vcp;
        else if (pt == "POI")
            b = &ts.poi;
        else
            throw ValidationError("time-series CSV: unknown point '" + pt + "'");
        const double tv = std::stod(cells[0]);
        if (!t_done)
            ts.t.push_back(tv);
        else if (row_in_block >= ts.t.size() || ts.t[row_in_block] != tv)
            throw ValidationError("time-series CSV: time grids differ between blocks");
        b->v.push_back({std::stod(cells[2]), std::stod(cells[3])});
        b->i.push_back({std::stod(cells[4]), std::stod(cells[5])});
        b->p.push_back(std::stod(cells[6]));
        b->q.push_back(std::stod(cells[7]));
        ++row_in_block;
    }
    if (ts.t.empty()) throw ValidationError("time-series CSV: no data rows");
    return ts;
}

Complex SourceSchedule::value(double t) const {
    Complex v = std::polar(base.v, base.delta);
    if (inj.active && t >= inj.t_start) {
        const double p = inj.amplitude * std::cos(2.0 * kPi * inj.f_hz * (t - inj.t_start));
        if (inj.axis == Injection::Axis::d)
            v += Complex(p, 0.0);
        else
            v += Complex(0.0, p);
    }
    return v;
}

// ---------------------------------------------------------------------------
// SimModel
// ---------------------------------------------------------------------------

std::size_t SimModel::state_dim() const {
    if (kind_ == DeviceKind::droop_gfm) return gfm_layout(islanded_).dim;
    return islanded_ ? 4 : 2;
}

SimModel SimModel::idvs(const IdvsConfig& cfg, GridSource src) {
    if (cfg.z.is_zero()) throw ValidationError("idvs: singular impedance");
    SimModel m;
    m.kind_ = DeviceKind::idvs;
    m.base_ = cfg.base;
    m.idvs_ = cfg;
    m.src_ = src;
    m.init_idvs_equilibrium();
    return m;
}

SimModel SimModel::idvs_at_poi_op(const RlImpedance& z, const PerUnitBase& base, double p_poi,
                                  double q_poi, double v_poi) {
    // Choose E and the source angle so the POI carries (p, q) at magnitude
    // v_poi with E real, matching the internal-angle-zero convention.
    const Complex vg(v_poi, 0.0);
    const Complex i = std::conj(Complex(p_poi, q_poi) / vg);
    const Complex e = vg + z.as_complex() * i;
    IdvsConfig cfg(std::abs(e), z, base);
    GridSource src{v_poi, -std::arg(e)};
    return idvs(cfg, src);
}

SimModel SimModel::idvs_islanded(const IdvsConfig& cfg, CplLoad load) {
    if (cfg.z.is_zero()) throw ValidationError("idvs_islanded: singular impedance");
    SimModel m;
    m.kind_ = DeviceKind::idvs;
    m.islanded_ = true;
    m.base_ = cfg.base;
    m.idvs_ = cfg;
    m.load_ = load;
    m.init_islanded_equilibrium();
    return m;
}

SimModel SimModel::classical_machine(double e, double r_a, double x_dpp, const PerUnitBase& base,
                                     GridSource src) {
    if (!(x_dpp > 0.0)) throw ValidationError("classical_machine: x_dpp must be positive");
    SimModel m = idvs(IdvsConfig(e, RlImpedance(r_a, x_dpp), base), src);
    m.kind_ = DeviceKind::classical_machine;
    return m;
}

SimModel SimModel::droop_gfm(const GfmPlantModel& params, IdealisticMode mode, GridSource src) {
    SimModel m;
    m.kind_ = DeviceKind::droop_gfm;
    m.base_ = PerUnitBase();
    m.mode_ = mode;
    m.gfm_ = effective_gfm_params(params, mode, m.base_);
    m.src_ = src;
    m.init_gfm_equilibrium_from_refs();
    return m;
}

SimModel SimModel::droop_gfm_at_poi_op(GfmPlantModel params, IdealisticMode mode, double p_poi,
                                       double q_poi, double v_poi) {
    SimModel m;
    m.kind_ = DeviceKind::droop_gfm;
    m.base_ = PerUnitBase();
    m.mode_ = mode;
    m.gfm_ = effective_gfm_params(params, mode, m.base_);
    m.src_ = GridSource{v_poi, 0.0};
    m.init_gfm_equilibrium_at_op(p_poi, q_poi, v_poi);
    return m;
}

SimModel SimModel::droop_gfm_islanded(const GfmPlantModel& params, IdealisticMode mode,
                                      CplLoad load) {
    SimModel m;
    m.kind_ = DeviceKind::droop_gfm;
    m.islanded_ = true;
    m.base_ = PerUnitBase();
    m.mode_ = mode;
    m.gfm_ = effective_gfm_params(params, mode, m.base_);
    m.load_ = load;
    m.init_islanded_equilibrium();
    return m;
}

SimModel reload_islanded(const SimModel& proto, CplLoad load, const std::vector<double>* warm) {
    if (!proto.islanded()) throw ValidationError("reload_islanded: model is not islanded");
    SimModel m = proto;
    m.load_ = load;
    m.init_islanded_equilibrium(warm);
    return m;
}

void SimModel::init_idvs_equilibrium() {
    const Complex e(idvs_.v_id, 0.0);
    const Complex vg = std::polar(src_.v, src_.delta);
    const Complex i = (e - vg) / idvs_.z.as_complex();
    x0_.assign(2, 0.0);
    put(x0_.data(), i);
}

namespace {

struct GfmSteady {
    Complex ig, vc, i_f, v_poi;
    double theta = 0.0, w_star = 1.0, v_star = 1.0;
    double p_vcp = 0.0, q_vcp = 0.0;
};

}  // namespace

// Shared assembly of the full state vector from a solved operating point.
static std::vector<double> assemble_gfm_state(const GfmPlantModel& g, bool islanded,
                                              const GfmSteady& s) {
    const GfmIdx k = gfm_layout(islanded);
    std::vector<double> x(static_cast<std::size_t>(k.dim), 0.0);
    const Complex rot = std::polar(1.0, -s.theta);
    const Complex vc_c = s.vc * rot;
    const Complex ig_c = s.ig * rot;
    const Complex if_c = s.i_f * rot;

    x[k.pf] = s.p_vcp;
    x[k.qf] = s.q_vcp;
    if (!islanded) x[k.theta] = s.theta;

    const double kiv_eff = g.voltage_loop_scale * g.kiv;
    const Complex istar_rest = jmul(s.w_star * g.filter_c, vc_c) + g.current_ff_gain * ig_c;
    put(&x[k.xi], (if_c - istar_rest) / kiv_eff);

    const Complex vst_c = vc_c + Complex(g.filter_r, 0.0) * if_c + jmul(s.w_star * g.filter_l, if_c);
    put(&x[k.gam], (vst_c - vc_c - jmul(s.w_star * g.filter_l, if_c)) / g.kic);

    put(&x[k.i_f], s.i_f);
    put(&x[k.v_c], s.vc);
    put(&x[k.i_g], s.ig);
    if (islanded) put(&x[k.vl], s.v_poi);
    return x;
}

void SimModel::init_gfm_equilibrium_at_op(double p_poi, double q_poi, double v_poi) {
    if (!(v_poi > 0.0)) throw ValidationError("droop_gfm_at_poi_op: v_poi must be positive");
    GfmSteady s;
    const Complex vg(v_poi, 0.0);
    const Complex z_br =
        gfm_.z_coupling_plus_grid.as_complex() + gfm_.virtual_z.as_complex();
    s.ig = std::conj(Complex(p_poi, q_poi) / vg);
    s.vc = vg + z_br * s.ig;
    s.i_f = s.ig + jmul(gfm_.filter_c, s.vc);
    s.p_vcp = (s.vc * std::conj(s.ig)).real();
    s.q_vcp = (s.vc * std::conj(s.ig)).imag();
    s.theta = std::arg(s.vc);
    s.v_star = std::abs(s.vc);
    s.w_star = 1.0;
    s.v_poi = vg;

    // Reference values that hold this operating point exactly.
    gfm_.p_ref = s.p_vcp;
    gfm_.q_ref = s.q_vcp;
    gfm_.v_ref = s.v_star;

    x0_ = assemble_gfm_state(gfm_, false, s);
    const double res = scaled_residual(x0_.data(), vg);
    if (res > 1.0e-9)
        throw NumericalError("droop_gfm equilibrium: residual " + std::to_string(res) +
                             " above tolerance");
}

void SimModel::init_gfm_equilibrium_from_refs() {
    const Complex vg = std::polar(src_.v, src_.delta);
    const Complex z_br =
        gfm_.z_coupling_plus_grid.as_complex() + gfm_.virtual_z.as_complex();

    GfmSteady s;
    if (gfm_.droop_mp == 0.0 && gfm_.droop_mq == 0.0) {
        // Droop disabled: internal angle is a free constant, fixed at zero.
        s.theta = 0.0;
        s.v_star = gfm_.v_ref;
        s.vc = Complex(gfm_.v_ref, 0.0);
        s.ig = (s.vc - vg) / z_br;
    } else {
        // Newton on ig: droop steady state pins p_vcp = p_ref (mp > 0) and
        // the voltage loop pins |vc| = v_ref + mq (q_ref - q_vcp).
        double u[2] = {gfm_.p_ref, -gfm_.q_ref};  // flat-ish start
        auto resid = [&](const double* uu, double* rr) {
            const Complex ig(uu[0], uu[1]);
            const Complex vc = vg + z_br * ig;
            const double p = (vc * std::conj(ig)).real();
            const double q = (vc * std::conj(ig)).imag();
            const double v_star = gfm_.v_ref + gfm_.droop_mq * (gfm_.q_ref - q);
            if (gfm_.droop_mp > 0.0) {
                rr[0] = p - gfm_.p_ref;
                rr[1] = std::abs(vc) - v_star;
            } else {
                rr[0] = vc.imag();
                rr[1] = vc.real() - v_star;
            }
        };
        if (!newton2(resid, u, 200, 1.0e-12))
            throw NumericalError("droop_gfm equilibrium: power-flow Newton did not converge");
        s.ig = Complex(u[0], u[1]);
        s.vc = vg + z_br * s.ig;
        s.theta = std::arg(s.vc);
        s.v_star = std::abs(s.vc);
    }
    s.i_f = s.ig + jmul(gfm_.filter_c, s.vc);
    s.p_vcp = (s.vc * std::conj(s.ig)).real();
    s.q_vcp = (s.vc * std::conj(s.ig)).imag();
    s.w_star = 1.0;
    s.v_poi = vg;
    x0_ = assemble_gfm_state(gfm_, false, s);

    const double res = scaled_residual(x0_.data(), vg);
    if (res > 1.0e-9)
        throw NumericalError("droop_gfm equilibrium: residual " + std::to_string(res) +
                             " above tolerance");
}

void SimModel::init_islanded_equilibrium(const std::vector<double>* warm) {
    const Complex s_load(load_.p, load_.q);

    if (kind_ != DeviceKind::droop_gfm) {
        const Complex e(idvs_.v_id, 0.0);
        const Complex z = idvs_.z.as_complex();
        double u[2];
        if (warm && warm->size() == 4) {
            u[0] = (*warm)[0];
            u[1] = (*warm)[1];
        } else {
            const Complex i0 = std::conj(s_load / e);
            u[0] = i0.real();
            u[1] = i0.imag();
        }
        auto resid = [&](const double* uu, double* rr) {
            const Complex i(uu[0], uu[1]);
            const Complex v = e - z * i;
            const Complex s = v * std::conj(i);
            rr[0] = s.real() - s_load.real();
            rr[1] = s.imag() - s_load.imag();
        };
        if (!newton2(resid, u, 200, 1.0e-11))
            throw NumericalError("islanded equilibrium: load-flow Newton did not converge");
        const Complex i(u[0], u[1]);
        x0_.assign(4, 0.0);
        put(x0_.data(), i);
        put(x0_.data() + 2, e - z * i);
        return;
    }

    const GfmIdx k = gfm_layout(true);
    const double A = gfm_.v_ref + gfm_.droop_mq * gfm_.q_ref;
    const double r_br = gfm_.z_coupling_plus_grid.r + gfm_.virtual_z.r;
    const double l_br = gfm_.z_coupling_plus_grid.l + gfm_.virtual_z.l;

    auto point = [&](const double* uu) {
        GfmSteady s;
        const Complex ig(uu[0], uu[1]);
        // q_vcp enters v_star linearly; with the capacitor voltage on the
        // real axis, q_vcp = -(A - mq q_vcp) ig.q exactly.
        const double q_vcp = -A * ig.imag() / (1.0 - gfm_.droop_mq * ig.imag());
        s.q_vcp = q_vcp;
        s.v_star = A - gfm_.droop_mq * q_vcp;
        s.vc = Complex(s.v_star, 0.0);
        s.ig = ig;
        s.p_vcp = (s.vc * std::conj(ig)).real();
        s.w_star = 1.0 + gfm_.droop_mp * (gfm_.p_ref - s.p_vcp);
        const Complex z_br_w(r_br, s.w_star * l_br);
        s.v_poi = s.vc - z_br_w * ig;
        s.theta = 0.0;
        s.i_f = ig + jmul(s.w_star * gfm_.filter_c, s.vc);
        return s;
    };

    double u[2];
    if (warm && warm->size() == static_cast<std::size_t>(k.dim)) {
        u[0] = (*warm)[k.i_g];
        u[1] = (*warm)[k.i_g + 1];
    } else {
        const Complex i0 = std::conj(s_load / Complex(1.0, 0.0));
        u[0] = i0.real();
        u[1] = i0.imag();
    }
    auto resid = [&](const double* uu, double* rr) {
        const GfmSteady s = point(uu);
        const Complex sv = s.v_poi * std::conj(s.ig);
        rr[0] = sv.real() - s_load.real();
        rr[1] = sv.imag() - s_load.imag();
    };
    if (!newton2(resid, u, 300, 1.0e-11))
        throw NumericalError("islanded equilibrium: load-flow Newton did not converge");

    GfmSteady s = point(u);
    x0_ = assemble_gfm_state(gfm_, true, s);
    x0_[k.pf] = s.p_vcp;
    x0_[k.qf] = s.q_vcp;

    const double res = scaled_residual(x0_.data(), Complex(0.0, 0.0));
    if (res > 1.0e-7)
        throw NumericalError("islanded equilibrium: residual " + std::to_string(res) +
                             " above tolerance");
}

void SimModel::derivatives(double t, const double* x, Complex v_src, double* dx) const {
    (void)t;
    const double wb = base_.omega1;

    if (kind_ != DeviceKind::droop_gfm) {
        const Complex e(idvs_.v_id, 0.0);
        const Complex i = cx(x);
        const double r = idvs_.z.r, l = idvs_.z.l;
        Complex v_poi;
        if (islanded_) {
            const Complex vl = cx(x + 2);
            v_poi = vl;
            const double imag2 = std::norm(i);
            if (imag2 < kMinLoadCurrent * kMinLoadCurrent)
                throw NumericalError("constant-power load: current collapsed to zero");
            const Complex v_cmd = Complex(load_.p, load_.q) / std::conj(i);
            put(dx + 2, (v_cmd - vl) / load_.tau_s);
        } else {
            v_poi = v_src;
        }
        const Complex di = (wb / l) * (e - v_poi - r * i) - jmul(wb, i);
        put(dx, di);
        return;
    }

    const GfmIdx k = gfm_layout(islanded_);
    const GfmPlantModel& g = gfm_;

    const Complex i_f = cx(x + k.i_f);
    const Complex vc = cx(x + k.v_c);
    const Complex ig = cx(x + k.i_g);
    const double p_f = x[k.pf];
    const double q_f = x[k.qf];

    const Complex s_vcp = vc * std::conj(ig);
    dx[k.pf] = g.power_filter_cutoff * (s_vcp.real() - p_f);
    dx[k.qf] = g.power_filter_cutoff * (s_vcp.imag() - q_f);

    const double w_star = 1.0 + g.droop_mp * (g.p_ref - p_f);
    const double v_star = g.v_ref + g.droop_mq * (g.q_ref - q_f);

    double theta = 0.0;
    if (!islanded_) {
        theta = x[k.theta];
        dx[k.theta] = wb * (w_star - 1.0);
    }
    const Complex rot = std::polar(1.0, -theta);
    const Complex vc_c = vc * rot;
    const Complex ig_c = ig * rot;
    const Complex if_c = i_f * rot;

    const Complex e_v = Complex(v_star, 0.0) - vc_c;
    put(dx + k.xi, e_v);

    const double sv = g.voltage_loop_scale;
    const Complex xi = cx(x + k.xi);
    const Complex istar = sv * g.kpv * e_v + sv * g.kiv * xi +
                          jmul(w_star * g.filter_c, vc_c) + g.current_ff_gain * ig_c;

    const Complex e_i = istar - if_c;
    put(dx + k.gam, e_i);
    const Complex gam = cx(x + k.gam);
    const Complex vst_c = g.kpc * e_i + g.kic * gam + jmul(w_star * g.filter_l, if_c) + vc_c;
    const Complex vst = vst_c * std::conj(rot);

    // Electrical network in the integration frame. Grid-connected: frame at
    // nominal speed. Islanded: the control frame itself, speed w_star.
    const double w_frame = islanded_ ? w_star : 1.0;
    Complex v_poi;
    if (islanded_) {
        const Complex vl = cx(x + k.vl);
        v_poi = vl;
        const double imag2 = std::norm(ig);
        if (imag2 < kMinLoadCurrent * kMinLoadCurrent)
            throw NumericalError("constant-power load: current collapsed to zero");
        const Complex v_cmd = Complex(load_.p, load_.q) / std::conj(ig);
        put(dx + k.vl, (v_cmd - vl) / load_.tau_s);
    } else {
        v_poi = v_src;
    }

    // The virtual R-L acts as an exact series extension of the VCP -> POI
    // branch: true inductor dynamics without a derivative estimate.
    const double r_br = g.z_coupling_plus_grid.r + g.virtual_z.r;
    const double l_br = g.z_coupling_plus_grid.l + g.virtual_z.l;
    const Complex dif = (wb / g.filter_l) * (vst - vc - g.filter_r * i_f) - jmul(wb * w_frame, i_f);
    const Complex dvc = (wb / g.filter_c) * (i_f - ig) - jmul(wb * w_frame, vc);
    const Complex dig = (wb / l_br) * (vc - v_poi - r_br * ig) - jmul(wb * w_frame, ig);
    put(dx + k.i_f, dif);
    put(dx + k.v_c, dvc);
    put(dx + k.i_g, dig);
}

ModelOutputs SimModel::outputs(const double* x, Complex v_src) const {
    ModelOutputs o;
    if (kind_ != DeviceKind::droop_gfm) {
        const Complex i = cx(x);
        const Complex e(idvs_.v_id, 0.0);
        const Complex v_poi = islanded_ ? cx(x + 2) : v_src;
        o.st.v = DqPhasor(e);
        o.st.i = DqPhasor(i);
        o.vcp = o.st;
        o.poi.v = DqPhasor(v_poi);
        o.poi.i = DqPhasor(i);
    } else {
        const GfmIdx k = gfm_layout(islanded_);
        const double p_f = x[k.pf], q_f = x[k.qf];
        const double w_star = 1.0 + gfm_.droop_mp * (gfm_.p_ref - p_f);
        const double v_star = gfm_.v_ref + gfm_.droop_mq * (gfm_.q_ref - q_f);
        const double theta = islanded_ ? 0.0 : x[k.theta];
        const Complex rot = std::polar(1.0, -theta);
        const Complex vc = cx(x + k.v_c);
        const Complex ig = cx(x + k.i_g);
        const Complex i_f = cx(x + k.i_f);
        const Complex vc_c = vc * rot, ig_c = ig * rot, if_c = i_f * rot;
        const Complex e_v = Complex(v_star, 0.0) - vc_c;
        const double sv = gfm_.voltage_loop_scale;
        const Complex istar = sv * gfm_.kpv * e_v + sv * gfm_.kiv * cx(x + k.xi) +
                              jmul(w_star * gfm_.filter_c, vc_c) + gfm_.current_ff_gain * ig_c;
        const Complex e_i = istar - if_c;
        const Complex vst_c = gfm_.kpc * e_i + gfm_.kic * cx(x + k.gam) +
                              jmul(w_star * gfm_.filter_l, if_c) + vc_c;
        const Complex vst = vst_c * std::conj(rot);
        const Complex v_poi = islanded_ ? cx(x + k.vl) : v_src;

        o.st.v = DqPhasor(vst);
        o.st.i = DqPhasor(i_f);
        o.vcp.v = DqPhasor(vc);
        o.vcp.i = DqPhasor(ig);
        o.poi.v = DqPhasor(v_poi);
        o.poi.i = DqPhasor(ig);
    }
    measure_pq(o.st.v, o.st.i, o.st.p, o.st.q);
    measure_pq(o.vcp.v, o.vcp.i, o.vcp.p, o.vcp.q);
    measure_pq(o.poi.v, o.poi.i, o.poi.p, o.poi.q);
    return o;
}

double SimModel::scaled_residual(const double* x, Complex v_src) const {
    std::vector<double> dx(state_dim());
    derivatives(0.0, x, v_src, dx.data());
    const double wb = base_.omega1;
    double worst = 0.0;
    auto upd = [&](double v, double scale) { worst = std::max(worst, std::abs(v) * scale); };

    if (kind_ != DeviceKind::droop_gfm) {
        const double sl = idvs_.z.l / wb;
        upd(dx[0], sl);
        upd(dx[1], sl);
        if (islanded_) {
            upd(dx[2], load_.tau_s);
            upd(dx[3], load_.tau_s);
        }
        return worst;
    }
    const GfmIdx k = gfm_layout(islanded_);
    upd(dx[k.pf], 1.0 / gfm_.power_filter_cutoff);
    upd(dx[k.qf], 1.0 / gfm_.power_filter_cutoff);
    if (!islanded_) upd(dx[k.theta], 1.0 / wb);
    upd(dx[k.xi], 1.0);
    upd(dx[k.xi + 1], 1.0);
    upd(dx[k.gam], 1.0);
    upd(dx[k.gam + 1], 1.0);
    upd(dx[k.i_f], gfm_.filter_l / wb);
    upd(dx[k.i_f + 1], gfm_.filter_l / wb);
    upd(dx[k.v_c], gfm_.filter_c / wb);
    upd(dx[k.v_c + 1], gfm_.filter_c / wb);
    upd(dx[k.i_g], (gfm_.z_coupling_plus_grid.l + gfm_.virtual_z.l) / wb);
    upd(dx[k.i_g + 1], (gfm_.z_coupling_plus_grid.l + gfm_.virtual_z.l) / wb);
    if (islanded_) {
        upd(dx[k.vl], load_.tau_s);
        upd(dx[k.vl + 1], load_.tau_s);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Stepper / simulate
// ---------------------------------------------------------------------------

Stepper::Stepper(const SimModel& model, const SimConfig& cfg) : model_(model), cfg_(cfg) {
    cfg_.validate();
    src_.base = model.grid_source();
    x_ = model.initial_state();
    const std::size_t n = model.state_dim();
    k1_.resize(n);
    k2_.resize(n);
    k3_.resize(n);
    k4_.resize(n);
    xw_.resize(n);
}

void Stepper::check_divergence() const {
    for (double v : x_)
        if (!std::isfinite(v) || std::abs(v) > kDivergenceLimit)
            throw NumericalError("simulation diverged (|state| > 100 pu) at t = " +
                                 std::to_string(t_));
}

ModelOutputs Stepper::outputs() const { return model_.outputs(x_.data(), src_.value(t_)); }

void Stepper::step() {
    const double dt = cfg_.dt;
    const std::size_t n = x_.size();
    const double t0 = t_;
    const double t1 = static_cast<double>(step_count_ + 1) * dt;

    if (cfg_.integrator == Integrator::rk4) {
        const Complex s0 = src_.value(t0);
        const Complex sh = src_.value(t0 + 0.5 * dt);
        const Complex s1 = src_.value(t1);
        model_.derivatives(t0, x_.data(), s0, k1_.data());
        for (std::size_t i = 0; i < n; ++i) xw_[i] = x_[i] + 0.5 * dt * k1_[i];
        model_.derivatives(t0 + 0.5 * dt, xw_.data(), sh, k2_.data());
        for (std::size_t i = 0; i < n; ++i) xw_[i] = x_[i] + 0.5 * dt * k2_[i];
        model_.derivatives(t0 + 0.5 * dt, xw_.data(), sh, k3_.data());
        for (std::size_t i = 0; i < n; ++i) xw_[i] = x_[i] + dt * k3_[i];
        model_.derivatives(t1, xw_.data(), s1, k4_.data());
        for (std::size_t i = 0; i < n; ++i)
            x_[i] += dt / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
    } else {
        // Implicit trapezoidal, solved by fixed-point iteration. The step is
        // short relative to every system time constant, so the iteration
        // contracts fast; the tight tolerance keeps results deterministic.
        const Complex s0 = src_.value(t0);
        const Complex s1 = src_.value(t1);
        model_.derivatives(t0, x_.data(), s0, k1_.data());
        for (std::size_t i = 0; i < n; ++i) xw_[i] = x_[i] + dt * k1_[i];
        for (int it = 0; it < 12; ++it) {
            model_.derivatives(t1, xw_.data(), s1, k2_.data());
            double delta = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double xn = x_[i] + 0.5 * dt * (k1_[i] + k2_[i]);
                delta = std::max(delta, std::abs(xn - xw_[i]));
                xw_[i] = xn;
            }
            if (delta < 1.0e-14) break;
        }
        x_.swap(xw_);
    }
    ++step_count_;
    t_ = t1;
    check_divergence();
}

TimeSeries simulate(const SimModel& model, const std::vector<DisturbanceEvent>& events,
                    const SimConfig& cfg) {
    cfg.validate();
    for (std::size_t i = 1; i < events.size(); ++i)
        if (events[i].t < events[i - 1].t)
            throw ValidationError("simulate: events must be sorted by time");

    Stepper st(model, cfg);
    const long n_steps = std::lround(cfg.t_end / cfg.dt);
    std::size_t next_event = 0;

    TimeSeries ts;
    auto record = [&]() {
        const ModelOutputs o = st.outputs();
        ts.t.push_back(st.time());
        for (auto [blk, po] : {std::pair<ChannelBlock*, const PointOutputs*>{&ts.st, &o.st},
                               {&ts.vcp, &o.vcp},
                               {&ts.poi, &o.poi}}) {
            blk->v.push_back(po->v);
            blk->i.push_back(po->i);
            blk->p.push_back(po->p);
            blk->q.push_back(po->q);
        }
    };

    for (long step = 0; step <= n_steps; ++step) {
        while (next_event < events.size() && events[next_event].t <= st.time() + 0.25 * cfg.dt) {
            st.source().base.v += events[next_event].dv;
            st.source().base.delta += events[next_event].ddelta;
            ++next_event;
        }
        if (step % cfg.record_decimation == 0) record();
        if (step < n_steps) st.step();
    }
    return ts;
}

}  // namespace gfmeq
