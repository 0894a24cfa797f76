#include "gfmeq/analytic.hpp"

#include <cmath>

namespace gfmeq {

VoltageStep::VoltageStep(double v1_, double d1, double v2_, double d2, double t)
    : v1(v1_), delta1(d1), v2(v2_), delta2(d2), t_step(t) {
    if (!(v1 > 0.0) || !(v2 > 0.0))
        throw ValidationError("VoltageStep: magnitudes must be positive");
}

IdvsConfig::IdvsConfig(double v, RlImpedance z_, PerUnitBase b)
    : v_id(v), z(z_), base(std::move(b)) {
    if (!(v_id > 0.0)) throw ValidationError("IdvsConfig: v_id must be positive");
}

Admittance2x2 idvs_admittance(const IdvsConfig& cfg, double f_hz) {
    if (f_hz < 0.0) throw ValidationError("idvs_admittance: f must be non-negative");
    const double r = cfg.z.r;
    const double l = cfg.z.l;
    if (cfg.z.is_zero()) throw ValidationError("idvs_admittance: singular impedance (r = l = 0)");
    // s L in pu is j (f/f1) * x_at_f1; the cross term is x_at_f1 itself.
    const Complex sl(0.0, f_hz / cfg.base.f1 * l);
    const Complex diag = Complex(r, 0.0) + sl;
    const Complex den = diag * diag + Complex(l * l, 0.0);
    Admittance2x2 y;
    y.y_dd = diag / den;
    y.y_dq = Complex(l, 0.0) / den;
    y.y_qd = Complex(-l, 0.0) / den;
    y.y_qq = diag / den;
    return y;
}

Complex thevenin_yqd(double r_th, double l_th, double f1_hz, double f_k_hz) {
    if (!(l_th > 0.0)) throw ValidationError("thevenin_yqd: l_th must be positive");
    if (!(f_k_hz > 0.0)) throw ValidationError("thevenin_yqd: f_k must be positive");
    const Complex diag(r_th, f_k_hz / f1_hz * l_th);
    return Complex(-l_th, 0.0) / (diag * diag + Complex(l_th * l_th, 0.0));
}

SteadyStateFlow two_bus_steady_state(double e, double grid_v, double grid_delta,
                                     const RlImpedance& z) {
    if (z.is_zero()) throw ValidationError("two_bus_steady_state: zero impedance");
    const Complex ec(e, 0.0);
    const Complex vg = std::polar(grid_v, grid_delta);
    const Complex i = (ec - vg) / z.as_complex();
    const Complex s = ec * std::conj(i);
    return {s.real(), s.imag(), std::abs(i)};
}

TransientPq idvs_transient_pq(const IdvsConfig& cfg, const VoltageStep& step, double t) {
    if (t < step.t_step)
        throw ValidationError("idvs_transient_pq: t must be at or after the step");
    if (cfg.z.is_zero()) throw ValidationError("idvs_transient_pq: singular impedance");

    const double r = cfg.z.r;
    const double x = cfg.z.l;
    const double omega1 = cfg.base.omega1;

    const Complex zc = cfg.z.as_complex();
    const Complex e(cfg.v_id, 0.0);
    const Complex v1 = std::polar(step.v1, step.delta1);
    const Complex v2 = std::polar(step.v2, step.delta2);
    const Complex i_pre = (e - v1) / zc;
    const Complex i_post = (e - v2) / zc;

    const SteadyStateFlow ss = two_bus_steady_state(cfg.v_id, step.v2, step.delta2, cfg.z);

    const double tp = t - step.t_step;
    TransientPq out;
    double decay = 1.0;
    if (r > 0.0) {
        const double tau = x / (omega1 * r);  // L/R in seconds on the pu base
        decay = std::exp(-tp / tau);
    } else {
        out.undamped = true;
    }

    // S(t) = E conj(i_inf) + E conj(i0 - i_inf) e^{-t/tau} e^{+j w1 t}. The
    // transient term expands to (V_Id/Z) e^{-t/tau} [ (v2-v1) and angle-jump
    // brackets ] with phase reference w1 t + phi - delta, phi = atan(x/r),
    // under the q = +j axis convention of the admittance matrix.
    const Complex rot = std::polar(1.0, omega1 * tp);
    const Complex transient = e * std::conj(i_pre - i_post) * rot * decay;
    out.p = ss.p + transient.real();
    out.q = ss.q + transient.imag();
    return out;
}

namespace {

// Quadratic in u = |v|^2 for the two-bus load flow:
//   u^2 + u (2 (r p + x q) - e^2) + |z|^2 (p^2 + q^2) = 0.
struct LoadFlowQuadratic {
    double b = 0.0;
    double disc = 0.0;
};

LoadFlowQuadratic load_flow_quadratic(double e, const RlImpedance& z, double p, double q) {
    const double b = 2.0 * (z.r * p + z.l * q) - e * e;
    const double zz = z.r * z.r + z.l * z.l;
    const double disc = b * b - 4.0 * zz * (p * p + q * q);
    return {b, disc};
}

}  // namespace

std::optional<double> two_bus_load_voltage(double e, const RlImpedance& z, double p, double q) {
    const auto lf = load_flow_quadratic(e, z, p, q);
    if (lf.disc < 0.0) return std::nullopt;
    const double u = 0.5 * (-lf.b + std::sqrt(lf.disc));
    if (u <= 0.0) return std::nullopt;
    return std::sqrt(u);
}

PvNose pv_nose_analytic(double e, const RlImpedance& z, double load_pf_angle) {
    if (!(z.l > 0.0)) throw ValidationError("pv_nose_analytic: l must be positive");
    if (!(e > 0.0)) throw ValidationError("pv_nose_analytic: e must be positive");

    const double tan_phi = std::tan(load_pf_angle);
    const double cphi = std::cos(load_pf_angle);
    if (std::abs(cphi) < 1e-12) return {0.0, e};  // pure reactive load: no active transfer

    auto solvable = [&](double p) {
        return load_flow_quadratic(e, z, p, p * tan_phi).disc >= 0.0;
    };

    if (!solvable(0.0))
        throw ValidationError("pv_nose_analytic: base case unsolvable (degenerate impedance)");

    double lo = 0.0, hi = 1.0;
    while (solvable(hi)) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e6) throw NumericalError("pv_nose_analytic: no finite transfer limit found");
    }
    while (hi - lo > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        (solvable(mid) ? lo : hi) = mid;
    }

    // At the nose the quadratic has a double root, u = -b/2 exactly.
    const double p_max = lo;
    const auto lf = load_flow_quadratic(e, z, p_max, p_max * tan_phi);
    return {p_max, std::sqrt(-0.5 * lf.b)};
}

}  // namespace gfmeq
