#pragma once


#include "gfmeq/core.hpp"

namespace gfmeq {

/// Step change of the grid phasor: (v1, delta1) before t_step, (v2, delta2) after.
struct VoltageStep {
    double v1 = 1.0;      // pu
    double delta1 = 0.0;  // rad
    double v2 = 1.0;
    double delta2 = 0.0;
    double t_step = 0.0;  // s

    VoltageStep() = default;
    VoltageStep(double v1_, double d1, double v2_, double d2, double t);
};

/// Fixed voltage source behind a series R-L.
struct IdvsConfig {
    double v_id = 1.0;  // internal magnitude, pu (angle 0 by convention)
    RlImpedance z;
    PerUnitBase base;

    IdvsConfig() = default;
    IdvsConfig(double v, RlImpedance z_, PerUnitBase b);
};

struct Admittance2x2 {
    Complex y_dd, y_dq, y_qd, y_qq;
};

/// dq admittance of a source behind R-L, evaluated at perturbation frequency f.
/// Sign convention: current positive out of the device at the POI, so y_qd has
/// 180 degree phase at f = 0.
Admittance2x2 idvs_admittance(const IdvsConfig& cfg, double f_hz);

/// The (q,d) entry alone, for a candidate equivalent (r_th, l_th) at f_k.
Complex thevenin_yqd(double r_th, double l_th, double f1_hz, double f_k_hz);

struct SteadyStateFlow {
    double p = 0.0;      // pu, source convention at E's terminal
    double q = 0.0;
    double i_mag = 0.0;  // pu
};

/// Complex power flow E -> grid across z, measured at the E terminal.
SteadyStateFlow two_bus_steady_state(double e, double grid_v, double grid_delta,
                                     const RlImpedance& z);

struct TransientPq {
    double p = 0.0;
    double q = 0.0;
    bool undamped = false;  // r == 0: no decay, result oscillates forever
};

/// Transient P/Q at the internal source terminal after the grid phasor steps.
/// Decay constant tau = L/R, oscillation at the fundamental, impedance angle
/// phi = atan(x/r); converges to the (v2, delta2) steady-state flow.
TransientPq idvs_transient_pq(const IdvsConfig& cfg, const VoltageStep& step, double t);

struct PvNose {
    double p_max = 0.0;   // pu
    double v_nose = 0.0;  // pu
};

/// Static voltage-stability limit of the two-bus system E -> z -> constant-power
/// load with a fixed power-factor angle. Bisection on P over the quadratic
/// load-flow solvability test.
PvNose pv_nose_analytic(double e, const RlImpedance& z, double load_pf_angle);

/// Upper-branch load-flow voltage magnitude for load (p, q) behind (e, z);
/// empty when no real solution exists.
std::optional<double> two_bus_load_voltage(double e, const RlImpedance& z, double p, double q);

}  // namespace gfmeq
