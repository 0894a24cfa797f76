#pragma once

#include <string>
#include <vector>

#include "gfmeq/analytic.hpp"
#include "gfmeq/core.hpp"

namespace gfmeq {

/// Droop GFM plant and control parameters, all per unit on the system base.
///
/// Control structure: power low-pass filters -> P-f / Q-V droop -> angle
/// integration -> outer PI on the capacitor (VCP) voltage with wC decoupling
/// -> inner PI on the filter-inductor current with wL decoupling and VCP
/// voltage feedforward -> average-value switch-terminal voltage. An optional
/// virtual R-L subtracts a drop from the voltage reference.
struct GfmPlantModel {
    double filter_r = 0.003;  // series filter branch
    double filter_l = 0.15;
    double filter_c = 0.05;   // shunt capacitor at the VCP
    RlImpedance z_coupling_plus_grid{0.03, 0.30};  // lumped VCP -> POI branch

    double droop_mp = 0.02;  // pu frequency per pu active power
    double droop_mq = 0.05;  // pu voltage per pu reactive power

    double kpv = 2.60;  // voltage-loop PI pair; kiv is in 1/s, so the loop is
    double kiv = 5.80;  // proportional-dominant across the scan band
    double kpc = 0.0;   // current-loop PI; 0 means "tune for 300 Hz" at build
    double kic = 0.0;

    double power_filter_cutoff = 2.0 * kPi * 10.0;  // rad/s

    RlImpedance virtual_z{0.0, 0.0};

    double p_ref = 0.0;
    double q_ref = 0.0;
    double v_ref = 1.0;

    // Controller per-unit normalization: both voltage-loop gains are applied
    // scaled by this constant. Recorded in run metadata.
    double voltage_loop_scale = 1.0;

    // Grid-side current feedforward into the voltage loop (0 = off).
    double current_ff_gain = 0.0;

    void validate() const;

    /// kpc/kic for a first-order current loop of the given bandwidth, using
    /// the internal-model tuning kpc = w_bw*L_f/w1, kic = w_bw*R_f.
    GfmPlantModel with_current_loop_bandwidth(double hz, const PerUnitBase& base) const;
};

/// Idealistic-GFM switch (emulates an ideal source): droop disabled,
/// voltage-loop gains boosted, virtual impedance removed.
struct IdealisticMode {
    bool enabled = false;
    double gain_boost = 5.0;
};

enum class Integrator : std::uint8_t { trapezoidal, rk4 };

struct SimConfig {
    double dt = 2.0e-5;  // s
    double t_end = 1.0;
    Integrator integrator = Integrator::trapezoidal;
    int record_decimation = 1;

    void validate() const;
};

/// Step applied to the grid-source phasor at time t.
struct DisturbanceEvent {
    double t = 0.0;
    double dv = 0.0;      // pu magnitude step
    double ddelta = 0.0;  // rad phase step

    DisturbanceEvent() = default;
    DisturbanceEvent(double t_, double dv_, double dd);
};

enum class MeasPoint : std::uint8_t { st, vcp, poi };

struct ChannelBlock {
    std::vector<DqPhasor> v;
    std::vector<DqPhasor> i;
    std::vector<double> p;
    std::vector<double> q;
};

struct TimeSeries {
    std::vector<double> t;
    ChannelBlock st, vcp, poi;

    const ChannelBlock& at(MeasPoint pt) const;
    std::string to_csv() const;
    static TimeSeries from_csv(const std::string& text);
};

/// p = vd*id + vq*iq, q = vq*id - vd*iq (matches Re/Im of v*conj(i)).
inline void measure_pq(const DqPhasor& v, const DqPhasor& i, double& p, double& q) {
    p = v.d * i.d + v.q * i.q;
    q = v.q * i.d - v.d * i.q;
}

struct GridSource {
    double v = 1.0;      // pu magnitude
    double delta = 0.0;  // rad
};

/// Constant-power load at the POI for islanded operation. The voltage command
/// S/conj(i) is low-passed with tau_s to break the algebraic loop.
struct CplLoad {
    double p = 0.0;
    double q = 0.0;
    double tau_s = 1.0e-3;
};

enum class DeviceKind : std::uint8_t { idvs, classical_machine, droop_gfm };

struct PointOutputs {
    DqPhasor v, i;
    double p = 0.0, q = 0.0;
};

struct ModelOutputs {
    PointOutputs st, vcp, poi;
};

/// A device plus its boundary (stiff grid source at the POI, or an islanded
/// constant-power load), initialized at an exact equilibrium. Immutable after
/// construction; integration state lives in the Stepper.
class SimModel {
public:
    static SimModel idvs(const IdvsConfig& cfg, GridSource src);
    static SimModel idvs_at_poi_op(const RlImpedance& z, const PerUnitBase& base, double p_poi,
                                   double q_poi, double v_poi);
    static SimModel idvs_islanded(const IdvsConfig& cfg, CplLoad load);
    static SimModel classical_machine(double e, double r_a, double x_dpp, const PerUnitBase& base,
                                      GridSource src);
    static SimModel droop_gfm(const GfmPlantModel& params, IdealisticMode mode, GridSource src);
    static SimModel droop_gfm_at_poi_op(GfmPlantModel params, IdealisticMode mode, double p_poi,
                                        double q_poi, double v_poi);
    static SimModel droop_gfm_islanded(const GfmPlantModel& params, IdealisticMode mode,
                                       CplLoad load);

    DeviceKind kind() const { return kind_; }
    bool islanded() const { return islanded_; }
    const PerUnitBase& base() const { return base_; }
    GridSource grid_source() const { return src_; }
    CplLoad load() const { return load_; }
    const GfmPlantModel& gfm_params() const { return gfm_; }
    const IdvsConfig& idvs_config() const { return idvs_; }

    std::size_t state_dim() const;
    const std::vector<double>& initial_state() const { return x0_; }

    void derivatives(double t, const double* x, Complex v_src, double* dx) const;
    ModelOutputs outputs(const double* x, Complex v_src) const;

    /// Max over states of the equilibrium defect, scaled to pu by each
    /// state's natural time constant.
    double scaled_residual(const double* x, Complex v_src) const;

private:
    SimModel() = default;
    void init_idvs_equilibrium();
    void init_gfm_equilibrium_from_refs();
    void init_gfm_equilibrium_at_op(double p_poi, double q_poi, double v_poi);
    void init_islanded_equilibrium(const std::vector<double>* warm = nullptr);

    DeviceKind kind_ = DeviceKind::idvs;
    bool islanded_ = false;
    PerUnitBase base_;
    IdvsConfig idvs_;
    GfmPlantModel gfm_;       // effective parameters (idealistic mode applied)
    IdealisticMode mode_;
    GridSource src_;
    CplLoad load_;
    std::vector<double> x0_;

    friend SimModel reload_islanded(const SimModel& proto, CplLoad load,
                                    const std::vector<double>* warm);
};

/// Same device, new islanded load level, warm-started equilibrium.
SimModel reload_islanded(const SimModel& proto, CplLoad load, const std::vector<double>* warm);

/// Sinusoidal perturbation added to one source axis from t_start on.
struct Injection {
    enum class Axis : std::uint8_t { d, q };
    bool active = false;
    Axis axis = Axis::d;
    double amplitude = 0.0;
    double f_hz = 0.0;
    double t_start = 0.0;
};

/// Grid-source schedule: base phasor (stepped by events) plus optional
/// injection. value(t) is what the POI source presents at time t.
struct SourceSchedule {
    GridSource base;
    Injection inj;

    Complex value(double t) const;
};

/// Fixed-step integrator bound to one model. Deterministic: identical inputs
/// produce bit-identical trajectories.
class Stepper {
public:
    Stepper(const SimModel& model, const SimConfig& cfg);

    double time() const { return t_; }
    const std::vector<double>& state() const { return x_; }
    SourceSchedule& source() { return src_; }
    ModelOutputs outputs() const;

    void step();  // advance by dt; throws NumericalError on divergence

private:
    const SimModel& model_;
    SimConfig cfg_;
    SourceSchedule src_;
    std::vector<double> x_;
    std::vector<double> k1_, k2_, k3_, k4_, xw_;  // integrator scratch
    double t_ = 0.0;
    long step_count_ = 0;

    void check_divergence() const;
};

/// Deterministic fixed-step run from the model's equilibrium with events
/// applied between steps.
TimeSeries simulate(const SimModel& model, const std::vector<DisturbanceEvent>& events,
                    const SimConfig& cfg);

/// Reference droop-GFM parameterization used by the identification and
/// validation studies: 0.30 pu grid branch at X/R = 10 behind the plant,
/// default voltage gains, and a small virtual R-L.
GfmPlantModel default_study_gfm();

}  // namespace gfmeq
