#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfmeq {

using Complex = std::complex<double>;

constexpr double kPi = 3.14159265358979323846;

/// Thrown when an input violates an operation's domain (bad parameter,
/// malformed file, unknown enum value). Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when a numerical procedure fails (divergence, non-convergence,
/// singular system). Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Per-unit system base. omega1 is cached as 2*pi*f1.
struct PerUnitBase {
    double s_base = 2.0e8;    // VA
    double v_base = 230.0e3;  // line-to-line RMS volts
    double f1 = 60.0;         // fundamental, Hz
    double omega1 = 2.0 * kPi * 60.0;

    PerUnitBase() = default;
    PerUnitBase(double s, double v, double f);
};

/// Series R-L element in per unit. l is the inductance on the omega1 base,
/// so l equals the fundamental-frequency reactance numerically.
struct RlImpedance {
    double r = 0.0;
    double l = 0.0;

    RlImpedance() = default;
    RlImpedance(double r_, double l_);

    double x_at_f1() const { return l; }
    Complex as_complex() const { return {r, l}; }  // r + jx at f1
    double magnitude() const { return std::abs(as_complex()); }
    bool is_zero() const { return r == 0.0 && l == 0.0; }
};

/// r from a reactance and an X/R ratio; l carries the reactance per the
/// omega1-base convention.
RlImpedance rl_from_x_over_r(double x_eff, double x_over_r, const PerUnitBase& base);

struct DqPhasor {
    double d = 0.0;
    double q = 0.0;

    DqPhasor() = default;
    DqPhasor(double d_, double q_) : d(d_), q(q_) {}
    explicit DqPhasor(Complex c) : d(c.real()), q(c.imag()) {}

    Complex as_complex() const { return {d, q}; }
    double magnitude() const { return std::hypot(d, q); }
};

enum class YEntry : std::uint8_t { dd, dq, qd, qq };

const char* to_string(YEntry e);

/// One measured frequency point. Entries that were not scanned stay empty.
struct AdmittancePoint {
    double f_hz = 0.0;
    std::optional<Complex> y_dd;
    std::optional<Complex> y_dq;
    std::optional<Complex> y_qd;
    std::optional<Complex> y_qq;

    const std::optional<Complex>& entry(YEntry e) const;
    std::optional<Complex>& entry(YEntry e);
};

/// Ordered admittance samples at the POI, strictly increasing in frequency.
class AdmittanceSpectrum {
public:
    AdmittanceSpectrum(PerUnitBase base, std::vector<AdmittancePoint> points);

    const PerUnitBase& base() const { return base_; }
    const std::vector<AdmittancePoint>& points() const { return points_; }
    std::size_t size() const { return points_.size(); }
    double f_min() const { return points_.front().f_hz; }
    double f_max() const { return points_.back().f_hz; }

    bool entry_measured_everywhere(YEntry e) const;

    std::string to_csv() const;
    std::string to_json() const;
    static AdmittanceSpectrum from_csv(const std::string& text, const PerUnitBase& base);
    static AdmittanceSpectrum from_json(const std::string& text);

private:
    PerUnitBase base_;
    std::vector<AdmittancePoint> points_;
};

/// Fitted effective source impedance plus fit diagnostics.
struct TheveninEquivalent {
    double r_eff = 0.0;       // pu
    double l_eff = 0.0;       // pu (= x at f1)
    double rms_error = 0.0;   // objective value at the minimum, as a fraction
    double resonance_hz = 0.0;
    bool resonance_refined = false;
    bool boundary_solution = false;

    double x_eff_at_f1() const { return l_eff; }
    double x_over_r() const { return r_eff > 0.0 ? l_eff / r_eff : 0.0; }
};

struct ResonancePeak {
    double f_hz = 0.0;
    double magnitude = 0.0;
    bool refined = false;  // false when the peak sat on the grid boundary
};

/// Locates the magnitude peak of one admittance entry and refines it with a
/// quadratic through the peak sample and its neighbors (log-magnitude vs f).
ResonancePeak spectrum_resonance(const AdmittanceSpectrum& spec, YEntry entry);

}  // namespace gfmeq
