#include "gfmeq/cli.hpp"

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "gfmeq/analytic.hpp"
#include "gfmeq/core.hpp"
#include "gfmeq/fit.hpp"
#include "gfmeq/scan.hpp"
#include "gfmeq/sim.hpp"
#include "gfmeq/study.hpp"

namespace gfmeq::cli {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write file: " + path);
    out << text;
}

double num_at(const json& j, const std::string& section, const std::string& key, double dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number())
        throw ValidationError(section + "." + key + ": expected a number");
    return j[key].get<double>();
}

int int_at(const json& j, const std::string& section, const std::string& key, int dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_number_integer())
        throw ValidationError(section + "." + key + ": expected an integer");
    return j[key].get<int>();
}

bool bool_at(const json& j, const std::string& section, const std::string& key, bool dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_boolean()) throw ValidationError(section + "." + key + ": expected a boolean");
    return j[key].get<bool>();
}

std::string str_at(const json& j, const std::string& section, const std::string& key,
                   const std::string& dflt) {
    if (!j.contains(key)) return dflt;
    if (!j[key].is_string()) throw ValidationError(section + "." + key + ": expected a string");
    return j[key].get<std::string>();
}

struct LoadedConfig {
    json j;
    PerUnitBase base;
    SimConfig sim;
    ScanConfig scan;
    FitConfig fit;
    ComplianceLocation location = ComplianceLocation::hv;
    std::string device_type;
    std::string config_dir;
};

SimConfig parse_sim(const json& root) {
    SimConfig cfg;
    if (!root.contains("sim")) return cfg;
    const json& j = root["sim"];
    cfg.dt = num_at(j, "sim", "dt_s", cfg.dt);
    cfg.record_decimation = int_at(j, "sim", "record_decimation", cfg.record_decimation);
    const std::string integ = str_at(j, "sim", "integrator", "trapezoidal");
    if (integ == "trapezoidal")
        cfg.integrator = Integrator::trapezoidal;
    else if (integ == "rk4")
        cfg.integrator = Integrator::rk4;
    else
        throw ValidationError("sim.integrator: expected 'trapezoidal' or 'rk4'");
    return cfg;
}

ScanConfig parse_scan(const json& root, const SimConfig& sim) {
    ScanConfig cfg;
    cfg.sim = sim;
    if (!root.contains("scan")) return cfg;
    const json& j = root["scan"];
    cfg.f_min_hz = num_at(j, "scan", "f_min_hz", cfg.f_min_hz);
    cfg.f_max_hz = num_at(j, "scan", "f_max_hz", cfg.f_max_hz);
    cfg.n_points = int_at(j, "scan", "n_points", cfg.n_points);
    const std::string spacing = str_at(j, "scan", "spacing", "log");
    if (spacing == "log")
        cfg.spacing = ScanSpacing::log_spaced;
    else if (spacing == "linear")
        cfg.spacing = ScanSpacing::linear;
    else
        throw ValidationError("scan.spacing: expected 'log' or 'linear'");
    cfg.amplitude = num_at(j, "scan", "amplitude_pu", cfg.amplitude);
    cfg.settle_cycles = int_at(j, "scan", "settle_cycles", cfg.settle_cycles);
    cfg.measure_periods = int_at(j, "scan", "measure_periods", cfg.measure_periods);
    cfg.fundamental_guard_hz = num_at(j, "scan", "fundamental_guard_hz", cfg.fundamental_guard_hz);
    cfg.min_settle_s = num_at(j, "scan", "min_settle_s", cfg.min_settle_s);
    cfg.drift_check_periods = int_at(j, "scan", "drift_check_periods", cfg.drift_check_periods);
    cfg.measure_q_axis = bool_at(j, "scan", "measure_q_axis", cfg.measure_q_axis);
    cfg.parallel = int_at(j, "scan", "parallel", cfg.parallel);
    return cfg;
}

FitConfig parse_fit(const json& root) {
    FitConfig cfg;
    if (!root.contains("fit")) return cfg;
    const json& j = root["fit"];
    if (j.contains("bounds_r")) {
        if (!j["bounds_r"].is_array() || j["bounds_r"].size() != 2)
            throw ValidationError("fit.bounds_r: expected [min, max]");
        cfg.r_min = j["bounds_r"][0].get<double>();
        cfg.r_max = j["bounds_r"][1].get<double>();
    }
    if (j.contains("bounds_l")) {
        if (!j["bounds_l"].is_array() || j["bounds_l"].size() != 2)
            throw ValidationError("fit.bounds_l: expected [min, max]");
        cfg.l_min = j["bounds_l"][0].get<double>();
        cfg.l_max = j["bounds_l"][1].get<double>();
    }
    cfg.multistart_grid = int_at(j, "fit", "multistart_grid", cfg.multistart_grid);
    cfg.param_tol = num_at(j, "fit", "param_tol", cfg.param_tol);
    cfg.eps = num_at(j, "fit", "eps", cfg.eps);
    return cfg;
}

LoadedConfig load_config(const Options& opt) {
    if (opt.config_path.empty()) throw ValidationError("--config is required");
    LoadedConfig cfg;
    try {
        cfg.j = json::parse(read_file(opt.config_path));
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    cfg.config_dir = std::filesystem::path(opt.config_path).parent_path().string();
    const json& root = cfg.j;
    if (root.contains("base")) {
        const json& b = root["base"];
        cfg.base = PerUnitBase(num_at(b, "base", "s_base_va", 2.0e8),
                               num_at(b, "base", "v_base_v", 230.0e3),
                               num_at(b, "base", "f1_hz", 60.0));
    }
    cfg.sim = parse_sim(root);
    cfg.scan = parse_scan(root, cfg.sim);
    cfg.fit = parse_fit(root);
    cfg.location = location_from_string(str_at(root, "(root)", "compliance_location", "HV"));
    if (!root.contains("device") || !root["device"].is_object())
        throw ValidationError("device: section is required");
    cfg.device_type = str_at(root["device"], "device", "type", "");
    if (cfg.device_type.empty()) throw ValidationError("device.type: required");

    if (opt.has_points_override) cfg.scan.n_points = opt.points_override;
    if (opt.parallel > 0) cfg.scan.parallel = opt.parallel;
    if (opt.has_eps_override) cfg.fit.eps = opt.eps_override;
    return cfg;
}

GfmPlantModel parse_gfm(const LoadedConfig& cfg) {
    GfmPlantModel g = default_study_gfm();
    const json& d = cfg.j["device"];
    g.filter_l = num_at(d, "device", "filter_x", g.filter_l);
    g.filter_r = num_at(d, "device", "filter_r", g.filter_l / 50.0);
    g.filter_c = num_at(d, "device", "filter_c", g.filter_c);
    if (d.contains("grid_x")) {
        const double x = num_at(d, "device", "grid_x", 0.30);
        const double xr = num_at(d, "device", "grid_x_over_r", 10.0);
        g.z_coupling_plus_grid = rl_from_x_over_r(x, xr, cfg.base);
    }
    g.droop_mp = num_at(d, "device", "droop_mp", g.droop_mp);
    g.droop_mq = num_at(d, "device", "droop_mq", g.droop_mq);
    g.kpv = num_at(d, "device", "kpv", g.kpv);
    g.kiv = num_at(d, "device", "kiv", g.kiv);
    g.kpc = num_at(d, "device", "kpc", g.kpc);
    g.kic = num_at(d, "device", "kic", g.kic);
    if (d.contains("virtual_x") || d.contains("virtual_r"))
        g.virtual_z = RlImpedance(num_at(d, "device", "virtual_r", 0.0),
                                  num_at(d, "device", "virtual_x", 0.0));
    g.voltage_loop_scale = num_at(d, "device", "voltage_loop_scale", g.voltage_loop_scale);
    g.p_ref = num_at(d, "device", "p_ref", g.p_ref);
    g.q_ref = num_at(d, "device", "q_ref", g.q_ref);
    g.v_ref = num_at(d, "device", "v_ref", g.v_ref);
    return g;
}

struct OpSpec {
    bool present = false;
    double p = 0.0, q = 0.0, v = 1.0;
};

OpSpec parse_op(const LoadedConfig& cfg) {
    OpSpec op;
    if (!cfg.j.contains("operating_point")) return op;
    const json& o = cfg.j["operating_point"];
    op.present = true;
    op.p = num_at(o, "operating_point", "p_poi", 0.0);
    op.q = num_at(o, "operating_point", "q_poi", 0.0);
    op.v = num_at(o, "operating_point", "v_poi", 1.0);
    return op;
}

/// Grid-connected device model per the config's device section.
SimModel build_grid_model(const LoadedConfig& cfg) {
    const json& d = cfg.j["device"];
    const OpSpec op = parse_op(cfg);
    if (cfg.device_type == "idvs") {
        RlImpedance z;
        if (d.contains("x")) {
            z = rl_from_x_over_r(num_at(d, "device", "x", 0.48),
                                 num_at(d, "device", "x_over_r", 10.0), cfg.base);
        } else {
            z = RlImpedance(num_at(d, "device", "r", 0.048), num_at(d, "device", "l", 0.48));
        }
        if (op.present) return SimModel::idvs_at_poi_op(z, cfg.base, op.p, op.q, op.v);
        return SimModel::idvs(IdvsConfig(num_at(d, "device", "v_id", 1.0), z, cfg.base),
                              GridSource{num_at(d, "device", "grid_v", 1.0),
                                         num_at(d, "device", "grid_delta_rad", 0.0)});
    }
    if (cfg.device_type == "classical_machine") {
        return SimModel::classical_machine(num_at(d, "device", "e", 1.0),
                                           num_at(d, "device", "r_a", 0.0025),
                                           num_at(d, "device", "x_dpp", 0.25), cfg.base,
                                           GridSource{num_at(d, "device", "grid_v", 1.0),
                                                      num_at(d, "device", "grid_delta_rad", 0.0)});
    }
    if (cfg.device_type == "droop_gfm") {
        GfmPlantModel g = parse_gfm(cfg);
        IdealisticMode mode;
        mode.enabled = bool_at(d, "device", "idealistic", false);
        if (op.present) return SimModel::droop_gfm_at_poi_op(g, mode, op.p, op.q, op.v);
        return SimModel::droop_gfm(g, mode, GridSource{num_at(d, "device", "grid_v", 1.0),
                                                       num_at(d, "device", "grid_delta_rad", 0.0)});
    }
    throw ValidationError("device.type: unknown device '" + cfg.device_type + "'");
}

std::string out_path(const Options& opt, const std::string& name) {
    std::filesystem::create_directories(opt.out_dir);
    return (std::filesystem::path(opt.out_dir) / name).string();
}

void write_run_meta(const Options& opt, const LoadedConfig& cfg, const std::string& command) {
    ordered_json meta;
    meta["command"] = command;
    meta["device"] = cfg.device_type;
    meta["f1_hz"] = cfg.base.f1;
    meta["dt_s"] = cfg.sim.dt;
    meta["integrator"] = cfg.sim.integrator == Integrator::rk4 ? "rk4" : "trapezoidal";
    if (cfg.device_type == "droop_gfm") {
        const GfmPlantModel g = parse_gfm(cfg);
        meta["gfm"] = {{"filter_r", g.filter_r},
                       {"filter_l", g.filter_l},
                       {"filter_c", g.filter_c},
                       {"grid_r", g.z_coupling_plus_grid.r},
                       {"grid_x", g.z_coupling_plus_grid.l},
                       {"droop_mp", g.droop_mp},
                       {"droop_mq", g.droop_mq},
                       {"kpv", g.kpv},
                       {"kiv", g.kiv},
                       {"virtual_r", g.virtual_z.r},
                       {"virtual_x", g.virtual_z.l},
                       {"voltage_loop_scale", g.voltage_loop_scale},
                       {"idealistic_gain_boost", IdealisticMode{}.gain_boost}};
    }
    if (!opt.stable_output) {
        char buf[64];
        const std::time_t now = std::time(nullptr);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        meta["created_utc"] = buf;
    }
    write_file(out_path(opt, "run_meta.json"), meta.dump(2) + "\n");
}

AdmittanceSpectrum load_spectrum(const std::string& path, const PerUnitBase& base) {
    const std::string text = read_file(path);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json")
        return AdmittanceSpectrum::from_json(text);
    return AdmittanceSpectrum::from_csv(text, base);
}

TheveninEquivalent fit_from_json_file(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ValidationError("fit json: " + std::string(e.what()));
    }
    TheveninEquivalent eq;
    eq.r_eff = j.at("r_eff").get<double>();
    eq.l_eff = j.at("l_eff").get<double>();
    eq.rms_error = j.value("rms_error", 0.0);
    eq.resonance_hz = j.value("resonance_hz", 0.0);
    return eq;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Runs the device scan and fit per the config; used by step/pv when no
/// fit.json is supplied.
TheveninEquivalent scan_and_fit(const LoadedConfig& cfg) {
    const SimModel model = build_grid_model(cfg);
    const AdmittanceSpectrum spec = sweep(model, cfg.scan);
    return fit(spec, cfg.fit);
}

}  // namespace

int cmd_scan(const Options& opt) {
    const LoadedConfig cfg = load_config(opt);
    cfg.scan.validate();

    AdmittanceSpectrum spec = [&]() {
        if (cfg.device_type == "imported") {
            const std::string manifest =
                str_at(cfg.j["device"], "device", "manifest", "");
            if (manifest.empty()) throw ValidationError("device.manifest: required for imports");
            const auto dir = std::filesystem::path(manifest).parent_path();
            return import_trace_scan(
                read_file(manifest),
                [&](const std::string& f) { return read_file((dir / f).string()); }, cfg.base);
        }
        const SimModel model = build_grid_model(cfg);
        SweepDiagnostics diag;
        diag.capture_raw = opt.keep_raw;
        AdmittanceSpectrum s = sweep(model, cfg.scan, &diag);
        for (const auto& w : diag.warnings) std::cerr << "warning: " << w << "\n";
        if (opt.keep_raw) {
            std::vector<std::string> names;
            for (const auto& tr : diag.raw) {
                char name[96];
                std::snprintf(name, sizeof name, "raw_%08.3fHz_%c.csv", tr.f_hz,
                              tr.axis == Injection::Axis::d ? 'd' : 'q');
                names.emplace_back(name);
                write_file(out_path(opt, name), raw_trace_to_csv(tr));
            }
            write_file(out_path(opt, "raw_manifest.json"), raw_manifest_json(diag.raw, names));
        }
        return s;
    }();

    write_file(out_path(opt, "spectrum.csv"), spec.to_csv());
    write_file(out_path(opt, "spectrum.json"), spec.to_json());
    write_run_meta(opt, cfg, "scan");
    std::cout << "scan: " << spec.size() << " points -> " << out_path(opt, "spectrum.csv")
              << "\n";
    return 0;
}

int cmd_fit(const Options& opt, bool comply_only) {
    const LoadedConfig cfg = load_config(opt);
    if (opt.spectrum_path.empty())
        throw ValidationError("fit: a spectrum file argument is required");
    const AdmittanceSpectrum spec = load_spectrum(opt.spectrum_path, cfg.base);

    const TheveninEquivalent eq = fit(spec, cfg.fit);
    const ComplianceReport rep = check_compliance(eq, cfg.location, ComplianceTable{}, cfg.fit.eps);
    write_file(out_path(opt, "fit.json"), rep.to_json());

    if (!comply_only) {
        std::ostringstream overlay;
        overlay << "f_hz,y_qd_full_mag,y_qd_fit_mag,y_qd_full_phase_deg,y_qd_fit_phase_deg\n";
        for (const auto& p : spec.points()) {
            if (!p.y_qd) continue;
            const Complex th = thevenin_yqd(eq.r_eff, eq.l_eff, spec.base().f1, p.f_hz);
            overlay << fmt17(p.f_hz) << ',' << fmt17(std::abs(*p.y_qd)) << ','
                    << fmt17(std::abs(th)) << ',' << fmt17(std::arg(*p.y_qd) * 180.0 / kPi) << ','
                    << fmt17(std::arg(th) * 180.0 / kPi) << "\n";
        }
        write_file(out_path(opt, "fit_overlay.csv"), overlay.str());
    }
    write_run_meta(opt, cfg, comply_only ? "comply" : "fit");

    std::cout << "fit: r_eff=" << eq.r_eff << " x_eff=" << eq.x_eff_at_f1()
              << " rms_error=" << eq.rms_error << " resonance_hz=" << eq.resonance_hz
              << (rep.pass() ? " PASS" : " FAIL") << "\n";
    if (eq.boundary_solution) {
        std::cerr << "error: fit converged onto a parameter bound\n";
        return 2;
    }
    return rep.pass() ? 0 : 3;
}

int cmd_step(const Options& opt) {
    const LoadedConfig cfg = load_config(opt);
    const json& s = cfg.j.contains("step") ? cfg.j["step"] : json::object();
    const double dv = num_at(s, "step", "dv", -0.05);
    const double ddelta = num_at(s, "step", "ddelta_deg", 0.0) * kPi / 180.0;
    const double t_event = num_at(s, "step", "t_event_s", 0.05);
    const double window = num_at(s, "step", "window_s", 0.2);

    // Default matched operating point: export 0.4 pu, absorb 0.05 pu.
    LoadedConfig cfg_op = cfg;
    if (!cfg.j.contains("operating_point"))
        cfg_op.j["operating_point"] = {{"p_poi", 0.4}, {"q_poi", -0.05}, {"v_poi", 1.0}};
    const SimModel full = build_grid_model(cfg_op);

    TheveninEquivalent eq;
    if (!opt.fit_json_path.empty()) {
        eq = fit_from_json_file(opt.fit_json_path);
    } else {
        std::cerr << "step: no --fit-json given, running the scan+fit pipeline first\n";
        eq = scan_and_fit(cfg);
    }

    const StepStudyResult res =
        step_compare(full, eq, DisturbanceEvent(t_event, dv, ddelta), window, cfg.sim);
    write_file(out_path(opt, "step_full.csv"), res.traces_full.to_csv());
    write_file(out_path(opt, "step_equiv.csv"), res.traces_equiv.to_csv());
    write_file(out_path(opt, "step.json"), res.summary_json());
    write_run_meta(opt, cfg, "step");
    std::cout << "step: rms_error_q=" << res.rms_error_q << " rms_error_p=" << res.rms_error_p
              << "\n";
    return 0;
}

int cmd_pv(const Options& opt) {
    const LoadedConfig cfg = load_config(opt);
    const json& s = cfg.j.contains("pv") ? cfg.j["pv"] : json::object();
    PvTraceConfig pv;
    pv.base_p = num_at(s, "pv", "base_p", pv.base_p);
    pv.base_q = num_at(s, "pv", "base_q", pv.base_q);
    pv.step_p = num_at(s, "pv", "step_p", pv.step_p);
    pv.step_q = num_at(s, "pv", "step_q", pv.step_q);
    pv.max_steps = int_at(s, "pv", "max_steps", pv.max_steps);
    pv.refine_rounds = int_at(s, "pv", "refine_rounds", pv.refine_rounds);

    SimModel proto = [&]() {
        if (cfg.device_type == "droop_gfm") return gfm_islanded_at_base_load(parse_gfm(cfg), pv);
        const json& d = cfg.j["device"];
        RlImpedance z;
        if (d.contains("x"))
            z = rl_from_x_over_r(num_at(d, "device", "x", 0.5),
                                 num_at(d, "device", "x_over_r", 1.0e12), cfg.base);
        else
            z = RlImpedance(num_at(d, "device", "r", 0.0), num_at(d, "device", "l", 0.5));
        return idvs_islanded_at_base_load(z, cfg.base, pv);
    }();

    const PvCurve full_curve = pv_trace(proto, pv);
    write_file(out_path(opt, "pv_full.csv"), full_curve.to_csv());

    ordered_json summary;
    summary["p_max_full"] = full_curve.p_max;
    summary["v_at_pmax_full"] = full_curve.v_at_pmax;
    summary["terminated_by"] = to_string(full_curve.terminated_by);

    if (!opt.fit_json_path.empty()) {
        const TheveninEquivalent eq = fit_from_json_file(opt.fit_json_path);
        const PvCurve eq_curve = pv_trace(eq, pv);
        write_file(out_path(opt, "pv_equiv.csv"), eq_curve.to_csv());
        summary["p_max_equiv"] = eq_curve.p_max;
        summary["v_at_pmax_equiv"] = eq_curve.v_at_pmax;
        summary["p_max_rel_diff"] =
            std::abs(full_curve.p_max - eq_curve.p_max) / std::max(full_curve.p_max, 1.0e-12);
    }
    write_file(out_path(opt, "pv.json"), summary.dump(2) + "\n");
    write_run_meta(opt, cfg, "pv");
    std::cout << "pv: p_max=" << full_curve.p_max << " v_at_pmax=" << full_curve.v_at_pmax << "\n";
    return 0;
}

int cmd_case(const Options& opt) {
    const LoadedConfig cfg = load_config(opt);
    const json& s = cfg.j.contains("case") ? cfg.j["case"] : json::object();
    const CaseId id = case_from_string(str_at(s, "case", "id", "I"));
    CaseStudyConfig cs;
    cs.z_gfm_x = num_at(s, "case", "z_gfm_x", cs.z_gfm_x);
    cs.x_over_r = num_at(s, "case", "x_over_r", cs.x_over_r);
    cs.z_filter_x = num_at(s, "case", "z_filter_x", cs.z_filter_x);
    if (s.contains("sweep")) {
        if (!s["sweep"].is_array()) throw ValidationError("case.sweep: expected an array");
        for (const auto& v : s["sweep"]) cs.sweep.push_back(v.get<double>());
    }
    cs.sim = cfg.sim;
    cs.gfm = cfg.device_type == "droop_gfm" ? parse_gfm(cfg) : default_study_gfm();

    const CaseStudyReport rep = case_study(id, cs);
    write_file(out_path(opt, "case.json"), rep.to_json());
    write_file(out_path(opt, "case.csv"), rep.to_csv());
    write_run_meta(opt, cfg, "case");
    std::cout << "case " << to_string(id) << ": " << rep.entries.size() << " entries\n";
    return 0;
}

int cmd_analytic(const Options& opt) {
    const LoadedConfig cfg = load_config(opt);
    if (cfg.device_type != "idvs")
        throw ValidationError("analytic: device.type must be 'idvs'");
    const json& d = cfg.j["device"];
    RlImpedance z;
    if (d.contains("x"))
        z = rl_from_x_over_r(num_at(d, "device", "x", 0.33), num_at(d, "device", "x_over_r", 10.0),
                             cfg.base);
    else
        z = RlImpedance(num_at(d, "device", "r", 0.033), num_at(d, "device", "l", 0.33));
    const IdvsConfig ic(num_at(d, "device", "v_id", 1.0), z, cfg.base);

    const json& a = cfg.j.contains("analytic") ? cfg.j["analytic"] : json::object();
    const VoltageStep step(num_at(a, "analytic", "v1", 1.0),
                           num_at(a, "analytic", "delta1_deg", 0.0) * kPi / 180.0,
                           num_at(a, "analytic", "v2", 0.9),
                           num_at(a, "analytic", "delta2_deg", -5.0) * kPi / 180.0,
                           num_at(a, "analytic", "t_step_s", 0.0));
    const double t_end = num_at(a, "analytic", "t_end_s", 0.1);
    const double dt = num_at(a, "analytic", "dt_s", cfg.sim.dt);
    if (!(t_end > step.t_step) || !(dt > 0.0))
        throw ValidationError("analytic: need t_end > t_step and dt > 0");
    const long n = std::lround((t_end - step.t_step) / dt);
    if (n < 1) throw ValidationError("analytic: empty time grid");

    bool warned = false;
    std::ostringstream out;
    out << "t,p,q\n";
    for (long k = 0; k <= n; ++k) {
        const double t = step.t_step + static_cast<double>(k) * dt;
        const TransientPq pq = idvs_transient_pq(ic, step, t);
        if (pq.undamped && !warned) {
            std::cerr << "warning: r = 0, undamped response (no decay)\n";
            warned = true;
        }
        out << fmt17(t) << ',' << fmt17(pq.p) << ',' << fmt17(pq.q) << "\n";
    }
    write_file(out_path(opt, "analytic_pq.csv"), out.str());
    write_run_meta(opt, cfg, "analytic");
    std::cout << "analytic: " << (n + 1) << " samples -> " << out_path(opt, "analytic_pq.csv")
              << "\n";
    return 0;
}

int run_command(const std::string& cmd, const Options& opt) {
    try {
        if (cmd == "scan") return cmd_scan(opt);
        if (cmd == "fit") return cmd_fit(opt, false);
        if (cmd == "comply") return cmd_fit(opt, true);
        if (cmd == "step") return cmd_step(opt);
        if (cmd == "pv") return cmd_pv(opt);
        if (cmd == "case") return cmd_case(opt);
        if (cmd == "analytic") return cmd_analytic(opt);
        std::cerr << "error: unknown command '" << cmd << "'\n";
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace gfmeq::cli
