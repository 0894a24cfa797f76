#include <CLI11.hpp>

#include "gfmeq/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Grid-forming inverter effective-impedance toolkit"};
    app.require_subcommand(1);

    gfmeq::cli::Options opt;
    std::string eps_str;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", opt.config_path, "JSON run configuration");
        if (needs_config) c->required();
        sub->add_option("--out", opt.out_dir, "output directory (created if missing)");
        sub->add_flag("--keep-raw", opt.keep_raw, "also write raw per-point scan traces");
        sub->add_flag("--stable-output", opt.stable_output,
                      "omit volatile metadata fields (timestamps) from outputs");
        sub->add_option("--parallel", opt.parallel, "worker threads for sweep points");
        sub->add_option("--eps", eps_str, "override the fit error threshold");
    };

    auto* scan = app.add_subcommand("scan", "measure the admittance spectrum at the POI");
    add_common(scan, true);
    int points = 0;
    auto* points_opt = scan->add_option("--points", points, "override scan.n_points");

    auto* fitc = app.add_subcommand("fit", "fit an effective R-L to a spectrum and check compliance");
    add_common(fitc, true);
    fitc->add_option("spectrum", opt.spectrum_path, "spectrum CSV or JSON file")->required();

    auto* comply = app.add_subcommand("comply", "fit and compliance check only (no overlay file)");
    add_common(comply, true);
    comply->add_option("spectrum", opt.spectrum_path, "spectrum CSV or JSON file")->required();

    auto* step = app.add_subcommand("step", "compare the device and its equivalent under a voltage step");
    add_common(step, true);
    step->add_option("--fit-json", opt.fit_json_path, "equivalent parameters from a previous fit");

    auto* pv = app.add_subcommand("pv", "trace the P-V curve of the islanded device");
    add_common(pv, true);
    pv->add_option("--fit-json", opt.fit_json_path, "also trace the fitted equivalent");

    auto* casec = app.add_subcommand("case", "run one of the step-response case studies");
    add_common(casec, true);

    auto* analytic = app.add_subcommand("analytic", "closed-form transient P/Q trace");
    add_common(analytic, true);

    CLI11_PARSE(app, argc, argv);

    if (!eps_str.empty()) {
        try {
            opt.eps_override = std::stod(eps_str);
            opt.has_eps_override = true;
        } catch (const std::exception&) {
            std::fprintf(stderr, "error: --eps expects a number, got '%s'\n", eps_str.c_str());
            return 1;
        }
    }
    if (points_opt->count() > 0) {
        opt.has_points_override = true;
        opt.points_override = points;
    }

    const std::string cmd = app.get_subcommands().front()->get_name();
    return gfmeq::cli::run_command(cmd, opt);
}
