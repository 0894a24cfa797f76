#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gfmeq/cli.hpp"
#include "gfmeq/core.hpp"

namespace fs = std::filesystem;
using namespace gfmeq;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("gfmeq_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int counter() {
        static int n = 0;
        return n++;
    }
    std::string file(const std::string& name, const std::string& text) const {
        const fs::path p = path / name;
        std::ofstream(p) << text;
        return p.string();
    }
    std::string out() const { return (path / "out").string(); }
    std::string read(const std::string& name) const {
        std::ifstream in(path / "out" / name);
        REQUIRE(in.good());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
    bool exists(const std::string& name) const { return fs::exists(path / "out" / name); }
};

const char* kIdvsConfig = R"({
  "base": {"s_base_va": 2e8, "v_base_v": 230e3, "f1_hz": 60},
  "device": {"type": "idvs", "x": 0.48, "x_over_r": 10},
  "scan": {"n_points": 8, "min_settle_s": 0.6, "drift_check_periods": 0, "parallel": 2},
  "fit": {"eps": 0.01},
  "compliance_location": "HV"
})";

cli::Options opts(const TempDir& td, const std::string& cfg_path) {
    cli::Options o;
    o.config_path = cfg_path;
    o.out_dir = td.out();
    o.stable_output = true;
    return o;
}

}  // namespace

TEST_CASE("scan writes the spectrum pair and is byte-deterministic") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", kIdvsConfig);
    cli::Options o = opts(td, cfg);

    CHECK(cli::run_command("scan", o) == 0);
    REQUIRE(td.exists("spectrum.csv"));
    REQUIRE(td.exists("spectrum.json"));
    const std::string first = td.read("spectrum.csv");
    const std::string meta1 = td.read("run_meta.json");

    CHECK(cli::run_command("scan", o) == 0);
    CHECK(td.read("spectrum.csv") == first);
    CHECK(td.read("run_meta.json") == meta1);

    // Row count: requested points (none guarded on this grid).
    std::istringstream rows(first);
    std::string line;
    int n = 0;
    while (std::getline(rows, line))
        if (!line.empty()) ++n;
    CHECK(n == 1 + 8);
}

TEST_CASE("points override of zero fails validation naming the field") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", kIdvsConfig);
    cli::Options o = opts(td, cfg);
    o.has_points_override = true;
    o.points_override = 0;
    CHECK(cli::run_command("scan", o) == 1);
    CHECK_THROWS_WITH_AS(cli::cmd_scan(o), doctest::Contains("scan.n_points"), ValidationError);
}

TEST_CASE("fit pipeline: pass at HV, overlay written, comply skips the overlay") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", kIdvsConfig);
    cli::Options o = opts(td, cfg);
    REQUIRE(cli::run_command("scan", o) == 0);

    o.spectrum_path = td.out() + "/spectrum.csv";
    CHECK(cli::run_command("fit", o) == 0);
    REQUIRE(td.exists("fit.json"));
    REQUIRE(td.exists("fit_overlay.csv"));

    const auto rep = nlohmann::json::parse(td.read("fit.json"));
    CHECK(rep["pass"].get<bool>());
    CHECK(rep["location"] == "HV");
    CHECK(rep["x_eff"].get<double>() == doctest::Approx(0.48).epsilon(1e-3));
    CHECK(rep["r_eff"].get<double>() == doctest::Approx(0.048).epsilon(1e-2));

    fs::remove(fs::path(td.out()) / "fit_overlay.csv");
    CHECK(cli::run_command("comply", o) == 0);
    CHECK_FALSE(td.exists("fit_overlay.csv"));
}

TEST_CASE("tightening eps turns the verdict into a compliance failure (exit 3)") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", kIdvsConfig);
    cli::Options o = opts(td, cfg);
    REQUIRE(cli::run_command("scan", o) == 0);
    o.spectrum_path = td.out() + "/spectrum.csv";
    o.has_eps_override = true;
    o.eps_override = 1.0e-12;
    CHECK(cli::run_command("fit", o) == 3);
    const auto rep = nlohmann::json::parse(td.read("fit.json"));
    CHECK_FALSE(rep["eps_satisfied"].get<bool>());
    CHECK_FALSE(rep["pass"].get<bool>());
}

TEST_CASE("a fit that converges onto a bound exits 2 with the report written") {
    TempDir td;
    // Spectrum of a branch whose resistance lies below the configured bounds.
    std::ostringstream csv;
    csv << "f_hz,y_dd_re,y_dd_im,y_dq_re,y_dq_im,y_qd_re,y_qd_im,y_qq_re,y_qq_im\n";
    for (int i = 0; i < 20; ++i) {
        const double f = 5.0 + 5.0 * i;
        if (std::abs(f - 60.0) < 1.0) continue;
        const Complex diag(1.0e-4, f / 60.0 * 0.48);
        const Complex y = Complex(-0.48, 0.0) / (diag * diag + Complex(0.48 * 0.48, 0.0));
        csv << f << ",,,,," << y.real() << "," << y.imag() << ",,\n";
    }
    const std::string cfg = td.file("cfg.json", R"({
      "device": {"type": "idvs", "x": 0.48, "x_over_r": 10},
      "fit": {"bounds_r": [0.01, 0.5]}
    })");
    cli::Options o = opts(td, cfg);
    o.spectrum_path = td.file("bound.csv", csv.str());
    CHECK(cli::run_command("fit", o) == 2);
    REQUIRE(td.exists("fit.json"));
    const auto rep = nlohmann::json::parse(td.read("fit.json"));
    CHECK(rep["boundary_solution"].get<bool>());
}

TEST_CASE("fit on a file without the qd column fails validation") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", kIdvsConfig);
    const std::string bad = td.file("bad.csv",
                                    "f_hz,y_dd_re,y_dd_im,y_dq_re,y_dq_im,y_qd_re,y_qd_im,"
                                    "y_qq_re,y_qq_im\n5,1,0,,,,,,\n10,1,0,,,,,,\n");
    cli::Options o = opts(td, cfg);
    o.spectrum_path = bad;
    CHECK(cli::run_command("fit", o) == 1);
}

TEST_CASE("step command reuses a previous fit and writes paired traces") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", kIdvsConfig);
    cli::Options o = opts(td, cfg);
    REQUIRE(cli::run_command("scan", o) == 0);
    o.spectrum_path = td.out() + "/spectrum.csv";
    REQUIRE(cli::run_command("fit", o) == 0);

    o.fit_json_path = td.out() + "/fit.json";
    CHECK(cli::run_command("step", o) == 0);
    REQUIRE(td.exists("step.json"));
    REQUIRE(td.exists("step_full.csv"));
    REQUIRE(td.exists("step_equiv.csv"));
    const auto rep = nlohmann::json::parse(td.read("step.json"));
    CHECK(rep["rms_error_q"].get<double>() < 0.01);  // source refit onto itself
}

TEST_CASE("pv command reports the analytic transfer limit for a lossless source") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", R"({
      "device": {"type": "idvs", "x": 0.5, "r": 0.0, "l": 0.5},
      "pv": {"base_p": 0.125, "base_q": 0.0, "step_p": 0.05, "step_q": 0.0,
             "refine_rounds": 6}
    })");
    cli::Options o = opts(td, cfg);
    CHECK(cli::run_command("pv", o) == 0);
    REQUIRE(td.exists("pv.json"));
    REQUIRE(td.exists("pv_full.csv"));
    const auto rep = nlohmann::json::parse(td.read("pv.json"));
    CHECK(rep["p_max_full"].get<double>() == doctest::Approx(1.0).epsilon(0.01));
    CHECK(td.read("pv_full.csv").rfind("p_load_pu,v_poi_pu\n", 0) == 0);
}

TEST_CASE("case command writes the comparison report") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", R"({
      "device": {"type": "droop_gfm"},
      "case": {"id": "I", "z_gfm_x": 0.2}
    })");
    cli::Options o = opts(td, cfg);
    CHECK(cli::run_command("case", o) == 0);
    const auto rep = nlohmann::json::parse(td.read("case.json"));
    CHECK(rep["case"] == "I");
    REQUIRE(rep["entries"].size() == 3);
    CHECK(rep["entries"][0]["label"] == "gfm_idealistic");
}

TEST_CASE("analytic command writes the closed-form trace, zero step is flat") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", R"({
      "device": {"type": "idvs", "x": 0.33, "x_over_r": 10},
      "analytic": {"v1": 1.0, "v2": 1.0, "delta1_deg": 0, "delta2_deg": 0,
                   "t_end_s": 0.02, "dt_s": 1e-3}
    })");
    cli::Options o = opts(td, cfg);
    CHECK(cli::run_command("analytic", o) == 0);
    const std::string csv = td.read("analytic_pq.csv");
    std::istringstream rows(csv);
    std::string line;
    std::getline(rows, line);
    CHECK(line == "t,p,q");
    std::string first_data, last;
    while (std::getline(rows, line))
        if (!line.empty()) {
            if (first_data.empty()) first_data = line;
            last = line;
        }
    // Zero disturbance: constant columns.
    CHECK(first_data.substr(first_data.find(',')) == last.substr(last.find(',')));
}

TEST_CASE("analytic command rejects an empty time grid") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", R"({
      "device": {"type": "idvs", "x": 0.33, "x_over_r": 10},
      "analytic": {"t_end_s": 0.0}
    })");
    CHECK(cli::run_command("analytic", opts(td, cfg)) == 1);
}

TEST_CASE("missing config and malformed config map to exit 1") {
    TempDir td;
    cli::Options o;
    o.out_dir = td.out();
    CHECK(cli::run_command("scan", o) == 1);
    o.config_path = td.file("broken.json", "{ nope");
    CHECK(cli::run_command("scan", o) == 1);
    o.config_path = td.file("nodevice.json", "{}");
    CHECK(cli::run_command("scan", o) == 1);
    CHECK(cli::run_command("frobnicate", o) == 1);
}

TEST_CASE("imported-trace device round-trips a kept-raw scan") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", R"({
      "base": {"f1_hz": 60},
      "device": {"type": "idvs", "x": 0.48, "x_over_r": 10},
      "scan": {"n_points": 4, "f_min_hz": 5, "f_max_hz": 40,
               "min_settle_s": 0.6, "drift_check_periods": 0, "parallel": 2}
    })");
    cli::Options o = opts(td, cfg);
    o.keep_raw = true;
    REQUIRE(cli::run_command("scan", o) == 0);
    REQUIRE(td.exists("raw_manifest.json"));
    const std::string direct = td.read("spectrum.csv");

    TempDir td2;
    const std::string cfg2 = td2.file("cfg2.json", std::string(R"({
      "base": {"f1_hz": 60},
      "device": {"type": "imported", "manifest": ")") +
                                                      td.out() + R"(/raw_manifest.json"}
    })");
    cli::Options o2 = opts(td2, cfg2);
    REQUIRE(cli::run_command("scan", o2) == 0);
    CHECK(td2.read("spectrum.csv") == direct);
}

TEST_CASE("installed binary end-to-end smoke run") {
    TempDir td;
    const std::string cfg = td.file("cfg.json", R"({
      "device": {"type": "idvs", "x": 0.33, "x_over_r": 10},
      "analytic": {"t_end_s": 0.01, "dt_s": 1e-3}
    })");
    const std::string bin = "../tools/gfmeq";
    if (!fs::exists(bin)) return;  // running outside the build tree
    const std::string cmd = bin + " analytic --config " + cfg + " --out " + td.out() +
                            " --stable-output > /dev/null 2>&1";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(td.exists("analytic_pq.csv"));
}
