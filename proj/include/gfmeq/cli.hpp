#pragma once

#include <string>

namespace gfmeq::cli {

struct Options {
    std::string config_path;
    std::string out_dir = ".";
    std::string spectrum_path;  // fit / comply input file
    std::string fit_json_path;  // optional equivalent source for step / pv
    bool keep_raw = false;
    bool stable_output = false;
    bool has_eps_override = false;
    double eps_override = 0.01;
    int parallel = 0;  // 0 = take the config's value
    bool has_points_override = false;
    int points_override = 0;
};

/// Dispatches one subcommand. Exit codes: 0 success, 1 validation error,
/// 2 numerical failure (including boundary-solution fits), 3 compliance fail.
int run_command(const std::string& cmd, const Options& opt);

int cmd_scan(const Options& opt);
int cmd_fit(const Options& opt, bool comply_only);
int cmd_step(const Options& opt);
int cmd_pv(const Options& opt);
int cmd_case(const Options& opt);
int cmd_analytic(const Options& opt);

}  // namespace gfmeq::cli
