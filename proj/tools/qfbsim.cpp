// qfbsim: design | simulate | ensemble | verify for the measured oscillator.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "qfb/cli.hpp"
#include "qfb/errors.hpp"

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
};

void add_common(CLI::App* sub, Options& opt) {
  sub->add_option("--config", opt.config, "experiment JSON")->required();
  sub->add_option("--out", opt.out, "output path (default stdout)");
  sub->add_option("--seed", opt.seed, "override base_seed");
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feedback control of a continuously measured oscillator"};
  app.require_subcommand(1);
  Options opt;
  CLI::App* design = app.add_subcommand("design", "LQG gain report");
  CLI::App* simulate = app.add_subcommand("simulate", "one trajectory as CSV");
  CLI::App* ensemble = app.add_subcommand("ensemble", "ensemble statistics");
  CLI::App* verify = app.add_subcommand("verify", "number-basis oracle check");
  for (CLI::App* sub : {design, simulate, ensemble, verify}) add_common(sub, opt);
  ensemble->add_option("--jobs", opt.jobs, "worker threads")
      ->check(CLI::PositiveNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : qfb::kExitConfigError;
  }

  try {
    qfb::ExperimentConfig cfg = qfb::load_config(opt.config);
    if (opt.seed) cfg.base_seed = *opt.seed;
    if (*simulate) {
      std::ostringstream csv;
      qfb::cmd_simulate(cfg, csv);
      emit(csv.str(), opt.out);
      return qfb::kExitOk;
    }
    nlohmann::json report;
    if (*design) report = qfb::cmd_design(cfg);
    if (*ensemble) report = qfb::cmd_ensemble(cfg, opt.jobs);
    if (*verify) report = qfb::cmd_verify(cfg);
    emit(report.dump(2) + "\n", opt.out);
    if (*verify && !report.at("pass").get<bool>()) {
      return qfb::kExitVerificationFailure;
    }
    return qfb::kExitOk;
  } catch (const std::exception& e) {
    std::cout << qfb::error_report(e).dump(2) << "\n";
    return qfb::exit_code_for(e);
  }
}
