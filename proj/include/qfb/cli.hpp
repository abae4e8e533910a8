#pragma once

// Subcommand implementations behind the qfbsim executable. Each returns a
// versioned JSON report (or writes CSV) and throws the library's exception
// types; the executable maps those to exit codes.

#include <ostream>
#include <string>

#include "json.hpp"
#include "qfb/config.hpp"

namespace qfb {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 2,
  kExitNumericalFailure = 3,
  kExitVerificationFailure = 4,
};

nlohmann::json cmd_design(const ExperimentConfig& cfg);

/// Writes one trajectory as CSV: a "# schema_version" comment, the header
/// row, then one row per recorded time at 17 significant digits.
void cmd_simulate(const ExperimentConfig& cfg, std::ostream& csv);

nlohmann::json cmd_ensemble(const ExperimentConfig& cfg, unsigned jobs = 1);

/// Fock oracle against the Gaussian filter; "pass" is false when the error
/// exceeds the tolerance or halving dt fails to halve it.
nlohmann::json cmd_verify(const ExperimentConfig& cfg);

/// Machine-readable error object for an in-flight exception.
nlohmann::json error_report(const std::exception& e);
int exit_code_for(const std::exception& e);

/// %.17g formatting.
std::string format_double(double v);

}  // namespace qfb
