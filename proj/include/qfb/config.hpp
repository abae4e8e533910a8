#pragma once

// Experiment configuration: a single JSON document with explicit units.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qfb/feedback.hpp"
#include "qfb/gaussian_filter.hpp"
#include "qfb/lqg.hpp"
#include "qfb/model.hpp"

namespace qfb {

inline constexpr int kSchemaVersion = 1;

struct InitSpec {
  bool thermal = true;
  double nbar = 10.0;
  GaussianState state;         // used when !thermal
  bool preconverge = false;    // start covariances at their steady state
};

struct SweepSpec {
  std::string parameter;  // "q" or "k"
  std::vector<double> values;
};

struct VerifySpec {
  int dim = 40;
  double dt = 1e-4;
  double horizon = 5.0;
  double tolerance = 1e-3;
  bool check_order = true;
  bool use_config_init = false;  // otherwise the ground state
};

struct ExperimentConfig {
  std::string units = "nondimensional";  // or "si"
  PhysicalParams params;
  std::optional<CavitySetup> cavity;     // k derived from it when present
  ControllerSpec controller;
  std::optional<double> q_scalar;        // LQG weighting; designs K when set
  ActuationStructure actuation = ActuationStructure::Full;
  InitSpec init;
  double horizon = 10.0;
  double dt = 1e-3;
  std::size_t n_traj = 100;
  std::uint64_t base_seed = 0;
  std::optional<double> tail_start;
  std::optional<SweepSpec> sweep;
  VerifySpec verify;
  std::vector<std::string> outputs;
};

/// Parses and validates a configuration. Throws ParameterError naming the
/// offending field; nothing is run until every precondition holds.
ExperimentConfig parse_config(const nlohmann::json& doc);

ExperimentConfig load_config(const std::filesystem::path& path);

/// The LQG design implied by the config: energy weights with q (default 1).
ControlDesign config_design(const ExperimentConfig& cfg);

/// Controller with K filled from the LQG design when q is given and no
/// explicit gain was supplied.
ControllerSpec resolved_controller(const ExperimentConfig& cfg);

GaussianState initial_state(const ExperimentConfig& cfg);

}  // namespace qfb
