#include "qfb/config.hpp"

#include <cmath>
#include <fstream>

#include "qfb/errors.hpp"

namespace qfb {

using nlohmann::json;

namespace {

constexpr double kSiHbar = 1.054571817e-34;

double get_number(const json& obj, const char* field, double fallback) {
  if (!obj.contains(field)) return fallback;
  const json& v = obj.at(field);
  if (!v.is_number()) throw ParameterError(field, "expected a number");
  const double out = v.get<double>();
  if (!std::isfinite(out)) throw ParameterError(field, "must be finite");
  return out;
}

bool get_bool(const json& obj, const char* field, bool fallback) {
  if (!obj.contains(field)) return fallback;
  if (!obj.at(field).is_boolean()) throw ParameterError(field, "expected a boolean");
  return obj.at(field).get<bool>();
}

std::uint64_t get_u64(const json& obj, const char* field, std::uint64_t fallback) {
  if (!obj.contains(field)) return fallback;
  const json& v = obj.at(field);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                  v.get<std::int64_t>() < 0)) {
    throw ParameterError(field, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

const json& get_object(const json& obj, const char* field) {
  static const json empty = json::object();
  if (!obj.contains(field)) return empty;
  if (!obj.at(field).is_object()) throw ParameterError(field, "expected an object");
  return obj.at(field);
}

Eigen::Matrix2d get_matrix(const json& v, const char* field) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_array() || !v[1].is_array() ||
      v[0].size() != 2 || v[1].size() != 2) {
    throw ParameterError(field, "expected a 2x2 nested array");
  }
  Eigen::Matrix2d m;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      if (!v[i][j].is_number()) throw ParameterError(field, "expected numbers");
      m(i, j) = v[i][j].get<double>();
    }
  }
  return m;
}

FeedbackMode parse_mode(const std::string& s) {
  if (s == "none") return FeedbackMode::None;
  if (s == "estimation") return FeedbackMode::Estimation;
  if (s == "direct") return FeedbackMode::Direct;
  if (s == "combined") return FeedbackMode::Combined;
  throw ParameterError("mode", "expected none|estimation|direct|combined");
}

CavitySetup parse_cavity(const json& c) {
  CavitySetup s;
  const std::string kind = c.value("kind", std::string("mirror"));
  if (kind == "mirror") {
    s.kind = CavityKind::Mirror;
  } else if (kind == "atom") {
    s.kind = CavityKind::Atom;
  } else {
    throw ParameterError("kind", "expected mirror|atom");
  }
  s.gamma = get_number(c, "gamma", s.gamma);
  s.omega0 = get_number(c, "omega0", s.omega0);
  s.laser_power = get_number(c, "laser_power", s.laser_power);
  s.g_m = get_number(c, "g_m", s.g_m);
  s.g0 = get_number(c, "g0", s.g0);
  s.k0 = get_number(c, "k0", s.k0);
  s.delta = get_number(c, "delta", s.delta);
  s.beta_homodyne = get_number(c, "beta_homodyne", s.beta_homodyne);
  s.validate();
  return s;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  if (!doc.is_object()) throw ParameterError("config", "expected a JSON object");
  ExperimentConfig cfg;
  if (doc.contains("schema_version")) {
    if (!doc.at("schema_version").is_number_integer() ||
        doc.at("schema_version").get<int>() != kSchemaVersion) {
      throw ParameterError("schema_version", "unsupported schema version");
    }
  }
  cfg.units = doc.value("units", cfg.units);
  if (cfg.units != "nondimensional" && cfg.units != "si") {
    throw ParameterError("units", "expected nondimensional|si");
  }

  const json& p = get_object(doc, "params");
  cfg.params.hbar = get_number(p, "hbar", cfg.units == "si" ? kSiHbar : 1.0);
  cfg.params.m = get_number(p, "m", 1.0);
  cfg.params.omega = get_number(p, "omega", 1.0);
  cfg.params.k = get_number(p, "k", 0.0);
  cfg.params.eta = get_number(p, "eta", 1.0);
  if (doc.contains("cavity")) {
    cfg.cavity = parse_cavity(get_object(doc, "cavity"));
    if (get_bool(doc.at("cavity"), "derive_k", true)) {
      cfg.params.k = measurement_constant(*cfg.cavity, cfg.params.hbar);
    }
  }
  cfg.params.validate();

  const json& c = get_object(doc, "controller");
  ControllerSpec& ctl = cfg.controller;
  if (c.contains("mode")) {
    if (!c.at("mode").is_string()) throw ParameterError("mode", "expected a string");
    ctl.mode = parse_mode(c.at("mode").get<std::string>());
  }
  if (c.contains("k_gain")) ctl.k_gain = get_matrix(c.at("k_gain"), "k_gain");
  ctl.alpha = get_number(c, "alpha", 0.0);
  ctl.beta = get_number(c, "beta", 0.0);
  ctl.gamma_x = get_number(c, "gamma_x", 0.0);
  ctl.gamma_p = get_number(c, "gamma_p", 0.0);
  ctl.cancel_noise = get_bool(c, "cancel_noise", false);
  if (c.contains("q")) {
    cfg.q_scalar = get_number(c, "q", 1.0);
    if (!(*cfg.q_scalar > 0.0)) throw ParameterError("q", "must be positive");
  }
  const std::string actuation = c.value("actuation", std::string("full"));
  if (actuation == "full") {
    cfg.actuation = ActuationStructure::Full;
  } else if (actuation == "position_only") {
    cfg.actuation = ActuationStructure::PositionOnly;
  } else {
    throw ParameterError("actuation", "expected full|position_only");
  }

  const json& init = get_object(doc, "init");
  cfg.init.preconverge = get_bool(init, "preconverge", false);
  if (init.contains("v_x") || init.contains("v_p") || init.contains("c")) {
    cfg.init.thermal = false;
    GaussianState& s = cfg.init.state;
    s.mean_x = get_number(init, "mean_x", 0.0);
    s.mean_p = get_number(init, "mean_p", 0.0);
    s.v_x = get_number(init, "v_x", 0.0);
    s.v_p = get_number(init, "v_p", 0.0);
    s.c = get_number(init, "c", 0.0);
    if (!(s.v_x > 0.0)) throw ParameterError("v_x", "must be positive");
    if (!(s.v_p > 0.0)) throw ParameterError("v_p", "must be positive");
    if (s.v_x * s.v_p - s.c * s.c <
        0.25 * cfg.params.hbar * cfg.params.hbar * (1.0 - 1e-12)) {
      throw ParameterError("c", "initial covariances violate the uncertainty relation");
    }
  } else {
    cfg.init.thermal = true;
    cfg.init.nbar = get_number(init, "thermal_nbar", 10.0);
    if (!(cfg.init.nbar >= 0.5)) {
      throw ParameterError("thermal_nbar", "must be at least 1/2");
    }
    cfg.init.state.mean_x = get_number(init, "mean_x", 0.0);
    cfg.init.state.mean_p = get_number(init, "mean_p", 0.0);
    if (!(cfg.params.omega > 0.0)) {
      throw ParameterError("omega", "thermal prior needs omega > 0");
    }
  }
  if (cfg.init.preconverge && !(cfg.params.k > 0.0 && cfg.params.omega > 0.0)) {
    throw ParameterError("preconverge", "needs k > 0 and omega > 0");
  }

  cfg.horizon = get_number(doc, "horizon", cfg.horizon);
  if (!(cfg.horizon > 0.0)) throw ParameterError("horizon", "must be positive");
  cfg.dt = get_number(doc, "dt", cfg.dt);
  if (!(cfg.dt > 0.0)) throw ParameterError("dt", "must be positive");
  if (cfg.dt > cfg.horizon) throw ParameterError("dt", "exceeds the horizon");
  cfg.n_traj = static_cast<std::size_t>(get_u64(doc, "n_traj", cfg.n_traj));
  if (cfg.n_traj < 1) throw ParameterError("n_traj", "must be at least 1");
  cfg.base_seed = get_u64(doc, "base_seed", cfg.base_seed);
  if (doc.contains("tail_start")) {
    cfg.tail_start = get_number(doc, "tail_start", 0.0);
    if (!(*cfg.tail_start >= 0.0) || *cfg.tail_start >= cfg.horizon) {
      throw ParameterError("tail_start", "must lie in [0, horizon)");
    }
  }

  if (doc.contains("sweep")) {
    const json& s = get_object(doc, "sweep");
    SweepSpec sweep;
    sweep.parameter = s.value("parameter", std::string());
    if (sweep.parameter != "q" && sweep.parameter != "k") {
      throw ParameterError("parameter", "sweep parameter must be q or k");
    }
    if (!s.contains("values") || !s.at("values").is_array() ||
        s.at("values").empty()) {
      throw ParameterError("values", "expected a non-empty array");
    }
    for (const json& v : s.at("values")) {
      if (!v.is_number() || !(v.get<double>() > 0.0)) {
        throw ParameterError("values", "sweep values must be positive numbers");
      }
      sweep.values.push_back(v.get<double>());
    }
    cfg.sweep = sweep;
  }

  const json& v = get_object(doc, "verify");
  cfg.verify.dim = static_cast<int>(get_u64(v, "dim", 40));
  if (cfg.verify.dim < 4) throw ParameterError("dim", "must be at least 4");
  cfg.verify.dt = get_number(v, "dt", cfg.verify.dt);
  if (!(cfg.verify.dt > 0.0)) throw ParameterError("dt", "must be positive");
  cfg.verify.horizon = get_number(v, "horizon", cfg.verify.horizon);
  if (!(cfg.verify.horizon > cfg.verify.dt)) {
    throw ParameterError("horizon", "verify horizon must exceed dt");
  }
  cfg.verify.tolerance = get_number(v, "tolerance", cfg.verify.tolerance);
  if (!(cfg.verify.tolerance > 0.0)) throw ParameterError("tolerance", "must be positive");
  cfg.verify.check_order = get_bool(v, "check_order", true);
  const std::string vinit = v.value("init", std::string("ground"));
  if (vinit != "ground" && vinit != "config") {
    throw ParameterError("init", "verify init must be ground|config");
  }
  cfg.verify.use_config_init = vinit == "config";

  if (doc.contains("outputs")) {
    if (!doc.at("outputs").is_array()) throw ParameterError("outputs", "expected an array");
    for (const json& o : doc.at("outputs")) {
      if (!o.is_string()) throw ParameterError("outputs", "expected strings");
      cfg.outputs.push_back(o.get<std::string>());
    }
  }

  // Fail fast on everything the runs will need.
  resolved_controller(cfg).validate();
  (void)initial_state(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("config", "cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParameterError("config", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

ControlDesign config_design(const ExperimentConfig& cfg) {
  ControlDesign d;
  d.a = harmonic_drift(cfg.params);
  d.b = cfg.actuation == ActuationStructure::Full
            ? Eigen::Matrix2d::Identity()
            : Eigen::Matrix2d(Eigen::Vector2d(0.0, 1.0).asDiagonal());
  d.p_weight = energy_weight(cfg.params);
  d.q_weight = energy_weight(cfg.params);
  d.q_scalar = cfg.q_scalar.value_or(1.0);
  return d;
}

ControllerSpec resolved_controller(const ExperimentConfig& cfg) {
  ControllerSpec ctl = cfg.controller;
  if (ctl.uses_estimation() && cfg.q_scalar && ctl.k_gain.isZero(0.0) &&
      ctl.gamma_x == 0.0 && ctl.gamma_p == 0.0) {
    ctl.k_gain = harmonic_design(cfg.params, *cfg.q_scalar, cfg.actuation).k_gain;
  }
  return ctl;
}

GaussianState initial_state(const ExperimentConfig& cfg) {
  GaussianState s = cfg.init.thermal
                        ? thermal_state(cfg.params, cfg.init.nbar,
                                        cfg.init.state.mean_x,
                                        cfg.init.state.mean_p)
                        : cfg.init.state;
  if (cfg.init.preconverge) {
    const Covariances ss = steady_state_covariances(cfg.params);
    s.v_x = ss.v_x;
    s.v_p = ss.v_p;
    s.c = ss.c;
  }
  s.t = 0.0;
  return s;
}

}  // namespace qfb
