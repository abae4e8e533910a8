#include "qfb/cli.hpp"

#include <cmath>
#include <cstdio>
#include <algorithm>
#include <Eigen/Eigenvalues>

#include "qfb/errors.hpp"
#include "qfb/verify.hpp"

namespace qfb {

using nlohmann::json;

namespace {

json to_json(const Eigen::Matrix2d& m) {
  return json::array({json::array({m(0, 0), m(0, 1)}),
                      json::array({m(1, 0), m(1, 1)})});
}

json to_json(const Covariances& c) {
  return {{"v_x", c.v_x}, {"v_p", c.v_p}, {"c", c.c}};
}

json to_json(const ExcessCovariances& e) {
  return {{"ve_x", e.ve_x}, {"ve_p", e.ve_p}, {"ce", e.ce}};
}

json to_json(const CostAccumulator& c) {
  return {{"j_state", c.j_state},
          {"j_control", c.j_control},
          {"j_floor", c.j_floor},
          {"total", c.total()}};
}

json params_json(const PhysicalParams& p) {
  return {{"m", p.m}, {"omega", p.omega}, {"hbar", p.hbar}, {"k", p.k},
          {"eta", p.eta}};
}

json header(const char* command, const ExperimentConfig& cfg) {
  return {{"schema_version", kSchemaVersion},
          {"command", command},
          {"units", cfg.units},
          {"params", params_json(cfg.params)}};
}

json steady_state_json(const PhysicalParams& p) {
  if (!(p.k > 0.0 && p.omega > 0.0)) return nullptr;
  const Covariances ss = steady_state_covariances(p);
  const RegimeNumbers rn = regime_numbers(p);
  return {{"r", rn.r},
          {"xi", rn.xi},
          {"covariances", to_json(ss)},
          {"tilde", to_json(to_tilde(ss, p))},
          {"purity", purity(ss, p.hbar)}};
}

/// Closed-form excess triple when the loop matches one of the analytic
/// damping variants.
json analytic_excess(const ExperimentConfig& cfg, const ControllerSpec& ctl) {
  const PhysicalParams& p = cfg.params;
  if (ctl.mode != FeedbackMode::Estimation || !(p.k > 0.0 && p.omega > 0.0)) {
    return nullptr;
  }
  const Covariances cond = to_tilde(steady_state_covariances(p), p);
  const double r = regime_numbers(p).r;
  const Eigen::Matrix2d k = ctl.estimation_gain();
  const Eigen::Matrix2d k_full = k(0, 0) * Eigen::Matrix2d::Identity();
  DampingVariant variant;
  double q_factor;
  if (k(0, 0) > 0.0 && k.isApprox(k_full, 1e-12)) {
    variant = DampingVariant::FullDamping;
    q_factor = p.omega / (2.0 * k(0, 0));
  } else if (cfg.q_scalar && cfg.actuation == ActuationStructure::PositionOnly &&
             cfg.controller.k_gain.isZero(0.0)) {
    variant = DampingVariant::PositionOnly;
    q_factor = *cfg.q_scalar * p.omega / 2.0;
  } else {
    return nullptr;
  }
  const ExcessSteadyState ss = excess_cov_steady_state(cond, q_factor, r, variant);
  json out = to_json(ss.value);
  out["variant"] = variant == DampingVariant::FullDamping ? "full_damping"
                                                          : "position_only";
  out["q_factor"] = q_factor;
  out["warning"] = ss.warning ? json(*ss.warning) : json(nullptr);
  return out;
}

json ensemble_record(const ExperimentConfig& cfg, unsigned jobs) {
  const ControllerSpec ctl = resolved_controller(cfg);
  EnsembleOptions opts;
  opts.jobs = jobs;
  opts.tail_start = cfg.tail_start;
  opts.cost_weights = config_design(cfg);
  const EnsembleStats st =
      run_ensemble(cfg.params, ctl, initial_state(cfg), cfg.horizon, cfg.dt,
                   cfg.n_traj, cfg.base_seed, opts);
  json rec;
  rec["params"] = params_json(cfg.params);
  if (cfg.q_scalar) rec["q"] = *cfg.q_scalar;
  rec["k_gain"] = to_json(ctl.estimation_gain());
  rec["n_traj"] = st.n_traj;
  rec["tail_start"] = st.tail_start;
  rec["horizon"] = st.horizon;
  rec["empirical"] = to_json(st.excess);
  rec["empirical_raw"] = to_json(st.excess_raw);
  rec["standard_error"] =
      st.standard_error ? to_json(*st.standard_error) : json(nullptr);
  rec["final_excess"] = to_json(st.final_excess);
  rec["analytic"] = analytic_excess(cfg, ctl);
  rec["conditional"] = to_json(st.conditional);
  rec["mean_x"] = st.mean_x;
  rec["mean_p"] = st.mean_p;
  rec["mean_cost"] = to_json(st.mean_cost);
  rec["cost_standard_error"] =
      st.cost_standard_error ? json(*st.cost_standard_error) : json(nullptr);
  return rec;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json cmd_design(const ExperimentConfig& cfg) {
  const PhysicalParams& p = cfg.params;
  const double q = cfg.q_scalar.value_or(1.0);
  const ControlDesign d = harmonic_design(p, q, cfg.actuation);
  const Eigen::Matrix2d closed = d.a - d.b * d.k_gain;
  const Eigen::EigenSolver<Eigen::Matrix2d> es(closed);

  json out = header("design", cfg);
  out["q"] = q;
  out["actuation"] =
      cfg.actuation == ActuationStructure::Full ? "full" : "position_only";
  out["k_gain"] = to_json(d.k_gain);
  out["riccati_solution"] = to_json(d.u_care);
  out["riccati_residual"] = d.residual;
  out["unique_stabilizing"] = d.unique;
  json eig = json::array();
  for (int i = 0; i < 2; ++i) {
    eig.push_back({{"re", es.eigenvalues()(i).real()},
                   {"im", es.eigenvalues()(i).imag()}});
  }
  out["closed_loop_eigenvalues"] = eig;
  out["steady_state"] = steady_state_json(p);

  json table = json::array();
  if (p.k > 0.0 && p.omega > 0.0) {
    std::vector<double> etas{0.25, 0.5, 0.75, 1.0};
    if (std::find(etas.begin(), etas.end(), p.eta) == etas.end()) {
      etas.push_back(p.eta);
    }
    for (double eta : etas) {
      PhysicalParams pe = p;
      pe.eta = eta;
      const Covariances ss = steady_state_covariances(pe);
      table.push_back({{"eta", eta},
                       {"v_x", ss.v_x},
                       {"v_p", ss.v_p},
                       {"c", ss.c},
                       {"purity", purity(ss, pe.hbar)},
                       {"sqrt_eta", std::sqrt(eta)}});
    }
  }
  out["purity_table"] = table;
  return out;
}

void cmd_simulate(const ExperimentConfig& cfg, std::ostream& csv) {
  const ControllerSpec ctl = resolved_controller(cfg);
  const TrajectoryRecord tr =
      simulate_trajectory(cfg.params, ctl, initial_state(cfg), cfg.horizon,
                          cfg.dt, cfg.base_seed, config_design(cfg));
  csv << "# schema_version: " << kSchemaVersion << '\n'
      << "t,mean_x,mean_p,v_x,v_p,c,dq,u_x,u_p,j_state,j_control,j_floor\n";
  for (std::size_t i = 0; i < tr.times.size(); ++i) {
    const GaussianState& s = tr.states[i];
    const CostAccumulator& j = tr.costs[i];
    const double vals[] = {tr.times[i], s.mean_x,  s.mean_p,
                           s.v_x,       s.v_p,     s.c,
                           tr.records[i], tr.controls[i](0), tr.controls[i](1),
                           j.j_state,   j.j_control, j.j_floor};
    for (std::size_t c = 0; c < std::size(vals); ++c) {
      if (c) csv << ',';
      csv << format_double(vals[c]);
    }
    csv << '\n';
  }
  if (!csv) throw std::runtime_error("failed writing trajectory CSV");
}

json cmd_ensemble(const ExperimentConfig& cfg, unsigned jobs) {
  json out = header("ensemble", cfg);
  out["base_seed"] = cfg.base_seed;
  json records = json::array();
  if (cfg.sweep) {
    out["sweep_parameter"] = cfg.sweep->parameter;
    for (double v : cfg.sweep->values) {
      ExperimentConfig c = cfg;
      if (cfg.sweep->parameter == "q") {
        c.q_scalar = v;
        c.controller.k_gain.setZero();
        c.controller.gamma_x = c.controller.gamma_p = 0.0;
      } else {
        c.params.k = v;
        c.params.validate();
      }
      json rec = ensemble_record(c, jobs);
      rec["sweep_value"] = v;
      records.push_back(std::move(rec));
    }
  } else {
    records.push_back(ensemble_record(cfg, jobs));
  }
  out["records"] = records;
  return out;
}

json cmd_verify(const ExperimentConfig& cfg) {
  const VerifySpec& v = cfg.verify;
  const PhysicalParams& p = cfg.params;
  ControllerSpec direct;
  if (cfg.controller.uses_estimation()) {
    throw ParameterError("mode", "verify supports none or direct feedback");
  }
  if (cfg.controller.uses_direct()) direct = cfg.controller;

  GaussianState init;
  if (v.use_config_init) {
    init = initial_state(cfg);
  } else {
    const Covariances g = ground_covariances(p);
    init.v_x = g.v_x;
    init.v_p = g.v_p;
    init.c = g.c;
  }
  const SmeIntegrator integrator(build_operators(v.dim, p), p);
  json out = header("verify", cfg);
  out["dim"] = v.dim;
  out["dt"] = v.dt;
  out["horizon"] = v.horizon;
  out["tolerance"] = v.tolerance;
  out["seed"] = cfg.base_seed;

  auto report = [](const OracleComparison& c) {
    return json{{"max_rel_error", c.max_rel_error},
                {"moment_errors",
                 {{"mean_x", c.moment_errors[0]},
                  {"mean_p", c.moment_errors[1]},
                  {"v_x", c.moment_errors[2]},
                  {"v_p", c.moment_errors[3]},
                  {"c", c.moment_errors[4]}}},
                {"min_eigenvalue", c.min_eigenvalue},
                {"max_leakage", c.max_leakage},
                {"max_trace_error", c.max_trace_error},
                {"final_purity", c.final_purity},
                {"steps", c.steps}};
  };

  bool pass;
  if (v.check_order) {
    const OrderCheck oc =
        order_check(integrator, init, v.dt, v.horizon, cfg.base_seed, direct);
    out["coarse"] = report(oc.coarse);
    out["fine"] = report(oc.fine);
    out["order_ratio"] = oc.ratio;
    out["max_rel_error"] = oc.coarse.max_rel_error;
    pass = oc.coarse.max_rel_error <= v.tolerance && oc.ratio <= 0.5;
    out["order_pass"] = oc.ratio <= 0.5;
  } else {
    const auto n = static_cast<std::size_t>(std::llround(v.horizon / v.dt));
    const OracleComparison c = compare_with_filter(
        integrator, init, v.dt, wiener_path(cfg.base_seed, v.dt, n), direct, 10);
    out["coarse"] = report(c);
    out["max_rel_error"] = c.max_rel_error;
    pass = c.max_rel_error <= v.tolerance;
  }
  out["pass"] = pass;
  return out;
}

json error_report(const std::exception& e) {
  json err;
  err["message"] = e.what();
  if (const auto* le = dynamic_cast<const LeakageError*>(&e)) {
    err["kind"] = "leakage";
    err["field"] = "dim";
    err["dim"] = le->dim();
    err["population"] = le->population();
  } else if (const auto* pe = dynamic_cast<const ParameterError*>(&e)) {
    err["kind"] = "config";
    err["field"] = pe->field();
  } else if (const auto* ne = dynamic_cast<const NumericalError*>(&e)) {
    err["kind"] = "numerical";
    err["step"] = ne->step() ? json(*ne->step()) : json(nullptr);
  } else {
    err["kind"] = "io";
  }
  return {{"schema_version", kSchemaVersion}, {"error", err}};
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ParameterError*>(&e)) return kExitConfigError;
  if (dynamic_cast<const NumericalError*>(&e)) return kExitNumericalFailure;
  return kExitNumericalFailure;
}

}  // namespace qfb
