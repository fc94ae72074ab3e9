// steer: command-line frontend for the broadcast-feedback steering toolkit.
//
// Subcommands:
//   plan      task JSON -> gain-schedule plan JSON
//   verify    plan JSON -> independent simulation report JSON
//   simulate  plan JSON (or system + builtin map) -> trajectory CSV
//   factor    matrix JSON -> factor-list JSON
//   gram      system JSON -> Gramian curve CSV
//
// Exit codes: 0 success; 2 mathematically structured rejection (a steering
// condition fails, a target leaves GL+, a trajectory degenerates); 1
// operational error (I/O, malformed or unknown fields, bad flags).

#include <CLI11.hpp>

#include <cmath>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "steer/io.hpp"

namespace {

constexpr int kExitSuccess = 0;
constexpr int kExitError = 1;
constexpr int kExitRejection = 2;

using steer::io::Json;

/// Runs a command body under the toolkit-wide exit-code contract.
template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const steer::PlanRejection& e) {
    std::cerr << "rejected: " << e.what() << "\n";
    return kExitRejection;
  } catch (const steer::ContractionFailure& e) {
    std::cerr << "rejected: " << e.what() << "\n";
    return kExitRejection;
  } catch (const steer::SingularTrajectory& e) {
    std::cerr << "rejected: " << e.what() << "\n";
    return kExitRejection;
  } catch (const steer::IntegrationBlowup& e) {
    std::cerr << "rejected: " << e.what() << "\n";
    return kExitRejection;
  } catch (const steer::PeriodizationFailure& e) {
    std::cerr << "rejected: " << e.what() << "\n";
    return kExitRejection;
  } catch (const steer::SchemaError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::domain_error& e) {
    std::cerr << "rejected: " << e.what() << "\n";
    return kExitRejection;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}

int cmd_plan(const std::string& task_path, std::string out_path) {
  const Json j = steer::io::load_json_file(task_path);
  const steer::io::TaskSpec task = steer::io::task_from_json(j);
  if (out_path.empty()) {
    out_path = task.plan_path.empty() ? "plan.json" : task.plan_path;
  }
  const steer::io::PlanOutcome outcome = steer::io::plan_task(task);
  steer::io::PlanWriteOptions defaults;
  defaults.terminal_tol = task.terminal_tol;
  defaults.steps_per_segment = task.steps_per_segment;
  steer::io::write_text_file(
      out_path,
      steer::io::dump_json(steer::io::plan_to_json(outcome, defaults)));
  std::cout << "plan: " << outcome.schedule.segment_count()
            << " segment(s), total time "
            << steer::io::format_double(outcome.schedule.total_time())
            << ", written to " << out_path << "\n";
  return kExitSuccess;
}

int cmd_verify(const std::string& plan_path, std::string out_path,
               double terminal_tol, int steps_per_segment) {
  const Json j = steer::io::load_json_file(plan_path);
  if (out_path.empty()) {
    out_path = "report.json";
  }

  // Schema problems are operational errors; mathematically invalid content
  // (tampered targets, broken certificates) is a verification failure and
  // still produces a report.
  std::optional<steer::io::LoadedPlan> plan;
  std::string load_error;
  try {
    plan = steer::io::plan_from_json(j);
  } catch (const steer::SchemaError&) {
    throw;
  } catch (const std::exception& e) {
    load_error = e.what();
  }
  if (!plan.has_value()) {
    Json r;
    r["schema_version"] = 1;
    r["pass"] = false;
    r["error"] = load_error;
    steer::io::write_text_file(out_path, steer::io::dump_json(r));
    std::cerr << "verification failed: " << load_error << "\n";
    return kExitRejection;
  }

  steer::VerifyOptions opts = plan->verify_defaults;
  if (terminal_tol > 0.0) {
    opts.terminal_tol = terminal_tol;
  }
  if (steps_per_segment > 0) {
    opts.steps_per_segment = steps_per_segment;
  }
  const steer::SteeringReport report =
      plan->covariance.has_value()
          ? steer::verify_covariance(plan->schedule,
                                     plan->covariance->first,
                                     plan->covariance->second, opts)
          : steer::verify(plan->schedule, opts);
  steer::io::write_text_file(
      out_path, steer::io::dump_json(steer::io::report_to_json(report)));
  std::cout << (report.pass ? "pass" : "fail") << ": report written to "
            << out_path << "\n";
  return report.pass ? kExitSuccess : kExitRejection;
}

int cmd_simulate(const std::string& plan_path,
                 const std::string& system_path, const std::string& map_spec,
                 const std::string& swarm_path, std::string out_path,
                 int steps_per_segment, double probe_radius) {
  const bool from_plan = !plan_path.empty();
  const bool from_map = !system_path.empty() || !map_spec.empty();
  if (from_plan == from_map) {
    throw steer::SchemaError(
        "simulate: give either a plan file, or --system with --map");
  }
  if (out_path.empty()) {
    out_path = "trajectory.csv";
  }
  const int steps = steps_per_segment > 0 ? steps_per_segment : 2000;

  if (from_plan) {
    const steer::io::LoadedPlan plan =
        steer::io::plan_from_json(steer::io::load_json_file(plan_path));
    std::string csv;
    if (!swarm_path.empty()) {
      const Eigen::MatrixXd x_in =
          steer::io::swarm_from_csv(steer::io::load_text_file(swarm_path));
      csv = steer::io::swarm_csv(
          steer::propagate_swarm(plan.schedule, x_in, steps));
    } else {
      csv = steer::io::transition_csv(
          steer::propagate_transition(plan.schedule, steps));
    }
    steer::io::write_text_file(out_path, csv);
    std::cout << "trajectory written to " << out_path << "\n";
    return kExitSuccess;
  }

  if (system_path.empty() || map_spec.empty()) {
    throw steer::SchemaError(
        "simulate: the nonlinear pathway needs both --system and --map");
  }
  if (swarm_path.empty()) {
    throw steer::SchemaError(
        "simulate: the nonlinear pathway needs --swarm (particles to "
        "rearrange)");
  }
  const steer::io::SystemSpec spec = steer::io::system_spec_from_json(
      steer::io::load_json_file(system_path), "system");
  if (!spec.has_period()) {
    throw steer::SchemaError(
        "system: nonlinear simulation needs \"t_s\" (the leg period)");
  }
  const steer::PeriodizedSystem sys =
      steer::io::periodize_spec(spec, spec.t_s);
  const steer::DiffeoMap phi =
      steer::io::parse_map_spec(map_spec, sys.base().state_dim());
  const steer::DiffeoTask task(sys, phi, probe_radius);
  const Eigen::MatrixXd x_in =
      steer::io::swarm_from_csv(steer::io::load_text_file(swarm_path));
  steer::io::write_text_file(
      out_path,
      steer::io::swarm_csv(
          steer::io::simulate_diffeo_swarm(task, x_in, steps)));
  std::cout << "trajectory written to " << out_path << "\n";
  return kExitSuccess;
}

int cmd_factor(const std::string& matrix_path, const std::string& mode,
               const std::string& gramian_path, double epsilon,
               std::string out_path) {
  const Eigen::MatrixXd target = steer::io::matrix_from_json(
      steer::io::load_json_file(matrix_path), "matrix");
  if (target.rows() != target.cols() ||
      !(target.determinant() > 0.0)) {
    throw std::domain_error(
        "factor: matrix is not in GL+ (square with positive determinant)");
  }
  std::optional<steer::SpdMatrix> w;
  if (!gramian_path.empty()) {
    w = steer::SpdMatrix(steer::io::matrix_from_json(
        steer::io::load_json_file(gramian_path), "gramian"));
    if (w->dim() != target.rows()) {
      throw steer::SchemaError(
          "factor: Gramian and matrix dimensions differ");
    }
  }
  if (out_path.empty()) {
    out_path = "factors.json";
  }

  Json out;
  if (mode == "spd-cone") {
    if (!w.has_value()) {
      throw steer::SchemaError(
          "factor: spd-cone mode needs --gramian (the conjugating W)");
    }
    const steer::SpdConeFactorization f =
        steer::spd_cone_factorize(target, *w);
    out = steer::io::factorization_to_json(f, target, *w);
  } else {  // near-identity (values are gated by the flag parser)
    double eps = epsilon;
    if (!(eps > 0.0)) {
      if (!w.has_value()) {
        throw steer::SchemaError(
            "factor: near-identity mode needs --epsilon, or --gramian to "
            "derive it from the eigenvalue ratio");
      }
      eps = std::sqrt(w->min_eigenvalue() / w->max_eigenvalue());
    }
    const steer::NearIdentityFactorization f =
        steer::near_identity_factorize(target, eps);
    out = steer::io::factorization_to_json(f, target, w);
  }
  steer::io::write_text_file(out_path, steer::io::dump_json(out));
  std::cout << "factors: " << out["count"].get<int>()
            << ", product relative error "
            << steer::io::format_double(out["product_error"].get<double>())
            << ", written to " << out_path << "\n";
  return kExitSuccess;
}

int cmd_gram(const std::string& system_path, double horizon,
             int grid_points, std::string out_path) {
  const steer::io::SystemSpec spec = steer::io::system_spec_from_json(
      steer::io::load_json_file(system_path), "system");
  const double t_end = horizon > 0.0 ? horizon : spec.t_s;
  if (!(t_end > 0.0)) {
    throw steer::SchemaError(
        "gram: need --horizon (or a system \"t_s\") to bound the curve");
  }
  // The Gramian of whatever closed loop the file describes: K_c shifts the
  // drift without any periodicity requirement, and an absent K_c means the
  // open loop.
  const Eigen::MatrixXd k_c =
      spec.has_gain()
          ? spec.k_c
          : Eigen::MatrixXd::Zero(spec.b.cols(), spec.a.rows()).eval();
  const steer::GramianEvaluator gram(spec.a + spec.b * k_c, spec.b);
  if (out_path.empty()) {
    out_path = "gram.csv";
  }
  steer::io::write_text_file(
      out_path, steer::io::gramian_csv(gram, t_end, grid_points));
  std::cout << "gramian curve written to " << out_path << "\n";
  return kExitSuccess;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Broadcast-feedback steering on GL+(n): plan gain schedules, verify "
      "them by independent simulation, and emit plot-ready trajectories"};
  app.require_subcommand(1);

  std::string task_path;
  std::string plan_out;
  CLI::App* plan = app.add_subcommand(
      "plan", "Compute a gain schedule from a task file");
  plan->add_option("task", task_path, "task JSON file")->required();
  plan->add_option("-o,--output", plan_out,
                   "plan output path (default: task output.plan, else "
                   "plan.json)");

  std::string verify_plan_path;
  std::string report_out;
  double verify_tol = -1.0;
  int verify_steps = -1;
  CLI::App* verify = app.add_subcommand(
      "verify", "Re-simulate a plan and report whether it steers as "
                "claimed");
  verify->add_option("plan", verify_plan_path, "plan JSON file")->required();
  verify->add_option("-o,--output", report_out,
                     "report output path (default: report.json)");
  verify->add_option("--terminal-tol", verify_tol,
                     "relative terminal-error acceptance");
  verify->add_option("--steps-per-segment", verify_steps,
                     "integrator steps per leg");

  std::string sim_plan_path;
  std::string sim_system_path;
  std::string sim_map;
  std::string sim_swarm_path;
  std::string sim_out;
  int sim_steps = -1;
  double sim_probe_radius = 1.0;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Integrate a plan (or a builtin nonlinear map) and emit "
                  "trajectory CSV");
  simulate->add_option("plan", sim_plan_path, "plan JSON file");
  simulate->add_option("--system", sim_system_path,
                       "system JSON file (nonlinear pathway)");
  simulate->add_option("--map", sim_map,
                       "builtin map: identity | translate c1,..,cn | "
                       "linear PATH | tanh_perturb alpha");
  simulate->add_option("--swarm", sim_swarm_path,
                       "initial swarm CSV (one particle per row)");
  simulate->add_option("-o,--output", sim_out,
                       "trajectory output path (default: trajectory.csv)");
  simulate->add_option("--steps-per-segment", sim_steps,
                       "integrator steps per leg");
  simulate->add_option("--probe-radius", sim_probe_radius,
                       "box radius for the contraction probe");

  std::string factor_matrix_path;
  std::string factor_mode;
  std::string factor_gramian_path;
  double factor_epsilon = -1.0;
  std::string factor_out;
  CLI::App* factor = app.add_subcommand(
      "factor", "Factor a matrix into steerable pieces");
  factor->add_option("matrix", factor_matrix_path,
                     "matrix JSON file (array of rows)")
      ->required();
  factor->add_option("--mode", factor_mode, "factorization mode")
      ->required()
      ->check(CLI::IsMember({"spd-cone", "near-identity"}));
  factor->add_option("--gramian", factor_gramian_path,
                     "SPD conjugator JSON file");
  factor->add_option("--epsilon", factor_epsilon,
                     "near-identity factor radius");
  factor->add_option("-o,--output", factor_out,
                     "factorization output path (default: factors.json)");

  std::string gram_system_path;
  double gram_horizon = -1.0;
  int gram_grid = 101;
  std::string gram_out;
  CLI::App* gram = app.add_subcommand(
      "gram", "Tabulate the reachability Gramian curve of a closed loop");
  gram->add_option("--system", gram_system_path, "system JSON file")
      ->required();
  gram->add_option("--horizon", gram_horizon,
                   "curve endpoint (default: system t_s)");
  gram->add_option("--grid-points", gram_grid,
                   "number of samples including both endpoints")
      ->check(CLI::Range(2, 1000000));
  gram->add_option("-o,--output", gram_out,
                   "CSV output path (default: gram.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitSuccess : kExitError;
  }

  if (plan->parsed()) {
    return guarded([&] { return cmd_plan(task_path, plan_out); });
  }
  if (verify->parsed()) {
    return guarded([&] {
      return cmd_verify(verify_plan_path, report_out, verify_tol,
                        verify_steps);
    });
  }
  if (simulate->parsed()) {
    return guarded([&] {
      return cmd_simulate(sim_plan_path, sim_system_path, sim_map,
                          sim_swarm_path, sim_out, sim_steps,
                          sim_probe_radius);
    });
  }
  if (factor->parsed()) {
    return guarded([&] {
      return cmd_factor(factor_matrix_path, factor_mode,
                        factor_gramian_path, factor_epsilon, factor_out);
    });
  }
  return guarded([&] {
    return cmd_gram(gram_system_path, gram_horizon, gram_grid, gram_out);
  });
}
