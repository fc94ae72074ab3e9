#ifndef STEER__IO_HPP_
#define STEER__IO_HPP_

/// File formats for the command-line tools.
///
/// JSON carries structured artifacts (system descriptions, steering tasks,
/// gain-schedule plans, verification reports, factorizations); CSV carries
/// sampled trajectories (transition matrices, particle swarms, Gramian
/// curves).  Two rules govern everything here:
///
///  - Emission is deterministic: object keys are written in sorted order,
///    every floating-point value is printed with 17 significant digits (so
///    doubles round-trip exactly), and no timestamps, hostnames, or other
///    environment details enter the output.  Identical inputs produce
///    byte-identical files.
///
///  - Parsing is strict: object fields are checked against a whitelist and
///    unknown fields are rejected, so typos and schema drift surface as
///    errors instead of silently-ignored settings.  Shape and type problems
///    raise SchemaError; mathematically invalid content (a target outside
///    GL+, a non-SPD covariance) surfaces through the library's own
///    domain errors.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "steer/diffeo.hpp"
#include "steer/errors.hpp"
#include "steer/factorizer.hpp"
#include "steer/matrix_types.hpp"
#include "steer/planner.hpp"
#include "steer/segment.hpp"
#include "steer/simverify.hpp"
#include "steer/sysmod.hpp"

namespace steer {

namespace io {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Deterministic emission
// ---------------------------------------------------------------------------

/// Fixed decimal rendering of a finite double: 17 significant digits, which
/// is enough to reproduce the exact bit pattern on re-parse.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

namespace detail {

inline void append_quoted(const std::string& s, std::string& out) {
  out += '"';
  for (const char c : s) {
    switch (c) {
      case '"':
        out += "\\\"";
        break;
      case '\\':
        out += "\\\\";
        break;
      case '\b':
        out += "\\b";
        break;
      case '\f':
        out += "\\f";
        break;
      case '\n':
        out += "\\n";
        break;
      case '\r':
        out += "\\r";
        break;
      case '\t':
        out += "\\t";
        break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x",
                        static_cast<unsigned>(static_cast<unsigned char>(c)));
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

inline bool all_scalar(const Json& arr) {
  for (const Json& v : arr) {
    if (v.is_structured()) {
      return false;
    }
  }
  return true;
}

inline void append_value(const Json& j, std::string& out, int depth) {
  const auto indent = [&](int d) { out.append(2 * static_cast<std::size_t>(d), ' '); };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& item : j.items()) {  // std::map order: sorted keys
        if (!first) {
          out += ",\n";
        }
        first = false;
        indent(depth + 1);
        append_quoted(item.key(), out);
        out += ": ";
        append_value(item.value(), out, depth + 1);
      }
      out += '\n';
      indent(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      if (all_scalar(j)) {
        out += '[';
        bool first = true;
        for (const Json& v : j) {
          if (!first) {
            out += ", ";
          }
          first = false;
          append_value(v, out, depth);
        }
        out += ']';
        return;
      }
      out += "[\n";
      bool first = true;
      for (const Json& v : j) {
        if (!first) {
          out += ",\n";
        }
        first = false;
        indent(depth + 1);
        append_value(v, out, depth + 1);
      }
      out += '\n';
      indent(depth);
      out += ']';
      return;
    }
    case Json::value_t::string:
      append_quoted(j.get<std::string>(), out);
      return;
    case Json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case Json::value_t::number_integer:
      out += std::to_string(j.get<std::int64_t>());
      return;
    case Json::value_t::number_unsigned:
      out += std::to_string(j.get<std::uint64_t>());
      return;
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      // JSON has no literal for infinities or NaN; diagnostics that can
      // legitimately diverge (e.g. a terminal error after a blow-up) are
      // emitted as null.
      out += std::isfinite(v) ? format_double(v) : "null";
      return;
    }
    case Json::value_t::null:
      out += "null";
      return;
    default:
      throw std::logic_error("dump_json: unsupported value type");
  }
}

}  // namespace detail

/// Renders a JSON document deterministically: sorted keys, two-space
/// indentation, 17-significant-digit floats, trailing newline.
inline std::string dump_json(const Json& j) {
  std::string out;
  detail::append_value(j, out, 0);
  out += '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Strict parsing helpers
// ---------------------------------------------------------------------------

/// Rejects any object field that is not in the whitelist, so unknown or
/// misspelled settings fail loudly instead of being ignored.
inline void check_keys(const Json& j, const std::string& ctx,
                       std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw SchemaError(ctx + ": expected an object");
  }
  for (const auto& item : j.items()) {
    const bool known =
        std::any_of(allowed.begin(), allowed.end(),
                    [&](const char* k) { return item.key() == k; });
    if (!known) {
      throw SchemaError(ctx + ": unknown field \"" + item.key() + "\"");
    }
  }
}

inline const Json& require_field(const Json& j, const std::string& ctx,
                                 const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw SchemaError(ctx + ": missing field \"" + key + "\"");
  }
  return *it;
}

inline double number_from_json(const Json& j, const std::string& ctx) {
  if (!j.is_number()) {
    throw SchemaError(ctx + ": expected a number");
  }
  return j.get<double>();
}

inline int int_from_json(const Json& j, const std::string& ctx) {
  if (!j.is_number_integer()) {
    throw SchemaError(ctx + ": expected an integer");
  }
  return j.get<int>();
}

inline std::string string_from_json(const Json& j, const std::string& ctx) {
  if (!j.is_string()) {
    throw SchemaError(ctx + ": expected a string");
  }
  return j.get<std::string>();
}

inline void check_schema_version(const Json& j, const std::string& ctx) {
  if (int_from_json(require_field(j, ctx, "schema_version"),
                    ctx + ".schema_version") != 1) {
    throw SchemaError(ctx + ".schema_version: this reader understands "
                      "version 1 only");
  }
}

/// Matrix as an array of equal-length rows of numbers.
inline Eigen::MatrixXd matrix_from_json(const Json& j,
                                        const std::string& ctx) {
  if (!j.is_array() || j.empty()) {
    throw SchemaError(ctx + ": expected a non-empty array of rows");
  }
  const Json& first = j.front();
  if (!first.is_array() || first.empty()) {
    throw SchemaError(ctx + ": rows must be non-empty arrays of numbers");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(first.size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() ||
        static_cast<Eigen::Index>(row.size()) != cols) {
      throw SchemaError(ctx + ": rows must all have " +
                        std::to_string(cols) + " entries");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& e = row[static_cast<std::size_t>(c)];
      if (!e.is_number()) {
        throw SchemaError(ctx + ": entries must be numbers");
      }
      m(r, c) = e.get<double>();
    }
  }
  return m;
}

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      row.push_back(m(r, c));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Number from decimal text, whole-token, finite.
inline double parse_number(const std::string& s, const std::string& ctx) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw SchemaError(ctx + ": not a number: \"" + s + "\"");
  }
  if (pos != s.size()) {
    throw SchemaError(ctx + ": trailing characters in number \"" + s + "\"");
  }
  if (!std::isfinite(v)) {
    throw SchemaError(ctx + ": number must be finite");
  }
  return v;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path);
  }
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw SchemaError("invalid JSON in " + path + ": " + e.what());
  }
}

inline std::string load_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open file: " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open file for writing: " + path);
  }
  out << content;
  out.flush();
  if (!out) {
    throw std::runtime_error("write failed: " + path);
  }
}

// ---------------------------------------------------------------------------
// System description
// ---------------------------------------------------------------------------

/// A linear ensemble as read from file: drift A, input matrix B, and
/// optionally a leg period t_s and a periodizing gain K_c.  A supplied gain
/// is adopted verbatim (and checked against the periodicity residual gate)
/// instead of being synthesized.
struct SystemSpec {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;
  double t_s = -1.0;    ///< leg period; negative when the file omits it
  Eigen::MatrixXd k_c;  ///< periodizing gain; empty when the file omits it

  bool has_period() const { return t_s > 0.0; }
  bool has_gain() const { return k_c.size() > 0; }
  LinearEnsemble ensemble() const { return LinearEnsemble(a, b); }
};

inline SystemSpec system_spec_from_json(const Json& j,
                                        const std::string& ctx) {
  check_keys(j, ctx, {"A", "B", "K_c", "t_s"});
  SystemSpec spec;
  spec.a = matrix_from_json(require_field(j, ctx, "A"), ctx + ".A");
  spec.b = matrix_from_json(require_field(j, ctx, "B"), ctx + ".B");
  if (j.contains("t_s")) {
    spec.t_s = number_from_json(j["t_s"], ctx + ".t_s");
    if (!(spec.t_s > 0.0)) {
      throw SchemaError(ctx + ".t_s: must be positive");
    }
  }
  if (j.contains("K_c")) {
    spec.k_c = matrix_from_json(j["K_c"], ctx + ".K_c");
    if (!spec.has_period()) {
      throw SchemaError(ctx + ": \"K_c\" needs \"t_s\" (the period the "
                        "gain closes)");
    }
  }
  return spec;
}

inline Json system_to_json(const LinearEnsemble& sys) {
  Json j;
  j["A"] = matrix_to_json(sys.a());
  j["B"] = matrix_to_json(sys.b());
  return j;
}

/// Periodized system at the requested leg period.  The file's gain is used
/// verbatim when its period matches the requested one; otherwise a fresh
/// gain is synthesized at the requested period.
inline PeriodizedSystem periodize_spec(const SystemSpec& spec, double t_s) {
  if (!(t_s > 0.0)) {
    throw SchemaError("system: a positive leg period is required (give "
                      "\"t_s\" or the task-level segment time)");
  }
  const LinearEnsemble sys = spec.ensemble();
  if (spec.has_gain() &&
      std::abs(spec.t_s - t_s) <= 1e-12 * std::max(1.0, t_s)) {
    return PeriodizedSystem::with_gain(sys, spec.k_c, t_s);
  }
  return PeriodizedSystem::synthesize(sys, t_s);
}

// ---------------------------------------------------------------------------
// Task files
// ---------------------------------------------------------------------------

/// A steering request as read from a task file.  The mode selects the
/// planner; the remaining fields are validated per mode:
///
///   mode              requires                  optional
///   strong            target forms, horizon
///   free_time         target forms              segment_time (default 1)
///   single_segment    target forms, horizon
///   covariance        sigma_in, sigma_fn, horizon
///   factors           factors + a leg period (segment_time or system.t_s)
///
/// "Target forms" is exactly one of: "target" (optionally with "initial",
/// steering initial onto target), or the arrangement pair "x_in"/"x_fn"
/// whose columns are particle positions.
struct TaskSpec {
  SystemSpec system;
  std::string mode;
  std::optional<Eigen::MatrixXd> target;
  std::optional<Eigen::MatrixXd> initial;
  std::optional<Eigen::MatrixXd> x_in;
  std::optional<Eigen::MatrixXd> x_fn;
  std::optional<Eigen::MatrixXd> sigma_in;
  std::optional<Eigen::MatrixXd> sigma_fn;
  std::vector<Eigen::MatrixXd> factors;
  double horizon = -1.0;
  double segment_time = -1.0;
  std::optional<double> terminal_tol;
  std::optional<int> steps_per_segment;
  std::string plan_path;
  std::string report_path;
  std::string trajectory_path;
};

inline TaskSpec task_from_json(const Json& j) {
  const std::string ctx = "task";
  check_keys(j, ctx,
             {"factors", "horizon", "initial", "mode", "output",
              "schema_version", "segment_time", "sigma_fn", "sigma_in",
              "system", "target", "tolerances", "x_fn", "x_in"});
  check_schema_version(j, ctx);

  TaskSpec t;
  t.system = system_spec_from_json(require_field(j, ctx, "system"),
                                   ctx + ".system");
  t.mode = string_from_json(require_field(j, ctx, "mode"), ctx + ".mode");
  const bool known_mode =
      t.mode == "strong" || t.mode == "free_time" ||
      t.mode == "single_segment" || t.mode == "covariance" ||
      t.mode == "factors";
  if (!known_mode) {
    throw SchemaError(ctx + ".mode: unknown mode \"" + t.mode +
                      "\" (have strong, free_time, single_segment, "
                      "covariance, factors)");
  }

  const auto opt_matrix =
      [&](const char* key) -> std::optional<Eigen::MatrixXd> {
    if (!j.contains(key)) {
      return std::nullopt;
    }
    return matrix_from_json(j[key], ctx + "." + key);
  };
  t.target = opt_matrix("target");
  t.initial = opt_matrix("initial");
  t.x_in = opt_matrix("x_in");
  t.x_fn = opt_matrix("x_fn");
  t.sigma_in = opt_matrix("sigma_in");
  t.sigma_fn = opt_matrix("sigma_fn");

  if (j.contains("horizon")) {
    t.horizon = number_from_json(j["horizon"], ctx + ".horizon");
    if (!(t.horizon > 0.0)) {
      throw SchemaError(ctx + ".horizon: must be positive");
    }
  }
  if (j.contains("segment_time")) {
    t.segment_time = number_from_json(j["segment_time"],
                                      ctx + ".segment_time");
    if (!(t.segment_time > 0.0)) {
      throw SchemaError(ctx + ".segment_time: must be positive");
    }
  }
  if (j.contains("factors")) {
    const Json& fs = j["factors"];
    if (!fs.is_array() || fs.empty()) {
      throw SchemaError(ctx + ".factors: expected a non-empty array of "
                        "matrices");
    }
    for (std::size_t i = 0; i < fs.size(); ++i) {
      t.factors.push_back(matrix_from_json(
          fs[i], ctx + ".factors[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("tolerances")) {
    const Json& tj = j["tolerances"];
    check_keys(tj, ctx + ".tolerances",
               {"steps_per_segment", "terminal_tol"});
    if (tj.contains("terminal_tol")) {
      const double v = number_from_json(tj["terminal_tol"],
                                        ctx + ".tolerances.terminal_tol");
      if (!(v > 0.0)) {
        throw SchemaError(ctx + ".tolerances.terminal_tol: must be "
                          "positive");
      }
      t.terminal_tol = v;
    }
    if (tj.contains("steps_per_segment")) {
      const int v = int_from_json(tj["steps_per_segment"],
                                  ctx + ".tolerances.steps_per_segment");
      if (v < 1) {
        throw SchemaError(ctx + ".tolerances.steps_per_segment: must be "
                          "positive");
      }
      t.steps_per_segment = v;
    }
  }
  if (j.contains("output")) {
    const Json& oj = j["output"];
    check_keys(oj, ctx + ".output", {"plan", "report", "trajectory"});
    if (oj.contains("plan")) {
      t.plan_path = string_from_json(oj["plan"], ctx + ".output.plan");
    }
    if (oj.contains("report")) {
      t.report_path = string_from_json(oj["report"],
                                       ctx + ".output.report");
    }
    if (oj.contains("trajectory")) {
      t.trajectory_path = string_from_json(oj["trajectory"],
                                           ctx + ".output.trajectory");
    }
  }

  // Cross-field rules, per mode.
  const auto forbid = [&](bool present, const char* key,
                          const char* why) {
    if (present) {
      throw SchemaError(ctx + ": field \"" + key + "\" does not apply to "
                        "mode \"" + t.mode + "\" (" + why + ")");
    }
  };
  const bool wants_target =
      t.mode != "covariance" && t.mode != "factors";
  if (wants_target) {
    if (t.x_in.has_value() || t.x_fn.has_value()) {
      if (!t.x_in.has_value() || !t.x_fn.has_value()) {
        throw SchemaError(ctx + ": arrangements need both \"x_in\" and "
                          "\"x_fn\"");
      }
      forbid(t.target.has_value(), "target",
             "arrangements already fix the transition");
      forbid(t.initial.has_value(), "initial",
             "arrangements already fix the transition");
    } else {
      if (!t.target.has_value()) {
        throw SchemaError(ctx + ": mode \"" + t.mode + "\" needs a "
                          "\"target\" (or the \"x_in\"/\"x_fn\" pair)");
      }
    }
    forbid(t.sigma_in.has_value(), "sigma_in",
           "covariances belong to covariance mode");
    forbid(t.sigma_fn.has_value(), "sigma_fn",
           "covariances belong to covariance mode");
  } else {
    forbid(t.target.has_value(), "target", "no transition target here");
    forbid(t.initial.has_value(), "initial", "no transition target here");
    forbid(t.x_in.has_value(), "x_in", "no arrangement target here");
    forbid(t.x_fn.has_value(), "x_fn", "no arrangement target here");
  }
  if (t.mode == "covariance") {
    if (!t.sigma_in.has_value() || !t.sigma_fn.has_value()) {
      throw SchemaError(ctx + ": covariance mode needs \"sigma_in\" and "
                        "\"sigma_fn\"");
    }
  }
  if (t.mode == "factors") {
    if (t.factors.empty()) {
      throw SchemaError(ctx + ": factors mode needs a \"factors\" list");
    }
    if (!(t.segment_time > 0.0) && !t.system.has_period()) {
      throw SchemaError(ctx + ": factors mode needs a leg period "
                        "(\"segment_time\" or system \"t_s\")");
    }
  } else {
    forbid(!t.factors.empty(), "factors",
           "explicit factor lists belong to factors mode");
  }
  const bool wants_horizon = t.mode == "strong" ||
                             t.mode == "single_segment" ||
                             t.mode == "covariance";
  if (wants_horizon) {
    if (!(t.horizon > 0.0)) {
      throw SchemaError(ctx + ": mode \"" + t.mode + "\" needs a positive "
                        "\"horizon\"");
    }
  } else {
    forbid(t.horizon > 0.0, "horizon",
           "total time follows from the leg count and period");
  }
  if (t.mode != "free_time" && t.mode != "factors") {
    forbid(t.segment_time > 0.0, "segment_time",
           "the leg period is derived from the horizon");
  }
  return t;
}

/// A computed plan, plus the covariance endpoints when the task was a
/// covariance-steering request (they ride along in the plan file so
/// verification can check the pushforward independently).
struct PlanOutcome {
  GainSchedule schedule;
  std::optional<std::pair<SpdMatrix, SpdMatrix>> covariance;
};

/// Runs the planner selected by the task mode.
inline PlanOutcome plan_task(const TaskSpec& t) {
  if (t.mode == "factors") {
    const double t_s =
        t.segment_time > 0.0 ? t.segment_time : t.system.t_s;
    const PeriodizedSystem sys = periodize_spec(t.system, t_s);
    return PlanOutcome{
        schedule_from_factors(sys, t.factors,
                              ScheduleProvenance{"external", 0, 0, 0.0}),
        std::nullopt};
  }
  const LinearEnsemble sys = t.system.ensemble();
  if (t.mode == "covariance") {
    const CovarianceTask task(sys, SpdMatrix(*t.sigma_in),
                              SpdMatrix(*t.sigma_fn), t.horizon);
    PlanOutcome out{plan_covariance(task), std::nullopt};
    out.covariance = std::make_pair(task.sigma_in(), task.sigma_fn());
    return out;
  }
  const PlanMode mode = plan_mode_from_string(t.mode);
  const double horizon = t.horizon > 0.0 ? t.horizon : 0.0;
  const SteeringTask task =
      t.x_in.has_value()
          ? SteeringTask::from_arrangements(sys, *t.x_in, *t.x_fn, horizon,
                                            mode)
          : (t.initial.has_value()
                 ? SteeringTask::from_transitions(sys, *t.initial,
                                                  *t.target, horizon, mode)
                 : SteeringTask::from_target(sys, *t.target, horizon,
                                             mode));
  switch (mode) {
    case PlanMode::kStrong:
      return PlanOutcome{plan_strong(task), std::nullopt};
    case PlanMode::kFreeTime: {
      const double t_s =
          t.segment_time > 0.0
              ? t.segment_time
              : (t.system.has_period() ? t.system.t_s : 1.0);
      return PlanOutcome{plan_free_time(task, t_s), std::nullopt};
    }
    default:
      return PlanOutcome{plan_single_segment(task), std::nullopt};
  }
}

// ---------------------------------------------------------------------------
// Plan files
// ---------------------------------------------------------------------------

/// Verification defaults a plan file may carry (copied from the task's
/// "tolerances" block); command-line flags override them.
struct PlanWriteOptions {
  std::optional<double> terminal_tol;
  std::optional<int> steps_per_segment;
};

inline Json plan_to_json(const PlanOutcome& outcome,
                         const PlanWriteOptions& defaults = {}) {
  const GainSchedule& s = outcome.schedule;
  Json j;
  j["schema_version"] = 1;
  j["system"] = system_to_json(s.system().base());
  Json hold;
  hold["K_c"] = matrix_to_json(s.system().gain());
  hold["t_s"] = s.system().period();
  j["hold"] = std::move(hold);
  j["total_time"] = s.total_time();
  Json prov;
  prov["method"] = s.provenance().method;
  prov["rotation_count"] = s.provenance().rotation_count;
  prov["stretch_count"] = s.provenance().stretch_count;
  prov["epsilon"] = s.provenance().epsilon;
  j["provenance"] = std::move(prov);
  Json segs = Json::array();
  for (const SteeringSegment& seg : s.segments()) {
    Json sj;
    sj["K_c"] = matrix_to_json(seg.system().gain());
    sj["t_s"] = seg.system().period();
    sj["target"] = matrix_to_json(seg.target());
    sj["condition"] = to_string(seg.condition_tag());
    segs.push_back(std::move(sj));
  }
  j["segments"] = std::move(segs);
  if (outcome.covariance.has_value()) {
    Json cov;
    cov["sigma_in"] = matrix_to_json(outcome.covariance->first.matrix());
    cov["sigma_fn"] = matrix_to_json(outcome.covariance->second.matrix());
    j["covariance"] = std::move(cov);
  }
  if (defaults.terminal_tol.has_value() ||
      defaults.steps_per_segment.has_value()) {
    Json v;
    if (defaults.terminal_tol.has_value()) {
      v["terminal_tol"] = *defaults.terminal_tol;
    }
    if (defaults.steps_per_segment.has_value()) {
      v["steps_per_segment"] = *defaults.steps_per_segment;
    }
    j["verify"] = std::move(v);
  }
  return j;
}

/// A plan reconstructed from file.  Every leg is rebuilt from its stored
/// gain and target, so all mathematical invariants (periodicity residual,
/// positive determinant, reachability certificates) are re-validated on
/// load; a tampered plan fails here.
struct LoadedPlan {
  GainSchedule schedule;
  std::optional<std::pair<SpdMatrix, SpdMatrix>> covariance;
  VerifyOptions verify_defaults;
};

inline LoadedPlan plan_from_json(const Json& j) {
  const std::string ctx = "plan";
  check_keys(j, ctx,
             {"covariance", "hold", "provenance", "schema_version",
              "segments", "system", "total_time", "verify"});
  check_schema_version(j, ctx);

  const Json& sys_j = require_field(j, ctx, "system");
  check_keys(sys_j, ctx + ".system", {"A", "B"});
  const Eigen::MatrixXd a =
      matrix_from_json(require_field(sys_j, ctx + ".system", "A"),
                       ctx + ".system.A");
  const Eigen::MatrixXd b =
      matrix_from_json(require_field(sys_j, ctx + ".system", "B"),
                       ctx + ".system.B");
  const LinearEnsemble base(a, b);

  const Json& hold_j = require_field(j, ctx, "hold");
  check_keys(hold_j, ctx + ".hold", {"K_c", "t_s"});
  const Eigen::MatrixXd hold_gain =
      matrix_from_json(require_field(hold_j, ctx + ".hold", "K_c"),
                       ctx + ".hold.K_c");
  const double hold_t_s = number_from_json(
      require_field(hold_j, ctx + ".hold", "t_s"), ctx + ".hold.t_s");

  const double total = number_from_json(
      require_field(j, ctx, "total_time"), ctx + ".total_time");

  const Json& prov_j = require_field(j, ctx, "provenance");
  check_keys(prov_j, ctx + ".provenance",
             {"epsilon", "method", "rotation_count", "stretch_count"});
  ScheduleProvenance prov;
  prov.method = string_from_json(
      require_field(prov_j, ctx + ".provenance", "method"),
      ctx + ".provenance.method");
  prov.rotation_count = int_from_json(
      require_field(prov_j, ctx + ".provenance", "rotation_count"),
      ctx + ".provenance.rotation_count");
  prov.stretch_count = int_from_json(
      require_field(prov_j, ctx + ".provenance", "stretch_count"),
      ctx + ".provenance.stretch_count");
  prov.epsilon = number_from_json(
      require_field(prov_j, ctx + ".provenance", "epsilon"),
      ctx + ".provenance.epsilon");

  const PeriodizedSystem hold_sys =
      PeriodizedSystem::with_gain(base, hold_gain, hold_t_s);

  const Json& segs_j = require_field(j, ctx, "segments");
  if (!segs_j.is_array()) {
    throw SchemaError(ctx + ".segments: expected an array");
  }
  std::vector<SteeringSegment> legs;
  legs.reserve(segs_j.size());
  for (std::size_t i = 0; i < segs_j.size(); ++i) {
    const std::string sctx = ctx + ".segments[" + std::to_string(i) + "]";
    const Json& sj = segs_j[i];
    check_keys(sj, sctx, {"K_c", "condition", "t_s", "target"});
    const Eigen::MatrixXd k_c =
        matrix_from_json(require_field(sj, sctx, "K_c"), sctx + ".K_c");
    const double t_s = number_from_json(require_field(sj, sctx, "t_s"),
                                        sctx + ".t_s");
    const Eigen::MatrixXd target = matrix_from_json(
        require_field(sj, sctx, "target"), sctx + ".target");
    const std::string condition = string_from_json(
        require_field(sj, sctx, "condition"), sctx + ".condition");
    if (condition != "norm_ball" && condition != "spd_cone") {
      throw SchemaError(sctx + ".condition: expected \"norm_ball\" or "
                        "\"spd_cone\" (plans never carry uncertified "
                        "legs)");
    }
    // The stored tag is informative; the leg recomputes and re-validates
    // its certificate from the gain and target.
    const bool same_system = t_s == hold_t_s && k_c.rows() == hold_gain.rows() &&
                             k_c.cols() == hold_gain.cols() && k_c == hold_gain;
    legs.emplace_back(same_system
                          ? hold_sys
                          : PeriodizedSystem::with_gain(base, k_c, t_s),
                      target);
  }

  std::optional<std::pair<SpdMatrix, SpdMatrix>> covariance;
  if (j.contains("covariance")) {
    const Json& cov = j["covariance"];
    check_keys(cov, ctx + ".covariance", {"sigma_fn", "sigma_in"});
    covariance = std::make_pair(
        SpdMatrix(matrix_from_json(
            require_field(cov, ctx + ".covariance", "sigma_in"),
            ctx + ".covariance.sigma_in")),
        SpdMatrix(matrix_from_json(
            require_field(cov, ctx + ".covariance", "sigma_fn"),
            ctx + ".covariance.sigma_fn")));
  }

  VerifyOptions opts;
  if (j.contains("verify")) {
    const Json& v = j["verify"];
    check_keys(v, ctx + ".verify", {"steps_per_segment", "terminal_tol"});
    if (v.contains("terminal_tol")) {
      opts.terminal_tol = number_from_json(v["terminal_tol"],
                                           ctx + ".verify.terminal_tol");
    }
    if (v.contains("steps_per_segment")) {
      opts.steps_per_segment = int_from_json(
          v["steps_per_segment"], ctx + ".verify.steps_per_segment");
    }
  }

  if (legs.empty()) {
    return LoadedPlan{GainSchedule(hold_sys, total, std::move(prov)),
                      std::move(covariance), opts};
  }
  return LoadedPlan{GainSchedule(std::move(legs), std::move(prov), total),
                    std::move(covariance), opts};
}

// ---------------------------------------------------------------------------
// Verification reports
// ---------------------------------------------------------------------------

inline Json report_to_json(const SteeringReport& r) {
  Json j;
  j["schema_version"] = 1;
  j["pass"] = r.pass;
  j["terminal_error"] = r.terminal_error;
  j["terminal_tol"] = r.terminal_tol;
  j["steps_per_segment"] = r.steps_per_segment;
  j["min_inv_margin"] = r.min_inv_margin;
  j["det_sign_ok"] = r.det_sign_ok;
  Json segs = Json::array();
  for (const SegmentDiagnostics& d : r.per_segment) {
    Json sj;
    sj["start"] = d.start;
    sj["duration"] = d.duration;
    sj["condition"] = to_string(d.condition);
    sj["boundary_error"] = d.boundary_error;
    segs.push_back(std::move(sj));
  }
  j["segments"] = std::move(segs);
  // The covariance block appears only for covariance verifications; the
  // sentinel -1 marks "not applicable" internally.
  if (r.max_lyapunov_residual != -1.0) {
    j["covariance_terminal_error"] = r.covariance_terminal_error;
    j["max_lyapunov_residual"] = r.max_lyapunov_residual;
    j["min_covariance_eigenvalue"] = r.min_covariance_eigenvalue;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Factorization dumps
// ---------------------------------------------------------------------------

/// Certificate name a factor earns against the leg Gramian, preferring the
/// norm-ball certificate (mirrors the leg's own tagging order).
inline const char* certificate_name(const Eigen::MatrixXd& factor,
                                    const SpdMatrix& w) {
  if (passes_norm_ball(factor, w)) {
    return to_string(SteeringCondition::kNormBall);
  }
  if (passes_spd_cone(factor, w)) {
    return to_string(SteeringCondition::kSpdCone);
  }
  return to_string(SteeringCondition::kNone);
}

/// Product in the library's ordered convention: the last list element is
/// applied last (leftmost).
inline Eigen::MatrixXd ordered_product(
    const std::vector<Eigen::MatrixXd>& factors, Eigen::Index n) {
  Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(n, n);
  for (const Eigen::MatrixXd& f : factors) {
    acc = f * acc;
  }
  return acc;
}

inline Json factorization_to_json(const NearIdentityFactorization& f,
                                  const Eigen::MatrixXd& target,
                                  const std::optional<SpdMatrix>& w) {
  Json j;
  j["schema_version"] = 1;
  j["mode"] = "near_identity";
  j["count"] = f.count();
  j["epsilon"] = f.epsilon;
  j["rotation_count"] = f.rotation_count;
  j["stretch_count"] = f.stretch_count;
  Json factors = Json::array();
  for (const Eigen::MatrixXd& m : f.factors) {
    factors.push_back(matrix_to_json(m));
  }
  j["factors"] = std::move(factors);
  j["target"] = matrix_to_json(target);
  j["product_error"] = steer::detail::relative_error(
      ordered_product(f.factors, target.rows()), target);
  if (w.has_value()) {
    j["W"] = matrix_to_json(w->matrix());
    Json conds = Json::array();
    for (const Eigen::MatrixXd& m : f.factors) {
      conds.push_back(std::string(certificate_name(m, *w)));
    }
    j["conditions"] = std::move(conds);
  }
  return j;
}

inline Json factorization_to_json(const SpdConeFactorization& f,
                                  const Eigen::MatrixXd& target,
                                  const SpdMatrix& w) {
  Json j;
  j["schema_version"] = 1;
  j["mode"] = "spd_cone";
  j["count"] = f.count();
  Json factors = Json::array();
  Json cores = Json::array();
  Json conds = Json::array();
  for (const Eigen::MatrixXd& m : f.factors) {
    factors.push_back(matrix_to_json(m));
    conds.push_back(std::string(certificate_name(m, w)));
  }
  for (const Eigen::MatrixXd& m : f.spd_cores) {
    cores.push_back(matrix_to_json(m));
  }
  j["factors"] = std::move(factors);
  j["cores"] = std::move(cores);
  j["conditions"] = std::move(conds);
  j["target"] = matrix_to_json(target);
  j["W"] = matrix_to_json(w.matrix());
  j["product_error"] = steer::detail::relative_error(
      ordered_product(f.factors, target.rows()), target);
  return j;
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

/// Transition samples as CSV: header t,entry_1_1,...,entry_n_n; entries in
/// row-major order.
inline std::string transition_csv(
    const std::vector<TransitionSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("transition_csv: no samples");
  }
  const Eigen::Index n = samples.front().phi.rows();
  std::string out = "t";
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      out += ",entry_" + std::to_string(r + 1) + "_" +
             std::to_string(c + 1);
    }
  }
  out += '\n';
  for (const TransitionSample& s : samples) {
    out += format_double(s.t);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        out += ',';
        out += format_double(s.phi(r, c));
      }
    }
    out += '\n';
  }
  return out;
}

/// Swarm samples as CSV: header t,particle_id,x_1,...,x_n; one row per
/// particle per sample time, particle ids starting at 1.
inline std::string swarm_csv(const std::vector<SwarmState>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("swarm_csv: no samples");
  }
  const Eigen::Index n = samples.front().x.rows();
  std::string out = "t,particle_id";
  for (Eigen::Index r = 0; r < n; ++r) {
    out += ",x_" + std::to_string(r + 1);
  }
  out += '\n';
  for (const SwarmState& s : samples) {
    for (Eigen::Index p = 0; p < s.x.cols(); ++p) {
      out += format_double(s.t);
      out += ',';
      out += std::to_string(p + 1);
      for (Eigen::Index r = 0; r < n; ++r) {
        out += ',';
        out += format_double(s.x(r, p));
      }
      out += '\n';
    }
  }
  return out;
}

/// Gramian curve as CSV over a uniform grid on [0, horizon]: header
/// t,w_1_1,...,w_n_n.
inline std::string gramian_csv(const GramianEvaluator& gram, double horizon,
                               int grid_points) {
  if (!(horizon > 0.0)) {
    throw std::invalid_argument("gramian_csv: horizon must be positive");
  }
  if (grid_points < 2) {
    throw std::invalid_argument("gramian_csv: need at least two grid "
                                "points");
  }
  const Eigen::Index n = gram.dim();
  std::string out = "t";
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      out += ",w_" + std::to_string(r + 1) + "_" + std::to_string(c + 1);
    }
  }
  out += '\n';
  for (int k = 0; k < grid_points; ++k) {
    const double t = (k + 1 == grid_points)
                         ? horizon
                         : horizon * static_cast<double>(k) /
                               static_cast<double>(grid_points - 1);
    const Eigen::MatrixXd w = gram.gramian_unchecked(t);
    out += format_double(t);
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < n; ++c) {
        out += ',';
        out += format_double(w(r, c));
      }
    }
    out += '\n';
  }
  return out;
}

/// Reads an initial swarm: one particle per row, n comma-separated
/// coordinates.  Blank lines and '#' comments are skipped; a leading
/// header row (any alphabetic content) is tolerated.  Returns an n-by-N
/// matrix whose columns are particles.
inline Eigen::MatrixXd swarm_from_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::string line;
  bool first_content = true;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    const auto is_blank = [](const std::string& s) {
      return std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isspace(c);
      });
    };
    if (line.empty() || is_blank(line) || line.front() == '#') {
      continue;
    }
    if (first_content) {
      first_content = false;
      const bool has_alpha =
          std::any_of(line.begin(), line.end(), [](unsigned char c) {
            return std::isalpha(c);
          });
      if (has_alpha) {
        continue;  // header row
      }
    }
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      const auto begin = cell.find_first_not_of(" \t");
      const auto end = cell.find_last_not_of(" \t");
      if (begin == std::string::npos) {
        throw SchemaError("swarm: empty cell in row \"" + line + "\"");
      }
      row.push_back(parse_number(cell.substr(begin, end - begin + 1),
                                 "swarm"));
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw SchemaError("swarm: rows must all have " +
                        std::to_string(rows.front().size()) +
                        " coordinates");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw SchemaError("swarm: no particles found");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(rows.front().size());
  const Eigen::Index count = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd x(n, count);
  for (Eigen::Index p = 0; p < count; ++p) {
    for (Eigen::Index r = 0; r < n; ++r) {
      x(r, p) = rows[static_cast<std::size_t>(p)]
                    [static_cast<std::size_t>(r)];
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Builtin map registry
// ---------------------------------------------------------------------------

/// Parses a textual map specification into a callable target map for the
/// nonlinear rearrangement machinery.  Builtins:
///
///   identity                      x -> x
///   translate c1,...,cn           x -> x + c
///   linear PATH                   x -> M x, M an n-by-n matrix JSON file
///   tanh_perturb ALPHA            x -> x + alpha * tanh(x) componentwise
inline DiffeoMap parse_map_spec(const std::string& spec, Eigen::Index n) {
  std::istringstream words(spec);
  std::vector<std::string> tokens;
  std::string tok;
  while (words >> tok) {
    tokens.push_back(tok);
  }
  if (tokens.empty()) {
    throw SchemaError("map: empty specification");
  }
  const std::string& name = tokens.front();
  const auto expect_args = [&](std::size_t count) {
    if (tokens.size() != count + 1) {
      throw SchemaError("map: \"" + name + "\" takes " +
                        std::to_string(count) + " argument(s)");
    }
  };
  if (name == "identity") {
    expect_args(0);
    return diffeo_identity();
  }
  if (name == "translate") {
    expect_args(1);
    std::vector<double> entries;
    std::istringstream cells(tokens[1]);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      entries.push_back(parse_number(cell, "map.translate"));
    }
    if (static_cast<Eigen::Index>(entries.size()) != n) {
      throw SchemaError("map.translate: offset needs " + std::to_string(n) +
                        " comma-separated coordinates");
    }
    Eigen::VectorXd c(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      c(i) = entries[static_cast<std::size_t>(i)];
    }
    return diffeo_translate(c);
  }
  if (name == "linear") {
    expect_args(1);
    const Eigen::MatrixXd m =
        matrix_from_json(load_json_file(tokens[1]), "map.linear");
    if (m.rows() != n || m.cols() != n) {
      throw SchemaError("map.linear: matrix must be " + std::to_string(n) +
                        "-by-" + std::to_string(n));
    }
    return diffeo_linear(m);
  }
  if (name == "tanh_perturb") {
    expect_args(1);
    const double alpha = parse_number(tokens[1], "map.tanh_perturb");
    return diffeo_tanh_perturb(alpha);
  }
  throw SchemaError("map: unknown builtin \"" + name +
                    "\" (have identity, translate, linear, tanh_perturb)");
}

// ---------------------------------------------------------------------------
// Nonlinear closed-loop swarm simulation
// ---------------------------------------------------------------------------

/// Integrates every particle of a swarm through the nonlinear feedback law
/// over one leg period with classical RK4, sampling at every node.  The
/// dynamics match the library's closed-loop consistency check: each
/// particle follows x_dot = A_c x + B u with u from the fixed-point
/// feedback evaluation.
inline std::vector<SwarmState> simulate_diffeo_swarm(
    const DiffeoTask& task, const Eigen::MatrixXd& x_in, int steps) {
  const Eigen::Index n = task.system().base().state_dim();
  if (x_in.rows() != n || x_in.cols() < 1 || !x_in.allFinite()) {
    throw std::invalid_argument(
        "simulate_diffeo_swarm: swarm must be n-by-N (N >= 1) and finite");
  }
  if (steps < tol::kMinStepsPerSegment) {
    throw std::invalid_argument("simulate_diffeo_swarm: need at least " +
                                std::to_string(tol::kMinStepsPerSegment) +
                                " steps");
  }
  const Eigen::MatrixXd& a_c = task.system().closed_loop();
  const Eigen::MatrixXd& b = task.system().base().b();
  const double t_s = task.system().period();
  const double h = t_s / steps;

  const auto deriv = [&](double t,
                         const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    Eigen::MatrixXd u(b.cols(), x.cols());
    for (Eigen::Index p = 0; p < x.cols(); ++p) {
      u.col(p) = task.feedback_eval(x.col(p), t);
    }
    return a_c * x + b * u;
  };

  std::vector<SwarmState> samples;
  samples.reserve(static_cast<std::size_t>(steps) + 1);
  Eigen::MatrixXd x = x_in;
  samples.push_back(SwarmState{0.0, x});
  for (int i = 0; i < steps; ++i) {
    const double t = i * h;
    const double t_end = (i + 1 == steps) ? t_s : t + h;
    const double step = t_end - t;
    const Eigen::MatrixXd k1 = deriv(t, x);
    const Eigen::MatrixXd k2 = deriv(t + 0.5 * step, x + 0.5 * step * k1);
    const Eigen::MatrixXd k3 = deriv(t + 0.5 * step, x + 0.5 * step * k2);
    const Eigen::MatrixXd k4 = deriv(t_end, x + step * k3);
    x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite() || x.norm() > tol::kBlowupNorm) {
      throw IntegrationBlowup(
          "simulate_diffeo_swarm: state diverged during integration",
          t_end);
    }
    samples.push_back(SwarmState{t_end, x});
  }
  return samples;
}

}  // namespace io

}  // namespace steer

#endif  // STEER__IO_HPP_
