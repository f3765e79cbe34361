#pragma once

// JSON problem and strategy documents.
//
// Matrices are {"rows": r, "cols": c, "data": [row-major]}; a time-varying
// path is {"rows": r, "cols": c, "grid": [[row-major], ...]} with one entry
// per node of a uniform grid over the horizon. Vectors (g, g_bar, law mean,
// brownian_load) are plain arrays. Missing coefficients default to zero.

#include "mflq/core.hpp"
#include "mflq/gre.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mflq::io {

using Json = nlohmann::ordered_json;

class DocumentError : public std::invalid_argument {
 public:
  explicit DocumentError(std::vector<std::string> diagnostics)
      : std::invalid_argument(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string join(const std::vector<std::string>& d) {
    std::string out = "malformed document";
    for (const auto& line : d) out += "\n  " + line;
    return out;
  }
  std::vector<std::string> diagnostics_;
};

struct ProblemDocument {
  ProblemData problem;
  InitialLaw law;

  friend bool operator==(const ProblemDocument&, const ProblemDocument&) = default;
};

// ---------------------------------------------------------------------------
// Emission

inline Json flat(const Mat& M) {
  Json data = Json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    for (Eigen::Index j = 0; j < M.cols(); ++j) data.push_back(M(i, j));
  }
  return data;
}

inline Json to_json(const Mat& M) {
  return Json{{"rows", M.rows()}, {"cols", M.cols()}, {"data", flat(M)}};
}

inline Json vector_json(const Vec& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Json to_json(const MatrixPath& path) {
  if (path.is_constant()) return to_json(path.at(0.0));
  Json grid = Json::array();
  for (const auto& sample : path.samples()) grid.push_back(flat(sample));
  return Json{{"rows", path.rows()}, {"cols", path.cols()}, {"grid", std::move(grid)}};
}

inline Json to_json(const NoiseAffinePath& f, bool with_anchor = false) {
  Json out{{"const", to_json(f.const_part)}, {"noise", to_json(f.noise_part)}};
  if (with_anchor) out["anchor"] = f.anchor == Anchor::initial ? "initial" : "running";
  return out;
}

inline Json to_json(const InitialLaw& law) {
  return Json{{"mean", vector_json(law.mean)},
              {"brownian_load", vector_json(law.brownian_load)},
              {"indep_load", to_json(law.indep_load)}};
}

inline Json to_json(const ProblemDocument& doc) {
  const ProblemData& p = doc.problem;
  Json out;
  out["dims"] = {{"n", p.n}, {"m", p.m}};
  out["horizon"] = {{"t", p.horizon.t0}, {"T", p.horizon.tT}, {"steps", p.horizon.n_steps}};
  for (const auto& f : kCoefficientFields) out[f.name] = to_json(p.*f.member);
  out["G"] = to_json(p.G);
  out["G_bar"] = to_json(p.G_bar);
  for (const auto& f : kInhomogeneityFields) out[f.name] = to_json(p.*f.member);
  out["q_bar"] = to_json(p.q_bar);
  out["rho_bar"] = to_json(p.rho_bar);
  out["g"] = {{"const", vector_json(p.g0)}, {"noise", vector_json(p.g1)}};
  out["g_bar"] = vector_json(p.g_bar);
  out["law"] = to_json(doc.law);
  return out;
}

inline Json to_json(const ControlSpec& spec) {
  return Json{{"feedback", to_json(spec.feedback)},
              {"mean_feedback", to_json(spec.mean_feedback)},
              {"offset", to_json(spec.offset, true)}};
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Reader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& field, const std::string& msg) { errors.push_back(field + ": " + msg); }

  bool number(const Json& j, const std::string& field, double& out) {
    if (!j.is_number()) {
      fail(field, "expected a number");
      return false;
    }
    out = j.get<double>();
    if (!std::isfinite(out)) {
      fail(field, "non-finite value");
      return false;
    }
    return true;
  }

  bool integer(const Json& j, const std::string& field, int& out) {
    if (!j.is_number_integer()) {
      fail(field, "expected an integer");
      return false;
    }
    out = j.get<int>();
    return true;
  }

  bool entries(const Json& j, const std::string& field, Mat& M) {
    if (!j.is_array()) {
      fail(field, "expected an array of numbers");
      return false;
    }
    if (static_cast<Eigen::Index>(j.size()) != M.size()) {
      fail(field, "expected " + std::to_string(M.size()) + " entries, got " +
                      std::to_string(j.size()));
      return false;
    }
    bool ok = true;
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      for (Eigen::Index c = 0; c < M.cols(); ++c) {
        double v = 0.0;
        ok = number(j[i * M.cols() + c], field + "[" + std::to_string(i * M.cols() + c) + "]", v) &&
             ok;
        M(i, c) = v;
      }
    }
    return ok;
  }

  bool shape(const Json& j, const std::string& field, int rows, int cols) {
    if (!j.is_object()) {
      fail(field, "expected an object with rows, cols and data or grid");
      return false;
    }
    int r = -1;
    int c = -1;
    if (!j.contains("rows") || !integer(j["rows"], field + ".rows", r)) {
      if (!j.contains("rows")) fail(field, "missing rows");
      return false;
    }
    if (!j.contains("cols") || !integer(j["cols"], field + ".cols", c)) {
      if (!j.contains("cols")) fail(field, "missing cols");
      return false;
    }
    if (r != rows || c != cols) {
      fail(field, "shape " + std::to_string(r) + "x" + std::to_string(c) + ", expected " +
                      std::to_string(rows) + "x" + std::to_string(cols));
      return false;
    }
    return true;
  }

  Mat matrix(const Json& j, const std::string& field, int rows, int cols) {
    Mat M = Mat::Zero(rows, cols);
    if (!shape(j, field, rows, cols)) return M;
    if (!j.contains("data")) {
      fail(field, "missing data");
      return M;
    }
    entries(j["data"], field + ".data", M);
    return M;
  }

  MatrixPath path(const Json& j, const std::string& field, int rows, int cols,
                  const TimeGrid& horizon) {
    if (!shape(j, field, rows, cols)) return MatrixPath::zero(rows, cols);
    if (j.contains("data") == j.contains("grid")) {
      fail(field, "expected exactly one of data or grid");
      return MatrixPath::zero(rows, cols);
    }
    if (j.contains("data")) return MatrixPath::constant(matrix(j, field, rows, cols));
    const Json& grid = j["grid"];
    if (!grid.is_array() || grid.size() < 2) {
      fail(field + ".grid", "expected an array of at least two samples");
      return MatrixPath::zero(rows, cols);
    }
    std::vector<Mat> samples;
    bool ok = true;
    for (std::size_t k = 0; k < grid.size(); ++k) {
      Mat M = Mat::Zero(rows, cols);
      ok = entries(grid[k], field + ".grid[" + std::to_string(k) + "]", M) && ok;
      samples.push_back(std::move(M));
    }
    if (!ok || !horizon.valid()) return MatrixPath::zero(rows, cols);
    const TimeGrid g{horizon.t0, horizon.tT, static_cast<int>(grid.size()) - 1};
    return MatrixPath::sampled(g, std::move(samples));
  }

  Vec vector(const Json& j, const std::string& field, int size) {
    Mat M = Mat::Zero(size, 1);
    entries(j, field, M);
    return M.col(0);
  }

  NoiseAffinePath affine(const Json& j, const std::string& field, int rows,
                         const TimeGrid& horizon, bool allow_anchor) {
    NoiseAffinePath out = NoiseAffinePath::zero(rows);
    if (!j.is_object()) {
      fail(field, "expected an object with const and noise");
      return out;
    }
    for (const auto& [key, value] : j.items()) {
      if (key != "const" && key != "noise" && !(allow_anchor && key == "anchor")) {
        fail(field + "." + key, "unknown key");
      }
    }
    if (j.contains("const")) out.const_part = path(j["const"], field + ".const", rows, 1, horizon);
    if (j.contains("noise")) out.noise_part = path(j["noise"], field + ".noise", rows, 1, horizon);
    if (allow_anchor && j.contains("anchor")) {
      const Json& a = j["anchor"];
      if (a == "running") {
        out.anchor = Anchor::running;
      } else if (a == "initial") {
        out.anchor = Anchor::initial;
      } else {
        fail(field + ".anchor", "expected \"running\" or \"initial\"");
      }
    }
    return out;
  }

  void finish() const {
    if (!errors.empty()) throw DocumentError(errors);
  }
};

inline Json parse_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw DocumentError({source + ": " + e.what()});
  }
}

}  // namespace detail

inline InitialLaw law_from_json(const Json& j, int n, detail::Reader& rd,
                                const std::string& field = "law") {
  InitialLaw law = InitialLaw::deterministic(Vec::Zero(n));
  if (!j.is_object()) {
    rd.fail(field, "expected an object");
    return law;
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "mean" && key != "brownian_load" && key != "indep_load") {
      rd.fail(field + "." + key, "unknown key");
    }
  }
  if (j.contains("mean")) law.mean = rd.vector(j["mean"], field + ".mean", n);
  if (j.contains("brownian_load")) {
    law.brownian_load = rd.vector(j["brownian_load"], field + ".brownian_load", n);
  }
  if (j.contains("indep_load")) law.indep_load = rd.matrix(j["indep_load"], field + ".indep_load", n, n);
  return law;
}

inline ProblemDocument problem_from_json(const Json& j) {
  detail::Reader rd;
  if (!j.is_object()) throw DocumentError({"document: expected an object"});

  int n = 0;
  int m = 0;
  if (!j.contains("dims") || !j["dims"].is_object()) {
    throw DocumentError({"dims: missing object with n and m"});
  }
  const Json& dims = j["dims"];
  if (!dims.contains("n") || !rd.integer(dims["n"], "dims.n", n) || n < 1) {
    rd.fail("dims.n", "expected a positive integer");
  }
  if (!dims.contains("m") || !rd.integer(dims["m"], "dims.m", m) || m < 1) {
    rd.fail("dims.m", "expected a positive integer");
  }
  TimeGrid horizon;
  horizon.n_steps = kDefaultGreSteps;  // when "steps" is omitted
  if (!j.contains("horizon") || !j["horizon"].is_object()) {
    rd.fail("horizon", "missing object with t, T and steps");
  } else {
    const Json& h = j["horizon"];
    if (!h.contains("t") || !rd.number(h["t"], "horizon.t", horizon.t0)) rd.fail("horizon.t", "required");
    if (!h.contains("T") || !rd.number(h["T"], "horizon.T", horizon.tT)) rd.fail("horizon.T", "required");
    if (h.contains("steps")) rd.integer(h["steps"], "horizon.steps", horizon.n_steps);
    if (!horizon.valid()) rd.fail("horizon", "require t < T and steps >= 1");
  }
  rd.finish();

  static const std::vector<std::string> known = [] {
    std::vector<std::string> k{"dims", "horizon", "G", "G_bar", "q_bar", "rho_bar", "g", "g_bar", "law"};
    for (const auto& f : kCoefficientFields) k.push_back(f.name);
    for (const auto& f : kInhomogeneityFields) k.push_back(f.name);
    return k;
  }();
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) rd.fail(key, "unknown field");
  }

  ProblemDocument doc;
  ProblemData& p = doc.problem;
  p = ProblemData::zero(n, m, horizon);
  for (const auto& f : kCoefficientFields) {
    if (j.contains(f.name)) {
      p.*f.member = rd.path(j[f.name], f.name, dim_value(f.rows, n, m), dim_value(f.cols, n, m),
                            horizon);
    }
  }
  if (j.contains("G")) p.G = rd.matrix(j["G"], "G", n, n);
  if (j.contains("G_bar")) p.G_bar = rd.matrix(j["G_bar"], "G_bar", n, n);
  for (const auto& f : kInhomogeneityFields) {
    if (j.contains(f.name)) {
      p.*f.member = rd.affine(j[f.name], f.name, dim_value(f.rows, n, m), horizon, false);
    }
  }
  if (j.contains("q_bar")) p.q_bar = rd.path(j["q_bar"], "q_bar", n, 1, horizon);
  if (j.contains("rho_bar")) p.rho_bar = rd.path(j["rho_bar"], "rho_bar", m, 1, horizon);
  if (j.contains("g")) {
    const Json& g = j["g"];
    if (!g.is_object()) {
      rd.fail("g", "expected an object with const and noise");
    } else {
      if (g.contains("const")) p.g0 = rd.vector(g["const"], "g.const", n);
      if (g.contains("noise")) p.g1 = rd.vector(g["noise"], "g.noise", n);
    }
  }
  if (j.contains("g_bar")) p.g_bar = rd.vector(j["g_bar"], "g_bar", n);
  doc.law = j.contains("law") ? law_from_json(j["law"], n, rd)
                              : InitialLaw::deterministic(Vec::Zero(n));
  rd.finish();

  std::vector<std::string> semantic;
  for (const auto& v : validate(p)) {
    semantic.push_back(v.field + (v.node >= 0 ? " (node " + std::to_string(v.node) + ")" : "") +
                       ": " + v.message);
  }
  if (!semantic.empty()) throw DocumentError(semantic);
  return doc;
}

inline ControlSpec control_from_json(const Json& j, int n, int m, const TimeGrid& horizon) {
  detail::Reader rd;
  if (!j.is_object()) throw DocumentError({"strategy: expected an object"});
  for (const auto& [key, value] : j.items()) {
    if (key != "feedback" && key != "mean_feedback" && key != "offset") rd.fail(key, "unknown field");
  }
  ControlSpec spec = ControlSpec::zero(n, m);
  if (j.contains("feedback")) spec.feedback = rd.path(j["feedback"], "feedback", m, n, horizon);
  if (j.contains("mean_feedback")) {
    spec.mean_feedback = rd.path(j["mean_feedback"], "mean_feedback", m, n, horizon);
  }
  if (j.contains("offset")) spec.offset = rd.affine(j["offset"], "offset", m, horizon, true);
  rd.finish();
  return spec;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DocumentError({path + ": cannot open file"});
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ProblemDocument load_problem(const std::string& path) {
  return problem_from_json(detail::parse_text(read_file(path), path));
}

inline ControlSpec load_control(const std::string& path, int n, int m, const TimeGrid& horizon) {
  return control_from_json(detail::parse_text(read_file(path), path), n, m, horizon);
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace mflq::io
