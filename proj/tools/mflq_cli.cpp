// Command-line front end: mflq <command> [options].
//
// Exit codes: 0 success, 2 invalid input, 3 finite escape, 4 verification
// failure, 1 anything else.

#include "mflq/io/document.hpp"
#include "mflq/io/report.hpp"
#include "mflq/mflq.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using mflq::io::Json;

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitEscape = 3;
constexpr int kExitVerification = 4;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<double> parse_numbers(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(what + ": cannot parse '" + item + "' as a number");
    }
  }
  return out;
}

// --law mean=1,2 --law brownian_load=0,1 --law indep_load=1,0,0,1
mflq::InitialLaw apply_law(mflq::InitialLaw law, const std::vector<std::string>& items, int n) {
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--law: expected key=values, got '" + item + "'");
    const std::string key = item.substr(0, eq);
    const std::vector<double> v = parse_numbers(item.substr(eq + 1), "--law " + key);
    auto as_vec = [&](std::size_t size) {
      if (v.size() != size) {
        throw UsageError("--law " + key + ": expected " + std::to_string(size) + " values, got " +
                         std::to_string(v.size()));
      }
      return Eigen::Map<const mflq::Vec>(v.data(), static_cast<Eigen::Index>(size));
    };
    if (key == "mean") {
      law.mean = as_vec(n);
    } else if (key == "brownian_load" || key == "brownian") {
      law.brownian_load = as_vec(n);
    } else if (key == "indep_load" || key == "indep") {
      const mflq::Vec flat = as_vec(static_cast<std::size_t>(n) * n);
      law.indep_load = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                      Eigen::RowMajor>>(flat.data(), n, n);
    } else {
      throw UsageError("--law: unknown key '" + key + "' (mean, brownian_load, indep_load)");
    }
  }
  return law;
}

int gre_steps(const mflq::io::ProblemDocument& doc, int flag) {
  return flag > 0 ? flag : doc.problem.horizon.n_steps;
}

void emit(const Json& j) { std::cout << mflq::io::dump(j); }

std::vector<double> default_times(const mflq::TimeGrid& h) {
  std::vector<double> out;
  for (int k = 0; k <= 4; ++k) out.push_back(k == 4 ? h.tT : h.t0 + k * (h.tT - h.t0) / 4);
  return out;
}

void write_csv(const std::string& dir, const mflq::ClosedLoopSolution& sol,
               const mflq::io::ProblemDocument& doc) {
  std::filesystem::create_directories(dir);
  const auto& g = sol.gre;
  const mflq::MeanPath mean =
      mflq::mean_ode(doc.problem, sol.strategy, doc.law.mean, g.grid.n_steps);
  const std::string path = (std::filesystem::path(dir) / "solution.csv").string();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  const int n = doc.problem.n;
  const int m = doc.problem.m;
  out << "time";
  auto header = [&](const char* name, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) out << ',' << name << '_' << i << '_' << j;
    }
  };
  header("P", n, n);
  header("Pi", n, n);
  header("Theta", m, n);
  header("Gamma", m, n);
  for (int i = 0; i < n; ++i) out << ",EX_" << i;
  out << '\n';
  auto row = [&](const mflq::Mat& M) {
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      for (Eigen::Index j = 0; j < M.cols(); ++j) out << ',' << M(i, j);
    }
  };
  for (int k = 0; k < g.grid.num_nodes(); ++k) {
    out << g.grid.node(k);
    row(g.P[k]);
    row(g.Pi[k]);
    row(g.Theta[k]);
    row(g.Gamma[k]);
    row(mean.ex[k]);
    out << '\n';
  }
}

mflq::ControlSpec pick_strategy(const std::string& which, const mflq::io::ProblemDocument& doc,
                                int steps, Json& info) {
  const auto& p = doc.problem;
  if (which == "zero") {
    info = {{"strategy", "zero"}};
    return mflq::ControlSpec::zero(p.n, p.m);
  }
  if (which == "optimal") {
    const mflq::ClosedLoopSolution sol = mflq::synthesize(p, steps);
    info = {{"strategy", "optimal"}, {"solvable", sol.solvable}};
    return sol.strategy;
  }
  info = {{"strategy", which}};
  return mflq::io::load_control(which, p.n, p.m, p.horizon);
}

bool deterministic_law(const mflq::InitialLaw& law, double t) {
  return law.indep_load.isZero(0.0) && (t == 0.0 || law.brownian_load.isZero(0.0));
}

Json skipped(const std::string& suite, const std::string& reason) {
  return Json{{"suite", suite}, {"status", "skipped"}, {"reason", reason}};
}

struct VerifyFlags {
  std::string suite = "all";
  std::optional<int> paths;
  int controls = 100;
  std::uint64_t seed = 1;
  int sim_steps = 100;
  int qp_steps = 500;
  double abs_tol = 0.0;
};

// Returns {report, all_passed}.
std::pair<Json, bool> run_verify(const mflq::io::ProblemDocument& doc, const VerifyFlags& f,
                                 int steps) {
  const auto& p = doc.problem;
  const std::vector<std::string> all{"qp", "completion", "battery", "degeneration"};
  std::vector<std::string> suites;
  if (f.suite == "all") {
    suites = all;
  } else if (std::find(all.begin(), all.end(), f.suite) != all.end()) {
    suites = {f.suite};
  } else {
    throw UsageError("--suite: expected all, qp, completion, battery or degeneration");
  }

  const mflq::ClosedLoopSolution sol = mflq::synthesize(p, steps);
  Json results = Json::array();
  bool ok = true;
  auto record = [&](const std::string& suite, const mflq::VerificationReport& rep) {
    ok = ok && rep.passed();
    results.push_back(Json{{"suite", suite},
                           {"status", rep.passed() ? "pass" : "fail"},
                           {"checks", mflq::io::to_json(rep)}});
  };

  for (const auto& suite : suites) {
    if (suite == "qp") {
      if (!mflq::is_noiseless(p)) {
        results.push_back(skipped(suite, "problem has diffusion or noise terms"));
        continue;
      }
      if (!deterministic_law(doc.law, p.horizon.t0)) {
        results.push_back(skipped(suite, "initial state is random"));
        continue;
      }
      if (!sol.solvable) {
        results.push_back(skipped(suite, "problem is not closed-loop solvable"));
        continue;
      }
      const double V = mflq::value(sol, doc.law, p).value;
      const mflq::QpConvergence conv = mflq::qp_convergence(p, doc.law.mean, f.qp_steps);
      // Richardson extrapolation of the first-order discretization.
      const double extrapolated = 2.0 * conv.costs[2] - conv.costs[1];
      mflq::VerificationReport rep;
      std::map<std::string, double> meta{{"value", V},
                                         {"qp_cost", conv.costs[2]},
                                         {"qp_extrapolated", extrapolated},
                                         {"K", conv.steps[2]}};
      rep.checks.push_back(mflq::make_check("qp.value", std::abs(extrapolated - V),
                                            1e-3 * (1.0 + std::abs(V)), meta));
      // An exact discretization has nothing to converge; report it as such.
      rep.checks.push_back(mflq::make_check(
          "qp.convergence", conv.exact ? 0.0 : std::abs(std::log(conv.ratio / 2.0)),
          std::log(1.5), {{"ratio", conv.ratio}, {"exact", conv.exact}, {"K", conv.steps[0]}}));
      record(suite, rep);
    } else if (suite == "completion") {
      if (!sol.gre.report.regular) {
        results.push_back(skipped(suite, "Riccati solution is not regular"));
        continue;
      }
      const mflq::ProblemData p0 = mflq::strip_inhomogeneous(p);
      const mflq::ControlSpec spec = mflq::random_control(p.n, p.m, f.seed);
      const int paths = f.paths.value_or(100000);
      const mflq::CompletionResult c =
          mflq::completion_check(p0, sol.gre, spec, paths, f.seed, 2 * f.sim_steps);
      mflq::VerificationReport rep;
      rep.checks.push_back(mflq::make_check("completion.relative_gap", c.gap, 1e-2,
                                            {{"lhs", c.lhs},
                                             {"rhs", c.rhs},
                                             {"diff_stderr", c.diff_stderr},
                                             {"n_paths", c.n_paths},
                                             {"n_steps", c.n_steps},
                                             {"seed", static_cast<double>(f.seed)}}));
      record(suite, rep);
    } else if (suite == "battery") {
      if (!sol.solvable) {
        results.push_back(skipped(suite, "problem is not closed-loop solvable"));
        continue;
      }
      mflq::BatteryOptions opt;
      opt.n_steps = f.sim_steps;
      opt.abs_tol = f.abs_tol;
      record(suite, mflq::lower_bound_battery(p, sol, doc.law, f.controls, f.paths.value_or(2000),
                                              f.seed, opt));
    } else {
      if (!mflq::has_no_mean_field_terms(p)) {
        results.push_back(skipped(suite, "problem has mean-field terms"));
        continue;
      }
      record(suite, mflq::classical_degeneration(p, steps));
    }
  }
  return {Json{{"command", "verify"}, {"passed", ok}, {"results", std::move(results)}}, ok};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field stochastic LQ closed-loop solver"};
  app.require_subcommand(1);

  std::string file;
  int steps = 0;
  std::vector<std::string> law_items;

  auto* solve = app.add_subcommand("solve", "Synthesize the optimal closed-loop strategy");
  std::string times_text;
  std::string csv_dir;
  solve->add_option("file", file, "Problem document")->required();
  solve->add_option("--steps", steps, "Riccati grid steps (default: horizon.steps)");
  solve->add_option("--times", times_text, "Comma-separated sample times");
  solve->add_option("--csv", csv_dir, "Directory for solution.csv");

  auto* regularity = app.add_subcommand("regularity", "Assess regular solvability of the GREs");
  regularity->add_option("file", file, "Problem document")->required();
  regularity->add_option("--steps", steps, "Riccati grid steps");

  auto* value = app.add_subcommand("value", "Value function at the initial law");
  value->add_option("file", file, "Problem document")->required();
  value->add_option("--steps", steps, "Riccati grid steps");
  value->add_option("--law", law_items, "key=v1,v2,... for mean, brownian_load, indep_load");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo cost of a strategy");
  int paths = 10000;
  int sim_steps = 200;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string strategy = "optimal";
  simulate->add_option("file", file, "Problem document")->required();
  simulate->add_option("--paths", paths, "Number of sample paths")->check(CLI::Range(2, 100000000));
  simulate->add_option("--steps", sim_steps, "Euler steps")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", seed, "Random seed");
  simulate->add_option("--threads", threads, "Worker threads (0: all cores)");
  simulate->add_option("--strategy", strategy, "optimal, zero, or a strategy document");
  simulate->add_option("--gre-steps", steps, "Riccati grid steps for --strategy optimal");
  simulate->add_option("--law", law_items, "key=v1,v2,... for mean, brownian_load, indep_load");

  auto* verify = app.add_subcommand("verify", "Run verification suites");
  VerifyFlags vf;
  int verify_paths = 0;
  verify->add_option("file", file, "Problem document")->required();
  verify->add_option("--suite", vf.suite, "all, qp, completion, battery or degeneration");
  verify->add_option("--paths", verify_paths, "Sample paths per simulation");
  verify->add_option("--controls", vf.controls, "Random controls in the battery");
  verify->add_option("--seed", vf.seed, "Random seed");
  verify->add_option("--sim-steps", vf.sim_steps, "Euler steps")->check(CLI::PositiveNumber);
  verify->add_option("--qp-steps", vf.qp_steps, "Coarsest QP grid (K, 2K, 4K are solved)")
      ->check(CLI::PositiveNumber);
  verify->add_option("--steps", steps, "Riccati grid steps");
  verify->add_option("--abs-tol", vf.abs_tol, "Extra absolute slack in the battery (Euler bias)")
      ->check(CLI::NonNegativeNumber);
  verify->add_option("--law", law_items, "key=v1,v2,... for mean, brownian_load, indep_load");

  auto* example = app.add_subcommand("example", "Write a built-in problem document");
  std::string name;
  std::string out_file;
  mflq::RandomSpdOptions spd;
  double t_start = 0.5;
  example->add_option("name", name, "example31, scalar_classic or random_spd")
      ->required()
      ->check(CLI::IsMember(mflq::preset_names()));
  example->add_option("--out", out_file, "Output file (default: stdout)");
  example->add_option("--seed", spd.seed, "random_spd seed");
  example->add_option("--n", spd.n, "random_spd state dimension")->check(CLI::Range(1, 32));
  example->add_option("--m", spd.m, "random_spd control dimension")->check(CLI::Range(1, 32));
  example->add_flag("--inhomogeneous", spd.inhomogeneous, "random_spd with affine terms");
  example->add_option("--t", t_start, "example31 start time in [0, 1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }

  try {
    if (*example) {
      mflq::Preset preset;
      if (name == "example31") {
        if (!(t_start >= 0.0 && t_start < 1.0)) throw UsageError("--t must lie in [0, 1)");
        preset = mflq::example31(t_start);
      } else if (name == "scalar_classic") {
        preset = mflq::scalar_classic();
      } else {
        preset = mflq::random_spd(spd);
      }
      const std::string text = mflq::io::dump(mflq::io::to_json(
          mflq::io::ProblemDocument{preset.problem, preset.law}));
      if (out_file.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(out_file, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + out_file);
        out << text;
      }
      return kExitOk;
    }

    mflq::io::ProblemDocument doc = mflq::io::load_problem(file);
    doc.law = apply_law(doc.law, law_items, doc.problem.n);
    doc.law.check(doc.problem.n);
    const int n_steps = gre_steps(doc, steps);
    if (n_steps < 1) throw UsageError("--steps must be positive");

    if (*solve) {
      const mflq::ClosedLoopSolution sol = mflq::synthesize(doc.problem, n_steps);
      std::vector<double> times = times_text.empty() ? default_times(doc.problem.horizon)
                                                     : parse_numbers(times_text, "--times");
      for (double s : times) {
        if (!doc.problem.horizon.contains(s)) {
          throw UsageError("--times: " + std::to_string(s) + " lies outside the horizon");
        }
      }
      Json out = mflq::io::solve_json(sol, times);
      out["value"] = mflq::io::value_json(mflq::value(sol, doc.law, doc.problem));
      if (!csv_dir.empty()) write_csv(csv_dir, sol, doc);
      emit(Json{{"command", "solve"}, {"result", std::move(out)}});
    } else if (*regularity) {
      const mflq::GreSolution sol = mflq::integrate_gre(doc.problem, n_steps);
      emit(Json{{"command", "regularity"}, {"result", mflq::io::to_json(sol.report, sol.grid)}});
    } else if (*value) {
      const mflq::ClosedLoopSolution sol = mflq::synthesize(doc.problem, n_steps);
      emit(Json{{"command", "value"},
                {"law", mflq::io::to_json(doc.law)},
                {"result", mflq::io::value_json(mflq::value(sol, doc.law, doc.problem))}});
    } else if (*simulate) {
      Json info;
      const mflq::ControlSpec spec = pick_strategy(strategy, doc, n_steps, info);
      const mflq::SimulationReport rep =
          mflq::simulate(doc.problem, spec, doc.law, {paths, sim_steps, seed, threads});
      emit(Json{{"command", "simulate"}, {"strategy", std::move(info)},
                {"result", mflq::io::to_json(rep)}});
    } else if (*verify) {
      if (verify_paths > 0) vf.paths = verify_paths;
      auto [report, ok] = run_verify(doc, vf, n_steps);
      emit(report);
      return ok ? kExitOk : kExitVerification;
    }
    return kExitOk;
  } catch (const mflq::io::DocumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const mflq::FiniteEscapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitEscape;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
