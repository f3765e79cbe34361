#include "mflq/io/document.hpp"
#include "mflq/io/report.hpp"
#include "mflq/presets.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#ifndef MFLQ_CLI_PATH
#error "MFLQ_CLI_PATH must point at the mflq executable"
#endif

namespace mflq {
namespace {

namespace fs = std::filesystem;
using io::Json;

io::ProblemDocument round_trip(const io::ProblemDocument& doc) {
  return io::problem_from_json(Json::parse(io::dump(io::to_json(doc))));
}

Json minimal_problem() {
  return Json::parse(R"({"dims": {"n": 1, "m": 1}, "horizon": {"t": 0, "T": 1, "steps": 4}})");
}

std::vector<std::string> diagnostics(const Json& j) {
  try {
    io::problem_from_json(j);
  } catch (const io::DocumentError& e) {
    return e.diagnostics();
  }
  return {};
}

// ---------------------------------------------------------------------------
// Documents

TEST(Document, PresetsRoundTrip) {
  for (const Preset& pr : {example31(0.5), example31(0.2), scalar_classic(),
                           random_spd({.seed = 3, .n = 3, .m = 2, .inhomogeneous = true})}) {
    const io::ProblemDocument doc{pr.problem, pr.law};
    EXPECT_TRUE(round_trip(doc) == doc);
  }
}

TEST(Document, MissingFieldsDefaultToZero) {
  const io::ProblemDocument doc = io::problem_from_json(minimal_problem());
  EXPECT_TRUE(doc.problem == ProblemData::zero(1, 1, TimeGrid{0, 1, 4}));
  EXPECT_EQ(doc.law.mean, Vec::Zero(1));
}

TEST(Document, MatricesAreRowMajor) {
  Json j = Json::parse(R"({"dims": {"n": 2, "m": 1}, "horizon": {"t": 0, "T": 1},
                           "A": {"rows": 2, "cols": 2, "data": [1, 2, 3, 4]}})");
  const ProblemData p = io::problem_from_json(j).problem;
  EXPECT_EQ(p.A.at(0.0)(0, 1), 2.0);
  EXPECT_EQ(p.A.at(0.0)(1, 0), 3.0);
}

TEST(Document, SampledPathsOnTheirOwnGrid) {
  Json j = minimal_problem();
  j["B"] = Json::parse(R"({"rows": 1, "cols": 1, "grid": [[0], [1], [2]]})");
  const ProblemData p = io::problem_from_json(j).problem;
  EXPECT_DOUBLE_EQ(p.B.at(0.25)(0, 0), 0.5);
}

TEST(Document, DiagnosticsNameFields) {
  Json j = minimal_problem();
  j["colour"] = 1;
  j["B"] = Json::parse(R"({"rows": 2, "cols": 1, "data": [1, 2]})");
  j["R"] = Json::parse(R"({"rows": 1, "cols": 1, "data": ["x"]})");
  const auto d = diagnostics(j);
  ASSERT_EQ(d.size(), 3u);
  const std::string all = d[0] + d[1] + d[2];
  EXPECT_NE(all.find("colour"), std::string::npos);
  EXPECT_NE(all.find("B"), std::string::npos);
  EXPECT_NE(all.find("R"), std::string::npos);
}

TEST(Document, SemanticViolationsAreReported) {
  Json j = minimal_problem();
  j["dims"]["n"] = 2;
  j["Q"] = Json::parse(R"({"rows": 2, "cols": 2, "data": [1, 1, 0, 1]})");
  const auto d = diagnostics(j);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].rfind("Q", 0), 0u);
}

TEST(Document, ControlWithFrozenAnchor) {
  const Json j = Json::parse(R"({"offset": {"const": {"rows": 1, "cols": 1, "data": [0]},
                                            "noise": {"rows": 1, "cols": 1, "data": [-2]},
                                            "anchor": "initial"}})");
  const ControlSpec spec = io::control_from_json(j, 1, 1, TimeGrid{0.5, 1, 10});
  EXPECT_EQ(spec.offset.anchor, Anchor::initial);
  EXPECT_EQ(spec.offset.noise_part.at(0.7)(0, 0), -2.0);
  EXPECT_TRUE(spec.feedback.is_zero());
  EXPECT_TRUE(io::control_from_json(io::to_json(spec), 1, 1, TimeGrid{0.5, 1, 10}) == spec);
}

TEST(Report, NonFiniteNumbersBecomeStrings) {
  EXPECT_EQ(io::number(1.5), Json(1.5));
  EXPECT_EQ(io::number(INFINITY), Json("inf"));
  EXPECT_TRUE(io::number(NAN).is_string());
}

// ---------------------------------------------------------------------------
// Command line

struct CliRun {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mflq_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  CliRun run(const std::string& args) const {
    const std::string cmd = std::string(MFLQ_CLI_PATH) + " " + args + " 2>/dev/null";
    CliRun r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, got);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
  }

  Json run_json(const std::string& args, int expected_code = 0) const {
    const CliRun r = run(args);
    EXPECT_EQ(r.code, expected_code) << args;
    return Json::parse(r.out);
  }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(path(name)) << text;
  }

  fs::path dir_;
};

TEST_F(Cli, ExamplePresetRoundTrips) {
  ASSERT_EQ(run("example scalar_classic --out " + path("sc.json")).code, 0);
  const io::ProblemDocument doc = io::load_problem(path("sc.json"));
  const Preset pr = scalar_classic();
  EXPECT_TRUE(doc == (io::ProblemDocument{pr.problem, pr.law}));
  ASSERT_EQ(run("example random_spd --seed 4 --n 3 --m 2 --inhomogeneous --out " + path("r.json"))
                .code,
            0);
  const Preset spd = random_spd({.seed = 4, .n = 3, .m = 2, .inhomogeneous = true});
  EXPECT_TRUE(io::load_problem(path("r.json")) == (io::ProblemDocument{spd.problem, spd.law}));
}

TEST_F(Cli, Example31IsNotRegular) {
  ASSERT_EQ(run("example example31 --out " + path("ex.json")).code, 0);
  const Json j = run_json("regularity " + path("ex.json"));
  EXPECT_FALSE(j["result"]["regular"].get<bool>());
  bool found = false;
  for (const auto& c : j["result"]["conditions"]) {
    if (c["name"] == "range(Sigma)") {
      found = true;
      EXPECT_FALSE(c["passed"].get<bool>());
      EXPECT_EQ(c["worst_value"].get<double>(), 0.5);
      EXPECT_EQ(c["failing_nodes"].get<int>(), 1001);
    }
  }
  EXPECT_TRUE(found);

  const Json v = run_json("value " + path("ex.json"));
  EXPECT_NEAR(v["result"]["value"].get<double>(), 2.0, 1e-12);
  EXPECT_FALSE(v["result"]["valid"].get<bool>());
}

TEST_F(Cli, ScalarClassicValueAndSimulation) {
  ASSERT_EQ(run("example scalar_classic --out " + path("sc.json")).code, 0);
  const Json v = run_json("value " + path("sc.json"));
  EXPECT_NEAR(v["result"]["value"].get<double>(), 0.5, 1e-8);
  EXPECT_TRUE(v["result"]["valid"].get<bool>());

  const Json s = run_json("simulate " + path("sc.json") + " --paths 10 --steps 1000");
  EXPECT_NEAR(s["result"]["cost_mean"].get<double>(), 0.5, 1e-3);
  EXPECT_EQ(s["result"]["cost_stderr"].get<double>(), 0.0);
}

TEST_F(Cli, ZeroStrategyOnExample31CostsTwo) {
  ASSERT_EQ(run("example example31 --out " + path("ex.json")).code, 0);
  const Json s = run_json("simulate " + path("ex.json") + " --strategy zero --paths 100");
  EXPECT_EQ(s["result"]["cost_mean"].get<double>(), 2.0);
  EXPECT_EQ(s["result"]["cost_stderr"].get<double>(), 0.0);
}

TEST_F(Cli, RepeatedRunsAreByteIdentical) {
  ASSERT_EQ(run("example random_spd --seed 2 --inhomogeneous --out " + path("r.json")).code, 0);
  const std::string sim = "simulate " + path("r.json") + " --paths 600 --steps 30 --seed 5";
  const CliRun a = run(sim + " --threads 1");
  const CliRun b = run(sim + " --threads 3");
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  const std::string ver = "verify " + path("r.json") +
                          " --suite battery --controls 5 --paths 300 --sim-steps 20 --seed 3";
  const CliRun c = run(ver);
  EXPECT_EQ(c.out, run(ver).out);
  EXPECT_NE(c.out.find("battery.lower_bound"), std::string::npos);
}

TEST_F(Cli, VerifySuites) {
  ASSERT_EQ(run("example scalar_classic --out " + path("sc.json")).code, 0);
  const Json j = run_json("verify " + path("sc.json") + " --suite qp --qp-steps 100");
  EXPECT_TRUE(j["passed"].get<bool>());
  const Json& qp = j["results"][0];
  EXPECT_EQ(qp["suite"], "qp");
  ASSERT_EQ(qp["checks"].size(), 2u);
  for (const auto& c : qp["checks"]) EXPECT_EQ(c["status"], "pass") << c.dump();
  EXPECT_EQ(qp["checks"][1]["metadata"]["exact"], 1.0);

  // Deterministic paths give stderr 0; the battery still passes at round-off.
  const Json all = run_json("verify " + path("sc.json") + " --suite all --controls 10");
  EXPECT_TRUE(all["passed"].get<bool>()) << all.dump();
  EXPECT_EQ(all["results"].size(), 4u);

  ASSERT_EQ(run("example random_spd --seed 5 --out " + path("r.json")).code, 0);
  const Json d = run_json("verify " + path("r.json") + " --suite degeneration");
  EXPECT_EQ(d["results"][0]["status"], "skipped");
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("solve " + path("missing.json")).code, 2);
  write("bad.json", R"({"dims": {"n": 1, "m": 1}, "horizon": {"t": 0, "T": 1}, "B": 3})");
  EXPECT_EQ(run("solve " + path("bad.json")).code, 2);
  write("broken.json", "{");
  EXPECT_EQ(run("solve " + path("broken.json")).code, 2);
  // R = -1: the Riccati solution escapes near s = 1.
  write("escape.json", R"({"dims": {"n": 1, "m": 1}, "horizon": {"t": 0, "T": 2},
    "B": {"rows": 1, "cols": 1, "data": [1]}, "R": {"rows": 1, "cols": 1, "data": [-1]},
    "G": {"rows": 1, "cols": 1, "data": [1]}})");
  EXPECT_EQ(run("solve " + path("escape.json")).code, 3);
  ASSERT_EQ(run("example scalar_classic --out " + path("sc.json")).code, 0);
  EXPECT_EQ(run("verify " + path("sc.json") + " --suite nonsense").code, 2);
}

TEST_F(Cli, SolveWritesCsv) {
  ASSERT_EQ(run("example scalar_classic --out " + path("sc.json")).code, 0);
  const Json j = run_json("solve " + path("sc.json") + " --steps 100 --times 0,1 --csv " +
                          path("csv"));
  EXPECT_TRUE(j["result"]["solvable"].get<bool>());
  std::ifstream in(path("csv/solution.csv"));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("time,", 0), 0u);
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 101);
}

}  // namespace
}  // namespace mflq
