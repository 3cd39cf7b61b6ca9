#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

#ifndef DKT_CLI_PATH
#error "DKT_CLI_PATH must point at the dkt binary"
#endif

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DKT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli end to end") {
  testutil::TempDir dir("cli");
  const std::string out = dir.path().string();

  // synth is byte-deterministic
  REQUIRE(run_cli("--output " + out + " --seed 5 synth --students 60 --questions 18 --concepts 3 "
                  "--out a.csv") == 0);
  REQUIRE(run_cli("--output " + out + " --seed 5 synth --students 60 --questions 18 --concepts 3 "
                  "--out b.csv") == 0);
  CHECK(slurp(dir.path() / "a.csv") == slurp(dir.path() / "b.csv"));

  // train on the fixture
  REQUIRE(run_cli("--output " + out + " --seed 1 train --data " + out +
                  "/a.csv --hidden 8 --iterations 40") == 0);
  CHECK(fs::exists(dir.path() / "model.json"));
  CHECK(fs::exists(dir.path() / "vocab.json"));
  CHECK(fs::exists(dir.path() / "metrics.json"));
  CHECK(slurp(dir.path() / "training_log.csv").starts_with("iteration,loss\n"));

  // eval reuses the model
  CHECK(run_cli("--output " + out + " eval --model " + out + "/model.json --vocab " + out +
                "/vocab.json --data " + out + "/a.csv") == 0);

  // explain: single-step sequence is a valid base case
  CHECK(run_cli("--output " + out + " explain --model " + out + "/model.json --vocab " + out +
                "/vocab.json --interactions c0:1 --target-concept c0") == 0);
  const std::string explanation = slurp(dir.path() / "explanation.json");
  CHECK(explanation.find("\"predicted_probability\"") != std::string::npos);
  CHECK(explanation.find("\"questions\"") != std::string::npos);

  // experiments write their reports
  CHECK(run_cli("--output " + out + " experiment --model " + out + "/model.json --vocab " + out +
                "/vocab.json --data " + out + "/a.csv --prefix-len 6 consistency") == 0);
  CHECK(fs::exists(dir.path() / "consistency.csv"));
  CHECK(fs::exists(dir.path() / "consistency_histogram.json"));

  CHECK(run_cli("--output " + out + " --seed 3 experiment --model " + out + "/model.json --vocab " +
                out + "/vocab.json --data " + out + "/a.csv --prefix-len 6 deletion "
                "--max-deletions 3 --repeats 3") == 0);
  CHECK(fs::exists(dir.path() / "deletion_curves.csv"));

  CHECK(run_cli("--output " + out + " experiment --model " + out + "/model.json --vocab " + out +
                "/vocab.json --data " + out + "/a.csv --prefix-len 6 concept-graph") == 0);
  CHECK(fs::exists(dir.path() / "concept_graph.dot"));
  CHECK(fs::exists(dir.path() / "concept_graph.json"));
}

TEST_CASE("cli exit codes") {
  testutil::TempDir dir("cli_codes");
  const std::string out = dir.path().string();

  SUBCASE("config errors exit 2 without partial outputs") {
    REQUIRE(run_cli("--output " + out + " synth --students 20 --questions 10 --out d.csv") == 0);
    CHECK(run_cli("--output " + out + " train --data " + out +
                  "/d.csv --learning-rate 0 --model-out should_not_exist.json") == 2);
    CHECK(!fs::exists(dir.path() / "should_not_exist.json"));
    CHECK(run_cli("--output " + out + " synth --p-init 1.5") == 2);
    CHECK(run_cli("--no-such-flag") == 2);
    CHECK(run_cli("explain --model x.json --target-concept 0") == 2);  // no sequence given
  }

  SUBCASE("data errors exit 3") {
    std::ofstream bad(dir.path() / "bad.csv");
    bad << "order_id,user_id,problem_id,correct\n1,u,p,1\n";  // no skill_id column
    bad.close();
    CHECK(run_cli("--output " + out + " train --data " + out + "/bad.csv") == 3);
  }

  SUBCASE("io errors exit 4") {
    CHECK(run_cli("--output " + out + " train --data " + out + "/does_not_exist.csv") == 4);
    CHECK(run_cli("--output " + out + " eval --model " + out + "/missing.json --vocab v --data d") ==
          4);
  }

  SUBCASE("deletion with max-deletions >= prefix-len is a config error") {
    REQUIRE(run_cli("--output " + out + " synth --students 30 --questions 10 --out s.csv") == 0);
    REQUIRE(run_cli("--output " + out + " train --data " + out +
                    "/s.csv --hidden 4 --iterations 5") == 0);
    CHECK(run_cli("--output " + out + " experiment --model " + out + "/model.json --vocab " + out +
                  "/vocab.json --data " + out + "/s.csv --prefix-len 4 deletion "
                  "--max-deletions 4") == 2);
  }

  SUBCASE("unknown concept in explain names the concept") {
    REQUIRE(run_cli("--output " + out + " synth --students 20 --questions 8 --out s2.csv") == 0);
    REQUIRE(run_cli("--output " + out + " train --data " + out +
                    "/s2.csv --hidden 4 --iterations 5") == 0);
    const std::string cmd = std::string(DKT_CLI_PATH) + " --output " + out + " explain --model " +
                            out + "/model.json --vocab " + out +
                            "/vocab.json --interactions c0:1 --target-concept nope 2>" + out +
                            "/err.txt";
    const int status = std::system(cmd.c_str());
    CHECK(WEXITSTATUS(status) == 3);
    CHECK(slurp(dir.path() / "err.txt").find("nope") != std::string::npos);
  }
}

TEST_CASE("cli trains on the bundled fixture") {
  testutil::TempDir dir("cli_fixture");
  const std::string out = dir.path().string();
  REQUIRE(run_cli("--output " + out + " --seed 2 train --data " DKT_FIXTURE_PATH
                  " --hidden 16 --iterations 120") == 0);
  CHECK(fs::exists(dir.path() / "model.json"));
  const std::string metrics = slurp(dir.path() / "metrics.json");
  CHECK(metrics.find("\"acc\"") != std::string::npos);
  CHECK(metrics.find("\"auc\"") != std::string::npos);
}

TEST_CASE("cli train seed sweep writes suffixed files") {
  testutil::TempDir dir("cli_sweep");
  const std::string out = dir.path().string();
  REQUIRE(run_cli("--output " + out + " synth --students 40 --questions 10 --out s.csv") == 0);
  REQUIRE(run_cli("--output " + out + " train --data " + out +
                  "/s.csv --hidden 4 --iterations 10 --seeds 1..3") == 0);
  for (int s = 1; s <= 3; ++s) {
    CHECK(fs::exists(dir.path() / ("model_s" + std::to_string(s) + ".json")));
    CHECK(fs::exists(dir.path() / ("metrics_s" + std::to_string(s) + ".json")));
  }
}

TEST_CASE("cli config file with flag override") {
  testutil::TempDir dir("cli_config");
  const std::string out = dir.path().string();
  std::ofstream cfg(dir.path() / "run.toml");
  cfg << "output = \"" << out << "\"\nseed = 9\n\n[synth]\nstudents = 25\nquestions = 6\n";
  cfg.close();

  REQUIRE(run_cli("--config " + out + "/run.toml synth --out from_config.csv") == 0);
  const std::string base = slurp(dir.path() / "from_config.csv");
  CHECK(base.find("s24,") != std::string::npos);  // 25 students -> last id s24

  // flags win over the config file
  REQUIRE(run_cli("--config " + out + "/run.toml synth --students 5 --out flag_wins.csv") == 0);
  const std::string overridden = slurp(dir.path() / "flag_wins.csv");
  CHECK(overridden.find("s4,") != std::string::npos);
  CHECK(overridden.find("s24,") == std::string::npos);
}
