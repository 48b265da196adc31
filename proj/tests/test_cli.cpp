#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "streammem/harness.hpp"
#include "test_util.hpp"

using namespace streammem;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with stdin from /dev/null unless `input` is given.
Result cli(const std::string& args, const std::string& input = "") {
  std::string cmd = std::string(STREAMMEM_CLI) + " " + args + " 2>&1";
  cmd = input.empty() ? cmd + " < /dev/null" : "printf '" + input + "' | " + cmd;
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

fs::path small_trace(const fs::path& dir) {
  TraceGenOptions o;
  o.scenes = 2;
  o.scene_duration = 6.0;
  o.seed = 4;
  const auto path = dir / "trace.jsonl";
  save_trace(path, generate_trace(o));
  return path;
}

}  // namespace

TEST(Cli, UnknownFlagIsInputError) {
  EXPECT_EQ(cli("run --bogus").code, 2);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("run --trace x --preset turbo").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, MissingOrMalformedTrace) {
  testutil::TempDir dir("cli_bad");
  EXPECT_EQ(cli("run --trace " + q(dir.path() / "none.jsonl")).code, 2);
  std::ofstream(dir.path() / "bad.jsonl") << "{\"type\":\"header\",\"version\":1,\"source\":{}}\n";
  const auto r = cli("run --trace " + q(dir.path() / "bad.jsonl") + " --out " + q(dir.path() / "o"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("line 1"), std::string::npos) << r.out;
}

TEST(Cli, UnknownConfigKeyIsInputError) {
  testutil::TempDir dir("cli_cfg");
  const auto trace = small_trace(dir.path());
  std::ofstream(dir.path() / "c.json") << R"({"chunk_len_Q": 3})";
  EXPECT_EQ(cli("run --trace " + q(trace) + " --config " + q(dir.path() / "c.json")).code, 2);
}

TEST(Cli, UnreachableBackendExitsThree) {
  testutil::TempDir dir("cli_remote");
  const auto trace = small_trace(dir.path());
  std::ofstream(dir.path() / "c.json")
      << R"({"remote_base_url": "http://127.0.0.1:1", "remote_retry_count": 0, "remote_timeout": 0.5})";
  const auto r = cli("run --backend remote --trace " + q(trace) + " --config " + q(dir.path() / "c.json") +
                     " --out " + q(dir.path() / "o"));
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("backend error"), std::string::npos) << r.out;
}

TEST(Cli, RunEchoesPresetConfig) {
  testutil::TempDir dir("cli_run");
  const auto trace = small_trace(dir.path());
  const auto out = dir.path() / "out";
  const auto r = cli("run --preset slow --seed 9 --trace " + q(trace) + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto report = nlohmann::json::parse(std::ifstream(out / "report.json"));
  EXPECT_EQ(report["config"]["preset"], "slow");
  EXPECT_EQ(report["config"]["threshold_t"], 0.13);
  EXPECT_EQ(report["config"]["chunk_len_L"], 35);
  EXPECT_EQ(report["config"]["rng_seed"], 9);
  EXPECT_TRUE(fs::exists(out / "transcript.jsonl"));
  EXPECT_NE(r.out.find("accuracy"), std::string::npos);
}

TEST(Cli, ConfigFileCanPickPreset) {
  testutil::TempDir dir("cli_cfg_preset");
  const auto trace = small_trace(dir.path());
  std::ofstream(dir.path() / "c.json") << R"({"preset": "fast", "group_size_g": 4})";
  const auto out = dir.path() / "out";
  ASSERT_EQ(cli("run --trace " + q(trace) + " --config " + q(dir.path() / "c.json") + " --out " + q(out)).code, 0);
  const auto cfg = nlohmann::json::parse(std::ifstream(out / "report.json"))["config"];
  EXPECT_EQ(cfg["threshold_t"], 0.58);
  EXPECT_EQ(cfg["group_size_g"], 4);
}

TEST(Cli, GenTraceWritesLoadableTrace) {
  testutil::TempDir dir("cli_gen");
  const auto path = dir.path() / "g.jsonl";
  const auto r = cli("gen-trace --out " + q(path) + " --seed 5 --scenes 3 --duration 4");
  ASSERT_EQ(r.code, 0) << r.out;
  const Trace t = load_trace(path);
  EXPECT_EQ(t.source.synthetic.scenes.size(), 3u);
  EXPECT_FALSE(t.queries.empty());
  EXPECT_EQ(cli("gen-trace --out " + q(path) + " --scenes 0").code, 2);
}

TEST(Cli, SweepWritesCsv) {
  testutil::TempDir dir("cli_sweep");
  const auto trace = small_trace(dir.path());
  const auto out = dir.path() / "sw";
  const auto r = cli("sweep --trace " + q(trace) + " --param t --values 0.1,0.58 --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.out;
  std::ifstream in(out / "sweep.csv");
  std::string header, row;
  std::getline(in, header);
  EXPECT_EQ(header, "value,accuracy,rpd_mean,fps,kept_ratio");
  int rows = 0;
  while (std::getline(in, row)) rows += !row.empty();
  EXPECT_EQ(rows, 2);
  EXPECT_EQ(cli("sweep --trace " + q(trace) + " --param x --values 1 --out " + q(out)).code, 2);
  EXPECT_EQ(cli("sweep --trace " + q(trace) + " --param L --values 2.5 --out " + q(out)).code, 2);
}

TEST(Cli, ReplAnswersAndQuits) {
  testutil::TempDir dir("cli_repl");
  const auto trace = small_trace(dir.path());
  const auto r = cli("repl --pace 0 --trace " + q(trace) + " --out " + q(dir.path() / "o"),
                     ":sync\\nwhat did you see at the park\\nquit\\n");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("answer: "), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("answers 1"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir.path() / "o" / "report.json"));
}
