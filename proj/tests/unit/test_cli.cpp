#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "mpc/features.hpp"

namespace mpc {
namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "mpc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mpc_cli_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(Cli, LrTable) {
  const CliResult r = run({"lr-table", "--steps", "1,8000,32000"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "step\tlr");
  std::size_t step = 0;
  double lr = 0.0;
  is >> step >> lr;
  EXPECT_EQ(step, 1u);
  EXPECT_NEAR(lr / 1.1180339887e-5, 1.0, 1e-9);
  is >> step >> lr;
  EXPECT_NEAR(lr / 0.0894427191, 1.0, 1e-9);
  is >> step >> lr;
  EXPECT_NEAR(lr / 0.04472135955, 1.0, 1e-9);
}

TEST(Cli, UnknownFlagExitsTwoWithUsage) {
  const CliResult r = run({"lr-table", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--steps"), std::string::npos) << r.err;
  EXPECT_EQ(run({}).code, 2);
}

TEST(Cli, RuntimeErrorExitsOne) {
  const CliResult r = run({"evaluate", "--manifest", "/nonexistent/manifest.tsv", "--hyps", "x"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/manifest.tsv"), std::string::npos) << r.err;
}

TEST(Cli, InspectMasksDrawsFreshPlans) {
  const CliResult r = run({"inspect-masks", "--T", "20", "--seed", "7", "--count", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream is(r.out);
  std::vector<std::vector<std::string>> plans;
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("# plan", 0) == 0) {
      plans.emplace_back();
    } else if (!line.empty() && line[0] != '#') {
      plans.back().push_back(line.substr(0, line.find('\t')));
    }
  }
  ASSERT_EQ(plans.size(), 2u);
  EXPECT_EQ(plans[0].size(), 3u);
  EXPECT_EQ(plans[1].size(), 3u);
  EXPECT_NE(plans[0], plans[1]);
  EXPECT_EQ(run({"inspect-masks", "--T", "20", "--seed", "7", "--count", "2"}).out, r.out);
}

TEST(Cli, EvaluateScoresHypothesisFile) {
  const auto dir = scratch("eval");
  write_manifest(dir / "m.tsv", {{"a", "a.wav", "s", "abc"}, {"b", "b.wav", "s", "de"}});
  {
    std::ofstream h(dir / "hyps.tsv");
    h << "a\tabc\nb\tde\n";
  }
  const CliResult r = run({"evaluate", "--manifest", (dir / "m.tsv").string(), "--hyps", (dir / "hyps.tsv").string(),
                           "--out", (dir / "report.tsv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream report(dir / "report.tsv");
  std::string line;
  std::getline(report, line);
  EXPECT_EQ(line, "a\t0\tabc\tabc");
  std::filesystem::remove_all(dir);
}

TEST(Cli, SynthThenFeaturize) {
  const auto dir = scratch("synth");
  const CliResult s = run({"synth", "--out", dir.string(), "--count", "3", "--seed", "2"});
  ASSERT_EQ(s.code, 0) << s.err;
  const auto entries = read_manifest(dir / "manifest.tsv");
  ASSERT_EQ(entries.size(), 3u);
  const CliResult f = run({"featurize", "--manifest", (dir / "manifest.tsv").string(), "--out", (dir / "f.ark").string()});
  ASSERT_EQ(f.code, 0) << f.err;
  const auto feats = read_feature_archive(dir / "f.ark");
  ASSERT_EQ(feats.size(), 3u);
  for (const auto& seq : feats) {
    EXPECT_EQ(seq.dim(), 40u);
    EXPECT_GT(seq.num_frames(), 20u);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "f.ark.stats"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace mpc
