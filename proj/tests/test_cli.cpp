#include "carve/cli.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace carve {
namespace {

class TempDir {
 public:
  TempDir() {
    path_ = std::filesystem::temp_directory_path() /
            ("carve_cli_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter_++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

std::string capture_run(const std::vector<std::string>& args, int expect_code) {
  testing::internal::CaptureStdout();
  const int code = run_cli(args);
  const std::string out = testing::internal::GetCapturedStdout();
  EXPECT_EQ(code, expect_code) << "args: " << (args.empty() ? "" : args[0])
                               << " stdout: " << out;
  return out;
}

TEST(Cli, VersionFlag) {
  const std::string out = capture_run({"--version"}, 0);
  EXPECT_NE(out.find(kCliVersion), std::string::npos);
}

TEST(Cli, EndToEndFlow) {
  TempDir dir;
  io::write_lines(dir.file("bench.cfg"),
                  {"num_experiences = 2", "domains_per_experience = 2",
                   "models_per_domain = 3", "queries_per_model = 10",
                   "feature_dim = 16", "seed = 2"});
  const std::string gen_out = capture_run(
      {"gen-bench", "--spec", dir.file("bench.cfg"), "--out", dir.file("data")}, 0);
  EXPECT_NE(gen_out.find("wrote 2 experiences (12 models, 120 examples)"),
            std::string::npos);
  ASSERT_TRUE(std::filesystem::exists(dir.file("data/manifest.json")));

  io::write_lines(dir.file("train.cfg"),
                  {"strategy = carve", "seeds = 1",
                   "dataset = " + dir.file("data"), "out = " + dir.file("out"),
                   "train.embed_dim = 8", "train.epochs = 1",
                   "train.batch_size = 16", "train.lr_proj = 0.005",
                   "train.lr_emb = 0.01", "sampling.k_total = 4",
                   "sampling.k_hard = 1", "sampling.k_semantic = 1",
                   "sampling.k_far = 1", "replay.budget = 8"});
  const std::string train_out =
      capture_run({"train", "--config", dir.file("train.cfg")}, 0);
  EXPECT_NE(train_out.find("model_accuracy: overall_mean="), std::string::npos);
  EXPECT_NE(train_out.find("mean_forgetting="), std::string::npos);
  EXPECT_NE(train_out.find("reports written to " + dir.file("out")),
            std::string::npos);
  ASSERT_TRUE(std::filesystem::exists(dir.file("out/seed_1/router.bin")));

  // eval: written report and the single-metric stdout variant agree.
  capture_run({"eval", "--snapshot", dir.file("out/seed_1/router.bin"),
               "--dataset", dir.file("data"), "--out", dir.file("eval.json")},
              0);
  const auto eval_json = io::read_json(dir.file("eval.json"));
  ASSERT_TRUE(eval_json.contains("model_accuracy"));
  ASSERT_EQ(eval_json["model_accuracy"]["per_experience"].size(), 2u);
  EXPECT_TRUE(eval_json["model_accuracy"]["mean"].is_number());

  const std::string eval_out = capture_run(
      {"eval", "--snapshot", dir.file("out/seed_1/router.bin"), "--dataset",
       dir.file("data"), "--metric", "domain_accuracy"},
      0);
  const auto filtered = nlohmann::json::parse(eval_out);
  EXPECT_EQ(filtered.size(), 1u);
  EXPECT_TRUE(filtered.contains("domain_accuracy"));
  EXPECT_DOUBLE_EQ(
      filtered["domain_accuracy"]["mean"].get<double>(),
      (filtered["domain_accuracy"]["per_experience"][0].get<double>() +
       filtered["domain_accuracy"]["per_experience"][1].get<double>()) /
          2.0);

  // route: k lines of "model-id<TAB>score", scores descending.
  const std::string route_out = capture_run(
      {"route", "--snapshot", dir.file("out/seed_1/router.bin"), "--registry",
       dir.file("out/seed_1/registry.json"), "--query", "route somewhere", "--k",
       "2"},
      0);
  std::vector<std::string> lines;
  std::istringstream is(route_out);
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 2u);
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& line : lines) {
    const auto tab = line.find('\t');
    ASSERT_NE(tab, std::string::npos) << line;
    EXPECT_NE(line.find('/'), std::string::npos);  // ids are owner/repo
    const double score = std::stod(line.substr(tab + 1));
    EXPECT_LE(score, prev);
    prev = score;
  }

  const std::string rb_out = capture_run(
      {"replay-build", "--dataset", dir.file("data"), "--out",
       dir.file("audit.jsonl"), "--budget", "8", "--min-per-domain", "1"},
      0);
  EXPECT_NE(rb_out.find("selected 8 of 96 training examples"), std::string::npos);
  const auto audit = io::read_jsonl(dir.file("audit.jsonl"));
  EXPECT_EQ(audit.size(), 8u);
  for (const auto& entry : audit) {
    EXPECT_TRUE(entry.contains("experience_index"));
    EXPECT_TRUE(entry.contains("example_index"));
    EXPECT_TRUE(entry.contains("model_name"));
    EXPECT_TRUE(entry.contains("domain"));
  }

  const std::string fam_out = capture_run(
      {"families", "--dataset", dir.file("data"), "--out", dir.file("fams.tsv")},
      0);
  EXPECT_NE(fam_out.find("wrote 12 assignments"), std::string::npos);
  std::ifstream fams(dir.file("fams.tsv"));
  std::size_t fam_lines = 0;
  for (std::string line; std::getline(fams, line);) {
    EXPECT_NE(line.find('\t'), std::string::npos);
    ++fam_lines;
  }
  EXPECT_EQ(fam_lines, 12u);
}

TEST(Cli, BadInvocationsExitNonzero) {
  TempDir dir;
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  EXPECT_NE(run_cli(std::vector<std::string>{}), 0);  // subcommand required
  EXPECT_NE(run_cli({"train"}), 0);                   // --config required
  EXPECT_NE(run_cli({"gen-bench", "--spec", dir.file("missing.cfg"), "--out",
                     dir.file("d")}),
            0);
  testing::internal::GetCapturedStdout();
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(err.find("error:"), std::string::npos);  // missing spec file
}

TEST(Cli, UnknownStrategyNamesTheKnownOnes) {
  TempDir dir;
  io::write_lines(dir.file("train.cfg"), {"strategy = nonsense"});
  testing::internal::CaptureStderr();
  const int code = run_cli({"train", "--config", dir.file("train.cfg")});
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(code, 0);
  EXPECT_NE(err.find("unknown strategy 'nonsense'"), std::string::npos);
  EXPECT_NE(err.find("sequential"), std::string::npos);
}

TEST(Cli, EvalRejectsMismatchedSnapshot) {
  TempDir dir;
  io::write_lines(dir.file("a.cfg"),
                  {"num_experiences = 2", "domains_per_experience = 2",
                   "models_per_domain = 3", "queries_per_model = 10",
                   "feature_dim = 16", "seed = 2"});
  io::write_lines(dir.file("b.cfg"),
                  {"num_experiences = 2", "domains_per_experience = 2",
                   "models_per_domain = 2", "queries_per_model = 10",
                   "feature_dim = 16", "seed = 3"});
  capture_run({"gen-bench", "--spec", dir.file("a.cfg"), "--out", dir.file("a")}, 0);
  capture_run({"gen-bench", "--spec", dir.file("b.cfg"), "--out", dir.file("b")}, 0);
  io::write_lines(dir.file("train.cfg"),
                  {"strategy = sequential", "seeds = 1",
                   "dataset = " + dir.file("a"), "out = " + dir.file("out"),
                   "train.embed_dim = 8", "train.epochs = 1",
                   "train.batch_size = 16", "sampling.k_total = 4",
                   "sampling.k_hard = 1", "sampling.k_semantic = 1",
                   "sampling.k_far = 1"});
  capture_run({"train", "--config", dir.file("train.cfg")}, 0);

  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run_cli({"eval", "--snapshot", dir.file("out/seed_1/router.bin"),
                            "--dataset", dir.file("b")});
  testing::internal::GetCapturedStdout();
  const std::string err = testing::internal::GetCapturedStderr();
  EXPECT_NE(code, 0);
  EXPECT_NE(err.find("model rows"), std::string::npos);
}

TEST(Cli, RouteRejectsNonPositiveK) {
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run_cli({"route", "--snapshot", "x", "--registry", "y",
                            "--query", "q", "--k", "0"});
  testing::internal::GetCapturedStdout();
  testing::internal::GetCapturedStderr();
  EXPECT_NE(code, 0);
}

}  // namespace
}  // namespace carve
