#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tate/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = 0;
  std::string out, err;

  nlohmann::json summary() const {
    std::istringstream lines(out);
    std::string line, last;
    while (std::getline(lines, line))
      if (!line.empty()) last = line;
    return nlohmann::json::parse(last);
  }
};

Result tate_run(std::vector<std::string> args) {
  args.insert(args.begin(), "tate");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = tate::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.empty() ? 0 : 1;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("tate_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string tiny_data(std::size_t per_class = 6) {
    const std::string p = path("data.jsonl");
    auto r = tate_run({"synth", "--per-class", std::to_string(per_class), "--dim-visual", "4", "--dim-acoustic", "3",
                       "--dim-textual", "5", "--len-visual", "3", "--len-acoustic", "3", "--len-textual", "2", "--out",
                       p});
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }

  static std::vector<std::string> tiny_model() { return {"--hidden", "8", "--heads", "2", "--batch", "8"}; }

  fs::path dir_;
};

std::vector<std::string> operator+(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_F(Cli, HelpListsEveryFlag) {
  auto r = tate_run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* flag : {"--data", "--teacher", "--pretrain", "--out", "--history", "--eta", "--mode", "--lambda1",
                           "--lambda2", "--lambda3", "--forward-loss", "--backward-loss", "--tag-loss", "--no-tag",
                           "--no-common-space", "--modalities", "--hidden", "--heads", "--dropout", "--lr", "--batch",
                           "--epochs", "--seed", "--config"}) {
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  }
  auto all = tate_run({"--help-all"});
  for (const char* cmd : {"synth", "pretrain", "train", "eval", "gradcheck", "export-embeddings"}) {
    EXPECT_NE(all.out.find(cmd), std::string::npos) << cmd;
  }
}

TEST_F(Cli, UnknownFlagsAndMissingSubcommandAreFatal) {
  EXPECT_EQ(tate_run({"synth", "--out", path("x.jsonl"), "--bogus"}).code, 2);
  EXPECT_EQ(tate_run({}).code, 2);
  EXPECT_EQ(tate_run({"frobnicate"}).code, 2);
}

TEST_F(Cli, SynthCountsAndDeterminism) {
  auto r = tate_run({"synth", "--classes", "3", "--per-class", "100", "--out", path("a.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(path("a.jsonl")), 300u);
  auto j = r.summary();
  EXPECT_EQ(j["command"], "synth");
  EXPECT_EQ(j["class_counts"], nlohmann::json({100, 100, 100}));
  ASSERT_EQ(tate_run({"synth", "--classes", "3", "--per-class", "100", "--out", path("b.jsonl")}).code, 0);
  EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
}

TEST_F(Cli, SynthWarnsWithoutClassSignal) {
  auto r = tate_run({"synth", "--per-class", "3", "--separation", "0", "--out", path("flat.jsonl")});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("no class signal"), std::string::npos);
  EXPECT_EQ(r.summary()["warnings"][0], "no class signal");
  EXPECT_EQ(tate::load_jsonl(path("flat.jsonl")).size(), 9u);
}

TEST_F(Cli, SynthSplitWritesBothFiles) {
  auto r = tate_run({"synth", "--per-class", "10", "--out", path("train.jsonl"), "--test-out", path("test.jsonl"),
                     "--test-fraction", "0.2"});
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(line_count(path("train.jsonl")), 24u);
  EXPECT_EQ(line_count(path("test.jsonl")), 6u);
}

TEST_F(Cli, UnwritableOutputIsAnError) {
  auto r = tate_run({"synth", "--per-class", "1", "--out", path("no/such/dir/x.jsonl")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("cannot open"), std::string::npos);
}

TEST_F(Cli, ConfigPrecedenceIsFileThenEnvironmentThenFlags) {
  std::ofstream(path("run.cfg")) << "# flat key=value\nper-class = 2\nclasses=2\n";
  auto r = tate_run({"synth", "--config", path("run.cfg"), "--out", path("c.jsonl")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(path("c.jsonl")), 4u);
  EXPECT_NE(r.err.find("per-class=2"), std::string::npos);  // effective configuration is echoed

  ::setenv("TATE_PER_CLASS", "3", 1);
  r = tate_run({"synth", "--config", path("run.cfg"), "--out", path("c.jsonl")});
  EXPECT_EQ(line_count(path("c.jsonl")), 6u);
  r = tate_run({"synth", "--config", path("run.cfg"), "--per-class", "5", "--out", path("c.jsonl")});
  EXPECT_EQ(line_count(path("c.jsonl")), 10u);
  ::unsetenv("TATE_PER_CLASS");

  std::ofstream(path("bad.cfg")) << "per-class=2\nlearning-rate=0.1\n";
  r = tate_run({"synth", "--config", path("bad.cfg"), "--out", path("c.jsonl")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning-rate"), std::string::npos);
}

TEST_F(Cli, TrainWithoutTeacherNamesThePretrainCommand) {
  const auto data = tiny_data();
  auto r = tate_run(std::vector<std::string>{"train", "--data", data, "--out", path("m.json"), "--epochs", "1"} +
                    tiny_model());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("tate pretrain"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("m.json")));
}

TEST_F(Cli, PretrainTrainEvalExportFlow) {
  const auto data = tiny_data();
  auto p = tate_run(std::vector<std::string>{"pretrain", "--data", data, "--out", path("teacher.json"), "--epochs", "3",
                                             "--history", path("teacher.csv")} +
                    tiny_model());
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(line_count(path("teacher.csv")), 4u);

  auto t = tate_run(std::vector<std::string>{"train", "--data", data, "--teacher", path("teacher.json"), "--out",
                                             path("m.json"), "--history", path("h.csv"), "--epochs", "3", "--eta",
                                             "0.5", "--mode", "multiple"} +
                    tiny_model());
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(line_count(path("h.csv")), 4u);
  auto summary = t.summary();
  EXPECT_EQ(summary["command"], "train");
  EXPECT_EQ(summary["epochs"], 3);
  EXPECT_TRUE(summary.contains("train_accuracy"));

  auto e = tate_run({"eval", "--checkpoint", path("m.json"), "--data", data, "--out", path("eval.csv")});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(line_count(path("eval.csv")), 7u);
  EXPECT_EQ(e.summary()["rows"].size(), 6u);
  auto e2 = tate_run({"eval", "--checkpoint", path("m.json"), "--data", data, "--etas", "0,0.3"});
  EXPECT_EQ(e2.summary()["rows"].size(), 2u);
  auto e3 = tate_run({"eval", "--checkpoint", path("m.json"), "--data", data, "--out", path("eval2.csv")});
  EXPECT_EQ(slurp(path("eval.csv")), slurp(path("eval2.csv")));

  auto x = tate_run({"export-embeddings", "--checkpoint", path("m.json"), "--data", data, "--out", path("emb.csv"),
                     "--representation", "e_all", "--eta", "0.5"});
  ASSERT_EQ(x.code, 0) << x.err;
  EXPECT_EQ(line_count(path("emb.csv")), 18u + 1u);
  // The last four values of E_all are the tag digits named in the pattern column.
  std::ifstream in(path("emb.csv"));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_EQ(cells.size(), 3u + 3 * 8 + 4);
    std::string tail;
    for (std::size_t i = cells.size() - 4; i < cells.size(); ++i) tail += std::stod(cells[i]) > 0.5 ? '1' : '0';
    EXPECT_EQ(tail, cells[2]);
  }
  ASSERT_EQ(tate_run({"export-embeddings", "--checkpoint", path("m.json"), "--data", data, "--out", path("emb2.csv"),
                      "--representation", "e_all", "--eta", "0.5"})
                .code,
            0);
  EXPECT_EQ(slurp(path("emb.csv")), slurp(path("emb2.csv")));
}

TEST_F(Cli, PretrainFlagAndAblationSwitches) {
  const auto data = tiny_data();
  auto full = tate_run(std::vector<std::string>{"train", "--data", data, "--pretrain", "--teacher-out",
                                                path("t.json"), "--out", path("m.json"), "--epochs", "1"} +
                       tiny_model());
  ASSERT_EQ(full.code, 0) << full.err;
  EXPECT_TRUE(fs::exists(path("t.json")));
  auto no_tag_loss = tate_run(std::vector<std::string>{"train", "--data", data, "--teacher", path("t.json"), "--out",
                                                       path("m2.json"), "--epochs", "1", "--lambda3", "0",
                                                       "--history", path("h.csv")} +
                              tiny_model());
  ASSERT_EQ(no_tag_loss.code, 0) << no_tag_loss.err;
  EXPECT_EQ(no_tag_loss.summary()["history_columns"],
            nlohmann::json({"epoch", "cls", "forward", "backward", "total", "train_acc"}));
  EXPECT_EQ(slurp(path("h.csv")).substr(0, 40), "epoch,cls,forward,backward,total,train_a");
  EXPECT_EQ(no_tag_loss.summary()["parameters"], full.summary()["parameters"]);

  // The stored teacher has a tag-width representation, so -w/o tag needs its own.
  auto no_tag = tate_run(std::vector<std::string>{"train", "--data", data, "--teacher", path("t.json"), "--out",
                                                  path("m3.json"), "--epochs", "1", "--no-tag"} +
                         tiny_model());
  EXPECT_EQ(no_tag.code, 2);
  no_tag = tate_run(std::vector<std::string>{"train", "--data", data, "--pretrain", "--out", path("m3.json"),
                                             "--epochs", "1", "--no-tag"} +
                    tiny_model());
  ASSERT_EQ(no_tag.code, 0) << no_tag.err;
  EXPECT_LT(no_tag.summary()["parameters"].get<std::size_t>(), full.summary()["parameters"].get<std::size_t>());

  auto two = tate_run(std::vector<std::string>{"train", "--data", data, "--out", path("m4.json"), "--epochs", "1",
                                               "--lambda1", "0", "--modalities", "acoustic,textual"} +
                      tiny_model());
  ASSERT_EQ(two.code, 0) << two.err;
  EXPECT_EQ(tate_run({"train", "--data", data, "--out", path("m5.json"), "--lambda1", "0", "--modalities", "smell"})
                .code,
            2);
}

TEST_F(Cli, CorruptCheckpointIsALoadError) {
  const auto data = tiny_data();
  std::ofstream(path("broken.json")) << "{\"format\":\"tate-checkpoint\",";
  auto r = tate_run({"eval", "--checkpoint", path("broken.json"), "--data", data});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("corrupt"), std::string::npos);
}

TEST_F(Cli, GradcheckPassesAndHasNegativeControls) {
  auto ok = tate_run({"gradcheck", "--hidden", "8"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  auto j = ok.summary();
  EXPECT_EQ(j["status"], "ok");
  EXPECT_TRUE(j["groups"].contains("encoder"));
  EXPECT_TRUE(j["groups"].contains("common"));
  auto bad = tate_run({"gradcheck", "--hidden", "8", "--inject-fault"});
  EXPECT_NE(bad.code, 0);
  EXPECT_EQ(bad.summary()["status"], "failed");
  EXPECT_EQ(tate::testing::matmul_rhs_grad_scale(), 1.0);
  auto refused = tate_run({"gradcheck", "--dropout", "0.3"});
  EXPECT_EQ(refused.code, 2);
  EXPECT_NE(refused.err.find("dropout"), std::string::npos);
}

TEST_F(Cli, EvalRejectsMismatchedData) {
  const auto data = tiny_data();
  ASSERT_EQ(tate_run(std::vector<std::string>{"train", "--data", data, "--out", path("m.json"), "--epochs", "1",
                                              "--lambda1", "0"} +
                     tiny_model())
                .code,
            0);
  ASSERT_EQ(tate_run({"synth", "--per-class", "2", "--out", path("wide.jsonl")}).code, 0);
  auto r = tate_run({"eval", "--checkpoint", path("m.json"), "--data", path("wide.jsonl")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("width"), std::string::npos);
  EXPECT_EQ(tate_run({"eval", "--checkpoint", path("m.json"), "--data", data, "--etas", "0,1.5"}).code, 2);
}
