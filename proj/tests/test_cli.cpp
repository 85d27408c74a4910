#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "flowspeaker/cli.hpp"

using namespace flowspeaker;
namespace fsys = std::filesystem;

namespace {

const fsys::path kData = fsys::path(FLOWSPEAKER_SOURCE_DIR) / "tests" / "data";

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fsys::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json small_config(const std::string& mode = "proposed") {
  return {
      {"corpus",
       {{"seed", 3},
        {"stylistic_speakers", 2},
        {"aishell_speakers", 4},
        {"didi_speakers", 4},
        {"utterances", 6},
        {"dim", 8},
        {"test_prompts", 4}}},
      {"train",
       {{"seed", 4},
        {"steps", 30},
        {"batch_size", 4},
        {"log_every", 10},
        {"actnorm_init_batch", 32},
        {"mode", mode},
        {"encoder", {{"embed_dim", 8}, {"hidden", 8}, {"filter", 12}, {"gru_hidden", 6},
                     {"style_tokens", 4}, {"token_dim", 8}, {"attn_dim", 5}}},
        {"flow", {{"blocks", 2}, {"hidden", 8}}}}},
      {"generate", {{"n", 3}, {"seed", 5}}},
      {"evaluate", {{"n_per_prompt", 3}, {"seed", 6}}},
      {"paths", {{"corpus_dir", "corpus"}}}};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fsys::temp_directory_path() /
          ("flowspeaker_cli_" +
           std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fsys::remove_all(dir);
    fsys::create_directories(dir);
  }

  fsys::path write_config(const nlohmann::json& j, const std::string& name = "run.json") {
    const fsys::path p = dir / name;
    std::ofstream(p) << j.dump(2);
    return p;
  }

  // gen-corpus + train with the given config; returns the checkpoint path.
  fsys::path prepare(const nlohmann::json& j) {
    const fsys::path cfg = write_config(j);
    EXPECT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "corpus"}).code, 0);
    const CliResult t = cli({"train", "--config", cfg, "--out", dir / "model.json"});
    EXPECT_EQ(t.code, 0) << t.err;
    return dir / "model.json";
  }

  fsys::path dir;
};

}  // namespace

TEST_F(CliTest, GenCorpusWritesFilesAndSummary) {
  const fsys::path cfg = write_config(small_config());
  const CliResult r = cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "c"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fsys::exists(dir / "c" / "speakers.jsonl"));
  EXPECT_TRUE(fsys::exists(dir / "c" / "prompts.jsonl"));
  EXPECT_TRUE(fsys::exists(dir / "c" / "test_prompts.jsonl"));
  EXPECT_NE(r.out.find("10 speakers"), std::string::npos) << r.out;
}

TEST_F(CliTest, GenCorpusIsByteIdenticalOnRerun) {
  const fsys::path cfg = write_config(small_config());
  ASSERT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "a"}).code, 0);
  ASSERT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "b"}).code, 0);
  for (const char* f : {"speakers.jsonl", "prompts.jsonl", "test_prompts.jsonl"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST_F(CliTest, MissingSeedIsConfigErrorNamingField) {
  auto j = small_config();
  j["corpus"].erase("seed");
  const CliResult r = cli({"gen-corpus", "--config", write_config(j), "--out-dir", dir / "c"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("corpus.seed"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownKeyIsConfigError) {
  auto j = small_config();
  j["train"]["learning_rte"] = 0.1;
  const CliResult r = cli({"gen-corpus", "--config", write_config(j), "--out-dir", dir / "c"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rte"), std::string::npos) << r.err;
  j = small_config();
  j["extra"] = 1;
  EXPECT_EQ(cli({"gen-corpus", "--config", write_config(j), "--out-dir", dir / "c"}).code, 2);
}

TEST_F(CliTest, BadFlagsAndMissingFilesAreConfigErrors) {
  EXPECT_EQ(cli({"gen-corpus", "--out-dir", "x"}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"gen-corpus", "--config", dir / "nope.json", "--out-dir", "x"}).code, 2);
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_EQ(cli({"gen-corpus", "--config", dir / "bad.json", "--out-dir", "x"}).code, 2);
}

TEST_F(CliTest, TrainPrintsLossAndCheckpointLoads) {
  const fsys::path cfg = write_config(small_config());
  ASSERT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "corpus"}).code, 0);
  const CliResult r = cli({"train", "--config", cfg, "--out", dir / "m.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("step 10 loss"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("step 30 loss"), std::string::npos) << r.out;
  const Checkpoint cp = load_checkpoint(dir / "m.json");
  EXPECT_EQ(cp.step, 30u);
  EXPECT_TRUE(cp.model.params.flow);
}

TEST_F(CliTest, TrainTwiceIsByteIdentical) {
  const fsys::path cfg = write_config(small_config());
  ASSERT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "corpus"}).code, 0);
  ASSERT_EQ(cli({"train", "--config", cfg, "--out", dir / "a.json"}).code, 0);
  ASSERT_EQ(cli({"train", "--config", cfg, "--out", dir / "b.json"}).code, 0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
}

TEST_F(CliTest, CorpusDirFlagOverridesConfig) {
  auto j = small_config();
  j.erase("paths");
  const fsys::path cfg = write_config(j);
  ASSERT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "elsewhere"}).code, 0);
  EXPECT_EQ(cli({"train", "--config", cfg, "--out", dir / "m.json"}).code, 2);
  EXPECT_EQ(cli({"train", "--config", cfg, "--corpus-dir", dir / "elsewhere", "--out",
                 dir / "m.json"}).code, 0);
}

TEST_F(CliTest, DivergenceExitsThree) {
  auto j = small_config();
  j["train"]["learning_rate"] = 1e8;
  j["train"]["steps"] = 200;
  const fsys::path cfg = write_config(j);
  ASSERT_EQ(cli({"gen-corpus", "--config", cfg, "--out-dir", dir / "corpus"}).code, 0);
  const CliResult r = cli({"train", "--config", cfg, "--out", dir / "m.json"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("step"), std::string::npos) << r.err;
}

TEST_F(CliTest, BaselineCheckpointHasNoFlow) {
  const fsys::path ck = prepare(small_config("baseline"));
  const std::string text = slurp(ck);
  EXPECT_EQ(text.find("\"flow."), std::string::npos);
  EXPECT_EQ(load_checkpoint(ck).model.mode, TrainMode::baseline);

  const CliResult r = cli({"generate", "--checkpoint", ck, "--prompt", "voice from a young man",
                     "--n", "5", "--temperature", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  std::istringstream lines(r.out);
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  EXPECT_EQ(count, 1);
}

TEST_F(CliTest, GenerateWritesDistinctReproducibleEmbeddings) {
  const fsys::path ck = prepare(small_config());
  const std::vector<std::string> args{"generate", "--checkpoint", ck, "--prompt",
                                      "voice from an old woman", "--n", "5",
                                      "--temperature", "1", "--seed", "9"};
  const CliResult a = cli(args);
  const CliResult b = cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  std::istringstream lines(a.out);
  std::string line;
  std::set<std::vector<double>> embs;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["prompt"], "voice from an old woman");
    EXPECT_EQ(j["embedding"].size(), 8u);
    embs.insert(j["embedding"].get<std::vector<double>>());
  }
  EXPECT_EQ(embs.size(), 5u);
}

TEST_F(CliTest, ZeroTemperatureRepeatsOneEmbedding) {
  const fsys::path ck = prepare(small_config());
  const CliResult r = cli({"generate", "--checkpoint", ck, "--prompt", "voice from a young man",
                     "--n", "4", "--temperature", "0", "--out", dir / "g.jsonl"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "g.jsonl");
  std::string line;
  std::set<std::vector<double>> embs;
  int count = 0;
  while (std::getline(in, line)) {
    embs.insert(nlohmann::json::parse(line)["embedding"].get<std::vector<double>>());
    ++count;
  }
  EXPECT_EQ(count, 4);
  EXPECT_EQ(embs.size(), 1u);
}

TEST_F(CliTest, ConfigSuppliesGenerateDefaults) {
  const fsys::path ck = prepare(small_config());
  const CliResult r = cli({"generate", "--checkpoint", ck, "--prompt", "voice from a young man",
                     "--config", dir / "run.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 3);
}

TEST_F(CliTest, UnknownWordExitsFourListingTokens) {
  const fsys::path ck = prepare(small_config());
  const CliResult r = cli({"generate", "--checkpoint", ck, "--prompt", "voice from a robot wizard"});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("robot"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("wizard"), std::string::npos) << r.err;
}

TEST_F(CliTest, ExternalEmbeddingsNeedMatchingWidth) {
  // tests/data/external_ok.jsonl carries 8-dim token vectors, the tiny
  // encoder's embed width.
  const fsys::path ck = prepare(small_config());
  const CliResult r = cli({"generate", "--checkpoint", ck, "--external", kData / "external_ok.jsonl",
                     "--n", "2", "--seed", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 6);
  EXPECT_NE(r.out.find("\"prompt_id\":\"p2\""), std::string::npos);
}

TEST_F(CliTest, EvaluateReportsAllMetrics) {
  const fsys::path ck = prepare(small_config());
  const CliResult r = cli({"evaluate", "--checkpoint", ck, "--config", dir / "run.json", "--out",
                     dir / "report.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("verdict: ", 0), 0u) << r.out;
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const char* k : {"syn2gt-same", "syn2gt-near", "syn2syn-same", "syn2syn-near",
                        "gen2syn-near", "gen2gen-near"}) {
    ASSERT_TRUE(j.contains(k)) << k;
    EXPECT_TRUE(j[k].is_number()) << k;
  }
  EXPECT_TRUE(j["attribute_accuracy"].contains("gender"));
}

TEST_F(CliTest, OneGenerationPerPromptGivesNullGen2Gen) {
  const fsys::path ck = prepare(small_config());
  const CliResult r = cli({"evaluate", "--checkpoint", ck, "--corpus-dir", dir / "corpus",
                     "--n-per-prompt", "1", "--out", dir / "report.json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
  EXPECT_TRUE(j["gen2gen-near"].is_null());
  EXPECT_EQ(j["diverse"], false);
}

TEST_F(CliTest, EvaluateIsByteIdentical) {
  const fsys::path ck = prepare(small_config());
  for (const char* name : {"a.json", "b.json"}) {
    ASSERT_EQ(cli({"evaluate", "--checkpoint", ck, "--config", dir / "run.json", "--out",
                   dir / name}).code, 0);
  }
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
}

TEST_F(CliTest, BadCheckpointFailsWithNonzeroExit) {
  std::ofstream(dir / "junk.json") << "{\"magic\":\"nope\"}";
  const CliResult r = cli({"generate", "--checkpoint", dir / "junk.json", "--prompt", "x"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("magic"), std::string::npos) << r.err;
}

TEST(RunConfig, PathsResolveAgainstConfigDir) {
  const RunConfig rc = parse_run_config(
      {{"paths", {{"corpus_dir", "c"}, {"prompts", "t.jsonl"}}}}, "/base/dir");
  EXPECT_EQ(*rc.corpus_dir, fsys::path("/base/dir/c"));
  EXPECT_EQ(*rc.prompts, fsys::path("/base/dir/t.jsonl"));
  EXPECT_FALSE(rc.has_corpus);
}

TEST(RunConfig, NegativeTemperatureRejected) {
  EXPECT_THROW(parse_run_config({{"generate", {{"temperature", -1.0}}}}), ConfigError);
  EXPECT_THROW(parse_run_config({{"evaluate", {{"nper", 1}}}}), ConfigError);
}
