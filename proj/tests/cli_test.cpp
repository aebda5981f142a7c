#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "attnpop/cli.hpp"
#include "attnpop/synthetic.hpp"
#include "test_util.hpp"

namespace attnpop {
namespace {

using testing::TempDir;

struct RunOutput {
  int code = -1;
  std::string out;
  std::string err;
};

RunOutput run(std::vector<std::string> args) {
  args.insert(args.begin(), "attnpop");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  RunOutput r;
  r.code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const std::filesystem::path& p) { return binio::read_file(p); }

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    SyntheticOptions o;
    o.records = 60;
    o.frames = 2;
    o.feature_dim = 4;
    o.word_dim = 3;
    o.conv_k = 2;
    o.seed = 3;
    write_synthetic(make_synthetic(SyntheticTask::bimodal, o), dir_->path() / "data");
    binio::write_file(dir_->path() / "small.json",
                      R"({"model": {"embed_dim": 4, "video_attention_hidden": 3, "text_attention_hidden": 3,
                          "lstm_hidden": 3, "fusion_dim": 4}, "train": {"max_epochs": 2, "batch_size": 8}})");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::string path(const std::string& name) { return (dir_->path() / name).string(); }
  static std::string manifest() { return path("data/manifest.jsonl"); }
  static std::string glove() { return path("data/glove.txt"); }

  static RunOutput train_cli(const std::string& modality, const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train",   "--manifest", manifest(), "--glove", glove(), "--config", path("small.json"),
                                  "--modality", modality, "--out", path(out)};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  }

  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

TEST(Dispatch, UnknownSubcommandPrintsUsage) {
  const auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Subcommands:"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());
}

TEST(Dispatch, UnknownFlagPrintsUsage) {
  const auto r = run({"evaluate", "--bogus", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
}

TEST(Dispatch, NoSubcommandAndBadChoice) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"train", "--modality", "audio"}).code, 1);
}

TEST(Dispatch, HelpGoesToStandardOutput) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("visualize"), std::string::npos);
}

TEST(Dispatch, MissingModelFileNamesPath) {
  const auto r = run({"evaluate", "--model", "/nonexistent/m.ckpt", "--manifest", "x.jsonl"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("/nonexistent/m.ckpt"), std::string::npos) << r.err;
}

TEST(Dispatch, MissingRequiredFlagIsUsageError) {
  const auto r = run({"train", "--modality", "video"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--manifest"), std::string::npos) << r.err;
}

class EnvSeed {
 public:
  explicit EnvSeed(const char* value) {
    if (value) setenv("ATTNPOP_SEED", value, 1);
    else unsetenv("ATTNPOP_SEED");
  }
  ~EnvSeed() { unsetenv("ATTNPOP_SEED"); }
};

TEST(Resolve, SeedPrecedence) {
  cli::Flags f;
  {
    EnvSeed env(nullptr);
    EXPECT_EQ(cli::resolve("train", f).seed, 0u);
  }
  {
    EnvSeed env("42");
    const auto c = cli::resolve("train", f);
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.model.seed, 42u);
    EXPECT_EQ(c.train.seed, 42u);
    f.seed = 7;
    EXPECT_EQ(cli::resolve("train", f).seed, 7u);
  }
  {
    EnvSeed env("4x");
    f.seed.reset();
    EXPECT_THROW(cli::resolve("train", f), UsageError);
  }
}

TEST(Resolve, FlagsOverrideConfigFile) {
  TempDir dir("resolve");
  binio::write_file(dir / "c.json", R"({"seed": 5, "modality": "text", "train": {"learning_rate": 0.5}})");
  cli::Flags f;
  f.config = (dir / "c.json").string();
  EnvSeed env("9");
  auto c = cli::resolve("train", f);
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.modality, Modality::text);
  EXPECT_EQ(c.train.learning_rate, 0.5);
  f.modality = "video";
  f.seed = 6;
  c = cli::resolve("train", f);
  EXPECT_EQ(c.seed, 6u);
  EXPECT_EQ(c.modality, Modality::video);
  EXPECT_EQ(c.train.learning_rate, 0.5);

  binio::write_file(dir / "bad.json", "{\"seed\": ");
  f.config = (dir / "bad.json").string();
  EXPECT_THROW(cli::resolve("train", f), ParseError);
}

TEST(Table, OneReportOneRow) {
  const auto t = emit_table({{Modality::video, Pooling::attention, {0.6887, 0.526, 100}}});
  EXPECT_EQ(t.json.at("rows").size(), 1u);
  EXPECT_NE(t.text.find("| Video frames | + attention |   68.87 |    0.526 |"), std::string::npos) << t.text;
  EXPECT_EQ(std::count(t.text.begin(), t.text.end(), '\n'), 3);
}

TEST(Table, SixRowsInCanonicalOrder) {
  std::vector<TableEntry> entries{
      {Modality::multimodal, Pooling::attention, {0.7272, 0.607, 10}},
      {Modality::text, Pooling::baseline, {0.6947, 0.542, 10}},
      {Modality::video, Pooling::attention, {0.6887, 0.526, 10}},
      {Modality::multimodal, Pooling::baseline, {0.7194, 0.612, 10}},
      {Modality::video, Pooling::baseline, {0.6817, 0.524, 10}},
      {Modality::text, Pooling::attention, {0.6870, 0.525, 10}},
  };
  const auto t = emit_table(entries);
  const std::vector<std::string> acc{"68.17", "68.87", "69.47", "68.70", "71.94", "72.72"};
  const std::vector<std::string> rho{"0.524", "0.526", "0.542", "0.525", "0.612", "0.607"};
  ASSERT_EQ(t.json.at("rows").size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(t.json["rows"][i]["accuracy_percent"], acc[i]);
    EXPECT_EQ(t.json["rows"][i]["spearman"], rho[i]);
  }
  std::istringstream lines(t.text);
  std::string line;
  std::vector<std::string> all;
  while (std::getline(lines, line)) all.push_back(line);
  ASSERT_EQ(all.size(), 8u);
  EXPECT_EQ(all[2].substr(0, 14), "| Video frames");
  EXPECT_EQ(all[3].substr(0, 14), "|             ");
  EXPECT_EQ(all[4].substr(0, 10), "| Headline");
  EXPECT_EQ(all[6].substr(0, 12), "| Multimodal");
  EXPECT_THROW(emit_table({}), ArgumentError);
}

TEST(Table, Formatting) {
  EXPECT_EQ(format_accuracy(0.6887), "68.87");
  EXPECT_EQ(format_accuracy(1.0), "100.00");
  EXPECT_EQ(format_accuracy(0.0), "0.00");
  EXPECT_EQ(format_spearman(0.5264), "0.526");
  EXPECT_EQ(format_spearman(-0.0001), "0.000");
  EXPECT_EQ(format_spearman(-1.0), "-1.000");
}

TEST(Graymap, QuantizationRule) {
  const auto pgm = to_pgm(Tensor::matrix(1, 3, {0.5, 0.0, 1.0}));
  EXPECT_EQ(pgm, "P2\n3 1\n255\n128 0 255\n");
  EXPECT_EQ(to_pgm(Tensor::matrix(2, 1, {0.25, 0.75})), "P2\n1 2\n255\n64\n191\n");
}

VisualizationResult two_frame_visualization() {
  VisualizationResult v;
  v.output.logit = 0.25;
  v.output.probability = 0.5621765008857981;
  v.frames = scale_heatmaps({Tensor::matrix(2, 2, {1, 0, 2, 0}), Tensor::matrix(2, 2, {0, 0, 0, 0})},
                            Tensor::vector({0.75, 0.25}));
  v.text = text_attention_report(Tensor::vector({0.6, 0.3, 0.1}), {"a", "b", "c"});
  return v;
}

TEST(RenderVisualization, FileCountAndIdempotence) {
  TempDir dir("viz");
  const auto viz = two_frame_visualization();
  const auto written = render_visualization(viz, "clip", {{"seed", 1}}, dir.path(), true);
  ASSERT_EQ(written.size(), 3u);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir.path())) files += entry.is_regular_file();
  EXPECT_EQ(files, 3u);
  const auto doc = slurp(dir / "clip.json");
  const auto frame0 = slurp(dir / "clip_frame0.pgm");
  EXPECT_EQ(frame0, "P2\n2 2\n255\n128 0\n255 0\n");
  EXPECT_EQ(slurp(dir / "clip_frame1.pgm"), "P2\n2 2\n255\n0 0\n0 0\n");

  render_visualization(viz, "clip", {{"seed", 1}}, dir.path(), true);
  EXPECT_EQ(slurp(dir / "clip.json"), doc);
  EXPECT_EQ(slurp(dir / "clip_frame0.pgm"), frame0);

  const auto j = nlohmann::json::parse(doc);
  EXPECT_EQ(j["frames"].size(), 2u);
  EXPECT_EQ(j["frames"][1]["scale"].get<double>(), 1.0 / 3.0);
  EXPECT_EQ(j["text"][2]["relative"].get<double>(), 0.1 / 0.6);
  EXPECT_EQ(j["config"]["seed"], 1);

  TempDir only_doc("viz_nopgm");
  EXPECT_EQ(render_visualization(viz, "clip", {}, only_doc.path(), false).size(), 1u);
}

TEST(RenderVisualization, UnwritableDirectoryIsIoError) {
  TempDir dir("viz_blocked");
  binio::write_file(dir / "file", "x");
  EXPECT_THROW(render_visualization(two_frame_visualization(), "clip", {}, dir / "file" / "sub", false), IoError);
}

TEST_F(CliTest, PrepareSummarizesDataset) {
  const auto r = run({"prepare", "--manifest", manifest(), "--glove", glove()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["records"], 60);
  EXPECT_EQ(j["splits"]["train"], 48);
  EXPECT_EQ(j["records_with_activation_maps"], 60);
  EXPECT_EQ(j["labels"]["popular"], 30);
  EXPECT_EQ(j["frames_per_record"]["max"], 2);
  EXPECT_EQ(run({"prepare", "--manifest", manifest(), "--frames", "3"}).code, 1);
}

TEST_F(CliTest, TrainEvaluateHappyPath) {
  const auto t = train_cli("video", "v.ckpt");
  ASSERT_EQ(t.code, 0) << t.err;
  const auto trained = nlohmann::json::parse(t.out);
  EXPECT_EQ(trained["history"]["epochs"].size(), 2u);
  EXPECT_EQ(trained["config"]["model"]["feature_dim"], 4);

  const auto e = run({"evaluate", "--model", path("v.ckpt"), "--manifest", manifest(), "--split", "test"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto doc = nlohmann::json::parse(e.out);
  EXPECT_EQ(doc["report"]["n"], 6);
  EXPECT_EQ(doc["modality"], "video");
  EXPECT_EQ(doc["split"], "test");
  EXPECT_EQ(doc["config"]["split"], "test");
  EXPECT_TRUE(e.err.empty());

  // Any emitted document works as a configuration and reproduces the output.
  binio::write_file(path("eval.json"), e.out);
  const auto again = run({"evaluate", "--config", path("eval.json")});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(again.out, e.out);
}

TEST_F(CliTest, TrainingIsReproducible) {
  const auto a = train_cli("text", "t1.ckpt", {"--seed", "11"});
  const auto b = train_cli("text", "t2.ckpt", {"--seed", "11"});
  ASSERT_EQ(a.code, 0) << a.err;
  auto ja = nlohmann::json::parse(a.out), jb = nlohmann::json::parse(b.out);
  EXPECT_EQ(ja["history"], jb["history"]);
  EXPECT_EQ(slurp(path("t1.ckpt")), slurp(path("t2.ckpt")));
  const auto c = train_cli("text", "t3.ckpt", {"--seed", "12"});
  EXPECT_NE(slurp(path("t1.ckpt")), slurp(path("t3.ckpt")));
}

TEST_F(CliTest, StagedMultimodalFromCheckpoints) {
  ASSERT_EQ(train_cli("video", "sv.ckpt").code, 0);
  ASSERT_EQ(train_cli("text", "st.ckpt").code, 0);
  const auto r = train_cli("multimodal", "sm.ckpt", {"--video-ckpt", path("sv.ckpt"), "--text-ckpt", path("st.ckpt")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto model = checkpoint_load(path("sm.ckpt"));
  EXPECT_EQ(model.modality(), Modality::multimodal);
  EXPECT_EQ(model.video()->projection.weight.value, checkpoint_load(path("sv.ckpt")).video()->projection.weight.value);

  const auto half = train_cli("multimodal", "bad.ckpt", {"--video-ckpt", path("sv.ckpt")});
  EXPECT_EQ(half.code, 1);
  EXPECT_NE(half.err.find("--text-ckpt"), std::string::npos);
  const auto swapped = train_cli("multimodal", "bad.ckpt", {"--video-ckpt", path("st.ckpt"), "--text-ckpt", path("sv.ckpt")});
  EXPECT_EQ(swapped.code, 1);
}

TEST_F(CliTest, PredictAndVisualize) {
  ASSERT_EQ(train_cli("multimodal", "pm.ckpt").code, 0);
  const auto p = run({"predict", "--model", path("pm.ckpt"), "--manifest", manifest(), "--glove", glove(),
                      "--record", "syn4"});
  ASSERT_EQ(p.code, 0) << p.err;
  const auto j = nlohmann::json::parse(p.out);
  ASSERT_EQ(j["predictions"].size(), 1u);
  EXPECT_EQ(j["predictions"][0]["alpha"].size(), 2u);
  EXPECT_EQ(j["predictions"][0]["tokens"].size(), j["predictions"][0]["beta"].size());
  EXPECT_EQ(run({"predict", "--model", path("pm.ckpt"), "--manifest", manifest(), "--glove", glove(), "--record",
                 "nope"}).code,
            1);

  const std::vector<std::string> viz{"visualize", "--model", path("pm.ckpt"), "--manifest", manifest(), "--glove",
                                     glove(),     "--record", "syn4",         "--out",      path("viz"), "--pgm"};
  const auto v = run(viz);
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_EQ(std::count(v.out.begin(), v.out.end(), '\n'), 3);
  const auto first = slurp(path("viz/syn4.json"));
  ASSERT_EQ(run(viz).code, 0);
  EXPECT_EQ(slurp(path("viz/syn4.json")), first);
  const auto doc = nlohmann::json::parse(first);
  int ones = 0;
  for (const auto& f : doc["frames"]) ones += f["scale"].get<double>() == 1.0;
  EXPECT_EQ(ones, 1);
}

TEST_F(CliTest, TableFromEvaluationDocuments) {
  ASSERT_EQ(train_cli("video", "tv.ckpt").code, 0);
  ASSERT_EQ(train_cli("video", "tb.ckpt", {"--pooling", "baseline"}).code, 0);
  for (const char* m : {"tv", "tb"}) {
    const auto e = run({"evaluate", "--model", path(std::string(m) + ".ckpt"), "--manifest", manifest()});
    ASSERT_EQ(e.code, 0) << e.err;
    binio::write_file(path(std::string(m) + ".json"), e.out);
  }
  const auto t = run({"table", path("tv.json"), path("tb.json"), "--out", path("table.json")});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_LT(t.out.find("frame mean"), t.out.find("+ attention"));
  const auto twin = nlohmann::json::parse(slurp(path("table.json")));
  EXPECT_EQ(twin["table"]["rows"].size(), 2u);
  EXPECT_EQ(run({"table", manifest()}).code, 1);
  EXPECT_EQ(run({"table"}).code, 1);
}

TEST_F(CliTest, SearchRanksTrials) {
  binio::write_file(path("space.json"), R"({"search": {"embed_dim": [2, 4], "lstm_hidden": [2, 3],
      "attention_hidden": [2, 3], "fusion_dim": [2, 4], "dropout": [0, 0.2], "learning_rate": [0.001, 0.01]},
      "train": {"max_epochs": 1}})");
  const auto r = run({"search", "--manifest", manifest(), "--config", path("space.json"), "--trials", "3", "--seed", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["trials"].size(), 3u);
  for (std::size_t i = 1; i < 3; ++i) {
    EXPECT_GE(j["trials"][i - 1]["validation"]["accuracy"].get<double>(), j["trials"][i]["validation"]["accuracy"].get<double>());
  }
  EXPECT_EQ(run({"search", "--manifest", manifest(), "--config", path("space.json"), "--trials", "0"}).code, 1);
}

}  // namespace
}  // namespace attnpop
