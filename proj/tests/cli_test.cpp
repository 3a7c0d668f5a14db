#include <gtest/gtest.h>

#include "dataset_fixtures.hpp"
#include "desk_dataset.hpp"
#include "teleqa/pipeline.hpp"
#include "teleqa/process.hpp"
#include "teleqa/svr_fusion.hpp"
#include "temp_dir.hpp"

namespace teleqa {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using teleqa::testing::read_text;
using teleqa::testing::TempDir;
using teleqa::testing::write_script;
using teleqa::testing::write_text;

process::Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), TELEQA_CLI_PATH);
  return process::run(args, true);
}

class CliDesk : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = new TempDir;
    data = new teleqa::testing::DeskDataset(teleqa::testing::make_desk_dataset(dir->path(), 5));
    const auto ratings = teleqa::testing::desk_ratings(data->labels, 16, 9);
    write_text(dir->path() / "ratings.csv", subjective::write_rating_csv(ratings));
  }
  static void TearDownTestSuite() {
    delete data;
    delete dir;
  }
  static std::string path(const std::string& name) { return (dir->path() / name).string(); }

  static TempDir* dir;
  static teleqa::testing::DeskDataset* data;
};

TempDir* CliDesk::dir = nullptr;
teleqa::testing::DeskDataset* CliDesk::data = nullptr;

TEST_F(CliDesk, SplitIsReproducible) {
  const auto manifest = data->manifest_path.string();
  ASSERT_EQ(cli({"split", "--manifest", manifest, "--fraction", "0.8", "--seed", "7", "--out", path("s1.json")}).exit_code, 0);
  ASSERT_EQ(cli({"split", "--manifest", manifest, "--fraction", "0.8", "--seed", "7", "--out", path("s2.json")}).exit_code, 0);
  EXPECT_EQ(read_text(path("s1.json")), read_text(path("s2.json")));
  const auto run = json::parse(read_text(path("s1.json.run.json")));
  EXPECT_EQ(run.at("command"), "split");
  EXPECT_EQ(run.at("seed"), 7);
  EXPECT_EQ(run.at("inputs")[0].at("blake2b"), pipeline::hash_file(manifest));
  const auto split = json::parse(read_text(path("s1.json"))).get<dataset::SplitResult>();
  EXPECT_EQ(split.train.size(), 9u);
  EXPECT_EQ(split.val.size(), 3u);
}

TEST_F(CliDesk, ConfigErrorsExitWithTwo) {
  const auto manifest = data->manifest_path.string();
  EXPECT_EQ(cli({"split", "--manifest", manifest, "--fraction", "1.5", "--out", path("bad.json")}).exit_code, 2);
  EXPECT_EQ(cli({"split", "--manifest", manifest}).exit_code, 2);
  EXPECT_EQ(cli({"frobnicate"}).exit_code, 2);
  EXPECT_EQ(cli({"split", "--manifest", path("nope.json"), "--out", path("x.json")}).exit_code, 2);
  EXPECT_EQ(cli({"--help"}).exit_code, 0);
}

TEST_F(CliDesk, CorruptManifestIsDataError) {
  write_text(path("corrupt.json"), "{\"schema_version\": 1, \"scenes\": [");
  EXPECT_EQ(cli({"split", "--manifest", path("corrupt.json"), "--out", path("x.json")}).exit_code, 3);
}

TEST_F(CliDesk, FullPipeline) {
  const auto manifest = data->manifest_path.string();
  auto r = cli({"features", "--manifest", manifest, "--out", path("features"), "--jobs", "4"});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("computed 48"), std::string::npos) << r.out;
  r = cli({"features", "--manifest", manifest, "--out", path("features"), "--jobs", "4"});
  EXPECT_NE(r.out.find("computed 0, up to date 48"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(path("features/run-manifest.json")));

  r = cli({"labels", "--manifest", manifest, "--ratings", path("ratings.csv"), "--out", path("labels.json")});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const auto labels = pipeline::load_labels(path("labels.json"));
  EXPECT_EQ(labels.size(), 48u);

  ASSERT_EQ(cli({"split", "--manifest", manifest, "--seed", "3", "--out", path("split.json")}).exit_code, 0);
  r = cli({"train", "--manifest", manifest, "--features", path("features"), "--labels", path("labels.json"), "--split",
           path("split.json"), "--out", path("model.json"), "--c", "4,16", "--gamma", "0.5,1", "--epsilon", "1",
           "--jobs", "4"});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const auto model = svr::load_model(read_text(path("model.json")));
  EXPECT_FALSE(model.support_vectors.empty());
  const auto report = json::parse(read_text(path("model.json.report.json")));
  EXPECT_EQ(report.at("grid").size(), 4u);
  EXPECT_TRUE(report.contains("baseline_validation"));

  ASSERT_EQ(cli({"predict", "--model", path("model.json"), "--features", path("features"), "--out", path("pred.csv")}).exit_code, 0);
  const auto predictions = pipeline::parse_predictions_csv(read_text(path("pred.csv")));
  EXPECT_EQ(predictions.size(), 48u);
  for (const auto& [id, p] : predictions) {
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 100.0);
  }

  r = cli({"evaluate", "--predictions", path("pred.csv"), "--labels", path("labels.json"), "--manifest", manifest,
           "--out", path("eval.json"), "--residuals", path("residuals.csv")});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const auto eval = json::parse(read_text(path("eval.json")));
  EXPECT_EQ(eval.at("model").at("n"), 48);
  EXPECT_EQ(eval.at("outliers").size(), 5u);
  EXPECT_TRUE(fs::exists(path("residuals.csv")));

  // Training twice from the same inputs gives the same model bytes.
  r = cli({"train", "--manifest", manifest, "--features", path("features"), "--labels", path("labels.json"), "--split",
           path("split.json"), "--out", path("model2.json"), "--c", "4,16", "--gamma", "0.5,1", "--epsilon", "1",
           "--jobs", "2"});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(read_text(path("model.json")), read_text(path("model2.json")));
}

TEST_F(CliDesk, EvaluateWithMismatchedKeys) {
  write_text(path("few.csv"), "asset_id,prediction\nday_good_0_crf30,50\nghost_crf30,20\nday_good_0_crf36,40\n");
  const auto r = cli({"evaluate", "--predictions", path("few.csv"), "--labels", data->labels_path.string(), "--out",
                      path("mismatch.json")});
  EXPECT_EQ(r.exit_code, 3);
  EXPECT_FALSE(fs::exists(path("mismatch.json")));
}

TEST_F(CliDesk, AnalyzeReportsCompressionEffect) {
  const auto r = cli({"analyze", "--ratings", path("ratings.csv"), "--manifest", data->manifest_path.string(), "--out",
                      path("analysis.json"), "--table", path("analysis.txt")});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  const auto j = json::parse(read_text(path("analysis.json")));
  EXPECT_EQ(j.at("compression").at("groups").size(), 4u);
  EXPECT_EQ(j.at("environment").at("groups").size(), 3u);
  EXPECT_TRUE(j.at("reliability").contains("detail_loss"));
  EXPECT_EQ(j.at("mos").size(), 48u);
  EXPECT_FALSE(read_text(path("analysis.txt")).empty());
}

TEST_F(CliDesk, MetricsOnIdenticalClips) {
  const auto ref = (dir->path() / data->manifest.scenes[0].reference_path).string();
  const auto r = cli({"metrics", "--ref", ref, "--dist", ref});
  ASSERT_EQ(r.exit_code, 0);
  const auto j = json::parse(r.out);
  EXPECT_DOUBLE_EQ(j.at("mean").at("ssim").get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j.at("mean").at("psnr").get<double>(), 100.0);
  EXPECT_EQ(j.at("frames").size(), 6u);
}

TEST(CliPrepare, EncodesMissingVariantsIdempotently) {
  TempDir dir;
  auto m = teleqa::testing::make_manifest(2, 1, 1, false);
  for (const auto& s : m.scenes) write_text(dir / s.reference_path, "reference " + s.content_id);
  const auto manifest = (dir / "manifest.json").string();
  write_text(manifest, dataset::dump_manifest(m));
  write_script(dir / "enc.sh", "cp \"$1\" \"$2\"\n");
  write_script(dir / "ver.sh", "echo fake-encoder 1.0\n");
  const std::string enc = (dir / "enc.sh").string() + " {input} {output} {crf}";
  const std::string ver = (dir / "ver.sh").string();

  auto r = cli({"prepare", "--manifest", manifest, "--encoder", enc, "--no-decode", "--version-command", ver, "--jobs", "2"});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_NE(r.out.find("encoded 16"), std::string::npos) << r.out;
  auto updated = dataset::load_manifest(manifest);
  EXPECT_EQ(updated.assets.size(), 16u);
  EXPECT_EQ(updated.encoder_version, "fake-encoder 1.0");

  r = cli({"prepare", "--manifest", manifest, "--encoder", enc, "--no-decode", "--version-command", ver});
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_NE(r.out.find("encoded 0, skipped 16"), std::string::npos) << r.out;

  m.scenes.push_back({"lost", "day_bad", "refs/lost.y4m", 8.0, 1920, 1208, 10.0});
  write_text(manifest, dataset::dump_manifest(m));
  r = cli({"prepare", "--manifest", manifest, "--encoder", enc, "--no-decode", "--version-command", ver});
  EXPECT_EQ(r.exit_code, 5);
  EXPECT_NE(r.out.find("failed 4"), std::string::npos) << r.out;
}

TEST(CliPrepare, ThirtyNineScenesGiveOneHundredFiftySixAssets) {
  TempDir dir;
  auto m = teleqa::testing::make_manifest(18, 10, 11, false);
  for (const auto& s : m.scenes) write_text(dir / s.reference_path, s.content_id);
  const auto manifest = (dir / "manifest.json").string();
  write_text(manifest, dataset::dump_manifest(m));
  write_script(dir / "enc.sh", "cp \"$1\" \"$2\"\n");
  const auto r = cli({"prepare", "--manifest", manifest, "--encoder", (dir / "enc.sh").string() + " {input} {output} {crf}",
                      "--no-decode", "--version-command", "", "--jobs", "4"});
  ASSERT_EQ(r.exit_code, 0) << r.out;
  EXPECT_EQ(dataset::load_manifest(manifest).distorted_assets().size(), 156u);
}

}  // namespace
}  // namespace teleqa
