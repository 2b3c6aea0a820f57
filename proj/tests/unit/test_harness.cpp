#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "siammask/errors.hpp"
#include "siammask/harness.hpp"

using namespace siammask;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("siammask_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Sequence> small_data() {
  GenDataConfig g;
  g.sequences = 2;
  g.scene.frames = 5;
  g.scene.objects = 2;
  g.unseen_every = 2;
  return generate_dataset(g, 7);
}

int run_cli(std::vector<std::string> args, std::string* err_out = nullptr) {
  args.insert(args.begin(), "siammask");
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  if (err_out) *err_out = err.str();
  return rc;
}

}  // namespace

TEST(RunConfig, RoundTripAndStrictness) {
  RunConfig c;
  c.seed = 99;
  c.variant = Variant::two_branch;
  c.train.lambda_mask = 16.0;
  c.paths.dataset = "/data";
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<RunConfig>(), c);
  EXPECT_EQ(config_hash(c), config_hash(j.get<RunConfig>()));
  EXPECT_EQ(config_hash(c).size(), 16u);
  RunConfig d = c;
  d.seed = 100;
  EXPECT_NE(config_hash(c), config_hash(d));

  nlohmann::json bad = j;
  bad["sed"] = 1;
  EXPECT_THROW(bad.get<RunConfig>(), ConfigError);
  bad = j;
  bad["version"] = kConfigVersion + 1;
  EXPECT_THROW(bad.get<RunConfig>(), ConfigError);
  bad = j;
  bad["train"]["stepz"] = 3;
  EXPECT_THROW(bad.get<RunConfig>(), ConfigError);
  // Missing sections take defaults.
  EXPECT_EQ((nlohmann::json{{"version", kConfigVersion}}.get<RunConfig>()), RunConfig{});
}

TEST(RunConfig, FileAndEnvironment) {
  const fs::path d = fresh_dir("cfg");
  RunConfig c;
  c.paths.output = "a";
  save_run_config(d / "c.json", c);
  EXPECT_EQ(load_run_config(d / "c.json"), c);
  EXPECT_THROW(load_run_config(d / "missing.json"), ConfigError);
  ::setenv("SIAMMASK_OUTPUT", "/elsewhere", 1);
  apply_environment(c);
  ::unsetenv("SIAMMASK_OUTPUT");
  EXPECT_EQ(c.paths.output, "/elsewhere");
  fs::remove_all(d);
}

TEST(Dataset, RoundTripIsExact) {
  const auto data = small_data();
  EXPECT_EQ(data[0].name, "seq000");
  EXPECT_TRUE(data[0].seen);
  EXPECT_FALSE(data[1].seen);
  const fs::path d = fresh_dir("rt");
  write_dataset(d, data);
  const auto back = load_dataset(d);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    EXPECT_EQ(back[s].name, data[s].name);
    EXPECT_EQ(back[s].seen, data[s].seen);
    ASSERT_EQ(back[s].frame_count(), data[s].frame_count());
    for (int t = 0; t < data[s].frame_count(); ++t)
      EXPECT_EQ(cv::norm(back[s].frames[t], data[s].frames[t], cv::NORM_INF), 0.0);
    ASSERT_EQ(back[s].objects.size(), data[s].objects.size());
    for (std::size_t o = 0; o < data[s].objects.size(); ++o) {
      EXPECT_EQ(back[s].objects[o].id, data[s].objects[o].id);
      EXPECT_EQ(back[s].objects[o].class_tag, data[s].objects[o].class_tag);
      EXPECT_EQ(back[s].objects[o].masks, data[s].objects[o].masks);
      EXPECT_EQ(back[s].objects[o].boxes, data[s].objects[o].boxes);
    }
    // Instance masks are disjoint.
    for (int t = 0; t < back[s].frame_count(); ++t)
      EXPECT_EQ(iou_mask(back[s].objects[0].masks[t], back[s].objects[1].masks[t]), 0.0);
  }
  fs::remove_all(d);
}

TEST(Dataset, ReportsEveryProblem) {
  const fs::path d = fresh_dir("bad");
  write_dataset(d, small_data());
  fs::remove(d / "seq000" / "images" / "00003.png");
  fs::remove(d / "seq001" / "masks" / "00001.png");
  std::ofstream(d / "seq001" / "images" / "00002.png") << "not a png";
  try {
    load_dataset(d);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    const auto& p = e.problems();
    EXPECT_GE(p.size(), 3u);
    auto mentions = [&](const std::string& s) {
      return std::any_of(p.begin(), p.end(), [&](const std::string& x) { return x.find(s) != std::string::npos; });
    };
    EXPECT_TRUE(mentions("seq000/images/00003.png"));
    EXPECT_TRUE(mentions("seq001/masks/00001.png"));
    EXPECT_TRUE(mentions("seq001/images/00002.png"));
  }
  EXPECT_THROW(load_dataset(d / "nowhere"), DatasetError);
  fs::remove_all(d);
}

TEST(ResultStream, ReadsWhatTrackWrites) {
  const auto data = small_data();
  const Sequence& s = data[0];
  std::vector<FrameResult> frames;
  for (int t = 0; t < s.frame_count(); ++t) {
    FrameResult r;
    r.mask = s.objects[0].masks[t];
    r.box = generate_box(r.mask, t % 2 ? BoxStrategy::mbr : BoxStrategy::min_max, {});
    frames.push_back(r);
  }
  const fs::path d = fresh_dir("rs");
  write_result_stream(d, frames);
  const ObjectResult back = read_result_stream(d, s.name, 1, s.frame_count());
  for (int t = 0; t < s.frame_count(); ++t) {
    EXPECT_EQ(back.masks[t], frames[t].mask);
    EXPECT_NEAR(iou_rotated(back.boxes[t], frames[t].box.rotated), 1.0, 1e-6);
  }
  EXPECT_THROW(read_result_stream(d, s.name, 1, s.frame_count() + 1), std::exception);
  fs::remove_all(d);
}

TEST(Cli, ErrorLines) {
  std::string err;
  EXPECT_EQ(run_cli({"frobnicate"}, &err), 2);
  EXPECT_TRUE(nlohmann::json::parse(err).contains("error"));
  EXPECT_EQ(run_cli({"eval", "--data", "/nonexistent/ds", "--results", "/nonexistent/r", "--report", "/tmp/x.json"}, &err), 1);
  const auto j = nlohmann::json::parse(err);
  EXPECT_EQ(j["error"]["command"], "eval");
  EXPECT_FALSE(j["error"]["message"].get<std::string>().empty());
}

TEST(Cli, GroundTruthRunsAreByteIdentical) {
  const fs::path d = fresh_dir("cli");
  ASSERT_EQ(run_cli({"gen-data", "--out", (d / "ds").string(), "--sequences", "2", "--seed", "3"}), 0);
  // Same command line twice; the first run's files are moved aside before the second.
  for (int pass = 0; pass < 2; ++pass) {
    ASSERT_EQ(run_cli({"track", "--ground-truth", "--strategy", "mbr", "--data", (d / "ds").string(), "--out",
                       (d / "out").string()}),
              0);
    ASSERT_EQ(run_cli({"eval", "--data", (d / "ds").string(), "--results", (d / "out").string(), "--report",
                       (d / "out" / "report.json").string()}),
              0);
    if (pass == 0) fs::rename(d / "out", d / "first");
  }
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d / "first")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path rel = fs::relative(e.path(), d / "first");
    EXPECT_EQ(slurp(e.path()), slurp(d / "out" / rel)) << rel;
  }
  EXPECT_GT(files, 10);
  const auto report = nlohmann::json::parse(slurp(d / "out" / "report.json"));
  EXPECT_DOUBLE_EQ(report["metrics"]["j"]["mean"].get<double>(), 1.0);
  EXPECT_NEAR(report["metrics"]["boxes"]["miou"].get<double>(), 1.0, 1e-6);
  fs::remove_all(d);
}
