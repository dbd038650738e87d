#include <filesystem>

#include "doctest.h"
#include "vad/engine.hpp"
#include "vad/error.hpp"
#include "vad/synth.hpp"

using namespace vad;
namespace fs = std::filesystem;

namespace {

struct Run {
  std::vector<FrameResult> results;
  calib::Artifact artifact;
  std::vector<detect::FrameFeatures> seeds;
  detect::DetectorConfig config;
  long nulls_before_first = 0;
};

Run run(const std::vector<FrameBuffer>& frames, EngineOptions options = {}) {
  Engine engine(std::move(options));
  Run r;
  for (const auto& f : frames) {
    auto out = engine.push(f);
    if (out) {
      r.results.push_back(std::move(*out));
    } else if (r.results.empty()) {
      ++r.nulls_before_first;
    }
  }
  if (auto out = engine.finish()) r.results.push_back(std::move(*out));
  r.artifact = engine.artifact();
  r.seeds = engine.seed_features();
  r.config = engine.config();
  return r;
}

void check_same(const Run& a, const Run& b, long upto) {
  for (std::size_t i = 0; i < a.results.size() && i < b.results.size(); ++i) {
    const auto& ma = a.results[i].map;
    if (ma.frame > upto) break;
    CHECK(ma.frame == b.results[i].map.frame);
    CHECK(ma.scores == b.results[i].map.scores);
    CHECK(ma.anomalous == b.results[i].map.anomalous);
  }
}

fs::path temp(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "vad_test_engine" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("calibration frames produce no maps and every later frame does") {
  const auto video = synth::gen_video(synth::preset(synth::AnomalyType::speed_change, 1));
  const Run r = run(video.frames);
  CHECK(r.nulls_before_first == 11);  // F frames plus one frame of lookahead
  REQUIRE(r.results.size() == 90u);
  for (std::size_t i = 0; i < r.results.size(); ++i) {
    CHECK(r.results[i].map.frame == static_cast<long>(i) + 10);
  }
  CHECK(r.seeds.size() == 9u);
}

TEST_CASE("speed change is flagged within two frames of the onset") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto video = synth::gen_video(synth::preset(synth::AnomalyType::speed_change, seed));
    const Run r = run(video.frames);
    bool hit = false;
    for (const auto& res : r.results) {
      if (res.map.frame >= 40 && res.map.frame <= 42 && res.map.anomalous_blocks > 0) hit = true;
    }
    hits += hit;
  }
  CHECK(hits >= 4);
}

TEST_CASE("a static scene after calibration has no anomalies") {
  const auto moving = synth::gen_video(synth::preset(synth::AnomalyType::none, 2));
  const Run cal = run(moving.frames);

  synth::Scenario still = synth::preset(synth::AnomalyType::none, 2);
  for (auto& b : still.blobs) b.vx = b.vy = 0.0;
  EngineOptions opt;
  opt.artifact = cal.artifact;
  const Run r = run(synth::gen_video(still).frames, opt);
  for (const auto& res : r.results) {
    CHECK(res.map.anomalous_blocks == 0);
    CHECK(res.map.frame_score == 0.0);
  }
}

TEST_CASE("a static calibration window is degenerate") {
  synth::Scenario still = synth::preset(synth::AnomalyType::none, 3);
  for (auto& b : still.blobs) b.vx = b.vy = 0.0;
  still.noise = 0.0;
  try {
    run(synth::gen_video(still).frames);
    FAIL("expected degenerate_calibration");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_calibration);
  }
}

TEST_CASE("maps never depend on frames beyond the lookahead") {
  const auto a = synth::gen_video(synth::preset(synth::AnomalyType::speed_change, 4));
  auto mixed = a.frames;
  const auto other = synth::gen_video(synth::preset(synth::AnomalyType::new_object, 9));
  for (std::size_t t = 60; t < mixed.size(); ++t) mixed[t] = other.frames[t];
  const Run ra = run(a.frames), rb = run(mixed);
  check_same(ra, rb, 58);
  bool differs = false;
  for (std::size_t i = 0; i < ra.results.size(); ++i) {
    differs = differs || ra.results[i].map.scores != rb.results[i].map.scores;
  }
  CHECK(differs);
}

TEST_CASE("runs are deterministic, also with worker threads") {
  const auto video = synth::gen_video(synth::preset(synth::AnomalyType::direction_change, 5));
  const Run a = run(video.frames), b = run(video.frames);
  check_same(a, b, 1 << 30);
  EngineOptions threaded;
  threaded.config.threads = 4;
  check_same(a, run(video.frames, threaded), 1 << 30);
}

TEST_CASE("saved flow read back gives identical maps") {
  const auto video = synth::gen_video(synth::preset(synth::AnomalyType::new_object, 6, 40, 20));
  EngineOptions save;
  save.save_flow_dir = temp("flow");
  const Run a = run(video.frames, save);
  CHECK(fs::exists(save.save_flow_dir / flow_file_name(1)));
  CHECK_FALSE(fs::exists(save.save_flow_dir / flow_file_name(0)));
  EngineOptions load;
  load.flow_dir = save.save_flow_dir;
  const Run b = run(video.frames, load);
  REQUIRE(a.results.size() == b.results.size());
  check_same(a, b, 1 << 30);
}

TEST_CASE("artifact of another frame size is rejected") {
  const auto video = synth::gen_video(synth::preset(synth::AnomalyType::none, 7, 20, 15));
  calib::Artifact art = run(video.frames).artifact;
  art.width += 10;
  EngineOptions opt;
  opt.artifact = art;
  Engine engine(opt);
  CHECK_THROWS_AS(engine.push(video.frames[0]), Error);
}

TEST_CASE("a stream shorter than the calibration window") {
  const auto video = synth::gen_video(synth::preset(synth::AnomalyType::none, 8, 20, 15));
  Engine engine({});
  for (int t = 0; t < 5; ++t) CHECK_FALSE(engine.push(video.frames[static_cast<std::size_t>(t)]));
  try {
    engine.finish();
    FAIL("expected insufficient_history");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::insufficient_history);
  }
}

TEST_CASE("replaying seeds and features through a fresh stage reproduces the maps") {
  const auto video = synth::gen_video(synth::preset(synth::AnomalyType::speed_change, 10));
  const Run r = run(video.frames);
  detect::DecisionStage stage(r.config, BlockGrid(360, 240, r.config.block_size),
                              r.artifact.calibration.theta);
  for (const auto& s : r.seeds) stage.seed(s);
  for (const auto& res : r.results) {
    const auto map = stage.decide(res.features);
    CHECK(map.scores == res.map.scores);
    CHECK(map.anomalous == res.map.anomalous);
  }
}
