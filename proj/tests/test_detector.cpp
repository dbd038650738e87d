#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "doctest.h"
#include "vad/detector.hpp"
#include "vad/error.hpp"

using namespace vad;
using namespace vad::detect;

namespace {

arima::Model constant_model(double c) {
  arima::Model m;
  m.intercept = c;
  m.noise_variance = 1.0;
  return m;
}

arima::Model model(arima::Order order, std::vector<double> ar, std::vector<double> ma, double c) {
  arima::Model m;
  m.order = order;
  m.ar = std::move(ar);
  m.ma = std::move(ma);
  m.intercept = c;
  m.noise_variance = 1.0;
  return m;
}

std::vector<double> grid_values(std::initializer_list<double> v) { return v; }

// Random active-block streams on a small grid, with occasional jumps.
std::vector<FrameFeatures> random_stream(std::uint64_t seed, const BlockGrid& grid, int frames) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 0.05);
  std::vector<FrameFeatures> out;
  for (int f = 0; f < frames; ++f) {
    FrameFeatures ff;
    ff.frame = f;
    for (int b = 0; b < grid.count(); ++b) {
      if (u(rng) < 0.3) continue;
      ff.blocks.push_back(b);
      ff.features.push_back(1.0 + z(rng) + (u(rng) < 0.1 ? 1.0 : 0.0));
    }
    out.push_back(ff);
  }
  return out;
}

}  // namespace

TEST_CASE("block_feature averages over foreground pixels only") {
  flow::MagnitudeField mag(20, 20);
  std::fill(mag.mag.begin(), mag.mag.end(), 2.0f);
  seg::BlockMask full(10);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  CHECK(block_feature(mag, full, 10, 0) == doctest::Approx(2.0));

  flow::MagnitudeField mixed(10, 10);
  seg::BlockMask half(10);
  std::mt19937 rng(1);
  for (int i = 0; i < 100; ++i) {
    mixed.mag[static_cast<std::size_t>(i)] = i < 50 ? 2.0f : static_cast<float>(rng() % 100);
    half.bits[static_cast<std::size_t>(i)] = i < 50;
  }
  CHECK(block_feature(mixed, half, 0, 0) == doctest::Approx(2.0));

  CHECK(block_feature(flow::MagnitudeField(10, 10), full, 0, 0) == 0.0);

  try {
    block_feature(mag, seg::BlockMask(10), 0, 0);
    FAIL("expected not_active");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::not_active);
  }
}

TEST_CASE("select_active applies temporal consistency and the strict gate") {
  const BlockGrid grid(20, 10, 10);
  const double lf = 0.5;
  flow::MagnitudeField mag(20, 10);
  for (int y = 0; y < 10; ++y) {
    mag.mag[static_cast<std::size_t>(y) * 20 + 3] = static_cast<float>(2 * lf);
    mag.mag[static_cast<std::size_t>(y) * 20 + 13] = static_cast<float>(lf);
  }
  const auto none = grid_values({0.0, 0.0});
  const auto both = grid_values({0.3, 0.3});

  CHECK(select_active(none, both, none, mag, grid, lf).empty());  // isolated flash
  CHECK(select_active(both, both, none, mag, grid, lf) == std::vector<int>{0});
  CHECK(select_active(none, both, both, mag, grid, lf) == std::vector<int>{0});
  CHECK(select_active(both, both, {}, mag, grid, lf) == std::vector<int>{0});
  CHECK(select_active(none, both, {}, mag, grid, lf).empty());
  CHECK_THROWS_AS(select_active(grid_values({0.0}), both, none, mag, grid, lf), Error);
}

TEST_CASE("detect_block threshold examples") {
  for (auto [f, expect] : {std::pair{0.005, false}, std::pair{0.02, true}, std::pair{0.01, false}}) {
    BlockRecord rec;
    rec.model = constant_model(0.0);
    const auto dec = detect_block(rec, f, 0.01);
    CHECK(dec.decided);
    CHECK(dec.score == doctest::Approx(f));
    CHECK(dec.anomalous == expect);
  }
}

TEST_CASE("detect_block differences the history before forecasting") {
  BlockRecord rec;
  rec.model = model({1, 1, 1}, {0.5}, {0.2}, 0.1);
  // Warm-up until p + d = 2 samples exist.
  CHECK_FALSE(detect_block(rec, 1.0, 0.01).decided);
  CHECK_FALSE(detect_block(rec, 1.5, 0.01).decided);
  CHECK(rec.innovation_history.empty());
  rec.innovation_history = {0.3};
  // s = [0.5, f - 1.5]; forecast = 0.1 + 0.5 * 0.5 + 0.2 * 0.3 = 0.41.
  const auto dec = detect_block(rec, 2.0, 10.0);
  CHECK(dec.decided);
  CHECK(dec.s_new == doctest::Approx(0.5));
  CHECK(dec.score == doctest::Approx(0.09));
  CHECK_FALSE(dec.anomalous);
  CHECK(rec.feature_history.back() == 2.0);
  CHECK(rec.innovation_history.back() == doctest::Approx(0.09));
}

TEST_CASE("anomalous samples never enter the history") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(1.0, 0.3);
  BlockRecord rec;
  rec.model = model({1, 0, 0}, {0.3}, {}, 0.7);
  std::vector<double> accepted;
  for (int k = 0; k < 500; ++k) {
    const double f = z(rng);
    const auto dec = detect_block(rec, f, 0.2);
    if (!dec.anomalous) accepted.push_back(f);
    CHECK(rec.innovation_history.size() + rec.model.order.p == rec.feature_history.size());
  }
  CHECK(rec.feature_history == accepted);
}

TEST_CASE("spatial consistency examples") {
  // 3 x 3 grid
  std::vector<std::uint8_t> isolated{0, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK(spatial_consistency(isolated, 3, 3) == std::vector<std::uint8_t>(9, 0));
  std::vector<std::uint8_t> edge{1, 1, 0, 0, 0, 0, 0, 0, 0};
  CHECK(spatial_consistency(edge, 3, 3) == edge);
  std::vector<std::uint8_t> diag{1, 0, 0, 0, 1, 0, 0, 0, 0};
  CHECK(spatial_consistency(diag, 3, 3) == diag);
  CHECK_THROWS_AS(spatial_consistency(diag, 2, 3), Error);
}

TEST_CASE("spatial consistency output is a subset without isolated blocks") {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int cols = 1 + static_cast<int>(rng() % 8), rows = 1 + static_cast<int>(rng() % 8);
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(cols * rows));
    for (auto& v : raw) v = rng() % 3 == 0;
    const auto out = spatial_consistency(raw, cols, rows);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const auto i = static_cast<std::size_t>(r * cols + c);
        CHECK(out[i] <= raw[i]);
        if (!out[i]) continue;
        bool has = false;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = r + dr, cc = c + dc;
            if ((dr || dc) && rr >= 0 && cc >= 0 && rr < rows && cc < cols) {
              has = has || raw[static_cast<std::size_t>(rr * cols + cc)];
            }
          }
        }
        CHECK(has);
      }
    }
  }
}

TEST_CASE("consistent scores equal the largest surviving threshold") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int cols = 5, rows = 4;
    std::vector<double> scores(20);
    for (auto& s : scores) s = u(rng) < 0.3 ? -1.0 : u(rng);
    const auto cs = consistent_scores(scores, cols, rows);
    for (double t : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9}) {
      std::vector<std::uint8_t> raw(20);
      for (std::size_t i = 0; i < 20; ++i) raw[i] = scores[i] >= 0.0 && scores[i] > t;
      const auto kept = spatial_consistency(raw, cols, rows);
      for (std::size_t i = 0; i < 20; ++i) CHECK(static_cast<bool>(kept[i]) == (cs[i] > t));
    }
  }
}

TEST_CASE("decision stage maps are consistent with their scores") {
  const BlockGrid grid(60, 40, 10);
  DetectorConfig cfg;
  cfg.lambda_a = 0.1;
  DecisionStage stage(cfg, grid, model({1, 0, 0}, {0.2}, {}, 0.8));
  for (const auto& ff : random_stream(5, grid, 80)) {
    const auto map = stage.decide(ff);
    CHECK(map.active_blocks == static_cast<int>(ff.blocks.size()));
    for (std::size_t b = 0; b < map.anomalous.size(); ++b) {
      if (map.anomalous[b]) {
        CHECK(map.active[b] == 1);
        CHECK(map.scores[b] > cfg.lambda_a);
      }
    }
    for (const auto& rec : stage.records()) CHECK(rec.feature_history.size() <= 80u);
  }
}

TEST_CASE("re-thresholding recorded scores at larger lambda_A flags a subset") {
  const BlockGrid grid(50, 50, 10);
  DetectorConfig cfg;
  DecisionStage stage(cfg, grid, model({0, 1, 0}, {}, {}, 0.0));
  std::vector<AnomalyMap> maps;
  for (const auto& ff : random_stream(6, grid, 120)) maps.push_back(stage.decide(ff));

  std::vector<std::set<std::pair<long, int>>> pairs;
  for (double la : {0.001, 0.005, 0.01, 0.1, 1.0}) {
    std::set<std::pair<long, int>> set;
    for (const auto& m : maps) {
      std::vector<std::uint8_t> raw(m.scores.size());
      for (std::size_t b = 0; b < raw.size(); ++b) raw[b] = m.scores[b] >= 0.0 && m.scores[b] > la;
      const auto kept = spatial_consistency(raw, grid.cols, grid.rows);
      for (std::size_t b = 0; b < kept.size(); ++b) {
        if (kept[b]) set.insert({m.frame, static_cast<int>(b)});
      }
      // The recorded threshold reproduces the map itself.
      if (la == cfg.lambda_a) CHECK(kept == m.anomalous);
    }
    pairs.push_back(set);
  }
  CHECK(pairs.front().size() > pairs.back().size());
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    for (const auto& p : pairs[i]) CHECK(pairs[i - 1].count(p) == 1);
  }
}

TEST_CASE("refits in worker threads give the same maps as a single thread") {
  const BlockGrid grid(80, 60, 10);
  const auto stream = random_stream(7, grid, 150);
  DetectorConfig one, many;
  many.threads = 4;
  DecisionStage a(one, grid, model({1, 0, 0}, {0.1}, {}, 0.9));
  DecisionStage b(many, grid, model({1, 0, 0}, {0.1}, {}, 0.9));
  for (const auto& ff : stream) {
    const auto ma = a.decide(ff), mb = b.decide(ff);
    CHECK(ma.scores == mb.scores);
    CHECK(ma.anomalous == mb.anomalous);
  }
}

TEST_CASE("config validation") {
  DetectorConfig c;
  CHECK_NOTHROW(c.validate());
  c.block_size = 1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.calibration_frames = 2;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.lambda_a = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
}
