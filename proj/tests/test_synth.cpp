#include <cmath>
#include <numeric>

#include "doctest.h"
#include "vad/error.hpp"
#include "vad/keyvalue.hpp"
#include "vad/synth.hpp"

using namespace vad;
using namespace vad::synth;

namespace {

arima::Model ar1(double a, double c, double sigma) {
  arima::Model m;
  m.order = {1, 0, 0};
  m.ar = {a};
  m.intercept = c;
  m.noise_variance = sigma * sigma;
  return m;
}

Scenario one_blob(AnomalyType type) {
  Scenario sc;
  sc.width = 120;
  sc.height = 80;
  sc.frames = 60;
  sc.onset = 30;
  sc.anomaly = type;
  sc.blobs.push_back({20.0, 40.0, 1.0, 0.0, 8.0, 0.8});
  sc.intruder = {90.0, 20.0, 0.0, 1.0, 8.0, 0.8};
  return sc;
}

}  // namespace

TEST_CASE("noise-free AR(1) follows the recursion") {
  const auto s = gen_arima_series(ar1(0.5, 0.0, 0.0), 8, 1, std::vector<double>{1.0});
  for (std::size_t t = 0; t < s.size(); ++t) CHECK(s[t] == doctest::Approx(std::pow(0.5, t)));
}

TEST_CASE("series generation is seeded") {
  const auto m = ar1(0.3, 0.2, 1.0);
  CHECK(gen_arima_series(m, 50, 9) == gen_arima_series(m, 50, 9));
  CHECK(gen_arima_series(m, 50, 9) != gen_arima_series(m, 50, 10));
}

TEST_CASE("stationary mean is c / (1 - a)") {
  const auto s = gen_arima_series(ar1(0.5, 1.0, 1.0), 10000, 4);
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  CHECK(mean >= 1.8);
  CHECK(mean <= 2.2);
}

TEST_CASE("integrated series difference back to the stationary draw") {
  for (int d = 1; d <= 2; ++d) {
    arima::Model m = ar1(0.4, 0.1, 0.5);
    const auto stationary = gen_arima_series(m, 40, 11);
    m.order.d = d;
    const auto raw = gen_arima_series(m, 40, 11);
    const auto back = arima::difference(raw, d);
    REQUIRE(back.size() == 40u - static_cast<std::size_t>(d));
    for (std::size_t k = 0; k < back.size(); ++k) {
      CHECK(back[k] == doctest::Approx(stationary[k + static_cast<std::size_t>(d)]));
    }
  }
}

TEST_CASE("speed-change labels start at the onset") {
  const Scenario sc = preset(AnomalyType::speed_change, 3);
  const Video v = gen_video(sc);
  REQUIRE(v.labels.size() == 100u);
  for (int t = 0; t < 100; ++t) {
    CHECK(v.labels[static_cast<std::size_t>(t)] == (t >= 40));
    CHECK(v.masks[static_cast<std::size_t>(t)].empty() == (t < 40));
  }
}

TEST_CASE("no-anomaly scenarios are all normal") {
  const Video v = gen_video(preset(AnomalyType::none, 5));
  for (std::size_t t = 0; t < v.frames.size(); ++t) {
    CHECK(v.labels[t] == 0);
    CHECK(v.masks[t].empty());
  }
}

TEST_CASE("new-object mask appears exactly at the onset") {
  const Scenario sc = preset(AnomalyType::new_object, 6, 80, 30);
  const Video v = gen_video(sc);
  for (int t = 0; t < 80; ++t) {
    const auto& m = v.masks[static_cast<std::size_t>(t)];
    CHECK(m.empty() == (t < 30));
    CHECK(v.labels[static_cast<std::size_t>(t)] == !m.empty());
  }
}

TEST_CASE("frames are valid, quantized and reproducible") {
  const Scenario sc = preset(AnomalyType::direction_change, 2, 30, 15);
  const Video a = gen_video(sc), b = gen_video(sc);
  for (std::size_t t = 0; t < a.frames.size(); ++t) {
    CHECK_NOTHROW(a.frames[t].validate());
    CHECK(a.frames[t].data == b.frames[t].data);
    for (float px : a.frames[t].data) {
      const float q = px * 255.0f;
      CHECK(std::abs(q - std::round(q)) < 1e-3f);
    }
  }
}

TEST_CASE("presets are valid for every type and many seeds") {
  for (auto type : {AnomalyType::none, AnomalyType::speed_change, AnomalyType::new_object,
                    AnomalyType::direction_change}) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const Scenario sc = preset(type, seed);
      CHECK_NOTHROW(sc.validate());
      CHECK(sc.blobs.size() == 2u);
    }
  }
}

TEST_CASE("scenario validation") {
  auto expect_scenario_error = [](const Scenario& sc) {
    try {
      sc.validate();
      FAIL("expected a scenario error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::scenario);
    }
  };
  CHECK_NOTHROW(one_blob(AnomalyType::speed_change).validate());

  Scenario leaves = one_blob(AnomalyType::none);
  leaves.blobs[0].vx = 2.0;  // reaches x = 138 > 119
  expect_scenario_error(leaves);

  Scenario fast = one_blob(AnomalyType::speed_change);
  fast.magnitude = 4.0;
  expect_scenario_error(fast);

  Scenario early = one_blob(AnomalyType::speed_change);
  early.onset = 5;
  expect_scenario_error(early);

  Scenario unstable = one_blob(AnomalyType::none);
  unstable.speed_ar = 1.0;
  unstable.speed_sigma = 0.1;
  expect_scenario_error(unstable);

  CHECK_THROWS_AS(parse_anomaly_type("teleport"), Error);
  CHECK(parse_anomaly_type("new-object") == AnomalyType::new_object);
}

TEST_CASE("scenario key-value round trip") {
  Scenario sc = preset(AnomalyType::new_object, 12);
  sc.speed_ar = 0.5;
  sc.speed_sigma = 0.01;
  const Scenario back = Scenario::from_key_values(KeyValues::parse(sc.to_key_values().to_string()));
  CHECK(back.anomaly == sc.anomaly);
  CHECK(back.seed == sc.seed);
  CHECK(back.speed_ar == sc.speed_ar);
  CHECK(back.intruder.vx == sc.intruder.vx);
  REQUIRE(back.blobs.size() == sc.blobs.size());
  CHECK(back.blobs[1].x == sc.blobs[1].x);
  CHECK(back.blobs[1].radius == sc.blobs[1].radius);
  CHECK(gen_video(back).frames.back().data == gen_video(sc).frames.back().data);
}

TEST_CASE("speed modulation changes the video but not the labels") {
  Scenario plain = one_blob(AnomalyType::none);
  Scenario wobbly = plain;
  wobbly.speed_ar = 0.6;
  wobbly.speed_sigma = 0.1;
  const Video a = gen_video(plain), b = gen_video(wobbly);
  CHECK(a.frames[0].data == b.frames[0].data);
  CHECK(a.frames[40].data != b.frames[40].data);
  CHECK(a.labels == b.labels);
}
