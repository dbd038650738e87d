#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "vad/error.hpp"
#include "vad/flow.hpp"

using namespace vad;
namespace fs = std::filesystem;

namespace {

// Smooth 2-D sinusoid sampled at x - dx, strong enough for the eigenvalue gate.
FrameBuffer pattern(int w, int h, double dx) {
  FrameBuffer f(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double xs = x - dx;
      f.at(x, y) = static_cast<float>(0.5 + 0.3 * std::sin(0.3 * xs) * std::cos(0.25 * y));
    }
  }
  return f;
}

double median(std::vector<float> v) {
  std::nth_element(v.begin(), v.begin() + v.size() / 2, v.end());
  return v[v.size() / 2];
}

double mean_u(const flow::FlowField& f, int margin) {
  double s = 0.0;
  int n = 0;
  for (int y = margin; y < f.height - margin; ++y) {
    for (int x = margin; x < f.width - margin; ++x) {
      s += f.u[static_cast<std::size_t>(y) * f.width + x];
      ++n;
    }
  }
  return s / n;
}

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "vad_test_flow";
  fs::create_directories(dir);
  return dir / name;
}

std::string format_error(const fs::path& path) {
  try {
    flow::load_flow(path);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
    return e.what();
  }
  FAIL("expected a format error");
  return {};
}

}  // namespace

TEST_CASE("identical frames give no motion") {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  FrameBuffer img(64, 48);
  for (float& v : img.data) v = u(rng);
  const auto mag = flow::magnitude(flow::compute_flow(img, img));
  for (float m : mag.mag) CHECK(m <= 1e-3f);
}

TEST_CASE("one-pixel horizontal shift of a smooth pattern") {
  const FrameBuffer a = pattern(96, 80, 0.0), b = pattern(96, 80, 1.0);
  const auto field = flow::compute_flow(a, b);
  const double med = median(flow::magnitude(field).mag);
  CHECK(med >= 0.7);
  CHECK(med <= 1.3);
  CHECK(mean_u(field, 8) > 0.7);  // prev(x) ~ next(x + 1)
}

TEST_CASE("textureless pair is regularized to zero") {
  const FrameBuffer a(40, 40, 0.5f), b(40, 40, 0.5f);
  for (float m : flow::magnitude(flow::compute_flow(a, b)).mag) CHECK(m <= 1e-3f);
}

TEST_CASE("swapping the frames flips the mean displacement") {
  const FrameBuffer a = pattern(96, 80, 0.0), b = pattern(96, 80, 1.0);
  const double forward = mean_u(flow::compute_flow(a, b), 8);
  const double backward = mean_u(flow::compute_flow(b, a), 8);
  CHECK(std::abs(forward + backward) <= 0.3);
}

TEST_CASE("flow is deterministic") {
  const FrameBuffer a = pattern(64, 64, 0.0), b = pattern(64, 64, 1.5);
  const auto f1 = flow::compute_flow(a, b), f2 = flow::compute_flow(a, b);
  CHECK(std::memcmp(f1.u.data(), f2.u.data(), f1.u.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(f1.v.data(), f2.v.data(), f1.v.size() * sizeof(float)) == 0);
}

TEST_CASE("compute_flow rejects bad input") {
  const FrameBuffer a(32, 32), b(32, 30);
  CHECK_THROWS_AS(flow::compute_flow(a, b), Error);
  flow::FlowParams p;
  p.levels = 0;
  CHECK_THROWS_AS(flow::compute_flow(a, a, p), Error);
}

TEST_CASE("magnitude of a flow field") {
  flow::FlowField f(2, 1);
  f.u = {3.0f, -3.0f};
  f.v = {4.0f, -4.0f};
  const auto m = flow::magnitude(f);
  CHECK(m.mag[0] == doctest::Approx(5.0));
  CHECK(m.mag[1] == m.mag[0]);
  for (float v : flow::magnitude(flow::FlowField(5, 4)).mag) CHECK(v == 0.0f);

  std::mt19937 rng(4);
  std::normal_distribution<float> z(0.0f, 2.0f);
  flow::FlowField r(30, 30);
  for (auto& v : r.u) v = z(rng);
  for (auto& v : r.v) v = z(rng);
  const auto rm = flow::magnitude(r);
  for (std::size_t i = 0; i < rm.mag.size(); ++i) {
    CHECK(rm.mag[i] >= 0.0f);
    CHECK(rm.mag[i] <= std::abs(r.u[i]) + std::abs(r.v[i]) + 1e-5f);
  }
}

TEST_CASE("flow file round trip is bitwise exact") {
  std::mt19937 rng(9);
  std::normal_distribution<float> z(0.0f, 3.0f);
  flow::FlowField f(17, 11);
  for (auto& v : f.u) v = z(rng);
  for (auto& v : f.v) v = z(rng);
  const auto path = temp_file("round.fsfl");
  flow::write_flow(path, f);
  const auto g = flow::load_flow(path);
  CHECK(g.width == f.width);
  CHECK(g.height == f.height);
  CHECK(std::memcmp(f.u.data(), g.u.data(), f.u.size() * 4) == 0);
  CHECK(std::memcmp(f.v.data(), g.v.data(), f.v.size() * 4) == 0);
}

TEST_CASE("malformed flow files raise format errors with offsets") {
  flow::FlowField f(4, 3);
  const auto good = temp_file("good.fsfl");
  flow::write_flow(good, f);
  const auto size = fs::file_size(good);

  const auto truncated = temp_file("truncated.fsfl");
  fs::copy_file(good, truncated, fs::copy_options::overwrite_existing);
  fs::resize_file(truncated, size - 5);
  CHECK(format_error(truncated).find("byte") != std::string::npos);

  const auto longer = temp_file("longer.fsfl");
  fs::copy_file(good, longer, fs::copy_options::overwrite_existing);
  {
    std::ofstream out(longer, std::ios::app | std::ios::binary);
    out.write("\0\0\0\0", 4);
  }
  CHECK(format_error(longer).find("byte") != std::string::npos);

  const auto magic = temp_file("magic.fsfl");
  {
    std::ofstream out(magic, std::ios::binary);
    out << "NOPE";
  }
  CHECK(format_error(magic).find("byte 0") != std::string::npos);
}
