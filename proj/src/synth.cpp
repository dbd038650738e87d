#include "vad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <span>

#include "vad/error.hpp"
#include "vad/eval.hpp"
#include "vad/image_io.hpp"
#include "vad/keyvalue.hpp"

namespace vad::synth {
namespace {

constexpr double kMaxSpeed = 3.0;
constexpr double kBackground = 0.4;

struct Track {
  std::vector<double> x, y;  // centre per frame; NaN while absent
  double radius = 0.0;
  double luminance = 0.0;
  double phase_u = 0.0, phase_v = 0.0;
};

double speed(double vx, double vy) { return std::hypot(vx, vy); }

// Speed multiplier per frame (all ones without modulation).
std::vector<double> speed_factors(const Scenario& sc) {
  const auto frames = static_cast<std::size_t>(std::max(sc.frames, 0));
  if (sc.speed_sigma == 0.0) return std::vector<double>(frames, 1.0);
  arima::Model m;
  m.order = {1, 0, 0};
  m.ar = {sc.speed_ar};
  m.noise_variance = sc.speed_sigma * sc.speed_sigma;
  auto x = gen_arima_series(m, frames, sc.seed ^ 0x5EEDF00Dull);
  for (double& v : x) v += 1.0;
  return x;
}

// Velocity of blob i for the step that ends at frame t.
std::pair<double, double> velocity(const Scenario& sc, std::span<const double> factors,
                                   std::size_t i, int t) {
  const Blob& b = sc.blobs[i];
  const double f = factors[static_cast<std::size_t>(t)];
  const bool changed = static_cast<int>(i) == sc.target && t >= sc.onset;
  if (!changed) return {b.vx * f, b.vy * f};
  if (sc.anomaly == AnomalyType::speed_change) {
    return {b.vx * f * sc.magnitude, b.vy * f * sc.magnitude};
  }
  if (sc.anomaly == AnomalyType::direction_change) {
    const double a = sc.turn_degrees * std::numbers::pi / 180.0;
    const double vx = b.vx * std::cos(a) - b.vy * std::sin(a);
    const double vy = b.vx * std::sin(a) + b.vy * std::cos(a);
    return {vx * f * sc.magnitude, vy * f * sc.magnitude};
  }
  return {b.vx * f, b.vy * f};
}

std::vector<Track> tracks(const Scenario& sc) {
  std::vector<Track> out;
  const auto frames = static_cast<std::size_t>(std::max(sc.frames, 0));
  const auto factors = speed_factors(sc);
  for (std::size_t i = 0; i < sc.blobs.size(); ++i) {
    Track tr;
    tr.radius = sc.blobs[i].radius;
    tr.luminance = sc.blobs[i].luminance;
    double x = sc.blobs[i].x, y = sc.blobs[i].y;
    for (int t = 0; t < sc.frames; ++t) {
      if (t > 0) {
        const auto [vx, vy] = velocity(sc, factors, i, t);
        x += vx;
        y += vy;
      }
      tr.x.push_back(x);
      tr.y.push_back(y);
    }
    out.push_back(std::move(tr));
  }
  if (sc.anomaly == AnomalyType::new_object) {
    Track tr;
    tr.radius = sc.intruder.radius;
    tr.luminance = sc.intruder.luminance;
    tr.x.assign(frames, std::nan(""));
    tr.y.assign(frames, std::nan(""));
    double x = sc.intruder.x, y = sc.intruder.y;
    for (int t = std::max(sc.onset, 0); t < sc.frames; ++t) {
      if (t > sc.onset) {
        x += sc.intruder.vx;
        y += sc.intruder.vy;
      }
      tr.x[static_cast<std::size_t>(t)] = x;
      tr.y[static_cast<std::size_t>(t)] = y;
    }
    out.push_back(std::move(tr));
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].phase_u = 0.7 * static_cast<double>(i) + 0.3;
    out[i].phase_v = 1.3 * static_cast<double>(i) + 0.1;
  }
  return out;
}

// Index of the track carrying the anomaly, if any.
std::optional<std::size_t> anomalous_track(const Scenario& sc) {
  switch (sc.anomaly) {
    case AnomalyType::none:
      return std::nullopt;
    case AnomalyType::new_object:
      return sc.blobs.size();
    default:
      return static_cast<std::size_t>(sc.target);
  }
}

bool overlaps(const std::vector<Track>& tr, double gap) {
  for (std::size_t a = 0; a < tr.size(); ++a) {
    for (std::size_t b = a + 1; b < tr.size(); ++b) {
      for (std::size_t t = 0; t < tr[a].x.size(); ++t) {
        if (std::isnan(tr[a].x[t]) || std::isnan(tr[b].x[t])) continue;
        const double dist = std::hypot(tr[a].x[t] - tr[b].x[t], tr[a].y[t] - tr[b].y[t]);
        if (dist < tr[a].radius + tr[b].radius + gap) return true;
      }
    }
  }
  return false;
}

void put_blob(const Blob& b, const std::string& prefix, KeyValues& kv) {
  kv.set(prefix + "x", format_double(b.x));
  kv.set(prefix + "y", format_double(b.y));
  kv.set(prefix + "vx", format_double(b.vx));
  kv.set(prefix + "vy", format_double(b.vy));
  kv.set(prefix + "radius", format_double(b.radius));
  kv.set(prefix + "luminance", format_double(b.luminance));
}

Blob get_blob(const KeyValues& kv, const std::string& prefix) {
  Blob b;
  b.x = kv.get_double(prefix + "x");
  b.y = kv.get_double(prefix + "y");
  b.vx = kv.get_double(prefix + "vx");
  b.vy = kv.get_double(prefix + "vy");
  b.radius = kv.get_double(prefix + "radius");
  b.luminance = kv.get_double(prefix + "luminance");
  return b;
}

}  // namespace

arima::Series gen_arima_series(const arima::Model& model, std::size_t n, std::uint64_t seed,
                               std::span<const double> initial) {
  model.validate();
  const double sigma = std::sqrt(model.noise_variance);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  const auto p = static_cast<std::size_t>(model.order.p);
  const auto q = static_cast<std::size_t>(model.order.q);

  arima::Series s(n, 0.0), e(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    if (t < initial.size()) {
      s[t] = initial[t];
      continue;
    }
    e[t] = sigma * z(rng);
    double v = model.intercept + e[t];
    for (std::size_t i = 1; i <= p && i <= t; ++i) v += model.ar[i - 1] * s[t - i];
    for (std::size_t j = 1; j <= q && j <= t; ++j) v += model.ma[j - 1] * e[t - j];
    s[t] = v;
  }
  return model.order.d > 0 ? arima::integrate(s, model.order.d) : s;
}

const char* to_string(AnomalyType type) {
  switch (type) {
    case AnomalyType::none:
      return "none";
    case AnomalyType::speed_change:
      return "speed-change";
    case AnomalyType::new_object:
      return "new-object";
    case AnomalyType::direction_change:
      return "direction-change";
  }
  return "?";
}

AnomalyType parse_anomaly_type(const std::string& text) {
  for (auto t : {AnomalyType::none, AnomalyType::speed_change, AnomalyType::new_object,
                 AnomalyType::direction_change}) {
    if (text == to_string(t)) return t;
  }
  fail(ErrorKind::scenario, "unknown anomaly type '" + text + "'");
}

void Scenario::validate(int calibration_frames) const {
  if (width < 8 || height < 8 || frames < 2) fail(ErrorKind::scenario, "scenario too small");
  if (blobs.empty()) fail(ErrorKind::scenario, "scenario has no blob");
  if (!(noise >= 0.0) || !(texture >= 0.0)) fail(ErrorKind::scenario, "negative noise or texture");
  if (!(std::abs(speed_ar) < 1.0) || !(speed_sigma >= 0.0)) {
    fail(ErrorKind::scenario, "speed modulation needs |speed_ar| < 1 and speed_sigma >= 0");
  }
  if (anomaly != AnomalyType::none) {
    if (onset <= calibration_frames || onset >= frames) {
      fail(ErrorKind::scenario, "onset " + std::to_string(onset) +
                                    " must lie after the calibration frames and inside the video");
    }
    if (anomaly != AnomalyType::new_object &&
        (target < 0 || static_cast<std::size_t>(target) >= blobs.size())) {
      fail(ErrorKind::scenario, "anomaly target is not a blob");
    }
  }
  const auto factors = speed_factors(*this);
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    for (int t = 1; t < frames; ++t) {
      const auto [vx, vy] = velocity(*this, factors, i, t);
      if (speed(vx, vy) > kMaxSpeed) {
        fail(ErrorKind::scenario, "blob " + std::to_string(i) + " exceeds 3 px/frame");
      }
    }
  }
  if (anomaly == AnomalyType::new_object && speed(intruder.vx, intruder.vy) > kMaxSpeed) {
    fail(ErrorKind::scenario, "intruder exceeds 3 px/frame");
  }
  const auto tr = tracks(*this);
  for (std::size_t i = 0; i < tr.size(); ++i) {
    if (!(tr[i].radius > 0.0)) fail(ErrorKind::scenario, "blob radius must be positive");
    for (std::size_t t = 0; t < tr[i].x.size(); ++t) {
      const double x = tr[i].x[t], y = tr[i].y[t], r = tr[i].radius;
      if (std::isnan(x)) continue;
      if (x - r < 0.0 || y - r < 0.0 || x + r > width - 1.0 || y + r > height - 1.0) {
        fail(ErrorKind::scenario, "blob " + std::to_string(i) + " leaves the frame at frame " +
                                      std::to_string(t));
      }
    }
  }
}

KeyValues Scenario::to_key_values() const {
  KeyValues kv;
  kv.set("width", std::to_string(width));
  kv.set("height", std::to_string(height));
  kv.set("frames", std::to_string(frames));
  kv.set("anomaly", to_string(anomaly));
  kv.set("onset", std::to_string(onset));
  kv.set("magnitude", format_double(magnitude));
  kv.set("target", std::to_string(target));
  kv.set("turn_degrees", format_double(turn_degrees));
  kv.set("speed_ar", format_double(speed_ar));
  kv.set("speed_sigma", format_double(speed_sigma));
  kv.set("noise", format_double(noise));
  kv.set("texture", format_double(texture));
  kv.set("seed", std::to_string(seed));
  kv.set("blobs", std::to_string(blobs.size()));
  for (std::size_t i = 0; i < blobs.size(); ++i) put_blob(blobs[i], "blob" + std::to_string(i) + ".", kv);
  if (anomaly == AnomalyType::new_object) put_blob(intruder, "intruder.", kv);
  return kv;
}

Scenario Scenario::from_key_values(const KeyValues& kv) {
  Scenario sc;
  auto opt_int = [&](const char* key, int& dst) {
    if (kv.contains(key)) dst = static_cast<int>(kv.get_int(key));
  };
  auto opt_double = [&](const char* key, double& dst) {
    if (kv.contains(key)) dst = kv.get_double(key);
  };
  opt_int("width", sc.width);
  opt_int("height", sc.height);
  opt_int("frames", sc.frames);
  opt_int("onset", sc.onset);
  opt_int("target", sc.target);
  opt_double("magnitude", sc.magnitude);
  opt_double("turn_degrees", sc.turn_degrees);
  opt_double("speed_ar", sc.speed_ar);
  opt_double("speed_sigma", sc.speed_sigma);
  opt_double("noise", sc.noise);
  opt_double("texture", sc.texture);
  if (kv.contains("anomaly")) sc.anomaly = parse_anomaly_type(kv.get("anomaly"));
  if (kv.contains("seed")) sc.seed = static_cast<std::uint64_t>(kv.get_int("seed"));
  const long long count = kv.get_int("blobs");
  if (count < 1 || count > 64) fail(ErrorKind::scenario, "blobs must be between 1 and 64");
  for (long long i = 0; i < count; ++i) sc.blobs.push_back(get_blob(kv, "blob" + std::to_string(i) + "."));
  if (sc.anomaly == AnomalyType::new_object) sc.intruder = get_blob(kv, "intruder.");
  return sc;
}

Scenario preset(AnomalyType type, std::uint64_t seed, int frames, int onset) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  for (int attempt = 0; attempt < 10000; ++attempt) {
    Scenario sc;
    sc.frames = frames;
    sc.onset = onset;
    sc.anomaly = type;
    sc.seed = seed;
    const double base_speed = uniform(0.8, 1.4);
    for (int i = 0; i < 2; ++i) {
      Blob b;
      b.radius = uniform(10.0, 14.0);
      b.luminance = uniform(0.65, 0.85);
      const double v = base_speed * uniform(0.95, 1.05);
      const double heading = uniform(-0.25, 0.25) + (u(rng) < 0.5 ? 0.0 : std::numbers::pi);
      b.vx = v * std::cos(heading);
      b.vy = v * std::sin(heading);
      b.x = uniform(b.radius, sc.width - 1.0 - b.radius);
      b.y = uniform(b.radius, sc.height - 1.0 - b.radius);
      sc.blobs.push_back(b);
    }
    if (type == AnomalyType::direction_change) {
      sc.turn_degrees = (u(rng) < 0.5 ? 1.0 : -1.0) * uniform(90.0, 180.0);
    }
    if (type == AnomalyType::new_object) {
      Blob& b = sc.intruder;
      b.radius = uniform(10.0, 14.0);
      b.luminance = uniform(0.65, 0.85);
      const double heading = uniform(0.0, 2.0 * std::numbers::pi);
      b.vx = sc.magnitude * base_speed * std::cos(heading);
      b.vy = sc.magnitude * base_speed * std::sin(heading);
      b.x = uniform(b.radius, sc.width - 1.0 - b.radius);
      b.y = uniform(b.radius, sc.height - 1.0 - b.radius);
    }
    try {
      sc.validate();
    } catch (const Error&) {
      continue;
    }
    if (!overlaps(tracks(sc), 6.0)) return sc;
  }
  fail(ErrorKind::scenario, "could not place blobs for seed " + std::to_string(seed));
}

Video gen_video(const Scenario& sc) {
  sc.validate();
  const int w = sc.width, h = sc.height;
  std::mt19937_64 rng(sc.seed ^ 0xA5A5A5A5DEADBEEFull);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);

  // Fixed background: a few random plane waves plus fine per-pixel grain.
  std::vector<float> background(static_cast<std::size_t>(w) * h);
  struct Wave {
    double fx, fy, phase;
  };
  std::vector<Wave> waves(6);
  for (auto& wv : waves) {
    const double f = 0.05 + 0.45 * u(rng), a = 2.0 * std::numbers::pi * u(rng);
    wv = {f * std::cos(a), f * std::sin(a), 2.0 * std::numbers::pi * u(rng)};
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = 0.0;
      for (const auto& wv : waves) v += std::sin(wv.fx * x + wv.fy * y + wv.phase);
      v = kBackground + sc.texture * (v / static_cast<double>(waves.size()) + 0.5 * (u(rng) - 0.5));
      background[static_cast<std::size_t>(y) * w + x] = static_cast<float>(v);
    }
  }

  const auto tr = tracks(sc);
  const auto culprit = anomalous_track(sc);
  Video out;
  for (int t = 0; t < sc.frames; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    std::vector<double> img(background.begin(), background.end());
    Mask mask(w, h);
    const bool anomalous = culprit.has_value() && t >= sc.onset;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const Track& b = tr[i];
      if (std::isnan(b.x[ti])) continue;
      const double cx = b.x[ti], cy = b.y[ti], r = b.radius;
      const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + r + 1)));
      const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + r + 1)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double alpha = std::clamp(r + 0.5 - std::hypot(dx, dy), 0.0, 1.0);
          if (alpha <= 0.0) continue;
          // Texture moves with the blob so its interior carries flow.
          const double tex = 0.12 * std::sin(0.55 * dx + b.phase_u) * std::cos(0.45 * dy + b.phase_v);
          double& px = img[static_cast<std::size_t>(y) * w + x];
          px = (1.0 - alpha) * px + alpha * (b.luminance + tex);
          if (anomalous && i == *culprit && alpha >= 0.5) mask.at(x, y) = 1;
        }
      }
    }
    FrameBuffer frame(w, h);
    for (std::size_t k = 0; k < img.size(); ++k) {
      const double v = std::clamp(img[k] + sc.noise * z(rng), 0.0, 1.0);
      frame.data[k] = static_cast<float>(std::round(v * 255.0) / 255.0);
    }
    out.frames.push_back(std::move(frame));
    out.labels.push_back(anomalous ? 1 : 0);
    out.masks.push_back(std::move(mask));
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Scenario& scenario, const Video& video) {
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "masks");
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    const long idx = static_cast<long>(t);
    io::write_pgm(dir / "frames" / io::numbered_name("frame", idx, ".pgm"), video.frames[t]);
    io::write_mask(dir / "masks" / io::numbered_name("mask", idx, ".pgm"), video.masks[t]);
  }
  eval::write_ground_truth(dir / "gt.csv", video.labels);
  std::ofstream out(dir / "scenario.txt");
  out << scenario.to_key_values().to_string();
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + (dir / "scenario.txt").string());
}

}  // namespace vad::synth
