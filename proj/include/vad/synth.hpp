#pragma once

// Seeded synthetic data: ARIMA series with known parameters, and videos of
// textured blobs on a textured background with one injected anomaly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vad/arima.hpp"
#include "vad/image.hpp"

namespace vad {
class KeyValues;
}

namespace vad::synth {

/// s_t = sum a_i s_{t-i} + sum b_j e_{t-j} + e_t + c with e_t = sigma * Z_t,
/// integrated order.d times. `initial` fixes the first samples of the
/// stationary series; earlier lags and innovations are zero.
arima::Series gen_arima_series(const arima::Model& model, std::size_t n, std::uint64_t seed,
                               std::span<const double> initial = {});

enum class AnomalyType { none, speed_change, new_object, direction_change };

const char* to_string(AnomalyType type);
AnomalyType parse_anomaly_type(const std::string& text);

struct Blob {
  double x = 0.0;  // centre at frame 0, pixels
  double y = 0.0;
  double vx = 0.0;  // pixels/frame
  double vy = 0.0;
  double radius = 10.0;
  double luminance = 0.75;
};

struct Scenario {
  int width = 360;
  int height = 240;
  int frames = 100;
  std::vector<Blob> blobs;
  AnomalyType anomaly = AnomalyType::none;
  int onset = 40;
  // speed_change / direction_change: speed factor applied to blob `target`
  // at onset (direction_change also turns it by `turn_degrees`).
  // new_object: the intruder moves at magnitude times the first blob's speed.
  double magnitude = 2.0;
  int target = 0;
  double turn_degrees = 90.0;
  Blob intruder;  // new_object only; position at onset
  // Blob speeds are scaled by 1 + x_t with x_t = speed_ar * x_{t-1} + speed_sigma * Z_t,
  // which makes the frame-level flow feature an AR(1) series.
  double speed_ar = 0.0;
  double speed_sigma = 0.0;
  double noise = 0.005;
  double texture = 0.03;
  std::uint64_t seed = 0;

  /// Throws ErrorKind::scenario when a blob would leave the frame, speeds
  /// exceed 3 px/frame, or the onset is not after the calibration window.
  void validate(int calibration_frames = 10) const;

  KeyValues to_key_values() const;
  static Scenario from_key_values(const KeyValues& kv);
};

/// A randomized but valid scenario of the given type.
Scenario preset(AnomalyType type, std::uint64_t seed, int frames = 100, int onset = 40);

struct Video {
  std::vector<FrameBuffer> frames;
  std::vector<std::uint8_t> labels;  // 1 = anomalous frame
  std::vector<Mask> masks;           // anomalous-object pixels per frame
};

Video gen_video(const Scenario& scenario);

/// frames/frame_NNNNNN.pgm, masks/mask_NNNNNN.pgm, gt.csv and scenario.txt.
void write_dataset(const std::filesystem::path& dir, const Scenario& scenario, const Video& video);

}  // namespace vad::synth
