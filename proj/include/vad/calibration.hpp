#pragma once

// Initial model and feature gate from the first F (anomaly-free) frames, and
// per-block refinement of that model during detection.

#include <cstdint>
#include <filesystem>
#include <span>

#include "vad/arima.hpp"
#include "vad/detector.hpp"
#include "vad/flow.hpp"
#include "vad/image.hpp"

namespace vad::calib {

struct Calibration {
  arima::Model theta;
  double lambda_f = 0.0;
  arima::Series series;  // frame-level feature series the model was fitted to
};

/// Bounds with p + d < frames and q < frames.
arima::OrderBounds clip_bounds(arima::OrderBounds bounds, int frames);

/// The frame-level series: for every flow field, the mean magnitude over
/// foreground pixels of active blocks. Frames without active pixels are
/// skipped. masks[i] belongs to the frame mags[i] is attributed to;
/// masks has one more entry than mags (the first frame has no flow).
arima::Series feature_series(std::span<const flow::MagnitudeField> mags,
                             std::span<const Mask> masks, const BlockGrid& grid, double lambda_f);

/// Mean of every per-pixel magnitude over all fields.
double mean_magnitude(std::span<const flow::MagnitudeField> mags);

/// Selects the initial model from F-1 flow fields and F foreground masks.
/// Throws degenerate_calibration when nothing moves or the series is too
/// short to fit.
Calibration calibrate(std::span<const flow::MagnitudeField> mags, std::span<const Mask> masks,
                      const BlockGrid& grid, arima::OrderBounds bounds);

/// Refits the block's recent history over orders within one step of the
/// initial order. Returns `initial` when the history is too short or when
/// no candidate beats it on the same sample.
arima::Model refine_block(const arima::Model& initial, const detect::BlockRecord& rec,
                          arima::OrderBounds bounds, int window = 64);

/// Everything `detect` needs from a calibration run.
struct Artifact {
  Calibration calibration;
  int width = 0;
  int height = 0;
  int block_size = 10;
  int frames = 10;
  arima::OrderBounds bounds;
  std::uint64_t background_digest = 0;
};

void save_artifact(const std::filesystem::path& path, const Artifact& artifact);
Artifact load_artifact(const std::filesystem::path& path);

}  // namespace vad::calib
