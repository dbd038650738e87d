#pragma once

// Dense optical flow and the flow-magnitude feature.

#include <filesystem>

#include "vad/image.hpp"

namespace vad::flow {

/// Per-pixel displacement (pixels/frame) that maps prev onto next:
/// prev(x, y) ~ next(x + u, y + v).
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;

  FlowField() = default;
  FlowField(int w, int h)
      : width(w), height(h),
        u(static_cast<std::size_t>(w) * h, 0.0f),
        v(static_cast<std::size_t>(w) * h, 0.0f) {}
};

struct MagnitudeField {
  int width = 0;
  int height = 0;
  std::vector<float> mag;

  MagnitudeField() = default;
  MagnitudeField(int w, int h) : width(w), height(h), mag(static_cast<std::size_t>(w) * h, 0.0f) {}

  float at(int x, int y) const { return mag[static_cast<std::size_t>(y) * width + x]; }
};

struct FlowParams {
  int levels = 3;
  int iterations = 5;
  int window = 7;  // odd side length of the least-squares window
  // Windows whose mean structure tensor (average of grad grad^T over the
  // window) has a smaller eigenvalue below this get zero flow.
  double min_eigenvalue = 1e-4;
};

/// Coarse-to-fine iterative Lucas-Kanade. Deterministic; throws invalid_input
/// on dimension mismatch or levels < 1.
FlowField compute_flow(const FrameBuffer& prev, const FrameBuffer& next,
                       const FlowParams& params = {});

MagnitudeField magnitude(const FlowField& field);

/// Binary format: "FSFL", u32 width, u32 height (little-endian), then the u
/// plane and the v plane as row-major little-endian float32.
void write_flow(const std::filesystem::path& path, const FlowField& field);
FlowField load_flow(const std::filesystem::path& path);

}  // namespace vad::flow
