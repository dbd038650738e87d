#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace vad {

/// One grayscale frame, row-major luminance in [0, 1].
struct FrameBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  FrameBuffer() = default;
  FrameBuffer(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  /// Throws invalid_input unless dimensions match the payload and values lie in [0, 1].
  void validate() const;
};

/// Binary image (0/1 per pixel), e.g. a foreground or anomaly mask.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

inline bool same_shape(const FrameBuffer& a, const FrameBuffer& b) {
  return a.width == b.width && a.height == b.height;
}

/// Pixel-aligned grid of square blocks. Trailing pixels that do not fill a
/// whole block are not covered.
struct BlockGrid {
  int block = 10;
  int cols = 0;
  int rows = 0;

  BlockGrid() = default;
  BlockGrid(int width, int height, int block_side)
      : block(block_side), cols(width / block_side), rows(height / block_side) {}

  int count() const { return cols * rows; }
  int index(int col, int row) const { return row * cols + col; }
  int origin_x(int idx) const { return (idx % cols) * block; }
  int origin_y(int idx) const { return (idx / cols) * block; }
};

}  // namespace vad
