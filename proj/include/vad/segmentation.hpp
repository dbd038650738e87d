#pragma once

// Foreground segmentation and block occupancy.
//
// The default segmenter is a per-pixel running-median background model with
// a deviation scale; a pixel is foreground when |frame - median| > 4 * scale.
// Masks computed elsewhere can be fed in through MaskDirectorySegmenter.

#include <filesystem>
#include <span>
#include <vector>

#include "vad/image.hpp"

namespace vad::seg {

inline constexpr float kMedianStep = 1.0f / 255.0f;
inline constexpr float kDeviationRate = 0.05f;
inline constexpr float kThresholdScale = 4.0f;
// Lower bound on the deviation scale: two 8-bit quantization levels.
inline constexpr float kMinScale = 2.0f / 255.0f;

struct BackgroundModel {
  int width = 0;
  int height = 0;
  std::vector<float> median;
  std::vector<float> scale;

  BackgroundModel() = default;
  BackgroundModel(int w, int h, float initial_median = 0.0f)
      : width(w), height(h),
        median(static_cast<std::size_t>(w) * h, initial_median),
        scale(static_cast<std::size_t>(w) * h, kMinScale) {}

  /// Per-pixel median of the given frames, then one update per frame so the
  /// deviation scale sees every residual. Throws invalid_input on an empty
  /// span or mixed dimensions.
  static BackgroundModel from_frames(std::span<const FrameBuffer> frames);

  /// 64-bit FNV-1a over dimensions, medians and scales.
  std::uint64_t digest() const;
};

/// Moves each median one step toward the frame and folds |residual| into the
/// deviation scale.
void update_background(BackgroundModel& model, const FrameBuffer& frame);

struct BlockMask {
  int n = 0;
  std::vector<std::uint8_t> bits;  // n * n, row-major

  BlockMask() = default;
  explicit BlockMask(int side) : n(side), bits(static_cast<std::size_t>(side) * side, 0) {}
};

BlockMask binarize_block(const FrameBuffer& frame, const BackgroundModel& model,
                         int origin_x, int origin_y, int n);

/// Fraction of foreground pixels in the block, in [0, 1].
double occupancy(const BlockMask& mask);

/// Whole-frame foreground mask under the same rule as binarize_block.
Mask foreground(const FrameBuffer& frame, const BackgroundModel& model);

/// Block mask cut out of a frame-level mask.
BlockMask block_mask(const Mask& mask, const BlockGrid& grid, int block_index);

/// Occupancy of every block of the grid.
std::vector<double> block_occupancy(const Mask& mask, const BlockGrid& grid);

class Segmenter {
 public:
  virtual ~Segmenter() = default;
  /// Foreground mask of the frame with the given stream index.
  virtual Mask segment(const FrameBuffer& frame, long index) = 0;
};

/// Segments against a frozen background model.
class BackgroundSegmenter : public Segmenter {
 public:
  explicit BackgroundSegmenter(BackgroundModel model) : model_(std::move(model)) {}
  Mask segment(const FrameBuffer& frame, long index) override;
  const BackgroundModel& model() const { return model_; }

 private:
  BackgroundModel model_;
};

/// Reads the mask for frame i from the i-th mask file of a directory
/// (ordered like list_frames).
class MaskDirectorySegmenter : public Segmenter {
 public:
  explicit MaskDirectorySegmenter(const std::filesystem::path& dir);
  Mask segment(const FrameBuffer& frame, long index) override;

 private:
  std::vector<std::filesystem::path> files_;
};

}  // namespace vad::seg
