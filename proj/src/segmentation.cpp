#include "vad/segmentation.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "vad/error.hpp"
#include "vad/image_io.hpp"

namespace vad::seg {
namespace {

void require_same_shape(const BackgroundModel& model, const FrameBuffer& frame, const char* who) {
  if (model.width != frame.width || model.height != frame.height) {
    fail(ErrorKind::invalid_input,
         std::string(who) + ": frame is " + std::to_string(frame.width) + "x" +
             std::to_string(frame.height) + ", background is " + std::to_string(model.width) +
             "x" + std::to_string(model.height));
  }
}

bool is_foreground(float value, float median, float scale) {
  return std::abs(value - median) > kThresholdScale * scale;
}

}  // namespace

BackgroundModel BackgroundModel::from_frames(std::span<const FrameBuffer> frames) {
  if (frames.empty()) fail(ErrorKind::invalid_input, "background: no frames");
  const int w = frames.front().width, h = frames.front().height;
  for (const auto& f : frames) {
    if (f.width != w || f.height != h) fail(ErrorKind::invalid_input, "background: mixed frame sizes");
  }
  BackgroundModel model(w, h);
  std::vector<float> column(frames.size());
  for (std::size_t i = 0; i < model.median.size(); ++i) {
    for (std::size_t k = 0; k < frames.size(); ++k) column[k] = frames[k].data[i];
    const auto mid = column.begin() + static_cast<std::ptrdiff_t>(column.size() / 2);
    std::nth_element(column.begin(), mid, column.end());
    float m = *mid;
    if (column.size() % 2 == 0) m = 0.5f * (m + *std::max_element(column.begin(), mid));
    model.median[i] = m;
  }
  for (const auto& f : frames) update_background(model, f);
  return model;
}

std::uint64_t BackgroundModel::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint32_t word) {
    for (int b = 0; b < 4; ++b) {
      h ^= (word >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ull;
    }
  };
  mix(static_cast<std::uint32_t>(width));
  mix(static_cast<std::uint32_t>(height));
  for (float v : median) mix(std::bit_cast<std::uint32_t>(v));
  for (float v : scale) mix(std::bit_cast<std::uint32_t>(v));
  return h;
}

void update_background(BackgroundModel& model, const FrameBuffer& frame) {
  require_same_shape(model, frame, "update_background");
  for (std::size_t i = 0; i < model.median.size(); ++i) {
    const float value = frame.data[i];
    float& m = model.median[i];
    if (value > m) {
      m = std::min(m + kMedianStep, value);
    } else if (value < m) {
      m = std::max(m - kMedianStep, value);
    }
    float& s = model.scale[i];
    s += kDeviationRate * (std::abs(value - m) - s);
    s = std::max(s, kMinScale);
  }
}

BlockMask binarize_block(const FrameBuffer& frame, const BackgroundModel& model, int origin_x,
                         int origin_y, int n) {
  require_same_shape(model, frame, "binarize_block");
  if (n < 1 || origin_x < 0 || origin_y < 0 || origin_x + n > frame.width ||
      origin_y + n > frame.height) {
    fail(ErrorKind::invalid_input, "binarize_block: block at (" + std::to_string(origin_x) + "," +
                                       std::to_string(origin_y) + ") side " + std::to_string(n) +
                                       " is outside the frame");
  }
  BlockMask out(n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const std::size_t i = static_cast<std::size_t>(origin_y + y) * frame.width + origin_x + x;
      out.bits[static_cast<std::size_t>(y) * n + x] =
          is_foreground(frame.data[i], model.median[i], model.scale[i]) ? 1 : 0;
    }
  }
  return out;
}

double occupancy(const BlockMask& mask) {
  if (mask.n < 1 || mask.bits.size() != static_cast<std::size_t>(mask.n) * mask.n) {
    fail(ErrorKind::invalid_input, "occupancy: malformed block mask");
  }
  std::size_t count = 0;
  for (auto b : mask.bits) count += b != 0;
  return static_cast<double>(count) / static_cast<double>(mask.bits.size());
}

Mask foreground(const FrameBuffer& frame, const BackgroundModel& model) {
  require_same_shape(model, frame, "foreground");
  Mask out(frame.width, frame.height);
  for (std::size_t i = 0; i < out.bits.size(); ++i) {
    out.bits[i] = is_foreground(frame.data[i], model.median[i], model.scale[i]) ? 1 : 0;
  }
  return out;
}

BlockMask block_mask(const Mask& mask, const BlockGrid& grid, int block_index) {
  BlockMask out(grid.block);
  const int ox = grid.origin_x(block_index), oy = grid.origin_y(block_index);
  for (int y = 0; y < grid.block; ++y) {
    for (int x = 0; x < grid.block; ++x) {
      out.bits[static_cast<std::size_t>(y) * grid.block + x] = mask.at(ox + x, oy + y) ? 1 : 0;
    }
  }
  return out;
}

std::vector<double> block_occupancy(const Mask& mask, const BlockGrid& grid) {
  std::vector<double> occ(static_cast<std::size_t>(grid.count()), 0.0);
  const double area = static_cast<double>(grid.block) * grid.block;
  for (int y = 0; y < grid.rows * grid.block; ++y) {
    for (int x = 0; x < grid.cols * grid.block; ++x) {
      if (mask.at(x, y)) occ[static_cast<std::size_t>(grid.index(x / grid.block, y / grid.block))] += 1.0;
    }
  }
  for (double& o : occ) o /= area;
  return occ;
}

Mask BackgroundSegmenter::segment(const FrameBuffer& frame, long) {
  return foreground(frame, model_);
}

MaskDirectorySegmenter::MaskDirectorySegmenter(const std::filesystem::path& dir)
    : files_(io::list_frames(dir)) {}

Mask MaskDirectorySegmenter::segment(const FrameBuffer& frame, long index) {
  if (index < 0 || static_cast<std::size_t>(index) >= files_.size()) {
    fail(ErrorKind::invalid_input, "no mask file for frame " + std::to_string(index));
  }
  Mask m = io::read_mask(files_[static_cast<std::size_t>(index)]);
  if (m.width != frame.width || m.height != frame.height) {
    fail(ErrorKind::invalid_input, files_[static_cast<std::size_t>(index)].string() +
                                       ": mask size differs from the video");
  }
  return m;
}

}  // namespace vad::seg
