#pragma once

// Frame and mask file formats:
//   * PGM: P2/P5 read (maxval up to 65535), P5 8-bit written.
//   * Masks: P4 or P5 read (nonzero = set), P5 with 0/255 written.
//   * PNG: 8/16-bit, converted to luminance (read only).
//   * Y4M: luma plane of every frame (read only).

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vad/image.hpp"

namespace vad::io {

FrameBuffer read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const FrameBuffer& frame);

Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& mask);

FrameBuffer read_png(const std::filesystem::path& path);

/// Reads .pgm or .png by extension.
FrameBuffer read_frame(const std::filesystem::path& path);

/// Sequential frame reader over a directory of numbered images or a Y4M file.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<FrameBuffer> next() = 0;
};

std::unique_ptr<FrameSource> open_video(const std::filesystem::path& path);

/// Image files (.pgm/.png) in a directory, ordered by the last run of digits
/// in the file name, then by name.
std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir);

/// "frame_000042.pgm"-style name.
std::string numbered_name(const std::string& stem, long index, const std::string& ext);

}  // namespace vad::io
