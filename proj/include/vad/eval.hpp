#pragma once

// Frame-level ROC/AUC/EER, the pixel-level 40% criterion, and the CSV/JSON
// files exchanged between detect, eval and sweep.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vad/image.hpp"

namespace vad::eval {

/// Operating point for "score > threshold"; the first point of a sweep uses
/// threshold -inf (everything positive).
struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct FrameMetrics {
  std::vector<RocPoint> roc;  // sorted by increasing FPR
  double auc = 0.0;
  double eer = 0.0;
};

/// Throws undefined_metric unless both classes are present and invalid_input
/// on a length mismatch.
FrameMetrics frame_metrics(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// EER of a sweep ordered by increasing threshold (FPR falling, FNR rising):
/// linear interpolation at the first FPR = FNR crossing, or
/// min over points of max(FPR, FNR) when the curves never cross.
struct ErrorRates {
  double fpr = 0.0;
  double fnr = 0.0;
};
double equal_error_rate(std::span<const ErrorRates> sweep);

/// True when the frame counts as handled correctly: with a nonempty gt,
/// |pred & gt| >= 40% of |gt|; with an empty gt, pred must be empty.
bool pixel_level_decision(const Mask& pred, const Mask& gt);

/// Recorded block scores of one frame (negative = no decision) and its
/// ground-truth mask. The frame is positive iff the mask is nonempty.
struct PixelFrame {
  std::vector<double> block_scores;
  Mask gt;
};

/// Pixel mask of the blocks that pass spatial consistency when every block
/// with score > threshold is flagged.
Mask predicted_mask(std::span<const double> block_scores, const BlockGrid& grid, int width,
                    int height, double threshold);

/// EER of the pixel-level criterion while the decision threshold sweeps
/// over the recorded block scores.
double pixel_eer(std::span<const PixelFrame> frames, const BlockGrid& grid);

struct EvalReport {
  FrameMetrics frame;
  std::optional<double> pixel_eer;
  std::size_t frames = 0;
  std::size_t positives = 0;
};

std::string to_json(const EvalReport& report);
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc);
/// Reads the roc array back out of a JSON report.
std::vector<RocPoint> roc_from_json(const std::string& json);

// ---- files -------------------------------------------------------------

struct ScoreRow {
  long frame = 0;
  double frame_score = 0.0;
  int active_blocks = 0;
  int anomalous_blocks = 0;
};

struct BlockRow {
  long frame = 0;
  int block = 0;
  double feature = 0.0;
  std::optional<double> score;  // empty while the block warms up
};

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

void write_blocks_csv(const std::filesystem::path& path, std::span<const BlockRow> rows);
std::vector<BlockRow> read_blocks_csv(const std::filesystem::path& path);

/// "frame_index,anomalous" rows; labels[i] belongs to frame i.
void write_ground_truth(const std::filesystem::path& path, std::span<const std::uint8_t> labels);
std::vector<std::uint8_t> read_ground_truth(const std::filesystem::path& path);

std::string csv_double(double value);

}  // namespace vad::eval
