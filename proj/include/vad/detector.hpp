#pragma once

// Block-level anomaly decisions.
//
// Each block keeps the feature samples it was judged normal on. A new sample
// is differenced against that history, compared with the ARMA one-step
// forecast, and flagged when |s - s_hat| > lambda_a. A flagged block only
// survives if one of its 8 neighbours is flagged too.

#include <optional>
#include <span>
#include <vector>

#include "vad/arima.hpp"
#include "vad/flow.hpp"
#include "vad/image.hpp"
#include "vad/segmentation.hpp"

namespace vad::detect {

struct DetectorConfig {
  int block_size = 10;
  int calibration_frames = 10;
  double lambda_f = 0.0;  // set by calibration unless overridden
  double lambda_a = 0.01;
  int refine_every = 16;   // accepted samples between block refits
  int refine_window = 64;  // most recent samples used by a refit
  arima::OrderBounds bounds;
  int threads = 1;

  /// Throws invalid_input when a field is out of range.
  void validate() const;
};

struct BlockRecord {
  int index = 0;
  arima::Series feature_history;     // normal samples only, oldest first
  arima::Series innovation_history;  // one entry per accepted sample
  arima::Model model;
  bool last_anomalous = false;
  int accepted_since_refit = 0;
};

/// Mean magnitude over the block's foreground pixels. Throws not_active when
/// the mask is empty.
double block_feature(const flow::MagnitudeField& mag, const seg::BlockMask& mask, int origin_x,
                     int origin_y);

/// Blocks that are occupied now, occupied in the previous or next frame, and
/// whose largest flow magnitude exceeds lambda_f. An empty occ_next stands
/// for "no lookahead frame".
std::vector<int> select_active(std::span<const double> occ_prev, std::span<const double> occ_cur,
                               std::span<const double> occ_next, const flow::MagnitudeField& mag,
                               const BlockGrid& grid, double lambda_f);

struct BlockDecision {
  bool decided = false;  // false while the block is warming up
  bool anomalous = false;
  double score = 0.0;
  double s_new = 0.0;
};

/// Samples the history must hold before a decision is made.
inline std::size_t required_history(const arima::Model& model) {
  return static_cast<std::size_t>(model.order.p + model.order.d);
}

/// Scores f_new against the block's model. Normal samples (and warm-up
/// samples) are appended to the history; anomalous ones are not.
BlockDecision detect_block(BlockRecord& rec, double f_new, double lambda_a);

/// Keeps a flagged block only when at least one of its 8 neighbours is
/// flagged in `raw`.
std::vector<std::uint8_t> spatial_consistency(std::span<const std::uint8_t> raw, int cols, int rows);

/// Per-block score that survives spatial consistency at any threshold t:
/// min(own score, best neighbouring score). Blocks without a decision carry
/// a negative score.
std::vector<double> consistent_scores(std::span<const double> scores, int cols, int rows);

struct AnomalyMap {
  long frame = 0;
  int cols = 0;
  int rows = 0;
  std::vector<double> scores;           // |s - s_hat|, negative when undecided
  std::vector<std::uint8_t> active;     // per block
  std::vector<std::uint8_t> anomalous;  // after spatial consistency
  double frame_score = 0.0;             // max of consistent_scores, 0 if none
  double max_score = 0.0;               // max raw block score
  int active_blocks = 0;
  int anomalous_blocks = 0;
};

/// Active blocks of one frame and their features, in block-index order.
struct FrameFeatures {
  long frame = 0;
  std::vector<int> blocks;
  std::vector<double> features;
};

/// The decision part of the pipeline: per-block records, thresholding,
/// spatial consistency and periodic refinement. Replaying the same
/// FrameFeatures stream reproduces the same maps.
class DecisionStage {
 public:
  DecisionStage(const DetectorConfig& config, const BlockGrid& grid, arima::Model initial);

  /// Appends features of a known-normal frame without deciding.
  void seed(const FrameFeatures& features);
  AnomalyMap decide(const FrameFeatures& features);

  const std::vector<BlockRecord>& records() const { return records_; }
  const arima::Model& initial_model() const { return initial_; }

 private:
  void maybe_refine(std::span<const int> blocks);

  DetectorConfig config_;
  BlockGrid grid_;
  arima::Model initial_;
  std::vector<BlockRecord> records_;
};

}  // namespace vad::detect
