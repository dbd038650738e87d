#pragma once

// Streaming pipeline: flow, segmentation, active-block selection, decisions.
//
// Frames 0..F-1 build the background and, without an artifact, the initial
// model and lambda_f. Their block features seed the histories as normal
// samples. From frame F on, each frame yields an AnomalyMap once the next
// frame has arrived (occupancy lookahead), so push() lags by one frame and
// finish() releases the last one.

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "vad/calibration.hpp"
#include "vad/detector.hpp"
#include "vad/flow.hpp"
#include "vad/segmentation.hpp"

namespace vad {

struct EngineOptions {
  detect::DetectorConfig config;
  flow::FlowParams flow;
  std::optional<calib::Artifact> artifact;  // skip calibration when set
  std::filesystem::path flow_dir;           // external flow, flow_NNNNNN.fsfl per frame
  std::filesystem::path mask_dir;           // external foreground masks
  std::filesystem::path save_flow_dir;      // write computed flow here when set
  // Drop built-in foreground pixels whose flow magnitude is <= lambda_f.
  // Removes ghosts of objects that sat still during calibration.
  bool motion_gate = true;
};

struct FrameResult {
  detect::AnomalyMap map;
  detect::FrameFeatures features;
  Mask foreground;
};

class Engine {
 public:
  explicit Engine(EngineOptions options);
  ~Engine();

  std::optional<FrameResult> push(FrameBuffer frame);
  std::optional<FrameResult> finish();

  bool calibrated() const { return stage_ != nullptr; }
  /// Valid once calibrated().
  const calib::Artifact& artifact() const { return artifact_; }
  const detect::DecisionStage& decisions() const { return *stage_; }
  const detect::DetectorConfig& config() const { return options_.config; }
  /// Features of calibration frames 1..F-1, in the order they seeded the
  /// decision stage. Replaying them plus every later frame's features
  /// through a fresh DecisionStage reproduces this run's maps.
  const std::vector<detect::FrameFeatures>& seed_features() const { return seeds_; }

 private:
  struct Pending {
    long index = 0;
    flow::MagnitudeField mag;
    Mask foreground;
    std::vector<double> occupancy;
  };

  flow::MagnitudeField next_magnitude(const FrameBuffer& frame);
  void finish_calibration();
  std::optional<FrameResult> release(const std::vector<double>* occ_next);
  Mask segment(const FrameBuffer& frame, long index, const flow::MagnitudeField* mag) const;

  EngineOptions options_;
  calib::Artifact artifact_;
  BlockGrid grid_;
  long next_index_ = 0;
  std::optional<FrameBuffer> previous_;
  std::vector<FrameBuffer> calibration_frames_;
  std::vector<flow::MagnitudeField> calibration_mags_;
  std::unique_ptr<seg::Segmenter> segmenter_;
  bool gate_foreground_ = false;
  std::unique_ptr<detect::DecisionStage> stage_;
  std::vector<double> occ_before_;
  std::optional<Pending> pending_;
  std::vector<detect::FrameFeatures> seeds_;
};

/// Name of the external flow file for the field attributed to frame index.
std::string flow_file_name(long index);

}  // namespace vad
