#include "vad/engine.hpp"

#include <cstdio>
#include <string>

#include "vad/error.hpp"
#include "vad/image_io.hpp"

namespace vad {

std::string flow_file_name(long index) { return io::numbered_name("flow", index, ".fsfl"); }

Engine::Engine(EngineOptions options) : options_(std::move(options)) {
  if (options_.artifact) {
    options_.config.block_size = options_.artifact->block_size;
    options_.config.calibration_frames = options_.artifact->frames;
  }
  options_.config.validate();
  if (!options_.save_flow_dir.empty()) std::filesystem::create_directories(options_.save_flow_dir);
}

Engine::~Engine() = default;

flow::MagnitudeField Engine::next_magnitude(const FrameBuffer& frame) {
  const long index = next_index_ - 1;
  flow::FlowField field;
  if (!options_.flow_dir.empty()) {
    field = flow::load_flow(options_.flow_dir / flow_file_name(index));
    if (field.width != frame.width || field.height != frame.height) {
      fail(ErrorKind::invalid_input, "flow file for frame " + std::to_string(index) +
                                         " does not match the frame size");
    }
  } else {
    // Reference grid is the current frame, so magnitudes line up with its
    // foreground mask (the field points back to the previous frame).
    field = flow::compute_flow(frame, *previous_, options_.flow);
  }
  if (!options_.save_flow_dir.empty()) {
    flow::write_flow(options_.save_flow_dir / flow_file_name(index), field);
  }
  return flow::magnitude(field);
}

std::optional<FrameResult> Engine::push(FrameBuffer frame) {
  frame.validate();
  const long index = next_index_++;
  const int frames = options_.config.calibration_frames;

  if (index == 0) {
    if (options_.artifact &&
        (frame.width != options_.artifact->width || frame.height != options_.artifact->height)) {
      fail(ErrorKind::invalid_input,
           "video is " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
               " but the calibration artifact is " + std::to_string(options_.artifact->width) +
               "x" + std::to_string(options_.artifact->height));
    }
    grid_ = BlockGrid(frame.width, frame.height, options_.config.block_size);
    if (grid_.count() == 0) fail(ErrorKind::invalid_input, "frame smaller than one block");
    calibration_frames_.push_back(frame);
    previous_ = std::move(frame);
    return std::nullopt;
  }
  if (!same_shape(*previous_, frame)) {
    fail(ErrorKind::invalid_input, "frame " + std::to_string(index) + " changes the frame size");
  }

  flow::MagnitudeField mag = next_magnitude(frame);
  if (index < frames) {
    calibration_frames_.push_back(frame);
    calibration_mags_.push_back(std::move(mag));
    previous_ = std::move(frame);
    if (index == frames - 1) finish_calibration();
    return std::nullopt;
  }

  Mask fg = segment(frame, index, &mag);
  std::vector<double> occ = seg::block_occupancy(fg, grid_);
  auto result = release(&occ);
  occ_before_ = std::move(pending_->occupancy);
  pending_ = Pending{index, std::move(mag), std::move(fg), std::move(occ)};
  previous_ = std::move(frame);
  return result;
}

std::optional<FrameResult> Engine::finish() {
  if (!calibrated()) {
    fail(ErrorKind::insufficient_history,
         "stream ended after " + std::to_string(next_index_) + " frames, calibration needs " +
             std::to_string(options_.config.calibration_frames));
  }
  auto result = release(nullptr);
  pending_.reset();
  return result;
}

void Engine::finish_calibration() {
  const int frames = options_.config.calibration_frames;
  std::uint64_t digest = 0;
  if (!options_.mask_dir.empty()) {
    segmenter_ = std::make_unique<seg::MaskDirectorySegmenter>(options_.mask_dir);
  } else {
    auto model = seg::BackgroundModel::from_frames(calibration_frames_);
    digest = model.digest();
    segmenter_ = std::make_unique<seg::BackgroundSegmenter>(std::move(model));
    gate_foreground_ = options_.motion_gate;
  }
  if (!(options_.config.lambda_f > 0.0)) {
    options_.config.lambda_f = options_.artifact ? options_.artifact->calibration.lambda_f
                                                 : calib::mean_magnitude(calibration_mags_);
  }

  std::vector<Mask> masks;
  std::vector<std::vector<double>> occ;
  for (int k = 0; k < frames; ++k) {
    const auto i = static_cast<std::size_t>(k);
    masks.push_back(segment(calibration_frames_[i], k, k > 0 ? &calibration_mags_[i - 1] : nullptr));
    occ.push_back(seg::block_occupancy(masks.back(), grid_));
  }

  if (options_.artifact) {
    artifact_ = *options_.artifact;
  } else {
    artifact_.calibration = calib::calibrate(calibration_mags_, masks, grid_, options_.config.bounds);
    artifact_.width = calibration_frames_.front().width;
    artifact_.height = calibration_frames_.front().height;
    artifact_.block_size = options_.config.block_size;
    artifact_.frames = frames;
    artifact_.bounds = options_.config.bounds;
    artifact_.background_digest = digest;
  }
  stage_ = std::make_unique<detect::DecisionStage>(options_.config, grid_,
                                                   artifact_.calibration.theta);

  // Calibration frames are normal by contract: their features seed the
  // histories. The last one waits for the next frame's occupancy.
  occ_before_ = occ[0];
  for (int k = 1; k < frames; ++k) {
    const auto i = static_cast<std::size_t>(k);
    pending_ = Pending{k, std::move(calibration_mags_[i - 1]), std::move(masks[i]), occ[i]};
    if (k + 1 < frames) {
      release(&occ[i + 1]);
      occ_before_ = occ[i];
    }
  }
  calibration_frames_.clear();
  calibration_mags_.clear();
}

Mask Engine::segment(const FrameBuffer& frame, long index, const flow::MagnitudeField* mag) const {
  Mask fg = segmenter_->segment(frame, index);
  if (gate_foreground_ && mag) {
    for (std::size_t i = 0; i < fg.bits.size(); ++i) {
      if (!(mag->mag[i] > options_.config.lambda_f)) fg.bits[i] = 0;
    }
  }
  return fg;
}

std::optional<FrameResult> Engine::release(const std::vector<double>* occ_next) {
  if (!pending_) return std::nullopt;
  const Pending& p = *pending_;
  const std::span<const double> next =
      occ_next ? std::span<const double>(*occ_next) : std::span<const double>();
  detect::FrameFeatures features;
  features.frame = p.index;
  features.blocks = detect::select_active(occ_before_, p.occupancy, next, p.mag, grid_,
                                          options_.config.lambda_f);
  for (int b : features.blocks) {
    features.features.push_back(detect::block_feature(
        p.mag, seg::block_mask(p.foreground, grid_, b), grid_.origin_x(b), grid_.origin_y(b)));
  }
  if (p.index < options_.config.calibration_frames) {
    stage_->seed(features);
    seeds_.push_back(std::move(features));
    return std::nullopt;
  }
  detect::AnomalyMap map = stage_->decide(features);
  return FrameResult{std::move(map), std::move(features), p.foreground};
}

}  // namespace vad
