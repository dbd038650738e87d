#include "vad/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "vad/calibration.hpp"
#include "vad/error.hpp"

namespace vad::detect {

void DetectorConfig::validate() const {
  if (block_size < 2) fail(ErrorKind::invalid_input, "block size must be at least 2");
  if (calibration_frames < 3) fail(ErrorKind::invalid_input, "calibration needs at least 3 frames");
  if (!(lambda_a > 0.0) || !std::isfinite(lambda_a)) {
    fail(ErrorKind::invalid_input, "lambda_a must be positive");
  }
  if (!(lambda_f >= 0.0) || !std::isfinite(lambda_f)) {
    fail(ErrorKind::invalid_input, "lambda_f must be non-negative");
  }
  if (refine_every < 1 || refine_window < 4) {
    fail(ErrorKind::invalid_input, "refinement cadence and window must be positive");
  }
  if (bounds.p_max < 0 || bounds.d_max < 0 || bounds.q_max < 0) {
    fail(ErrorKind::invalid_input, "order bounds must be non-negative");
  }
  if (threads < 1) fail(ErrorKind::invalid_input, "threads must be at least 1");
}

double block_feature(const flow::MagnitudeField& mag, const seg::BlockMask& mask, int origin_x,
                     int origin_y) {
  if (origin_x < 0 || origin_y < 0 || origin_x + mask.n > mag.width ||
      origin_y + mask.n > mag.height) {
    fail(ErrorKind::invalid_input, "block_feature: block outside the magnitude field");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < mask.n; ++y) {
    for (int x = 0; x < mask.n; ++x) {
      if (!mask.bits[static_cast<std::size_t>(y) * mask.n + x]) continue;
      sum += mag.at(origin_x + x, origin_y + y);
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::not_active, "block_feature: block has no foreground pixel");
  return sum / static_cast<double>(count);
}

std::vector<int> select_active(std::span<const double> occ_prev, std::span<const double> occ_cur,
                               std::span<const double> occ_next, const flow::MagnitudeField& mag,
                               const BlockGrid& grid, double lambda_f) {
  const auto n = static_cast<std::size_t>(grid.count());
  if (occ_cur.size() != n || (!occ_prev.empty() && occ_prev.size() != n) ||
      (!occ_next.empty() && occ_next.size() != n)) {
    fail(ErrorKind::invalid_input, "select_active: occupancy grids differ in shape");
  }
  if (mag.width < grid.cols * grid.block || mag.height < grid.rows * grid.block) {
    fail(ErrorKind::invalid_input, "select_active: magnitude field smaller than the grid");
  }
  std::vector<int> out;
  for (int b = 0; b < grid.count(); ++b) {
    const auto i = static_cast<std::size_t>(b);
    if (occ_cur[i] == 0.0) continue;
    const bool before = !occ_prev.empty() && occ_prev[i] != 0.0;
    const bool after = !occ_next.empty() && occ_next[i] != 0.0;
    if (!before && !after) continue;
    const int ox = grid.origin_x(b), oy = grid.origin_y(b);
    float peak = 0.0f;
    for (int y = oy; y < oy + grid.block; ++y) {
      for (int x = ox; x < ox + grid.block; ++x) peak = std::max(peak, mag.at(x, y));
    }
    if (static_cast<double>(peak) > lambda_f) out.push_back(b);
  }
  return out;
}

BlockDecision detect_block(BlockRecord& rec, double f_new, double lambda_a) {
  if (!std::isfinite(f_new)) fail(ErrorKind::invalid_input, "detect_block: non-finite feature");
  const arima::Model& m = rec.model;
  const std::size_t p = static_cast<std::size_t>(m.order.p);
  const std::size_t d = static_cast<std::size_t>(m.order.d);
  const std::size_t q = static_cast<std::size_t>(m.order.q);
  auto& hist = rec.feature_history;

  BlockDecision out;
  if (hist.size() < p + d) {
    hist.push_back(f_new);
    rec.last_anomalous = false;
    return out;
  }

  std::vector<double> tail(hist.end() - static_cast<std::ptrdiff_t>(p + d), hist.end());
  tail.push_back(f_new);
  const arima::Series s = arima::difference(tail, static_cast<int>(d));
  // s holds the p stationary lags followed by the new sample.
  const std::span<const double> s_hist(s.data(), p);
  std::vector<double> e_hist(q, 0.0);
  const auto& innov = rec.innovation_history;
  for (std::size_t j = 0; j < std::min(q, innov.size()); ++j) {
    e_hist[q - 1 - j] = innov[innov.size() - 1 - j];
  }
  const double forecast = arima::forecast_one_step(m, s_hist, e_hist);

  out.decided = true;
  out.s_new = s.back();
  out.score = std::abs(out.s_new - forecast);
  out.anomalous = out.score > lambda_a;
  rec.last_anomalous = out.anomalous;
  if (!out.anomalous) {
    hist.push_back(f_new);
    rec.innovation_history.push_back(out.s_new - forecast);
    ++rec.accepted_since_refit;
  }
  return out;
}

std::vector<std::uint8_t> spatial_consistency(std::span<const std::uint8_t> raw, int cols,
                                              int rows) {
  if (cols < 0 || rows < 0 || raw.size() != static_cast<std::size_t>(cols) * rows) {
    fail(ErrorKind::invalid_input, "spatial_consistency: grid shape mismatch");
  }
  std::vector<std::uint8_t> out(raw.size(), 0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (!raw[static_cast<std::size_t>(r) * cols + c]) continue;
      bool neighbour = false;
      for (int dr = -1; dr <= 1 && !neighbour; ++dr) {
        for (int dc = -1; dc <= 1 && !neighbour; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
          neighbour = raw[static_cast<std::size_t>(rr) * cols + cc] != 0;
        }
      }
      out[static_cast<std::size_t>(r) * cols + c] = neighbour ? 1 : 0;
    }
  }
  return out;
}

std::vector<double> consistent_scores(std::span<const double> scores, int cols, int rows) {
  if (cols < 0 || rows < 0 || scores.size() != static_cast<std::size_t>(cols) * rows) {
    fail(ErrorKind::invalid_input, "consistent_scores: grid shape mismatch");
  }
  std::vector<double> out(scores.size(), -1.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double own = scores[static_cast<std::size_t>(r) * cols + c];
      if (own < 0.0) continue;
      double best = -1.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if ((dr == 0 && dc == 0) || rr < 0 || cc < 0 || rr >= rows || cc >= cols) continue;
          best = std::max(best, scores[static_cast<std::size_t>(rr) * cols + cc]);
        }
      }
      if (best >= 0.0) out[static_cast<std::size_t>(r) * cols + c] = std::min(own, best);
    }
  }
  return out;
}

DecisionStage::DecisionStage(const DetectorConfig& config, const BlockGrid& grid,
                             arima::Model initial)
    : config_(config), grid_(grid), initial_(std::move(initial)) {
  config_.validate();
  initial_.validate();
  records_.resize(static_cast<std::size_t>(grid_.count()));
  for (int b = 0; b < grid_.count(); ++b) {
    records_[static_cast<std::size_t>(b)].index = b;
    records_[static_cast<std::size_t>(b)].model = initial_;
  }
}

void DecisionStage::seed(const FrameFeatures& features) {
  for (std::size_t k = 0; k < features.blocks.size(); ++k) {
    detect_block(records_.at(static_cast<std::size_t>(features.blocks[k])), features.features[k],
                 std::numeric_limits<double>::infinity());
  }
  maybe_refine(features.blocks);
}

AnomalyMap DecisionStage::decide(const FrameFeatures& features) {
  if (features.blocks.size() != features.features.size()) {
    fail(ErrorKind::invalid_input, "decide: blocks and features differ in length");
  }
  AnomalyMap map;
  map.frame = features.frame;
  map.cols = grid_.cols;
  map.rows = grid_.rows;
  const auto n = static_cast<std::size_t>(grid_.count());
  map.scores.assign(n, -1.0);
  map.active.assign(n, 0);
  std::vector<std::uint8_t> raw(n, 0);

  for (std::size_t k = 0; k < features.blocks.size(); ++k) {
    const auto b = static_cast<std::size_t>(features.blocks[k]);
    map.active.at(b) = 1;
    const BlockDecision dec = detect_block(records_[b], features.features[k], config_.lambda_a);
    if (!dec.decided) continue;
    map.scores[b] = dec.score;
    raw[b] = dec.anomalous ? 1 : 0;
    map.max_score = std::max(map.max_score, dec.score);
  }
  map.anomalous = spatial_consistency(raw, grid_.cols, grid_.rows);
  for (double s : consistent_scores(map.scores, grid_.cols, grid_.rows)) {
    map.frame_score = std::max(map.frame_score, s);
  }
  map.active_blocks = static_cast<int>(features.blocks.size());
  map.anomalous_blocks =
      static_cast<int>(std::count(map.anomalous.begin(), map.anomalous.end(), std::uint8_t{1}));

  maybe_refine(features.blocks);
  return map;
}

void DecisionStage::maybe_refine(std::span<const int> blocks) {
  std::vector<BlockRecord*> due;
  for (int b : blocks) {
    BlockRecord& rec = records_[static_cast<std::size_t>(b)];
    if (rec.accepted_since_refit >= config_.refine_every) due.push_back(&rec);
  }
  if (due.empty()) return;

  auto refresh = [this](BlockRecord& rec) {
    rec.model = calib::refine_block(initial_, rec, config_.bounds, config_.refine_window);
    rec.accepted_since_refit = 0;
    // Keep memory bounded and innovations consistent with the new model.
    const auto keep = static_cast<std::size_t>(config_.refine_window);
    if (rec.feature_history.size() > keep) {
      rec.feature_history.erase(rec.feature_history.begin(),
                                rec.feature_history.end() - static_cast<std::ptrdiff_t>(keep));
    }
    const auto d = static_cast<std::size_t>(rec.model.order.d);
    if (rec.feature_history.size() > d) {
      const arima::Series s = arima::difference(rec.feature_history, rec.model.order.d);
      rec.innovation_history = arima::innovations(rec.model, s);
    } else {
      rec.innovation_history.clear();
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config_.threads), due.size());
  if (workers <= 1) {
    for (BlockRecord* rec : due) refresh(*rec);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < due.size(); i += workers) refresh(*due[i]);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace vad::detect
