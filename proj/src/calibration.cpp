#include "vad/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "vad/error.hpp"
#include "vad/keyvalue.hpp"

namespace vad::calib {

arima::OrderBounds clip_bounds(arima::OrderBounds bounds, int frames) {
  arima::OrderBounds out = bounds;
  out.q_max = std::clamp(out.q_max, 0, std::max(0, frames - 1));
  out.d_max = std::clamp(out.d_max, 0, std::max(0, frames - 1));
  out.p_max = std::clamp(out.p_max, 0, std::max(0, frames - 1 - out.d_max));
  return out;
}

double mean_magnitude(std::span<const flow::MagnitudeField> mags) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& m : mags) {
    for (float v : m.mag) sum += v;
    count += m.mag.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

arima::Series feature_series(std::span<const flow::MagnitudeField> mags,
                             std::span<const Mask> masks, const BlockGrid& grid, double lambda_f) {
  if (masks.size() != mags.size() + 1) {
    fail(ErrorKind::invalid_input, "calibration: need one more mask than flow fields");
  }
  std::vector<std::vector<double>> occ;
  occ.reserve(masks.size());
  for (const auto& m : masks) occ.push_back(seg::block_occupancy(m, grid));

  arima::Series series;
  for (std::size_t k = 0; k < mags.size(); ++k) {
    const std::size_t frame = k + 1;
    const std::span<const double> next =
        frame + 1 < occ.size() ? std::span<const double>(occ[frame + 1]) : std::span<const double>();
    const auto active =
        detect::select_active(occ[frame - 1], occ[frame], next, mags[k], grid, lambda_f);
    double sum = 0.0;
    std::size_t count = 0;
    for (int b : active) {
      const int ox = grid.origin_x(b), oy = grid.origin_y(b);
      for (int y = oy; y < oy + grid.block; ++y) {
        for (int x = ox; x < ox + grid.block; ++x) {
          if (!masks[frame].at(x, y)) continue;
          sum += mags[k].at(x, y);
          ++count;
        }
      }
    }
    if (count) series.push_back(sum / static_cast<double>(count));
  }
  return series;
}

Calibration calibrate(std::span<const flow::MagnitudeField> mags, std::span<const Mask> masks,
                      const BlockGrid& grid, arima::OrderBounds bounds) {
  const int frames = static_cast<int>(masks.size());
  if (frames < 3) fail(ErrorKind::invalid_input, "calibration needs at least 3 frames");
  Calibration out;
  out.lambda_f = mean_magnitude(mags);
  if (!(out.lambda_f > 0.0)) {
    fail(ErrorKind::degenerate_calibration, "no motion in any calibration frame");
  }
  out.series = feature_series(mags, masks, grid, out.lambda_f);
  if (out.series.empty()) {
    fail(ErrorKind::degenerate_calibration, "no active block in any calibration frame");
  }
  try {
    out.theta = arima::select_order(out.series, clip_bounds(bounds, frames)).model;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::insufficient_history) throw;
    fail(ErrorKind::degenerate_calibration,
         "calibration series has " + std::to_string(out.series.size()) +
             " samples, too few to fit any model");
  }
  return out;
}

arima::Model refine_block(const arima::Model& initial, const detect::BlockRecord& rec,
                          arima::OrderBounds bounds, int window) {
  const arima::Order o0 = initial.order;
  const auto need = static_cast<std::size_t>(o0.p + o0.d + o0.q + 2);
  const auto& hist = rec.feature_history;
  if (hist.size() < need) return initial;
  const std::size_t len = std::min(hist.size(), static_cast<std::size_t>(std::max(window, 1)));
  const std::span<const double> recent(hist.data() + hist.size() - len, len);

  std::vector<arima::Order> candidates;
  for (int d = std::max(0, o0.d - 1); d <= std::min(bounds.d_max, o0.d + 1); ++d) {
    for (int p = std::max(0, o0.p - 1); p <= std::min(bounds.p_max, o0.p + 1); ++p) {
      for (int q = std::max(0, o0.q - 1); q <= std::min(bounds.q_max, o0.q + 1); ++q) {
        candidates.push_back({p, d, q});
      }
    }
  }
  if (std::find(candidates.begin(), candidates.end(), o0) == candidates.end()) {
    candidates.push_back(o0);
  }

  try {
    const arima::Selection sel = arima::select_order(recent, candidates);
    const double baseline = arima::evaluate_aic(initial, recent, sel.common_start);
    return sel.aic <= baseline ? sel.model : initial;
  } catch (const Error&) {
    return initial;
  }
}

void save_artifact(const std::filesystem::path& path, const Artifact& a) {
  KeyValues kv;
  kv.set("width", std::to_string(a.width));
  kv.set("height", std::to_string(a.height));
  kv.set("block_size", std::to_string(a.block_size));
  kv.set("frames", std::to_string(a.frames));
  kv.set("p_max", std::to_string(a.bounds.p_max));
  kv.set("d_max", std::to_string(a.bounds.d_max));
  kv.set("q_max", std::to_string(a.bounds.q_max));
  kv.set("lambda_f", format_double(a.calibration.lambda_f));
  kv.set("series", format_doubles(a.calibration.series));
  std::ostringstream digest;
  digest << std::hex << a.background_digest;
  kv.set("background_digest", digest.str());
  arima::store_model(kv, a.calibration.theta, "theta.");
  std::ofstream out(path);
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + path.string());
  out << "# calibration artifact\n" << kv.to_string();
  if (!out) fail(ErrorKind::invalid_input, "write failed: " + path.string());
}

Artifact load_artifact(const std::filesystem::path& path) {
  const KeyValues kv = KeyValues::load(path.string());
  Artifact a;
  a.width = static_cast<int>(kv.get_int("width"));
  a.height = static_cast<int>(kv.get_int("height"));
  a.block_size = static_cast<int>(kv.get_int("block_size"));
  a.frames = static_cast<int>(kv.get_int("frames"));
  a.bounds.p_max = static_cast<int>(kv.get_int("p_max"));
  a.bounds.d_max = static_cast<int>(kv.get_int("d_max"));
  a.bounds.q_max = static_cast<int>(kv.get_int("q_max"));
  a.calibration.lambda_f = kv.get_double("lambda_f");
  a.calibration.series = kv.get_doubles("series");
  const std::string& digest = kv.get("background_digest");
  try {
    std::size_t used = 0;
    a.background_digest = std::stoull(digest, &used, 16);
    if (used != digest.size()) throw std::invalid_argument(digest);
  } catch (const std::logic_error&) {
    fail(ErrorKind::format, path.string() + ": bad background_digest '" + digest + "'");
  }
  a.calibration.theta = arima::load_model(kv, "theta.");
  if (a.width <= 0 || a.height <= 0 || a.block_size < 2 || a.frames < 3) {
    fail(ErrorKind::format, path.string() + ": implausible geometry");
  }
  return a;
}

}  // namespace vad::calib
