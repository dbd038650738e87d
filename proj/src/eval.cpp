#include "vad/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "json.hpp"
#include "vad/detector.hpp"
#include "vad/error.hpp"
#include "vad/keyvalue.hpp"

namespace vad::eval {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> unique_sorted(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Number of values in a sorted vector strictly greater than t.
std::size_t count_above(const std::vector<double>& sorted, double t) {
  return static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), t));
}

bool detected_with(std::span<const double> scores, const BlockGrid& grid, const Mask& gt,
                   double min_score) {
  std::vector<std::uint8_t> raw(scores.size(), 0);
  for (std::size_t b = 0; b < scores.size(); ++b) raw[b] = scores[b] >= 0.0 && scores[b] >= min_score;
  const auto kept = detect::spatial_consistency(raw, grid.cols, grid.rows);
  std::size_t overlap = 0, truth = 0;
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.at(x, y)) continue;
      ++truth;
      const int c = x / grid.block, r = y / grid.block;
      if (c < grid.cols && r < grid.rows && kept[static_cast<std::size_t>(grid.index(c, r))]) {
        ++overlap;
      }
    }
  }
  return 10 * overlap >= 4 * truth;
}

// Supremum of the thresholds t at which the frame's outcome under
// "score > t" is positive (detected, or flagged for a normal frame).
double critical_threshold(const PixelFrame& f, const BlockGrid& grid) {
  if (f.gt.empty()) {
    double best = kNegInf;
    for (double s : detect::consistent_scores(f.block_scores, grid.cols, grid.rows)) {
      if (s >= 0.0) best = std::max(best, s);
    }
    return best;
  }
  std::vector<double> values;
  for (double s : f.block_scores) {
    if (s >= 0.0) values.push_back(s);
  }
  values = unique_sorted(std::move(values));
  // Detection is monotone in the flagged set, so binary search the largest
  // cut-off that still detects.
  std::size_t lo = 0, hi = values.size();
  if (hi == 0 || !detected_with(f.block_scores, grid, f.gt, values[0])) return kNegInf;
  while (hi - lo > 1) {
    const std::size_t mid = (lo + hi) / 2;
    if (detected_with(f.block_scores, grid, f.gt, values[mid])) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return values[lo];
}

[[noreturn]] void csv_error(const std::filesystem::path& path, std::size_t line,
                            const std::string& what) {
  fail(ErrorKind::format, path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    std::string field = line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    while (!field.empty() && field.front() == ' ') field.erase(field.begin());
    out.push_back(std::move(field));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Calls row(fields, line_number) for every data line after the header.
template <class F>
void read_csv(const std::filesystem::path& path, const std::vector<std::string>& header, F&& row) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::invalid_input, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split(line);
    if (!seen_header) {
      if (fields != header) csv_error(path, line_no, "unexpected header");
      seen_header = true;
      continue;
    }
    if (fields.size() != header.size()) {
      csv_error(path, line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                   std::to_string(fields.size()));
    }
    try {
      row(fields, line_no);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::format) throw;
      csv_error(path, line_no, e.what());
    }
  }
  if (!seen_header) csv_error(path, line_no, "missing header");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + path.string());
  return out;
}

void check_written(const std::ofstream& out, const std::filesystem::path& path) {
  if (!out) fail(ErrorKind::invalid_input, "write failed: " + path.string());
}

}  // namespace

FrameMetrics frame_metrics(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) {
    fail(ErrorKind::invalid_input, "frame_metrics: " + std::to_string(scores.size()) +
                                       " scores but " + std::to_string(labels.size()) + " labels");
  }
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) fail(ErrorKind::invalid_input, "frame_metrics: non-finite score");
    (labels[i] ? pos : neg).push_back(scores[i]);
  }
  if (pos.empty() || neg.empty()) {
    fail(ErrorKind::undefined_metric, "ROC needs both anomalous and normal frames");
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> thresholds{kNegInf};
  for (double t : unique_sorted({scores.begin(), scores.end()})) thresholds.push_back(t);

  FrameMetrics m;
  std::vector<ErrorRates> sweep;
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  for (double t : thresholds) {
    const double tpr = static_cast<double>(count_above(pos, t)) / np;
    const double fpr = static_cast<double>(count_above(neg, t)) / nn;
    m.roc.push_back({t, fpr, tpr});
    sweep.push_back({fpr, 1.0 - tpr});
  }
  std::reverse(m.roc.begin(), m.roc.end());
  for (std::size_t i = 1; i < m.roc.size(); ++i) {
    m.auc += (m.roc[i].fpr - m.roc[i - 1].fpr) * (m.roc[i].tpr + m.roc[i - 1].tpr) / 2.0;
  }
  m.eer = equal_error_rate(sweep);
  return m;
}

double equal_error_rate(std::span<const ErrorRates> sweep) {
  if (sweep.empty()) fail(ErrorKind::undefined_metric, "empty sweep");
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const double di = sweep[i].fpr - sweep[i].fnr;
    if (di == 0.0) return sweep[i].fpr;
    if (i + 1 == sweep.size()) break;
    const double dj = sweep[i + 1].fpr - sweep[i + 1].fnr;
    if ((di > 0.0 && dj < 0.0) || (di < 0.0 && dj > 0.0)) {
      const double a = di / (di - dj);
      return sweep[i].fpr + a * (sweep[i + 1].fpr - sweep[i].fpr);
    }
  }
  double best = 1.0;
  for (const auto& r : sweep) best = std::min(best, std::max(r.fpr, r.fnr));
  return best;
}

bool pixel_level_decision(const Mask& pred, const Mask& gt) {
  if (pred.width != gt.width || pred.height != gt.height) {
    fail(ErrorKind::invalid_input, "pixel_level_decision: mask sizes differ");
  }
  std::size_t truth = 0, overlap = 0, flagged = 0;
  for (std::size_t i = 0; i < gt.bits.size(); ++i) {
    truth += gt.bits[i] != 0;
    flagged += pred.bits[i] != 0;
    overlap += gt.bits[i] != 0 && pred.bits[i] != 0;
  }
  if (truth == 0) return flagged == 0;
  return 10 * overlap >= 4 * truth;
}

Mask predicted_mask(std::span<const double> block_scores, const BlockGrid& grid, int width,
                    int height, double threshold) {
  if (block_scores.size() != static_cast<std::size_t>(grid.count())) {
    fail(ErrorKind::invalid_input, "predicted_mask: score grid does not match the block grid");
  }
  std::vector<std::uint8_t> raw(block_scores.size(), 0);
  for (std::size_t b = 0; b < raw.size(); ++b) {
    raw[b] = block_scores[b] >= 0.0 && block_scores[b] > threshold;
  }
  const auto kept = detect::spatial_consistency(raw, grid.cols, grid.rows);
  Mask m(width, height);
  for (int b = 0; b < grid.count(); ++b) {
    if (!kept[static_cast<std::size_t>(b)]) continue;
    const int ox = grid.origin_x(b), oy = grid.origin_y(b);
    for (int y = oy; y < std::min(height, oy + grid.block); ++y) {
      for (int x = ox; x < std::min(width, ox + grid.block); ++x) m.at(x, y) = 1;
    }
  }
  return m;
}

double pixel_eer(std::span<const PixelFrame> frames, const BlockGrid& grid) {
  std::vector<double> pos, neg;
  for (const auto& f : frames) {
    if (f.block_scores.size() != static_cast<std::size_t>(grid.count())) {
      fail(ErrorKind::invalid_input, "pixel_eer: score grid does not match the block grid");
    }
    (f.gt.empty() ? neg : pos).push_back(critical_threshold(f, grid));
  }
  if (pos.empty() || neg.empty()) {
    fail(ErrorKind::undefined_metric, "pixel EER needs both anomalous and normal frames");
  }
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds{kNegInf};
  for (double v : pos) {
    if (std::isfinite(v)) thresholds.push_back(v);
  }
  for (double v : neg) {
    if (std::isfinite(v)) thresholds.push_back(v);
  }
  thresholds = unique_sorted(std::move(thresholds));

  std::vector<ErrorRates> sweep;
  for (double t : thresholds) {
    const double detected = static_cast<double>(count_above(pos, t));
    const double flagged = static_cast<double>(count_above(neg, t));
    sweep.push_back({flagged / static_cast<double>(neg.size()),
                     1.0 - detected / static_cast<double>(pos.size())});
  }
  return equal_error_rate(sweep);
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["frames"] = report.frames;
  j["positives"] = report.positives;
  j["auc"] = report.frame.auc;
  j["frame_eer"] = report.frame.eer;
  j["pixel_eer"] = report.pixel_eer ? nlohmann::ordered_json(*report.pixel_eer) : nullptr;
  auto roc = nlohmann::ordered_json::array();
  for (const auto& p : report.frame.roc) {
    nlohmann::ordered_json point;
    point["threshold"] = std::isfinite(p.threshold) ? nlohmann::ordered_json(p.threshold) : nullptr;
    point["fpr"] = p.fpr;
    point["tpr"] = p.tpr;
    roc.push_back(std::move(point));
  }
  j["roc"] = std::move(roc);
  return j.dump(2) + "\n";
}

std::vector<RocPoint> roc_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::format, std::string("report is not valid JSON: ") + e.what());
  }
  if (!j.contains("roc") || !j["roc"].is_array()) fail(ErrorKind::format, "report has no roc array");
  std::vector<RocPoint> out;
  for (const auto& p : j["roc"]) {
    if (!p.contains("fpr") || !p.contains("tpr") || !p["fpr"].is_number() || !p["tpr"].is_number()) {
      fail(ErrorKind::format, "roc point without numeric fpr/tpr");
    }
    RocPoint r;
    r.fpr = p["fpr"].get<double>();
    r.tpr = p["tpr"].get<double>();
    r.threshold = p.contains("threshold") && p["threshold"].is_number() ? p["threshold"].get<double>()
                                                                         : kNegInf;
    out.push_back(r);
  }
  return out;
}

std::string csv_double(double value) {
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  return format_double(value);
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc) {
  auto out = open_out(path);
  out << "fpr,tpr,threshold\n";
  for (const auto& p : roc) {
    out << csv_double(p.fpr) << ',' << csv_double(p.tpr) << ',' << csv_double(p.threshold) << '\n';
  }
  check_written(out, path);
}

void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows) {
  auto out = open_out(path);
  out << "frame_index,frame_score,active_blocks,anomalous_blocks\n";
  for (const auto& r : rows) {
    out << r.frame << ',' << csv_double(r.frame_score) << ',' << r.active_blocks << ','
        << r.anomalous_blocks << '\n';
  }
  check_written(out, path);
}

std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path) {
  std::vector<ScoreRow> rows;
  read_csv(path, {"frame_index", "frame_score", "active_blocks", "anomalous_blocks"},
           [&](const std::vector<std::string>& f, std::size_t) {
             ScoreRow r;
             r.frame = static_cast<long>(parse_int(f[0]));
             r.frame_score = parse_double(f[1]);
             r.active_blocks = static_cast<int>(parse_int(f[2]));
             r.anomalous_blocks = static_cast<int>(parse_int(f[3]));
             if (!std::isfinite(r.frame_score)) fail(ErrorKind::format, "non-finite frame_score");
             rows.push_back(r);
           });
  return rows;
}

void write_blocks_csv(const std::filesystem::path& path, std::span<const BlockRow> rows) {
  auto out = open_out(path);
  out << "frame_index,block_index,feature,score\n";
  for (const auto& r : rows) {
    out << r.frame << ',' << r.block << ',' << csv_double(r.feature) << ','
        << (r.score ? csv_double(*r.score) : std::string()) << '\n';
  }
  check_written(out, path);
}

std::vector<BlockRow> read_blocks_csv(const std::filesystem::path& path) {
  std::vector<BlockRow> rows;
  read_csv(path, {"frame_index", "block_index", "feature", "score"},
           [&](const std::vector<std::string>& f, std::size_t) {
             BlockRow r;
             r.frame = static_cast<long>(parse_int(f[0]));
             r.block = static_cast<int>(parse_int(f[1]));
             r.feature = parse_double(f[2]);
             if (!f[3].empty()) r.score = parse_double(f[3]);
             if (r.block < 0) fail(ErrorKind::format, "negative block index");
             rows.push_back(r);
           });
  return rows;
}

void write_ground_truth(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  auto out = open_out(path);
  out << "frame_index,anomalous\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << i << ',' << (labels[i] ? 1 : 0) << '\n';
  check_written(out, path);
}

std::vector<std::uint8_t> read_ground_truth(const std::filesystem::path& path) {
  std::map<long, std::uint8_t> byframe;
  read_csv(path, {"frame_index", "anomalous"}, [&](const std::vector<std::string>& f, std::size_t) {
    const long idx = static_cast<long>(parse_int(f[0]));
    const long long v = parse_int(f[1]);
    if (idx < 0) fail(ErrorKind::format, "negative frame index");
    if (v != 0 && v != 1) fail(ErrorKind::format, "anomalous must be 0 or 1");
    if (!byframe.emplace(idx, static_cast<std::uint8_t>(v)).second) {
      fail(ErrorKind::format, "duplicate frame " + std::to_string(idx));
    }
  });
  std::vector<std::uint8_t> labels;
  for (const auto& [idx, v] : byframe) {
    if (idx != static_cast<long>(labels.size())) {
      fail(ErrorKind::format, path.string() + ": frame " + std::to_string(labels.size()) + " missing");
    }
    labels.push_back(v);
  }
  return labels;
}

}  // namespace vad::eval
