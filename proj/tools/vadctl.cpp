// vadctl: calibrate, detect, eval, sweep, synth and roc over the vad library.
//
// Exit codes: 0 ok, 2 usage, 3 data or format error, 4 degenerate calibration.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vad/calibration.hpp"
#include "vad/engine.hpp"
#include "vad/error.hpp"
#include "vad/eval.hpp"
#include "vad/image_io.hpp"
#include "vad/keyvalue.hpp"
#include "vad/synth.hpp"

namespace fs = std::filesystem;
using namespace vad;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitDegenerate = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Values of every subcommand. A flag given on the command line wins over the
// same key in --config, which wins over the default.
struct Settings {
  std::string input;
  std::string out;
  std::string config;
  std::string artifact;
  std::string gt;
  std::string gt_masks;
  std::string blocks;
  std::string flow_dir;
  std::string mask_dir;
  std::string save_flow;
  std::string anomaly = "speed-change";
  int block_size = 10;
  int frames_calib = 10;
  double lambda_a = 0.01;
  double lambda_f = 0.0;
  int p_max = 1;
  int d_max = 1;
  int q_max = 1;
  int threads = 1;
  long long seed = 0;
  int frames = 100;
  int onset = 40;
  std::vector<double> lambdas{0.001, 0.005, 0.01, 0.1, 1.0};
};

class Flags {
 public:
  explicit Flags(CLI::App* app, Settings& s) : app_(app), s_(s) {
    app_->add_option("--config", s_.config, "key = value file; command-line flags take precedence");
  }

  template <typename T>
  Flags& add(const std::string& flag, const std::string& key, T& target, const std::string& help) {
    CLI::Option* opt = app_->add_option(flag, target, help);
    bindings_.push_back({opt, key, [&target](const KeyValues& kv, const std::string& k) {
                           assign(target, kv, k);
                         }});
    return *this;
  }

  void apply_config() {
    if (s_.config.empty()) return;
    if (!fs::exists(s_.config)) throw UsageError("config file not found: " + s_.config);
    const KeyValues kv = KeyValues::load(s_.config);
    for (const auto& [key, value] : kv.entries()) {
      bool known = false;
      for (const auto& b : bindings_) known = known || b.key == key;
      if (!known) throw UsageError("unknown config key '" + key + "' in " + s_.config);
    }
    for (const auto& b : bindings_) {
      if (b.option->count() == 0 && kv.contains(b.key)) b.load(kv, b.key);
    }
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::function<void(const KeyValues&, const std::string&)> load;
  };

  static void assign(std::string& t, const KeyValues& kv, const std::string& k) { t = kv.get(k); }
  static void assign(int& t, const KeyValues& kv, const std::string& k) {
    t = static_cast<int>(kv.get_int(k));
  }
  static void assign(long long& t, const KeyValues& kv, const std::string& k) { t = kv.get_int(k); }
  static void assign(double& t, const KeyValues& kv, const std::string& k) { t = kv.get_double(k); }
  static void assign(std::vector<double>& t, const KeyValues& kv, const std::string& k) {
    t = kv.get_doubles(k);
  }

  CLI::App* app_;
  Settings& s_;
  std::vector<Binding> bindings_;
};

void require_path(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing ") + what);
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

void require_value(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing ") + what);
}

detect::DetectorConfig detector_config(const Settings& s) {
  detect::DetectorConfig c;
  c.block_size = s.block_size;
  c.calibration_frames = s.frames_calib;
  c.lambda_a = s.lambda_a;
  c.lambda_f = s.lambda_f;
  c.bounds = {s.p_max, s.d_max, s.q_max};
  c.threads = s.threads;
  return c;
}

EngineOptions engine_options(const Settings& s) {
  EngineOptions o;
  o.config = detector_config(s);
  if (!s.flow_dir.empty()) {
    require_path(s.flow_dir, "flow directory");
    o.flow_dir = s.flow_dir;
  }
  if (!s.mask_dir.empty()) {
    require_path(s.mask_dir, "mask directory");
    o.mask_dir = s.mask_dir;
  }
  if (!s.save_flow.empty()) o.save_flow_dir = s.save_flow;
  return o;
}

void print_model(const calib::Artifact& a) {
  const auto& m = a.calibration.theta;
  std::printf("order (p,d,q) = (%d,%d,%d)\n", m.order.p, m.order.d, m.order.q);
  for (std::size_t i = 0; i < m.ar.size(); ++i) std::printf("a%zu = %.6g\n", i + 1, m.ar[i]);
  for (std::size_t j = 0; j < m.ma.size(); ++j) std::printf("b%zu = %.6g\n", j + 1, m.ma[j]);
  std::printf("intercept = %.6g\nsigma2 = %.6g\nlambda_f = %.6g\n", m.intercept, m.noise_variance,
              a.calibration.lambda_f);
}

int cmd_calibrate(const Settings& s) {
  require_path(s.input, "input video");
  require_value(s.out, "--out artifact path");
  Engine engine(engine_options(s));
  auto source = io::open_video(s.input);
  while (!engine.calibrated()) {
    auto frame = source->next();
    if (!frame) {
      engine.finish();  // throws insufficient_history
      break;
    }
    engine.push(std::move(*frame));
  }
  if (fs::path(s.out).has_parent_path()) fs::create_directories(fs::path(s.out).parent_path());
  calib::save_artifact(s.out, engine.artifact());
  print_model(engine.artifact());
  return 0;
}

Mask block_level_map(const detect::AnomalyMap& m) {
  Mask out(m.cols, m.rows);
  out.bits = m.anomalous;
  return out;
}

Mask pixel_level_map(const detect::AnomalyMap& m, const BlockGrid& grid, int width, int height) {
  Mask out(width, height);
  for (int b = 0; b < grid.count(); ++b) {
    if (!m.anomalous[static_cast<std::size_t>(b)]) continue;
    for (int y = grid.origin_y(b); y < grid.origin_y(b) + grid.block; ++y) {
      for (int x = grid.origin_x(b); x < grid.origin_x(b) + grid.block; ++x) out.at(x, y) = 1;
    }
  }
  return out;
}

void append_block_rows(const detect::FrameFeatures& f, const detect::AnomalyMap* map,
                       std::vector<eval::BlockRow>& rows) {
  for (std::size_t i = 0; i < f.blocks.size(); ++i) {
    eval::BlockRow r;
    r.frame = f.frame;
    r.block = f.blocks[i];
    r.feature = f.features[i];
    if (map) {
      const double sc = map->scores[static_cast<std::size_t>(f.blocks[i])];
      if (sc >= 0.0) r.score = sc;
    }
    rows.push_back(r);
  }
}

int cmd_detect(const Settings& s) {
  require_path(s.input, "input video");
  require_value(s.out, "--out directory");
  EngineOptions options = engine_options(s);
  if (!s.artifact.empty()) {
    require_path(s.artifact, "calibration artifact");
    options.artifact = calib::load_artifact(s.artifact);
  }
  const fs::path out(s.out);
  fs::create_directories(out / "maps");

  Engine engine(std::move(options));
  auto source = io::open_video(s.input);
  std::vector<eval::ScoreRow> scores;
  std::vector<eval::BlockRow> blocks;
  int width = 0, height = 0;
  BlockGrid grid;

  auto consume = [&](std::optional<FrameResult>& r) {
    if (!r) return;
    const auto& m = r->map;
    scores.push_back({m.frame, m.frame_score, m.active_blocks, m.anomalous_blocks});
    append_block_rows(r->features, &m, blocks);
    io::write_mask(out / "maps" / io::numbered_name("block", m.frame, ".pgm"), block_level_map(m));
    Mask pixels = pixel_level_map(m, grid, width, height);
    io::write_mask(out / "maps" / io::numbered_name("pixel", m.frame, ".pgm"), pixels);
    // Same blocks, cut down to the foreground pixels inside them.
    for (std::size_t i = 0; i < pixels.bits.size(); ++i) pixels.bits[i] &= r->foreground.bits[i];
    io::write_mask(out / "maps" / io::numbered_name("fgpixel", m.frame, ".pgm"), pixels);
  };

  const auto t0 = std::chrono::steady_clock::now();
  long frames = 0;
  while (auto frame = source->next()) {
    if (frames == 0) {
      width = frame->width;
      height = frame->height;
      grid = BlockGrid(width, height, engine.config().block_size);
    }
    ++frames;
    auto r = engine.push(std::move(*frame));
    consume(r);
  }
  auto last = engine.finish();
  consume(last);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Seed rows first: sweep replays them before deciding anything.
  std::vector<eval::BlockRow> all;
  for (const auto& f : engine.seed_features()) append_block_rows(f, nullptr, all);
  all.insert(all.end(), blocks.begin(), blocks.end());
  eval::write_scores_csv(out / "scores.csv", scores);
  eval::write_blocks_csv(out / "blocks.csv", all);
  calib::save_artifact(out / "artifact.txt", engine.artifact());
  std::printf("frames %ld, %.1f frames/second\n", frames, secs > 0.0 ? frames / secs : 0.0);
  return 0;
}

std::vector<double> frame_scores_for(const std::vector<eval::ScoreRow>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.frame_score);
  return out;
}

std::vector<std::uint8_t> labels_for(const std::vector<eval::ScoreRow>& rows,
                                     const std::vector<std::uint8_t>& gt, const std::string& gt_path) {
  std::vector<std::uint8_t> out;
  for (const auto& r : rows) {
    if (r.frame < 0 || static_cast<std::size_t>(r.frame) >= gt.size()) {
      fail(ErrorKind::invalid_input,
           gt_path + " has no label for frame " + std::to_string(r.frame));
    }
    out.push_back(gt[static_cast<std::size_t>(r.frame)]);
  }
  return out;
}

// Block scores per frame, -1 where no decision was recorded.
std::map<long, std::vector<double>> block_scores_by_frame(const std::vector<eval::BlockRow>& rows,
                                                          int blocks) {
  std::map<long, std::vector<double>> out;
  for (const auto& r : rows) {
    if (r.block < 0 || r.block >= blocks) {
      fail(ErrorKind::invalid_input, "block index " + std::to_string(r.block) + " outside the grid");
    }
    auto& v = out[r.frame];
    if (v.empty()) v.assign(static_cast<std::size_t>(blocks), -1.0);
    if (r.score) v[static_cast<std::size_t>(r.block)] = *r.score;
  }
  return out;
}

int cmd_eval(const Settings& s) {
  require_path(s.input, "scores CSV");
  require_path(s.gt, "ground truth CSV");
  require_value(s.out, "--out report path");
  const auto rows = eval::read_scores_csv(s.input);
  const auto gt = eval::read_ground_truth(s.gt);
  const auto labels = labels_for(rows, gt, s.gt);

  eval::EvalReport report;
  report.frame = eval::frame_metrics(frame_scores_for(rows), labels);
  report.frames = rows.size();
  for (auto l : labels) report.positives += l;

  if (!s.gt_masks.empty()) {
    require_path(s.gt_masks, "ground-truth mask directory");
    const std::string blocks_path =
        s.blocks.empty() ? (fs::path(s.input).parent_path() / "blocks.csv").string() : s.blocks;
    require_path(blocks_path, "blocks CSV");
    const auto mask_files = io::list_frames(s.gt_masks);
    if (mask_files.empty()) fail(ErrorKind::invalid_input, "no masks in " + s.gt_masks);
    const Mask first = io::read_mask(mask_files.front());
    const BlockGrid grid(first.width, first.height, s.block_size);
    const auto by_frame = block_scores_by_frame(eval::read_blocks_csv(blocks_path), grid.count());
    std::vector<eval::PixelFrame> frames;
    for (const auto& r : rows) {
      if (static_cast<std::size_t>(r.frame) >= mask_files.size()) {
        fail(ErrorKind::invalid_input, "no ground-truth mask for frame " + std::to_string(r.frame));
      }
      eval::PixelFrame pf;
      auto it = by_frame.find(r.frame);
      pf.block_scores = it != by_frame.end() ? it->second
                                             : std::vector<double>(static_cast<std::size_t>(grid.count()), -1.0);
      pf.gt = io::read_mask(mask_files[static_cast<std::size_t>(r.frame)]);
      if (pf.gt.width != first.width || pf.gt.height != first.height) {
        fail(ErrorKind::invalid_input, "ground-truth masks differ in size");
      }
      frames.push_back(std::move(pf));
    }
    report.pixel_eer = eval::pixel_eer(frames, grid);
  }

  if (fs::path(s.out).has_parent_path()) fs::create_directories(fs::path(s.out).parent_path());
  std::ofstream f(s.out, std::ios::binary);
  f << eval::to_json(report);
  if (!f) fail(ErrorKind::invalid_input, "cannot write " + s.out);
  std::printf("frames %zu, positives %zu, auc %.4f, frame eer %.4f", report.frames, report.positives,
              report.frame.auc, report.frame.eer);
  if (report.pixel_eer) std::printf(", pixel eer %.4f", *report.pixel_eer);
  std::printf("\n");
  return 0;
}

// Replays recorded features through the decision stage at one lambda_A.
std::vector<detect::AnomalyMap> replay(const calib::Artifact& artifact,
                                       const std::vector<eval::ScoreRow>& frames,
                                       const std::vector<eval::BlockRow>& rows, double lambda_a,
                                       int threads) {
  detect::DetectorConfig config;
  config.block_size = artifact.block_size;
  config.calibration_frames = artifact.frames;
  config.lambda_f = artifact.calibration.lambda_f;
  config.lambda_a = lambda_a;
  config.bounds = artifact.bounds;
  config.threads = threads;
  const BlockGrid grid(artifact.width, artifact.height, artifact.block_size);
  detect::DecisionStage stage(config, grid, artifact.calibration.theta);

  std::map<long, detect::FrameFeatures> features;
  for (const auto& r : rows) {
    auto& f = features[r.frame];
    f.frame = r.frame;
    f.blocks.push_back(r.block);
    f.features.push_back(r.feature);
  }
  for (const auto& [frame, f] : features) {
    if (frame < artifact.frames) stage.seed(f);
  }
  std::vector<detect::AnomalyMap> maps;
  for (const auto& row : frames) {
    auto it = features.find(row.frame);
    detect::FrameFeatures f;
    f.frame = row.frame;
    maps.push_back(stage.decide(it != features.end() ? it->second : f));
  }
  return maps;
}

int cmd_sweep(const Settings& s) {
  require_path(s.input, "detect output directory");
  require_path(s.gt, "ground truth CSV");
  require_value(s.out, "--out table path");
  const fs::path dir(s.input);
  require_path((dir / "artifact.txt").string(), "artifact.txt in the detect output");
  const auto artifact = calib::load_artifact(dir / "artifact.txt");
  const auto frames = eval::read_scores_csv(dir / "scores.csv");
  const auto rows = eval::read_blocks_csv(dir / "blocks.csv");
  const auto labels = labels_for(frames, eval::read_ground_truth(s.gt), s.gt);
  if (s.lambdas.empty()) throw UsageError("empty lambda list");

  std::ostringstream table;
  table << "lambda_a,auc,frame_eer,anomalous_blocks\n";
  for (double la : s.lambdas) {
    if (!(la > 0.0)) throw UsageError("lambda values must be positive");
    const auto maps = replay(artifact, frames, rows, la, s.threads);
    std::vector<double> scores;
    long anomalous = 0;
    for (const auto& m : maps) {
      scores.push_back(m.frame_score);
      anomalous += m.anomalous_blocks;
    }
    const auto metrics = eval::frame_metrics(scores, labels);
    table << eval::csv_double(la) << ',' << eval::csv_double(metrics.auc) << ','
          << eval::csv_double(metrics.eer) << ',' << anomalous << '\n';
    std::printf("lambda_a %-6g auc %.4f eer %.4f anomalous blocks %ld\n", la, metrics.auc,
                metrics.eer, anomalous);
  }
  if (fs::path(s.out).has_parent_path()) fs::create_directories(fs::path(s.out).parent_path());
  std::ofstream f(s.out, std::ios::binary);
  f << table.str();
  if (!f) fail(ErrorKind::invalid_input, "cannot write " + s.out);
  return 0;
}

int cmd_synth(const Settings& s) {
  require_value(s.out, "--out directory");
  synth::Scenario sc;
  if (!s.input.empty()) {
    require_path(s.input, "scenario file");
    sc = synth::Scenario::from_key_values(KeyValues::load(s.input));
  } else {
    const auto type = synth::parse_anomaly_type(s.anomaly);
    sc = synth::preset(type, static_cast<std::uint64_t>(s.seed), s.frames, s.onset);
  }
  sc.validate(s.frames_calib);
  const auto video = synth::gen_video(sc);
  synth::write_dataset(s.out, sc, video);
  std::printf("wrote %zu frames (%s, onset %d) to %s\n", video.frames.size(),
              synth::to_string(sc.anomaly), sc.onset, s.out.c_str());
  return 0;
}

int cmd_roc(const Settings& s) {
  require_path(s.input, "JSON report");
  require_value(s.out, "--out CSV path");
  std::ifstream in(s.input, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto roc = eval::roc_from_json(text);
  if (fs::path(s.out).has_parent_path()) fs::create_directories(fs::path(s.out).parent_path());
  eval::write_roc_csv(s.out, roc);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block-wise ARIMA video anomaly detection"};
  app.require_subcommand(1);
  Settings s;

  auto* calibrate = app.add_subcommand("calibrate", "fit the initial model and lambda_f");
  auto* detect = app.add_subcommand("detect", "run the detector over a video");
  auto* evaluate = app.add_subcommand("eval", "frame- and pixel-level metrics of a detect run");
  auto* sweep = app.add_subcommand("sweep", "re-threshold a detect run over lambda_A values");
  auto* synthesize = app.add_subcommand("synth", "write a synthetic dataset");
  auto* roc = app.add_subcommand("roc", "ROC CSV from an eval report");

  std::vector<std::pair<CLI::App*, Flags>> flags;
  auto video_flags = [&](CLI::App* cmd) {
    Flags f(cmd, s);
    f.add("--input", "input", s.input, "directory of numbered PGM/PNG frames, or a Y4M file")
        .add("--out", "out", s.out, "output path")
        .add("--block-size", "block_size", s.block_size, "block side in pixels")
        .add("--frames-calib", "frames_calib", s.frames_calib, "calibration frames F")
        .add("--lambda-f", "lambda_f", s.lambda_f, "feature gate; 0 = from calibration")
        .add("--flow-dir", "flow_dir", s.flow_dir, "read flow_NNNNNN.fsfl files instead of computing flow")
        .add("--mask-dir", "mask_dir", s.mask_dir, "read foreground masks instead of segmenting")
        .add("--p-max", "p_max", s.p_max, "largest AR order")
        .add("--d-max", "d_max", s.d_max, "largest differencing order")
        .add("--q-max", "q_max", s.q_max, "largest MA order")
        .add("--seed", "seed", s.seed, "unused by the detector; accepted for config symmetry");
    return f;
  };
  {
    Flags f = video_flags(calibrate);
    flags.emplace_back(calibrate, std::move(f));
  }
  {
    Flags f = video_flags(detect);
    f.add("--lambda-a", "lambda_a", s.lambda_a, "anomaly threshold on |s - s_hat|")
        .add("--threads", "threads", s.threads, "worker threads for block refits")
        .add("--artifact", "artifact", s.artifact, "calibration artifact to reuse")
        .add("--save-flow", "save_flow", s.save_flow, "write computed flow fields here");
    flags.emplace_back(detect, std::move(f));
  }
  {
    Flags f(evaluate, s);
    f.add("--input", "input", s.input, "scores.csv from detect")
        .add("--gt", "gt", s.gt, "ground truth CSV (frame_index,anomalous)")
        .add("--out", "out", s.out, "JSON report path")
        .add("--gt-masks", "gt_masks", s.gt_masks, "ground-truth mask directory; enables pixel EER")
        .add("--blocks", "blocks", s.blocks, "blocks.csv (default: next to scores.csv)")
        .add("--block-size", "block_size", s.block_size, "block side used by detect");
    flags.emplace_back(evaluate, std::move(f));
  }
  {
    Flags f(sweep, s);
    f.add("--input", "input", s.input, "detect output directory")
        .add("--gt", "gt", s.gt, "ground truth CSV")
        .add("--out", "out", s.out, "table CSV path")
        .add("--lambda-a", "lambda_a_list", s.lambdas, "lambda_A values")
        .add("--threads", "threads", s.threads, "worker threads for block refits");
    flags.emplace_back(sweep, std::move(f));
  }
  {
    Flags f(synthesize, s);
    f.add("--input", "input", s.input, "scenario file (key = value); overrides the preset flags")
        .add("--out", "out", s.out, "dataset directory")
        .add("--anomaly", "anomaly", s.anomaly, "none, speed-change, new-object or direction-change")
        .add("--seed", "seed", s.seed, "preset seed")
        .add("--frames", "frames", s.frames, "video length")
        .add("--onset", "onset", s.onset, "first anomalous frame")
        .add("--frames-calib", "frames_calib", s.frames_calib, "calibration frames the onset must follow");
    flags.emplace_back(synthesize, std::move(f));
  }
  {
    Flags f(roc, s);
    f.add("--input", "input", s.input, "JSON report from eval").add("--out", "out", s.out, "ROC CSV path");
    flags.emplace_back(roc, std::move(f));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    for (auto& [cmd, f] : flags) {
      if (cmd->parsed()) f.apply_config();
    }
    if (calibrate->parsed()) return cmd_calibrate(s);
    if (detect->parsed()) return cmd_detect(s);
    if (evaluate->parsed()) return cmd_eval(s);
    if (sweep->parsed()) return cmd_sweep(s);
    if (synthesize->parsed()) return cmd_synth(s);
    if (roc->parsed()) return cmd_roc(s);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << to_string(e.kind()) << ": " << e.what() << '\n';
    return e.kind() == ErrorKind::degenerate_calibration ? kExitDegenerate : kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "filesystem: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
