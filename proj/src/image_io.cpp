#include "vad/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vad/error.hpp"

namespace vad {

void FrameBuffer::validate() const {
  if (width <= 0 || height <= 0 ||
      data.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    fail(ErrorKind::invalid_input, "frame dimensions do not match pixel count");
  }
  for (float v : data) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      fail(ErrorKind::invalid_input, "frame luminance outside [0, 1]");
    }
  }
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

namespace io {
namespace fs = std::filesystem;
namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::invalid_input, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Netpbm header reader: whitespace-separated tokens with '#' comments.
struct NetpbmHeader {
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 1;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_header(const std::string& bytes, const fs::path& path, bool has_maxval) {
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) {
      fail(ErrorKind::format, path.string() + ": truncated header at byte " + std::to_string(pos));
    }
    return bytes.substr(start, pos - start);
  };
  auto number = [&]() {
    const std::size_t at = pos;
    const std::string t = token();
    try {
      return std::stoi(t);
    } catch (...) {
      fail(ErrorKind::format, path.string() + ": bad header field at byte " + std::to_string(at));
    }
  };

  NetpbmHeader h;
  h.magic = token();
  if (h.magic == "P4" || h.magic == "P1") has_maxval = false;
  h.width = number();
  h.height = number();
  if (has_maxval) h.maxval = number();
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    fail(ErrorKind::format, path.string() + ": invalid dimensions or maxval");
  }
  // Exactly one whitespace byte separates the header from binary data.
  h.data_offset = pos + 1;
  return h;
}

std::vector<float> decode_gray(const std::string& bytes, const NetpbmHeader& h,
                               const fs::path& path) {
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  std::vector<float> out(n);
  const float scale = 1.0f / static_cast<float>(h.maxval);
  if (h.magic == "P5") {
    const std::size_t bps = h.maxval > 255 ? 2 : 1;
    if (bytes.size() < h.data_offset + n * bps) {
      fail(ErrorKind::format, path.string() + ": truncated pixel data at byte " +
                                  std::to_string(bytes.size()));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = bps == 2 ? (p[2 * i] << 8) | p[2 * i + 1] : p[i];
      out[i] = std::min(1.0f, static_cast<float>(v) * scale);
    }
  } else if (h.magic == "P2") {
    std::istringstream in(bytes.substr(h.data_offset - 1));
    for (std::size_t i = 0; i < n; ++i) {
      int v = 0;
      if (!(in >> v)) fail(ErrorKind::format, path.string() + ": truncated ASCII pixel data");
      out[i] = std::clamp(static_cast<float>(v) * scale, 0.0f, 1.0f);
    }
  } else {
    fail(ErrorKind::format, path.string() + ": unsupported magic " + h.magic);
  }
  return out;
}

}  // namespace

FrameBuffer read_pgm(const fs::path& path) {
  const std::string bytes = slurp(path);
  const NetpbmHeader h = parse_header(bytes, path, true);
  FrameBuffer f;
  f.width = h.width;
  f.height = h.height;
  f.data = decode_gray(bytes, h, path);
  return f;
}

void write_pgm(const fs::path& path, const FrameBuffer& frame) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + path.string());
  out << "P5\n" << frame.width << ' ' << frame.height << "\n255\n";
  std::string row(frame.data.size(), '\0');
  for (std::size_t i = 0; i < frame.data.size(); ++i) {
    const float v = std::clamp(frame.data[i], 0.0f, 1.0f);
    row[i] = static_cast<char>(static_cast<unsigned char>(v * 255.0f + 0.5f));
  }
  out.write(row.data(), static_cast<std::streamsize>(row.size()));
}

Mask read_mask(const fs::path& path) {
  const std::string bytes = slurp(path);
  const NetpbmHeader h = parse_header(bytes, path, true);
  Mask m(h.width, h.height);
  if (h.magic == "P4") {
    const std::size_t stride = (static_cast<std::size_t>(h.width) + 7) / 8;
    if (bytes.size() < h.data_offset + stride * h.height) {
      fail(ErrorKind::format, path.string() + ": truncated bitmap at byte " +
                                  std::to_string(bytes.size()));
    }
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
    for (int y = 0; y < h.height; ++y)
      for (int x = 0; x < h.width; ++x)
        m.at(x, y) = (p[y * stride + x / 8] >> (7 - x % 8)) & 1u;
  } else {
    const std::vector<float> gray = decode_gray(bytes, h, path);
    for (std::size_t i = 0; i < gray.size(); ++i) m.bits[i] = gray[i] > 0.0f ? 1 : 0;
  }
  return m;
}

void write_mask(const fs::path& path, const Mask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + path.string());
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::string row(mask.bits.size(), '\0');
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    row[i] = static_cast<char>(mask.bits[i] ? 255 : 0);
  }
  out.write(row.data(), static_cast<std::streamsize>(row.size()));
}

FrameBuffer read_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    fail(ErrorKind::format, path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_LINEAR_Y;  // 16-bit linear luminance
  std::vector<png_uint_16> buffer(PNG_IMAGE_SIZE(image) / sizeof(png_uint_16));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::format, path.string() + ": " + msg);
  }
  FrameBuffer f(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = buffer[i] / 65535.0f;
  return f;
}

FrameBuffer read_frame(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  fail(ErrorKind::format, path.string() + ": unsupported frame extension");
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::invalid_input, dir.string() + " is not a directory");
  struct Entry {
    long long number;
    std::string name;
    fs::path path;
  };
  std::vector<Entry> entries;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext != ".pgm" && ext != ".png") continue;
    const std::string stem = e.path().stem().string();
    long long number = -1;
    const auto last = stem.find_last_of("0123456789");
    if (last != std::string::npos) {
      auto first = last;
      while (first > 0 && std::isdigit(static_cast<unsigned char>(stem[first - 1]))) --first;
      number = std::stoll(stem.substr(first, last - first + 1));
    }
    entries.push_back({number, e.path().filename().string(), e.path()});
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.number, a.name) < std::tie(b.number, b.name);
  });
  std::vector<fs::path> out;
  out.reserve(entries.size());
  for (auto& e : entries) out.push_back(std::move(e.path));
  return out;
}

std::string numbered_name(const std::string& stem, long index, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06ld", index);
  return stem + "_" + buf + ext;
}

namespace {

class DirectorySource final : public FrameSource {
 public:
  explicit DirectorySource(std::vector<fs::path> files) : files_(std::move(files)) {}

  std::optional<FrameBuffer> next() override {
    if (pos_ >= files_.size()) return std::nullopt;
    return read_frame(files_[pos_++]);
  }

 private:
  std::vector<fs::path> files_;
  std::size_t pos_ = 0;
};

class Y4mSource final : public FrameSource {
 public:
  explicit Y4mSource(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) fail(ErrorKind::invalid_input, "cannot open " + path.string());
    std::string header;
    std::getline(in_, header);
    std::istringstream tokens(header);
    std::string tok;
    tokens >> tok;
    if (tok != "YUV4MPEG2") fail(ErrorKind::format, path.string() + ": bad Y4M magic at byte 0");
    std::string colorspace = "420jpeg";
    while (tokens >> tok) {
      if (tok[0] == 'W') width_ = std::stoi(tok.substr(1));
      if (tok[0] == 'H') height_ = std::stoi(tok.substr(1));
      if (tok[0] == 'C') colorspace = tok.substr(1);
    }
    if (width_ <= 0 || height_ <= 0) fail(ErrorKind::format, path.string() + ": missing W/H");
    const std::size_t cw = (static_cast<std::size_t>(width_) + 1) / 2;
    const std::size_t ch = (static_cast<std::size_t>(height_) + 1) / 2;
    if (colorspace.rfind("420", 0) == 0 && colorspace.find('p') == std::string::npos) {
      chroma_bytes_ = 2 * cw * ch;
    } else if (colorspace == "422") {
      chroma_bytes_ = 2 * cw * static_cast<std::size_t>(height_);
    } else if (colorspace == "444") {
      chroma_bytes_ = 2 * static_cast<std::size_t>(width_) * height_;
    } else if (colorspace == "mono") {
      chroma_bytes_ = 0;
    } else {
      fail(ErrorKind::format, path.string() + ": unsupported Y4M colorspace " + colorspace);
    }
  }

  std::optional<FrameBuffer> next() override {
    std::string tag;
    if (!std::getline(in_, tag)) return std::nullopt;
    if (tag.rfind("FRAME", 0) != 0) {
      fail(ErrorKind::format, path_.string() + ": expected FRAME at byte " +
                                  std::to_string(static_cast<long long>(in_.tellg())));
    }
    const std::size_t n = static_cast<std::size_t>(width_) * height_;
    std::string luma(n, '\0');
    in_.read(luma.data(), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      fail(ErrorKind::format, path_.string() + ": truncated frame");
    }
    in_.ignore(static_cast<std::streamsize>(chroma_bytes_));
    FrameBuffer f(width_, height_);
    for (std::size_t i = 0; i < n; ++i) {
      f.data[i] = static_cast<unsigned char>(luma[i]) / 255.0f;
    }
    return f;
  }

 private:
  fs::path path_;
  std::ifstream in_;
  int width_ = 0;
  int height_ = 0;
  std::size_t chroma_bytes_ = 0;
};

}  // namespace

std::unique_ptr<FrameSource> open_video(const fs::path& path) {
  if (fs::is_directory(path)) {
    auto files = list_frames(path);
    if (files.empty()) fail(ErrorKind::invalid_input, path.string() + ": no frames found");
    return std::make_unique<DirectorySource>(std::move(files));
  }
  if (!fs::exists(path)) fail(ErrorKind::invalid_input, path.string() + " does not exist");
  return std::make_unique<Y4mSource>(path);
}

}  // namespace io
}  // namespace vad
