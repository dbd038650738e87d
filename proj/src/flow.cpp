#include "vad/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "vad/error.hpp"

namespace vad::flow {
namespace {

struct Plane {
  int w = 0;
  int h = 0;
  std::vector<float> px;

  Plane() = default;
  Plane(int width, int height) : w(width), h(height), px(static_cast<std::size_t>(width) * height) {}
  float at(int x, int y) const { return px[static_cast<std::size_t>(y) * w + x]; }
  float& at(int x, int y) { return px[static_cast<std::size_t>(y) * w + x]; }
};

// Separable [1 4 6 4 1] / 16 blur with clamped borders.
Plane smooth(const Plane& src) {
  static constexpr float k[5] = {1.0f / 16, 4.0f / 16, 6.0f / 16, 4.0f / 16, 1.0f / 16};
  Plane tmp(src.w, src.h), dst(src.w, src.h);
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * src.at(std::clamp(x + i, 0, src.w - 1), y);
      tmp.at(x, y) = acc;
    }
  }
  for (int y = 0; y < src.h; ++y) {
    for (int x = 0; x < src.w; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(x, std::clamp(y + i, 0, src.h - 1));
      dst.at(x, y) = acc;
    }
  }
  return dst;
}

// Level k+1 samples the (already smoothed) level k at even coordinates
// after one more blur, so pixel x there sits at 2x below.
Plane downsample(const Plane& src) {
  const Plane blurred = smooth(src);
  Plane dst((src.w + 1) / 2, (src.h + 1) / 2);
  for (int y = 0; y < dst.h; ++y) {
    for (int x = 0; x < dst.w; ++x) dst.at(x, y) = blurred.at(2 * x, 2 * y);
  }
  return dst;
}

float bilinear(const Plane& p, float x, float y) {
  x = std::clamp(x, 0.0f, static_cast<float>(p.w - 1));
  y = std::clamp(y, 0.0f, static_cast<float>(p.h - 1));
  const int x0 = std::min(static_cast<int>(x), p.w - 2 < 0 ? 0 : p.w - 2);
  const int y0 = std::min(static_cast<int>(y), p.h - 2 < 0 ? 0 : p.h - 2);
  const int x1 = std::min(x0 + 1, p.w - 1);
  const int y1 = std::min(y0 + 1, p.h - 1);
  const float fx = x - static_cast<float>(x0);
  const float fy = y - static_cast<float>(y0);
  const float top = p.at(x0, y0) + fx * (p.at(x1, y0) - p.at(x0, y0));
  const float bot = p.at(x0, y1) + fx * (p.at(x1, y1) - p.at(x0, y1));
  return top + fy * (bot - top);
}

// Summed-area table with window sums clipped to the image.
class BoxSum {
 public:
  BoxSum(int w, int h) : w_(w), h_(h), table_(static_cast<std::size_t>(w + 1) * (h + 1), 0.0) {}

  template <class F>
  void build(F&& value) {
    for (int y = 0; y < h_; ++y) {
      double row = 0.0;
      for (int x = 0; x < w_; ++x) {
        row += value(static_cast<std::size_t>(y) * w_ + x);
        cell(x + 1, y + 1) = cell(x + 1, y) + row;
      }
    }
  }

  double window(int x, int y, int r) const {
    const int x0 = std::max(0, x - r), x1 = std::min(w_, x + r + 1);
    const int y0 = std::max(0, y - r), y1 = std::min(h_, y + r + 1);
    return cell(x1, y1) - cell(x0, y1) - cell(x1, y0) + cell(x0, y0);
  }

  // Pixels inside the clipped window.
  int area(int x, int y, int r) const {
    return (std::min(w_, x + r + 1) - std::max(0, x - r)) *
           (std::min(h_, y + r + 1) - std::max(0, y - r));
  }

 private:
  double& cell(int x, int y) { return table_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  double cell(int x, int y) const { return table_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }

  int w_, h_;
  std::vector<double> table_;
};

void gradients(const Plane& p, std::vector<float>& gx, std::vector<float>& gy) {
  gx.assign(p.px.size(), 0.0f);
  gy.assign(p.px.size(), 0.0f);
  for (int y = 0; y < p.h; ++y) {
    const int ym = std::max(0, y - 1), yp = std::min(p.h - 1, y + 1);
    for (int x = 0; x < p.w; ++x) {
      const int xm = std::max(0, x - 1), xp = std::min(p.w - 1, x + 1);
      const std::size_t i = static_cast<std::size_t>(y) * p.w + x;
      gx[i] = xp > xm ? (p.at(xp, y) - p.at(xm, y)) / static_cast<float>(xp - xm) : 0.0f;
      gy[i] = yp > ym ? (p.at(x, yp) - p.at(x, ym)) / static_cast<float>(yp - ym) : 0.0f;
    }
  }
}

void refine_level(const Plane& prev, const Plane& next, Plane& u, Plane& v,
                  const FlowParams& params) {
  const int w = prev.w, h = prev.h, r = params.window / 2;
  const std::size_t n = prev.px.size();
  std::vector<float> gx, gy;
  gradients(prev, gx, gy);

  BoxSum sxx(w, h), sxy(w, h), syy(w, h);
  sxx.build([&](std::size_t i) { return double(gx[i]) * gx[i]; });
  sxy.build([&](std::size_t i) { return double(gx[i]) * gy[i]; });
  syy.build([&](std::size_t i) { return double(gy[i]) * gy[i]; });

  // Per-pixel structure tensor (window sums). The eigenvalue test uses the
  // window mean so the threshold does not depend on the window size.
  std::vector<double> a(n), b(n), c(n);
  std::vector<std::uint8_t> degenerate(n, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      a[i] = sxx.window(x, y, r);
      b[i] = sxy.window(x, y, r);
      c[i] = syy.window(x, y, r);
      const double half_trace = 0.5 * (a[i] + c[i]);
      const double disc = std::sqrt(0.25 * (a[i] - c[i]) * (a[i] - c[i]) + b[i] * b[i]);
      if (half_trace - disc < params.min_eigenvalue * sxx.area(x, y, r)) {
        degenerate[i] = 1;
        u.px[i] = 0.0f;
        v.px[i] = 0.0f;
      }
    }
  }

  std::vector<float> it(n);
  BoxSum bx(w, h), by(w, h);
  const float max_step = static_cast<float>(std::max(1, r));
  for (int iter = 0; iter < params.iterations; ++iter) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        const float warped = bilinear(next, static_cast<float>(x) + u.px[i],
                                      static_cast<float>(y) + v.px[i]);
        it[i] = warped - prev.px[i];
      }
    }
    bx.build([&](std::size_t i) { return double(gx[i]) * it[i]; });
    by.build([&](std::size_t i) { return double(gy[i]) * it[i]; });
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (degenerate[i]) continue;
        const double rx = bx.window(x, y, r), ry = by.window(x, y, r);
        const double det = a[i] * c[i] - b[i] * b[i];
        if (!(std::abs(det) > 0.0)) continue;
        float du = static_cast<float>((-c[i] * rx + b[i] * ry) / det);
        float dv = static_cast<float>((b[i] * rx - a[i] * ry) / det);
        const float len = std::hypot(du, dv);
        if (len > max_step) {
          du *= max_step / len;
          dv *= max_step / len;
        }
        u.px[i] += du;
        v.px[i] += dv;
      }
    }
  }
}

Plane upsample_flow(const Plane& coarse, int w, int h) {
  Plane fine(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      fine.at(x, y) = 2.0f * bilinear(coarse, 0.5f * static_cast<float>(x), 0.5f * static_cast<float>(y));
    }
  }
  return fine;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

FlowField compute_flow(const FrameBuffer& prev, const FrameBuffer& next,
                       const FlowParams& params) {
  if (!same_shape(prev, next)) {
    fail(ErrorKind::invalid_input, "compute_flow: frame dimensions differ");
  }
  if (params.levels < 1 || params.iterations < 0 || params.window < 3 ||
      params.window % 2 == 0) {
    fail(ErrorKind::invalid_input, "compute_flow: invalid parameters");
  }
  if (prev.width <= 0 || prev.height <= 0 ||
      prev.data.size() != static_cast<std::size_t>(prev.width) * prev.height ||
      next.data.size() != prev.data.size()) {
    fail(ErrorKind::invalid_input, "compute_flow: malformed frame");
  }

  std::vector<Plane> p0, p1;
  // The finest level is pre-smoothed too, which tames pixel noise in the
  // gradients and the temporal difference.
  Plane base(prev.width, prev.height);
  base.px = prev.data;
  p0.push_back(smooth(base));
  base.px = next.data;
  p1.push_back(smooth(base));
  while (static_cast<int>(p0.size()) < params.levels && p0.back().w / 2 >= params.window &&
         p0.back().h / 2 >= params.window) {
    p0.push_back(downsample(p0.back()));
    p1.push_back(downsample(p1.back()));
  }

  Plane u(p0.back().w, p0.back().h), v(p0.back().w, p0.back().h);
  for (int level = static_cast<int>(p0.size()) - 1; level >= 0; --level) {
    const Plane& a = p0[static_cast<std::size_t>(level)];
    if (u.w != a.w || u.h != a.h) {
      u = upsample_flow(u, a.w, a.h);
      v = upsample_flow(v, a.w, a.h);
    }
    refine_level(a, p1[static_cast<std::size_t>(level)], u, v, params);
  }

  FlowField out(prev.width, prev.height);
  out.u = std::move(u.px);
  out.v = std::move(v.px);
  return out;
}

MagnitudeField magnitude(const FlowField& field) {
  MagnitudeField m(field.width, field.height);
  for (std::size_t i = 0; i < m.mag.size(); ++i) {
    m.mag[i] = std::sqrt(field.u[i] * field.u[i] + field.v[i] * field.v[i]);
  }
  return m;
}

void write_flow(const std::filesystem::path& path, const FlowField& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::invalid_input, "cannot write " + path.string());
  out.write("FSFL", 4);
  put_u32(out, static_cast<std::uint32_t>(field.width));
  put_u32(out, static_cast<std::uint32_t>(field.height));
  for (const auto* plane : {&field.u, &field.v}) {
    for (float f : *plane) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  if (!out) fail(ErrorKind::invalid_input, "write failed: " + path.string());
}

FlowField load_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::invalid_input, "cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FSFL", 4) != 0) {
    fail(ErrorKind::format, name + ": bad magic at byte 0");
  }
  if (bytes.size() < 12) {
    fail(ErrorKind::format, name + ": truncated header at byte " + std::to_string(bytes.size()));
  }
  const std::uint32_t w = get_u32(bytes.data() + 4);
  const std::uint32_t h = get_u32(bytes.data() + 8);
  const std::uint64_t count = static_cast<std::uint64_t>(w) * h;
  const std::uint64_t expected = 12 + 8 * count;
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
    fail(ErrorKind::format, name + ": implausible dimensions at byte 4");
  }
  if (bytes.size() < expected) {
    fail(ErrorKind::format, name + ": truncated payload at byte " + std::to_string(bytes.size()) +
                                " (expected " + std::to_string(expected) + " bytes)");
  }
  if (bytes.size() > expected) {
    fail(ErrorKind::format, name + ": payload longer than header dimensions, extra data at byte " +
                                std::to_string(expected));
  }
  FlowField f(static_cast<int>(w), static_cast<int>(h));
  std::size_t offset = 12;
  for (auto* plane : {&f.u, &f.v}) {
    for (float& value : *plane) {
      value = std::bit_cast<float>(get_u32(bytes.data() + offset));
      if (!std::isfinite(value)) {
        fail(ErrorKind::format, name + ": non-finite value at byte " + std::to_string(offset));
      }
      offset += 4;
    }
  }
  return f;
}

}  // namespace vad::flow
