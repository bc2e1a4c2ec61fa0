#pragma once

// Non-parametric image transforms feeding the matching network: the rank
// transform (robust to monotone lighting changes) and the companion transform
// (long-range structure for textureless areas), plus channel-stack assembly.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/image.hpp"
#include "dcnn/parallel.hpp"

namespace dcnn::transforms {

struct TransformConfig {
  int rank_window = 31;
  int companion_window = 61;
  int ray_directions = 8;

  void validate() const;
  friend bool operator==(const TransformConfig&, const TransformConfig&) = default;
};

inline void check_window(int w, const char* what) {
  if (w < 3 || w % 2 == 0)
    throw ParameterError(std::string(what) + ": window must be odd and >= 3, got " + std::to_string(w));
}

inline void check_directions(int n) {
  if (n != 4 && n != 8 && n != 16)
    throw ParameterError("companion transform: ray direction count must be 4, 8 or 16, got " + std::to_string(n));
}

inline void TransformConfig::validate() const {
  check_window(rank_window, "rank transform");
  check_window(companion_window, "companion transform");
  check_directions(ray_directions);
}

/// Unit steps of the rays. The first 4 are E, W, N, S; the first 8 add the
/// diagonals NE, NW, SE, SW; 16 adds the knight-move steps.
inline std::vector<std::pair<int, int>> ray_steps(int directions) {
  check_directions(directions);
  static constexpr std::array<std::pair<int, int>, 16> kSteps = {{
      {1, 0}, {-1, 0}, {0, -1}, {0, 1},
      {1, -1}, {-1, -1}, {1, 1}, {-1, 1},
      {2, -1}, {1, -2}, {-1, -2}, {-2, -1}, {-2, 1}, {-1, 2}, {1, 2}, {2, 1},
  }};
  return {kSteps.begin(), kSteps.begin() + directions};
}

/// A single-channel real raster.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  float operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Plane&, const Plane&) = default;
};

namespace detail {

// Counts over 256 levels with O(log) prefix queries.
class LevelCounter {
 public:
  void add(std::uint8_t level, int delta) {
    for (int i = level + 1; i <= 256; i += i & -i) tree_[i] += delta;
  }
  // Number of recorded levels <= level.
  int at_most(std::uint8_t level) const {
    int s = 0;
    for (int i = level + 1; i > 0; i -= i & -i) s += tree_[i];
    return s;
  }

 private:
  std::array<int, 257> tree_{};
};

}  // namespace detail

/// Fraction of in-bounds window pixels strictly brighter than the center,
/// compared on 8-bit levels. The window is clipped at the image border and the
/// denominator counts only in-bounds pixels (the center included).
inline Plane rank_transform(const GrayImage& img, int w) {
  check_window(w, "rank transform");
  const int W = img.width(), H = img.height(), r = w / 2;
  const auto lv = img.levels();
  Plane out{W, H, std::vector<float>(lv.size())};
  parallel_for(H, [&](int y) {
    const int y0 = std::max(0, y - r), y1 = std::min(H - 1, y + r);
    const int rows = y1 - y0 + 1;
    detail::LevelCounter counter;
    int total = 0;
    auto add_column = [&](int x, int delta) {
      for (int yy = y0; yy <= y1; ++yy) counter.add(lv[static_cast<std::size_t>(yy) * W + x], delta);
      total += delta * rows;
    };
    for (int x = 0; x <= std::min(W - 1, r); ++x) add_column(x, +1);
    for (int x = 0; x < W; ++x) {
      if (x > 0) {
        if (x + r < W) add_column(x + r, +1);
        if (x - r - 1 >= 0) add_column(x - r - 1, -1);
      }
      const std::uint8_t c = lv[static_cast<std::size_t>(y) * W + x];
      const int brighter = total - counter.at_most(c);
      out.data[static_cast<std::size_t>(y) * W + x] = static_cast<float>(brighter) / static_cast<float>(total);
    }
  });
  return out;
}

/// Fraction of ray pixels sharing the center's 8-bit level. Rays start next to
/// the center and stop at the w x w window or the image border, whichever
/// comes first. A pixel with no ray pixels at all (1x1 image) maps to 0.
inline Plane companion_transform(const GrayImage& img, int w, int directions = 8) {
  check_window(w, "companion transform");
  const auto steps = ray_steps(directions);
  const int W = img.width(), H = img.height(), r = w / 2;
  const auto lv = img.levels();
  const std::size_t n = lv.size();
  std::vector<int> equal(n, 0), counted(n, 0);

  // Along every line of pixels p, p+v, p+2v, ..., each pixel sees the next K
  // entries of the line; a sliding level histogram answers "how many equal".
  for (auto [dx, dy] : steps) {
    const int K = r / std::max(std::abs(dx), std::abs(dy));
    if (K == 0) continue;
    auto inside = [&](int x, int y) { return x >= 0 && x < W && y >= 0 && y < H; };
    std::vector<std::size_t> line;
    std::array<int, 256> hist{};
    for (int sy = 0; sy < H; ++sy)
      for (int sx = 0; sx < W; ++sx) {
        if (inside(sx - dx, sy - dy)) continue;  // not the start of a line
        line.clear();
        for (int x = sx, y = sy; inside(x, y); x += dx, y += dy) line.push_back(static_cast<std::size_t>(y) * W + x);
        hist.fill(0);
        const int len = static_cast<int>(line.size());
        for (int i = len - 1; i >= 0; --i) {
          // window for i is entries i+1 .. i+K
          if (i + 1 < len) ++hist[lv[line[i + 1]]];
          if (i + K + 1 < len) --hist[lv[line[i + K + 1]]];
          equal[line[i]] += hist[lv[line[i]]];
          counted[line[i]] += std::min(K, len - 1 - i);
        }
      }
  }
  Plane out{W, H, std::vector<float>(n, 0.0f)};
  for (std::size_t i = 0; i < n; ++i)
    if (counted[i] > 0) out.data[i] = static_cast<float>(equal[i]) / static_cast<float>(counted[i]);
  return out;
}

/// Same-size rasters forming one view's input channels.
struct ChannelStack {
  int width = 0;
  int height = 0;
  std::vector<Plane> channels;
  std::vector<std::string> labels;

  std::size_t size() const { return channels.size(); }
  friend bool operator==(const ChannelStack&, const ChannelStack&) = default;
};

inline Plane gray_plane(const GrayImage& img) { return Plane{img.width(), img.height(), img.data()}; }

/// [gray, rank, companion] for one view.
inline ChannelStack build_stack(const GrayImage& img, const TransformConfig& cfg) {
  cfg.validate();
  ChannelStack s{img.width(), img.height(), {}, {"gray", "rank", "companion"}};
  s.channels.push_back(gray_plane(img));
  s.channels.push_back(rank_transform(img, cfg.rank_window));
  s.channels.push_back(companion_transform(img, cfg.companion_window, cfg.ray_directions));
  return s;
}

/// Alternating [L0, R0, L1, R1, ...] so that a depth-2/stride-2 convolution
/// sees matching left/right channel pairs.
inline ChannelStack interleave(const ChannelStack& left, const ChannelStack& right) {
  if (left.width != right.width || left.height != right.height)
    throw ParameterError("interleave: left and right stacks differ in size");
  if (left.size() != right.size())
    throw ParameterError("interleave: left and right stacks differ in channel count");
  ChannelStack out{left.width, left.height, {}, {}};
  for (std::size_t k = 0; k < left.size(); ++k) {
    out.channels.push_back(left.channels[k]);
    out.channels.push_back(right.channels[k]);
    out.labels.push_back("L:" + (k < left.labels.size() ? left.labels[k] : std::to_string(k)));
    out.labels.push_back("R:" + (k < right.labels.size() ? right.labels[k] : std::to_string(k)));
  }
  return out;
}

}  // namespace dcnn::transforms
