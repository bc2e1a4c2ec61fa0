#pragma once

// Random-dot stereo scenes with exact ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/hash.hpp"
#include "dcnn/image.hpp"
#include "dcnn/imageio.hpp"
#include "dcnn/rng.hpp"

namespace dcnn::synthetic {

struct SyntheticSceneSpec {
  int width = 128;
  int height = 128;
  int ndisp = 16;
  double texture_density = 1.0;       // probability that a pixel carries a random dot
  double textureless_fraction = 0.0;  // target image fraction covered by flat rectangles
  double gain = 1.0;                  // multiplicative lighting change on the right view
  std::uint64_t seed = 0;

  void validate() const {
    if (width < 64 || height < 64) throw ParameterError("synthetic scene must be at least 64x64");
    if (ndisp < 2) throw ParameterError("synthetic scene needs ndisp >= 2");
    if (2 * ndisp >= width) throw ParameterError("synthetic scene needs ndisp < width / 2");
    if (!(texture_density > 0.0 && texture_density <= 1.0))
      throw ParameterError("texture density must lie in (0, 1]");
    if (!(textureless_fraction >= 0.0 && textureless_fraction < 1.0))
      throw ParameterError("textureless fraction must lie in [0, 1)");
    if (!(gain > 0.0)) throw ParameterError("lighting gain must be positive");
  }
};

namespace detail {

struct Rect {
  int x0, y0, x1, y1;  // half-open
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

inline Rect random_rect(Rng& rng, int W, int H, int min_side, int max_side) {
  const int w = rng.uniform_int(min_side, max_side), h = rng.uniform_int(min_side, max_side);
  const int x0 = rng.uniform_int(0, W - w), y0 = rng.uniform_int(0, H - h);
  return {x0, y0, x0 + w, y0 + h};
}

}  // namespace detail

/// Background plane plus 2-4 nearer fronto-parallel rectangles, all with
/// integer disparities. The right view is the left view shifted by the
/// disparity with the nearer surface winning; right pixels no surface maps to
/// get fresh dots. The mask marks left pixels visible in the right view.
inline imageio::StereoPairRecord gen_synthetic(const SyntheticSceneSpec& spec) {
  spec.validate();
  const int W = spec.width, H = spec.height, N = spec.ndisp;
  Rng rng(spec.seed);
  auto dot = [&](Rng& r) -> std::uint8_t {
    if (r.uniform01() < spec.texture_density) return static_cast<std::uint8_t>(r.below(256));
    return 128;
  };

  const int background = rng.uniform_int(0, std::max(0, N / 3));
  std::vector<int> disp(static_cast<std::size_t>(W) * H, background);
  const int nrect = rng.uniform_int(2, 4);
  std::vector<std::pair<int, detail::Rect>> rects;
  for (int i = 0; i < nrect; ++i)
    rects.emplace_back(rng.uniform_int(std::min(background + 1, N - 1), N - 1),
                       detail::random_rect(rng, W, H, std::min(W, H) / 8, std::min(W, H) / 2));
  std::stable_sort(rects.begin(), rects.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [d, r] : rects)
    for (int y = r.y0; y < r.y1; ++y)
      for (int x = r.x0; x < r.x1; ++x) disp[static_cast<std::size_t>(y) * W + x] = d;

  std::vector<std::uint8_t> left(disp.size());
  for (auto& v : left) v = dot(rng);
  if (spec.textureless_fraction > 0.0) {
    std::vector<std::uint8_t> flat(disp.size(), 0);
    std::size_t covered = 0;
    const auto target = static_cast<std::size_t>(spec.textureless_fraction * W * H);
    for (int attempt = 0; attempt < 64 && covered < target; ++attempt) {
      const auto r = detail::random_rect(rng, W, H, std::min(W, H) / 10, std::min(W, H) / 4);
      const auto level = static_cast<std::uint8_t>(rng.below(256));
      for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * W + x;
          left[i] = level;
          covered += flat[i] == 0;
          flat[i] = 1;
        }
    }
  }

  std::vector<int> zbuf(disp.size(), -1);
  std::vector<std::uint8_t> right(disp.size(), 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      const int xr = x - disp[i];
      if (xr < 0) continue;
      const std::size_t j = static_cast<std::size_t>(y) * W + xr;
      if (disp[i] > zbuf[j]) {
        zbuf[j] = disp[i];
        right[j] = left[i];
      }
    }
  Rng fill = rng.split();
  for (std::size_t j = 0; j < right.size(); ++j)
    if (zbuf[j] < 0) right[j] = dot(fill);
  if (spec.gain != 1.0)
    for (auto& v : right) v = static_cast<std::uint8_t>(std::clamp<long>(std::lround(v * spec.gain), 0, 255));

  imageio::StereoPairRecord rec{GrayImage::from_levels(W, H, left), GrayImage::from_levels(W, H, right), {}, {},
                                imageio::CalibInfo{N, W, H, "synthetic-" + hex64(spec.seed)}};
  DisparityMap gt(W, H);
  Mask mask(W, H, 0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * W + x;
      gt(x, y) = static_cast<float>(disp[i]);
      const int xr = x - disp[i];
      mask(x, y) = xr >= 0 && zbuf[static_cast<std::size_t>(y) * W + xr] == disp[i];
    }
  gt.set_ndisp(N);
  rec.gt = std::move(gt);
  rec.nonocc_mask = std::move(mask);
  return rec;
}

/// Seed of scene `index` in a suite started from `seed`.
inline std::uint64_t scene_seed(std::uint64_t seed, int index) {
  return Fnv1a().add("synthetic-scene").add_u64(seed).add_u64(static_cast<std::uint64_t>(index)).value();
}

inline std::vector<imageio::StereoPairRecord> gen_suite(SyntheticSceneSpec spec, int count, std::uint64_t seed) {
  if (count < 0) throw ParameterError("scene count must be non-negative");
  std::vector<imageio::StereoPairRecord> out;
  for (int i = 0; i < count; ++i) {
    spec.seed = scene_seed(seed, i);
    out.push_back(gen_synthetic(spec));
    out.back().calib.dataset_name = "scene" + std::to_string(i);
  }
  return out;
}

}  // namespace dcnn::synthetic
