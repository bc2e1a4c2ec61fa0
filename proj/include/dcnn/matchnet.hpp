#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dcnn/dense.hpp"
#include "dcnn/error.hpp"
#include "dcnn/image.hpp"
#include "dcnn/imageio.hpp"
#include "dcnn/network.hpp"
#include "dcnn/parallel.hpp"
#include "dcnn/rng.hpp"
#include "dcnn/train.hpp"
#include "dcnn/transforms.hpp"

namespace dcnn::matchnet {

using tensornet::Architecture;
using tensornet::LayerSpec;
using tensornet::Network;
using tensornet::NetworkParams;
using tensornet::Shape;

inline constexpr int kPatch = 11;
inline constexpr int kRadius = kPatch / 2;
inline constexpr int kStackChannels = 3;

/// 11x11 patches with 6 interleaved planes (left/right gray, rank, companion).
inline Architecture matching_net_arch() {
  return Architecture("matching-net", Shape{1, 2 * kStackChannels, kPatch, kPatch},
                      {LayerSpec::conv2d(3, 3, 32), LayerSpec::relu(),
                       LayerSpec::conv3d(3, 3, 2, 128, 2), LayerSpec::relu(),
                       LayerSpec::conv3d(3, 3, 3, 64), LayerSpec::relu(),
                       LayerSpec::fc(1600), LayerSpec::relu(),
                       LayerSpec::fc(128), LayerSpec::relu(),
                       LayerSpec::fc(2)});
}

/// C(x, y, d) for d in [0, ndisp). Stored d-major: index (d * height + y) * width + x.
struct CostVolume {
  int width = 0;
  int height = 0;
  int ndisp = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  CostVolume() = default;
  CostVolume(int w, int h, int n) : width(w), height(h), ndisp(n) {
    require_dims(w, h, "CostVolume");
    if (n < 1) throw ParameterError("CostVolume: ndisp must be >= 1");
    values.assign(static_cast<std::size_t>(w) * h * n, kInvalidDisparity);
    valid.assign(values.size(), 0);
  }
  std::size_t index(int x, int y, int d) const {
    return (static_cast<std::size_t>(d) * height + y) * width + x;
  }
  float at(int x, int y, int d) const { return values[index(x, y, d)]; }
  bool is_valid(int x, int y, int d) const { return valid[index(x, y, d)] != 0; }
  void set(int x, int y, int d, float v) {
    values[index(x, y, d)] = v;
    valid[index(x, y, d)] = 1;
  }
  friend bool operator==(const CostVolume&, const CostVolume&) = default;
};

/// True when a w x w window centered at (x, y) on the left and at (x - d, y)
/// on the right both lie inside a width x height image.
inline bool window_pair_fits(int x, int y, int d, int r, int width, int height) {
  return y - r >= 0 && y + r < height && x + r < width && x - d - r >= 0;
}

/// Patch pair centered at (x, y) / (x - d, y), written as [depth][row][col]
/// with depth following the interleaved stack order.
inline void extract_patch(const transforms::ChannelStack& inter, int x, int y, int d, float* out) {
  const int W = inter.width;
  for (std::size_t z = 0; z < inter.size(); ++z) {
    const auto& plane = inter.channels[z].data;
    const int cx = (z % 2 == 0) ? x : x - d;
    for (int i = 0; i < kPatch; ++i) {
      const float* src = plane.data() + static_cast<std::size_t>(y - kRadius + i) * W + (cx - kRadius);
      std::copy(src, src + kPatch, out + (z * kPatch + i) * kPatch);
    }
  }
}

inline transforms::ChannelStack matching_input(const GrayImage& left, const GrayImage& right,
                                               const transforms::TransformConfig& cfg) {
  if (left.width() != right.width() || left.height() != right.height())
    throw ParameterError("left and right images differ in size");
  return transforms::interleave(transforms::build_stack(left, cfg), transforms::build_stack(right, cfg));
}

// ---------------------------------------------------------------------------
// Training data.

struct PatchProvenance {
  int scene = 0;
  int x = 0;
  int y = 0;
  int d = 0;
  friend bool operator==(const PatchProvenance&, const PatchProvenance&) = default;
};

struct PatchSampleSet {
  tensornet::SampleSet data;
  std::vector<PatchProvenance> provenance;
  std::uint64_t seed = 0;
};

namespace detail {

// Disparities d' in [0, ndisp) that are at least 2 away from the truth and
// keep the right patch inside the image.
inline int negative_choices(int x, float dt, int ndisp) {
  int n = 0;
  for (int d = 0; d < std::min(ndisp, x - kRadius + 1); ++d) n += std::abs(d - dt) > 1.0f;
  return n;
}

}  // namespace detail

struct SceneInput {
  const transforms::ChannelStack* stack = nullptr;
  const DisparityMap* gt = nullptr;
  int ndisp = 0;
};

/// Balanced match (t=0) / mismatch (t=1) patches. Each chosen pixel gives one
/// positive at round(D_t) and one negative at a uniform d' with |d' - D_t| > 1.
/// Scenes receive quotas proportional to their eligible-pixel counts.
inline PatchSampleSet sample_matching_patches(const std::vector<SceneInput>& scenes, std::size_t per_class,
                                              std::uint64_t seed) {
  if (per_class == 0) throw ParameterError("sample count per class must be positive");
  std::vector<std::vector<std::uint32_t>> eligible(scenes.size());
  std::size_t total = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sc = scenes[s];
    if (!sc.gt) continue;
    const DisparityMap& gt = *sc.gt;
    const int W = sc.stack->width, H = sc.stack->height;
    if (gt.width() != W || gt.height() != H) throw ParameterError("ground truth does not match the image size");
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const float dt = gt(x, y);
        if (!is_valid_disparity(dt)) continue;
        const int dp = static_cast<int>(std::lround(dt));
        if (dp >= sc.ndisp || !window_pair_fits(x, y, dp, kRadius, W, H)) continue;
        if (detail::negative_choices(x, dt, sc.ndisp) == 0) continue;
        eligible[s].push_back(static_cast<std::uint32_t>(y * W + x));
      }
    total += eligible[s].size();
  }
  if (total == 0) throw SamplingError("no pixel is eligible for patch sampling");

  // Largest-remainder apportionment; ties go to the earlier scene.
  std::vector<std::size_t> quota(scenes.size(), 0);
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const double exact = static_cast<double>(per_class) * eligible[s].size() / static_cast<double>(total);
    quota[s] = static_cast<std::size_t>(std::floor(exact));
    given += quota[s];
    rem.emplace_back(exact - std::floor(exact), s);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; given < per_class; ++k, ++given) ++quota[rem[k % rem.size()].second];

  PatchSampleSet out;
  out.seed = seed;
  out.data.shape = matching_net_arch().input();
  out.data.reserve(2 * per_class);
  Rng rng(seed);
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (quota[s] == 0) continue;
    Rng srng = rng.split();
    const auto& sc = scenes[s];
    const int W = sc.stack->width;
    std::vector<std::uint32_t> pick = eligible[s];
    if (quota[s] <= pick.size()) {
      // partial Fisher-Yates: the first quota entries are a uniform subset
      for (std::size_t i = 0; i < quota[s]; ++i)
        std::swap(pick[i], pick[i + static_cast<std::size_t>(srng.below(pick.size() - i))]);
      pick.resize(quota[s]);
    } else {
      std::vector<std::uint32_t> with;
      for (std::size_t i = 0; i < quota[s]; ++i) with.push_back(pick[static_cast<std::size_t>(srng.below(pick.size()))]);
      pick = std::move(with);
    }
    for (std::uint32_t idx : pick) {
      const int x = static_cast<int>(idx) % W, y = static_cast<int>(idx) / W;
      const float dt = (*sc.gt)(x, y);
      const int dpos = static_cast<int>(std::lround(dt));
      const int dmax = std::min(sc.ndisp, x - kRadius + 1);
      int dneg;
      do {
        dneg = static_cast<int>(srng.below(static_cast<std::uint64_t>(dmax)));
      } while (!(std::abs(dneg - dt) > 1.0f));
      extract_patch(*sc.stack, x, y, dpos, out.data.append(0));
      out.provenance.push_back({static_cast<int>(s), x, y, dpos});
      extract_patch(*sc.stack, x, y, dneg, out.data.append(1));
      out.provenance.push_back({static_cast<int>(s), x, y, dneg});
    }
  }
  return out;
}

/// Convenience form that builds the channel stacks itself; records without
/// ground truth are skipped.
inline PatchSampleSet sample_matching_patches(const std::vector<imageio::StereoPairRecord>& records,
                                              const transforms::TransformConfig& cfg, std::size_t per_class,
                                              std::uint64_t seed) {
  std::vector<transforms::ChannelStack> stacks(records.size());
  parallel_for(static_cast<int>(records.size()), [&](int i) {
    if (records[i].gt) stacks[i] = matching_input(records[i].left, records[i].right, cfg);
  });
  std::vector<SceneInput> scenes;
  for (std::size_t i = 0; i < records.size(); ++i)
    scenes.push_back({&stacks[i], records[i].gt ? &*records[i].gt : nullptr, records[i].calib.ndisp});
  return sample_matching_patches(scenes, per_class, seed);
}

// ---------------------------------------------------------------------------
// Inference.

struct InferenceOptions {
  int tile = 32;
  int threads = 0;  // 0: thread_count()
};

/// Mismatch probability for every (x, y, d) whose patch pair fits. Each
/// disparity is evaluated as one dense pass over tiles of the shifted stacks.
inline CostVolume infer_cost_volume(const transforms::ChannelStack& inter, int ndisp, const Network<float>& net,
                                    const InferenceOptions& opt = {}) {
  tensornet::check_params(matching_net_arch(), net.params());
  if (inter.size() != 2 * kStackChannels) throw ShapeError("matching input needs 6 interleaved planes");
  const int W = inter.width, H = inter.height, T = std::max(1, opt.tile);
  CostVolume cv(W, H, ndisp);
  struct Job {
    int d, oy, ox;
  };
  std::vector<Job> jobs;
  const int rows = H - kPatch + 1;
  for (int d = 0; d < ndisp; ++d) {
    const int cols = W - d - kPatch + 1;
    if (cols <= 0 || rows <= 0) continue;
    for (int oy = 0; oy < rows; oy += T)
      for (int ox = 0; ox < cols; ox += T) jobs.push_back({d, oy, ox});
  }
  parallel_for(
      static_cast<int>(jobs.size()),
      [&](int j) {
        const auto [d, oy, ox] = jobs[j];
        const int th = std::min(T, rows - oy), tw = std::min(T, W - d - kPatch + 1 - ox);
        const int ih = th + kPatch - 1, iw = tw + kPatch - 1;
        // Column u of the tile is left column ox + u + d and right column ox + u.
        tensornet::Tensor4<float> in(Shape{1, 2 * kStackChannels, ih, iw});
        for (int z = 0; z < 2 * kStackChannels; ++z) {
          const auto& plane = inter.channels[z].data;
          const int shift = (z % 2 == 0) ? d : 0;
          for (int i = 0; i < ih; ++i) {
            const float* src = plane.data() + static_cast<std::size_t>(oy + i) * W + ox + shift;
            std::copy(src, src + iw, &in(0, z, i, 0));
          }
        }
        const auto s = tensornet::dense_scores(net, std::move(in));
        for (int i = 0; i < th; ++i)
          for (int u = 0; u < tw; ++u)
            cv.set(ox + u + d + kRadius, oy + i + kRadius, d, s.values[static_cast<std::size_t>(i) * s.cols + u]);
      },
      opt.threads > 0 ? opt.threads : thread_count());
  return cv;
}

inline CostVolume infer_cost_volume(const GrayImage& left, const GrayImage& right, const imageio::CalibInfo& calib,
                                    const transforms::TransformConfig& cfg, const NetworkParams<float>& params,
                                    const InferenceOptions& opt = {}) {
  Network<float> net(matching_net_arch(), params);
  return infer_cost_volume(matching_input(left, right, cfg), calib.ndisp, net, opt);
}

/// Reference path: every cell evaluated as an independent patch pair.
inline CostVolume infer_cost_volume_per_patch(const transforms::ChannelStack& inter, int ndisp,
                                              const Network<float>& net) {
  tensornet::check_params(matching_net_arch(), net.params());
  const int W = inter.width, H = inter.height;
  CostVolume cv(W, H, ndisp);
  const std::size_t S = net.arch().input().size();
  parallel_for(H, [&](int y) {
    tensornet::Workspace<float> ws;
    std::vector<float> patch(S);
    for (int d = 0; d < ndisp; ++d)
      for (int x = 0; x < W; ++x) {
        if (!window_pair_fits(x, y, d, kRadius, W, H)) continue;
        extract_patch(inter, x, y, d, patch.data());
        cv.set(x, y, d, net.scores(patch.data(), 1, ws)[0]);
      }
  });
  return cv;
}

/// Winner-take-all: lowest valid cost, ties to the smallest d; pixels without
/// a valid cell are invalid.
inline DisparityMap wta(const CostVolume& cv) {
  DisparityMap out(cv.width, cv.height);
  for (int y = 0; y < cv.height; ++y)
    for (int x = 0; x < cv.width; ++x) {
      int best = -1;
      float best_cost = 0.0f;
      for (int d = 0; d < cv.ndisp; ++d) {
        if (!cv.is_valid(x, y, d)) continue;
        const float c = cv.at(x, y, d);
        if (best < 0 || c < best_cost) {
          best = d;
          best_cost = c;
        }
      }
      out(x, y) = best < 0 ? kInvalidDisparity : static_cast<float>(best);
    }
  out.set_ndisp(cv.ndisp);
  return out;
}

// ---------------------------------------------------------------------------
// Classical matching costs.

enum class BaselineMethod { sad, ssd, ncc, census };

inline BaselineMethod parse_baseline(std::string_view s) {
  if (s == "sad" || s == "SAD") return BaselineMethod::sad;
  if (s == "ssd" || s == "SSD") return BaselineMethod::ssd;
  if (s == "ncc" || s == "NCC") return BaselineMethod::ncc;
  if (s == "census" || s == "CENSUS") return BaselineMethod::census;
  throw ParameterError("unknown baseline method '" + std::string(s) + "'");
}

namespace detail {

// Bit k set when the k-th window neighbour (row-major, center skipped) is
// darker than the center, on 8-bit levels.
inline std::vector<std::uint64_t> census_codes(const GrayImage& img, int w, int& words) {
  const int W = img.width(), H = img.height(), r = w / 2;
  const int bits = w * w - 1;
  words = (bits + 63) / 64;
  const auto lv = img.levels();
  std::vector<std::uint64_t> codes(static_cast<std::size_t>(W) * H * words, 0);
  for (int y = r; y + r < H; ++y)
    for (int x = r; x + r < W; ++x) {
      std::uint64_t* code = codes.data() + (static_cast<std::size_t>(y) * W + x) * words;
      const std::uint8_t c = lv[static_cast<std::size_t>(y) * W + x];
      int k = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dx == 0 && dy == 0) continue;
          if (lv[static_cast<std::size_t>(y + dy) * W + x + dx] < c) code[k / 64] |= std::uint64_t{1} << (k % 64);
          ++k;
        }
    }
  return codes;
}

}  // namespace detail

/// Window costs scaled into [0, 1], lower meaning more similar: mean absolute
/// and mean squared intensity difference, (1 - NCC) / 2 (NCC taken as 0 for a
/// flat window), and census Hamming distance over w*w - 1 bits.
inline CostVolume baseline_cost(const GrayImage& left, const GrayImage& right, int ndisp, BaselineMethod method,
                                int window) {
  if (window < 1 || window % 2 == 0) throw ParameterError("baseline window must be odd and positive");
  if (method == BaselineMethod::census && window < 3) throw ParameterError("census window must be >= 3");
  if (left.width() != right.width() || left.height() != right.height())
    throw ParameterError("left and right images differ in size");
  const int W = left.width(), H = left.height(), r = window / 2;
  CostVolume cv(W, H, ndisp);
  const double n = static_cast<double>(window) * window;
  int words = 0;
  std::vector<std::uint64_t> cl, cr;
  if (method == BaselineMethod::census) {
    cl = detail::census_codes(left, window, words);
    cr = detail::census_codes(right, window, words);
  }
  parallel_for(H, [&](int y) {
    for (int d = 0; d < ndisp; ++d)
      for (int x = 0; x < W; ++x) {
        if (!window_pair_fits(x, y, d, r, W, H)) continue;
        double cost = 0.0;
        switch (method) {
          case BaselineMethod::sad:
          case BaselineMethod::ssd: {
            double acc = 0.0;
            for (int dy = -r; dy <= r; ++dy)
              for (int dx = -r; dx <= r; ++dx) {
                const double diff = static_cast<double>(left(x + dx, y + dy)) - right(x - d + dx, y + dy);
                acc += method == BaselineMethod::sad ? std::abs(diff) : diff * diff;
              }
            cost = acc / n;
            break;
          }
          case BaselineMethod::ncc: {
            double sl = 0, sr = 0;
            for (int dy = -r; dy <= r; ++dy)
              for (int dx = -r; dx <= r; ++dx) {
                sl += left(x + dx, y + dy);
                sr += right(x - d + dx, y + dy);
              }
            const double ml = sl / n, mr = sr / n;
            double cov = 0, vl = 0, vr = 0;
            for (int dy = -r; dy <= r; ++dy)
              for (int dx = -r; dx <= r; ++dx) {
                const double a = left(x + dx, y + dy) - ml, b = right(x - d + dx, y + dy) - mr;
                cov += a * b;
                vl += a * a;
                vr += b * b;
              }
            const double denom = std::sqrt(vl * vr);
            const double ncc = denom > 0.0 ? std::clamp(cov / denom, -1.0, 1.0) : 0.0;
            cost = (1.0 - ncc) / 2.0;
            break;
          }
          case BaselineMethod::census: {
            const std::uint64_t* a = cl.data() + (static_cast<std::size_t>(y) * W + x) * words;
            const std::uint64_t* b = cr.data() + (static_cast<std::size_t>(y) * W + x - d) * words;
            int ham = 0;
            for (int k = 0; k < words; ++k) ham += std::popcount(a[k] ^ b[k]);
            cost = static_cast<double>(ham) / (window * window - 1);
            break;
          }
        }
        cv.set(x, y, d, static_cast<float>(cost));
      }
  });
  return cv;
}

// ---------------------------------------------------------------------------
// Debug export: text header then little-endian f32 values, d-major, with
// invalid cells stored as +inf.

inline imageio::Bytes export_cost_volume(const CostVolume& cv) {
  const std::string header = "DCNNCV 1\nwidth " + std::to_string(cv.width) + "\nheight " + std::to_string(cv.height) +
                             "\nndisp " + std::to_string(cv.ndisp) + "\n";
  imageio::Bytes out(header.begin(), header.end());
  out.reserve(out.size() + cv.values.size() * 4);
  for (std::size_t i = 0; i < cv.values.size(); ++i) {
    const float v = cv.valid[i] ? cv.values[i] : kInvalidDisparity;
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training.

inline NetworkParams<float> train_matching_net(const PatchSampleSet& samples, const tensornet::TrainConfig& cfg,
                                               std::uint64_t init_seed, tensornet::TrainResult* trace = nullptr,
                                               const tensornet::EpochCallback& on_epoch = {}) {
  Network<float> net(matching_net_arch(), init_seed);
  Rng rng(cfg.seed);
  auto res = tensornet::sgd_train(net, samples.data, cfg, rng, on_epoch);
  if (trace) *trace = std::move(res);
  return net.params();
}

}  // namespace dcnn::matchnet
