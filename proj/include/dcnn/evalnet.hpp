#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "dcnn/dense.hpp"
#include "dcnn/error.hpp"
#include "dcnn/image.hpp"
#include "dcnn/network.hpp"
#include "dcnn/parallel.hpp"
#include "dcnn/rng.hpp"
#include "dcnn/train.hpp"

namespace dcnn::evalnet {

using tensornet::Architecture;
using tensornet::LayerSpec;
using tensornet::Network;
using tensornet::NetworkParams;
using tensornet::Shape;

inline constexpr int kPatch = 101;
inline constexpr int kRadius = kPatch / 2;

/// Left grayscale and normalized raw disparity, 101x101.
inline Architecture evaluation_net_arch() {
  return Architecture("evaluation-net", Shape{1, 2, kPatch, kPatch},
                      {LayerSpec::conv2d(3, 3, 16), LayerSpec::relu(), LayerSpec::maxpool(2, 2, 2, 2),
                       LayerSpec::conv2d(3, 3, 32), LayerSpec::relu(), LayerSpec::maxpool(2, 2, 2, 2),
                       LayerSpec::conv2d(3, 3, 64), LayerSpec::relu(), LayerSpec::maxpool(2, 2, 2, 2),
                       LayerSpec::conv3d(3, 3, 2, 128), LayerSpec::relu(), LayerSpec::maxpool(2, 2, 2, 2),
                       LayerSpec::fc(128), LayerSpec::relu(),
                       LayerSpec::fc(2)});
}

/// mismatch[i] = 1 where |D_e - D_t| > T_e; ignore[i] = 1 where either map is
/// invalid (mismatch is then 0).
struct MismatchLabels {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mismatch;
  std::vector<std::uint8_t> ignore;

  std::size_t count_mismatch() const { return static_cast<std::size_t>(std::count(mismatch.begin(), mismatch.end(), 1)); }
  std::size_t count_ignored() const { return static_cast<std::size_t>(std::count(ignore.begin(), ignore.end(), 1)); }
};

inline MismatchLabels label_mismatches(const DisparityMap& raw, const DisparityMap& gt, double te) {
  if (raw.width() != gt.width() || raw.height() != gt.height())
    throw ParameterError("label_mismatches: disparity maps differ in size");
  if (!(te > 0.0)) throw ParameterError("mismatch threshold must be positive");
  MismatchLabels out{raw.width(), raw.height(), std::vector<std::uint8_t>(raw.size(), 0),
                     std::vector<std::uint8_t>(raw.size(), 0)};
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (!raw.valid(i) || !gt.valid(i)) {
      out.ignore[i] = 1;
      continue;
    }
    out.mismatch[i] = std::abs(static_cast<double>(raw[i]) - gt[i]) > te;
  }
  return out;
}

inline bool patch_fits(int x, int y, int width, int height) {
  return x - kRadius >= 0 && y - kRadius >= 0 && x + kRadius < width && y + kRadius < height;
}

/// Disparity plane as the network sees it: D_e / ndisp, invalid cells 0.
inline std::vector<float> disparity_plane(const DisparityMap& raw, int ndisp) {
  if (ndisp < 1) throw ParameterError("ndisp must be >= 1");
  std::vector<float> p(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) p[i] = raw.valid(i) ? raw[i] / static_cast<float>(ndisp) : 0.0f;
  return p;
}

inline void extract_eval_patch(const GrayImage& left, const std::vector<float>& dplane, int x, int y, float* out) {
  const int W = left.width();
  for (int i = 0; i < kPatch; ++i) {
    const std::size_t row = static_cast<std::size_t>(y - kRadius + i) * W + (x - kRadius);
    std::copy(left.data().begin() + row, left.data().begin() + row + kPatch, out + i * kPatch);
    std::copy(dplane.begin() + row, dplane.begin() + row + kPatch, out + (kPatch + i) * kPatch);
  }
}

// ---------------------------------------------------------------------------
// Training data.

struct EvalScene {
  const GrayImage* left = nullptr;
  const DisparityMap* raw = nullptr;
  const MismatchLabels* labels = nullptr;
  int ndisp = 0;
};

struct EvalProvenance {
  int scene = 0;
  int x = 0;
  int y = 0;
  friend bool operator==(const EvalProvenance&, const EvalProvenance&) = default;
};

struct EvalSampleSet {
  tensornet::SampleSet data;
  std::vector<EvalProvenance> provenance;
  std::uint64_t seed = 0;
  bool degenerate = false;  // no negatives were available; the set is empty
};

struct EvalSamplingOptions {
  /// Upper bound on negatives; 0 keeps every negative.
  std::size_t max_negatives = 0;
};

/// Every in-bounds negative (t=0, mismatch) and as many positives (t=1),
/// drawn uniformly without replacement, or with replacement when positives
/// are scarcer than negatives.
inline EvalSampleSet sample_eval_patches(const std::vector<EvalScene>& scenes, std::uint64_t seed,
                                         const EvalSamplingOptions& opt = {}) {
  struct Site {
    int scene, x, y;
  };
  std::vector<Site> neg, pos;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& sc = scenes[s];
    const auto& lab = *sc.labels;
    if (lab.width != sc.left->width() || lab.height != sc.left->height() || sc.raw->width() != lab.width ||
        sc.raw->height() != lab.height)
      throw ParameterError("sample_eval_patches: inputs differ in size");
    for (int y = 0; y < lab.height; ++y)
      for (int x = 0; x < lab.width; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * lab.width + x;
        if (lab.ignore[i] || !patch_fits(x, y, lab.width, lab.height)) continue;
        (lab.mismatch[i] ? neg : pos).push_back({static_cast<int>(s), x, y});
      }
  }
  EvalSampleSet out;
  out.seed = seed;
  out.data.shape = evaluation_net_arch().input();
  if (neg.empty()) {
    out.degenerate = true;
    return out;
  }
  Rng rng(seed);
  auto subset = [&](std::vector<Site>& v, std::size_t k) {
    for (std::size_t i = 0; i < k; ++i) std::swap(v[i], v[i + static_cast<std::size_t>(rng.below(v.size() - i))]);
    v.resize(k);
  };
  if (opt.max_negatives > 0 && neg.size() > opt.max_negatives) subset(neg, opt.max_negatives);
  if (pos.empty()) throw SamplingError("no positive evaluation samples are available");
  if (pos.size() >= neg.size()) {
    subset(pos, neg.size());
  } else {
    std::vector<Site> with;
    for (std::size_t i = 0; i < neg.size(); ++i) with.push_back(pos[static_cast<std::size_t>(rng.below(pos.size()))]);
    pos = std::move(with);
  }

  std::vector<std::vector<float>> planes(scenes.size());
  for (std::size_t s = 0; s < scenes.size(); ++s) planes[s] = disparity_plane(*scenes[s].raw, scenes[s].ndisp);
  out.data.reserve(2 * neg.size());
  for (std::size_t i = 0; i < neg.size(); ++i)
    for (int label : {0, 1}) {
      const Site& site = label == 0 ? neg[i] : pos[i];
      extract_eval_patch(*scenes[site.scene].left, planes[site.scene], site.x, site.y, out.data.append(label));
      out.provenance.push_back({site.scene, site.x, site.y});
    }
  return out;
}

// ---------------------------------------------------------------------------
// Inference.

struct InferenceOptions {
  int tile = 64;
  int threads = 0;  // 0: thread_count()
};

inline ConfidenceMap confidence_map(const GrayImage& left, const DisparityMap& raw, int ndisp,
                                    const Network<float>& net, const InferenceOptions& opt = {}) {
  tensornet::check_params(evaluation_net_arch(), net.params());
  if (left.width() != raw.width() || left.height() != raw.height())
    throw ParameterError("confidence_map: image and disparity map differ in size");
  const int W = left.width(), H = left.height(), T = std::max(1, opt.tile);
  ConfidenceMap conf(W, H);
  const auto dplane = disparity_plane(raw, ndisp);
  const int rows = H - kPatch + 1, cols = W - kPatch + 1;
  if (rows <= 0 || cols <= 0) return conf;
  struct Job {
    int oy, ox;
  };
  std::vector<Job> jobs;
  for (int oy = 0; oy < rows; oy += T)
    for (int ox = 0; ox < cols; ox += T) jobs.push_back({oy, ox});
  parallel_for(
      static_cast<int>(jobs.size()),
      [&](int j) {
        const auto [oy, ox] = jobs[j];
        const int th = std::min(T, rows - oy), tw = std::min(T, cols - ox);
        const int ih = th + kPatch - 1, iw = tw + kPatch - 1;
        tensornet::Tensor4<float> in(Shape{1, 2, ih, iw});
        for (int i = 0; i < ih; ++i) {
          const std::size_t row = static_cast<std::size_t>(oy + i) * W + ox;
          std::copy(left.data().begin() + row, left.data().begin() + row + iw, &in(0, 0, i, 0));
          std::copy(dplane.begin() + row, dplane.begin() + row + iw, &in(0, 1, i, 0));
        }
        const auto s = tensornet::dense_scores(net, std::move(in));
        for (int i = 0; i < th; ++i)
          for (int u = 0; u < tw; ++u) {
            const int x = ox + u + kRadius, y = oy + i + kRadius;
            const std::size_t c = static_cast<std::size_t>(y) * W + x;
            if (!raw.valid(c)) continue;
            conf.values[c] = s.values[static_cast<std::size_t>(i) * s.cols + u];
            conf.valid[c] = 1;
          }
      },
      opt.threads > 0 ? opt.threads : thread_count());
  return conf;
}

inline ConfidenceMap confidence_map(const GrayImage& left, const DisparityMap& raw, int ndisp,
                                    const NetworkParams<float>& params, const InferenceOptions& opt = {}) {
  return confidence_map(left, raw, ndisp, Network<float>(evaluation_net_arch(), params), opt);
}

/// Reference path: each pixel's patch evaluated on its own.
inline ConfidenceMap confidence_map_per_patch(const GrayImage& left, const DisparityMap& raw, int ndisp,
                                              const Network<float>& net) {
  tensornet::check_params(evaluation_net_arch(), net.params());
  const int W = left.width(), H = left.height();
  ConfidenceMap conf(W, H);
  const auto dplane = disparity_plane(raw, ndisp);
  parallel_for(H, [&](int y) {
    tensornet::Workspace<float> ws;
    std::vector<float> patch(net.arch().input().size());
    for (int x = 0; x < W; ++x) {
      const std::size_t c = static_cast<std::size_t>(y) * W + x;
      if (!patch_fits(x, y, W, H) || !raw.valid(c)) continue;
      extract_eval_patch(left, dplane, x, y, patch.data());
      conf.values[c] = net.scores(patch.data(), 1, ws)[0];
      conf.valid[c] = 1;
    }
  });
  return conf;
}

/// Keeps raw disparities whose confidence is valid and >= threshold.
inline DisparityMap filter_disparity(const DisparityMap& raw, const ConfidenceMap& conf, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ParameterError("confidence threshold must lie in [0, 1]");
  if (raw.width() != conf.width || raw.height() != conf.height)
    throw ParameterError("filter_disparity: map and confidence differ in size");
  DisparityMap out(raw.width(), raw.height());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = raw.valid(i) && conf.valid[i] && conf.values[i] >= threshold ? raw[i] : kInvalidDisparity;
  out.set_ndisp(raw.ndisp());
  return out;
}

inline NetworkParams<float> train_evaluation_net(const EvalSampleSet& samples, const tensornet::TrainConfig& cfg,
                                                 std::uint64_t init_seed, tensornet::TrainResult* trace = nullptr,
                                                 const tensornet::EpochCallback& on_epoch = {}) {
  if (samples.degenerate) throw TrainingError("evaluation samples are degenerate (no mismatches)");
  Network<float> net(evaluation_net_arch(), init_seed);
  Rng rng(cfg.seed);
  auto res = tensornet::sgd_train(net, samples.data, cfg, rng, on_epoch);
  if (trace) *trace = std::move(res);
  return net.params();
}

}  // namespace dcnn::evalnet
