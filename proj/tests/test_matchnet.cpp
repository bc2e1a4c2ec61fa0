#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dcnn/evalnet.hpp"
#include "dcnn/matchnet.hpp"
#include "dcnn/synthetic.hpp"

using namespace dcnn;
using namespace dcnn::matchnet;

namespace {

GrayImage random_image(int w, int h, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = static_cast<float>(rng.uniform01());
  return GrayImage(w, h, v);
}

transforms::TransformConfig small_cfg() { return {7, 9, 8}; }

}  // namespace

TEST(Arch, MatchingNetShape) {
  auto a = matching_net_arch();
  EXPECT_EQ(a.input(), (Shape{1, 6, 11, 11}));
  EXPECT_EQ(a.flatten_width(), 1600u);
  EXPECT_EQ(a.output(), (Shape{2, 1, 1, 1}));
  EXPECT_EQ(a.out_shape(2), (Shape{128, 3, 7, 7}));
  EXPECT_NE(a.fingerprint(), evalnet::evaluation_net_arch().fingerprint());
}

TEST(Patch, LayoutFollowsInterleavedStack) {
  Rng rng(1);
  auto l = random_image(30, 20, rng), r = random_image(30, 20, rng);
  auto inter = matching_input(l, r, small_cfg());
  std::vector<float> p(matching_net_arch().input().size());
  extract_patch(inter, 15, 10, 3, p.data());
  // depth 0 is left gray centered at (15,10); depth 1 is right gray at (12,10)
  EXPECT_EQ(p[0], l(10, 5));
  EXPECT_EQ(p[121 + 12], r(12 - 5 + 1, 5 + 1));
  EXPECT_EQ(p[5 * 121 + 60], inter.channels[5](12, 10));
}

TEST(CostVolume, FastPathEqualsPerPatch) {
  Rng rng(2);
  auto l = random_image(32, 32, rng), r = random_image(32, 32, rng);
  auto inter = matching_input(l, r, small_cfg());
  Network<float> net(matching_net_arch(), 17);
  auto fast = infer_cost_volume(inter, 8, net, {13, 1});
  auto slow = infer_cost_volume_per_patch(inter, 8, net);
  ASSERT_EQ(fast.valid, slow.valid);
  double worst = 0.0;
  for (std::size_t i = 0; i < fast.values.size(); ++i)
    if (fast.valid[i]) worst = std::max(worst, std::abs(double(fast.values[i]) - slow.values[i]));
  EXPECT_LE(worst, 1e-5);
}

TEST(CostVolume, ScheduleInvariantAndValidity) {
  Rng rng(3);
  auto l = random_image(40, 26, rng), r = random_image(40, 26, rng);
  auto inter = matching_input(l, r, small_cfg());
  Network<float> net(matching_net_arch(), 5);
  auto a = infer_cost_volume(inter, 6, net, {32, 1});
  auto b = infer_cost_volume(inter, 6, net, {32, 3});
  EXPECT_EQ(a, b);
  for (int d = 0; d < 6; ++d)
    for (int y = 0; y < 26; ++y)
      for (int x = 0; x < 40; ++x) {
        const bool expect = x - d >= 5 && x + 5 < 40 && y >= 5 && y + 5 < 26;
        ASSERT_EQ(a.is_valid(x, y, d), expect) << x << "," << y << "," << d;
        if (expect) {
          EXPECT_GE(a.at(x, y, d), 0.0f);
          EXPECT_LE(a.at(x, y, d), 1.0f);
        }
      }
}

TEST(CostVolume, RejectsForeignWeights) {
  auto params = tensornet::init_params<float>(evalnet::evaluation_net_arch(), 1);
  GrayImage img(16, 16, 0.5f);
  EXPECT_THROW(infer_cost_volume(img, img, imageio::CalibInfo{4, 16, 16, ""}, small_cfg(), params),
               IncompatibleArchitecture);
}

TEST(Wta, HandExamples) {
  CostVolume cv(2, 1, 3);
  const float a[3] = {0.9f, 0.1f, 0.5f}, b[3] = {0.2f, 0.2f, 0.8f};
  for (int d = 0; d < 3; ++d) {
    cv.set(0, 0, d, a[d]);
    cv.set(1, 0, d, b[d]);
  }
  auto m = wta(cv);
  EXPECT_EQ(m(0, 0), 1.0f);
  EXPECT_EQ(m(1, 0), 0.0f);
  EXPECT_EQ(m.ndisp(), 3);
  CostVolume empty(1, 1, 4);
  EXPECT_FALSE(wta(empty).valid(0));
}

TEST(Wta, MatchesLinearScanOracle) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const int W = rng.uniform_int(1, 9), H = rng.uniform_int(1, 9), N = rng.uniform_int(1, 12);
    CostVolume cv(W, H, N);
    for (int d = 0; d < N; ++d)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (rng.uniform01() < 0.8) cv.set(x, y, d, static_cast<float>(rng.below(5)) / 4.0f);
    auto m = wta(cv);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        int best = -1;
        for (int d = 0; d < N; ++d)
          if (cv.is_valid(x, y, d) && (best < 0 || cv.at(x, y, d) < cv.at(x, y, best))) best = d;
        if (best < 0)
          EXPECT_FALSE(m.valid(static_cast<std::size_t>(y) * W + x));
        else
          EXPECT_EQ(m(x, y), static_cast<float>(best));
      }
  }
}

TEST(Baseline, IdenticalImagesPreferZero) {
  Rng rng(5);
  auto img = random_image(40, 30, rng);
  for (auto method : {BaselineMethod::sad, BaselineMethod::ssd, BaselineMethod::ncc, BaselineMethod::census}) {
    auto cv = baseline_cost(img, img, 6, method, 5);
    auto m = wta(cv);
    for (int y = 2; y < 28; ++y)
      for (int x = 2; x < 38; ++x) EXPECT_EQ(m(x, y), 0.0f);
    for (float v : cv.values)
      if (std::isfinite(v)) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
      }
  }
  auto sad = baseline_cost(img, img, 3, BaselineMethod::sad, 5);
  auto ncc = baseline_cost(img, img, 3, BaselineMethod::ncc, 5);
  EXPECT_EQ(sad.at(10, 10, 0), 0.0f);
  EXPECT_NEAR(ncc.at(10, 10, 0), 0.0f, 1e-7);
}

TEST(Baseline, SadMatchesTripleLoop) {
  Rng rng(6);
  auto l = random_image(24, 18, rng), r = random_image(24, 18, rng);
  auto cv = baseline_cost(l, r, 5, BaselineMethod::sad, 3);
  for (int d = 0; d < 5; ++d)
    for (int y = 0; y < 18; ++y)
      for (int x = 0; x < 24; ++x) {
        const bool fits = y >= 1 && y + 1 < 18 && x + 1 < 24 && x - d - 1 >= 0;
        ASSERT_EQ(cv.is_valid(x, y, d), fits);
        if (!fits) continue;
        double s = 0;
        for (int i = -1; i <= 1; ++i)
          for (int j = -1; j <= 1; ++j) s += std::abs(double(l(x + j, y + i)) - r(x - d + j, y + i));
        EXPECT_NEAR(cv.at(x, y, d), static_cast<float>(s / 9.0), 1e-10);
      }
}

TEST(Baseline, CensusCountsFlippedBits) {
  auto l = GrayImage::from_levels(3, 3, {1, 1, 1, 1, 5, 1, 1, 1, 1});
  auto r = GrayImage::from_levels(3, 3, {9, 9, 9, 9, 5, 1, 1, 1, 1});
  auto cv = baseline_cost(l, r, 1, BaselineMethod::census, 3);
  EXPECT_FLOAT_EQ(cv.at(1, 1, 0), 4.0f / 8.0f);
  EXPECT_THROW(parse_baseline("zncc"), ParameterError);
  EXPECT_THROW(baseline_cost(l, r, 1, BaselineMethod::sad, 4), ParameterError);
}

TEST(Baseline, NccFlatWindow) {
  GrayImage flat(9, 9, 0.3f);
  auto cv = baseline_cost(flat, flat, 1, BaselineMethod::ncc, 3);
  EXPECT_FLOAT_EQ(cv.at(4, 4, 0), 0.5f);
}

TEST(Sampling, BalancedAndAuditable) {
  synthetic::SyntheticSceneSpec spec;
  spec.width = 80;
  spec.height = 70;
  spec.ndisp = 12;
  auto recs = synthetic::gen_suite(spec, 3, 9);
  recs[1].gt.reset();
  auto cfg = small_cfg();
  auto set = sample_matching_patches(recs, cfg, 300, 4);
  EXPECT_EQ(set.data.count(0), 300u);
  EXPECT_EQ(set.data.count(1), 300u);
  ASSERT_EQ(set.provenance.size(), 600u);
  std::vector<transforms::ChannelStack> stacks;
  for (const auto& r : recs) stacks.push_back(matching_input(r.left, r.right, cfg));
  std::vector<float> p(set.data.sample_size());
  for (std::size_t i = 0; i < set.provenance.size(); ++i) {
    const auto& pv = set.provenance[i];
    ASSERT_NE(pv.scene, 1);
    const float dt = (*recs[pv.scene].gt)(pv.x, pv.y);
    EXPECT_TRUE(window_pair_fits(pv.x, pv.y, pv.d, 5, 80, 70));
    EXPECT_GE(pv.x - pv.d, 5);
    EXPECT_LT(pv.d, 12);
    if (set.data.labels[i] == 0)
      EXPECT_EQ(pv.d, std::lround(dt));
    else
      EXPECT_GT(std::abs(pv.d - dt), 1.0f);
    extract_patch(stacks[pv.scene], pv.x, pv.y, pv.d, p.data());
    ASSERT_TRUE(std::equal(p.begin(), p.end(), set.data.sample(i)));
  }
  auto again = sample_matching_patches(recs, cfg, 300, 4);
  EXPECT_EQ(again.data.inputs, set.data.inputs);
  EXPECT_EQ(again.provenance, set.provenance);
}

TEST(Sampling, NoEligiblePixels) {
  auto rec = synthetic::gen_synthetic({});
  rec.gt = DisparityMap(rec.left.width(), rec.left.height());
  std::vector<imageio::StereoPairRecord> recs{rec};
  EXPECT_THROW(sample_matching_patches(recs, small_cfg(), 10, 1), SamplingError);
  recs[0].gt.reset();
  EXPECT_THROW(sample_matching_patches(recs, small_cfg(), 10, 1), SamplingError);
}

TEST(Train, SeparableToyPatches) {
  auto a = matching_net_arch();
  Rng rng(8);
  auto make = [&](int n) {
    PatchSampleSet s;
    s.data.shape = a.input();
    for (int i = 0; i < n; ++i) {
      const int t = i % 2;
      float* p = s.data.append(t);
      for (std::size_t k = 0; k < s.data.sample_size(); ++k)
        p[k] = static_cast<float>(0.5 * rng.uniform01() + (t ? 0.5 : 0.0));
    }
    return s;
  };
  auto train = make(400), held = make(200);
  tensornet::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.momentum = 0.9;
  auto params = train_matching_net(train, cfg, 1);
  EXPECT_GE(tensornet::classification_accuracy(Network<float>(a, params), held.data), 0.95);
}

TEST(Export, HeaderAndPayload) {
  CostVolume cv(2, 1, 2);
  cv.set(1, 0, 1, 0.25f);
  auto b = export_cost_volume(cv);
  const std::string header = "DCNNCV 1\nwidth 2\nheight 1\nndisp 2\n";
  ASSERT_EQ(b.size(), header.size() + 16);
  EXPECT_EQ(std::string(b.begin(), b.begin() + header.size()), header);
  float last;
  std::memcpy(&last, b.data() + b.size() - 4, 4);
  EXPECT_EQ(last, 0.25f);
}
