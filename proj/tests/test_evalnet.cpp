#include <gtest/gtest.h>

#include <cmath>

#include "dcnn/evalnet.hpp"
#include "dcnn/matchnet.hpp"

using namespace dcnn;
using namespace dcnn::evalnet;

namespace {

GrayImage random_image(int w, int h, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(w) * h);
  for (auto& x : v) x = static_cast<float>(rng.uniform01());
  return GrayImage(w, h, v);
}

DisparityMap random_disp(int w, int h, int ndisp, Rng& rng, double invalid = 0.1) {
  DisparityMap d(w, h);
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = rng.uniform01() < invalid ? kInvalidDisparity : static_cast<float>(rng.below(ndisp));
  return d;
}

}  // namespace

TEST(Arch, EvaluationNetShape) {
  auto a = evaluation_net_arch();
  EXPECT_EQ(a.input(), (Shape{1, 2, 101, 101}));
  EXPECT_EQ(a.flatten_width(), 2048u);
  int pools = 0;
  for (const auto& l : a.layers()) pools += l.kind == tensornet::LayerKind::maxpool;
  EXPECT_EQ(pools, 4);
  const int expect_h[] = {99, 99, 49, 47, 47, 23, 21, 21, 10, 8, 8, 4};
  for (int i = 0; i < 12; ++i) EXPECT_EQ(a.out_shape(i).h, expect_h[i]) << i;
  EXPECT_EQ(a.out_shape(9).d, 1);
  EXPECT_EQ(a.output().size(), 2u);
}

TEST(Labels, StrictThresholdAndIgnore) {
  DisparityMap raw(4, 1, std::vector<float>{3.0f, 3.5f, 2.0f, kInvalidDisparity});
  DisparityMap gt(4, 1, std::vector<float>{2.0f, 2.0f, kInvalidDisparity, 1.0f});
  auto lab = label_mismatches(raw, gt, 1.0);
  EXPECT_EQ(lab.mismatch, (std::vector<std::uint8_t>{0, 1, 0, 0}));
  EXPECT_EQ(lab.ignore, (std::vector<std::uint8_t>{0, 0, 1, 1}));
  EXPECT_THROW(label_mismatches(raw, DisparityMap(3, 1), 1.0), ParameterError);
}

TEST(Labels, PartitionProperty) {
  Rng rng(1);
  auto raw = random_disp(30, 20, 10, rng, 0.2), gt = random_disp(30, 20, 10, rng, 0.2);
  auto lab = label_mismatches(raw, gt, 1.0);
  std::size_t match = 0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    EXPECT_FALSE(lab.mismatch[i] && lab.ignore[i]);
    match += !lab.mismatch[i] && !lab.ignore[i];
  }
  EXPECT_EQ(match + lab.count_mismatch() + lab.count_ignored(), raw.size());
}

TEST(Sampling, AllNegativesAndBalancedPositives) {
  Rng rng(2);
  auto img = random_image(110, 105, rng);
  auto gt = random_disp(110, 105, 8, rng, 0.0);
  DisparityMap raw = gt;
  // exactly three in-bounds mismatches and one out of bounds
  raw(50, 50) = gt(50, 50) > 4 ? 0.0f : 7.0f;
  raw(55, 52) = gt(55, 52) > 4 ? 0.0f : 7.0f;
  raw(58, 53) = gt(58, 53) > 4 ? 0.0f : 7.0f;
  raw(10, 10) = gt(10, 10) > 4 ? 0.0f : 7.0f;
  raw.set_ndisp(8);
  auto lab = label_mismatches(raw, gt, 1.0);
  EvalScene sc{&img, &raw, &lab, 8};
  auto set = sample_eval_patches({sc}, 3);
  EXPECT_FALSE(set.degenerate);
  EXPECT_EQ(set.data.count(0), 3u);
  EXPECT_EQ(set.data.count(1), 3u);
  std::vector<float> p(set.data.sample_size());
  const auto plane = disparity_plane(raw, 8);
  for (std::size_t i = 0; i < set.provenance.size(); ++i) {
    const auto& pv = set.provenance[i];
    EXPECT_TRUE(patch_fits(pv.x, pv.y, 110, 105));
    EXPECT_GE(pv.x, 50);
    EXPECT_LE(pv.x, 110 - 51);
    EXPECT_EQ(lab.mismatch[pv.y * 110 + pv.x], set.data.labels[i] == 0);
    extract_eval_patch(img, plane, pv.x, pv.y, p.data());
    ASSERT_TRUE(std::equal(p.begin(), p.end(), set.data.sample(i)));
  }
  // the disparity plane is D_e / ndisp
  EXPECT_FLOAT_EQ(set.data.sample(0)[101 * 101 + 50 * 101 + 50], raw(set.provenance[0].x, set.provenance[0].y) / 8.0f);
  EvalSamplingOptions cap;
  cap.max_negatives = 2;
  EXPECT_EQ(sample_eval_patches({sc}, 3, cap).data.size(), 4u);
}

TEST(Sampling, DegenerateWithoutNegatives) {
  Rng rng(3);
  auto img = random_image(102, 102, rng);
  auto gt = random_disp(102, 102, 8, rng, 0.0);
  auto lab = label_mismatches(gt, gt, 1.0);
  auto set = sample_eval_patches({EvalScene{&img, &gt, &lab, 8}}, 1);
  EXPECT_TRUE(set.degenerate);
  EXPECT_EQ(set.data.size(), 0u);
  EXPECT_THROW(train_evaluation_net(set, tensornet::TrainConfig{}, 1), TrainingError);
}

TEST(Sampling, ScarcePositivesUseReplacement) {
  Rng rng(4);
  auto img = random_image(103, 103, rng);
  DisparityMap gt(103, 103, std::vector<float>(103 * 103, 5.0f));
  DisparityMap raw(103, 103, std::vector<float>(103 * 103, 0.0f));
  raw(51, 51) = 5.0f;
  auto lab = label_mismatches(raw, gt, 1.0);
  auto set = sample_eval_patches({EvalScene{&img, &raw, &lab, 8}}, 2);
  // 3x3 patch centers fit; one is correct, eight are mismatches
  EXPECT_EQ(set.data.count(0), 8u);
  EXPECT_EQ(set.data.count(1), 8u);
  for (std::size_t i = 0; i < set.provenance.size(); ++i)
    EXPECT_TRUE(set.data.labels[i] == 0 || set.provenance[i] == (EvalProvenance{0, 51, 51}));
}

TEST(Confidence, FastPathEqualsPerPatch) {
  Rng rng(5);
  auto img = random_image(118, 109, rng);
  auto raw = random_disp(118, 109, 12, rng, 0.1);
  Network<float> net(evaluation_net_arch(), 21);
  auto fast = confidence_map(img, raw, 12, net, {7, 1});
  auto slow = confidence_map_per_patch(img, raw, 12, net);
  ASSERT_EQ(fast.valid, slow.valid);
  double worst = 0;
  for (std::size_t i = 0; i < fast.size(); ++i)
    if (fast.valid[i]) {
      worst = std::max(worst, std::abs(double(fast.values[i]) - slow.values[i]));
      EXPECT_GE(fast.values[i], 0.0f);
      EXPECT_LE(fast.values[i], 1.0f);
    }
  EXPECT_LE(worst, 1e-5);
  EXPECT_GT(fast.valid_count(), 100u);
  for (int y = 0; y < 109; ++y)
    for (int x = 0; x < 118; ++x)
      if (x < 50 || y < 50 || x > 118 - 51 || y > 109 - 51) {
        EXPECT_FALSE(fast.valid[y * 118 + x]);
      }
  auto threaded = confidence_map(img, raw, 12, net, {7, 3});
  EXPECT_EQ(threaded.values, fast.values);
}

TEST(Confidence, RejectsForeignWeights) {
  GrayImage img(101, 101);
  DisparityMap raw(101, 101, 1.0f);
  auto p = tensornet::init_params<float>(matchnet::matching_net_arch(), 1);
  EXPECT_THROW(confidence_map(img, raw, 4, p), IncompatibleArchitecture);
}

TEST(Filter, ThresholdsAndMonotonicity) {
  Rng rng(6);
  auto raw = random_disp(20, 20, 9, rng, 0.1);
  ConfidenceMap conf(20, 20);
  for (std::size_t i = 0; i < conf.size(); ++i) {
    conf.values[i] = static_cast<float>(rng.uniform01());
    conf.valid[i] = rng.uniform01() < 0.9;
  }
  conf.values[0] = 1.0f;
  conf.valid[0] = 1;
  raw[0] = 2.0f;
  auto zero = filter_disparity(raw, conf, 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_EQ(zero.valid(i), raw.valid(i) && conf.valid[i] != 0);
  auto one = filter_disparity(raw, conf, 1.0);
  EXPECT_EQ(one.valid_count(), 1u);
  auto prev = zero;
  for (double R = 0.05; R <= 1.0; R += 0.05) {
    auto cur = filter_disparity(raw, conf, R);
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_TRUE(!cur.valid(i) || prev.valid(i));
    prev = cur;
  }
  EXPECT_LE(filter_disparity(raw, conf, 0.9).valid_count(), filter_disparity(raw, conf, 0.5).valid_count());
  EXPECT_THROW(filter_disparity(raw, conf, 1.5), ParameterError);
}
