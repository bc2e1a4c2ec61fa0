// Generates a synthetic scene, matches it with the census baseline (or a
// trained matching network when weights are given), filters it with an
// evaluation network when those weights are given too, and prints metrics.
//
//   sample_quickstart [matcher.dcnnw [evaluator.dcnnw]]

#include <cstdio>

#include "dcnn/dcnn.hpp"

using namespace dcnn;

int main(int argc, char** argv) {
  synthetic::SyntheticSceneSpec spec;
  spec.width = spec.height = 128;
  spec.ndisp = 16;
  spec.seed = 2024;
  const auto scene = synthetic::gen_synthetic(spec);

  matchnet::CostVolume cv;
  if (argc > 1) {
    const auto arch = matchnet::matching_net_arch();
    const auto params = tensornet::load_params(imageio::read_file(argv[1]), arch);
    cv = matchnet::infer_cost_volume(scene.left, scene.right, scene.calib, transforms::TransformConfig{}, params);
  } else {
    cv = matchnet::baseline_cost(scene.left, scene.right, spec.ndisp, matchnet::BaselineMethod::census, 7);
  }
  const auto raw = matchnet::wta(cv);
  const Mask* nonocc = &*scene.nonocc_mask;

  std::vector<metrics::EvalReport> rows{metrics::evaluate("raw", raw, *scene.gt, nonocc)};
  if (argc > 2) {
    const auto params = tensornet::load_params(imageio::read_file(argv[2]), evalnet::evaluation_net_arch());
    const auto conf = evalnet::confidence_map(scene.left, raw, spec.ndisp, params);
    rows.push_back(metrics::evaluate("filtered", evalnet::filter_disparity(raw, conf, 0.9), *scene.gt, nonocc, &conf));
  }
  std::fputs(metrics::reports_csv(rows, false).c_str(), stdout);
  imageio::write_file("quickstart_disparity.pfm", imageio::write_pfm(raw));
  return 0;
}
