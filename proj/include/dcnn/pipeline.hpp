#pragma once

// End-to-end run: transforms, cost volume, WTA, confidence, filtering and
// evaluation, with every emitted file listed in a manifest.

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/evalnet.hpp"
#include "dcnn/hash.hpp"
#include "dcnn/imageio.hpp"
#include "dcnn/matchnet.hpp"
#include "dcnn/metrics.hpp"
#include "dcnn/synthetic.hpp"

namespace dcnn::pipeline {

namespace fs = std::filesystem;
using tensornet::Network;
using tensornet::NetworkParams;

struct PipelineConfig {
  // Data: a Middlebury-style root, or synthetic scenes when empty.
  std::string dataset_root;
  imageio::Resolution resolution = imageio::Resolution::half;
  synthetic::SyntheticSceneSpec scene{192, 192, 16, 1.0, 0.2, 1.0, 0};
  int train_scenes = 4;
  int test_scenes = 2;

  transforms::TransformConfig transforms;
  tensornet::TrainConfig matcher_train{0.002, 0.0001, 20, 32, 0, 0.9};
  tensornet::TrainConfig evaluator_train{0.002, 0.0001, 10, 32, 0, 0.9};
  std::size_t match_samples_per_class = 2500;
  std::size_t eval_max_negatives = 2000;

  double te = 1.0;
  double R = 0.9;
  double curve_step = 0.05;
  std::uint64_t seed = 1;

  std::string output_dir = "out";
  std::string matcher_weights;    // load instead of training when set
  std::string evaluator_weights;  // load instead of training when set
  bool train = true;

  void validate() const {
    if (!(R >= 0.0 && R <= 1.0)) throw ConfigError("R must lie in [0, 1]");
    if (!(te > 0.0)) throw ConfigError("T_e must be positive");
    if (output_dir.empty()) throw ConfigError("an output directory is required");
    if (!dataset_root.empty() && !fs::is_directory(dataset_root))
      throw ConfigError("dataset root '" + dataset_root + "' does not exist");
    for (const auto* w : {&matcher_weights, &evaluator_weights})
      if (!w->empty() && !fs::exists(*w)) throw ConfigError("weight file '" + *w + "' does not exist");
    if (!train && (matcher_weights.empty() || evaluator_weights.empty()))
      throw ConfigError("training is disabled but weights were not supplied for both networks");
    if (dataset_root.empty()) {
      scene.validate();
      if (test_scenes < 1) throw ConfigError("need at least one test scene");
      if (train && train_scenes < 1) throw ConfigError("need at least one training scene");
    }
    transforms.validate();
    matcher_train.validate();
    evaluator_train.validate();
  }

  /// Canonical `key = value` listing; also the config-file format.
  std::map<std::string, std::string> to_kv() const {
    auto num = [](double v) {
      char buf[32];
      return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
    };
    std::map<std::string, std::string> kv;
    kv["dataset-root"] = dataset_root;
    kv["resolution"] = resolution == imageio::Resolution::full   ? "full"
                       : resolution == imageio::Resolution::half ? "half"
                                                                 : "quarter";
    kv["width"] = std::to_string(scene.width);
    kv["height"] = std::to_string(scene.height);
    kv["ndisp"] = std::to_string(scene.ndisp);
    kv["texture-density"] = num(scene.texture_density);
    kv["textureless"] = num(scene.textureless_fraction);
    kv["gain"] = num(scene.gain);
    kv["train-scenes"] = std::to_string(train_scenes);
    kv["test-scenes"] = std::to_string(test_scenes);
    kv["rank-window"] = std::to_string(transforms.rank_window);
    kv["companion-window"] = std::to_string(transforms.companion_window);
    kv["rays"] = std::to_string(transforms.ray_directions);
    auto put_train = [&](const std::string& p, const tensornet::TrainConfig& t) {
      kv[p + "-lr"] = num(t.lr_start) + ":" + num(t.lr_end);
      kv[p + "-epochs"] = std::to_string(t.epochs);
      kv[p + "-batch"] = std::to_string(t.batch_size);
      kv[p + "-momentum"] = num(t.momentum);
      kv[p + "-train-seed"] = std::to_string(t.seed);
    };
    put_train("matcher", matcher_train);
    put_train("evaluator", evaluator_train);
    kv["match-samples"] = std::to_string(match_samples_per_class);
    kv["eval-max-negatives"] = std::to_string(eval_max_negatives);
    kv["te"] = num(te);
    kv["R"] = num(R);
    kv["curve-step"] = num(curve_step);
    kv["seed"] = std::to_string(seed);
    kv["out"] = output_dir;
    kv["matcher-weights"] = matcher_weights;
    kv["evaluator-weights"] = evaluator_weights;
    kv["train"] = train ? "true" : "false";
    return kv;
  }

  /// Hash of everything that can change outputs (paths excluded).
  std::uint64_t hash() const {
    Fnv1a h;
    h.add("dcnn-config-v1");
    for (const auto& [k, v] : to_kv()) {
      if (k == "out" || k == "dataset-root" || k == "matcher-weights" || k == "evaluator-weights") continue;
      h.add("|").add(k).add("=").add(v);
    }
    return h.value();
  }
};

using Logger = std::function<void(const std::string&)>;

struct SceneResult {
  std::string name;
  metrics::EvalReport raw;
  metrics::EvalReport filtered;
  std::vector<metrics::ThresholdPoint> curve;
};

struct PipelineResult {
  std::vector<SceneResult> scenes;
  NetworkParams<float> matcher;
  NetworkParams<float> evaluator;
  std::string manifest_path;
};

/// Per-scene intermediate products of matching.
struct RawDisparity {
  transforms::ChannelStack stack;
  DisparityMap disparity;
};

inline RawDisparity match_scene(const imageio::StereoPairRecord& rec, const transforms::TransformConfig& cfg,
                                const Network<float>& matcher) {
  RawDisparity r;
  r.stack = matchnet::matching_input(rec.left, rec.right, cfg);
  r.disparity = matchnet::wta(matchnet::infer_cost_volume(r.stack, rec.calib.ndisp, matcher));
  return r;
}

/// Trains the evaluation network on the matcher's own raw maps of `records`.
inline NetworkParams<float> train_evaluator(const std::vector<imageio::StereoPairRecord>& records,
                                            const std::vector<DisparityMap>& raw, double te,
                                            const tensornet::TrainConfig& cfg, std::size_t max_negatives,
                                            std::uint64_t seed, const Logger& log) {
  std::vector<evalnet::MismatchLabels> labels;
  labels.reserve(records.size());
  std::vector<evalnet::EvalScene> scenes;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].gt) continue;
    labels.push_back(evalnet::label_mismatches(raw[i], *records[i].gt, te));
  }
  std::size_t k = 0;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].gt) scenes.push_back({&records[i].left, &raw[i], &labels[k++], records[i].calib.ndisp});
  evalnet::EvalSamplingOptions opt;
  opt.max_negatives = max_negatives;
  auto samples = evalnet::sample_eval_patches(scenes, seed, opt);
  if (samples.degenerate) {
    if (log) log("warning: the raw maps contain no mismatches; keeping an untrained evaluation network");
    return tensornet::init_params<float>(evalnet::evaluation_net_arch(), seed);
  }
  if (log) log("evaluation samples: " + std::to_string(samples.data.size()));
  return evalnet::train_evaluation_net(samples, cfg, seed, nullptr, [&](int e, double lr, double loss) {
    if (log) log("evaluator epoch " + std::to_string(e) + " lr " + metrics::format_number(lr) + " loss " +
                 metrics::format_number(loss));
  });
}

namespace detail {

inline void emit(const fs::path& root, const std::string& rel, const imageio::Bytes& bytes,
                 std::map<std::string, std::string>& files) {
  imageio::write_file(root / rel, bytes);
  files[rel] = hex64(Fnv1a().add(bytes).value());
}

inline void emit(const fs::path& root, const std::string& rel, const std::string& text,
                 std::map<std::string, std::string>& files) {
  emit(root, rel, imageio::Bytes(text.begin(), text.end()), files);
}

}  // namespace detail

inline PipelineResult run_pipeline(const PipelineConfig& cfg, const Logger& log = {}) {
  cfg.validate();
  const fs::path out = cfg.output_dir;
  std::map<std::string, std::string> files;

  std::vector<imageio::StereoPairRecord> train_recs, test_recs;
  if (cfg.dataset_root.empty()) {
    if (cfg.train && (cfg.matcher_weights.empty() || cfg.evaluator_weights.empty()))
      train_recs = synthetic::gen_suite(cfg.scene, cfg.train_scenes, synthetic::scene_seed(cfg.seed, -1));
    test_recs = synthetic::gen_suite(cfg.scene, cfg.test_scenes, synthetic::scene_seed(cfg.seed, -2));
    for (auto& r : test_recs) r.calib.dataset_name = "test-" + r.calib.dataset_name;
  } else {
    auto ds = imageio::load_dataset(cfg.dataset_root, imageio::DatasetOptions{cfg.resolution});
    for (const auto& s : ds.skipped)
      if (log) log("skipped scene " + s.scene + ": " + s.reason);
    train_recs = ds.records;
    test_recs = std::move(ds.records);
  }
  if (log) log("scenes: " + std::to_string(train_recs.size()) + " training, " + std::to_string(test_recs.size()) + " test");

  PipelineResult result;
  // Matching network.
  if (!cfg.matcher_weights.empty()) {
    result.matcher = tensornet::load_params(imageio::read_file(cfg.matcher_weights), matchnet::matching_net_arch());
  } else {
    auto samples = matchnet::sample_matching_patches(train_recs, cfg.transforms, cfg.match_samples_per_class,
                                                     Fnv1a().add("match-samples").add_u64(cfg.seed).value());
    if (log) log("matching samples: " + std::to_string(samples.data.size()));
    result.matcher = matchnet::train_matching_net(samples, cfg.matcher_train, cfg.seed, nullptr,
                                                  [&](int e, double lr, double loss) {
                                                    if (log)
                                                      log("matcher epoch " + std::to_string(e) + " lr " +
                                                          metrics::format_number(lr) + " loss " +
                                                          metrics::format_number(loss));
                                                  });
    detail::emit(out, "weights/matcher.dcnnw", tensornet::save_params(result.matcher), files);
  }
  const Network<float> matcher(matchnet::matching_net_arch(), result.matcher);

  // Evaluation network.
  if (!cfg.evaluator_weights.empty()) {
    result.evaluator =
        tensornet::load_params(imageio::read_file(cfg.evaluator_weights), evalnet::evaluation_net_arch());
  } else {
    std::vector<DisparityMap> raw;
    for (const auto& r : train_recs) {
      if (log) log("matching training scene " + r.calib.dataset_name);
      raw.push_back(match_scene(r, cfg.transforms, matcher).disparity);
    }
    result.evaluator = train_evaluator(train_recs, raw, cfg.te, cfg.evaluator_train, cfg.eval_max_negatives,
                                       Fnv1a().add("eval-samples").add_u64(cfg.seed).value(), log);
    detail::emit(out, "weights/evaluator.dcnnw", tensornet::save_params(result.evaluator), files);
  }
  const Network<float> evaluator(evalnet::evaluation_net_arch(), result.evaluator);

  // Test scenes.
  const auto grid = metrics::threshold_grid(cfg.curve_step);
  std::vector<metrics::EvalReport> raw_reports, filtered_reports;
  for (const auto& rec : test_recs) {
    const std::string name = rec.calib.dataset_name;
    if (log) log("processing " + name);
    const auto raw = match_scene(rec, cfg.transforms, matcher).disparity;
    const auto conf = evalnet::confidence_map(rec.left, raw, rec.calib.ndisp, evaluator);
    const auto filtered = evalnet::filter_disparity(raw, conf, cfg.R);
    const std::string dir = "scenes/" + name + "/";
    detail::emit(out, dir + "disp_raw.pfm", imageio::write_pfm(raw), files);
    detail::emit(out, dir + "confidence.pfm", imageio::write_pfm(conf), files);
    detail::emit(out, dir + "disp_filtered.pfm", imageio::write_pfm(filtered), files);
    SceneResult sr{name, {}, {}, {}};
    if (rec.gt) {
      const Mask* mask = rec.nonocc_mask ? &*rec.nonocc_mask : nullptr;
      sr.raw = metrics::evaluate(name, raw, *rec.gt, mask, &conf);
      sr.filtered = metrics::evaluate(name, filtered, *rec.gt, mask, &conf);
      sr.curve = metrics::error_vs_invalid_curve(raw, conf, *rec.gt, mask, grid);
      raw_reports.push_back(sr.raw);
      filtered_reports.push_back(sr.filtered);
      detail::emit(out, dir + "curve.csv", metrics::curve_csv(sr.curve), files);
      detail::emit(out, dir + "curve.svg", metrics::curve_svg(sr.curve), files);
    }
    result.scenes.push_back(std::move(sr));
  }
  if (!raw_reports.empty()) {
    detail::emit(out, "report_raw.csv", metrics::reports_csv(raw_reports), files);
    detail::emit(out, "report_filtered.csv", metrics::reports_csv(filtered_reports), files);
  }

  nlohmann::json manifest;
  manifest["format"] = "dcnn-manifest-v1";
  manifest["config_hash"] = hex64(cfg.hash());
  nlohmann::json config = nlohmann::json::object();
  for (const auto& [k, v] : cfg.to_kv())
    if (k != "out") config[k] = v;
  manifest["config"] = config;
  manifest["matcher"] = {{"architecture", hex64(matchnet::matching_net_arch().fingerprint())},
                         {"weights", hex64(Fnv1a().add(tensornet::save_params(result.matcher)).value())}};
  manifest["evaluator"] = {{"architecture", hex64(evalnet::evaluation_net_arch().fingerprint())},
                           {"weights", hex64(Fnv1a().add(tensornet::save_params(result.evaluator)).value())}};
  manifest["files"] = files;
  result.manifest_path = (out / "manifest.json").string();
  imageio::write_text(result.manifest_path, manifest.dump(2) + "\n");
  return result;
}

}  // namespace dcnn::pipeline
