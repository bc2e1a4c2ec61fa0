#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "dcnn/dcnn.hpp"

namespace {

using namespace dcnn;
namespace fs = std::filesystem;

void log_line(const std::string& s) { std::cerr << s << '\n'; }

tensornet::TrainConfig parse_schedule(tensornet::TrainConfig cfg, const std::string& lr) {
  const auto colon = lr.find(':');
  try {
    std::size_t used = 0;
    if (colon == std::string::npos) {
      cfg.lr_start = cfg.lr_end = std::stod(lr, &used);
      if (used != lr.size()) throw std::invalid_argument(lr);
    } else {
      const std::string a = lr.substr(0, colon), b = lr.substr(colon + 1);
      cfg.lr_start = std::stod(a, &used);
      if (used != a.size()) throw std::invalid_argument(a);
      cfg.lr_end = std::stod(b, &used);
      if (used != b.size()) throw std::invalid_argument(b);
    }
  } catch (const std::logic_error&) {
    throw ConfigError("learning rate '" + lr + "' is not of the form START:END");
  }
  return cfg;
}

struct TrainFlags {
  std::string lr = "0.002:0.0001";
  tensornet::TrainConfig cfg{0.002, 0.0001, 20, 32, 0, 0.9};

  void add(CLI::App* app, const std::string& prefix = "") {
    app->add_option("--" + prefix + "lr", lr, "Learning rate schedule START:END (linear per epoch)")
        ->capture_default_str();
    app->add_option("--" + prefix + "epochs", cfg.epochs)->capture_default_str();
    app->add_option("--" + prefix + "batch", cfg.batch_size)->capture_default_str();
    app->add_option("--" + prefix + "momentum", cfg.momentum)->capture_default_str();
    app->add_option("--" + prefix + "train-seed", cfg.seed, "Shuffling seed")->capture_default_str();
  }
  tensornet::TrainConfig resolve() const { return parse_schedule(cfg, lr); }
};

void add_transform_flags(CLI::App* app, transforms::TransformConfig& t) {
  app->add_option("--rank-window", t.rank_window)->capture_default_str();
  app->add_option("--companion-window", t.companion_window)->capture_default_str();
  app->add_option("--rays", t.ray_directions, "Companion ray directions (4 or 8)")->capture_default_str();
}

void add_scene_flags(CLI::App* app, synthetic::SyntheticSceneSpec& s) {
  app->add_option("--width", s.width)->capture_default_str();
  app->add_option("--height", s.height)->capture_default_str();
  app->add_option("--ndisp", s.ndisp)->capture_default_str();
  app->add_option("--texture-density", s.texture_density)->capture_default_str();
  app->add_option("--textureless", s.textureless_fraction, "Image fraction covered by flat rectangles")
      ->capture_default_str();
  app->add_option("--gain", s.gain, "Lighting gain on the right view")->capture_default_str();
}

imageio::Dataset load_data(const std::string& root, const std::string& resolution) {
  auto ds = imageio::load_dataset(root, imageio::DatasetOptions{imageio::parse_resolution(resolution)});
  for (const auto& s : ds.skipped) log_line("skipped " + s.scene + ": " + s.reason);
  if (ds.records.empty()) throw IoError("no loadable scenes under " + root);
  return ds;
}

int resolve_ndisp(int ndisp, const std::string& calib) {
  if (!calib.empty()) {
    const auto bytes = imageio::read_file(calib);
    return imageio::parse_calib(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())).ndisp;
  }
  if (ndisp < 1) throw ConfigError("either --ndisp or --calib is required");
  return ndisp;
}

std::optional<Mask> load_mask(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return imageio::decode_mask(imageio::read_file(path));
}

int gradcheck(std::uint64_t seed, int per_layer) {
  bool ok = true;
  const std::pair<const char*, tensornet::Architecture> archs[] = {{"matching", matchnet::matching_net_arch()},
                                                                  {"evaluation", evalnet::evaluation_net_arch()}};
  for (const auto& [name, arch] : archs) {
    tensornet::Network<double> net(arch, tensornet::init_params<double>(arch, seed));
    Rng rng(seed ^ 0x5eedull);
    std::vector<double> input(arch.input().size());
    for (auto& v : input) v = rng.uniform(0.0, 1.0);
    tensornet::GradCheckOptions opt;
    opt.params_per_layer = per_layer;
    opt.seed = seed;
    const auto res = tensornet::grad_check(net, input, 1, opt);
    const bool pass = res.max_relative_error < 1e-4;
    ok = ok && pass;
    std::printf("%s max_relative_error %.3e checked %zu reduced_steps %zu unresolved %zu %s\n", name,
                res.max_relative_error, res.checked, res.reduced_steps, res.unresolved_kinks, pass ? "PASS" : "FAIL");
    for (std::size_t l = 0; l < arch.size(); ++l)
      if (arch.layers()[l].has_params()) std::printf("  layer %zu %.3e\n", l, res.layer_max[l]);
  }
  return ok ? 0 : 1;
}

/// Splices `key = value` lines of the file named by `--config` into the
/// argument list as `--key value`, skipping keys already given as flags.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  auto it = std::find_if(args.begin(), args.end(),
                         [](const std::string& a) { return a == "--config" || a.rfind("--config=", 0) == 0; });
  if (it == args.end()) return args;
  std::string file;
  auto after = it;
  if (*it == "--config") {
    if (std::next(it) == args.end()) return args;
    file = *std::next(it);
    after = it + 2;
  } else {
    file = it->substr(9);
    after = it + 1;
  }
  auto given = [&](const std::string& key) {
    return std::any_of(args.begin(), args.end(),
                       [&](const std::string& a) { return a == "--" + key || a.rfind("--" + key + "=", 0) == 0; });
  };
  const auto bytes = imageio::read_file(file);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::vector<std::string> extra;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string v) {
    const auto b = v.find_first_not_of(" \t\r"), e = v.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : v.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(file + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.empty()) throw ParseError(file + ":" + std::to_string(line_no) + ": empty key");
    if (key == "config" || given(key)) continue;
    extra.push_back("--" + key);
    extra.push_back(value);
  }
  const auto pos = after - args.begin();
  args.insert(args.begin() + pos, extra.begin(), extra.end());
  return args;
}

int run(int argc, char** argv) {
  CLI::App app{"Deep stereo matching with learned matching and evaluation networks"};
  app.require_subcommand(1);
  app.allow_extras(false);

  // prepare
  std::string prep_root, prep_out, prep_res = "half";
  auto* prepare = app.add_subcommand("prepare", "Load a Middlebury-style dataset, rescale it and write it out");
  prepare->add_option("--dataset-root", prep_root)->required();
  prepare->add_option("--resolution", prep_res, "full | half | quarter")->capture_default_str();
  prepare->add_option("--out", prep_out)->required();

  // synth
  synthetic::SyntheticSceneSpec synth_spec;
  int synth_count = 10;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate random-dot stereo scenes with exact ground truth");
  synth->add_option("--scenes", synth_count)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  add_scene_flags(synth, synth_spec);
  synth->add_option("--out", synth_out)->required();

  // train-matcher
  std::string tm_data, tm_res = "full", tm_out;
  TrainFlags tm_train;
  transforms::TransformConfig tm_tf;
  std::size_t tm_samples = pipeline::PipelineConfig{}.match_samples_per_class;
  std::uint64_t tm_seed = 1;
  auto* train_matcher = app.add_subcommand("train-matcher", "Train the matching network on scenes with ground truth");
  train_matcher->add_option("--data", tm_data, "Scene root")->required();
  train_matcher->add_option("--resolution", tm_res)->capture_default_str();
  train_matcher->add_option("--samples", tm_samples, "Patches per class")->capture_default_str();
  train_matcher->add_option("--seed", tm_seed, "Sampling and initialization seed")->capture_default_str();
  tm_train.add(train_matcher);
  add_transform_flags(train_matcher, tm_tf);
  train_matcher->add_option("--out", tm_out, "Weight file")->required();

  // train-evaluator
  std::string te_data, te_res = "full", te_matcher, te_out;
  TrainFlags te_train;
  te_train.cfg = pipeline::PipelineConfig{}.evaluator_train;
  transforms::TransformConfig te_tf;
  double te_te = 1.0;
  std::size_t te_maxneg = pipeline::PipelineConfig{}.eval_max_negatives;
  std::uint64_t te_seed = 1;
  auto* train_eval = app.add_subcommand("train-evaluator", "Train the evaluation network on the matcher's raw maps");
  train_eval->add_option("--data", te_data, "Scene root")->required();
  train_eval->add_option("--resolution", te_res)->capture_default_str();
  train_eval->add_option("--matcher", te_matcher, "Matching network weights")->required();
  train_eval->add_option("--te", te_te, "Mismatch threshold in pixels")->capture_default_str();
  train_eval->add_option("--max-negatives", te_maxneg, "Cap on mismatch samples (0 = all)")->capture_default_str();
  train_eval->add_option("--seed", te_seed)->capture_default_str();
  te_train.add(train_eval);
  add_transform_flags(train_eval, te_tf);
  train_eval->add_option("--out", te_out, "Weight file")->required();

  // infer
  std::string in_left, in_right, in_calib, in_weights, in_out, in_cv, in_method = "cnn";
  int in_ndisp = 0, in_window = 5;
  transforms::TransformConfig in_tf;
  auto* infer = app.add_subcommand("infer", "Compute a cost volume and its winner-take-all disparity map");
  infer->add_option("--left", in_left)->required();
  infer->add_option("--right", in_right)->required();
  infer->add_option("--ndisp", in_ndisp);
  infer->add_option("--calib", in_calib);
  infer->add_option("--method", in_method, "cnn | sad | ssd | ncc | census")->capture_default_str();
  infer->add_option("--window", in_window, "Baseline window size")->capture_default_str();
  infer->add_option("--weights", in_weights, "Matching network weights (cnn)");
  infer->add_option("--cost-volume", in_cv, "Also write the raw cost volume here");
  add_transform_flags(infer, in_tf);
  infer->add_option("--out", in_out, "Disparity PFM")->required();

  // filter
  std::string fl_left, fl_disp, fl_calib, fl_weights, fl_out, fl_conf;
  int fl_ndisp = 0;
  double fl_r = 0.9;
  auto* filter = app.add_subcommand("filter", "Score a raw disparity map and drop pixels below confidence R");
  filter->add_option("--left", fl_left)->required();
  filter->add_option("--disp", fl_disp, "Raw disparity PFM")->required();
  filter->add_option("--ndisp", fl_ndisp);
  filter->add_option("--calib", fl_calib);
  filter->add_option("--weights", fl_weights, "Evaluation network weights")->required();
  filter->add_option("--R", fl_r, "Confidence threshold")->capture_default_str();
  filter->add_option("--confidence", fl_conf, "Also write the confidence map here");
  filter->add_option("--out", fl_out, "Filtered disparity PFM")->required();

  // eval
  std::string ev_gt, ev_pred, ev_mask, ev_conf, ev_scene = "scene";
  auto* eval = app.add_subcommand("eval", "Print the metric CSV row of a disparity map");
  eval->add_option("--gt", ev_gt)->required();
  eval->add_option("--pred", ev_pred)->required();
  eval->add_option("--mask", ev_mask);
  eval->add_option("--confidence", ev_conf);
  eval->add_option("--scene", ev_scene)->capture_default_str();

  // curve
  std::string cv_gt, cv_raw, cv_mask, cv_conf, cv_svg;
  double cv_step = 0.05;
  auto* curve = app.add_subcommand("curve", "Print the error-versus-invalid-rate curve over confidence thresholds");
  curve->add_option("--gt", cv_gt)->required();
  curve->add_option("--raw", cv_raw)->required();
  curve->add_option("--confidence", cv_conf)->required();
  curve->add_option("--mask", cv_mask);
  curve->add_option("--step", cv_step)->capture_default_str();
  curve->add_option("--svg", cv_svg, "Also write an SVG plot here");

  // gradcheck
  std::uint64_t gc_seed = 1;
  int gc_per_layer = 50;
  auto* grad = app.add_subcommand("gradcheck", "Check backprop against central differences on both networks");
  grad->add_option("--seed", gc_seed)->capture_default_str();
  grad->add_option("--params-per-layer", gc_per_layer)->capture_default_str();

  // run
  pipeline::PipelineConfig pc;
  std::string run_res = "half";
  TrainFlags run_mt, run_et;
  run_mt.cfg = pc.matcher_train;
  run_et.cfg = pc.evaluator_train;
  auto* runp = app.add_subcommand("run", "Run the whole pipeline and write every artifact plus a manifest");
  std::string config_file;
  runp->add_option("--config", config_file, "Flat key = value file; flags override it");
  runp->add_option("--dataset-root", pc.dataset_root, "Middlebury-style root (synthetic scenes when omitted)");
  runp->add_option("--resolution", run_res)->capture_default_str();
  add_scene_flags(runp, pc.scene);
  runp->add_option("--train-scenes", pc.train_scenes)->capture_default_str();
  runp->add_option("--test-scenes", pc.test_scenes)->capture_default_str();
  add_transform_flags(runp, pc.transforms);
  run_mt.add(runp, "matcher-");
  run_et.add(runp, "evaluator-");
  runp->add_option("--match-samples", pc.match_samples_per_class)->capture_default_str();
  runp->add_option("--eval-max-negatives", pc.eval_max_negatives)->capture_default_str();
  runp->add_option("--te", pc.te)->capture_default_str();
  runp->add_option("--R", pc.R)->capture_default_str();
  runp->add_option("--curve-step", pc.curve_step)->capture_default_str();
  runp->add_option("--seed", pc.seed)->capture_default_str();
  runp->add_option("--out", pc.output_dir)->capture_default_str();
  runp->add_option("--matcher-weights", pc.matcher_weights);
  runp->add_option("--evaluator-weights", pc.evaluator_weights);
  runp->add_option("--train", pc.train, "Allow training when weights are missing")->capture_default_str();

  std::vector<std::string> args(argv + 1, argv + argc);
  args = expand_config(std::move(args));
  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*prepare) {
    const auto ds = load_data(prep_root, prep_res);
    for (const auto& r : ds.records) imageio::save_scene(fs::path(prep_out) / r.calib.dataset_name, r);
    std::printf("prepared %zu scenes, skipped %zu\n", ds.records.size(), ds.skipped.size());
  } else if (*synth) {
    for (const auto& r : synthetic::gen_suite(synth_spec, synth_count, synth_seed))
      imageio::save_scene(fs::path(synth_out) / r.calib.dataset_name, r);
    std::printf("wrote %d scenes to %s\n", synth_count, synth_out.c_str());
  } else if (*train_matcher) {
    const auto cfg = tm_train.resolve();
    const auto ds = load_data(tm_data, tm_res);
    const auto samples = matchnet::sample_matching_patches(ds.records, tm_tf, tm_samples, tm_seed);
    log_line("matching samples: " + std::to_string(samples.data.size()));
    const auto params = matchnet::train_matching_net(samples, cfg, tm_seed, nullptr, [](int e, double lr, double loss) {
      std::printf("epoch %d lr %s loss %s\n", e, metrics::format_number(lr).c_str(),
                  metrics::format_number(loss).c_str());
      std::fflush(stdout);
    });
    imageio::write_file(tm_out, tensornet::save_params(params));
  } else if (*train_eval) {
    const auto cfg = te_train.resolve();
    const auto ds = load_data(te_data, te_res);
    const tensornet::Network<float> matcher(
        matchnet::matching_net_arch(),
        tensornet::load_params(imageio::read_file(te_matcher), matchnet::matching_net_arch()));
    std::vector<DisparityMap> raw;
    for (const auto& r : ds.records) raw.push_back(pipeline::match_scene(r, te_tf, matcher).disparity);
    const auto params = pipeline::train_evaluator(ds.records, raw, te_te, cfg, te_maxneg, te_seed, [](const std::string& s) {
      std::printf("%s\n", s.c_str());
      std::fflush(stdout);
    });
    imageio::write_file(te_out, tensornet::save_params(params));
  } else if (*infer) {
    const int ndisp = resolve_ndisp(in_ndisp, in_calib);
    const auto left = imageio::load_image(in_left), right = imageio::load_image(in_right);
    matchnet::CostVolume cv;
    if (in_method == "cnn") {
      if (in_weights.empty()) throw ConfigError("--weights is required for the cnn method");
      const auto params = tensornet::load_params(imageio::read_file(in_weights), matchnet::matching_net_arch());
      in_tf.validate();
      imageio::CalibInfo calib{ndisp, left.width(), left.height(), ""};
      cv = matchnet::infer_cost_volume(left, right, calib, in_tf, params);
    } else {
      cv = matchnet::baseline_cost(left, right, ndisp, matchnet::parse_baseline(in_method), in_window);
    }
    if (!in_cv.empty()) imageio::write_file(in_cv, matchnet::export_cost_volume(cv));
    imageio::write_file(in_out, imageio::write_pfm(matchnet::wta(cv)));
  } else if (*filter) {
    const int ndisp = resolve_ndisp(fl_ndisp, fl_calib);
    const auto left = imageio::load_image(fl_left);
    const auto raw = imageio::read_pfm(imageio::read_file(fl_disp));
    const auto params = tensornet::load_params(imageio::read_file(fl_weights), evalnet::evaluation_net_arch());
    const auto conf = evalnet::confidence_map(left, raw, ndisp, params);
    if (!fl_conf.empty()) imageio::write_file(fl_conf, imageio::write_pfm(conf));
    imageio::write_file(fl_out, imageio::write_pfm(evalnet::filter_disparity(raw, conf, fl_r)));
  } else if (*eval) {
    const auto gt = imageio::read_pfm(imageio::read_file(ev_gt));
    const auto pred = imageio::read_pfm(imageio::read_file(ev_pred));
    const auto mask = load_mask(ev_mask);
    std::optional<ConfidenceMap> conf;
    if (!ev_conf.empty()) conf = imageio::read_confidence_pfm(imageio::read_file(ev_conf));
    const auto row = metrics::evaluate(ev_scene, pred, gt, mask ? &*mask : nullptr, conf ? &*conf : nullptr);
    std::printf("%s\n%s\n", metrics::kReportHeader, metrics::report_row(row).c_str());
  } else if (*curve) {
    const auto gt = imageio::read_pfm(imageio::read_file(cv_gt));
    const auto raw = imageio::read_pfm(imageio::read_file(cv_raw));
    const auto conf = imageio::read_confidence_pfm(imageio::read_file(cv_conf));
    const auto mask = load_mask(cv_mask);
    const auto pts = metrics::error_vs_invalid_curve(raw, conf, gt, mask ? &*mask : nullptr,
                                                     metrics::threshold_grid(cv_step));
    std::fputs(metrics::curve_csv(pts).c_str(), stdout);
    if (!cv_svg.empty()) imageio::write_text(cv_svg, metrics::curve_svg(pts));
  } else if (*grad) {
    return gradcheck(gc_seed, gc_per_layer);
  } else if (*runp) {
    pc.resolution = imageio::parse_resolution(run_res);
    pc.matcher_train = run_mt.resolve();
    pc.evaluator_train = run_et.resolve();
    const auto res = pipeline::run_pipeline(pc, log_line);
    std::vector<metrics::EvalReport> rows;
    for (const auto& s : res.scenes) rows.push_back(s.filtered);
    if (!rows.empty()) std::fputs(metrics::reports_csv(rows).c_str(), stdout);
    log_line("manifest: " + res.manifest_path);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dcnn::Error& e) {
    std::cerr << nlohmann::json{{"error", e.kind()}, {"message", e.what()}}.dump() << '\n';
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
  }
  return 1;
}
