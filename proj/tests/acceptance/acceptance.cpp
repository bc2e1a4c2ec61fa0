// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 6-8 share state: the matcher trained in 6 feeds 7, and the weights
// of both networks feed the reproducibility runs in 8.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dcnn/dcnn.hpp"

using namespace dcnn;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class ThreadOverride {
 public:
  explicit ThreadOverride(int n) {
    if (const char* v = std::getenv("DCNN_THREADS")) saved_ = v;
    setenv("DCNN_THREADS", std::to_string(n).c_str(), 1);
  }
  ~ThreadOverride() {
    if (saved_) setenv("DCNN_THREADS", saved_->c_str(), 1);
    else unsetenv("DCNN_THREADS");
  }

 private:
  std::optional<std::string> saved_;
};

GrayImage random_image(Rng& rng, int w, int h, int levels) {
  std::vector<std::uint8_t> lv(static_cast<std::size_t>(w) * h);
  for (auto& v : lv) v = static_cast<std::uint8_t>(rng.below(levels) * (255 / (levels - 1)));
  return GrayImage::from_levels(w, h, lv);
}

GrayImage remap(const GrayImage& img, const std::array<std::uint8_t, 256>& f) {
  auto lv = img.levels();
  for (auto& v : lv) v = f[v];
  return GrayImage::from_levels(img.width(), img.height(), lv);
}

// Independent brute-force references.

std::vector<float> naive_rank(const GrayImage& img, int w) {
  const int W = img.width(), H = img.height(), r = w / 2;
  const auto lv = img.levels();
  std::vector<float> out(lv.size());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int total = 0, brighter = 0;
      for (int yy = std::max(0, y - r); yy <= std::min(H - 1, y + r); ++yy)
        for (int xx = std::max(0, x - r); xx <= std::min(W - 1, x + r); ++xx) {
          ++total;
          brighter += lv[yy * W + xx] > lv[y * W + x];
        }
      out[y * W + x] = static_cast<float>(brighter) / static_cast<float>(total);
    }
  return out;
}

std::vector<float> naive_companion(const GrayImage& img, int w) {
  const int W = img.width(), H = img.height(), r = w / 2;
  const auto lv = img.levels();
  const int dirs[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  std::vector<float> out(lv.size(), 0.0f);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      int total = 0, equal = 0;
      for (const auto& d : dirs)
        for (int k = 1; k <= r; ++k) {
          const int qx = x + k * d[0], qy = y + k * d[1];
          if (qx < 0 || qy < 0 || qx >= W || qy >= H) break;
          ++total;
          equal += lv[qy * W + qx] == lv[y * W + x];
        }
      if (total > 0) out[y * W + x] = static_cast<float>(equal) / static_cast<float>(total);
    }
  return out;
}

DisparityMap naive_wta(const matchnet::CostVolume& cv) {
  DisparityMap out(cv.width, cv.height);
  for (int y = 0; y < cv.height; ++y)
    for (int x = 0; x < cv.width; ++x) {
      int best = -1;
      for (int d = 0; d < cv.ndisp; ++d)
        if (cv.is_valid(x, y, d) && (best < 0 || cv.at(x, y, d) < cv.at(x, y, best))) best = d;
      if (best >= 0) out(x, y) = static_cast<float>(best);
    }
  return out;
}

// Criteria.

Verdict gradient_integrity() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string parts;
  for (const auto& [name, arch] : {std::pair{"matching", matchnet::matching_net_arch()},
                                   std::pair{"evaluation", evalnet::evaluation_net_arch()}}) {
    tensornet::Network<double> net(arch, tensornet::init_params<double>(arch, 2024));
    Rng rng(99);
    std::vector<double> input(arch.input().size());
    for (auto& v : input) v = rng.uniform(0.0, 1.0);
    tensornet::GradCheckOptions opt;
    opt.step = 1e-5;
    opt.params_per_layer = 50;
    const auto res = tensornet::grad_check(net, input, 1, opt);
    worst = std::max(worst, res.max_relative_error);
    parts += fmt("%s %.2e over %zu params; ", name, res.max_relative_error, res.checked);
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 60.0, parts + fmt("%.1f s", t)};
}

Verdict architecture_fidelity() {
  const auto arch = matchnet::matching_net_arch();
  const bool in_ok = arch.input() == tensornet::Shape{1, 6, 11, 11};
  const auto w = arch.flatten_width();
  return {in_ok && w == 1600, fmt("input 11x11x6: %s, flatten width %zu", in_ok ? "yes" : "no", w)};
}

Verdict transform_oracles() {
  Rng rng(3);
  int mismatches = 0, checks = 0, variance_breaks = 0;
  for (int t = 0; t < 20; ++t) {
    const auto img = random_image(rng, 64, 64, t % 3 == 0 ? 256 : t % 3 == 1 ? 8 : 32);
    // strictly increasing remap: the distinct levels present go, in order, to a
    // sorted random subset of 0..255
    std::array<std::uint8_t, 256> inc{}, perm{};
    std::vector<int> present;
    {
      auto lv = img.levels();
      std::vector<bool> seen(256, false);
      for (auto v : lv) seen[v] = true;
      for (int v = 0; v < 256; ++v)
        if (seen[v]) present.push_back(v);
    }
    std::vector<int> pool(256);
    std::iota(pool.begin(), pool.end(), 0);
    rng.shuffle(pool);
    pool.resize(present.size());
    std::sort(pool.begin(), pool.end());
    for (std::size_t k = 0; k < present.size(); ++k) inc[present[k]] = static_cast<std::uint8_t>(pool[k]);
    std::vector<int> order(256);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int v = 0; v < 256; ++v) perm[v] = static_cast<std::uint8_t>(order[v]);
    const auto inc_img = remap(img, inc), perm_img = remap(img, perm);
    for (int w : {3, 15, 31, 61}) {
      const auto r = transforms::rank_transform(img, w).data;
      const auto c = transforms::companion_transform(img, w, 8).data;
      mismatches += r != naive_rank(img, w);
      mismatches += c != naive_companion(img, w);
      variance_breaks += transforms::rank_transform(inc_img, w).data != r;
      variance_breaks += transforms::companion_transform(perm_img, w, 8).data != c;
      checks += 2;
    }
  }
  return {mismatches == 0 && variance_breaks == 0,
          fmt("%d/%d transform outputs differ from brute force; %d invariance breaks", mismatches, checks,
              variance_breaks)};
}

Verdict inference_equivalence() {
  Rng rng(4);
  const auto left = random_image(rng, 32, 32, 256), right = random_image(rng, 32, 32, 256);
  transforms::TransformConfig tf{5, 9, 8};
  const auto inter = matchnet::matching_input(left, right, tf);
  const tensornet::Network<float> net(matchnet::matching_net_arch(), 77);
  const auto fast = matchnet::infer_cost_volume(inter, 8, net);
  const auto slow = matchnet::infer_cost_volume_per_patch(inter, 8, net);
  double worst = 0;
  std::size_t cells = 0;
  bool same_valid = fast.valid == slow.valid;
  for (std::size_t i = 0; i < fast.values.size(); ++i)
    if (slow.valid[i]) {
      worst = std::max(worst, std::abs(double(fast.values[i]) - slow.values[i]));
      ++cells;
    }
  return {same_valid && cells > 0 && worst <= 1e-5,
          fmt("%zu valid cells, validity %s, max |diff| %.2e", cells, same_valid ? "identical" : "DIFFERS", worst)};
}

Verdict wta_and_metrics() {
  Rng rng(5);
  int wta_bad = 0;
  for (int t = 0; t < 100; ++t) {
    matchnet::CostVolume cv(1 + static_cast<int>(rng.below(12)), 1 + static_cast<int>(rng.below(12)),
                            2 + static_cast<int>(rng.below(10)));
    for (int d = 0; d < cv.ndisp; ++d)
      for (int y = 0; y < cv.height; ++y)
        for (int x = 0; x < cv.width; ++x)
          if (rng.uniform01() < 0.85) cv.set(x, y, d, static_cast<float>(rng.below(5)) * 0.25f);
    const auto got = matchnet::wta(cv), want = naive_wta(cv);
    for (std::size_t i = 0; i < got.size(); ++i)
      wta_bad += got.valid(i) != want.valid(i) || (got.valid(i) && got[i] != want[i]);
  }

  const DisparityMap gt(4, 1, std::vector<float>{1, 2, 3, 4});
  const DisparityMap d(4, 1, std::vector<float>{1, 2, 3, 7});
  const double bad2 = metrics::bad_n(d, gt, nullptr, 2.0).fraction;
  const DisparityMap g5(4, 1, std::vector<float>{5, 5, 5, 5});
  const DisparityMap e2(4, 1, std::vector<float>{5, 5, 5, 7});
  const double rms = metrics::rms(e2, g5, nullptr);
  const bool hand = bad2 == 0.25 && rms == 1.0;

  const int N = 500;
  Mask errs(N, 1, 0);
  std::size_t B = 0;
  for (auto& v : errs.data) B += (v = rng.uniform01() < 0.25);
  ConfidenceMap oracle(N, 1);
  std::fill(oracle.valid.begin(), oracle.valid.end(), 1);
  for (int i = 0; i < N; ++i)
    oracle.values[i] = errs.data[i] ? 0.4f * static_cast<float>(rng.uniform01())
                                    : 0.6f + 0.4f * static_cast<float>(rng.uniform01());
  const double auc = metrics::sparsification_auc(oracle, errs, nullptr).auc;
  // exact optimal curve: k removed of N leaves error (B-k)/(N-k) for k < B, then 0
  double optimum = 0;
  auto e = [&](int k) { return k < static_cast<int>(B) ? double(B - k) / double(N - k) : 0.0; };
  for (int k = 1; k <= N; ++k) optimum += (e(k - 1) + e(k)) / (2.0 * N);
  int beaten = 0;
  for (int t = 0; t < 100; ++t) {
    ConfidenceMap r(N, 1);
    std::fill(r.valid.begin(), r.valid.end(), 1);
    for (auto& v : r.values) v = static_cast<float>(rng.uniform01());
    beaten += metrics::sparsification_auc(r, errs, nullptr).auc < auc;
  }
  const bool ok = wta_bad == 0 && hand && std::abs(auc - optimum) <= 1e-9 && beaten == 0;
  return {ok, fmt("wta mismatches %d over 100 volumes; bad-2 %.4f (0.25), rms %.4f (1.0); oracle auc %.12f vs "
                  "optimum %.12f; random orderings below oracle %d/100",
                  wta_bad, bad2, rms, auc, optimum, beaten)};
}

struct Shared {
  std::optional<tensornet::NetworkParams<float>> matcher;
  std::optional<tensornet::NetworkParams<float>> evaluator;
};

synthetic::SyntheticSceneSpec scene_spec(int size, double textureless, double gain) {
  synthetic::SyntheticSceneSpec s;
  s.width = s.height = size;
  s.ndisp = 16;
  s.textureless_fraction = textureless;
  s.gain = gain;
  return s;
}

Verdict desk_training(Shared& shared) {
  ThreadOverride serial(1);
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = synthetic::gen_suite(scene_spec(128, 0, 1), 10, 7);
  const auto held = synthetic::gen_suite(scene_spec(128, 0, 1), 2, 8);
  const transforms::TransformConfig tf;
  const auto samples = matchnet::sample_matching_patches(train, tf, 2500, 11);
  tensornet::TrainConfig cfg{0.002, 0.0001, 20, 32, 0, 0.9};
  tensornet::TrainResult trace;
  auto params = matchnet::train_matching_net(samples, cfg, 1, &trace, [&](int ep, double lr, double loss) {
    std::printf("    epoch %2d lr %.5f loss %.5f (%.0f s)\n", ep, lr, loss, seconds_since(t0));
    std::fflush(stdout);
  });
  const double t = seconds_since(t0);
  const auto held_set = matchnet::sample_matching_patches(held, tf, 1000, 12);
  const double acc =
      tensornet::classification_accuracy(tensornet::Network<float>(matchnet::matching_net_arch(), params), held_set.data);
  const auto& loss = trace.epoch_loss;
  int window_breaks = 0;
  for (std::size_t i = 0; i + 4 < loss.size(); ++i) window_breaks += loss[i + 4] > loss[i];
  shared.matcher = std::move(params);
  return {acc >= 0.90 && t < 600.0 && window_breaks == 0 && loss.size() == 20,
          fmt("held-out accuracy %.4f, %.0f s single-threaded, loss %.4f -> %.4f, %d rising 5-epoch windows", acc, t,
              loss.front(), loss.back(), window_breaks)};
}

Verdict semi_dense(Shared& shared) {
  if (!shared.matcher) return {false, "no trained matcher"};
  const tensornet::Network<float> matcher(matchnet::matching_net_arch(), *shared.matcher);
  const transforms::TransformConfig tf;
  const double gains[] = {1.0, 1.2, 0.85};
  std::vector<imageio::StereoPairRecord> train, held;
  for (int i = 0; i < 3; ++i) {
    auto spec = scene_spec(192, 0.2, gains[i]);
    spec.seed = synthetic::scene_seed(21, i);
    train.push_back(synthetic::gen_synthetic(spec));
  }
  for (int i = 0; i < 2; ++i) {
    auto spec = scene_spec(192, 0.2, 1.2);
    spec.seed = synthetic::scene_seed(31, i);
    held.push_back(synthetic::gen_synthetic(spec));
  }
  std::vector<DisparityMap> train_raw;
  for (const auto& r : train) train_raw.push_back(pipeline::match_scene(r, tf, matcher).disparity);
  tensornet::TrainConfig cfg{0.002, 0.0001, 10, 32, 0, 0.9};
  auto params = pipeline::train_evaluator(train, train_raw, 1.0, cfg, 2000, 5, [](const std::string& line) {
    std::printf("    %s\n", line.c_str());
    std::fflush(stdout);
  });
  shared.evaluator = params;
  const tensornet::Network<float> evaluator(evalnet::evaluation_net_arch(), params);

  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < held.size(); ++i) {
    const auto& rec = held[i];
    const auto raw = pipeline::match_scene(rec, tf, matcher).disparity;
    const auto conf = evalnet::confidence_map(rec.left, raw, rec.calib.ndisp, evaluator);
    const auto filtered = evalnet::filter_disparity(raw, conf, 0.9);
    const Mask& nonocc = *rec.nonocc_mask;
    const double raw_bad = metrics::bad_n(raw, *rec.gt, &nonocc, 1.0).fraction;
    double filtered_bad = 1.0;
    try {
      filtered_bad = metrics::bad_n(filtered, *rec.gt, &nonocc, 1.0).fraction;
    } catch (const UndefinedMetric&) {
      ok = false;
    }
    std::size_t conf_valid = 0, kept = 0;
    for (std::size_t j = 0; j < conf.valid.size(); ++j) {
      conf_valid += conf.valid[j];
      kept += conf.valid[j] && filtered.valid(j);
    }
    const double density = conf_valid ? static_cast<double>(kept) / static_cast<double>(conf_valid) : 0.0;
    ok = ok && filtered_bad < raw_bad && density >= 0.5;
    detail += fmt("scene %zu: bad-1 raw %.4f -> filtered %.4f, density %.3f; ", i, raw_bad, filtered_bad, density);
  }
  return {ok, detail + "R=0.9, gain 1.2, 20% textureless"};
}

std::vector<std::pair<std::string, std::string>> tree_contents(const fs::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      const auto bytes = imageio::read_file(e.path());
      out.emplace_back(fs::relative(e.path(), root).string(), std::string(bytes.begin(), bytes.end()));
    }
  std::sort(out.begin(), out.end());
  return out;
}

Verdict reproducibility(const Shared& shared) {
  const fs::path root = fs::temp_directory_path() / "dcnn_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto matcher = shared.matcher ? *shared.matcher
                                      : tensornet::init_params<float>(matchnet::matching_net_arch(), 1);
  const auto evaluator = shared.evaluator ? *shared.evaluator
                                          : tensornet::init_params<float>(evalnet::evaluation_net_arch(), 2);
  imageio::write_file(root / "matcher.dcnnw", tensornet::save_params(matcher));
  imageio::write_file(root / "evaluator.dcnnw", tensornet::save_params(evaluator));

  pipeline::PipelineConfig cfg;
  cfg.scene = scene_spec(112, 0.2, 1.2);
  cfg.test_scenes = 2;
  cfg.seed = 42;
  cfg.train = false;
  cfg.matcher_weights = (root / "matcher.dcnnw").string();
  cfg.evaluator_weights = (root / "evaluator.dcnnw").string();
  std::vector<std::vector<std::pair<std::string, std::string>>> trees;
  for (int threads : {1, 4}) {
    ThreadOverride t(threads);
    cfg.output_dir = (root / ("run" + std::to_string(threads))).string();
    pipeline::run_pipeline(cfg);
    trees.push_back(tree_contents(cfg.output_dir));
  }
  std::size_t pfm = 0, csv = 0;
  for (const auto& [name, bytes] : trees[0]) {
    pfm += name.ends_with(".pfm");
    csv += name.ends_with(".csv");
  }
  const bool same = trees[0] == trees[1];
  fs::remove_all(root);
  return {same && pfm == 6 && csv >= 4,
          fmt("%zu files (%zu PFM, %zu CSV) %s across two runs (1 and 4 threads)", trees[0].size(), pfm, csv,
              same ? "byte-identical" : "DIFFER")};
}

Verdict format_fidelity() {
  Rng rng(9);
  int failures = 0;
  for (int t = 0; t < 50; ++t) {
    const int w = 1 + static_cast<int>(rng.below(40)), h = 1 + static_cast<int>(rng.below(40));
    DisparityMap m(w, h);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (rng.uniform01() < 0.8) m[i] = static_cast<float>(rng.uniform(0.0, 300.0));
    const auto bytes = imageio::write_pfm(m);
    const auto back = imageio::read_pfm(bytes);
    failures += !(back == m) || imageio::write_pfm(back) != bytes;
  }
  const auto c = imageio::parse_calib("ndisp=270\nwidth=2960\nheight=2016");
  const bool calib = c.ndisp == 270 && c.width == 2960 && c.height == 2016;
  return {failures == 0 && calib, fmt("%d/50 PFM round-trips differ; calib ndisp=%d width=%d height=%d", failures,
                                      c.ndisp, c.width, c.height)};
}

}  // namespace

int main() {
  Shared shared;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"architecture fidelity", architecture_fidelity},
      {"transform oracles", transform_oracles},
      {"inference equivalence", inference_equivalence},
      {"wta and metrics oracles", wta_and_metrics},
      {"desk-scale training", [&] { return desk_training(shared); }},
      {"semi-dense filtering", [&] { return semi_dense(shared); }},
      {"reproducibility", [&] { return reproducibility(shared); }},
      {"format fidelity", format_fidelity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, check] = criteria[i];
    std::printf("[%zu] %s ...\n", i + 1, name.c_str());
    std::fflush(stdout);
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed ? 1 : 0;
}
