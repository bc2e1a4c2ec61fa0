#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dcnn/error.hpp"
#include "dcnn/image.hpp"

namespace dcnn::metrics {

namespace detail {

inline void same_size(const DisparityMap& a, const DisparityMap& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw ParameterError("disparity maps differ in size");
}

inline void same_size(const DisparityMap& a, const Mask* m) {
  if (m && (m->width != a.width() || m->height != a.height())) throw ParameterError("mask differs in size");
}

}  // namespace detail

/// Pixels selected by `mask` (all pixels without one) that have ground truth.
inline Mask evaluation_domain(const DisparityMap& gt, const Mask* mask) {
  detail::same_size(gt, mask);
  Mask out(gt.width(), gt.height(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) out.data[i] = (!mask || mask->selected(i)) && gt.valid(i);
  return out;
}

struct BadResult {
  double fraction = 0.0;
  std::size_t bad = 0;
  std::size_t evaluated = 0;  // mask-selected, GT-valid and D-valid
  std::size_t total = 0;      // mask-selected and GT-valid
};

/// Fraction of evaluated pixels with |D - D_t| > n.
inline BadResult bad_n(const DisparityMap& d, const DisparityMap& gt, const Mask* mask, double n) {
  detail::same_size(d, gt);
  detail::same_size(d, mask);
  BadResult r;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if ((mask && !mask->selected(i)) || !gt.valid(i)) continue;
    ++r.total;
    if (!d.valid(i)) continue;
    ++r.evaluated;
    r.bad += std::abs(static_cast<double>(d[i]) - gt[i]) > n;
  }
  if (r.evaluated == 0) throw UndefinedMetric("bad-n: no pixel is valid in both maps");
  r.fraction = static_cast<double>(r.bad) / static_cast<double>(r.evaluated);
  return r;
}

inline double rms(const DisparityMap& d, const DisparityMap& gt, const Mask* mask) {
  detail::same_size(d, gt);
  detail::same_size(d, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if ((mask && !mask->selected(i)) || !gt.valid(i) || !d.valid(i)) continue;
    const double e = static_cast<double>(d[i]) - gt[i];
    sum += e * e;
    ++n;
  }
  if (n == 0) throw UndefinedMetric("rms: no pixel is valid in both maps");
  return std::sqrt(sum / static_cast<double>(n));
}

/// Like bad_n with n = 1, except that pixels without a disparity count as errors.
inline double mpe(const DisparityMap& d, const DisparityMap& gt, const Mask* mask) {
  const auto r = bad_n(d, gt, mask, 1.0);
  return static_cast<double>(r.bad + (r.total - r.evaluated)) / static_cast<double>(r.total);
}

struct Density {
  double density = 0.0;
  double invalid_rate = 0.0;
};

inline Density density_and_invalid(const DisparityMap& d, const Mask* mask) {
  detail::same_size(d, mask);
  std::size_t sel = 0, valid = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (mask && !mask->selected(i)) continue;
    ++sel;
    valid += d.valid(i);
  }
  if (sel == 0) throw UndefinedMetric("density: empty mask");
  Density r;
  r.density = static_cast<double>(valid) / static_cast<double>(sel);
  r.invalid_rate = static_cast<double>(sel - valid) / static_cast<double>(sel);
  return r;
}

/// Pixels where both maps are valid and |D - D_t| > n.
inline Mask error_mask(const DisparityMap& d, const DisparityMap& gt, double n) {
  detail::same_size(d, gt);
  Mask m(d.width(), d.height(), 0);
  for (std::size_t i = 0; i < d.size(); ++i)
    m.data[i] = d.valid(i) && gt.valid(i) && std::abs(static_cast<double>(d[i]) - gt[i]) > n;
  return m;
}

// ---------------------------------------------------------------------------
// Sparsification.

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

struct SparsificationCurve {
  std::vector<CurvePoint> points;  // (fraction removed, error among retained)
  double auc = 0.0;
};

inline double trapezoid(const std::vector<CurvePoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) a += (pts[i].x - pts[i - 1].x) * (pts[i].y + pts[i - 1].y) / 2.0;
  return a;
}

/// Curve from per-pixel errors already ordered from most to least confident.
inline SparsificationCurve sparsification_from_order(const std::vector<std::uint8_t>& bad_in_order) {
  const std::size_t N = bad_in_order.size();
  if (N == 0) throw UndefinedMetric("sparsification: no evaluable pixel");
  std::size_t bad = static_cast<std::size_t>(std::count(bad_in_order.begin(), bad_in_order.end(), 1));
  SparsificationCurve c;
  c.points.reserve(N + 1);
  // k pixels removed from the least-confident end
  for (std::size_t k = 0; k <= N; ++k) {
    if (k > 0) bad -= bad_in_order[N - k];
    const std::size_t kept = N - k;
    c.points.push_back({static_cast<double>(k) / static_cast<double>(N),
                        kept == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(kept)});
  }
  c.auc = trapezoid(c.points);
  return c;
}

/// Pixels in `domain` with valid confidence, sorted by confidence descending
/// (row-major order among equals), then removed lowest-first.
inline SparsificationCurve sparsification_auc(const ConfidenceMap& conf, const Mask& errors, const Mask* domain) {
  if (errors.width != conf.width || errors.height != conf.height ||
      (domain && (domain->width != conf.width || domain->height != conf.height)))
    throw ParameterError("sparsification: inputs differ in size");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < conf.size(); ++i)
    if (conf.valid[i] && (!domain || domain->selected(i))) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return conf.values[a] > conf.values[b]; });
  std::vector<std::uint8_t> order(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) order[k] = errors.selected(idx[k]);
  return sparsification_from_order(order);
}

/// Optimal curve for N pixels of which B are bad: removing the bad ones first.
inline SparsificationCurve optimal_sparsification(std::size_t N, std::size_t B) {
  std::vector<std::uint8_t> order(N, 0);
  std::fill(order.end() - static_cast<std::ptrdiff_t>(B), order.end(), 1);
  return sparsification_from_order(order);
}

// ---------------------------------------------------------------------------
// Error versus invalid-pixel rate under confidence thresholds.

struct ThresholdPoint {
  double threshold = 0.0;
  double invalid_rate = 0.0;  // over the evaluation domain
  double error = 0.0;         // bad-n over retained domain pixels; 0 when none are retained
  std::size_t retained = 0;
};

inline std::vector<double> threshold_grid(double step = 0.05) {
  if (!(step > 0.0 && step <= 1.0)) throw ParameterError("threshold step must lie in (0, 1]");
  const int n = static_cast<int>(std::llround(1.0 / step));
  std::vector<double> g;
  for (int i = 0; i <= n; ++i) g.push_back(std::min(1.0, i * step));
  return g;
}

inline std::vector<ThresholdPoint> error_vs_invalid_curve(const DisparityMap& raw, const ConfidenceMap& conf,
                                                          const DisparityMap& gt, const Mask* mask,
                                                          const std::vector<double>& grid, double n = 2.0) {
  detail::same_size(raw, gt);
  if (conf.width != raw.width() || conf.height != raw.height()) throw ParameterError("confidence differs in size");
  const Mask domain = evaluation_domain(gt, mask);
  const std::size_t total = domain.count();
  if (total == 0) throw UndefinedMetric("error curve: empty evaluation domain");
  std::vector<ThresholdPoint> out;
  for (double R : grid) {
    if (!(R >= 0.0 && R <= 1.0)) throw ParameterError("confidence threshold must lie in [0, 1]");
    ThresholdPoint p{R, 0.0, 0.0, 0};
    std::size_t bad = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!domain.selected(i)) continue;
      if (!(raw.valid(i) && conf.valid[i] && conf.values[i] >= R)) continue;
      ++p.retained;
      bad += std::abs(static_cast<double>(raw[i]) - gt[i]) > n;
    }
    p.invalid_rate = static_cast<double>(total - p.retained) / static_cast<double>(total);
    p.error = p.retained == 0 ? 0.0 : static_cast<double>(bad) / static_cast<double>(p.retained);
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports.

struct EvalReport {
  std::string scene;
  double bad1 = 0.0;
  double bad2 = 0.0;
  double mpe = 0.0;
  double rms = 0.0;
  double density = 0.0;
  double invalid_rate = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  std::size_t evaluated = 0;
  std::size_t domain = 0;
};

/// Metrics of `d` on the evaluation domain; the AUC ranks bad-1 pixels by
/// `conf` when one is given. Undefined metrics are reported as NaN.
inline EvalReport evaluate(const std::string& scene, const DisparityMap& d, const DisparityMap& gt, const Mask* mask,
                           const ConfidenceMap* conf = nullptr) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EvalReport r;
  r.scene = scene;
  const Mask domain = evaluation_domain(gt, mask);
  r.domain = domain.count();
  if (r.domain == 0) throw UndefinedMetric("scene " + scene + " has no evaluable pixels");
  const auto dens = density_and_invalid(d, &domain);
  r.density = dens.density;
  r.invalid_rate = dens.invalid_rate;
  try {
    const auto b1 = bad_n(d, gt, &domain, 1.0);
    r.evaluated = b1.evaluated;
    r.bad1 = b1.fraction;
    r.bad2 = bad_n(d, gt, &domain, 2.0).fraction;
    r.mpe = mpe(d, gt, &domain);
    r.rms = rms(d, gt, &domain);
  } catch (const UndefinedMetric&) {
    r.bad1 = r.bad2 = r.rms = nan;
    r.mpe = 1.0;
  }
  if (conf) {
    Mask ev = domain;
    for (std::size_t i = 0; i < ev.data.size(); ++i) ev.data[i] = ev.data[i] && d.valid(i);
    try {
      r.auc = sparsification_auc(*conf, error_mask(d, gt, 1.0), &ev).auc;
    } catch (const UndefinedMetric&) {
      r.auc = nan;
    }
  }
  return r;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline const char* kReportHeader = "scene,bad1,bad2,mpe,rms,density,invalid_rate,auc";

inline std::string report_row(const EvalReport& r) {
  return r.scene + "," + format_number(r.bad1) + "," + format_number(r.bad2) + "," + format_number(r.mpe) + "," +
         format_number(r.rms) + "," + format_number(r.density) + "," + format_number(r.invalid_rate) + "," +
         format_number(r.auc);
}

/// Mean over scenes of each column, skipping NaN entries.
inline EvalReport aggregate(const std::vector<EvalReport>& rows, const std::string& name = "mean") {
  EvalReport a;
  a.scene = name;
  auto mean = [&](double EvalReport::*f) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (!std::isnan(r.*f)) {
        s += r.*f;
        ++n;
      }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
  };
  a.bad1 = mean(&EvalReport::bad1);
  a.bad2 = mean(&EvalReport::bad2);
  a.mpe = mean(&EvalReport::mpe);
  a.rms = mean(&EvalReport::rms);
  a.density = mean(&EvalReport::density);
  a.invalid_rate = mean(&EvalReport::invalid_rate);
  a.auc = mean(&EvalReport::auc);
  for (const auto& r : rows) {
    a.evaluated += r.evaluated;
    a.domain += r.domain;
  }
  return a;
}

inline std::string reports_csv(const std::vector<EvalReport>& rows, bool with_aggregate = true) {
  std::string s = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) s += report_row(r) + "\n";
  if (with_aggregate && !rows.empty()) s += report_row(aggregate(rows)) + "\n";
  return s;
}

inline std::string curve_csv(const std::vector<ThresholdPoint>& pts) {
  std::string s = "threshold,invalid_rate,bad2,retained\n";
  for (const auto& p : pts)
    s += format_number(p.threshold) + "," + format_number(p.invalid_rate) + "," + format_number(p.error) + "," +
         std::to_string(p.retained) + "\n";
  return s;
}

inline std::string sparsification_csv(const SparsificationCurve& c) {
  std::string s = "fraction_removed,error\n";
  for (const auto& p : c.points) s += format_number(p.x) + "," + format_number(p.y) + "\n";
  return s;
}

/// A plain line plot with both axes on [0, 1].
inline std::string line_plot_svg(const std::vector<CurvePoint>& pts, const std::string& title,
                                 const std::string& x_label, const std::string& y_label) {
  const double W = 480, H = 360, L = 60, B = 50, T = 30, Rm = 20;
  const double pw = W - L - Rm, ph = H - T - B;
  auto X = [&](double x) { return format_number(L + std::clamp(x, 0.0, 1.0) * pw); };
  auto Y = [&](double y) { return format_number(T + (1.0 - std::clamp(y, 0.0, 1.0)) * ph); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" viewBox=\"0 0 480 360\">\n";
  s += "<rect width=\"480\" height=\"360\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" + title +
       "</text>\n";
  s += "<line x1=\"" + X(0) + "\" y1=\"" + Y(0) + "\" x2=\"" + X(1) + "\" y2=\"" + Y(0) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + X(0) + "\" y1=\"" + Y(0) + "\" x2=\"" + X(0) + "\" y2=\"" + Y(1) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = i / 4.0;
    s += "<text x=\"" + X(v) + "\" y=\"" + format_number(H - B + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + format_number(v).substr(0, 4) +
         "</text>\n";
    s += "<text x=\"" + format_number(L - 6) + "\" y=\"" + Y(v) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + format_number(v).substr(0, 4) +
         "</text>\n";
  }
  s += "<text x=\"" + X(0.5) + "\" y=\"" + format_number(H - 12) +
       "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label + "</text>\n";
  s += "<text x=\"14\" y=\"" + Y(0.5) + "\" transform=\"rotate(-90 14 " + Y(0.5) +
       ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + y_label + "</text>\n";
  s += "<polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) s += (i ? " " : "") + X(pts[i].x) + "," + Y(pts[i].y);
  s += "\"/>\n</svg>\n";
  return s;
}

inline std::string curve_svg(const std::vector<ThresholdPoint>& pts) {
  std::vector<CurvePoint> xy;
  for (const auto& p : pts) xy.push_back({p.invalid_rate, p.error});
  return line_plot_svg(xy, "error vs invalid rate", "invalid pixel rate", "bad-2 (retained)");
}

}  // namespace dcnn::metrics
