#include "optlab/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "optlab/error.hpp"
#include "optlab/noise.hpp"

namespace optlab {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Axis {
  double lo = 0.0, hi = 1.0;
  bool log = false;
  double px_lo = 0.0, px_hi = 1.0;

  double t(double v) const { return log ? std::log10(v) : v; }
  double map(double v) const {
    const double a = t(lo), b = t(hi);
    const double f = b > a ? (t(v) - a) / (b - a) : 0.5;
    return px_lo + f * (px_hi - px_lo);
  }
};

// Pads the range a little and widens degenerate ones.
Axis make_axis(double lo, double hi, bool log, double px_lo, double px_hi, bool pad = true) {
  Axis a{lo, hi, log, px_lo, px_hi};
  if (log) {
    double l = std::log10(lo), h = std::log10(hi);
    if (h - l < 1e-12) l -= 0.5, h += 0.5;
    else if (pad) {
      const double m = 0.04 * (h - l);
      l -= m, h += m;
    }
    a.lo = std::pow(10.0, l), a.hi = std::pow(10.0, h);
  } else {
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(lo))) lo -= 0.5, hi += 0.5;
    else if (pad) {
      const double m = 0.04 * (hi - lo);
      lo -= m, hi += m;
    }
    a.lo = lo, a.hi = hi;
  }
  return a;
}

std::vector<double> ticks(const Axis& a) {
  std::vector<double> out;
  if (a.log) {
    for (double e = std::ceil(std::log10(a.lo) - 1e-9); e <= std::floor(std::log10(a.hi) + 1e-9); ++e)
      out.push_back(std::pow(10.0, e));
    if (out.size() < 2) out = {a.lo, a.hi};
    return out;
  }
  const double raw = (a.hi - a.lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (raw <= m * mag) {
      step = m * mag;
      break;
    }
  for (double v = std::ceil(a.lo / step) * step; v <= a.hi + 1e-9 * step; v += step)
    out.push_back(std::abs(v) < 1e-12 * step ? 0.0 : v);
  return out;
}

std::string tick_label(double v) { return fmt::format("{:.3g}", v); }

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string px(double v) { return fmt::format("{:.2f}", v); }

class Svg {
 public:
  Svg(const PlotSpec& spec) : spec_(spec) {
    out_ = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
        "font-family=\"sans-serif\" font-size=\"11\">\n"
        "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
        px(spec.width), px(spec.height));
    if (!spec.title.empty())
      out_ += fmt::format("<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
                          px(spec.width / 2), escape(spec.title));
  }

  double x0() const { return frame_.left; }
  double x1() const { return spec_.width - frame_.right; }
  double y0() const { return spec_.height - frame_.bottom; }
  double y1() const { return frame_.top; }

  void axes(const Axis& x, const Axis& y, std::string_view xlabel, std::string_view ylabel) {
    out_ += fmt::format("<g class=\"axes\" stroke=\"#444\" fill=\"none\">\n<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/>\n",
                        px(x0()), px(y1()), px(x1() - x0()), px(y0() - y1()));
    for (double v : ticks(x)) {
      const double p = x.map(v);
      out_ += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\"/>\n", px(p), px(y0()), px(y0() + 4));
    }
    for (double v : ticks(y)) {
      const double p = y.map(v);
      out_ += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\"/>\n", px(x0() - 4), px(p), px(x0()));
    }
    out_ += "</g>\n<g class=\"labels\" fill=\"#222\">\n";
    for (double v : ticks(x))
      out_ += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(x.map(v)),
                          px(y0() + 16), tick_label(v));
    for (double v : ticks(y))
      out_ += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", px(x0() - 6),
                          px(y.map(v) + 4), tick_label(v));
    out_ += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px((x0() + x1()) / 2),
                        px(spec_.height - 10), escape(xlabel));
    out_ += fmt::format("<text x=\"16\" y=\"{0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {0})\">{1}</text>\n",
                        px((y0() + y1()) / 2), escape(ylabel));
    out_ += "</g>\n";
  }

  void legend(std::size_t i, std::string_view label, const char* color) {
    const double y = y1() + 8 + 16.0 * static_cast<double>(i);
    out_ += fmt::format(
        "<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>"
        "<text x=\"{4}\" y=\"{5}\" fill=\"#222\">{6}</text>\n",
        px(x1() + 10), px(y), px(x1() + 28), color, px(x1() + 32), px(y + 4), escape(label));
  }

  void raw(std::string_view s) { out_ += s; }

  std::string finish() { return out_ + "</svg>\n"; }

 private:
  const PlotSpec& spec_;
  PlotFrame frame_;
  std::string out_;
};

struct Point {
  double x, y;
};

std::vector<std::size_t> selected_rows(const CsvTable& t, const PlotSpec& spec) {
  std::vector<std::pair<std::size_t, std::string>> filters;
  for (const auto& [col, val] : spec.filters) filters.emplace_back(t.column(col), val);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    bool keep = true;
    for (const auto& [c, v] : filters) keep = keep && t.rows[r][c] == v;
    if (keep) out.push_back(r);
  }
  if (out.empty()) throw Error(ErrorCode::EmptySelection, "no CSV rows match the plot filters");
  return out;
}

double cell(const CsvTable& t, std::size_t row, std::size_t col) {
  const std::string& s = t.rows[row][col];
  return s.empty() ? std::numeric_limits<double>::quiet_NaN() : parse_double(s);
}

bool usable(double v, bool log) { return std::isfinite(v) && (!log || v > 0); }

std::string polyline(const std::vector<Point>& pts, const Axis& x, const Axis& y, const char* color) {
  std::string p;
  for (const auto& q : pts) p += (p.empty() ? "" : " ") + px(x.map(q.x)) + "," + px(y.map(q.y));
  return fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", color, p);
}

struct Series {
  std::string label;
  std::vector<Point> points;
};

std::string render_series(const PlotSpec& spec, const std::map<std::string, Series>& groups, bool default_xlog,
                          bool default_ylog, std::string_view xlabel, std::string_view ylabel, bool markers) {
  const bool xlog = spec.x_log.value_or(default_xlog), ylog = spec.y_log.value_or(default_ylog);
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  std::vector<const Series*> shown;
  std::vector<std::vector<Point>> kept;
  for (const auto& [key, s] : groups) {
    std::vector<Point> pts;
    for (const auto& p : s.points)
      if (usable(p.x, xlog) && usable(p.y, ylog)) pts.push_back(p);
    if (pts.empty()) continue;
    std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
    for (const auto& p : pts) {
      xlo = std::min(xlo, p.x), xhi = std::max(xhi, p.x);
      ylo = std::min(ylo, p.y), yhi = std::max(yhi, p.y);
    }
    shown.push_back(&s);
    kept.push_back(std::move(pts));
  }
  if (shown.empty()) throw Error(ErrorCode::EmptySelection, "no finite values to plot");

  Svg svg(spec);
  const Axis x = make_axis(xlo, xhi, xlog, svg.x0(), svg.x1());
  const Axis y = make_axis(ylo, yhi, ylog, svg.y0(), svg.y1());
  svg.axes(x, y, xlabel, ylabel);
  for (std::size_t i = 0; i < shown.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    svg.raw(fmt::format("<g class=\"series\" data-label=\"{}\">\n", escape(shown[i]->label)));
    svg.raw(polyline(kept[i], x, y, color));
    if (markers) {
      for (const auto& p : kept[i])
        svg.raw(fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>\n", px(x.map(p.x)), px(y.map(p.y)),
                            color));
    } else {
      // Downward triangle whose tip sits on the last point.
      const double tx = x.map(kept[i].back().x), ty = y.map(kept[i].back().y);
      svg.raw(fmt::format("<path class=\"end\" d=\"M{} {} L{} {} L{} {} Z\" fill=\"{}\"/>\n", px(tx - 5),
                          px(ty - 9), px(tx + 5), px(ty - 9), px(tx), px(ty), color));
    }
    svg.raw("</g>\n");
    svg.legend(i, shown[i]->label, color);
  }
  return svg.finish();
}

std::string group_key(const CsvTable& t, std::size_t row, const std::vector<std::size_t>& cols) {
  std::string key;
  for (std::size_t c : cols) key += (key.empty() ? "" : " ") + t.rows[row][c];
  return key;
}

std::string render_loss(const CsvTable& t, const PlotSpec& spec) {
  const auto rows = selected_rows(t, spec);
  const std::size_t xi = t.column("iteration"), yi = t.column("train_loss");
  std::vector<std::size_t> cols;
  std::vector<std::size_t> label_cols;
  if (spec.group_by.empty()) {
    cols.push_back(t.column("run_id"));
    for (const char* name : {"optimizer", "batch_label", "seed"})
      if (std::find(t.columns.begin(), t.columns.end(), name) != t.columns.end()) label_cols.push_back(t.column(name));
  } else {
    for (const auto& g : spec.group_by) cols.push_back(t.column(g));
  }
  if (label_cols.empty()) label_cols = cols;
  std::map<std::string, Series> groups;
  for (std::size_t r : rows) {
    Series& s = groups[group_key(t, r, cols)];
    if (s.label.empty()) s.label = group_key(t, r, label_cols);
    s.points.push_back({cell(t, r, xi), cell(t, r, yi)});
  }
  return render_series(spec, groups, false, true, "iteration", "training loss", false);
}

std::string render_batch(const CsvTable& t, const PlotSpec& spec) {
  const auto rows = selected_rows(t, spec);
  const std::size_t xi = t.column("batch_size"), yi = t.column("train_loss");
  std::vector<std::size_t> cols;
  if (spec.group_by.empty()) cols.push_back(t.column("optimizer"));
  for (const auto& g : spec.group_by) cols.push_back(t.column(g));
  // Median over the rows (seeds) sharing a series and batch size.
  std::map<std::string, std::map<double, std::vector<double>>> raw;
  for (std::size_t r : rows) raw[group_key(t, r, cols)][cell(t, r, xi)].push_back(cell(t, r, yi));
  std::map<std::string, Series> groups;
  for (auto& [key, by_x] : raw) {
    Series& s = groups[key];
    s.label = key;
    for (auto& [xv, ys] : by_x) {
      std::sort(ys.begin(), ys.end(), [](double a, double b) { return a < b || (std::isnan(b) && !std::isnan(a)); });
      const std::size_t n = ys.size();
      const double med = n % 2 ? ys[n / 2] : 0.5 * (ys[n / 2 - 1] + ys[n / 2]);
      s.points.push_back({xv, med});
    }
  }
  return render_series(spec, groups, true, true, "batch size", "final training loss (median over seeds)", true);
}

std::vector<double> sample_values(const CsvTable& t, const PlotSpec& spec) {
  const auto rows = selected_rows(t, spec);
  const std::size_t vi = t.column(spec.value_column);
  std::vector<double> v;
  for (std::size_t r : rows) {
    const double x = cell(t, r, vi);
    if (std::isfinite(x)) v.push_back(x);
  }
  if (v.size() < 2) throw Error(ErrorCode::EmptySelection, "fewer than two finite values to plot");
  return v;
}

std::string render_qq(const CsvTable& t, const PlotSpec& spec) {
  const auto values = sample_values(t, spec);
  const GaussianFit fit = fit_gaussian(values);
  const auto pts = qq_points(values, fit);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& p : pts) {
    lo = std::min({lo, p.theoretical, p.empirical});
    hi = std::max({hi, p.theoretical, p.empirical});
  }
  Svg svg(spec);
  // One shared range keeps the identity guide on the diagonal.
  const Axis x = make_axis(lo, hi, false, svg.x0(), svg.x1());
  const Axis y = make_axis(lo, hi, false, svg.y0(), svg.y1());
  svg.axes(x, y, "Gaussian quantile", "empirical quantile");
  svg.raw(fmt::format(
      "<line class=\"identity\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n",
      px(x.map(x.lo)), px(y.map(y.lo)), px(x.map(x.hi)), px(y.map(y.hi))));
  svg.raw(fmt::format("<g class=\"points\" fill=\"{}\">\n", kPalette[0]));
  for (const auto& p : pts)
    svg.raw(fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"1.5\"/>\n", px(x.map(p.theoretical)), px(y.map(p.empirical))));
  svg.raw("</g>\n");
  return svg.finish();
}

std::string render_histogram(const CsvTable& t, const PlotSpec& spec) {
  const auto values = sample_values(t, spec);
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  const double lo = *mn, hi = *mx > *mn ? *mx : *mn + 1.0;
  const std::size_t bins =
      spec.bins ? spec.bins
                : std::min<std::size_t>(100, static_cast<std::size_t>(std::ceil(std::sqrt(values.size()))));
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : values) counts[std::min(bins - 1, static_cast<std::size_t>((v - lo) / width))]++;
  const GaussianFit fit = fit_gaussian(values);
  // Expected count per bin under the fit, sampled finely for the overlay.
  const double scale = static_cast<double>(values.size()) * width;
  auto density = [&](double v) {
    const double z = (v - fit.mu) / fit.sigma;
    return fit.sigma > 0 ? scale * std::exp(-0.5 * z * z) / (fit.sigma * std::sqrt(2.0 * M_PI)) : 0.0;
  };
  double top = static_cast<double>(*std::max_element(counts.begin(), counts.end()));
  std::vector<Point> curve;
  for (int i = 0; i <= 200; ++i) {
    const double v = lo + (hi - lo) * i / 200.0;
    curve.push_back({v, density(v)});
    top = std::max(top, curve.back().y);
  }
  Svg svg(spec);
  const Axis x = make_axis(lo, hi, false, svg.x0(), svg.x1(), false);
  const Axis y = make_axis(0.0, top * 1.05, false, svg.y0(), svg.y1(), false);
  svg.axes(x, y, spec.value_column, "count");
  svg.raw(fmt::format("<g class=\"bars\" fill=\"{}\" fill-opacity=\"0.6\">\n", kPalette[0]));
  for (std::size_t b = 0; b < bins; ++b) {
    const double a = x.map(lo + width * static_cast<double>(b)), c = x.map(lo + width * static_cast<double>(b + 1));
    const double h = y.map(static_cast<double>(counts[b]));
    svg.raw(fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\"/>\n", px(a), px(h), px(c - a),
                        px(y.map(0.0) - h)));
  }
  svg.raw("</g>\n");
  svg.raw(polyline(curve, x, y, kPalette[1]));
  return svg.finish();
}

}  // namespace

std::string_view to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::loss_vs_iteration: return "loss_vs_iteration";
    case PlotKind::final_loss_vs_batch_size: return "final_loss_vs_batch_size";
    case PlotKind::qq: return "qq";
    case PlotKind::histogram: return "histogram";
  }
  return "?";
}

PlotKind parse_plot_kind(std::string_view text) {
  for (auto k : {PlotKind::loss_vs_iteration, PlotKind::final_loss_vs_batch_size, PlotKind::qq, PlotKind::histogram})
    if (to_string(k) == text) return k;
  throw Error(ErrorCode::InvalidArgument, "unknown plot kind '" + std::string(text) + "'");
}

std::string render_plot(const CsvTable& table, const PlotSpec& spec) {
  switch (spec.kind) {
    case PlotKind::loss_vs_iteration: return render_loss(table, spec);
    case PlotKind::final_loss_vs_batch_size: return render_batch(table, spec);
    case PlotKind::qq: return render_qq(table, spec);
    case PlotKind::histogram: return render_histogram(table, spec);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown plot kind");
}

void emit_plot(const std::filesystem::path& csv_path, const PlotSpec& spec, const std::filesystem::path& svg_path) {
  write_text_file(svg_path, render_plot(read_table(csv_path), spec));
}

}  // namespace optlab
