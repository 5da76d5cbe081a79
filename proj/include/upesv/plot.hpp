// SVG plot emission. Plots are pure functions of CSV files: same CSV in,
// byte-identical SVG out.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "upesv/common.hpp"

namespace upesv::plot {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b"};

// Simple CSV split; our files contain no quoted fields.
inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string cell;
  for (char ch : text) {
    if (ch == ',') {
      row.push_back(cell);
      cell.clear();
    } else if (ch == '\n') {
      row.push_back(cell);
      cell.clear();
      rows.push_back(row);
      row.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  if (!cell.empty() || !row.empty()) {
    row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

inline int column_index(const std::vector<std::string>& header,
                        const std::string& name) {
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return static_cast<int>(i);
  throw DataError(cat("plot: CSV column '", name, "' not found"));
}

}  // namespace detail

inline constexpr int kWidth = 720, kHeight = 420;
inline constexpr int kMarginLeft = 70, kMarginRight = 24, kMarginTop = 40,
                     kMarginBottom = 50;

// Multi-series line chart.
inline std::string line_chart_svg(const std::string& title,
                                  const std::string& x_label,
                                  const std::string& y_label,
                                  const std::vector<Series>& series) {
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double px = kWidth - kMarginLeft - kMarginRight;
  const double py = kHeight - kMarginTop - kMarginBottom;
  auto sx = [&](double x) {
    return kMarginLeft + (x - xmin) / (xmax - xmin) * px;
  };
  auto sy = [&](double y) {
    return kMarginTop + py - (y - ymin) / (ymax - ymin) * py;
  };

  std::string svg = cat(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"", kWidth,
      "\" height=\"", kHeight, "\" font-family=\"sans-serif\">\n",
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      "<text x=\"", kWidth / 2, "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">",
      title, "</text>\n");

  // axes + ticks
  svg += cat("<line x1=\"", kMarginLeft, "\" y1=\"", kMarginTop + py,
             "\" x2=\"", kMarginLeft + px, "\" y2=\"", kMarginTop + py,
             "\" stroke=\"black\"/>\n");
  svg += cat("<line x1=\"", kMarginLeft, "\" y1=\"", kMarginTop, "\" x2=\"",
             kMarginLeft, "\" y2=\"", kMarginTop + py, "\" stroke=\"black\"/>\n");
  for (int t = 0; t <= 4; ++t) {
    double xv = xmin + (xmax - xmin) * t / 4.0;
    double yv = ymin + (ymax - ymin) * t / 4.0;
    svg += cat("<text x=\"", detail::fmt(sx(xv)), "\" y=\"", kMarginTop + py + 18,
               "\" text-anchor=\"middle\" font-size=\"11\">", detail::fmt(xv),
               "</text>\n");
    svg += cat("<text x=\"", kMarginLeft - 8, "\" y=\"", detail::fmt(sy(yv) + 4),
               "\" text-anchor=\"end\" font-size=\"11\">", detail::fmt(yv),
               "</text>\n");
    svg += cat("<line x1=\"", kMarginLeft, "\" y1=\"", detail::fmt(sy(yv)),
               "\" x2=\"", kMarginLeft + px, "\" y2=\"", detail::fmt(sy(yv)),
               "\" stroke=\"#dddddd\"/>\n");
  }
  svg += cat("<text x=\"", kMarginLeft + px / 2, "\" y=\"", kHeight - 12,
             "\" text-anchor=\"middle\" font-size=\"12\">", x_label, "</text>\n");
  svg += cat("<text x=\"16\" y=\"", kMarginTop + py / 2,
             "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 ",
             kMarginTop + py / 2, ")\">", y_label, "</text>\n");

  for (size_t si = 0; si < series.size(); ++si) {
    const char* color = detail::kPalette[si % 6];
    std::string pts;
    for (auto [x, y] : series[si].points)
      pts += cat(detail::fmt(sx(x)), ",", detail::fmt(sy(y)), " ");
    svg += cat("<polyline fill=\"none\" stroke=\"", color,
               "\" stroke-width=\"1.5\" points=\"", pts, "\"/>\n");
    svg += cat("<text x=\"", kMarginLeft + px - 6, "\" y=\"",
               kMarginTop + 16 + 16 * static_cast<int>(si),
               "\" text-anchor=\"end\" font-size=\"12\" fill=\"", color, "\">",
               series[si].name, "</text>\n");
  }
  svg += "</svg>\n";
  return svg;
}

struct Bar {
  std::string label;
  double value = 0;
  double err = 0;
};

inline std::string bar_chart_svg(const std::string& title,
                                 const std::string& y_label,
                                 const std::vector<Bar>& bars) {
  double ymax = 0;
  for (const auto& b : bars) ymax = std::max(ymax, b.value + b.err);
  if (ymax <= 0) ymax = 1;
  ymax *= 1.1;

  const double px = kWidth - kMarginLeft - kMarginRight;
  const double py = kHeight - kMarginTop - kMarginBottom;
  const double slot = px / std::max<size_t>(bars.size(), 1);
  auto sy = [&](double y) { return kMarginTop + py - y / ymax * py; };

  std::string svg = cat(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"", kWidth,
      "\" height=\"", kHeight, "\" font-family=\"sans-serif\">\n",
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      "<text x=\"", kWidth / 2, "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">",
      title, "</text>\n");
  svg += cat("<line x1=\"", kMarginLeft, "\" y1=\"", kMarginTop + py,
             "\" x2=\"", kMarginLeft + px, "\" y2=\"", kMarginTop + py,
             "\" stroke=\"black\"/>\n");
  for (int t = 0; t <= 4; ++t) {
    double yv = ymax * t / 4.0;
    svg += cat("<text x=\"", kMarginLeft - 8, "\" y=\"", detail::fmt(sy(yv) + 4),
               "\" text-anchor=\"end\" font-size=\"11\">", detail::fmt(yv),
               "</text>\n");
    svg += cat("<line x1=\"", kMarginLeft, "\" y1=\"", detail::fmt(sy(yv)),
               "\" x2=\"", kMarginLeft + px, "\" y2=\"", detail::fmt(sy(yv)),
               "\" stroke=\"#dddddd\"/>\n");
  }
  svg += cat("<text x=\"16\" y=\"", kMarginTop + py / 2,
             "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 ",
             kMarginTop + py / 2, ")\">", y_label, "</text>\n");

  for (size_t i = 0; i < bars.size(); ++i) {
    double cx = kMarginLeft + slot * (static_cast<double>(i) + 0.5);
    double w = slot * 0.55;
    svg += cat("<rect x=\"", detail::fmt(cx - w / 2), "\" y=\"",
               detail::fmt(sy(bars[i].value)), "\" width=\"", detail::fmt(w),
               "\" height=\"", detail::fmt(kMarginTop + py - sy(bars[i].value)),
               "\" fill=\"", detail::kPalette[i % 6], "\"/>\n");
    if (bars[i].err > 0)
      svg += cat("<line x1=\"", detail::fmt(cx), "\" y1=\"",
                 detail::fmt(sy(bars[i].value - bars[i].err)), "\" x2=\"",
                 detail::fmt(cx), "\" y2=\"",
                 detail::fmt(sy(bars[i].value + bars[i].err)),
                 "\" stroke=\"black\" stroke-width=\"1.5\"/>\n");
    svg += cat("<text x=\"", detail::fmt(cx), "\" y=\"", kMarginTop + py + 18,
               "\" text-anchor=\"middle\" font-size=\"12\">", bars[i].label,
               "</text>\n");
  }
  svg += "</svg>\n";
  return svg;
}

// ---------------------------------------------------------------------------
// CSV -> plot adapters (the public surface; plots regenerate identically
// from the same CSV bytes).
// ---------------------------------------------------------------------------

// Loss curves from a metrics.csv produced by the trainer.
inline void plot_loss_curves(const std::string& metrics_csv_path,
                             const std::string& out_svg_path,
                             int max_points_per_series = 400) {
  auto rows = detail::parse_csv(read_file(metrics_csv_path));
  require<DataError>(!rows.empty(), "plot: empty metrics CSV");
  int step_col = detail::column_index(rows[0], "step");
  int loss_col = detail::column_index(rows[0], "loss");
  int value_col = detail::column_index(rows[0], "value");

  std::vector<std::string> order;
  std::map<std::string, Series> by_loss;
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < rows[0].size()) continue;
    const std::string& name = rows[r][static_cast<size_t>(loss_col)];
    if (!by_loss.count(name)) {
      order.push_back(name);
      by_loss[name].name = name;
    }
    by_loss[name].points.push_back(
        {std::stod(rows[r][static_cast<size_t>(step_col)]),
         std::stod(rows[r][static_cast<size_t>(value_col)])});
  }
  std::vector<Series> series;
  for (const auto& name : order) {
    Series s = by_loss[name];
    if (static_cast<int>(s.points.size()) > max_points_per_series) {
      Series thin;
      thin.name = s.name;
      double stride = static_cast<double>(s.points.size()) / max_points_per_series;
      for (int i = 0; i < max_points_per_series; ++i)
        thin.points.push_back(s.points[static_cast<size_t>(i * stride)]);
      s = thin;
    }
    series.push_back(std::move(s));
  }
  write_file(out_svg_path,
             line_chart_svg("training losses", "optimizer step", "loss", series));
}

// Ablation bars from a summary CSV (variant, labeling_mean, labeling_std).
inline void plot_ablation_bars(const std::string& summary_csv_path,
                               const std::string& out_svg_path) {
  auto rows = detail::parse_csv(read_file(summary_csv_path));
  require<DataError>(rows.size() >= 2, "plot: summary CSV has no rows");
  int var_col = detail::column_index(rows[0], "variant");
  int mean_col = detail::column_index(rows[0], "labeling_mean");
  int std_col = detail::column_index(rows[0], "labeling_std");
  std::vector<Bar> bars;
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < rows[0].size()) continue;
    bars.push_back({rows[r][static_cast<size_t>(var_col)],
                    std::stod(rows[r][static_cast<size_t>(mean_col)]),
                    std::stod(rows[r][static_cast<size_t>(std_col)])});
  }
  write_file(out_svg_path,
             bar_chart_svg("labeling accuracy by variant", "accuracy", bars));
}

// Sweep curve from a summary CSV whose variant labels are "s=<n>".
inline void plot_sweep_curve(const std::string& summary_csv_path,
                             const std::string& out_svg_path) {
  auto rows = detail::parse_csv(read_file(summary_csv_path));
  require<DataError>(rows.size() >= 2, "plot: summary CSV has no rows");
  int var_col = detail::column_index(rows[0], "variant");
  int mean_col = detail::column_index(rows[0], "labeling_mean");
  Series s;
  s.name = "labeling accuracy";
  for (size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < rows[0].size()) continue;
    const std::string& label = rows[r][static_cast<size_t>(var_col)];
    require<DataError>(label.rfind("s=", 0) == 0,
                       cat("plot: sweep label '", label, "' is not s=<n>"));
    s.points.push_back({std::stod(label.substr(2)),
                        std::stod(rows[r][static_cast<size_t>(mean_col)])});
  }
  write_file(out_svg_path, line_chart_svg("shift-distance sweep", "shift s",
                                          "labeling accuracy", {s}));
}

}  // namespace upesv::plot
