#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aim/expcli/evaluate.hpp"
#include "aim/expcli/experiment.hpp"
#include "aim/expcli/store.hpp"

// SVG charts from metric tables. Every chart gets a .tsv sidecar holding the plotted
// values verbatim as they appear in the source tables.

namespace aim::expcli {

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

namespace svg {

inline constexpr double kW = 640, kH = 400, kLeft = 70, kRight = 180, kTop = 40, kBottom = 60;
inline const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

inline std::string esc(const std::string& s) {
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

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

/// Padded [lo, hi] for an axis; a degenerate range is widened.
inline std::pair<double, double> range(double lo, double hi) {
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  const double pad = (hi - lo) * 0.05;
  return {lo - pad, hi + pad};
}

inline std::string frame(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                         std::pair<double, double> yr, const std::string& body) {
  std::ostringstream o;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" "
    << "font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << esc(title) << "</text>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = yr.first + (yr.second - yr.first) * t / 4.0;
    const double y = kTop + ph - ph * t / 4.0;
    o << "<line x1=\"" << kLeft - 4 << "\" y1=\"" << num(y) << "\" x2=\"" << kLeft << "\" y2=\"" << num(y)
      << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << format_number(std::round(v * 1e4) / 1e4)
      << "</text>\n";
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 15 << "\" text-anchor=\"middle\">" << esc(xlabel) << "</text>\n";
  o << "<text transform=\"translate(18," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << esc(ylabel)
    << "</text>\n";
  o << body << "</svg>\n";
  return o.str();
}

}  // namespace svg

inline std::string line_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                              const std::vector<Series>& series) {
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  const auto xr = svg::range(xmin, xmax), yr = svg::range(ymin, ymax);
  const double pw = svg::kW - svg::kLeft - svg::kRight, ph = svg::kH - svg::kTop - svg::kBottom;
  auto px = [&](double x) { return svg::kLeft + pw * (x - xr.first) / (xr.second - xr.first); };
  auto py = [&](double y) { return svg::kTop + ph - ph * (y - yr.first) / (yr.second - yr.first); };
  std::ostringstream body;
  std::vector<double> xticks;
  for (const auto& s : series) {
    for (auto [x, y] : s.points) xticks.push_back(x);
  }
  std::sort(xticks.begin(), xticks.end());
  xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
  for (double x : xticks) {
    body << "<text x=\"" << svg::num(px(x)) << "\" y=\"" << svg::kTop + ph + 18 << "\" text-anchor=\"middle\">"
         << format_number(x) << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* col = svg::kPalette[i % 8];
    std::string pts;
    for (auto [x, y] : series[i].points) pts += svg::num(px(x)) + "," + svg::num(py(y)) + " ";
    if (series[i].points.size() > 1) {
      body << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"" << pts << "\"/>\n";
    }
    for (auto [x, y] : series[i].points) {
      body << "<circle cx=\"" << svg::num(px(x)) << "\" cy=\"" << svg::num(py(y)) << "\" r=\"4\" fill=\"" << col << "\"/>\n";
    }
    const double ly = svg::kTop + 16.0 * static_cast<double>(i);
    body << "<rect x=\"" << svg::kW - svg::kRight + 12 << "\" y=\"" << ly << "\" width=\"10\" height=\"10\" fill=\"" << col
         << "\"/>\n<text x=\"" << svg::kW - svg::kRight + 28 << "\" y=\"" << ly + 9 << "\">" << svg::esc(series[i].name)
         << "</text>\n";
  }
  return svg::frame(title, xlabel, ylabel, yr, body.str());
}

inline std::string bar_chart(const std::string& title, const std::string& ylabel,
                             const std::vector<std::pair<std::string, double>>& bars) {
  double ymin = 0.0, ymax = 0.0;
  for (const auto& [l, v] : bars) {
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
  }
  const auto yr = svg::range(ymin, ymax);
  const double pw = svg::kW - svg::kLeft - svg::kRight, ph = svg::kH - svg::kTop - svg::kBottom;
  auto py = [&](double y) { return svg::kTop + ph - ph * (y - yr.first) / (yr.second - yr.first); };
  const double slot = pw / static_cast<double>(std::max<std::size_t>(bars.size(), 1));
  std::ostringstream body;
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double x = svg::kLeft + slot * (static_cast<double>(i) + 0.15);
    const double top = py(std::max(bars[i].second, 0.0)), base = py(std::min(bars[i].second, 0.0));
    body << "<rect x=\"" << svg::num(x) << "\" y=\"" << svg::num(top) << "\" width=\"" << svg::num(slot * 0.7)
         << "\" height=\"" << svg::num(base - top) << "\" fill=\"" << svg::kPalette[i % 8] << "\"/>\n";
    body << "<text x=\"" << svg::kW - svg::kRight + 12 << "\" y=\"" << svg::kTop + 16.0 * static_cast<double>(i) + 9
         << "\" fill=\"" << svg::kPalette[i % 8] << "\">" << svg::esc(bars[i].first) << "</text>\n";
  }
  return svg::frame(title, "", ylabel, yr, body.str());
}

struct PlotResult {
  std::vector<fs::path> files;
};

/// Reads metric tables and writes faithfulness_vs_k.{svg,tsv} plus one bar chart per metric
/// (the value at each series' largest K).
inline PlotResult cmd_plot(const std::vector<fs::path>& reports, const fs::path& out_dir) {
  if (reports.empty()) throw UsageError("plot needs at least one report");
  std::vector<TableRow> rows;
  for (const auto& p : reports) {
    if (!fs::exists(p)) throw UsageError("no report at " + p.string());
    for (auto& r : parse_metric_table(read_text(p))) rows.push_back(std::move(r));
  }
  PlotResult res;
  // Series keyed by dataset/explainer, in first-seen order.
  std::vector<std::string> keys;
  std::map<std::string, std::vector<const TableRow*>> by_series;
  for (const auto& r : rows) {
    const std::string key = r.dataset + "/" + r.explainer;
    if (!by_series.count(key)) keys.push_back(key);
    by_series[key].push_back(&r);
  }

  std::vector<Series> faith;
  std::string side = "series\tk\tfaithfulness\n";
  for (const auto& key : keys) {
    Series s{key, {}};
    std::vector<const TableRow*> pts;
    for (const auto* r : by_series[key]) {
      if (r->metric == "faithfulness") pts.push_back(r);
    }
    std::stable_sort(pts.begin(), pts.end(), [](const TableRow* a, const TableRow* b) { return a->k < b->k; });
    for (const auto* r : pts) {
      s.points.emplace_back(static_cast<double>(r->k), std::stod(r->mean));
      side += key + "\t" + std::to_string(r->k) + "\t" + r->mean + "\n";
    }
    if (!s.points.empty()) faith.push_back(std::move(s));
  }
  if (!faith.empty()) {
    atomic_write(out_dir / "faithfulness_vs_k.svg", line_chart("Faithfulness vs K", "K", "faithfulness", faith));
    atomic_write(out_dir / "faithfulness_vs_k.tsv", side);
    res.files.push_back(out_dir / "faithfulness_vs_k.svg");
    res.files.push_back(out_dir / "faithfulness_vs_k.tsv");
  }

  std::vector<std::string> metric_names;
  for (const auto& r : rows) {
    if (std::find(metric_names.begin(), metric_names.end(), r.metric) == metric_names.end()) metric_names.push_back(r.metric);
  }
  for (const auto& m : metric_names) {
    std::vector<std::pair<std::string, double>> bars;
    std::string bside = "series\tk\t" + m + "\n";
    for (const auto& key : keys) {
      const TableRow* last = nullptr;
      for (const auto* r : by_series[key]) {
        if (r->metric == m && (!last || r->k > last->k)) last = r;
      }
      if (!last) continue;
      bars.emplace_back(key + " K=" + std::to_string(last->k), std::stod(last->mean));
      bside += key + "\t" + std::to_string(last->k) + "\t" + last->mean + "\n";
    }
    atomic_write(out_dir / ("bar_" + m + ".svg"), bar_chart(m, m, bars));
    atomic_write(out_dir / ("bar_" + m + ".tsv"), bside);
    res.files.push_back(out_dir / ("bar_" + m + ".svg"));
    res.files.push_back(out_dir / ("bar_" + m + ".tsv"));
  }
  return res;
}

}  // namespace aim::expcli
