#pragma once

// Dependency-free SVG plots over a MetricsTable: accuracy and sigma curves,
// per-cell selection heatmaps, and (for synthetic planted-cluster data) a 2D
// embedding scatter with the recently selected clients star-marked. Output
// is deterministic: fixed palette, fixed geometry, %.2f coordinates.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "errors.hpp"
#include "experiment.hpp"

namespace fedsel {

enum class PlotKind { AccuracyCurves, SigmaCurves, SelectionHeatmap, EmbeddingScatter };

inline PlotKind plot_kind_from_string(const std::string& s) {
  if (s == "accuracy_curves") return PlotKind::AccuracyCurves;
  if (s == "sigma_curves") return PlotKind::SigmaCurves;
  if (s == "selection_heatmap") return PlotKind::SelectionHeatmap;
  if (s == "embedding_scatter") return PlotKind::EmbeddingScatter;
  throw ConfigError("unknown plot kind '" + s + "'");
}

struct PlotOptions {
  std::string embeddings_path;  // required for EmbeddingScatter
  int window = 10;              // scatter: rounds from the end that count as "selected"
  std::string strategy;         // empty = all strategies
  int repeat = -1;              // -1 = all repeats
};

namespace detail {

inline const char* kPalette[10] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

inline std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string fmtg(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&')
      out += "&amp;";
    else if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else
      out += c;
  }
  return out;
}

struct PlotSeries {
  std::string label;
  int color = 0;
  bool first_of_label = true;  // only the first repeat of a strategy gets a legend row
  std::vector<std::pair<double, double>> pts;
};

inline std::string line_chart_svg(const std::string& title, const std::string& ylabel,
                                  const std::vector<PlotSeries>& series, double ymin,
                                  double ymax) {
  const double W = 860, H = 480, L = 70, R = 24, T = 44, B = 52;
  double xmax = 1.0;
  for (const auto& s : series)
    for (const auto& [x, y] : s.pts) xmax = std::max(xmax, x);
  if (ymax <= ymin) ymax = ymin + 1.0;
  const auto sx = [&](double x) { return L + (W - L - R) * (x / xmax); };
  const auto sy = [&](double y) { return H - B - (H - T - B) * ((y - ymin) / (ymax - ymin)); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmtg(W) +
                    "\" height=\"" + fmtg(H) + "\" viewBox=\"0 0 " + fmtg(W) + " " + fmtg(H) +
                    "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"" + fmt2(W / 2) + "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" +
         xml_escape(title) + "</text>\n";

  for (int i = 0; i <= 5; ++i) {
    const double fx = xmax * i / 5.0;
    const double fy = ymin + (ymax - ymin) * i / 5.0;
    svg += "<line x1=\"" + fmt2(sx(fx)) + "\" y1=\"" + fmt2(T) + "\" x2=\"" + fmt2(sx(fx)) +
           "\" y2=\"" + fmt2(H - B) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    svg += "<line x1=\"" + fmt2(L) + "\" y1=\"" + fmt2(sy(fy)) + "\" x2=\"" + fmt2(W - R) +
           "\" y2=\"" + fmt2(sy(fy)) + "\" stroke=\"#e0e0e0\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt2(sx(fx)) + "\" y=\"" + fmt2(H - B + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + fmtg(fx) +
           "</text>\n";
    svg += "<text x=\"" + fmt2(L - 6) + "\" y=\"" + fmt2(sy(fy) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmtg(fy) +
           "</text>\n";
  }
  svg += "<line x1=\"" + fmt2(L) + "\" y1=\"" + fmt2(H - B) + "\" x2=\"" + fmt2(W - R) +
         "\" y2=\"" + fmt2(H - B) + "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + fmt2(L) + "\" y1=\"" + fmt2(T) + "\" x2=\"" + fmt2(L) + "\" y2=\"" +
         fmt2(H - B) + "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  svg += "<text x=\"" + fmt2(W / 2) + "\" y=\"" + fmt2(H - 12) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">round</text>\n";
  svg += "<text x=\"18\" y=\"" + fmt2(H / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 " +
         fmt2(H / 2) + ")\">" + xml_escape(ylabel) + "</text>\n";

  for (const auto& s : series) {
    if (s.pts.empty()) continue;
    std::string pts;
    for (const auto& [x, y] : s.pts) {
      if (!pts.empty()) pts += ' ';
      pts += fmt2(sx(x)) + "," + fmt2(sy(y));
    }
    svg += "<polyline fill=\"none\" stroke=\"";
    svg += kPalette[s.color % 10];
    svg += "\" stroke-width=\"1.5\" points=\"" + pts + "\"/>\n";
  }

  double ly = T + 8;
  for (const auto& s : series) {
    if (!s.first_of_label) continue;
    svg += "<rect x=\"" + fmt2(W - R - 150) + "\" y=\"" + fmt2(ly) +
           "\" width=\"14\" height=\"4\" fill=\"";
    svg += kPalette[s.color % 10];
    svg += "\"/>\n";
    svg += "<text x=\"" + fmt2(W - R - 132) + "\" y=\"" + fmt2(ly + 6) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(s.label) + "</text>\n";
    ly += 16;
  }
  svg += "</svg>\n";
  return svg;
}

struct CellRows {
  std::string strategy;
  int repeat = 0;
  std::vector<const MetricsRow*> rows;
};

inline std::vector<CellRows> group_cells(const MetricsTable& table, const PlotOptions& opt) {
  std::vector<CellRows> cells;
  for (const auto& r : table.rows) {
    if (!opt.strategy.empty() && r.strategy != opt.strategy) continue;
    if (opt.repeat >= 0 && r.repeat != opt.repeat) continue;
    CellRows* cell = nullptr;
    for (auto& c : cells)
      if (c.strategy == r.strategy && c.repeat == r.repeat) cell = &c;
    if (!cell) {
      cells.push_back({r.strategy, r.repeat, {}});
      cell = &cells.back();
    }
    cell->rows.push_back(&r);
  }
  require_config(!cells.empty(), "plot: no matching rows in table");
  return cells;
}

inline int strategy_color(const std::vector<CellRows>& cells, const std::string& strategy) {
  std::vector<std::string> seen;
  for (const auto& c : cells) {
    bool found = false;
    for (const auto& s : seen) found = found || s == c.strategy;
    if (!found) seen.push_back(c.strategy);
  }
  for (size_t i = 0; i < seen.size(); ++i)
    if (seen[i] == strategy) return static_cast<int>(i);
  return 0;
}

struct EmbeddingPoint {
  double x = 0.0, y = 0.0;
  int cluster = 0;
};

inline std::vector<EmbeddingPoint> parse_embeddings_csv(const std::string& path) {
  std::ifstream in(path);
  require_config(in.good(), "cannot open embeddings csv '" + path + "'");
  std::string line;
  require_config(static_cast<bool>(std::getline(in, line)) && line == "client,x,y,cluster",
                 "embeddings csv: unexpected header");
  std::vector<EmbeddingPoint> pts;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EmbeddingPoint p;
    int client = 0;
    require_config(std::sscanf(line.c_str(), "%d,%lf,%lf,%d", &client, &p.x, &p.y,
                               &p.cluster) == 4,
                   "embeddings csv: bad row '" + line + "'");
    require_config(client == static_cast<int>(pts.size()), "embeddings csv: clients not in order");
    pts.push_back(p);
  }
  require_config(!pts.empty(), "embeddings csv: no rows");
  return pts;
}

inline std::string star_path(double cx, double cy, double r) {
  constexpr double kPi = 3.14159265358979323846;
  std::string d;
  for (int k = 0; k < 10; ++k) {
    const double ang = -kPi / 2 + k * kPi / 5;
    const double rad = (k % 2 == 0) ? r : 0.45 * r;
    d += (k == 0 ? "M" : "L");
    d += fmt2(cx + rad * std::cos(ang)) + " " + fmt2(cy + rad * std::sin(ang));
  }
  d += "Z";
  return d;
}

}  // namespace detail

inline std::vector<std::string> emit_plots(const MetricsTable& table, PlotKind kind,
                                           const std::string& out_dir,
                                           const PlotOptions& opt = {}) {
  namespace fs = std::filesystem;
  require_config(!table.rows.empty(), "plot: empty table");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw InternalError("cannot create '" + out_dir + "': " + ec.message());

  const std::vector<detail::CellRows> cells = detail::group_cells(table, opt);
  std::vector<std::string> written;
  const auto emit = [&](const std::string& name, const std::string& svg) {
    const fs::path p = fs::path(out_dir) / name;
    detail::write_file_atomic(p, svg);
    written.push_back(p.string());
  };

  if (kind == PlotKind::AccuracyCurves || kind == PlotKind::SigmaCurves) {
    const bool acc = kind == PlotKind::AccuracyCurves;
    std::vector<detail::PlotSeries> series;
    std::set<std::string> labeled;
    double ymax = 0.0;
    for (const auto& c : cells) {
      detail::PlotSeries s;
      s.label = c.strategy;
      s.color = detail::strategy_color(cells, c.strategy);
      s.first_of_label = labeled.insert(c.strategy).second;
      for (const MetricsRow* r : c.rows) {
        if (acc) {
          if (!r->accuracy) continue;
          s.pts.emplace_back(r->round, *r->accuracy);
        } else {
          s.pts.emplace_back(r->round, r->sigma);
        }
        ymax = std::max(ymax, s.pts.back().second);
      }
      series.push_back(std::move(s));
    }
    if (acc) {
      bool any = false;
      for (const auto& s : series) any = any || !s.pts.empty();
      require_config(any, "plot: table has no accuracy values");
    }
    emit(acc ? "accuracy_curves.svg" : "sigma_curves.svg",
         detail::line_chart_svg(acc ? "Test accuracy" : "Selection-fairness sigma",
                                acc ? "accuracy" : "sigma", series, 0.0,
                                acc ? 1.0 : ymax * 1.05));
    return written;
  }

  if (kind == PlotKind::SelectionHeatmap) {
    for (const auto& c : cells) {
      const int rounds = static_cast<int>(c.rows.size());
      const int n = static_cast<int>(c.rows.front()->selected.size());
      const double cw = std::max(2.0, std::min(12.0, 980.0 / rounds));
      const double ch = std::max(2.0, std::min(12.0, 560.0 / n));
      const double L = 60, T = 40;
      const double W = L + cw * rounds + 20, H = T + ch * n + 40;
      std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
                        detail::fmtg(W) + "\" height=\"" + detail::fmtg(H) + "\" viewBox=\"0 0 " +
                        detail::fmtg(W) + " " + detail::fmtg(H) + "\">\n";
      svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
      svg += "<text x=\"" + detail::fmt2(W / 2) +
             "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
             detail::xml_escape(c.strategy + " (repeat " + std::to_string(c.repeat) +
                                "), selected clients by round") +
             "</text>\n";
      svg += "<rect x=\"" + detail::fmt2(L) + "\" y=\"" + detail::fmt2(T) + "\" width=\"" +
             detail::fmt2(cw * rounds) + "\" height=\"" + detail::fmt2(ch * n) +
             "\" fill=\"#f3f3f3\"/>\n";
      for (int t = 0; t < rounds; ++t) {
        const MetricsRow* r = c.rows[static_cast<size_t>(t)];
        for (int i = 0; i < n; ++i) {
          if (!r->selected[static_cast<size_t>(i)]) continue;
          svg += "<rect x=\"" + detail::fmt2(L + cw * t) + "\" y=\"" + detail::fmt2(T + ch * i) +
                 "\" width=\"" + detail::fmt2(cw) + "\" height=\"" + detail::fmt2(ch) +
                 "\" fill=\"#1f77b4\"/>\n";
        }
      }
      svg += "<text x=\"" + detail::fmt2(L + cw * rounds / 2) + "\" y=\"" + detail::fmt2(H - 12) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">round</text>\n";
      svg += "<text x=\"20\" y=\"" + detail::fmt2(T + ch * n / 2) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 20 " +
             detail::fmt2(T + ch * n / 2) + ")\">client</text>\n";
      svg += "</svg>\n";
      emit("selection_heatmap__" + detail::sanitize_cell_name(c.strategy) + "__r" +
               std::to_string(c.repeat) + ".svg",
           svg);
    }
    return written;
  }

  // EmbeddingScatter
  require_config(!opt.embeddings_path.empty(),
                 "plot: embedding_scatter needs --embeddings <csv>");
  const std::vector<detail::EmbeddingPoint> pts =
      detail::parse_embeddings_csv(opt.embeddings_path);
  for (const auto& c : cells) {
    require_config(c.rows.front()->selected.size() >= pts.size(),
                   "plot: embeddings do not match table bitmaps");
    const int last = c.rows.back()->round;
    const int lo = last - std::max(1, opt.window) + 1;
    std::vector<uint8_t> marked(pts.size(), 0);
    for (const MetricsRow* r : c.rows) {
      if (r->round < lo) continue;
      for (size_t i = 0; i < pts.size(); ++i)
        if (r->selected[i]) marked[i] = 1;
    }
    double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const double padx = 0.08 * std::max(1e-9, xmax - xmin);
    const double pady = 0.08 * std::max(1e-9, ymax - ymin);
    xmin -= padx;
    xmax += padx;
    ymin -= pady;
    ymax += pady;
    const double W = 640, H = 640, M = 48;
    const auto sx = [&](double x) { return M + (W - 2 * M) * ((x - xmin) / (xmax - xmin)); };
    const auto sy = [&](double y) { return H - M - (H - 2 * M) * ((y - ymin) / (ymax - ymin)); };
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmtg(W) +
                      "\" height=\"" + detail::fmtg(H) + "\" viewBox=\"0 0 " + detail::fmtg(W) +
                      " " + detail::fmtg(H) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
    svg += "<text x=\"" + detail::fmt2(W / 2) +
           "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
           detail::xml_escape(c.strategy + " (repeat " + std::to_string(c.repeat) +
                              "), selections in rounds " + std::to_string(std::max(0, lo)) +
                              ".." + std::to_string(last)) +
           "</text>\n";
    for (size_t i = 0; i < pts.size(); ++i) {
      svg += "<circle cx=\"" + detail::fmt2(sx(pts[i].x)) + "\" cy=\"" +
             detail::fmt2(sy(pts[i].y)) + "\" r=\"4\" fill=\"";
      svg += detail::kPalette[pts[i].cluster % 10];
      svg += "\" fill-opacity=\"0.65\"/>\n";
    }
    for (size_t i = 0; i < pts.size(); ++i) {
      if (!marked[i]) continue;
      svg += "<path d=\"" + detail::star_path(sx(pts[i].x), sy(pts[i].y), 9.0) +
             "\" fill=\"#111111\"/>\n";
    }
    svg += "</svg>\n";
    emit("embedding_scatter__" + detail::sanitize_cell_name(c.strategy) + "__r" +
             std::to_string(c.repeat) + ".svg",
         svg);
  }
  return written;
}

}  // namespace fedsel
