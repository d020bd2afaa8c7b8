#pragma once

// Minimal SVG line plots for loss curves and ECG overlays.

#include "eikinv/common.hpp"
#include "eikinv/ecg.hpp"
#include "eikinv/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace eikinv::svg {

struct Series {
  std::vector<double> x, y;
  std::string color = "#1f77b4";
  std::string label;
  bool dashed = false;
};

struct Panel {
  std::string title;
  std::string x_label, y_label;
  std::vector<Series> series;
  bool log_y = false;
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '&') o += "&amp;";
    else if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else o += c;
  }
  return o;
}

inline std::string panel(const Panel& p, double ox, double oy, double w, double h) {
  const double ml = 60, mr = 10, mt = 22, mb = 36;
  const double pw = w - ml - mr, ph = h - mt - mb;
  auto ty = [&](double y) { return p.log_y ? std::log10(std::max(y, 1e-300)) : y; };
  double x0 = kInf, x1 = -kInf, y0 = kInf, y1 = -kInf;
  for (const Series& s : p.series)
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k]) || (p.log_y && !(s.y[k] > 0))) continue;
      x0 = std::min(x0, s.x[k]);
      x1 = std::max(x1, s.x[k]);
      y0 = std::min(y0, ty(s.y[k]));
      y1 = std::max(y1, ty(s.y[k]));
    }
  if (!(x1 > x0)) { x0 -= 0.5; x1 += 0.5; }
  if (!(y1 > y0)) { y0 -= 0.5; y1 += 0.5; }
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  auto px = [&](double x) { return ox + ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return oy + mt + (1.0 - (ty(y) - y0) / (y1 - y0)) * ph; };

  std::string o;
  o += "<rect x=\"" + num(ox + ml) + "\" y=\"" + num(oy + mt) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"#444\"/>\n";
  o += "<text x=\"" + num(ox + ml + pw / 2) + "\" y=\"" + num(oy + 15) +
       "\" text-anchor=\"middle\" font-size=\"13\">" + escape(p.title) + "</text>\n";
  o += "<text x=\"" + num(ox + ml + pw / 2) + "\" y=\"" + num(oy + h - 4) +
       "\" text-anchor=\"middle\" font-size=\"11\">" + escape(p.x_label) + "</text>\n";
  o += "<text x=\"" + num(ox + 12) + "\" y=\"" + num(oy + mt + ph / 2) + "\" text-anchor=\"middle\" font-size=\"11\" "
       "transform=\"rotate(-90 " + num(ox + 12) + " " + num(oy + mt + ph / 2) + ")\">" + escape(p.y_label) + "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double fx = x0 + (x1 - x0) * k / 4.0, fy = y0 + (y1 - y0) * k / 4.0;
    const double sx = ox + ml + pw * k / 4.0, sy = oy + mt + ph * (1.0 - k / 4.0);
    o += "<text x=\"" + num(sx) + "\" y=\"" + num(oy + mt + ph + 14) + "\" text-anchor=\"middle\" font-size=\"10\">" +
         tick(fx) + "</text>\n";
    o += "<text x=\"" + num(ox + ml - 4) + "\" y=\"" + num(sy + 3) + "\" text-anchor=\"end\" font-size=\"10\">" +
         tick(p.log_y ? std::pow(10.0, fy) : fy) + "</text>\n";
  }
  double ly = oy + mt + 12;
  for (const Series& s : p.series) {
    std::string pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k]) || (p.log_y && !(s.y[k] > 0))) continue;
      pts += num(px(s.x[k])) + "," + num(py(s.y[k])) + " ";
    }
    o += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.3\"" +
         (s.dashed ? " stroke-dasharray=\"5,3\"" : "") + " points=\"" + pts + "\"/>\n";
    if (!s.label.empty()) {
      o += "<text x=\"" + num(ox + ml + pw - 6) + "\" y=\"" + num(ly) + "\" text-anchor=\"end\" font-size=\"10\" fill=\"" +
           s.color + "\">" + escape(s.label) + "</text>\n";
      ly += 12;
    }
  }
  return o;
}

}  // namespace detail

/// Panels laid out in a grid with `cols` columns.
inline std::string render(const std::vector<Panel>& panels, int cols, double panel_w = 360, double panel_h = 220) {
  cols = std::max(1, cols);
  const int rows = static_cast<int>((panels.size() + static_cast<std::size_t>(cols) - 1) / static_cast<std::size_t>(cols));
  const double W = cols * panel_w, H = std::max(1, rows) * panel_h;
  std::string o = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::num(W) + "\" height=\"" +
                  detail::num(H) + "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i)
    o += detail::panel(panels[i], (i % static_cast<std::size_t>(cols)) * panel_w,
                       static_cast<double>(i / static_cast<std::size_t>(cols)) * panel_h, panel_w, panel_h);
  return o + "</svg>\n";
}

inline std::string loss_curve(const std::vector<double>& loss) {
  Panel p{"Loss per epoch", "epoch", "loss (mV^2)", {}, true};
  Series s;
  for (std::size_t k = 0; k < loss.size(); ++k) {
    s.x.push_back(static_cast<double>(k));
    s.y.push_back(loss[k]);
  }
  p.series.push_back(std::move(s));
  return render({p}, 1, 520, 320);
}

/// One panel per lead; `other` is drawn dashed when given (same lead order).
inline std::string ecg_overlay(const EcgTrace& a, const std::string& a_label, const EcgTrace* other = nullptr,
                               const std::string& other_label = "") {
  std::vector<Panel> panels;
  for (Index l = 0; l < a.n_leads(); ++l) {
    Panel p{a.names[static_cast<std::size_t>(l)], "time (ms)", "mV", {}, false};
    Series s{{}, {}, "#1f77b4", a_label, false};
    for (Index k = 0; k < a.grid.n; ++k) {
      s.x.push_back(a.grid.time(k));
      s.y.push_back(a.values(l, k));
    }
    p.series.push_back(std::move(s));
    if (other && l < other->n_leads()) {
      Series t{{}, {}, "#d62728", other_label, true};
      for (Index k = 0; k < other->grid.n; ++k) {
        t.x.push_back(other->grid.time(k));
        t.y.push_back(other->values(l, k));
      }
      p.series.push_back(std::move(t));
    }
    panels.push_back(std::move(p));
  }
  return render(panels, 2);
}

}  // namespace eikinv::svg
