#pragma once

// Minimal SVG line plots of a trajectory log — enough to eyeball a run
// (outputs converging, beta settling, control staying inside its box)
// without pulling in a plotting stack.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "platoon/harness.hpp"

namespace platoon {

namespace plot_detail {

struct Series {
  std::string label;
  std::string color;
  bool dashed = false;
  std::vector<double> x, y;
};

inline std::string agent_color(int i, int n) {
  const int hue = (360 * i) / std::max(n, 1);
  return "hsl(" + std::to_string(hue) + ",65%,42%)";
}

inline void render_svg(const std::string& path, const std::string& title,
                       const std::vector<Series>& series) {
  constexpr double W = 720, H = 420;
  constexpr double L = 60, R = 20, T = 34, B = 40;  // margins

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (!any) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        any = true;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const auto X = [&](double x) {
    return L + (x - xmin) / (xmax - xmin) * (W - L - R);
  };
  const auto Y = [&](double y) {
    return H - B - (y - ymin) / (ymax - ymin) * (H - T - B);
  };
  const auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
  };

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
      << "' height='" << H << "' viewBox='0 0 " << W << " " << H << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << W / 2 << "' y='20' text-anchor='middle' "
         "font-family='sans-serif' font-size='14'>" << title << "</text>\n";

  // Frame and ticks.
  svg << "<rect x='" << L << "' y='" << T << "' width='" << W - L - R
      << "' height='" << H - T - B
      << "' fill='none' stroke='#444' stroke-width='1'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    svg << "<text x='" << X(xv) << "' y='" << H - B + 16
        << "' text-anchor='middle' font-family='sans-serif' font-size='10'>"
        << fmt(xv) << "</text>\n";
    svg << "<text x='" << L - 6 << "' y='" << Y(yv) + 3
        << "' text-anchor='end' font-family='sans-serif' font-size='10'>"
        << fmt(yv) << "</text>\n";
    if (i > 0 && i < 4) {
      svg << "<line x1='" << L << "' y1='" << Y(yv) << "' x2='" << W - R
          << "' y2='" << Y(yv) << "' stroke='#ddd' stroke-width='0.5'/>\n";
    }
  }

  for (const auto& s : series) {
    if (s.x.empty()) continue;
    svg << "<polyline fill='none' stroke='" << s.color
        << "' stroke-width='1.3'";
    if (s.dashed) svg << " stroke-dasharray='5,4'";
    svg << " points='";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) svg << ' ';
      svg << X(s.x[i]) << ',' << Y(s.y[i]);
    }
    svg << "'/>\n";
  }

  // Legend along the top edge of the frame.
  double lx = L + 8;
  for (const auto& s : series) {
    svg << "<line x1='" << lx << "' y1='" << T + 12 << "' x2='" << lx + 18
        << "' y2='" << T + 12 << "' stroke='" << s.color
        << "' stroke-width='2'";
    if (s.dashed) svg << " stroke-dasharray='5,4'";
    svg << "/>\n<text x='" << lx + 22 << "' y='" << T + 16
        << "' font-family='sans-serif' font-size='11'>" << s.label
        << "</text>\n";
    lx += 30 + 7.0 * s.label.size();
  }

  svg << "</svg>\n";
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << svg.str();
  if (!out.flush()) throw Error("short write to '" + path + "'");
}

inline std::vector<Series> per_agent_series(const TrajectoryLog& log,
                                            double LogRow::*field) {
  std::vector<Series> out(log.n_agents);
  for (int i = 0; i < log.n_agents; ++i) {
    out[i].label = "agent " + std::to_string(i);
    out[i].color = agent_color(i, log.n_agents);
  }
  for (const LogRow& r : log.rows) {
    out[r.agent].x.push_back(r.t);
    out[r.agent].y.push_back(r.*field);
  }
  return out;
}

}  // namespace plot_detail

/// Writes outputs.svg, beta.svg, cost.svg and control.svg into `dir`
/// (which must exist).
inline void export_plots(const TrajectoryLog& log, const std::string& dir,
                         const ReferenceProfile* ref = nullptr) {
  using plot_detail::per_agent_series;
  using plot_detail::render_svg;

  auto outputs = per_agent_series(log, &LogRow::y);
  if (ref && log.n_agents > 0) {
    plot_detail::Series r;
    r.label = "reference";
    r.color = "#222";
    r.dashed = true;
    for (int k = 0; k < log.steps(); ++k) {
      r.x.push_back(k * log.T);
      r.y.push_back(ref->v_ref(k));
    }
    outputs.push_back(std::move(r));
  }
  render_svg(dir + "/outputs.svg", "tracked outputs (m/s)", outputs);
  render_svg(dir + "/beta.svg", "disagreement points",
             per_agent_series(log, &LogRow::beta));
  render_svg(dir + "/cost.svg", "realized global cost",
             per_agent_series(log, &LogRow::kappa));
  render_svg(dir + "/control.svg", "control actions (m/s^2)",
             per_agent_series(log, &LogRow::u));
}

}  // namespace platoon
