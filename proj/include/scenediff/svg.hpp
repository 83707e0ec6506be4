#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "scenediff/object.hpp"

namespace scenediff {

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v == 0.0 ? 0.0 : v);  // no "-0.0000"
  return buf;
}

inline std::string xml_escape(const std::string& s) {
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

}  // namespace detail

/// Top-down view: one rotated footprint polygon per object, a heading tick
/// from the center along (cos r, sin r), and the category name. Scene +Y
/// points up on the page. Output bytes depend only on the scene.
inline std::string render_svg(const Scene& scene, const SceneConfig& cfg, double pixels_per_meter = 60.0) {
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  bool first = true;
  for (const auto& o : scene.objects) {
    const double reach = 0.5 * std::hypot(o.size[0], o.size[1]);
    const double xs[2] = {o.location[0] - reach, o.location[0] + reach};
    const double ys[2] = {o.location[1] - reach, o.location[1] + reach};
    if (first) {
      lo_x = xs[0], hi_x = xs[1], lo_y = ys[0], hi_y = ys[1];
      first = false;
    }
    lo_x = std::min(lo_x, xs[0]), hi_x = std::max(hi_x, xs[1]);
    lo_y = std::min(lo_y, ys[0]), hi_y = std::max(hi_y, ys[1]);
  }
  const double margin = 0.5;
  lo_x -= margin, lo_y -= margin, hi_x += margin, hi_y += margin;
  const double k = pixels_per_meter;
  auto px = [&](double x) { return detail::fmt((x - lo_x) * k); };
  auto py = [&](double y) { return detail::fmt((hi_y - y) * k); };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt((hi_x - lo_x) * k) +
                    "\" height=\"" + detail::fmt((hi_y - lo_y) * k) + "\">\n";
  out += "<title>" + detail::xml_escape(scene.id) + "</title>\n";
  for (const auto& o : scene.objects) {
    const double c = std::cos(o.rotation), s = std::sin(o.rotation);
    const double hx = 0.5 * o.size[0], hy = 0.5 * o.size[1];
    const double corners[4][2] = {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
    std::string pts;
    for (const auto& p : corners) {
      const double x = o.location[0] + c * p[0] - s * p[1];
      const double y = o.location[1] + s * p[0] + c * p[1];
      pts += (pts.empty() ? "" : " ") + px(x) + "," + py(y);
    }
    const std::string name = detail::xml_escape(cfg.category_names.at(o.category));
    out += "<g class=\"object\" data-id=\"" + detail::xml_escape(o.id) + "\">\n";
    out += "  <polygon class=\"box\" points=\"" + pts + "\" fill=\"none\" stroke=\"black\"/>\n";
    out += "  <line class=\"heading\" x1=\"" + px(o.location[0]) + "\" y1=\"" + py(o.location[1]) + "\" x2=\"" +
           px(o.location[0] + hx * c) + "\" y2=\"" + py(o.location[1] + hx * s) + "\" stroke=\"red\"/>\n";
    out += "  <text x=\"" + px(o.location[0]) + "\" y=\"" + py(o.location[1]) +
           "\" font-size=\"10\" text-anchor=\"middle\">" + name + "</text>\n";
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace scenediff
