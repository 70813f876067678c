#include "headprobe/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "headprobe/common.hpp"

namespace headprobe {

namespace {

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  auto mix = [t](int x, int y) { return static_cast<int>(std::lround(x + (y - x) * t)); };
  return {mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b)};
}

constexpr Rgb kBlue{33, 102, 172};
constexpr Rgb kWhite{247, 247, 247};
constexpr Rgb kRed{178, 24, 43};
constexpr Rgb kSeqLow{255, 255, 204};
constexpr Rgb kSeqMid{253, 141, 60};
constexpr Rgb kSeqHigh{189, 0, 38};

std::string hex(const Rgb& c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

Rgb palette_color(Palette palette, double value, double lo, double hi) {
  if (palette == Palette::Diverging) {
    const double v = std::clamp(value, -1.0, 1.0);
    return v < 0.0 ? lerp(kWhite, kBlue, -v) : lerp(kWhite, kRed, v);
  }
  const double t = hi > lo ? std::clamp((value - lo) / (hi - lo), 0.0, 1.0) : 1.0;
  return t < 0.5 ? lerp(kSeqLow, kSeqMid, t * 2.0) : lerp(kSeqMid, kSeqHigh, (t - 0.5) * 2.0);
}

std::string render_heatmap_svg(const Grid& grid, const HeatmapStyle& style, const std::vector<bool>& missing) {
  if (grid.n_layers < 1 || grid.n_heads < 1) throw InvalidArgument("heatmap grid must be non-empty");
  auto is_missing = [&](std::size_t i) { return i < missing.size() && missing[i]; };
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    if (is_missing(i)) continue;
    const double v = grid.values[i];
    if (!std::isfinite(v)) throw InvalidArgument("heatmap value at index " + std::to_string(i) + " is not finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (style.palette == Palette::Diverging) {
    lo = -1.0;
    hi = 1.0;
  }

  const int cs = style.cell_size;
  const int left = 56, top = 40, legend_w = 16, legend_gap = 24;
  const int plot_w = grid.n_heads * cs;
  const int plot_h = grid.n_layers * cs;
  const int width = left + plot_w + legend_gap + legend_w + 60;
  const int height = top + plot_h + 44;
  const int tick_every = std::max({1, grid.n_heads / 16, grid.n_layers / 16});

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (!style.title.empty()) {
    os << "<text x=\"" << left + plot_w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">"
       << escape(style.title) << "</text>\n";
  }
  for (int l = 0; l < grid.n_layers; ++l) {
    for (int h = 0; h < grid.n_heads; ++h) {
      const std::size_t i = static_cast<std::size_t>(l) * grid.n_heads + h;
      const std::string fill = is_missing(i) ? "#bdbdbd" : hex(palette_color(style.palette, grid.values[i], lo, hi));
      os << "<rect x=\"" << left + h * cs << "\" y=\"" << top + l * cs << "\" width=\"" << cs << "\" height=\""
         << cs << "\" fill=\"" << fill << "\"><title>layer " << l << ", head " << h << ": "
         << (is_missing(i) ? std::string("failed") : num(grid.values[i])) << "</title></rect>\n";
    }
  }
  for (int h = 0; h < grid.n_heads; h += tick_every) {
    os << "<text x=\"" << left + h * cs + cs / 2 << "\" y=\"" << top + plot_h + 12
       << "\" text-anchor=\"middle\">" << h << "</text>\n";
  }
  for (int l = 0; l < grid.n_layers; l += tick_every) {
    os << "<text x=\"" << left - 4 << "\" y=\"" << top + l * cs + cs / 2 + 3 << "\" text-anchor=\"end\">" << l
       << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << top + plot_h + 30 << "\" text-anchor=\"middle\">head</text>\n";
  os << "<text x=\"14\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << top + plot_h / 2 << ")\">layer</text>\n";

  // Legend: vertical ramp, top = hi.
  const int lx = left + plot_w + legend_gap;
  const int steps = 32;
  const double seg = static_cast<double>(plot_h) / steps;
  for (int s = 0; s < steps; ++s) {
    const double v = hi - (hi - lo) * (s + 0.5) / steps;
    char y[32], h[32];
    std::snprintf(y, sizeof y, "%.2f", top + s * seg);
    std::snprintf(h, sizeof h, "%.2f", seg + 0.5);
    os << "<rect x=\"" << lx << "\" y=\"" << y << "\" width=\"" << legend_w << "\" height=\"" << h << "\" fill=\""
       << hex(palette_color(style.palette, hi > lo ? v : hi, lo, hi)) << "\"/>\n";
  }
  os << "<text x=\"" << lx + legend_w + 4 << "\" y=\"" << top + 8 << "\">" << num(hi) << "</text>\n";
  if (hi > lo) {
    os << "<text x=\"" << lx + legend_w + 4 << "\" y=\"" << top + plot_h << "\">" << num(lo) << "</text>\n";
  }
  if (!style.value_label.empty()) {
    os << "<text x=\"" << lx << "\" y=\"" << top - 6 << "\">" << escape(style.value_label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string grid_to_table(const Grid& grid, const std::string& value_name) {
  std::ostringstream os;
  os << "layer,head," << value_name << '\n';
  char buf[64];
  for (int l = 0; l < grid.n_layers; ++l) {
    for (int h = 0; h < grid.n_heads; ++h) {
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g\n", l, h, grid.at(l, h));
      os << buf;
    }
  }
  return os.str();
}

Grid parse_grid_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty grid table");
  std::vector<std::tuple<int, int, double>> rows;
  int max_l = -1, max_h = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    int l = 0, h = 0;
    double v = 0.0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf", &l, &h, &v) != 3 || l < 0 || h < 0) {
      throw FormatError("malformed grid row: " + line);
    }
    rows.emplace_back(l, h, v);
    max_l = std::max(max_l, l);
    max_h = std::max(max_h, h);
  }
  Grid g(max_l + 1, max_h + 1, std::numeric_limits<double>::quiet_NaN());
  for (auto [l, h, v] : rows) g.at(l, h) = v;
  return g;
}

void emit_heatmap(const Grid& grid, const HeatmapStyle& style, const std::string& svg_path,
                  const std::string& table_path) {
  const std::string svg = render_heatmap_svg(grid, style);
  std::ofstream svg_out(svg_path, std::ios::binary | std::ios::trunc);
  std::ofstream table_out(table_path, std::ios::binary | std::ios::trunc);
  if (!svg_out || !table_out) throw FormatError("cannot write heatmap outputs to " + svg_path);
  svg_out << svg;
  table_out << grid_to_table(grid, style.value_label.empty() ? "value" : style.value_label);
}

}  // namespace headprobe
