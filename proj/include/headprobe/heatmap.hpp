#pragma once

#include <istream>
#include <string>
#include <vector>

#include "headprobe/diff_analysis.hpp"

namespace headprobe {

enum class Palette {
  Diverging,   // signed maps, blue-white-red, clipped to [-1, 1]
  Sequential,  // accuracy-like maps, scaled to the grid's [min, max]
};

struct Rgb {
  int r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Maps a value to a color. Sequential grids with max == min use the top
/// of the ramp.
Rgb palette_color(Palette palette, double value, double lo, double hi);

struct HeatmapStyle {
  Palette palette = Palette::Sequential;
  std::string title;
  std::string value_label;
  int cell_size = 18;
};

/// Layers run down the rows, heads across the columns. Cells flagged in
/// `missing` are drawn grey and excluded from the color range. Throws
/// InvalidArgument on non-finite values outside `missing`.
std::string render_heatmap_svg(const Grid& grid, const HeatmapStyle& style,
                               const std::vector<bool>& missing = {});

/// `layer,head,<value_name>` rows with round-trip precision.
std::string grid_to_table(const Grid& grid, const std::string& value_name);
Grid parse_grid_table(std::istream& in);

/// Writes the SVG and the tabular text side by side.
void emit_heatmap(const Grid& grid, const HeatmapStyle& style, const std::string& svg_path,
                  const std::string& table_path);

}  // namespace headprobe
