#pragma once

#include "ckdrift/param_metrics.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ckdrift {

enum class Measure { L1, Angular, Auc };
enum class ColorScale { PerPanel, Shared };

std::string_view to_string(Measure measure);
std::optional<Measure> parse_measure(std::string_view text);
std::optional<ColorScale> parse_color_scale(std::string_view text);

double measure_of(const DiffCell& cell, Measure measure);

struct HeatmapSpec {
    Measure measure = Measure::L1;
    ColorScale color_scale = ColorScale::PerPanel;
    std::vector<std::string> panel_labels;  // one per report; empty means "panel 1", "panel 2", ...
    int precision = 3;                      // digits after the decimal point in cell annotations
};

struct Rgb {
    int r = 0;
    int g = 0;
    int b = 0;

    bool operator==(const Rgb&) const = default;
    double luminance() const { return 0.2126 * r + 0.7152 * g + 0.0722 * b; }
};

/// Linear single-hue ramp from near-white (lo) to dark blue (hi). Values are
/// clamped into [lo, hi]; a flat range maps everything to the lightest color.
Rgb ramp_color(double value, double lo, double hi);

/// One grid per report and component: rows are layers ascending (layer 0 on
/// top), columns the matrix kinds q k v o xq xk xv xo wi wo that occur
/// (cross-attention never on encoder grids). Cells without a value are hatched.
/// Kind `other` is never drawn.
std::string render_heatmap(std::span<const DiffReport> reports, const HeatmapSpec& spec);

/// RFC 4180 with CRLF record separators. Kind `other` is written as
/// `other:<tensor name>`.
std::string export_csv(const DiffReport& report);
/// Inverse of export_csv for the cell table.
std::vector<DiffCell> parse_csv(std::string_view text);

/// Per-cell arithmetic mean of d_l1, d_ang and AUC across runs.
DiffReport aggregate_reports(std::span<const DiffReport> reports);

}  // namespace ckdrift
