#include "ckdrift/report.hpp"

#include "ckdrift/error.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace ckdrift {

namespace {

constexpr Rgb kLightest{247, 251, 255};
constexpr Rgb kDarkest{8, 48, 107};

constexpr int kCellWidth = 52;
constexpr int kCellHeight = 22;
constexpr int kRowLabelWidth = 44;
constexpr int kTitleHeight = 22;
constexpr int kHeaderHeight = 18;
constexpr int kFooterHeight = 20;
constexpr int kPanelGap = 24;
constexpr int kMargin = 16;
constexpr int kDocumentTitleHeight = 28;

struct Grid {
    std::size_t report = 0;
    Component component = Component::Encoder;
    std::vector<MatrixKind> kinds;
    std::vector<std::size_t> layers;
    std::map<std::pair<std::size_t, MatrixKind>, double> values;
    double lo = 0.0;
    double hi = 0.0;

    int width() const { return kRowLabelWidth + static_cast<int>(kinds.size()) * kCellWidth; }
    int height() const {
        return kTitleHeight + kHeaderHeight + static_cast<int>(layers.size()) * kCellHeight + kFooterHeight;
    }
};

std::set<ParamLocator> drawable_locators(const DiffReport& report) {
    std::set<ParamLocator> out;
    for (const auto& cell : report.cells) {
        if (cell.locator.kind != MatrixKind::Other) out.insert(cell.locator);
    }
    return out;
}

std::optional<Grid> build_grid(const DiffReport& report, std::size_t index, Component component, Measure measure) {
    Grid grid;
    grid.report = index;
    grid.component = component;
    std::set<MatrixKind> kinds;
    std::set<std::size_t> layers;
    for (const auto& cell : report.cells) {
        const auto& loc = cell.locator;
        if (loc.component != component || loc.kind == MatrixKind::Other) continue;
        if (component == Component::Encoder && is_cross_attention(loc.kind)) continue;
        kinds.insert(loc.kind);
        layers.insert(loc.layer);
        grid.values[{loc.layer, loc.kind}] = measure_of(cell, measure);
    }
    if (grid.values.empty()) return std::nullopt;
    for (auto kind : kHeatmapKinds) {
        if (kinds.contains(kind)) grid.kinds.push_back(kind);
    }
    grid.layers.assign(layers.begin(), layers.end());
    grid.lo = grid.values.begin()->second;
    grid.hi = grid.lo;
    for (const auto& [key, value] : grid.values) {
        grid.lo = std::min(grid.lo, value);
        grid.hi = std::max(grid.hi, value);
    }
    return grid;
}

std::string hex(Rgb c) {
    char buffer[8];
    std::snprintf(buffer, sizeof buffer, "#%02x%02x%02x", c.r, c.g, c.b);
    return buffer;
}

std::string xml_escape(std::string_view text) {
    std::string out;
    for (char c : text) {
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

std::string csv_field(std::string_view text) {
    if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::vector<std::vector<std::string>> parse_csv_records(std::string_view text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    std::size_t i = 0;
    auto end_record = [&] {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
        record.clear();
        field.clear();
        field_started = false;
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
            } else {
                field += c;
            }
            ++i;
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
            field_started = false;
        } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
            end_record();
            ++i;
        } else if (c == '\n') {
            end_record();
        } else {
            field += c;
            field_started = true;
        }
        ++i;
    }
    if (quoted) throw Error(ErrorCode::MalformedReport, "unterminated quoted CSV field");
    if (field_started || !record.empty()) end_record();
    return records;
}

template <typename T>
T parse_number(const std::string& text, const char* column) {
    std::istringstream in(text);
    in.imbue(std::locale::classic());
    T value{};
    in >> value;
    if (!in || !in.eof()) throw Error(ErrorCode::MalformedReport, std::string("bad ") + column + " value '" + text + "'");
    return value;
}

}  // namespace

std::string_view to_string(Measure measure) {
    switch (measure) {
        case Measure::L1: return "l1";
        case Measure::Angular: return "angular";
        case Measure::Auc: return "auc";
    }
    return "l1";
}

std::optional<Measure> parse_measure(std::string_view text) {
    if (text == "l1") return Measure::L1;
    if (text == "angular") return Measure::Angular;
    if (text == "auc") return Measure::Auc;
    return std::nullopt;
}

std::optional<ColorScale> parse_color_scale(std::string_view text) {
    if (text == "per_panel") return ColorScale::PerPanel;
    if (text == "shared") return ColorScale::Shared;
    return std::nullopt;
}

double measure_of(const DiffCell& cell, Measure measure) {
    switch (measure) {
        case Measure::L1: return cell.d_l1;
        case Measure::Angular: return cell.d_ang;
        case Measure::Auc: return cell.auc;
    }
    return cell.d_l1;
}

Rgb ramp_color(double value, double lo, double hi) {
    double t = 0.0;
    if (hi > lo) t = std::clamp((value - lo) / (hi - lo), 0.0, 1.0);
    auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
    return {mix(kLightest.r, kDarkest.r), mix(kLightest.g, kDarkest.g), mix(kLightest.b, kDarkest.b)};
}

std::string render_heatmap(std::span<const DiffReport> reports, const HeatmapSpec& spec) {
    if (reports.empty()) throw Error(ErrorCode::EmptyReport, "no reports to render");
    if (!spec.panel_labels.empty() && spec.panel_labels.size() != reports.size()) {
        throw Error(ErrorCode::InvalidArgument, std::to_string(spec.panel_labels.size()) + " labels for " +
                                                    std::to_string(reports.size()) + " reports");
    }
    if (spec.precision < 0 || spec.precision > 17) {
        throw Error(ErrorCode::InvalidArgument, "annotation precision must be within [0, 17]");
    }
    if (spec.color_scale == ColorScale::Shared) {
        const auto reference = drawable_locators(reports[0]);
        for (std::size_t i = 1; i < reports.size(); ++i) {
            if (drawable_locators(reports[i]) != reference) {
                throw Error(ErrorCode::TaxonomyMismatch,
                            "report " + std::to_string(i + 1) + " covers different matrices than report 1");
            }
        }
    }

    // grids[c][r]: component row c, report column r
    std::vector<std::vector<std::optional<Grid>>> grids(2, std::vector<std::optional<Grid>>(reports.size()));
    bool any = false;
    for (std::size_t r = 0; r < reports.size(); ++r) {
        bool report_has_cells = false;
        for (Component component : {Component::Encoder, Component::Decoder}) {
            auto grid = build_grid(reports[r], r, component, spec.measure);
            report_has_cells = report_has_cells || grid.has_value();
            grids[component == Component::Encoder ? 0 : 1][r] = std::move(grid);
        }
        if (!report_has_cells) {
            throw Error(ErrorCode::EmptyReport, "report " + std::to_string(r + 1) + " has no drawable cells");
        }
        any = true;
    }
    if (!any) throw Error(ErrorCode::EmptyReport, "nothing to draw");

    if (spec.color_scale == ColorScale::Shared) {
        double lo = 0.0;
        double hi = 0.0;
        bool first = true;
        for (const auto& row : grids) {
            for (const auto& grid : row) {
                if (!grid) continue;
                lo = first ? grid->lo : std::min(lo, grid->lo);
                hi = first ? grid->hi : std::max(hi, grid->hi);
                first = false;
            }
        }
        for (auto& row : grids) {
            for (auto& grid : row) {
                if (grid) {
                    grid->lo = lo;
                    grid->hi = hi;
                }
            }
        }
    }

    std::vector<int> column_width(reports.size(), 0);
    std::vector<int> row_height(2, 0);
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t r = 0; r < reports.size(); ++r) {
            if (!grids[c][r]) continue;
            column_width[r] = std::max(column_width[r], grids[c][r]->width());
            row_height[c] = std::max(row_height[c], grids[c][r]->height());
        }
    }
    std::vector<int> column_x(reports.size());
    int width = kMargin;
    for (std::size_t r = 0; r < reports.size(); ++r) {
        column_x[r] = width;
        width += column_width[r] + kPanelGap;
    }
    width += kMargin - kPanelGap;
    std::vector<int> row_y(2);
    int height = kMargin + kDocumentTitleHeight;
    for (std::size_t c = 0; c < 2; ++c) {
        row_y[c] = height;
        if (row_height[c] > 0) height += row_height[c] + kPanelGap;
    }
    height += kMargin - kPanelGap;

    auto label_of = [&](std::size_t r) {
        return spec.panel_labels.empty() ? "panel " + std::to_string(r + 1) : spec.panel_labels[r];
    };
    const char* measure_title = spec.measure == Measure::L1        ? "normalized l1 change"
                                : spec.measure == Measure::Angular ? "angular change"
                                                                   : "change-distribution AUC";

    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
    svg << "<defs><pattern id=\"hatch\" width=\"6\" height=\"6\" patternUnits=\"userSpaceOnUse\" "
           "patternTransform=\"rotate(45)\"><rect width=\"6\" height=\"6\" fill=\"#ffffff\"/>"
           "<line x1=\"0\" y1=\"0\" x2=\"0\" y2=\"6\" stroke=\"#999999\" stroke-width=\"2\"/></pattern></defs>\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"#ffffff\"/>\n";
    svg << "<text x=\"" << kMargin << "\" y=\"" << kMargin + 14 << "\" font-size=\"14\">" << measure_title
        << " (" << (spec.color_scale == ColorScale::Shared ? "shared scale" : "per-panel scale") << ")</text>\n";

    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t r = 0; r < reports.size(); ++r) {
            if (!grids[c][r]) continue;
            const Grid& grid = *grids[c][r];
            const int x0 = column_x[r];
            const int y0 = row_y[c];
            svg << "<g class=\"panel\" data-report=\"" << r << "\" data-component=\"" << to_string(grid.component)
                << "\">\n";
            svg << "<text x=\"" << x0 << "\" y=\"" << y0 + 14 << "\" font-size=\"12\">" << xml_escape(label_of(r))
                << " / " << to_string(grid.component) << "</text>\n";
            const int header_y = y0 + kTitleHeight;
            for (std::size_t k = 0; k < grid.kinds.size(); ++k) {
                svg << "<text x=\"" << x0 + kRowLabelWidth + static_cast<int>(k) * kCellWidth + kCellWidth / 2
                    << "\" y=\"" << header_y + 12 << "\" text-anchor=\"middle\">" << to_string(grid.kinds[k])
                    << "</text>\n";
            }
            const int body_y = header_y + kHeaderHeight;
            for (std::size_t l = 0; l < grid.layers.size(); ++l) {
                const int y = body_y + static_cast<int>(l) * kCellHeight;
                svg << "<text x=\"" << x0 + kRowLabelWidth - 6 << "\" y=\"" << y + 15
                    << "\" text-anchor=\"end\">L" << grid.layers[l] << "</text>\n";
                for (std::size_t k = 0; k < grid.kinds.size(); ++k) {
                    const int x = x0 + kRowLabelWidth + static_cast<int>(k) * kCellWidth;
                    auto it = grid.values.find({grid.layers[l], grid.kinds[k]});
                    if (it == grid.values.end()) {
                        svg << "<rect class=\"missing\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellWidth
                            << "\" height=\"" << kCellHeight << "\" fill=\"url(#hatch)\" stroke=\"#ffffff\"/>\n";
                        continue;
                    }
                    const Rgb color = ramp_color(it->second, grid.lo, grid.hi);
                    const std::string text = detail::format_fixed(it->second, spec.precision);
                    svg << "<rect class=\"cell\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCellWidth
                        << "\" height=\"" << kCellHeight << "\" fill=\"" << hex(color)
                        << "\" stroke=\"#ffffff\"><title>" << to_string(grid.component) << " L" << grid.layers[l]
                        << ' ' << to_string(grid.kinds[k]) << ": " << detail::format_real17(it->second)
                        << "</title></rect>\n";
                    svg << "<text x=\"" << x + kCellWidth / 2 << "\" y=\"" << y + 15
                        << "\" text-anchor=\"middle\" font-size=\"9\" fill=\""
                        << (color.luminance() < 128.0 ? "#ffffff" : "#000000") << "\">" << text << "</text>\n";
                }
            }
            const int footer_y = body_y + static_cast<int>(grid.layers.size()) * kCellHeight;
            svg << "<text class=\"range\" x=\"" << x0 + kRowLabelWidth << "\" y=\"" << footer_y + 14
                << "\">min " << detail::format_fixed(grid.lo, spec.precision) << " max "
                << detail::format_fixed(grid.hi, spec.precision) << "</text>\n";
            svg << "</g>\n";
        }
    }
    svg << "</svg>\n";
    return svg.str();
}

std::string export_csv(const DiffReport& report) {
    std::string out = "component,layer,kind,rows,cols,d_l1,d_ang,auc,zero_rows\r\n";
    for (const auto& cell : report.cells) {
        const std::string kind = cell.locator.kind == MatrixKind::Other
                                     ? "other:" + cell.locator.other_name
                                     : std::string(to_string(cell.locator.kind));
        out += std::string(to_string(cell.locator.component)) + "," + std::to_string(cell.locator.layer) + "," +
               csv_field(kind) + "," + std::to_string(cell.rows) + "," + std::to_string(cell.cols) + "," +
               detail::format_real17(cell.d_l1) + "," + detail::format_real17(cell.d_ang) + "," +
               detail::format_real17(cell.auc) + "," + std::to_string(cell.zero_rows) + "\r\n";
    }
    return out;
}

std::vector<DiffCell> parse_csv(std::string_view text) {
    const auto records = parse_csv_records(text);
    if (records.empty() || records[0] != std::vector<std::string>{"component", "layer", "kind", "rows", "cols",
                                                                  "d_l1", "d_ang", "auc", "zero_rows"}) {
        throw Error(ErrorCode::MalformedReport, "missing or unexpected CSV header");
    }
    std::vector<DiffCell> cells;
    for (std::size_t i = 1; i < records.size(); ++i) {
        const auto& f = records[i];
        if (f.size() != 9) throw Error(ErrorCode::MalformedReport, "CSV record " + std::to_string(i) + " has " +
                                                                       std::to_string(f.size()) + " fields");
        DiffCell cell;
        const auto component = parse_component(f[0]);
        if (!component) throw Error(ErrorCode::MalformedReport, "bad component '" + f[0] + "'");
        cell.locator.component = *component;
        cell.locator.layer = parse_number<std::size_t>(f[1], "layer");
        if (f[2].rfind("other:", 0) == 0) {
            cell.locator.kind = MatrixKind::Other;
            cell.locator.other_name = f[2].substr(6);
        } else {
            const auto kind = parse_kind(f[2]);
            if (!kind || *kind == MatrixKind::Other) throw Error(ErrorCode::MalformedReport, "bad kind '" + f[2] + "'");
            cell.locator.kind = *kind;
        }
        cell.rows = parse_number<std::size_t>(f[3], "rows");
        cell.cols = parse_number<std::size_t>(f[4], "cols");
        cell.d_l1 = parse_number<double>(f[5], "d_l1");
        cell.d_ang = parse_number<double>(f[6], "d_ang");
        cell.auc = parse_number<double>(f[7], "auc");
        cell.zero_rows = parse_number<std::size_t>(f[8], "zero_rows");
        cells.push_back(std::move(cell));
    }
    return cells;
}

DiffReport aggregate_reports(std::span<const DiffReport> reports) {
    if (reports.empty()) throw Error(ErrorCode::EmptyReport, "no reports to aggregate");
    const DiffReport& first = reports[0];
    DiffReport out = first;
    std::set<std::string> befores{first.before_path};
    std::set<std::string> afters{first.after_path};
    std::set<std::string> unclassified(first.unclassified.begin(), first.unclassified.end());
    for (std::size_t r = 1; r < reports.size(); ++r) {
        const DiffReport& other = reports[r];
        if (other.cells.size() != first.cells.size()) {
            throw Error(ErrorCode::TaxonomyMismatch, "report " + std::to_string(r + 1) + " has a different cell count");
        }
        if (other.quantum != first.quantum) {
            throw Error(ErrorCode::TaxonomyMismatch, "report " + std::to_string(r + 1) + " uses a different quantum");
        }
        for (std::size_t i = 0; i < first.cells.size(); ++i) {
            const DiffCell& a = first.cells[i];
            const DiffCell& b = other.cells[i];
            if (a.locator != b.locator || a.rows != b.rows || a.cols != b.cols) {
                throw Error(ErrorCode::TaxonomyMismatch, "report " + std::to_string(r + 1) + " disagrees at " +
                                                             describe(a.locator));
            }
            if (a.zero_rows != b.zero_rows) {
                throw Error(ErrorCode::TaxonomyMismatch, "zero-row counts differ at " + describe(a.locator));
            }
        }
        befores.insert(other.before_path);
        afters.insert(other.after_path);
        unclassified.insert(other.unclassified.begin(), other.unclassified.end());
    }
    const double n = static_cast<double>(reports.size());
    for (std::size_t i = 0; i < out.cells.size(); ++i) {
        double l1 = 0.0;
        double ang = 0.0;
        double area = 0.0;
        for (const auto& report : reports) {
            l1 += report.cells[i].d_l1;
            ang += report.cells[i].d_ang;
            area += report.cells[i].auc;
        }
        out.cells[i].d_l1 = l1 / n;
        out.cells[i].d_ang = ang / n;
        out.cells[i].auc = area / n;
    }
    auto join = [](const std::set<std::string>& paths) {
        std::string joined;
        for (const auto& p : paths) joined += (joined.empty() ? "" : ";") + p;
        return joined;
    };
    out.before_path = join(befores);
    out.after_path = join(afters);
    out.unclassified.assign(unclassified.begin(), unclassified.end());
    return out;
}

}  // namespace ckdrift
