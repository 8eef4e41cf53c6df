#include "ckdrift/report.hpp"

#include "../support/expect_error.hpp"

#include <gtest/gtest.h>

#include <regex>

using namespace ckdrift;

namespace {

DiffCell cell(Component c, std::size_t layer, MatrixKind k, double l1, double ang = 0.1, double a = 0.4) {
    return {{c, layer, k, {}}, 4, 4, l1, ang, a, 0};
}

DiffReport small_report(double scale = 1.0) {
    DiffReport r;
    r.before_path = "a.ckpt";
    r.after_path = "b.ckpt";
    r.cells = {
        cell(Component::Encoder, 0, MatrixKind::Q, 0.1 * scale),
        cell(Component::Encoder, 0, MatrixKind::WI, 0.2 * scale),
        cell(Component::Encoder, 1, MatrixKind::Q, 0.3 * scale),
        cell(Component::Decoder, 0, MatrixKind::XK, 0.4 * scale),
        cell(Component::Decoder, 1, MatrixKind::XK, 0.5 * scale),
        {{Component::Encoder, 0, MatrixKind::Other, "enc.norm"}, 1, 4, 9.0, 0.0, 0.5, 0},
    };
    return r;
}

std::size_t count(const std::string& text, const std::string& needle) {
    std::size_t n = 0;
    for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST(Report, RampEndpointsAndMonotoneLuminance) {
    EXPECT_EQ(ramp_color(0.0, 0.0, 1.0), (Rgb{0xf7, 0xfb, 0xff}));
    EXPECT_EQ(ramp_color(1.0, 0.0, 1.0), (Rgb{0x08, 0x30, 0x6b}));
    EXPECT_EQ(ramp_color(5.0, 0.0, 1.0), ramp_color(1.0, 0.0, 1.0));
    EXPECT_EQ(ramp_color(3.0, 3.0, 3.0), ramp_color(0.0, 0.0, 1.0));
    double previous = 1e9;
    for (int i = 0; i <= 20; ++i) {
        const double l = ramp_color(i / 20.0, 0.0, 1.0).luminance();
        EXPECT_LE(l, previous);
        previous = l;
    }
}

TEST(Report, HeatmapLayoutAndHatching) {
    const auto r = small_report();
    const std::string svg = render_heatmap(std::span(&r, 1), HeatmapSpec{});
    // Encoder grid: layers {0,1} x kinds {q, wi}: 3 values, 1 hatched.
    // Decoder grid: layers {0,1} x kinds {xk}: 2 values.
    EXPECT_EQ(count(svg, "<rect class=\"cell\""), 5U);
    EXPECT_EQ(count(svg, "<rect class=\"missing\""), 1U);
    EXPECT_EQ(count(svg, "<g class=\"panel\""), 2U);
    EXPECT_EQ(svg.find("enc.norm"), std::string::npos);
    EXPECT_NE(svg.find("min 0.100 max 0.300"), std::string::npos);
    EXPECT_NE(svg.find("min 0.400 max 0.500"), std::string::npos);
    EXPECT_LT(svg.find("data-component=\"encoder\""), svg.find("data-component=\"decoder\""));
    EXPECT_EQ(svg, render_heatmap(std::span(&r, 1), HeatmapSpec{}));
}

TEST(Report, PerPanelVersusSharedScale) {
    const std::vector<DiffReport> reports = {small_report(1.0), small_report(2.0)};
    HeatmapSpec spec;
    spec.panel_labels = {"n=3", "n=<30>"};
    const std::string per_panel = render_heatmap(reports, spec);
    EXPECT_NE(per_panel.find("min 0.200 max 0.600"), std::string::npos);
    EXPECT_NE(per_panel.find("n=&lt;30&gt;"), std::string::npos);
    spec.color_scale = ColorScale::Shared;
    const std::string shared = render_heatmap(reports, spec);
    EXPECT_EQ(count(shared, "min 0.100 max 1.000"), 4U);
}

TEST(Report, MeasureSelection) {
    const auto r = small_report();
    HeatmapSpec spec;
    spec.measure = Measure::Auc;
    spec.precision = 1;
    const std::string svg = render_heatmap(std::span(&r, 1), spec);
    EXPECT_EQ(count(svg, "min 0.4 max 0.4"), 2U);
    EXPECT_EQ(measure_of(r.cells[0], Measure::Angular), 0.1);
}

TEST(Report, HeatmapErrors) {
    EXPECT_CKDRIFT_ERROR(render_heatmap({}, HeatmapSpec{}), ErrorCode::EmptyReport);
    DiffReport only_other;
    only_other.cells = {{{Component::Encoder, 0, MatrixKind::Other, "x"}, 1, 1, 0, 0, 0.5, 0}};
    EXPECT_CKDRIFT_ERROR(render_heatmap(std::span(&only_other, 1), HeatmapSpec{}), ErrorCode::EmptyReport);

    std::vector<DiffReport> reports = {small_report(), small_report()};
    reports[1].cells.pop_back();
    reports[1].cells.pop_back();
    HeatmapSpec spec;
    spec.color_scale = ColorScale::Shared;
    EXPECT_CKDRIFT_ERROR(render_heatmap(reports, spec), ErrorCode::TaxonomyMismatch);
    spec.color_scale = ColorScale::PerPanel;
    EXPECT_NO_THROW(render_heatmap(reports, spec));
    spec.panel_labels = {"one"};
    EXPECT_CKDRIFT_ERROR(render_heatmap(reports, spec), ErrorCode::InvalidArgument);
    spec.panel_labels.clear();
    spec.precision = 18;
    EXPECT_CKDRIFT_ERROR(render_heatmap(reports, spec), ErrorCode::InvalidArgument);
}

TEST(Report, CsvRoundTripWithQuoting) {
    auto r = small_report();
    r.cells.push_back({{Component::Decoder, 0, MatrixKind::Other, "odd,\"name\""}, 2, 3, 1e-300, 0.5, 0.25, 1});
    const std::string csv = export_csv(r);
    EXPECT_EQ(csv.substr(0, csv.find("\r\n")), "component,layer,kind,rows,cols,d_l1,d_ang,auc,zero_rows");
    EXPECT_NE(csv.find("\"other:odd,\"\"name\"\"\""), std::string::npos);
    const auto cells = parse_csv(csv);
    ASSERT_EQ(cells.size(), r.cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
        EXPECT_EQ(cells[i].locator, r.cells[i].locator);
        EXPECT_EQ(cells[i].d_l1, r.cells[i].d_l1);
        EXPECT_EQ(cells[i].d_ang, r.cells[i].d_ang);
        EXPECT_EQ(cells[i].auc, r.cells[i].auc);
        EXPECT_EQ(cells[i].zero_rows, r.cells[i].zero_rows);
        EXPECT_EQ(cells[i].rows, r.cells[i].rows);
    }
}

TEST(Report, CsvParseErrors) {
    EXPECT_CKDRIFT_ERROR(parse_csv(""), ErrorCode::MalformedReport);
    EXPECT_CKDRIFT_ERROR(parse_csv("a,b\r\n"), ErrorCode::MalformedReport);
    const std::string header = "component,layer,kind,rows,cols,d_l1,d_ang,auc,zero_rows\r\n";
    EXPECT_CKDRIFT_ERROR(parse_csv(header + "encoder,0,q,1,1,0,0\r\n"), ErrorCode::MalformedReport);
    EXPECT_CKDRIFT_ERROR(parse_csv(header + "middle,0,q,1,1,0,0,0.5,0\r\n"), ErrorCode::MalformedReport);
    EXPECT_CKDRIFT_ERROR(parse_csv(header + "encoder,x,q,1,1,0,0,0.5,0\r\n"), ErrorCode::MalformedReport);
    EXPECT_CKDRIFT_ERROR(parse_csv(header + "encoder,0,\"q,1,1,0,0,0.5,0\r\n"), ErrorCode::MalformedReport);
}

TEST(Report, AggregateIsCellwiseMean) {
    const std::vector<DiffReport> reports = {small_report(1.0), small_report(3.0)};
    const auto mean = aggregate_reports(reports);
    ASSERT_EQ(mean.cells.size(), reports[0].cells.size());
    EXPECT_DOUBLE_EQ(mean.cells[0].d_l1, 0.2);
    EXPECT_DOUBLE_EQ(mean.cells[4].d_l1, 1.0);
    EXPECT_EQ(mean.cells[0].auc, 0.4);

    auto other = small_report();
    other.cells[1].locator.kind = MatrixKind::WO;
    const std::vector<DiffReport> mismatched = {small_report(), other};
    EXPECT_CKDRIFT_ERROR(aggregate_reports(mismatched), ErrorCode::TaxonomyMismatch);
    auto quantum = small_report();
    quantum.quantum = 1e-3;
    const std::vector<DiffReport> different_quantum = {small_report(), quantum};
    EXPECT_CKDRIFT_ERROR(aggregate_reports(different_quantum), ErrorCode::TaxonomyMismatch);
    EXPECT_CKDRIFT_ERROR(aggregate_reports({}), ErrorCode::EmptyReport);
}

TEST(Report, ParseNames) {
    EXPECT_EQ(parse_measure("angular"), Measure::Angular);
    EXPECT_EQ(parse_measure("L1"), std::nullopt);
    EXPECT_EQ(parse_color_scale("shared"), ColorScale::Shared);
    EXPECT_EQ(parse_color_scale("per_panel"), ColorScale::PerPanel);
    EXPECT_EQ(to_string(Measure::Auc), "auc");
}
