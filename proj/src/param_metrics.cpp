#include "ckdrift/param_metrics.hpp"

#include "ckdrift/error.hpp"
#include "ckdrift/parallel.hpp"
#include "text_format.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace ckdrift {

namespace {

constexpr std::size_t kChunkElements = 1 << 16;

void require_same_shape(const Tensor& before, const Tensor& after) {
    if (before.shape() != after.shape()) {
        throw Error(ErrorCode::ShapeMismatch,
                    "'" + before.name() + "' is [" + std::to_string(before.rows()) + ", " +
                        std::to_string(before.cols()) + "] but '" + after.name() + "' is [" +
                        std::to_string(after.rows()) + ", " + std::to_string(after.cols()) + "]");
    }
}

void require_valid_quantum(double quantum) {
    if (!(quantum > 0.0) || !std::isfinite(quantum)) {
        throw Error(ErrorCode::InvalidArgument, "rounding quantum must be positive and finite");
    }
}

std::size_t rows_per_chunk(std::size_t cols) {
    return std::max<std::size_t>(1, kChunkElements / cols);
}

ChangeAccumulator accumulate(const Tensor& before, const Tensor& after, double quantum) {
    require_same_shape(before, after);
    ChangeAccumulator acc(before.shape(), quantum);
    const std::size_t cols = before.cols();
    const std::size_t step = rows_per_chunk(cols);
    std::vector<double> lhs(step * cols);
    std::vector<double> rhs(step * cols);
    for (std::size_t row = 0; row < before.rows(); row += step) {
        const std::size_t count = std::min(step, before.rows() - row) * cols;
        std::span<double> b(lhs.data(), count);
        std::span<double> a(rhs.data(), count);
        before.copy_to(row * cols, b);
        after.copy_to(row * cols, a);
        acc.add_rows(b, a);
    }
    return acc;
}

// Scales v by its largest magnitude before normalizing so that the norm never
// overflows. Returns false for an all-zero row.
bool normalize_row(std::span<const double> v, std::span<double> unit) {
    double largest = 0.0;
    for (double x : v) largest = std::max(largest, std::abs(x));
    if (largest == 0.0) return false;
    double sq = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        unit[i] = v[i] / largest;
        sq += unit[i] * unit[i];
    }
    const double norm = std::sqrt(sq);
    for (double& x : unit) x /= norm;
    return true;
}

DiffCell make_cell(const ParamLocator& locator, Shape shape, const ChangeAccumulator& acc) {
    DiffCell cell;
    cell.locator = locator;
    cell.rows = shape.rows;
    cell.cols = shape.cols;
    cell.d_l1 = acc.l1();
    const AngularChange ang = acc.angular();
    cell.d_ang = ang.value;
    cell.zero_rows = ang.zero_rows;
    cell.auc = auc(acc.distribution());
    return cell;
}

}  // namespace

// ---------------------------------------------------------------------------
// CascadeSum

void CascadeSum::add(double value) {
    block_ += value;
    if (++in_block_ == kBlock) {
        push_block(block_);
        block_ = 0.0;
        in_block_ = 0;
    }
}

void CascadeSum::push_block(double sum) {
    for (std::size_t level = 0;; ++level) {
        if (level == levels_.size()) {
            levels_.push_back(0.0);
            occupied_.push_back(false);
        }
        if (!occupied_[level]) {
            levels_[level] = sum;
            occupied_[level] = true;
            return;
        }
        sum = levels_[level] + sum;
        occupied_[level] = false;
    }
}

double CascadeSum::total() const {
    double sum = block_;
    for (std::size_t level = 0; level < levels_.size(); ++level) {
        if (occupied_[level]) sum = levels_[level] + sum;
    }
    return sum;
}

// ---------------------------------------------------------------------------
// ChangeAccumulator

ChangeAccumulator::ChangeAccumulator(Shape shape, double quantum) : shape_(shape), quantum_(quantum) {
    require_valid_quantum(quantum);
    if (shape.rows == 0 || shape.cols == 0) throw Error(ErrorCode::InvalidArgument, "empty matrix");
    unit_before_.resize(shape.cols);
    unit_after_.resize(shape.cols);
}

void ChangeAccumulator::add_rows(std::span<const double> before, std::span<const double> after) {
    if (before.size() != after.size() || before.size() % shape_.cols != 0) {
        throw Error(ErrorCode::InvalidArgument, "add_rows expects whole rows of equal length");
    }
    const std::size_t rows = before.size() / shape_.cols;
    if (rows_seen_ + rows > shape_.rows) throw Error(ErrorCode::InvalidArgument, "more rows than the matrix holds");
    for (std::size_t r = 0; r < rows; ++r) {
        add_row(before.subspan(r * shape_.cols, shape_.cols), after.subspan(r * shape_.cols, shape_.cols));
    }
}

void ChangeAccumulator::add_row(std::span<const double> before, std::span<const double> after) {
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double magnitude = std::abs(after[i] - before[i]);
        abs_sum_.add(magnitude);
        const double key = std::round(magnitude / quantum_);
        if (key < static_cast<double>(kDenseKeys)) {
            if (dense_counts_.empty()) dense_counts_.assign(kDenseKeys, 0);
            ++dense_counts_[static_cast<std::size_t>(key)];
        } else {
            ++sparse_counts_[key];
        }
    }

    // Half-angle form 2*atan2(|u - v|, |u + v|) of unit rows stays accurate
    // near 0 and pi where arccos of the cosine loses half its digits.
    if (!normalize_row(before, unit_before_) || !normalize_row(after, unit_after_)) {
        ++zero_rows_;
    } else {
        double diff_sq = 0.0;
        double sum_sq = 0.0;
        for (std::size_t i = 0; i < before.size(); ++i) {
            const double d = unit_before_[i] - unit_after_[i];
            const double s = unit_before_[i] + unit_after_[i];
            diff_sq += d * d;
            sum_sq += s * s;
        }
        const double angle = 2.0 * std::atan2(std::sqrt(diff_sq), std::sqrt(sum_sq));
        angle_sum_.add(std::clamp(angle, 0.0, std::numbers::pi) / std::numbers::pi);
    }
    ++rows_seen_;
}

double ChangeAccumulator::l1() const {
    if (!complete()) throw Error(ErrorCode::InvalidArgument, "matrix not fully streamed");
    return abs_sum_.total() / static_cast<double>(shape_.numel());
}

AngularChange ChangeAccumulator::angular() const {
    if (!complete()) throw Error(ErrorCode::InvalidArgument, "matrix not fully streamed");
    AngularChange result;
    result.zero_rows = zero_rows_;
    const std::size_t counted = shape_.rows - zero_rows_;
    if (counted == 0) {
        result.all_rows_zero = true;
        return result;
    }
    result.value = std::clamp(angle_sum_.total() / static_cast<double>(counted), 0.0, 1.0);
    return result;
}

ChangeDistribution ChangeAccumulator::distribution() const {
    if (!complete()) throw Error(ErrorCode::InvalidArgument, "matrix not fully streamed");
    std::vector<std::pair<double, std::uint64_t>> buckets;
    for (std::size_t k = 0; k < dense_counts_.size(); ++k) {
        if (dense_counts_[k] != 0) buckets.emplace_back(static_cast<double>(k), dense_counts_[k]);
    }
    const std::size_t dense_end = buckets.size();
    for (const auto& entry : sparse_counts_) buckets.push_back(entry);
    std::sort(buckets.begin() + static_cast<std::ptrdiff_t>(dense_end), buckets.end());

    ChangeDistribution dist;
    dist.quantum = quantum_;
    std::vector<double> cum_count;
    std::vector<double> cum_mass;
    std::uint64_t count = 0;
    double mass = 0.0;  // in units of quantum
    for (const auto& [key, n] : buckets) {
        count += n;
        mass += key * static_cast<double>(n);
        cum_count.push_back(static_cast<double>(count));
        cum_mass.push_back(mass);
    }
    const double total = static_cast<double>(count);
    dist.points.push_back({0.0, 0.0});
    if (mass == 0.0) {
        dist.zero_mass = true;
        dist.points.push_back({1.0, 0.0});
        return dist;
    }
    for (std::size_t i = 0; i < buckets.size(); ++i) {
        if (cum_count[i] == 0.0) continue;
        dist.points.push_back({cum_count[i] / total, cum_mass[i] / mass});
    }
    return dist;
}

// ---------------------------------------------------------------------------

double round_to_quantum(double magnitude, double quantum) {
    return std::round(magnitude / quantum) * quantum;
}

double l1_change(const Tensor& before, const Tensor& after) {
    return accumulate(before, after, kDefaultQuantum).l1();
}

AngularChange angular_change(const Tensor& before, const Tensor& after) {
    return accumulate(before, after, kDefaultQuantum).angular();
}

ChangeDistribution change_distribution(const Tensor& before, const Tensor& after, double quantum) {
    require_valid_quantum(quantum);
    return accumulate(before, after, quantum).distribution();
}

double auc(const ChangeDistribution& distribution) {
    if (distribution.zero_mass || distribution.points.size() < 2) return 0.5;
    double area = 0.0;
    for (std::size_t i = 1; i < distribution.points.size(); ++i) {
        const auto& p = distribution.points[i - 1];
        const auto& q = distribution.points[i];
        area += (q.x - p.x) * (q.y + p.y) / 2.0;
    }
    return std::clamp(area, 0.0, 0.5);
}

DiffCell diff_matrices(const ParamLocator& locator, const Tensor& before, const Tensor& after, double quantum) {
    return make_cell(locator, before.shape(), accumulate(before, after, quantum));
}

// ---------------------------------------------------------------------------
// Checkpoint pairs

namespace {

struct PlannedCell {
    ParamLocator locator;
    std::string name;
};

std::vector<PlannedCell> plan_cells(const Grouping& before, const Grouping& after) {
    std::vector<PlannedCell> plan;
    for (const auto& [locator, name] : before.classified) {
        auto it = after.classified.find(locator);
        if (it == after.classified.end() || it->second != name) {
            throw Error(ErrorCode::MissingCounterpart, "'" + name + "' (" + describe(locator) +
                                                           ") has no counterpart in the fine-tuned checkpoint");
        }
        plan.push_back({locator, name});
    }
    for (const auto& [locator, name] : after.classified) {
        if (!before.classified.contains(locator)) {
            throw Error(ErrorCode::MissingCounterpart, "'" + name + "' (" + describe(locator) +
                                                           ") has no counterpart in the pretrained checkpoint");
        }
    }
    return plan;
}

}  // namespace

DiffReport diff_checkpoints(const Checkpoint& before, const Checkpoint& after, const RuleTable& rules,
                            const DiffOptions& options) {
    require_valid_quantum(options.quantum);
    const Grouping before_groups = group_checkpoint(before, rules);
    const Grouping after_groups = group_checkpoint(after, rules);
    const auto plan = plan_cells(before_groups, after_groups);

    DiffReport report;
    report.before_path = before.source_path;
    report.after_path = after.source_path;
    report.quantum = options.quantum;
    report.unclassified = before_groups.unclassified;
    report.cells.resize(plan.size());

    for (const auto& cell : plan) {
        const Tensor& b = *before.find(cell.name);
        const Tensor& a = *after.find(cell.name);
        require_same_shape(b, a);
        if (b.dtype() != a.dtype()) throw Error(ErrorCode::DtypeMismatch, "'" + cell.name + "'");
    }
    parallel_for(plan.size(), options.threads, [&](std::size_t i) {
        report.cells[i] = diff_matrices(plan[i].locator, *before.find(plan[i].name), *after.find(plan[i].name),
                                        options.quantum);
    });
    return report;
}

DiffReport diff_checkpoint_files(const std::filesystem::path& before_path, const std::filesystem::path& after_path,
                                 const RuleTable& rules, const DiffOptions& options) {
    require_valid_quantum(options.quantum);
    const CheckpointReader before(before_path);
    const CheckpointReader after(after_path);

    auto names_of = [](const CheckpointReader& reader) {
        std::vector<std::string> names;
        for (const auto& entry : reader.entries()) names.push_back(entry.name);
        return names;
    };
    const Grouping before_groups = group_names(names_of(before), rules);
    const Grouping after_groups = group_names(names_of(after), rules);
    const auto plan = plan_cells(before_groups, after_groups);

    for (const auto& cell : plan) {
        const TensorEntry& b = *before.find(cell.name);
        const TensorEntry& a = *after.find(cell.name);
        if (b.shape != a.shape) throw Error(ErrorCode::ShapeMismatch, "'" + cell.name + "'");
        if (b.dtype != a.dtype) throw Error(ErrorCode::DtypeMismatch, "'" + cell.name + "'");
    }

    DiffReport report;
    report.before_path = before_path.string();
    report.after_path = after_path.string();
    report.quantum = options.quantum;
    report.unclassified = before_groups.unclassified;
    report.cells.resize(plan.size());

    parallel_for(plan.size(), options.threads, [&](std::size_t i) {
        const TensorEntry& b_entry = *before.find(plan[i].name);
        const TensorEntry& a_entry = *after.find(plan[i].name);
        auto b_cursor = before.open(b_entry);
        auto a_cursor = after.open(a_entry);
        const Shape shape = b_entry.shape;
        const std::size_t step = rows_per_chunk(shape.cols);
        std::vector<double> lhs(step * shape.cols);
        std::vector<double> rhs(step * shape.cols);
        ChangeAccumulator acc(shape, options.quantum);
        for (std::size_t row = 0; row < shape.rows; row += step) {
            const std::size_t count = std::min(step, shape.rows - row) * shape.cols;
            std::span<double> b(lhs.data(), count);
            std::span<double> a(rhs.data(), count);
            b_cursor.read(b);
            a_cursor.read(a);
            acc.add_rows(b, a);
        }
        report.cells[i] = make_cell(plan[i].locator, shape, acc);
    });
    return report;
}

// ---------------------------------------------------------------------------
// JSON

std::string to_json(const DiffReport& report) {
    using detail::format_real17;
    using detail::json_quote;
    std::ostringstream out;
    out << "{\n";
    out << "  \"after\": " << json_quote(report.after_path) << ",\n";
    out << "  \"before\": " << json_quote(report.before_path) << ",\n";
    out << "  \"cells\": [";
    for (std::size_t i = 0; i < report.cells.size(); ++i) {
        const DiffCell& c = report.cells[i];
        out << (i == 0 ? "\n" : ",\n");
        out << "    {\"auc\": " << format_real17(c.auc) << ", \"cols\": " << c.cols
            << ", \"component\": " << json_quote(to_string(c.locator.component))
            << ", \"d_ang\": " << format_real17(c.d_ang) << ", \"d_l1\": " << format_real17(c.d_l1)
            << ", \"kind\": " << json_quote(to_string(c.locator.kind)) << ", \"layer\": " << c.locator.layer;
        if (c.locator.kind == MatrixKind::Other) out << ", \"name\": " << json_quote(c.locator.other_name);
        out << ", \"rows\": " << c.rows << ", \"zero_rows\": " << c.zero_rows << "}";
    }
    out << (report.cells.empty() ? "],\n" : "\n  ],\n");
    out << "  \"quantum\": " << format_real17(report.quantum) << ",\n";
    out << "  \"unclassified\": [";
    for (std::size_t i = 0; i < report.unclassified.size(); ++i) {
        out << (i == 0 ? "" : ", ") << json_quote(report.unclassified[i]);
    }
    out << "]\n}\n";
    return out.str();
}

DiffReport report_from_json(std::string_view text) {
    using nlohmann::json;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedReport, std::string("invalid JSON: ") + e.what());
    }
    auto fail = [](const std::string& what) -> Error { return Error(ErrorCode::MalformedReport, what); };
    if (!doc.is_object()) throw fail("report is not an object");
    try {
        DiffReport report;
        report.before_path = doc.at("before").get<std::string>();
        report.after_path = doc.at("after").get<std::string>();
        report.quantum = doc.at("quantum").get<double>();
        for (const auto& name : doc.at("unclassified")) report.unclassified.push_back(name.get<std::string>());
        for (const auto& item : doc.at("cells")) {
            DiffCell cell;
            const auto component = parse_component(item.at("component").get<std::string>());
            const auto kind = parse_kind(item.at("kind").get<std::string>());
            if (!component || !kind) throw fail("unknown component or kind in cell");
            cell.locator.component = *component;
            cell.locator.kind = *kind;
            cell.locator.layer = item.at("layer").get<std::size_t>();
            if (*kind == MatrixKind::Other) cell.locator.other_name = item.at("name").get<std::string>();
            cell.rows = item.at("rows").get<std::size_t>();
            cell.cols = item.at("cols").get<std::size_t>();
            cell.d_l1 = item.at("d_l1").get<double>();
            cell.d_ang = item.at("d_ang").get<double>();
            cell.auc = item.at("auc").get<double>();
            cell.zero_rows = item.at("zero_rows").get<std::size_t>();
            report.cells.push_back(std::move(cell));
        }
        std::sort(report.cells.begin(), report.cells.end(),
                  [](const DiffCell& a, const DiffCell& b) { return a.locator < b.locator; });
        return report;
    } catch (const json::exception& e) {
        throw fail(std::string("missing or mistyped field: ") + e.what());
    }
}

DiffReport load_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return report_from_json(buffer.str());
}

}  // namespace ckdrift
