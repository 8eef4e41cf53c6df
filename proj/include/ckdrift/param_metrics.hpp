#pragma once

// Parameter-change measures between a pretrained matrix (before) and its
// fine-tuned counterpart (after):
//
//   d_l1   mean absolute per-parameter change
//   d_ang  mean row-wise angle between corresponding rows, normalized by pi
//   AUC    area under the cumulative-count vs cumulative-mass curve of the
//          rounded absolute changes (0.5 = perfectly even change)

#include "ckdrift/arch_map.hpp"
#include "ckdrift/tensor_io.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ckdrift {

inline constexpr double kDefaultQuantum = 1e-5;

struct AngularChange {
    double value = 0.0;
    std::size_t zero_rows = 0;
    bool all_rows_zero = false;  // value is 0 by convention
};

struct DistributionPoint {
    double x = 0.0;  // fraction of entries with change <= threshold
    double y = 0.0;  // fraction of total change mass carried by those entries
};

struct ChangeDistribution {
    std::vector<DistributionPoint> points;
    double quantum = kDefaultQuantum;
    bool zero_mass = false;  // every rounded change is 0; AUC is 0.5 by convention
};

/// Deterministic summation: elements are added sequentially into fixed-size
/// blocks and block sums are combined pairwise, so the result depends only on
/// the element order, never on how the stream was chunked.
class CascadeSum {
public:
    static constexpr std::size_t kBlock = 1024;

    void add(double value);
    double total() const;

private:
    void push_block(double sum);

    double block_ = 0.0;
    std::size_t in_block_ = 0;
    std::vector<double> levels_;
    std::vector<bool> occupied_;
};

/// Streams one matrix pair row by row and produces all three measures in a
/// single pass. Memory is O(cols + distinct rounded changes).
class ChangeAccumulator {
public:
    ChangeAccumulator(Shape shape, double quantum = kDefaultQuantum);

    /// Appends whole rows; both spans hold the same number of elements, a
    /// multiple of cols.
    void add_rows(std::span<const double> before, std::span<const double> after);

    std::size_t rows_seen() const { return rows_seen_; }
    bool complete() const { return rows_seen_ == shape_.rows; }

    double l1() const;
    AngularChange angular() const;
    ChangeDistribution distribution() const;

private:
    void add_row(std::span<const double> before, std::span<const double> after);

    Shape shape_;
    double quantum_;
    std::size_t rows_seen_ = 0;

    CascadeSum abs_sum_;
    CascadeSum angle_sum_;
    std::size_t zero_rows_ = 0;

    // Rounded change k (in units of quantum) -> count. Small k use the dense table.
    static constexpr std::size_t kDenseKeys = 1 << 16;
    std::vector<std::uint64_t> dense_counts_;
    std::unordered_map<double, std::uint64_t> sparse_counts_;

    std::vector<double> unit_before_;
    std::vector<double> unit_after_;
};

double l1_change(const Tensor& before, const Tensor& after);
AngularChange angular_change(const Tensor& before, const Tensor& after);
ChangeDistribution change_distribution(const Tensor& before, const Tensor& after, double quantum = kDefaultQuantum);
double auc(const ChangeDistribution& distribution);

/// Rounds |change| to the nearest multiple of quantum, ties away from zero.
double round_to_quantum(double magnitude, double quantum);

struct DiffCell {
    ParamLocator locator;
    std::size_t rows = 0;
    std::size_t cols = 0;
    double d_l1 = 0.0;
    double d_ang = 0.0;
    double auc = 0.5;
    std::size_t zero_rows = 0;
};

struct DiffReport {
    std::string before_path;
    std::string after_path;
    double quantum = kDefaultQuantum;
    std::vector<DiffCell> cells;  // ordered by locator
    std::vector<std::string> unclassified;
};

struct DiffOptions {
    double quantum = kDefaultQuantum;
    std::size_t threads = 1;
};

DiffCell diff_matrices(const ParamLocator& locator, const Tensor& before, const Tensor& after, double quantum);

DiffReport diff_checkpoints(const Checkpoint& before, const Checkpoint& after, const RuleTable& rules,
                            const DiffOptions& options = {});

/// Same result as diff_checkpoints(load_checkpoint(a), load_checkpoint(b), ...)
/// but streams each matrix pair from disk, so peak memory stays at a few row
/// buffers per worker thread.
DiffReport diff_checkpoint_files(const std::filesystem::path& before, const std::filesystem::path& after,
                                 const RuleTable& rules, const DiffOptions& options = {});

/// Keys sorted, reals with 17 significant digits.
std::string to_json(const DiffReport& report);
DiffReport report_from_json(std::string_view text);
DiffReport load_report(const std::filesystem::path& path);

}  // namespace ckdrift
