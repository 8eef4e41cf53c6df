#pragma once

// Automatic metrics for generated tails: BLEU-1, ROUGE-L, METEOR (exact and
// Porter-stem matching only) and plain CIDEr, aggregated across runs.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ckdrift {

using Tokens = std::vector<std::string>;

/// Lowercases ASCII, splits on whitespace, makes every punctuation character
/// its own token, and keeps an apostrophe together with the letters after it
/// ("PersonX's" -> "personx", "'s").
Tokens tokenize(std::string_view text);

struct GenerationRecord {
    std::string head;
    std::string relation;
    Tokens candidate;
    std::vector<Tokens> references;  // nonempty
};

/// Best single-reference BLEU-1 over the references: clipped unigram
/// precision times exp(min(0, 1 - r/c)).
double bleu1(const GenerationRecord& record);
/// Best LCS-based F1 over the references.
double rouge_l(const GenerationRecord& record);
/// Best METEOR over the references, with exact then stem alignment,
/// Fmean = 10PR/(R+9P) and fragmentation penalty 0.5 (chunks/m)^3.
double meteor_lite(const GenerationRecord& record);

struct CiderResult {
    std::vector<double> per_record;
    double mean = 0.0;
};

/// Plain CIDEr (no length penalty, no clipping) over n = 1..4, scaled by 10.
/// Document frequencies come from the reference sets; IDF is
/// log(N) - log(max(1, df)).
CiderResult cider(std::span<const GenerationRecord> corpus);

enum class Metric { Bleu1, Meteor, RougeL, Cider };
std::string_view to_string(Metric metric);
std::optional<Metric> parse_metric(std::string_view text);
inline constexpr Metric kAllMetrics[] = {Metric::Bleu1, Metric::Meteor, Metric::RougeL, Metric::Cider};

/// Corpus value per metric for one run (mean over records).
using RunScores = std::map<Metric, double>;
RunScores score_corpus(std::span<const GenerationRecord> corpus, std::span<const Metric> metrics);

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;
};

struct MetricReport {
    std::map<Metric, MetricSummary> metrics;
    std::size_t runs = 0;
    bool std_defined = true;  // false for a single run, where std is 0 by convention
};

/// Mean and sample standard deviation per metric across runs.
MetricReport evaluate_runs(std::span<const RunScores> runs);

/// {"runs": N, "std_defined": bool, "<metric>": {"mean", "std"}, ...}, keys
/// sorted, reals with 6 decimals.
std::string to_json(const MetricReport& report);

/// Joins a head/relation/candidate TSV with a head/relation/tail TSV; each
/// generation line becomes one record holding every reference of its key.
std::vector<GenerationRecord> join_generations(std::string_view generations_tsv, std::string_view references_tsv);
std::vector<GenerationRecord> load_generations(const std::filesystem::path& generations,
                                               const std::filesystem::path& references);

}  // namespace ckdrift
