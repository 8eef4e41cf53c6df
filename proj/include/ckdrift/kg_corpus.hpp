#pragma once

// Knowledge-graph tuples, seeded per-relation few-shot sampling and
// prompt formatting for training-ready input/target files.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ckdrift {

struct KnowledgeTuple {
    std::string head;
    std::string relation;
    std::string tail;
    std::size_t line = 0;  // 1-based source line, 0 when not from a file

    bool same_fields(const KnowledgeTuple& other) const {
        return head == other.head && relation == other.relation && tail == other.tail;
    }
};

/// Tab-separated head, relation, tail; one tuple per line; order and
/// duplicates preserved.
std::vector<KnowledgeTuple> parse_kg(std::string_view text);
std::vector<KnowledgeTuple> load_kg(const std::filesystem::path& path);
std::string to_tsv(const std::vector<KnowledgeTuple>& tuples);

/// relation -> template with exactly one `{}` head placeholder.
class PromptInventory {
public:
    PromptInventory() = default;
    explicit PromptInventory(std::map<std::string, std::string> templates);

    static PromptInventory from_json(std::string_view text);
    static PromptInventory load(const std::filesystem::path& path);
    /// The 23 ATOMIC-2020 relation prompts.
    static PromptInventory atomic2020();
    /// Paraphrased versions of the same 23 prompts.
    static PromptInventory atomic2020_paraphrased();

    const std::map<std::string, std::string>& templates() const { return templates_; }
    std::size_t size() const { return templates_.size(); }
    bool contains(std::string_view relation) const { return templates_.contains(std::string(relation)); }
    const std::string& at(std::string_view relation) const;
    std::string to_json() const;

private:
    std::map<std::string, std::string> templates_;
};

/// SplitMix64; the generator behind every seeded choice in this module.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}
    std::uint64_t next();
    /// Uniform-ish value in [0, bound) by 128-bit multiply-high.
    std::uint64_t bounded(std::uint64_t bound);

private:
    std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view text);

struct FewShotSpec {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::set<std::string> holdout_relations;
    bool validation = false;
};

struct FewShotSplit {
    std::vector<KnowledgeTuple> train;
    std::vector<KnowledgeTuple> validation;
    std::vector<KnowledgeTuple> pretrain;  // filled only in holdout mode
    FewShotSpec spec;
};

/// Per relation (sorted by name), a partial Fisher-Yates shuffle of that
/// relation's tuple indices seeded with seed ^ fnv1a64(relation) picks n train
/// tuples and, with validation, the next n as validation. When
/// `validation_pool` is given, validation tuples come from it instead, seeded
/// with seed ^ fnv1a64("validation:" + relation).
///
/// With holdout relations, train/validation cover only those relations and
/// every tuple of the remaining relations goes to `pretrain`.
FewShotSplit sample_few_shot(const std::vector<KnowledgeTuple>& kg, const FewShotSpec& spec,
                             const std::vector<KnowledgeTuple>* validation_pool = nullptr);

enum class FormatMode { Natural, Paraphrase, Shuffled, Embedding };

std::string_view to_string(FormatMode mode);
std::optional<FormatMode> parse_format_mode(std::string_view text);

/// Fixed-point-free permutation of [0, n): seeded Fisher-Yates, retried until
/// no element stays put. Throws NoDerangement for n < 2.
std::vector<std::size_t> seeded_derangement(std::size_t n, std::uint64_t seed);

/// Formats tuples for one relation-representation mode. `inventory` is the
/// table for that mode: the natural prompts for natural and shuffled, the
/// paraphrases for paraphrase; embedding mode ignores it.
class TupleFormatter {
public:
    TupleFormatter(PromptInventory inventory, FormatMode mode, std::uint64_t shuffle_seed = 0);

    FormatMode mode() const { return mode_; }
    /// relation -> template actually applied (deranged in shuffled mode).
    const std::map<std::string, std::string>& effective_templates() const { return effective_; }

    std::pair<std::string, std::string> format(const KnowledgeTuple& tuple) const;

private:
    FormatMode mode_;
    std::map<std::string, std::string> effective_;
};

std::pair<std::string, std::string> format_tuple(const KnowledgeTuple& tuple, const PromptInventory& inventory,
                                                 FormatMode mode, std::uint64_t shuffle_seed = 0);

/// Two-column input/target TSV.
std::string formatted_tsv(const std::vector<KnowledgeTuple>& tuples, const TupleFormatter& formatter);

/// {"counts", "holdout", "mode", "n", "seed"} (+ "shuffle_seed" in shuffled mode).
std::string manifest_json(const FewShotSplit& split, std::string_view mode, const std::uint64_t* shuffle_seed);

/// Writes formatted train.tsv, valid.tsv (when validation was sampled),
/// pretrain.tsv (holdout mode) and manifest.json. Returns the paths written.
std::vector<std::filesystem::path> export_split(const FewShotSplit& split, const TupleFormatter& formatter,
                                                std::uint64_t shuffle_seed, const std::filesystem::path& out_dir);

/// Same files holding raw head/relation/tail tuples; manifest mode "raw".
std::vector<std::filesystem::path> export_raw_split(const FewShotSplit& split, const std::filesystem::path& out_dir);

}  // namespace ckdrift
