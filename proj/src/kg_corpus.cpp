#include "ckdrift/kg_corpus.hpp"

#include "ckdrift/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace ckdrift {

namespace {

using nlohmann::json;

constexpr std::string_view kPlaceholder = "{}";

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
    out << content;
    out.close();
    if (out.fail()) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t count = 0;
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) {
        ++count;
    }
    return count;
}

bool has_control_separator(std::string_view text) {
    return text.find_first_of("\t\r\n") != std::string_view::npos;
}

std::vector<KnowledgeTuple> sample_relation(const std::vector<const KnowledgeTuple*>& pool, std::size_t take,
                                            std::uint64_t stream_seed) {
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(stream_seed);
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.bounded(order.size() - i));
        std::swap(order[i], order[j]);
    }
    std::vector<KnowledgeTuple> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(*pool[order[i]]);
    return out;
}

std::map<std::string, std::vector<const KnowledgeTuple*>> by_relation(const std::vector<KnowledgeTuple>& kg) {
    std::map<std::string, std::vector<const KnowledgeTuple*>> groups;
    for (const auto& tuple : kg) groups[tuple.relation].push_back(&tuple);
    return groups;
}

}  // namespace

// ---------------------------------------------------------------------------
// KG TSV

std::vector<KnowledgeTuple> parse_kg(std::string_view text) {
    std::vector<KnowledgeTuple> tuples;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

        std::vector<std::string_view> fields;
        std::size_t start = 0;
        for (;;) {
            const std::size_t tab = line.find('\t', start);
            if (tab == std::string_view::npos) {
                fields.push_back(line.substr(start));
                break;
            }
            fields.push_back(line.substr(start, tab - start));
            start = tab + 1;
        }
        if (fields.size() != 3) {
            throw Error(ErrorCode::BadColumnCount,
                        "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) + " columns");
        }
        for (const auto& field : fields) {
            if (field.empty()) throw Error(ErrorCode::EmptyField, "line " + std::to_string(line_no));
        }
        tuples.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), line_no});
    }
    return tuples;
}

std::vector<KnowledgeTuple> load_kg(const std::filesystem::path& path) {
    return parse_kg(read_file(path));
}

std::string to_tsv(const std::vector<KnowledgeTuple>& tuples) {
    std::string out;
    for (const auto& t : tuples) {
        if (has_control_separator(t.head) || has_control_separator(t.relation) || has_control_separator(t.tail)) {
            throw Error(ErrorCode::InvalidTuple, "tuple field contains a tab or newline");
        }
        out += t.head + '\t' + t.relation + '\t' + t.tail + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompt inventories

PromptInventory::PromptInventory(std::map<std::string, std::string> templates) : templates_(std::move(templates)) {
    for (const auto& [relation, text] : templates_) {
        if (relation.empty()) throw Error(ErrorCode::InvalidInventory, "empty relation name");
        if (count_occurrences(text, kPlaceholder) != 1) {
            throw Error(ErrorCode::InvalidInventory, "template for " + relation + " must contain {} exactly once");
        }
        if (has_control_separator(text) || has_control_separator(relation)) {
            throw Error(ErrorCode::InvalidInventory, "template for " + relation + " contains a tab or newline");
        }
    }
}

PromptInventory PromptInventory::from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidInventory, std::string("prompt file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::InvalidInventory, "prompt file must map relation -> template");
    std::map<std::string, std::string> templates;
    for (const auto& [relation, value] : doc.items()) {
        if (!value.is_string()) throw Error(ErrorCode::InvalidInventory, "template for " + relation + " is not a string");
        templates.emplace(relation, value.get<std::string>());
    }
    return PromptInventory(std::move(templates));
}

PromptInventory PromptInventory::load(const std::filesystem::path& path) {
    return from_json(read_file(path));
}

PromptInventory PromptInventory::atomic2020() {
    return PromptInventory({
        {"ObjectUse", "{} is used for"},
        {"AtLocation", "You are likely to find {} in"},
        {"MadeUpOf", "{} is made up of"},
        {"HasProperty", "{} is"},
        {"CapableOf", "{} can"},
        {"Desires", "{} wants"},
        {"NotDesires", "{} does not want"},
        {"isAfter", "Something that happens after {} is"},
        {"HasSubEvent", "Something you might do while {} is"},
        {"isBefore", "Something that happens before {} is"},
        {"HinderedBy", "{} is hindered by"},
        {"Causes", "Sometimes {} causes"},
        {"xReason", "{}. The reason for PersonX doing this is"},
        {"isFilledBy", "{} can be filled by"},
        {"xNeed", "But before {}, PersonX needed"},
        {"xAttr", "{} is seen as"},
        {"xEffect", "As a result of {}, PersonX will"},
        {"xReact", "As a result of {}, PersonX feels"},
        {"xWant", "After {}, PersonX would want"},
        {"xIntent", "Because of {}, PersonX wanted"},
        {"oEffect", "as a result of {}, others will"},
        {"oReact", "as a result of {}, others would feel"},
        {"oWant", "as a result of {}, others would want"},
    });
}

PromptInventory PromptInventory::atomic2020_paraphrased() {
    return PromptInventory({
        {"ObjectUse", "a {} can be used for"},
        {"AtLocation", "You could find {} in the location"},
        {"MadeUpOf", "{} is made up of"},
        {"HasProperty", "{} will have"},
        {"CapableOf", "{} is capable of"},
        {"Desires", "a {} desires"},
        {"NotDesires", "a {} does not desire"},
        {"isAfter", "Before {},"},
        {"HasSubEvent", "You might do {} while doing"},
        {"isBefore", "After {},"},
        {"HinderedBy", "{}. This is hindered by"},
        {"Causes", "Sometimes {} causes"},
        {"xReason", "{}. PersonX did this because"},
        {"isFilledBy", "{} is filled"},
        {"xNeed", "Before {}, PersonX needs to"},
        {"xAttr", "{}. An attribute of PersonX is"},
        {"xEffect", "The effect of {} PersonX will be"},
        {"xReact", "As a result of {}. PersonX will be"},
        {"xWant", "After {}, PersonX will want to"},
        {"xIntent", "For {}, PersonX did this to"},
        {"oEffect", "An effect of {} on others will be"},
        {"oReact", "As a result of {}, other feel"},
        {"oWant", "After {}, others will want to"},
    });
}

const std::string& PromptInventory::at(std::string_view relation) const {
    auto it = templates_.find(std::string(relation));
    if (it == templates_.end()) throw Error(ErrorCode::UnknownRelation, std::string(relation));
    return it->second;
}

std::string PromptInventory::to_json() const {
    return json(templates_).dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Seeded randomness

std::uint64_t SplitMix64::next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t SplitMix64::bounded(std::uint64_t bound) {
    __extension__ using u128 = unsigned __int128;
    const u128 product = static_cast<u128>(next()) * bound;
    return static_cast<std::uint64_t>(product >> 64);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

// ---------------------------------------------------------------------------
// Sampling

FewShotSplit sample_few_shot(const std::vector<KnowledgeTuple>& kg, const FewShotSpec& spec,
                             const std::vector<KnowledgeTuple>* validation_pool) {
    const auto groups = by_relation(kg);
    for (const auto& relation : spec.holdout_relations) {
        if (!groups.contains(relation)) {
            throw Error(ErrorCode::UnknownRelation, "holdout relation " + relation + " does not occur in the KG");
        }
    }
    const bool holdout_mode = !spec.holdout_relations.empty();
    const bool separate_validation = spec.validation && validation_pool != nullptr;
    const auto validation_groups = separate_validation ? by_relation(*validation_pool)
                                                       : std::map<std::string, std::vector<const KnowledgeTuple*>>{};

    FewShotSplit split;
    split.spec = spec;
    for (const auto& [relation, pool] : groups) {
        if (holdout_mode && !spec.holdout_relations.contains(relation)) continue;
        const std::size_t needed = spec.validation && !separate_validation ? 2 * spec.n : spec.n;
        if (pool.size() < needed) {
            throw Error(ErrorCode::InsufficientExamples, relation + " has " + std::to_string(pool.size()) +
                                                             " tuples, " + std::to_string(needed) + " required");
        }
        auto picked = sample_relation(pool, needed, spec.seed ^ fnv1a64(relation));
        split.train.insert(split.train.end(), picked.begin(), picked.begin() + static_cast<std::ptrdiff_t>(spec.n));
        if (spec.validation && !separate_validation) {
            split.validation.insert(split.validation.end(), picked.begin() + static_cast<std::ptrdiff_t>(spec.n),
                                    picked.end());
        }
        if (separate_validation && spec.n > 0) {
            auto it = validation_groups.find(relation);
            const std::size_t available = it == validation_groups.end() ? 0 : it->second.size();
            if (available < spec.n) {
                throw Error(ErrorCode::InsufficientExamples,
                            relation + " has " + std::to_string(available) + " validation-pool tuples, " +
                                std::to_string(spec.n) + " required");
            }
            auto valid = sample_relation(it->second, spec.n, spec.seed ^ fnv1a64("validation:" + relation));
            split.validation.insert(split.validation.end(), valid.begin(), valid.end());
        }
    }
    if (holdout_mode) {
        for (const auto& tuple : kg) {
            if (!spec.holdout_relations.contains(tuple.relation)) split.pretrain.push_back(tuple);
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Formatting

std::string_view to_string(FormatMode mode) {
    switch (mode) {
        case FormatMode::Natural: return "natural";
        case FormatMode::Paraphrase: return "paraphrase";
        case FormatMode::Shuffled: return "shuffled";
        case FormatMode::Embedding: return "embedding";
    }
    return "natural";
}

std::optional<FormatMode> parse_format_mode(std::string_view text) {
    for (auto mode : {FormatMode::Natural, FormatMode::Paraphrase, FormatMode::Shuffled, FormatMode::Embedding}) {
        if (to_string(mode) == text) return mode;
    }
    return std::nullopt;
}

std::vector<std::size_t> seeded_derangement(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw Error(ErrorCode::NoDerangement, "need at least 2 relations, have " + std::to_string(n));
    SplitMix64 rng(seed);
    std::vector<std::size_t> perm(n);
    for (;;) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t i = n - 1; i > 0; --i) {
            std::swap(perm[i], perm[static_cast<std::size_t>(rng.bounded(i + 1))]);
        }
        bool fixed_point = false;
        for (std::size_t i = 0; i < n && !fixed_point; ++i) fixed_point = perm[i] == i;
        if (!fixed_point) return perm;
    }
}

TupleFormatter::TupleFormatter(PromptInventory inventory, FormatMode mode, std::uint64_t shuffle_seed)
    : mode_(mode), effective_(inventory.templates()) {
    if (mode != FormatMode::Shuffled) return;
    std::vector<std::string> relations;
    std::vector<std::string> texts;
    for (const auto& [relation, text] : inventory.templates()) {
        relations.push_back(relation);
        texts.push_back(text);
    }
    const auto perm = seeded_derangement(relations.size(), shuffle_seed);
    for (std::size_t i = 0; i < relations.size(); ++i) effective_[relations[i]] = texts[perm[i]];
}

std::pair<std::string, std::string> TupleFormatter::format(const KnowledgeTuple& tuple) const {
    if (tuple.head.find(kPlaceholder) != std::string::npos || tuple.tail.find(kPlaceholder) != std::string::npos) {
        throw Error(ErrorCode::InvalidTuple, "tuple on line " + std::to_string(tuple.line) + " contains {}");
    }
    if (mode_ == FormatMode::Embedding) return {tuple.head + " <" + tuple.relation + ">", tuple.tail};
    auto it = effective_.find(tuple.relation);
    if (it == effective_.end()) throw Error(ErrorCode::UnknownRelation, tuple.relation);
    std::string input = it->second;
    input.replace(input.find(kPlaceholder), kPlaceholder.size(), tuple.head);
    return {std::move(input), tuple.tail};
}

std::pair<std::string, std::string> format_tuple(const KnowledgeTuple& tuple, const PromptInventory& inventory,
                                                 FormatMode mode, std::uint64_t shuffle_seed) {
    return TupleFormatter(inventory, mode, shuffle_seed).format(tuple);
}

std::string formatted_tsv(const std::vector<KnowledgeTuple>& tuples, const TupleFormatter& formatter) {
    std::string out;
    for (const auto& tuple : tuples) {
        auto [input, target] = formatter.format(tuple);
        if (has_control_separator(input) || has_control_separator(target)) {
            throw Error(ErrorCode::InvalidTuple, "formatted tuple contains a tab or newline");
        }
        out += input + '\t' + target + '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Export

std::string manifest_json(const FewShotSplit& split, std::string_view mode, const std::uint64_t* shuffle_seed) {
    json manifest = {
        {"counts",
         {{"pretrain", split.pretrain.size()}, {"train", split.train.size()}, {"valid", split.validation.size()}}},
        {"holdout", std::vector<std::string>(split.spec.holdout_relations.begin(), split.spec.holdout_relations.end())},
        {"mode", std::string(mode)},
        {"n", split.spec.n},
        {"seed", split.spec.seed},
    };
    if (shuffle_seed != nullptr) manifest["shuffle_seed"] = *shuffle_seed;
    return manifest.dump(2) + "\n";
}

namespace {

std::vector<std::filesystem::path> write_split_files(const FewShotSplit& split, const std::filesystem::path& out_dir,
                                                     const std::string& manifest,
                                                     const std::function<std::string(const std::vector<KnowledgeTuple>&)>& render) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + out_dir.string());
    // Render everything first so a formatting error leaves no files behind.
    std::vector<std::pair<std::filesystem::path, std::string>> files;
    files.emplace_back(out_dir / "train.tsv", render(split.train));
    if (split.spec.validation) files.emplace_back(out_dir / "valid.tsv", render(split.validation));
    if (!split.spec.holdout_relations.empty()) files.emplace_back(out_dir / "pretrain.tsv", render(split.pretrain));
    files.emplace_back(out_dir / "manifest.json", manifest);
    std::vector<std::filesystem::path> written;
    for (const auto& [path, content] : files) {
        write_file(path, content);
        written.push_back(path);
    }
    return written;
}

}  // namespace

std::vector<std::filesystem::path> export_split(const FewShotSplit& split, const TupleFormatter& formatter,
                                                std::uint64_t shuffle_seed, const std::filesystem::path& out_dir) {
    const bool shuffled = formatter.mode() == FormatMode::Shuffled;
    return write_split_files(split, out_dir, manifest_json(split, to_string(formatter.mode()), shuffled ? &shuffle_seed : nullptr),
                             [&](const auto& tuples) { return formatted_tsv(tuples, formatter); });
}

std::vector<std::filesystem::path> export_raw_split(const FewShotSplit& split, const std::filesystem::path& out_dir) {
    return write_split_files(split, out_dir, manifest_json(split, "raw", nullptr),
                             [](const auto& tuples) { return to_tsv(tuples); });
}

}  // namespace ckdrift
