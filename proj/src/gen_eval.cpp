#include "ckdrift/gen_eval.hpp"

#include "ckdrift/error.hpp"
#include "ckdrift/kg_corpus.hpp"
#include "ckdrift/porter_stemmer.hpp"
#include "text_format.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace ckdrift {

namespace {

constexpr std::size_t kCiderMaxN = 4;

bool is_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct(unsigned char c) {
    return c < 0x80 && std::ispunct(c) != 0;
}

bool is_letter(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

char lower(unsigned char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c);
}

double single_bleu1(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty()) return 0.0;
    std::unordered_map<std::string, std::size_t> ref_counts;
    for (const auto& t : reference) ++ref_counts[t];
    std::unordered_map<std::string, std::size_t> cand_counts;
    for (const auto& t : candidate) ++cand_counts[t];
    std::size_t clipped = 0;
    for (const auto& [token, count] : cand_counts) {
        auto it = ref_counts.find(token);
        if (it != ref_counts.end()) clipped += std::min(count, it->second);
    }
    const double c = static_cast<double>(candidate.size());
    const double r = static_cast<double>(reference.size());
    const double precision = static_cast<double>(clipped) / c;
    const double brevity = std::exp(std::min(0.0, 1.0 - r / c));
    return precision * brevity;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> curr(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[b.size()];
}

double single_rouge_l(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    const double lcs = static_cast<double>(lcs_length(candidate, reference));
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(candidate.size());
    const double r = lcs / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

double single_meteor(const Tokens& candidate, const Tokens& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    constexpr std::size_t kUnmatched = static_cast<std::size_t>(-1);
    std::vector<std::size_t> match(candidate.size(), kUnmatched);  // candidate index -> reference index
    std::vector<bool> used(reference.size(), false);

    // Stage 1: exact; stage 2: Porter stems. Each stage scans left to right
    // and takes the first free reference position.
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        for (std::size_t j = 0; j < reference.size(); ++j) {
            if (!used[j] && candidate[i] == reference[j]) {
                match[i] = j;
                used[j] = true;
                break;
            }
        }
    }
    std::vector<std::string> ref_stems(reference.size());
    for (std::size_t j = 0; j < reference.size(); ++j) ref_stems[j] = porter_stem(reference[j]);
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        if (match[i] != kUnmatched) continue;
        const std::string stem = porter_stem(candidate[i]);
        for (std::size_t j = 0; j < reference.size(); ++j) {
            if (!used[j] && stem == ref_stems[j]) {
                match[i] = j;
                used[j] = true;
                break;
            }
        }
    }

    std::size_t matches = 0;
    std::size_t chunks = 0;
    std::size_t prev_ref = kUnmatched;
    bool prev_matched = false;
    for (std::size_t i = 0; i < candidate.size(); ++i) {
        if (match[i] == kUnmatched) {
            prev_matched = false;
            continue;
        }
        ++matches;
        if (!prev_matched || match[i] != prev_ref + 1) ++chunks;
        prev_ref = match[i];
        prev_matched = true;
    }
    if (matches == 0) return 0.0;
    const double m = static_cast<double>(matches);
    const double p = m / static_cast<double>(candidate.size());
    const double r = m / static_cast<double>(reference.size());
    const double fmean = 10.0 * p * r / (r + 9.0 * p);
    const double penalty = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
    return fmean * (1.0 - penalty);
}

template <typename Fn>
double best_over_references(const GenerationRecord& record, Fn&& score) {
    double best = 0.0;
    for (const auto& reference : record.references) best = std::max(best, score(record.candidate, reference));
    return best;
}

using NgramCounts = std::unordered_map<std::string, double>;

// Keys join tokens with U+001F so that n-grams of different orders never collide.
std::array<NgramCounts, kCiderMaxN> count_ngrams(const Tokens& tokens) {
    std::array<NgramCounts, kCiderMaxN> counts;
    for (std::size_t n = 1; n <= kCiderMaxN; ++n) {
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            std::string key = tokens[i];
            for (std::size_t k = 1; k < n; ++k) key += '\x1f' + tokens[i + k];
            counts[n - 1][key] += 1.0;
        }
    }
    return counts;
}

struct TfIdf {
    std::array<NgramCounts, kCiderMaxN> weights;
    std::array<double, kCiderMaxN> norms{};
};

TfIdf to_tfidf(const std::array<NgramCounts, kCiderMaxN>& counts,
               const std::unordered_map<std::string, double>& document_frequency, double log_documents) {
    TfIdf out;
    for (std::size_t n = 0; n < kCiderMaxN; ++n) {
        double sq = 0.0;
        for (const auto& [gram, tf] : counts[n]) {
            auto it = document_frequency.find(gram);
            const double df = it == document_frequency.end() ? 0.0 : it->second;
            const double weight = tf * (log_documents - std::log(std::max(1.0, df)));
            out.weights[n][gram] = weight;
            sq += weight * weight;
        }
        out.norms[n] = std::sqrt(sq);
    }
    return out;
}

std::vector<GenerationRecord> join(const std::vector<KnowledgeTuple>& generations,
                                   const std::vector<KnowledgeTuple>& references) {
    std::map<std::pair<std::string, std::string>, std::vector<Tokens>> refs;
    for (const auto& ref : references) refs[{ref.head, ref.relation}].push_back(tokenize(ref.tail));
    std::vector<GenerationRecord> records;
    records.reserve(generations.size());
    for (const auto& gen : generations) {
        auto it = refs.find({gen.head, gen.relation});
        if (it == refs.end()) {
            throw Error(ErrorCode::MissingReferences, "no references for (" + gen.head + ", " + gen.relation +
                                                          ") from generations line " + std::to_string(gen.line));
        }
        records.push_back({gen.head, gen.relation, tokenize(gen.tail), it->second});
    }
    return records;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace

Tokens tokenize(std::string_view text) {
    Tokens tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) tokens.push_back(std::move(current));
        current.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (is_space(c)) {
            flush();
        } else if (c == '\'' && i + 1 < text.size() && is_letter(static_cast<unsigned char>(text[i + 1]))) {
            flush();
            current += '\'';
            while (i + 1 < text.size() && is_letter(static_cast<unsigned char>(text[i + 1]))) {
                current += lower(static_cast<unsigned char>(text[++i]));
            }
            flush();
        } else if (is_punct(c)) {
            flush();
            tokens.emplace_back(1, static_cast<char>(c));
        } else {
            current += lower(c);
        }
    }
    flush();
    return tokens;
}

double bleu1(const GenerationRecord& record) {
    return best_over_references(record, single_bleu1);
}

double rouge_l(const GenerationRecord& record) {
    return best_over_references(record, single_rouge_l);
}

double meteor_lite(const GenerationRecord& record) {
    return best_over_references(record, single_meteor);
}

CiderResult cider(std::span<const GenerationRecord> corpus) {
    if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "CIDEr needs at least one record");

    // Phase 1: document frequencies over reference sets.
    std::vector<std::vector<std::array<NgramCounts, kCiderMaxN>>> ref_counts(corpus.size());
    std::unordered_map<std::string, double> document_frequency;
    for (std::size_t r = 0; r < corpus.size(); ++r) {
        std::set<std::string> seen;
        for (const auto& reference : corpus[r].references) {
            ref_counts[r].push_back(count_ngrams(reference));
            for (const auto& per_n : ref_counts[r].back()) {
                for (const auto& [gram, count] : per_n) seen.insert(gram);
            }
        }
        for (const auto& gram : seen) document_frequency[gram] += 1.0;
    }
    const double log_documents = std::log(static_cast<double>(corpus.size()));

    // Phase 2: per-record scores.
    CiderResult result;
    result.per_record.reserve(corpus.size());
    for (std::size_t r = 0; r < corpus.size(); ++r) {
        if (corpus[r].references.empty()) throw Error(ErrorCode::MissingReferences, "record without references");
        const TfIdf hyp = to_tfidf(count_ngrams(corpus[r].candidate), document_frequency, log_documents);
        std::array<double, kCiderMaxN> sums{};
        for (const auto& counts : ref_counts[r]) {
            const TfIdf ref = to_tfidf(counts, document_frequency, log_documents);
            for (std::size_t n = 0; n < kCiderMaxN; ++n) {
                double dot = 0.0;
                for (const auto& [gram, weight] : hyp.weights[n]) {
                    auto it = ref.weights[n].find(gram);
                    if (it != ref.weights[n].end()) dot += weight * it->second;
                }
                if (hyp.norms[n] != 0.0 && ref.norms[n] != 0.0) dot /= hyp.norms[n] * ref.norms[n];
                sums[n] += dot;
            }
        }
        double mean_over_n = 0.0;
        for (double s : sums) mean_over_n += s;
        mean_over_n /= static_cast<double>(kCiderMaxN);
        result.per_record.push_back(10.0 * mean_over_n / static_cast<double>(corpus[r].references.size()));
    }
    double total = 0.0;
    for (double s : result.per_record) total += s;
    result.mean = total / static_cast<double>(result.per_record.size());
    return result;
}

std::string_view to_string(Metric metric) {
    switch (metric) {
        case Metric::Bleu1: return "bleu1";
        case Metric::Meteor: return "meteor";
        case Metric::RougeL: return "rougeL";
        case Metric::Cider: return "cider";
    }
    return "bleu1";
}

std::optional<Metric> parse_metric(std::string_view text) {
    for (auto metric : kAllMetrics) {
        if (to_string(metric) == text) return metric;
    }
    return std::nullopt;
}

RunScores score_corpus(std::span<const GenerationRecord> corpus, std::span<const Metric> metrics) {
    if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "no generation records");
    RunScores scores;
    for (auto metric : metrics) {
        if (metric == Metric::Cider) {
            scores[metric] = cider(corpus).mean;
            continue;
        }
        double total = 0.0;
        for (const auto& record : corpus) {
            total += metric == Metric::Bleu1    ? bleu1(record)
                     : metric == Metric::RougeL ? rouge_l(record)
                                                : meteor_lite(record);
        }
        scores[metric] = total / static_cast<double>(corpus.size());
    }
    return scores;
}

MetricReport evaluate_runs(std::span<const RunScores> runs) {
    if (runs.empty()) throw Error(ErrorCode::InvalidArgument, "at least one run is required");
    MetricReport report;
    report.runs = runs.size();
    report.std_defined = runs.size() > 1;
    for (const auto& run : runs) {
        if (run.size() != runs[0].size()) throw Error(ErrorCode::InvalidArgument, "runs score different metrics");
        for (const auto& [metric, value] : run) {
            if (!runs[0].contains(metric)) throw Error(ErrorCode::InvalidArgument, "runs score different metrics");
        }
    }
    const double n = static_cast<double>(runs.size());
    for (const auto& [metric, unused] : runs[0]) {
        double total = 0.0;
        for (const auto& run : runs) total += run.at(metric);
        const double mean = total / n;
        double sq = 0.0;
        for (const auto& run : runs) sq += (run.at(metric) - mean) * (run.at(metric) - mean);
        report.metrics[metric] = {mean, runs.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0};
    }
    return report;
}

std::string to_json(const MetricReport& report) {
    // Sorted key order: bleu1, cider, meteor, rougeL, runs, std_defined.
    std::map<std::string, std::string> fields;
    for (const auto& [metric, summary] : report.metrics) {
        fields[std::string(to_string(metric))] = "{\"mean\": " + detail::format_fixed(summary.mean, 6) +
                                                  ", \"std\": " + detail::format_fixed(summary.std, 6) + "}";
    }
    fields["runs"] = std::to_string(report.runs);
    fields["std_defined"] = report.std_defined ? "true" : "false";
    std::string out = "{\n";
    std::size_t i = 0;
    for (const auto& [key, value] : fields) {
        out += "  " + detail::json_quote(key) + ": " + value + (++i < fields.size() ? ",\n" : "\n");
    }
    return out + "}\n";
}

std::vector<GenerationRecord> join_generations(std::string_view generations_tsv, std::string_view references_tsv) {
    return join(parse_kg(generations_tsv), parse_kg(references_tsv));
}

std::vector<GenerationRecord> load_generations(const std::filesystem::path& generations,
                                               const std::filesystem::path& references) {
    return join_generations(read_file(generations), read_file(references));
}

}  // namespace ckdrift
