#include "ckdrift/gen_eval.hpp"
#include "ckdrift/porter_stemmer.hpp"

#include "../support/expect_error.hpp"
#include "../support/test_support.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <random>

using namespace ckdrift;

namespace {

GenerationRecord rec(const std::string& candidate, std::vector<std::string> references) {
    GenerationRecord r{"h", "r", tokenize(candidate), {}};
    for (const auto& ref : references) r.references.push_back(tokenize(ref));
    return r;
}

}  // namespace

TEST(GenEval, Tokenize) {
    EXPECT_EQ(tokenize("  PersonX's  dog, barks!\tLOUDLY "),
              (Tokens{"personx", "'s", "dog", ",", "barks", "!", "loudly"}));
    EXPECT_EQ(tokenize("it's 'quoted'"), (Tokens{"it", "'s", "'quoted", "'"}));
    EXPECT_EQ(tokenize("a--b"), (Tokens{"a", "-", "-", "b"}));
    EXPECT_TRUE(tokenize(" \t\n").empty());
}

TEST(GenEval, IdenticalSentence) {
    const auto r = rec("the cat sat down", {"the cat sat down"});
    EXPECT_DOUBLE_EQ(bleu1(r), 1.0);
    EXPECT_DOUBLE_EQ(rouge_l(r), 1.0);
    EXPECT_DOUBLE_EQ(meteor_lite(r), 0.9921875);
}

TEST(GenEval, BleuClippingAndBrevity) {
    // Four "the" clipped to the two in the reference.
    EXPECT_DOUBLE_EQ(bleu1(rec("the the the the", {"the cat the mat"})), 0.5);
    // Short candidate: precision 1, brevity exp(1 - 4/2).
    EXPECT_DOUBLE_EQ(bleu1(rec("the cat", {"the cat sat down"})), std::exp(-1.0));
    // Max over single references, not a multi-reference BLEU.
    EXPECT_DOUBLE_EQ(bleu1(rec("the cat", {"the cat sat down", "the cat"})), 1.0);
    EXPECT_EQ(bleu1(rec("", {"x"})), 0.0);
}

TEST(GenEval, RougeL) {
    // LCS("a b c d", "a c d e") = 3; P = R = 3/4.
    EXPECT_DOUBLE_EQ(rouge_l(rec("a b c d", {"a c d e"})), 0.75);
    EXPECT_DOUBLE_EQ(rouge_l(rec("x y", {"a b"})), 0.0);
    // P = 1, R = 1/3: F1 = 0.5.
    EXPECT_DOUBLE_EQ(rouge_l(rec("a", {"a b c"})), 0.5);
}

TEST(GenEval, MeteorUsesStems) {
    const double stemmed = meteor_lite(rec("dogs running", {"dog runs"}));
    EXPECT_GT(stemmed, 0.9);
    EXPECT_EQ(meteor_lite(rec("cats", {"dog"})), 0.0);
    // Two chunks out of two matches: penalty 0.5 * 1 = 0.5.
    const double swapped = meteor_lite(rec("b a", {"a b"}));
    EXPECT_DOUBLE_EQ(swapped, 0.5);
}

TEST(GenEval, MetricsStayInUnitIntervalAndAreTokenOrderSymmetric) {
    std::mt19937_64 rng(3);
    const std::vector<std::string> vocab = {"a", "the", "dog", "dogs", "run", "running", "in", "park"};
    for (int trial = 0; trial < 200; ++trial) {
        auto sentence = [&] {
            std::string s;
            const int len = 1 + static_cast<int>(rng() % 6);
            for (int i = 0; i < len; ++i) s += vocab[rng() % vocab.size()] + " ";
            return s;
        };
        const auto r = rec(sentence(), {sentence(), sentence()});
        for (double v : {bleu1(r), rouge_l(r), meteor_lite(r)}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
        GenerationRecord reversed = r;
        std::reverse(reversed.references.begin(), reversed.references.end());
        EXPECT_EQ(bleu1(r), bleu1(reversed));
        EXPECT_EQ(meteor_lite(r), meteor_lite(reversed));
    }
}

TEST(GenEval, CiderMatchesReferenceImplementation) {
    const auto doc = nlohmann::json::parse(testing_support::slurp(testing_support::data_dir() / "cider_toy.json"));
    const auto expected =
        nlohmann::json::parse(testing_support::slurp(testing_support::data_dir() / "cider_toy_expected.json"));
    std::vector<GenerationRecord> corpus;
    for (const auto& r : doc["records"]) {
        corpus.push_back(rec(r["candidate"].get<std::string>(), r["references"].get<std::vector<std::string>>()));
    }
    const auto result = cider(corpus);
    EXPECT_NEAR(result.mean, expected["mean"].get<double>(), 1e-12);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        EXPECT_NEAR(result.per_record[i], expected["per_record"][i].get<double>(), 1e-12);
    }
}

TEST(GenEval, CiderEdgeCases) {
    EXPECT_CKDRIFT_ERROR(cider({}), ErrorCode::EmptyCorpus);
    // A single record: every n-gram has df = N, so every weight is zero.
    const std::vector<GenerationRecord> one = {rec("a b", {"a b"})};
    EXPECT_EQ(cider(one).mean, 0.0);
}

TEST(GenEval, EvaluateRuns) {
    const std::vector<RunScores> runs = {{{Metric::Bleu1, 0.2}}, {{Metric::Bleu1, 0.4}}, {{Metric::Bleu1, 0.6}}};
    const auto report = evaluate_runs(runs);
    EXPECT_EQ(report.runs, 3U);
    EXPECT_TRUE(report.std_defined);
    EXPECT_DOUBLE_EQ(report.metrics.at(Metric::Bleu1).mean, 0.4);
    EXPECT_NEAR(report.metrics.at(Metric::Bleu1).std, 0.2, 1e-15);

    const auto single = evaluate_runs(std::span(runs.data(), 1));
    EXPECT_FALSE(single.std_defined);
    EXPECT_EQ(single.metrics.at(Metric::Bleu1).std, 0.0);

    EXPECT_CKDRIFT_ERROR(evaluate_runs({}), ErrorCode::InvalidArgument);
    const std::vector<RunScores> mismatched = {{{Metric::Bleu1, 0.2}}, {{Metric::Cider, 0.2}}};
    EXPECT_CKDRIFT_ERROR(evaluate_runs(mismatched), ErrorCode::InvalidArgument);
}

TEST(GenEval, JsonOutput) {
    const std::vector<RunScores> runs = {{{Metric::Bleu1, 0.25}, {Metric::Cider, 1.0}},
                                         {{Metric::Bleu1, 0.75}, {Metric::Cider, 1.0}}};
    const auto json = nlohmann::json::parse(to_json(evaluate_runs(runs)));
    EXPECT_EQ(json["runs"], 2);
    EXPECT_EQ(json["std_defined"], true);
    EXPECT_DOUBLE_EQ(json["bleu1"]["mean"].get<double>(), 0.5);
    EXPECT_NEAR(json["bleu1"]["std"].get<double>(), 0.353553, 1e-6);
    EXPECT_EQ(json["cider"]["std"].get<double>(), 0.0);
    EXPECT_FALSE(json.contains("meteor"));
}

TEST(GenEval, MetricNames) {
    for (auto m : kAllMetrics) EXPECT_EQ(parse_metric(to_string(m)), m);
    EXPECT_EQ(parse_metric("bleu"), std::nullopt);
}

TEST(GenEval, JoinAndScore) {
    const auto records = join_generations("dog\tCapableOf\tbark loudly\ncat\tDesires\tsleep\n",
                                          "dog\tCapableOf\tbark\ncat\tDesires\tnap\ndog\tCapableOf\tguard house\n");
    ASSERT_EQ(records.size(), 2U);
    EXPECT_EQ(records[0].references.size(), 2U);
    EXPECT_EQ(records[1].candidate, Tokens{"sleep"});
    const auto scores = score_corpus(records, kAllMetrics);
    EXPECT_EQ(scores.size(), 4U);
    EXPECT_CKDRIFT_ERROR(join_generations("x\tr\ty\n", "dog\tCapableOf\tbark\n"), ErrorCode::MissingReferences);
    EXPECT_CKDRIFT_ERROR(score_corpus({}, kAllMetrics), ErrorCode::EmptyCorpus);
}

TEST(GenEval, PorterStemmerMatchesReferencePairs) {
    std::ifstream in(testing_support::data_dir() / "porter_pairs.tsv");
    ASSERT_TRUE(in);
    std::string line;
    std::size_t checked = 0;
    while (std::getline(in, line)) {
        const auto tab = line.find('\t');
        ASSERT_NE(tab, std::string::npos);
        EXPECT_EQ(porter_stem(line.substr(0, tab)), line.substr(tab + 1)) << line;
        ++checked;
    }
    EXPECT_GT(checked, 1000U);
}
