#include "ckdrift/arch_map.hpp"
#include "ckdrift/tensor_io.hpp"

#include "../support/expect_error.hpp"
#include "../support/test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace ckdrift;

namespace {

ParamLocator loc(Component c, std::size_t layer, MatrixKind k) { return {c, layer, k, {}}; }

}  // namespace

TEST(ArchMap, DefaultT5Examples) {
    const auto rules = RuleTable::t5_default();
    EXPECT_EQ(classify_param("decoder.block.3.layer.1.EncDecAttention.k.weight", rules),
              loc(Component::Decoder, 3, MatrixKind::XK));
    EXPECT_EQ(classify_param("encoder.block.0.layer.1.DenseReluDense.wo.weight", rules),
              loc(Component::Encoder, 0, MatrixKind::WO));
    EXPECT_EQ(classify_param("shared.weight", rules), std::nullopt);
    EXPECT_EQ(classify_param("encoder.block.0.layer.0.layer_norm.weight", rules), std::nullopt);
}

TEST(ArchMap, DefaultT5CoversEveryKindOfTheFixture) {
    const auto decls = testing_support::t5_decls(12, 2, 2);
    std::vector<std::string> names;
    for (const auto& d : decls) names.push_back(d.name);
    const auto grouping = group_names(names, RuleTable::t5_default());
    EXPECT_EQ(grouping.classified.size(), 12U * (6 + 10));
    EXPECT_EQ(grouping.unclassified, std::vector<std::string>{"shared.weight"});
    for (const auto& [locator, name] : grouping.classified) {
        EXPECT_FALSE(locator.component == Component::Encoder && is_cross_attention(locator.kind)) << name;
        EXPECT_LT(locator.layer, 12U);
    }
}

TEST(ArchMap, AnchoredMatchOnly) {
    const auto rules = RuleTable::t5_default();
    EXPECT_EQ(classify_param("x.encoder.block.0.layer.0.SelfAttention.q.weight", rules), std::nullopt);
    EXPECT_EQ(classify_param("encoder.block.0.layer.0.SelfAttention.q.weight.extra", rules), std::nullopt);
}

TEST(ArchMap, PythonStyleGroupAndFirstMatchWins) {
    const RuleTable rules({
        {R"(blocks\.(?P<layer>\d+)\.attn\.q)", Component::Decoder, MatrixKind::Q},
        {R"(blocks\.(?<layer>\d+)\..*)", Component::Encoder, MatrixKind::WI},
    });
    EXPECT_EQ(classify_param("blocks.7.attn.q", rules), loc(Component::Decoder, 7, MatrixKind::Q));
    EXPECT_EQ(classify_param("blocks.7.attn.k", rules), loc(Component::Encoder, 7, MatrixKind::WI));
}

TEST(ArchMap, OtherKindCarriesName) {
    const RuleTable rules({{R"(.*layer_norm.*)", Component::Encoder, MatrixKind::Other}});
    const auto locator = classify_param("encoder.final_layer_norm.weight", rules);
    ASSERT_TRUE(locator);
    EXPECT_EQ(locator->kind, MatrixKind::Other);
    EXPECT_EQ(locator->other_name, "encoder.final_layer_norm.weight");
    EXPECT_EQ(describe(*locator), "encoder.0.other(encoder.final_layer_norm.weight)");
}

TEST(ArchMap, GroupsBeforeLayerGroupAreCounted) {
    const RuleTable rules({{R"((encoder|decoder)\.(?:x)?(?<layer>\d+)\.(q))", Component::Encoder, MatrixKind::Q}});
    EXPECT_EQ(classify_param("encoder.12.q", rules), loc(Component::Encoder, 12, MatrixKind::Q));
    EXPECT_EQ(classify_param("decoder.x3.q", rules), loc(Component::Encoder, 3, MatrixKind::Q));
}

TEST(ArchMap, BadLayerCapture) {
    const RuleTable rules({{R"(b\.(?<layer>[a-z0-9]*)\.w)", Component::Encoder, MatrixKind::WI}});
    EXPECT_CKDRIFT_ERROR(classify_param("b.x1.w", rules), ErrorCode::BadLayerCapture);
    EXPECT_CKDRIFT_ERROR(classify_param("b..w", rules), ErrorCode::BadLayerCapture);
    EXPECT_EQ(classify_param("b.04.w", rules)->layer, 4U);
}

TEST(ArchMap, InvalidRuleTables) {
    EXPECT_CKDRIFT_ERROR(RuleTable({}), ErrorCode::InvalidRule);
    EXPECT_CKDRIFT_ERROR(RuleTable({{R"(x(?<layer>\d+))", Component::Encoder, MatrixKind::XQ}}), ErrorCode::InvalidRule);
    EXPECT_CKDRIFT_ERROR(RuleTable({{R"(x\d+)", Component::Encoder, MatrixKind::Q}}), ErrorCode::InvalidRule);
    EXPECT_CKDRIFT_ERROR(RuleTable({{R"(x(?<layer>\d+)[)", Component::Encoder, MatrixKind::Q}}), ErrorCode::InvalidRule);
    EXPECT_CKDRIFT_ERROR(RuleTable::from_json("{}"), ErrorCode::InvalidRule);
    const std::string bad_component = R"j([{"pattern":"a(?<layer>\\d)","component":"middle","kind":"q"}])j";
    const std::string bad_kind = R"j([{"pattern":"a(?<layer>\\d)","component":"encoder","kind":"z"}])j";
    EXPECT_CKDRIFT_ERROR(RuleTable::from_json(bad_component), ErrorCode::InvalidRule);
    EXPECT_CKDRIFT_ERROR(RuleTable::from_json(bad_kind), ErrorCode::InvalidRule);
    EXPECT_CKDRIFT_ERROR(RuleTable::from_json("[1"), ErrorCode::InvalidRule);
}

TEST(ArchMap, JsonRoundTripAndShippedFile) {
    const auto rules = RuleTable::t5_default();
    const auto back = RuleTable::from_json(rules.to_json());
    ASSERT_EQ(back.rules().size(), rules.rules().size());
    for (std::size_t i = 0; i < rules.rules().size(); ++i) {
        EXPECT_EQ(back.rules()[i].pattern, rules.rules()[i].pattern);
        EXPECT_EQ(back.rules()[i].kind, rules.rules()[i].kind);
        EXPECT_EQ(back.rules()[i].component, rules.rules()[i].component);
    }
    const auto shipped = testing_support::slurp(testing_support::data_dir() / ".." / ".." / "data" / "t5_rules.json");
    EXPECT_EQ(shipped, rules.to_json());
}

TEST(ArchMap, CollisionIsAnError) {
    const RuleTable rules({{R"(.*\.(?<layer>\d+)\.q)", Component::Encoder, MatrixKind::Q}});
    const std::vector<std::string> names = {"a.1.q", "b.1.q"};
    EXPECT_CKDRIFT_ERROR(group_names(names, rules), ErrorCode::LocatorCollision);
}

TEST(ArchMap, EmptyCheckpointGivesEmptyGrouping) {
    const auto grouping = group_checkpoint(Checkpoint{}, RuleTable::t5_default());
    EXPECT_TRUE(grouping.classified.empty());
    EXPECT_TRUE(grouping.unclassified.empty());
}

TEST(ArchMap, CoverageAndRuleOrderProperty) {
    // Permuting the rules after the first match never changes the result, and
    // classified + unclassified always equals the input size.
    const auto base = RuleTable::t5_default();
    std::vector<std::string> names;
    for (const auto& d : testing_support::t5_decls(3, 2, 2)) names.push_back(d.name);
    names.push_back("lm_head.weight");
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Rule> rules(base.rules().begin(), base.rules().end());
        std::shuffle(rules.begin(), rules.end(), rng);
        const RuleTable shuffled(rules);
        const auto g = group_names(names, shuffled);
        EXPECT_EQ(g.classified.size() + g.unclassified.size(), names.size());
        for (const auto& name : names) EXPECT_EQ(classify_param(name, shuffled), classify_param(name, base)) << name;
    }
}

TEST(ArchMap, ParseAndPrintKinds) {
    for (auto kind : kHeatmapKinds) EXPECT_EQ(parse_kind(to_string(kind)), kind);
    EXPECT_EQ(parse_kind("other"), MatrixKind::Other);
    EXPECT_EQ(parse_kind("Q"), std::nullopt);
    EXPECT_EQ(parse_component("decoder"), Component::Decoder);
    EXPECT_EQ(parse_component(""), std::nullopt);
}
