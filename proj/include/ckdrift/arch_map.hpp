#pragma once

// Maps checkpoint tensor names onto (component, layer, matrix kind) cells
// using an ordered table of anchored regular expressions.

#include "ckdrift/tensor_io.hpp"

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ckdrift {

enum class Component { Encoder, Decoder };

/// Self-attention q/k/v/o, decoder cross-attention xq/xk/xv/xo, feed-forward
/// wi/wo. Anything else a rule wants to name is Other.
enum class MatrixKind { Q, K, V, O, XQ, XK, XV, XO, WI, WO, Other };

inline constexpr std::array<MatrixKind, 10> kHeatmapKinds = {
    MatrixKind::Q,  MatrixKind::K,  MatrixKind::V,  MatrixKind::O,  MatrixKind::XQ,
    MatrixKind::XK, MatrixKind::XV, MatrixKind::XO, MatrixKind::WI, MatrixKind::WO,
};

std::string_view to_string(Component component);
std::string_view to_string(MatrixKind kind);
std::optional<Component> parse_component(std::string_view text);
std::optional<MatrixKind> parse_kind(std::string_view text);

inline bool is_cross_attention(MatrixKind kind) {
    return kind == MatrixKind::XQ || kind == MatrixKind::XK || kind == MatrixKind::XV || kind == MatrixKind::XO;
}

struct ParamLocator {
    Component component = Component::Encoder;
    std::size_t layer = 0;
    MatrixKind kind = MatrixKind::Q;
    std::string other_name;  // raw tensor name, set only when kind == Other

    auto operator<=>(const ParamLocator&) const = default;
    bool operator==(const ParamLocator&) const = default;
};

std::string describe(const ParamLocator& locator);

struct Rule {
    std::string pattern;
    Component component = Component::Encoder;
    MatrixKind kind = MatrixKind::Q;
};

/// First matching rule wins. Patterns are ECMAScript regular expressions
/// matched against the whole name; the layer index comes from a named group
/// written `(?<layer>...)` or `(?P<layer>...)`. Rules of kind `other` may omit it.
class RuleTable {
public:
    explicit RuleTable(std::vector<Rule> rules);

    static RuleTable from_json(std::string_view text);
    static RuleTable load(const std::filesystem::path& path);
    /// Rules for the Hugging Face T5 naming scheme.
    static RuleTable t5_default();

    std::span<const Rule> rules() const { return rules_; }
    std::string to_json() const;

    std::optional<ParamLocator> classify(std::string_view name) const;

private:
    struct Compiled {
        std::regex regex;
        std::optional<std::size_t> layer_group;
    };

    std::vector<Rule> rules_;
    std::vector<Compiled> compiled_;
};

/// Returns std::nullopt when no rule matches. Throws BadLayerCapture when the
/// matching rule captures a non-numeric layer.
std::optional<ParamLocator> classify_param(std::string_view name, const RuleTable& rules);

struct Grouping {
    std::map<ParamLocator, std::string> classified;
    std::vector<std::string> unclassified;  // lexicographic
};

Grouping group_names(std::span<const std::string> names, const RuleTable& rules);
Grouping group_checkpoint(const Checkpoint& checkpoint, const RuleTable& rules);

}  // namespace ckdrift
