#include "ckdrift/arch_map.hpp"

#include "ckdrift/error.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace ckdrift {

namespace {

using nlohmann::json;

struct RewrittenPattern {
    std::string ecmascript;
    std::optional<std::size_t> layer_group;
};

// std::regex has no named groups, so `(?<name>` and `(?P<name>` are rewritten
// to plain capturing groups while the index of `layer` is recorded.
RewrittenPattern rewrite_named_groups(const std::string& pattern) {
    RewrittenPattern out;
    std::size_t group_index = 0;
    bool in_class = false;
    for (std::size_t i = 0; i < pattern.size(); ++i) {
        const char c = pattern[i];
        if (c == '\\' && i + 1 < pattern.size()) {
            out.ecmascript += c;
            out.ecmascript += pattern[++i];
            continue;
        }
        if (in_class) {
            if (c == ']') in_class = false;
            out.ecmascript += c;
            continue;
        }
        if (c == '[') {
            in_class = true;
            out.ecmascript += c;
            continue;
        }
        if (c != '(') {
            out.ecmascript += c;
            continue;
        }
        std::size_t name_start = std::string::npos;
        if (pattern.compare(i, 3, "(?<") == 0 && i + 3 < pattern.size() && pattern[i + 3] != '=' &&
            pattern[i + 3] != '!') {
            name_start = i + 3;
        } else if (pattern.compare(i, 4, "(?P<") == 0) {
            name_start = i + 4;
        }
        if (name_start != std::string::npos) {
            const std::size_t close = pattern.find('>', name_start);
            if (close == std::string::npos) throw Error(ErrorCode::InvalidRule, "unterminated group name in " + pattern);
            ++group_index;
            const std::string name = pattern.substr(name_start, close - name_start);
            if (name == "layer") {
                if (out.layer_group) throw Error(ErrorCode::InvalidRule, "duplicate layer group in " + pattern);
                out.layer_group = group_index;
            }
            out.ecmascript += '(';
            i = close;
            continue;
        }
        if (i + 1 < pattern.size() && pattern[i + 1] == '?') {
            out.ecmascript += c;  // non-capturing or lookahead
            continue;
        }
        ++group_index;
        out.ecmascript += c;
    }
    return out;
}

}  // namespace

std::string_view to_string(Component component) {
    return component == Component::Encoder ? "encoder" : "decoder";
}

std::string_view to_string(MatrixKind kind) {
    switch (kind) {
        case MatrixKind::Q: return "q";
        case MatrixKind::K: return "k";
        case MatrixKind::V: return "v";
        case MatrixKind::O: return "o";
        case MatrixKind::XQ: return "xq";
        case MatrixKind::XK: return "xk";
        case MatrixKind::XV: return "xv";
        case MatrixKind::XO: return "xo";
        case MatrixKind::WI: return "wi";
        case MatrixKind::WO: return "wo";
        case MatrixKind::Other: return "other";
    }
    return "other";
}

std::optional<Component> parse_component(std::string_view text) {
    if (text == "encoder") return Component::Encoder;
    if (text == "decoder") return Component::Decoder;
    return std::nullopt;
}

std::optional<MatrixKind> parse_kind(std::string_view text) {
    for (auto kind : kHeatmapKinds) {
        if (to_string(kind) == text) return kind;
    }
    if (text == "other") return MatrixKind::Other;
    return std::nullopt;
}

std::string describe(const ParamLocator& locator) {
    std::string out = std::string(to_string(locator.component)) + "." + std::to_string(locator.layer) + "." +
                      std::string(to_string(locator.kind));
    if (locator.kind == MatrixKind::Other) out += "(" + locator.other_name + ")";
    return out;
}

RuleTable::RuleTable(std::vector<Rule> rules) : rules_(std::move(rules)) {
    if (rules_.empty()) throw Error(ErrorCode::InvalidRule, "rule table is empty");
    compiled_.reserve(rules_.size());
    for (const auto& rule : rules_) {
        if (is_cross_attention(rule.kind) && rule.component != Component::Decoder) {
            throw Error(ErrorCode::InvalidRule, "cross-attention kind on encoder: " + rule.pattern);
        }
        RewrittenPattern rewritten = rewrite_named_groups(rule.pattern);
        if (!rewritten.layer_group && rule.kind != MatrixKind::Other) {
            throw Error(ErrorCode::InvalidRule, "pattern lacks a (?<layer>...) group: " + rule.pattern);
        }
        try {
            compiled_.push_back({std::regex(rewritten.ecmascript, std::regex::ECMAScript), rewritten.layer_group});
        } catch (const std::regex_error& e) {
            throw Error(ErrorCode::InvalidRule, "invalid pattern " + rule.pattern + ": " + e.what());
        }
    }
}

RuleTable RuleTable::from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidRule, std::string("rules file is not valid JSON: ") + e.what());
    }
    if (!doc.is_array()) throw Error(ErrorCode::InvalidRule, "rules file must be a JSON array");
    std::vector<Rule> rules;
    for (const auto& item : doc) {
        if (!item.is_object() || !item.contains("pattern") || !item.contains("component") || !item.contains("kind") ||
            !item["pattern"].is_string() || !item["component"].is_string() || !item["kind"].is_string()) {
            throw Error(ErrorCode::InvalidRule, "each rule needs string fields pattern, component, kind");
        }
        const auto component = parse_component(item["component"].get<std::string>());
        const auto kind = parse_kind(item["kind"].get<std::string>());
        if (!component) throw Error(ErrorCode::InvalidRule, "unknown component " + item["component"].dump());
        if (!kind) throw Error(ErrorCode::InvalidRule, "unknown kind " + item["kind"].dump());
        rules.push_back({item["pattern"].get<std::string>(), *component, *kind});
    }
    return RuleTable(std::move(rules));
}

RuleTable RuleTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json(buffer.str());
}

RuleTable RuleTable::t5_default() {
    struct Block {
        const char* stem;
        Component component;
        std::array<std::pair<const char*, MatrixKind>, 4> names;
        std::size_t count;
    };
    const Block blocks[] = {
        {"encoder\\.block\\.(?<layer>\\d+)\\.layer\\.0\\.SelfAttention\\.", Component::Encoder,
         {{{"q", MatrixKind::Q}, {"k", MatrixKind::K}, {"v", MatrixKind::V}, {"o", MatrixKind::O}}}, 4},
        {"encoder\\.block\\.(?<layer>\\d+)\\.layer\\.1\\.DenseReluDense\\.", Component::Encoder,
         {{{"wi", MatrixKind::WI}, {"wo", MatrixKind::WO}, {}, {}}}, 2},
        {"decoder\\.block\\.(?<layer>\\d+)\\.layer\\.0\\.SelfAttention\\.", Component::Decoder,
         {{{"q", MatrixKind::Q}, {"k", MatrixKind::K}, {"v", MatrixKind::V}, {"o", MatrixKind::O}}}, 4},
        {"decoder\\.block\\.(?<layer>\\d+)\\.layer\\.1\\.EncDecAttention\\.", Component::Decoder,
         {{{"q", MatrixKind::XQ}, {"k", MatrixKind::XK}, {"v", MatrixKind::XV}, {"o", MatrixKind::XO}}}, 4},
        {"decoder\\.block\\.(?<layer>\\d+)\\.layer\\.2\\.DenseReluDense\\.", Component::Decoder,
         {{{"wi", MatrixKind::WI}, {"wo", MatrixKind::WO}, {}, {}}}, 2},
    };
    std::vector<Rule> rules;
    for (const auto& block : blocks) {
        for (std::size_t i = 0; i < block.count; ++i) {
            rules.push_back({std::string(block.stem) + block.names[i].first + "\\.weight", block.component,
                             block.names[i].second});
        }
    }
    return RuleTable(std::move(rules));
}

std::string RuleTable::to_json() const {
    json doc = json::array();
    for (const auto& rule : rules_) {
        doc.push_back({{"pattern", rule.pattern},
                       {"component", std::string(to_string(rule.component))},
                       {"kind", std::string(to_string(rule.kind))}});
    }
    return doc.dump(2) + "\n";
}

std::optional<ParamLocator> RuleTable::classify(std::string_view name) const {
    const std::string subject(name);
    std::smatch match;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        if (!std::regex_match(subject, match, compiled_[i].regex)) continue;
        ParamLocator locator;
        locator.component = rules_[i].component;
        locator.kind = rules_[i].kind;
        if (locator.kind == MatrixKind::Other) locator.other_name = subject;
        if (compiled_[i].layer_group) {
            const auto& group = match[static_cast<int>(*compiled_[i].layer_group)];
            const std::string text = group.matched ? group.str() : std::string();
            std::size_t layer = 0;
            const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), layer);
            if (text.empty() || ec != std::errc() || end != text.data() + text.size()) {
                throw Error(ErrorCode::BadLayerCapture, "rule " + rules_[i].pattern + " captured layer '" + text +
                                                            "' from " + subject);
            }
            locator.layer = layer;
        }
        return locator;
    }
    return std::nullopt;
}

std::optional<ParamLocator> classify_param(std::string_view name, const RuleTable& rules) {
    return rules.classify(name);
}

Grouping group_names(std::span<const std::string> names, const RuleTable& rules) {
    Grouping grouping;
    for (const auto& name : names) {
        auto locator = rules.classify(name);
        if (!locator) {
            grouping.unclassified.push_back(name);
            continue;
        }
        auto [it, inserted] = grouping.classified.emplace(*locator, name);
        if (!inserted) {
            throw Error(ErrorCode::LocatorCollision,
                        "'" + it->second + "' and '" + name + "' both map to " + describe(*locator));
        }
    }
    std::sort(grouping.unclassified.begin(), grouping.unclassified.end());
    return grouping;
}

Grouping group_checkpoint(const Checkpoint& checkpoint, const RuleTable& rules) {
    std::vector<std::string> names;
    names.reserve(checkpoint.tensors.size());
    for (const auto& [name, tensor] : checkpoint.tensors) names.push_back(name);
    return group_names(names, rules);
}

}  // namespace ckdrift
