// Porter (1980) suffix-stripping stemmer, original published rule set.
// Within steps 2-4 only the longest matching suffix is considered; if its
// measure condition fails the word is left unchanged by that step.

#include "ckdrift/porter_stemmer.hpp"

#include <array>
#include <utility>

namespace ckdrift {

namespace {

class Stemmer {
public:
    explicit Stemmer(std::string word) : w_(std::move(word)) {}

    std::string run() {
        if (w_.size() <= 2) return w_;
        step1a();
        step1b();
        step1c();
        step2();
        step3();
        step4();
        step5a();
        step5b();
        return w_;
    }

private:
    bool consonant(std::size_t i) const {
        switch (w_[i]) {
            case 'a': case 'e': case 'i': case 'o': case 'u': return false;
            case 'y': return i == 0 || !consonant(i - 1);
            default: return true;
        }
    }

    // Number of VC sequences in w_[0, len).
    int measure(std::size_t len) const {
        int m = 0;
        std::size_t i = 0;
        while (i < len && consonant(i)) ++i;
        while (i < len) {
            while (i < len && !consonant(i)) ++i;
            if (i >= len) break;
            while (i < len && consonant(i)) ++i;
            ++m;
        }
        return m;
    }

    bool has_vowel(std::size_t len) const {
        for (std::size_t i = 0; i < len; ++i) {
            if (!consonant(i)) return true;
        }
        return false;
    }

    bool double_consonant(std::size_t len) const {
        return len >= 2 && w_[len - 1] == w_[len - 2] && consonant(len - 1);
    }

    // Stem w_[0, len) ends consonant-vowel-consonant, last not w, x or y.
    bool cvc(std::size_t len) const {
        if (len < 3 || !consonant(len - 1) || consonant(len - 2) || !consonant(len - 3)) return false;
        const char c = w_[len - 1];
        return c != 'w' && c != 'x' && c != 'y';
    }

    bool ends(std::string_view suffix) const {
        return w_.size() >= suffix.size() && w_.compare(w_.size() - suffix.size(), suffix.size(), suffix) == 0;
    }

    std::size_t stem_len(std::string_view suffix) const { return w_.size() - suffix.size(); }

    void replace(std::string_view suffix, std::string_view with) {
        w_.replace(stem_len(suffix), suffix.size(), with);
    }

    void step1a() {
        if (ends("sses")) {
            replace("sses", "ss");
        } else if (ends("ies")) {
            replace("ies", "i");
        } else if (ends("ss")) {
            // unchanged
        } else if (ends("s")) {
            replace("s", "");
        }
    }

    void step1b() {
        if (ends("eed")) {
            if (measure(stem_len("eed")) > 0) replace("eed", "ee");
            return;
        }
        bool stripped = false;
        if (ends("ed") && has_vowel(stem_len("ed"))) {
            replace("ed", "");
            stripped = true;
        } else if (ends("ing") && has_vowel(stem_len("ing"))) {
            replace("ing", "");
            stripped = true;
        }
        if (!stripped) return;
        if (ends("at")) {
            replace("at", "ate");
        } else if (ends("bl")) {
            replace("bl", "ble");
        } else if (ends("iz")) {
            replace("iz", "ize");
        } else if (double_consonant(w_.size())) {
            const char last = w_.back();
            if (last != 'l' && last != 's' && last != 'z') w_.pop_back();
        } else if (measure(w_.size()) == 1 && cvc(w_.size())) {
            w_ += 'e';
        }
    }

    void step1c() {
        if (ends("y") && has_vowel(stem_len("y"))) w_.back() = 'i';
    }

    template <std::size_t N>
    void apply_longest(const std::array<std::pair<std::string_view, std::string_view>, N>& rules, int min_measure) {
        const std::pair<std::string_view, std::string_view>* best = nullptr;
        for (const auto& rule : rules) {
            if (ends(rule.first) && (best == nullptr || rule.first.size() > best->first.size())) best = &rule;
        }
        if (best != nullptr && measure(stem_len(best->first)) > min_measure) replace(best->first, best->second);
    }

    void step2() {
        static constexpr std::array<std::pair<std::string_view, std::string_view>, 20> rules = {{
            {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},  {"anci", "ance"},  {"izer", "ize"},
            {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},  {"eli", "e"},      {"ousli", "ous"},
            {"ization", "ize"}, {"ation", "ate"},   {"ator", "ate"},   {"alism", "al"},   {"iveness", "ive"},
            {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},   {"iviti", "ive"},  {"biliti", "ble"},
        }};
        apply_longest(rules, 0);
    }

    void step3() {
        static constexpr std::array<std::pair<std::string_view, std::string_view>, 7> rules = {{
            {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"}, {"ical", "ic"}, {"ful", ""}, {"ness", ""},
        }};
        apply_longest(rules, 0);
    }

    void step4() {
        static constexpr std::array<std::string_view, 19> suffixes = {
            "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
            "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
        };
        std::string_view best;
        for (auto suffix : suffixes) {
            if (ends(suffix) && suffix.size() > best.size()) best = suffix;
        }
        if (best.empty()) return;
        const std::size_t len = stem_len(best);
        if (measure(len) <= 1) return;
        if (best == "ion" && (len == 0 || (w_[len - 1] != 's' && w_[len - 1] != 't'))) return;
        w_.resize(len);
    }

    void step5a() {
        if (!ends("e")) return;
        const std::size_t len = stem_len("e");
        const int m = measure(len);
        if (m > 1 || (m == 1 && !cvc(len))) w_.pop_back();
    }

    void step5b() {
        if (measure(w_.size()) > 1 && double_consonant(w_.size()) && w_.back() == 'l') w_.pop_back();
    }

    std::string w_;
};

bool all_lower_alpha(std::string_view word) {
    for (char c : word) {
        if (c < 'a' || c > 'z') return false;
    }
    return true;
}

}  // namespace

std::string porter_stem(std::string_view word) {
    if (!all_lower_alpha(word)) return std::string(word);
    return Stemmer(std::string(word)).run();
}

}  // namespace ckdrift
