#pragma once

// Fuzzy normalisation of predicted slot values against an ontology of legal
// values, using a matching-blocks similarity ratio.

#include "sdst/prediction.hpp"

#include <array>
#include <map>
#include <unordered_map>

namespace sdst {

/// Lowercase, non-alphanumerics to spaces, whitespace collapsed and trimmed.
inline std::string fold_for_matching(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c >= 0x80) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

struct MatchingBlock {
    std::size_t a = 0, b = 0, size = 0;
};

/// Longest common substring of a[alo, ahi) and b[blo, bhi); ties resolve to
/// the smallest start in a, then in b.
inline MatchingBlock longest_match(std::string_view a, std::size_t alo, std::size_t ahi,
                                   std::size_t blo, std::size_t bhi,
                                   const std::unordered_map<char, std::vector<std::size_t>>& b2j) {
    MatchingBlock best{alo, blo, 0};
    std::unordered_map<std::size_t, std::size_t> run, next;
    for (std::size_t i = alo; i < ahi; ++i) {
        next.clear();
        auto it = b2j.find(a[i]);
        if (it != b2j.end()) {
            for (std::size_t j : it->second) {
                if (j < blo) continue;
                if (j >= bhi) break;
                std::size_t k = 1;
                if (j > 0) {
                    auto prev = run.find(j - 1);
                    if (prev != run.end()) k = prev->second + 1;
                }
                next[j] = k;
                if (k > best.size) best = {i + 1 - k, j + 1 - k, k};
            }
        }
        std::swap(run, next);
    }
    return best;
}

/// Non-overlapping matching blocks found by recursive longest-match splitting.
inline std::vector<MatchingBlock> matching_blocks(std::string_view a, std::string_view b) {
    std::unordered_map<char, std::vector<std::size_t>> b2j;
    for (std::size_t j = 0; j < b.size(); ++j) b2j[b[j]].push_back(j);
    std::vector<MatchingBlock> blocks;
    std::vector<std::array<std::size_t, 4>> queue{{0, a.size(), 0, b.size()}};
    while (!queue.empty()) {
        auto [alo, ahi, blo, bhi] = queue.back();
        queue.pop_back();
        MatchingBlock m = longest_match(a, alo, ahi, blo, bhi, b2j);
        if (m.size == 0) continue;
        blocks.push_back(m);
        if (alo < m.a && blo < m.b) queue.push_back({alo, m.a, blo, m.b});
        if (m.a + m.size < ahi && m.b + m.size < bhi) queue.push_back({m.a + m.size, ahi, m.b + m.size, bhi});
    }
    std::sort(blocks.begin(), blocks.end(), [](const auto& x, const auto& y) { return x.a < y.a; });
    return blocks;
}

/// round(num / den) with ties to even, in exact integer arithmetic.
inline int round_half_even(std::size_t num, std::size_t den) {
    std::size_t q = num / den, r = num % den;
    if (2 * r > den || (2 * r == den && (q % 2 == 1))) ++q;
    return static_cast<int>(q);
}

/// round(100 * 2M / (|a| + |b|)) on folded strings; two empty strings give 100.
inline int similarity_ratio(std::string_view a, std::string_view b) {
    std::string fa = fold_for_matching(a), fb = fold_for_matching(b);
    std::size_t total = fa.size() + fb.size();
    if (total == 0) return 100;
    std::size_t matched = 0;
    for (const auto& m : matching_blocks(fa, fb)) matched += m.size;
    return round_half_even(200 * matched, total);
}

struct OntologySlot {
    std::vector<std::string> values;
    bool categorical = true;
};

/// Legal values per slot; slot names are looked up case-insensitively.
class Ontology {
public:
    void add(const std::string& slot, std::vector<std::string> values, bool categorical = true) {
        if (values.empty()) throw std::invalid_argument("ontology: slot '" + slot + "' has no values");
        slots_[lower(slot)] = OntologySlot{std::move(values), categorical};
    }

    const OntologySlot* find(std::string_view slot) const {
        auto it = slots_.find(lower(slot));
        return it == slots_.end() ? nullptr : &it->second;
    }

    const std::map<std::string, OntologySlot>& slots() const { return slots_; }
    bool empty() const { return slots_.empty(); }

    /// Categorical slots as `slot: [values]`, others as `slot: {"values": [...], "categorical": false}`.
    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j = nlohmann::ordered_json::object();
        for (const auto& [name, s] : slots_) {
            if (s.categorical) j[name] = s.values;
            else j[name] = nlohmann::ordered_json{{"values", s.values}, {"categorical", false}};
        }
        return j;
    }

    static Ontology from_json(const nlohmann::ordered_json& j) {
        if (!j.is_object()) throw std::invalid_argument("ontology: expected a JSON object");
        Ontology o;
        for (const auto& [name, v] : j.items()) {
            if (v.is_array()) {
                o.add(name, v.get<std::vector<std::string>>(), true);
            } else if (v.is_object() && v.contains("values")) {
                o.add(name, v.at("values").get<std::vector<std::string>>(), v.value("categorical", true));
            } else {
                throw std::invalid_argument("ontology: slot '" + name + "' must map to a list or {values, categorical}");
            }
        }
        return o;
    }

    static Ontology load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read ontology file '" + path + "'");
        return from_json(nlohmann::ordered_json::parse(in, nullptr, true, true));
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write ontology file '" + path + "'");
        out << to_json().dump(2) << '\n';
    }

private:
    static std::string lower(std::string_view s) {
        std::string out(s);
        for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return out;
    }

    std::map<std::string, OntologySlot> slots_;
};

inline constexpr int kDefaultFuzzyThreshold = 80;

/// Closest ontology value when its ratio reaches `threshold` (ties to the
/// lexicographically smallest), otherwise the input unchanged.
inline std::string fuzzy_normalize(std::string_view slot, const std::string& value, const Ontology& ont,
                                   int threshold = kDefaultFuzzyThreshold) {
    const OntologySlot* s = ont.find(slot);
    if (!s || !s->categorical) return value;
    const std::string* best = nullptr;
    int best_ratio = -1;
    for (const auto& cand : s->values) {
        int r = similarity_ratio(value, cand);
        if (r > best_ratio || (r == best_ratio && cand < *best)) {
            best_ratio = r;
            best = &cand;
        }
    }
    return best && best_ratio >= threshold ? *best : value;
}

inline DialogueState normalize_state(const DialogueState& state, const Ontology& ont,
                                     int threshold = kDefaultFuzzyThreshold) {
    DialogueState out = state;
    for (auto& [k, v] : out.slots) v = fuzzy_normalize(k, v, ont, threshold);
    return out;
}

inline TurnPrediction normalize_prediction(const TurnPrediction& pred, const Ontology& ont,
                                           int threshold = kDefaultFuzzyThreshold) {
    TurnPrediction out = pred;
    out.state = normalize_state(pred.state, ont, threshold);
    return out;
}

}  // namespace sdst
