#pragma once

// Joint goal accuracy and slot error rate over aligned per-turn predictions.

#include "sdst/data_io.hpp"

#include <iomanip>
#include <limits>
#include <sstream>

namespace sdst {

/// Canonical value replacements applied after case/whitespace folding.
using AliasTable = std::map<std::string, std::string>;

struct CanonicalState {
    std::set<std::string> domains;
    std::map<std::string, std::string> slots;
    bool operator==(const CanonicalState&) const = default;
};

/// Lowercase, trimmed, internal whitespace runs collapsed to one space.
inline std::string fold_whitespace_lower(std::string_view s) {
    std::string out;
    bool gap = false;
    for (unsigned char c : s) {
        if (std::isspace(c)) {
            gap = true;
            continue;
        }
        if (gap && !out.empty()) out.push_back(' ');
        gap = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

inline CanonicalState canonicalize(const DialogueState& s, const AliasTable& aliases = {}) {
    CanonicalState c;
    for (const auto& d : s.domains) c.domains.insert(fold_whitespace_lower(d));
    for (const auto& [k, v] : s.slots) {
        std::string value = fold_whitespace_lower(v);
        if (auto it = aliases.find(value); it != aliases.end()) value = it->second;
        c.slots[fold_whitespace_lower(k)] = value;
    }
    return c;
}

inline DialogueState to_state(const CanonicalState& c) {
    DialogueState s;
    s.domains.assign(c.domains.begin(), c.domains.end());
    for (const auto& kv : c.slots) s.slots.push_back(kv);
    return s;
}

struct SlotCounts {
    long gold_slots = 0;
    long correct = 0;
    long missing = 0;
    long spurious = 0;
    long wrong_value = 0;

    void add(const SlotCounts& o) {
        gold_slots += o.gold_slots;
        correct += o.correct;
        missing += o.missing;
        spurious += o.spurious;
        wrong_value += o.wrong_value;
    }
};

/// Slot comparison of one turn, optionally restricted to keys of one domain.
inline SlotCounts compare_slots(const CanonicalState& pred, const CanonicalState& gold,
                                const std::string* domain = nullptr) {
    auto in_scope = [&](const std::string& key) { return !domain || slot_domain(key) == *domain; };
    SlotCounts c;
    for (const auto& [k, v] : gold.slots) {
        if (!in_scope(k)) continue;
        ++c.gold_slots;
        auto it = pred.slots.find(k);
        if (it == pred.slots.end()) ++c.missing;
        else if (it->second == v) ++c.correct;
        else ++c.wrong_value;
    }
    for (const auto& [k, v] : pred.slots)
        if (in_scope(k) && !gold.slots.contains(k)) ++c.spurious;
    return c;
}

/// SER with an explicit marker for the zero-gold-slot case.
struct SlotErrorRate {
    double value = 0.0;
    bool defined = true;
};

inline SlotErrorRate slot_error_rate(const SlotCounts& c) {
    long errors = c.missing + c.spurious + c.wrong_value;
    if (c.gold_slots == 0) {
        if (c.spurious == 0) return {0.0, true};
        return {std::numeric_limits<double>::infinity(), false};
    }
    return {static_cast<double>(errors) / static_cast<double>(c.gold_slots), true};
}

inline void check_aligned(std::size_t preds, std::size_t golds) {
    if (preds != golds)
        throw std::invalid_argument("metrics: " + std::to_string(preds) + " predictions vs " + std::to_string(golds) +
                                    " gold turns");
}

inline double joint_goal_accuracy(const std::vector<DialogueState>& preds, const std::vector<DialogueState>& golds,
                                  const AliasTable& aliases = {}) {
    check_aligned(preds.size(), golds.size());
    if (golds.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < golds.size(); ++i)
        if (canonicalize(preds[i], aliases).slots == canonicalize(golds[i], aliases).slots) ++hit;
    return static_cast<double>(hit) / static_cast<double>(golds.size());
}

inline SlotErrorRate slot_error_rate(const std::vector<DialogueState>& preds, const std::vector<DialogueState>& golds,
                                     const AliasTable& aliases = {}) {
    check_aligned(preds.size(), golds.size());
    SlotCounts total;
    for (std::size_t i = 0; i < golds.size(); ++i)
        total.add(compare_slots(canonicalize(preds[i], aliases), canonicalize(golds[i], aliases)));
    return slot_error_rate(total);
}

struct DomainScore {
    long turns = 0;
    double jga = 0.0;
    SlotErrorRate ser;
};

struct EvalReport {
    double jga = 0.0;
    SlotErrorRate ser;
    long turns = 0;
    long dialogues = 0;
    SlotCounts counts;
    std::map<std::string, DomainScore> per_domain;
    long parse_failures = 0;
    bool fuzzy = false;
    int fuzzy_threshold = kDefaultFuzzyThreshold;
    std::string config_hash;

    nlohmann::ordered_json to_json() const {
        auto ser_json = [](const SlotErrorRate& s) -> nlohmann::ordered_json {
            if (!s.defined) return "undefined";
            return s.value;
        };
        nlohmann::ordered_json j;
        j["jga"] = jga;
        j["ser"] = ser_json(ser);
        j["turns"] = turns;
        j["dialogues"] = dialogues;
        j["gold_slots"] = counts.gold_slots;
        j["correct"] = counts.correct;
        j["missing"] = counts.missing;
        j["spurious"] = counts.spurious;
        j["wrong_value"] = counts.wrong_value;
        j["parse_failures"] = parse_failures;
        j["fuzzy"] = fuzzy;
        j["fuzzy_threshold"] = fuzzy_threshold;
        auto pd = nlohmann::ordered_json::object();
        for (const auto& [d, s] : per_domain) pd[d] = {{"turns", s.turns}, {"jga", s.jga}, {"ser", ser_json(s.ser)}};
        j["per_domain"] = std::move(pd);
        if (!config_hash.empty()) j["config_hash"] = config_hash;
        return j;
    }

    std::string table() const {
        std::ostringstream os;
        auto pct = [](double v) {
            std::ostringstream s;
            s << std::fixed << std::setprecision(2) << 100.0 * v;
            return s.str();
        };
        auto ser_str = [&](const SlotErrorRate& s) { return s.defined ? pct(s.value) : std::string("undefined"); };
        os << std::left << std::setw(14) << "domain" << std::right << std::setw(8) << "turns" << std::setw(10)
           << "JGA[%]" << std::setw(10) << "SER[%]" << '\n';
        for (const auto& [d, s] : per_domain)
            os << std::left << std::setw(14) << d << std::right << std::setw(8) << s.turns << std::setw(10) << pct(s.jga)
               << std::setw(10) << ser_str(s.ser) << '\n';
        os << std::left << std::setw(14) << "all" << std::right << std::setw(8) << turns << std::setw(10) << pct(jga)
           << std::setw(10) << ser_str(ser) << '\n';
        os << "gold slots " << counts.gold_slots << ", correct " << counts.correct << ", missing " << counts.missing
           << ", spurious " << counts.spurious << ", wrong value " << counts.wrong_value << ", parse failures "
           << parse_failures << (fuzzy ? ", fuzzy threshold " + std::to_string(fuzzy_threshold) : std::string())
           << '\n';
        return os.str();
    }
};

/// Scores predictions against the gold corpus, matching turns by
/// (dialogue_id, turn_id). Missing, extra or duplicate ids are errors.
inline EvalReport evaluate(const std::vector<TurnPrediction>& preds, const DialogueCorpus& gold,
                           const Ontology* ontology = nullptr, bool fuzzy = false,
                           int threshold = kDefaultFuzzyThreshold, const AliasTable& aliases = {}) {
    if (fuzzy && !ontology) throw std::invalid_argument("evaluate: fuzzy matching needs an ontology");
    std::map<std::pair<std::string, int>, const TurnPrediction*> by_id;
    for (const auto& p : preds)
        if (!by_id.emplace(std::make_pair(p.dialogue_id, p.turn_id), &p).second)
            throw std::invalid_argument("evaluate: duplicate prediction for (" + p.dialogue_id + ", " +
                                        std::to_string(p.turn_id) + ")");
    EvalReport r;
    r.fuzzy = fuzzy;
    r.fuzzy_threshold = threshold;
    std::map<std::string, std::pair<long, long>> dom_hits;  // domain -> (turns, exact)
    std::map<std::string, SlotCounts> dom_counts;
    long hits = 0;
    std::size_t matched = 0;
    for (const auto& d : gold.dialogues) {
        ++r.dialogues;
        for (const auto& t : d.turns) {
            auto it = by_id.find({d.id, t.turn_id});
            if (it == by_id.end())
                throw std::invalid_argument("evaluate: no prediction for (" + d.id + ", " + std::to_string(t.turn_id) + ")");
            ++matched;
            const TurnPrediction& p = *it->second;
            if (!p.parse_ok) ++r.parse_failures;
            DialogueState ps = fuzzy ? normalize_state(p.state, *ontology, threshold) : p.state;
            CanonicalState cp = canonicalize(ps, aliases), cg = canonicalize(t.state, aliases);
            ++r.turns;
            if (cp.slots == cg.slots) ++hits;
            r.counts.add(compare_slots(cp, cg));
            std::set<std::string> gold_domains = cg.domains;
            for (const auto& [k, v] : cg.slots) gold_domains.insert(slot_domain(k));
            for (const auto& dom : gold_domains) {
                SlotCounts c = compare_slots(cp, cg, &dom);
                auto& [n, exact] = dom_hits[dom];
                ++n;
                if (c.correct == c.gold_slots && c.missing == 0 && c.spurious == 0 && c.wrong_value == 0) ++exact;
                dom_counts[dom].add(c);
            }
        }
    }
    if (matched != preds.size())
        throw std::invalid_argument("evaluate: " + std::to_string(preds.size() - matched) +
                                    " predictions do not match any gold turn");
    r.jga = r.turns ? static_cast<double>(hits) / static_cast<double>(r.turns) : 0.0;
    r.ser = slot_error_rate(r.counts);
    for (const auto& [dom, he] : dom_hits) {
        DomainScore s;
        s.turns = he.first;
        s.jga = static_cast<double>(he.second) / static_cast<double>(he.first);
        s.ser = slot_error_rate(dom_counts[dom]);
        r.per_domain[dom] = s;
    }
    return r;
}

}  // namespace sdst
