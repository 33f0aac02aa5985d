#pragma once

// Deterministic synthetic task-oriented dialogues with cumulative gold
// states, agent offers the user may accept, symbol sequences standing in for
// speech and a noisy external ASR hypothesis per user turn.

#include "sdst/data_io.hpp"

#include <cstdio>
#include <numeric>

namespace sdst {

struct SynthSpec {
    std::uint64_t seed = 7;
    std::optional<std::uint64_t> schema_seed;  // defaults to seed
    int n_dialogues = 50;
    int min_turns = 2;
    int max_turns = 4;
    int min_domains = 2, max_domains = 4;
    int min_slots = 2, max_slots = 4;
    int min_values = 3, max_values = 8;
    double offer_prob = 0.4;    // agent proposes a value for an open slot
    double accept_prob = 0.9;   // user accepts a pending offer
    double symbol_noise = 0.02; // per-symbol substitution in the speech stand-in
    double asr_noise = 0.03;    // per-letter substitution in the external hypothesis
    std::string id_prefix = "d";

    std::uint64_t effective_schema_seed() const { return schema_seed.value_or(seed); }

    void validate() const {
        if (n_dialogues < 0) throw std::invalid_argument("synth.n_dialogues must be >= 0");
        if (min_turns < 1 || max_turns < min_turns) throw std::invalid_argument("synth: need 1 <= min_turns <= max_turns");
        if (min_domains < 1 || max_domains < min_domains || max_domains > 6)
            throw std::invalid_argument("synth: need 1 <= min_domains <= max_domains <= 6");
        if (min_slots < 1 || max_slots < min_slots || max_slots > 6)
            throw std::invalid_argument("synth: need 1 <= min_slots <= max_slots <= 6");
        if (min_values < 1 || max_values < min_values) throw std::invalid_argument("synth: need 1 <= min_values <= max_values");
        for (double p : {offer_prob, accept_prob, symbol_noise, asr_noise})
            if (p < 0.0 || p > 1.0) throw std::invalid_argument("synth: probabilities must lie in [0, 1]");
    }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
    j = nlohmann::json{{"seed", s.seed},
                       {"schema_seed", s.schema_seed ? nlohmann::json(*s.schema_seed) : nlohmann::json(nullptr)},
                       {"n_dialogues", s.n_dialogues},
                       {"min_turns", s.min_turns},
                       {"max_turns", s.max_turns},
                       {"min_domains", s.min_domains},
                       {"max_domains", s.max_domains},
                       {"min_slots", s.min_slots},
                       {"max_slots", s.max_slots},
                       {"min_values", s.min_values},
                       {"max_values", s.max_values},
                       {"offer_prob", s.offer_prob},
                       {"accept_prob", s.accept_prob},
                       {"symbol_noise", s.symbol_noise},
                       {"asr_noise", s.asr_noise},
                       {"id_prefix", s.id_prefix}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
    s = SynthSpec{};
    auto opt = [&](const char* k, auto& field) {
        if (j.contains(k)) j.at(k).get_to(field);
    };
    opt("seed", s.seed);
    if (j.contains("schema_seed") && !j.at("schema_seed").is_null()) s.schema_seed = j.at("schema_seed").get<std::uint64_t>();
    opt("n_dialogues", s.n_dialogues);
    opt("min_turns", s.min_turns);
    opt("max_turns", s.max_turns);
    opt("min_domains", s.min_domains);
    opt("max_domains", s.max_domains);
    opt("min_slots", s.min_slots);
    opt("max_slots", s.max_slots);
    opt("min_values", s.min_values);
    opt("max_values", s.max_values);
    opt("offer_prob", s.offer_prob);
    opt("accept_prob", s.accept_prob);
    opt("symbol_noise", s.symbol_noise);
    opt("asr_noise", s.asr_noise);
    opt("id_prefix", s.id_prefix);
}

/// Speech stand-in alphabet; any other byte maps to the final symbol.
inline constexpr std::string_view kSymbolAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789 .,?'-";
inline constexpr int kSymbolCount = static_cast<int>(kSymbolAlphabet.size()) + 1;

inline int symbol_of(char c) {
    auto pos = kSymbolAlphabet.find(c);
    return pos == std::string_view::npos ? kSymbolCount - 1 : static_cast<int>(pos);
}

struct SchemaSlot {
    std::string name;  // "domain-slot"
    std::string spoken;
    std::vector<std::string> values;
};

struct SchemaDomain {
    std::string name;
    std::vector<SchemaSlot> slots;
};

struct DomainSchema {
    std::vector<SchemaDomain> domains;

    Ontology ontology() const {
        Ontology o;
        for (const auto& d : domains)
            for (const auto& s : d.slots) {
                auto v = s.values;
                std::sort(v.begin(), v.end());
                o.add(s.name, std::move(v));
            }
        return o;
    }
};

namespace detail {

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
inline bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

template <class T>
std::vector<T> sample_without_replacement(const std::vector<T>& pool, int n, Rng& rng) {
    std::vector<T> v = pool;
    std::shuffle(v.begin(), v.end(), rng);
    v.resize(static_cast<std::size_t>(std::min<int>(n, static_cast<int>(v.size()))));
    return v;
}

struct SlotPool {
    const char* name;
    std::vector<std::string> values;
};

inline const std::vector<SlotPool>& slot_pools() {
    static const std::vector<SlotPool> pools{
        {"area", {"north", "south", "east", "west", "centre", "riverside", "uptown", "harbour"}},
        {"price", {"cheap", "moderate", "expensive", "budget", "premium", "free", "mid", "luxury"}},
        {"day", {"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday", "weekend"}},
        {"stars", {"one", "two", "three", "four", "five", "zero", "six", "seven"}},
        {"people", {"one", "two", "three", "four", "five", "six", "seven", "eight"}},
        {"dest", {"cambridge", "london", "ely", "leeds", "oxford", "york", "bristol", "norwich"}},
        {"time", {"morning", "noon", "evening", "night", "early", "late", "midday", "dawn"}},
        {"food", {"thai", "italian", "indian", "chinese", "french", "greek", "korean", "turkish"}},
    };
    return pools;
}

inline const std::vector<std::string>& domain_pool() {
    static const std::vector<std::string> pool{"hotel", "taxi", "train", "cafe", "bus", "park"};
    return pool;
}

}  // namespace detail

inline DomainSchema generate_schema(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.effective_schema_seed() * 0x9E3779B97F4A7C15ull + 17);
    DomainSchema schema;
    int nd = detail::uniform_int(rng, spec.min_domains, spec.max_domains);
    for (const auto& dname : detail::sample_without_replacement(detail::domain_pool(), nd, rng)) {
        SchemaDomain d{dname, {}};
        std::vector<int> idx(detail::slot_pools().size());
        std::iota(idx.begin(), idx.end(), 0);
        int ns = detail::uniform_int(rng, spec.min_slots, spec.max_slots);
        for (int si : detail::sample_without_replacement(idx, ns, rng)) {
            const auto& pool = detail::slot_pools()[static_cast<std::size_t>(si)];
            int nv = detail::uniform_int(rng, spec.min_values, std::min<int>(spec.max_values, static_cast<int>(pool.values.size())));
            d.slots.push_back({dname + "-" + pool.name, pool.name, detail::sample_without_replacement(pool.values, nv, rng)});
        }
        schema.domains.push_back(std::move(d));
    }
    return schema;
}

inline std::vector<int> speech_symbols(std::string_view text, double noise, Rng& rng) {
    std::vector<int> out;
    out.reserve(text.size());
    for (char c : text) {
        int s = symbol_of(c);
        if (noise > 0.0 && detail::coin(rng, noise)) s = detail::uniform_int(rng, 0, 25);
        out.push_back(s);
    }
    return out;
}

inline std::string noisy_transcript(std::string_view text, double noise, Rng& rng) {
    std::string out(text);
    for (auto& c : out)
        if (c >= 'a' && c <= 'z' && noise > 0.0 && detail::coin(rng, noise))
            c = static_cast<char>('a' + detail::uniform_int(rng, 0, 25));
    return out;
}

inline DialogueCorpus generate_synthetic(const SynthSpec& spec) {
    DomainSchema schema = generate_schema(spec);
    Rng rng(spec.seed);
    DialogueCorpus corpus;
    char idbuf[32];
    for (int di = 0; di < spec.n_dialogues; ++di) {
        std::snprintf(idbuf, sizeof idbuf, "%s%04d", spec.id_prefix.c_str(), di);
        Dialogue dlg{idbuf, {}};
        int nturns = detail::uniform_int(rng, spec.min_turns, spec.max_turns);
        std::vector<int> order(schema.domains.size());
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t cur = 0;
        DialogueState state;
        std::optional<std::pair<const SchemaSlot*, std::string>> pending;

        auto open_slots = [&](const SchemaDomain& d) {
            std::vector<const SchemaSlot*> v;
            for (const auto& s : d.slots)
                if (!state.get(s.name)) v.push_back(&s);
            return v;
        };

        for (int ti = 0; ti < nturns; ++ti) {
            DialogueTurn turn;
            turn.turn_id = ti;
            std::string domain_now;
            if (pending && detail::coin(rng, spec.accept_prob)) {
                turn.transcript = "yes please";
                state.set(pending->first->name, pending->second);
                domain_now = slot_domain(pending->first->name);
            } else {
                while (cur + 1 < order.size() && open_slots(schema.domains[static_cast<std::size_t>(order[cur])]).empty()) ++cur;
                const auto& dom = schema.domains[static_cast<std::size_t>(order[cur])];
                auto open = open_slots(dom);
                domain_now = dom.name;
                bool fresh_domain = std::find(state.domains.begin(), state.domains.end(), dom.name) == state.domains.end();
                if (open.empty()) {
                    const auto& s = dom.slots[static_cast<std::size_t>(detail::uniform_int(rng, 0, static_cast<int>(dom.slots.size()) - 1))];
                    const auto& v = s.values[static_cast<std::size_t>(detail::uniform_int(rng, 0, static_cast<int>(s.values.size()) - 1))];
                    turn.transcript = "change " + s.spoken + " to " + v;
                    state.set(s.name, v);
                } else {
                    const auto* s = open[static_cast<std::size_t>(detail::uniform_int(rng, 0, static_cast<int>(open.size()) - 1))];
                    const auto& v = s->values[static_cast<std::size_t>(detail::uniform_int(rng, 0, static_cast<int>(s->values.size()) - 1))];
                    turn.transcript = fresh_domain ? "i want " + v + " " + s->spoken + " in " + dom.name
                                                   : "and " + v + " " + s->spoken;
                    state.add_domain(dom.name);
                    state.set(s->name, v);
                }
            }
            pending.reset();

            const SchemaDomain* active = nullptr;
            for (const auto& d : schema.domains)
                if (d.name == domain_now) active = &d;
            auto open = open_slots(*active);
            if (!open.empty() && detail::coin(rng, spec.offer_prob)) {
                const auto* s = open[static_cast<std::size_t>(detail::uniform_int(rng, 0, static_cast<int>(open.size()) - 1))];
                const auto& v = s->values[static_cast<std::size_t>(detail::uniform_int(rng, 0, static_cast<int>(s->values.size()) - 1))];
                turn.agent = "ok. how about " + v + " " + s->spoken;
                pending = std::make_pair(s, v);
            } else {
                turn.agent = "ok. anything else";
            }

            turn.state = state;
            turn.user.symbols = speech_symbols(turn.transcript, spec.symbol_noise, rng);
            turn.asr_hyp = noisy_transcript(turn.transcript, spec.asr_noise, rng);
            dlg.turns.push_back(std::move(turn));
        }
        corpus.dialogues.push_back(std::move(dlg));
    }
    return corpus;
}

}  // namespace sdst
