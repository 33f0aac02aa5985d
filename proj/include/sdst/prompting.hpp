#pragma once

// Dialogue state representation, history rendering, ASR/DST prompt records
// with loss masks, and parsing of the model's JSON turn output.

#include "sdst/tokenizer.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sdst {

inline std::string trim(std::string_view s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    std::size_t b = 0, e = s.size();
    while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

/// Active domains plus slot assignments, both in first-mention order.
struct DialogueState {
    std::vector<std::string> domains;
    std::vector<std::pair<std::string, std::string>> slots;

    /// Inserts or overwrites; an overwritten key keeps its position.
    void set(const std::string& key, const std::string& value) {
        for (auto& kv : slots)
            if (kv.first == key) {
                kv.second = value;
                return;
            }
        slots.emplace_back(key, value);
    }

    void add_domain(const std::string& d) {
        if (std::find(domains.begin(), domains.end(), d) == domains.end()) domains.push_back(d);
    }

    const std::string* get(const std::string& key) const {
        for (const auto& kv : slots)
            if (kv.first == key) return &kv.second;
        return nullptr;
    }

    bool empty() const { return domains.empty() && slots.empty(); }

    bool operator==(const DialogueState&) const = default;
};

inline std::string slot_domain(const std::string& key) {
    auto dash = key.find('-');
    return dash == std::string::npos ? std::string() : key.substr(0, dash);
}

/// Empty string when valid, otherwise the first violated invariant.
inline std::string state_violation(const DialogueState& s) {
    for (std::size_t i = 0; i < s.domains.size(); ++i)
        for (std::size_t j = i + 1; j < s.domains.size(); ++j)
            if (s.domains[i] == s.domains[j]) return "duplicate domain '" + s.domains[i] + "'";
    for (std::size_t i = 0; i < s.slots.size(); ++i) {
        const auto& [key, value] = s.slots[i];
        std::string dom = slot_domain(key);
        if (dom.empty()) return "slot key '" + key + "' has no domain prefix";
        if (std::find(s.domains.begin(), s.domains.end(), dom) == s.domains.end())
            return "slot '" + key + "' refers to inactive domain '" + dom + "'";
        if (trim(value).empty()) return "slot '" + key + "' has an empty value";
        for (std::size_t j = i + 1; j < s.slots.size(); ++j)
            if (s.slots[j].first == key) return "duplicate slot '" + key + "'";
    }
    return {};
}

/// Nearest valid state to `s`: duplicate domains and slots collapse (last
/// value wins), slots without a domain prefix or with a blank value are
/// dropped, and domains referenced only by slot keys are appended.
inline DialogueState sanitize_state(const DialogueState& s) {
    DialogueState out;
    for (const auto& d : s.domains) out.add_domain(d);
    for (const auto& [key, value] : s.slots) {
        std::string dom = slot_domain(key);
        if (dom.empty() || trim(value).empty()) continue;
        out.add_domain(dom);
        out.set(key, value);
    }
    return out;
}

inline void validate_state(const DialogueState& s) {
    if (auto v = state_violation(s); !v.empty()) throw std::invalid_argument("invalid dialogue state: " + v);
}

enum class Speaker { user, agent };

struct HistoryTurnText {
    Speaker speaker = Speaker::user;
    std::string text;
};

/// Replaces newlines and tabs by spaces so history stays on one line.
inline std::string single_line(std::string_view s) {
    std::string out(s);
    for (auto& c : out)
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    return out;
}

inline std::string render_history(const std::vector<HistoryTurnText>& turns, bool include_agent) {
    std::string out;
    for (const auto& t : turns) {
        if (t.speaker == Speaker::agent && !include_agent) continue;
        if (!out.empty()) out += ' ';
        if (include_agent) out += t.speaker == Speaker::user ? "USER: " : "AGENT: ";
        out += single_line(t.text);
    }
    return out;
}

/// Drops the oldest turns until the rendered history is at most `max_bytes`.
inline std::vector<HistoryTurnText> truncate_history(std::vector<HistoryTurnText> turns, bool include_agent,
                                                     std::size_t max_bytes) {
    while (!turns.empty() && render_history(turns, include_agent).size() > max_bytes) turns.erase(turns.begin());
    return turns;
}

inline std::string json_quote(std::string_view s) {
    return nlohmann::json(std::string(s)).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// `"domains": [...], "slots": {...}` in the state's own order.
inline std::string serialize_state(const DialogueState& s) {
    std::string out = "\"domains\": [";
    for (std::size_t i = 0; i < s.domains.size(); ++i) out += (i ? ", " : "") + json_quote(s.domains[i]);
    out += "], \"slots\": {";
    for (std::size_t i = 0; i < s.slots.size(); ++i)
        out += (i ? ", " : "") + json_quote(s.slots[i].first) + ": " + json_quote(s.slots[i].second);
    out += "}";
    return out;
}

/// Training or inference example: byte tokens, per-token loss mask and the
/// id of the utterance whose speech forms the soft prefix.
struct PromptRecord {
    std::string text;
    std::vector<int> token_ids;
    std::vector<std::uint8_t> loss_mask;
    std::string prefix_source;

    std::size_t masked_in() const {
        return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
    }
};

inline PromptRecord make_record(std::string text, std::size_t loss_begin, std::size_t loss_end) {
    PromptRecord r;
    r.token_ids = ByteTokenizer::encode(text);
    r.loss_mask.assign(r.token_ids.size(), 0);
    for (std::size_t i = loss_begin; i < loss_end && i < r.loss_mask.size(); ++i) r.loss_mask[i] = 1;
    r.text = std::move(text);
    return r;
}

inline PromptRecord build_asr_prompt(std::string_view transcript) {
    if (trim(transcript).empty()) throw std::invalid_argument("ASR prompt: empty transcript");
    std::string text = "{\"transcription\": " + json_quote(transcript) + "}";
    std::size_t n = text.size();
    return make_record(std::move(text), 0, n);
}

inline constexpr std::string_view kCurrentTurnKey = "\"current_turn\": ";

/// DST prompt. In training mode the loss covers `"current_turn"` through the
/// closing brace (or the whole text when `loss_on_history`); in inference
/// mode the text stops right after `"current_turn": "`.
inline PromptRecord build_dst_prompt(std::string_view history, std::string_view asr_hyp, const DialogueState& state,
                                     bool train, bool loss_on_history = false) {
    validate_state(state);
    std::string head = "{\"dialogue_history\": " + json_quote(single_line(history)) + ", ";
    if (!train) {
        std::string text = head + std::string(kCurrentTurnKey) + "\"";
        return make_record(std::move(text), 0, 0);
    }
    std::string text =
        head + std::string(kCurrentTurnKey) + json_quote(single_line(asr_hyp)) + ", " + serialize_state(state) + "}";
    std::size_t n = text.size();
    return make_record(std::move(text), loss_on_history ? 0 : head.size(), n);
}

/// Cascade prompt: the external transcript is given, the model continues
/// with the domains and slots.
inline PromptRecord build_text_only_prompt(std::string_view history, std::string_view transcript) {
    if (trim(transcript).empty()) throw std::invalid_argument("text-only prompt: empty transcript");
    std::string text = "{\"dialogue_history\": " + json_quote(single_line(history)) + ", " +
                       std::string(kCurrentTurnKey) + json_quote(single_line(transcript)) + ", ";
    return make_record(std::move(text), 0, 0);
}

struct TurnOutput {
    std::string transcription;
    std::vector<std::string> domains;
    std::vector<std::pair<std::string, std::string>> slots;
    bool duplicate_keys = false;

    DialogueState state() const { return {domains, slots}; }
};

struct ParseFailure {
    std::string message;
    std::size_t valid_prefix = 0;  // bytes accepted before the error
};

struct ParseResult {
    std::optional<TurnOutput> output;
    ParseFailure failure;
    bool ok() const { return output.has_value(); }
};

namespace detail {

/// SAX handler building an ordered DOM; duplicate object keys keep the
/// first position and the last value, and are counted.
class OrderedSax : public nlohmann::json_sax<nlohmann::ordered_json> {
public:
    using json = nlohmann::ordered_json;

    bool null() override { return put(json(nullptr)); }
    bool boolean(bool v) override { return put(json(v)); }
    bool number_integer(number_integer_t v) override { return put(json(v)); }
    bool number_unsigned(number_unsigned_t v) override { return put(json(v)); }
    bool number_float(number_float_t v, const string_t&) override { return put(json(v)); }
    bool string(string_t& v) override { return put(json(v)); }
    bool binary(binary_t&) override { return false; }
    bool start_object(std::size_t) override {
        stack_.push_back({json::object(), {}});
        return true;
    }
    bool key(string_t& k) override {
        if (stack_.back().value.contains(k)) ++duplicates;
        stack_.back().key = k;
        return true;
    }
    bool end_object() override { return close(); }
    bool start_array(std::size_t) override {
        stack_.push_back({json::array(), {}});
        return true;
    }
    bool end_array() override { return close(); }
    bool parse_error(std::size_t position, const std::string&, const nlohmann::detail::exception& ex) override {
        error = ex.what();
        error_position = position;
        return false;
    }

    json root;
    int duplicates = 0;
    std::string error;
    std::size_t error_position = 0;

private:
    struct Frame {
        json value;
        std::string key;
    };

    bool put(json v) {
        if (stack_.empty()) {
            root = std::move(v);
            return true;
        }
        auto& top = stack_.back();
        if (top.value.is_array()) top.value.push_back(std::move(v));
        else top.value[top.key] = std::move(v);
        return true;
    }

    bool close() {
        json v = std::move(stack_.back().value);
        stack_.pop_back();
        return put(std::move(v));
    }

    std::vector<Frame> stack_;
};

}  // namespace detail

/// Parses one turn output. Failures are returned as values with the number
/// of bytes accepted before the error.
inline ParseResult parse_turn_output(std::string_view text) {
    ParseResult res;
    detail::OrderedSax sax;
    bool ok = false;
    try {
        ok = nlohmann::ordered_json::sax_parse(text.begin(), text.end(), &sax, nlohmann::json::input_format_t::json,
                                               true);
    } catch (const std::exception& e) {
        sax.error = e.what();
    }
    auto fail = [&](std::string msg, std::size_t prefix) {
        res.failure = {std::move(msg), prefix};
        return res;
    };
    if (!ok) {
        std::size_t pos = sax.error_position > 0 ? sax.error_position - 1 : 0;
        return fail(sax.error.empty() ? "malformed JSON" : sax.error, std::min(pos, text.size()));
    }
    const auto& j = sax.root;
    if (!j.is_object()) return fail("top-level value is not an object", 0);
    TurnOutput out;
    std::size_t n = text.size();
    const char* turn_key = j.contains("current_turn") ? "current_turn" : "transcription";
    if (!j.contains(turn_key)) return fail("missing field 'current_turn'", n);
    if (!j.at(turn_key).is_string()) return fail(std::string("field '") + turn_key + "' is not a string", n);
    out.transcription = j.at(turn_key).get<std::string>();
    if (!j.contains("domains")) return fail("missing field 'domains'", n);
    if (!j.contains("slots")) return fail("missing field 'slots'", n);
    const auto& doms = j.at("domains");
    if (!doms.is_array()) return fail("field 'domains' is not an array", n);
    for (const auto& d : doms) {
        if (!d.is_string()) return fail("field 'domains' holds a non-string entry", n);
        auto s = d.get<std::string>();
        if (std::find(out.domains.begin(), out.domains.end(), s) == out.domains.end()) out.domains.push_back(s);
    }
    const auto& slots = j.at("slots");
    if (!slots.is_object()) return fail("field 'slots' is not an object", n);
    for (const auto& [k, v] : slots.items()) {
        if (!v.is_string()) return fail("slot '" + k + "' is not a string", n);
        out.slots.emplace_back(k, v.get<std::string>());
    }
    out.duplicate_keys = sax.duplicates > 0;
    res.output = std::move(out);
    return res;
}

}  // namespace sdst
