#pragma once

// Per-turn predictions and their JSONL wire format:
// {dialogue_id, turn_id, transcription, domains, slots, parse_ok, raw_output}

#include "sdst/prompting.hpp"

#include <fstream>

namespace sdst {

struct TurnPrediction {
    std::string dialogue_id;
    int turn_id = 0;
    std::string transcription;
    DialogueState state;
    std::string raw_output;
    bool parse_ok = false;
    std::string prompt;  // prompt text given to the model; not serialized
};

inline nlohmann::ordered_json state_slots_json(const DialogueState& s) {
    nlohmann::ordered_json slots = nlohmann::ordered_json::object();
    for (const auto& [k, v] : s.slots) slots[k] = v;
    return slots;
}

inline nlohmann::ordered_json to_json(const TurnPrediction& p) {
    nlohmann::ordered_json j;
    j["dialogue_id"] = p.dialogue_id;
    j["turn_id"] = p.turn_id;
    j["transcription"] = p.transcription;
    j["domains"] = p.state.domains;
    j["slots"] = state_slots_json(p.state);
    j["parse_ok"] = p.parse_ok;
    j["raw_output"] = p.raw_output;
    return j;
}

inline TurnPrediction prediction_from_json(const nlohmann::ordered_json& j) {
    TurnPrediction p;
    p.dialogue_id = j.at("dialogue_id").get<std::string>();
    p.turn_id = j.at("turn_id").get<int>();
    p.transcription = j.value("transcription", std::string());
    if (j.contains("domains"))
        for (const auto& d : j.at("domains")) p.state.domains.push_back(d.get<std::string>());
    if (j.contains("slots"))
        for (const auto& [k, v] : j.at("slots").items()) p.state.slots.emplace_back(k, v.get<std::string>());
    p.parse_ok = j.value("parse_ok", true);
    p.raw_output = j.value("raw_output", std::string());
    return p;
}

inline std::string dump_line(const nlohmann::ordered_json& j) {
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline void write_predictions(const std::string& path, const std::vector<TurnPrediction>& preds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write predictions file '" + path + "'");
    for (const auto& p : preds) out << dump_line(to_json(p)) << '\n';
}

inline std::vector<TurnPrediction> read_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read predictions file '" + path + "'");
    std::vector<TurnPrediction> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            out.push_back(prediction_from_json(nlohmann::ordered_json::parse(line)));
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace sdst
