#pragma once

// Turn-by-turn decoding of whole dialogues. Each turn's prompt carries the
// history accumulated so far; the model completes the JSON from the
// current-turn transcription onward.

#include "sdst/model.hpp"
#include "sdst/postprocess.hpp"

#include <atomic>
#include <thread>

namespace sdst {

enum class HistorySource { self_decoded, oracle_user, external_asr };

NLOHMANN_JSON_SERIALIZE_ENUM(HistorySource, {{HistorySource::self_decoded, "self_decoded"},
                                             {HistorySource::oracle_user, "oracle_user"},
                                             {HistorySource::external_asr, "external_asr"}})

struct HistoryMode {
    HistorySource mode = HistorySource::self_decoded;
    bool include_agent = true;
    std::size_t max_history_bytes = 4096;
    int max_new_tokens = 512;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(HistoryMode, mode, include_agent, max_history_bytes, max_new_tokens)

/// Optional inline post-processing of each turn's state.
struct PostProcess {
    const Ontology* ontology = nullptr;
    int threshold = kDefaultFuzzyThreshold;
};

/// State carried forward when a turn's output cannot be used.
inline DialogueState fallback_state(const TurnPrediction* previous) {
    return previous ? previous->state : DialogueState{};
}

/// Best-effort transcription from a continuation that starts inside the
/// `current_turn` string: the JSON string body up to the first unescaped quote
/// (or the end of text), with escapes decoded where possible.
inline std::string partial_transcription(std::string_view cont) {
    std::string body;
    bool escape = false;
    for (char c : cont) {
        if (escape) {
            body += '\\';
            body += c;
            escape = false;
        } else if (c == '\\') {
            escape = true;
        } else if (c == '"') {
            break;
        } else {
            body += c;
        }
    }
    try {
        return nlohmann::json::parse("\"" + body + "\"").get<std::string>();
    } catch (const std::exception&) {
        std::string plain;
        for (char c : body)
            if (c != '\\') plain += c;
        return plain;
    }
}

inline void check_history_mode(const HistoryMode& hm, const Dialogue& d) {
    if (d.turns.empty()) throw std::invalid_argument("dialogue '" + d.id + "' has no turns");
    for (const auto& t : d.turns) {
        std::string where = "dialogue '" + d.id + "' turn " + std::to_string(t.turn_id);
        if (hm.mode == HistorySource::oracle_user && trim(t.transcript).empty())
            throw std::invalid_argument(where + ": oracle_user history needs a gold transcript");
        if (hm.mode == HistorySource::external_asr && (!t.asr_hyp || trim(*t.asr_hyp).empty()))
            throw std::invalid_argument(where + ": external_asr history needs an ASR hypothesis");
    }
}

/// Parses `prompt + continuation`; on failure keeps whatever transcription
/// is recoverable and carries the previous state forward.
inline TurnPrediction finish_turn(const std::string& prompt, const std::string& cont, bool transcription_in_cont,
                                  const TurnPrediction* previous, const PostProcess& post) {
    TurnPrediction p;
    p.prompt = prompt;
    p.raw_output = prompt + cont;
    ParseResult res = parse_turn_output(p.raw_output);
    if (res.ok()) {
        p.parse_ok = true;
        p.transcription = res.output->transcription;
        p.state = sanitize_state(res.output->state());
        if (post.ontology) p.state = normalize_state(p.state, *post.ontology, post.threshold);
    } else {
        p.parse_ok = false;
        if (transcription_in_cont) p.transcription = partial_transcription(cont);
        p.state = fallback_state(previous);
    }
    return p;
}

inline std::vector<TurnPrediction> run_dialogue(const TurnModel& model, const Dialogue& d, const HistoryMode& hm,
                                                FeatureStore& store, const PostProcess& post = {}) {
    check_history_mode(hm, d);
    std::vector<TurnPrediction> out;
    std::vector<HistoryTurnText> history;
    for (const auto& turn : d.turns) {
        std::string h = render_history(truncate_history(history, hm.include_agent, hm.max_history_bytes),
                                       hm.include_agent);
        PromptRecord rec = build_dst_prompt(h, "", DialogueState{}, false);
        std::string cont;
        bool failed = false;
        try {
            Utterance speech = resolve_utterance(turn, store);
            cont = model.complete(&speech, rec.text, hm.max_new_tokens);
        } catch (const std::exception&) {
            cont.clear();
            failed = true;
        }
        TurnPrediction p = finish_turn(rec.text, cont, true, out.empty() ? nullptr : &out.back(), post);
        if (failed) p.parse_ok = false;
        p.dialogue_id = d.id;
        p.turn_id = turn.turn_id;
        std::string user;
        switch (hm.mode) {
        case HistorySource::self_decoded: user = p.transcription; break;
        case HistorySource::oracle_user: user = turn.transcript; break;
        case HistorySource::external_asr: user = *turn.asr_hyp; break;
        }
        history.push_back({Speaker::user, user});
        if (!turn.agent.empty()) history.push_back({Speaker::agent, turn.agent});
        out.push_back(std::move(p));
    }
    return out;
}

/// Cascade decoding: no speech, the external transcript seeds the prompt and
/// the model produces only domains and slots.
inline std::vector<TurnPrediction> text_only_run(const TurnModel& lm, const Dialogue& d, bool include_agent,
                                                 std::size_t max_history_bytes = 4096, int max_new_tokens = 512,
                                                 const PostProcess& post = {}) {
    for (const auto& t : d.turns)
        if (!t.asr_hyp || trim(*t.asr_hyp).empty())
            throw std::invalid_argument("dialogue '" + d.id + "' turn " + std::to_string(t.turn_id) +
                                        ": missing external transcript");
    std::vector<TurnPrediction> out;
    std::vector<HistoryTurnText> history;
    for (const auto& turn : d.turns) {
        std::string h = render_history(truncate_history(history, include_agent, max_history_bytes), include_agent);
        PromptRecord rec = build_text_only_prompt(h, *turn.asr_hyp);
        std::string cont;
        try {
            cont = lm.complete(nullptr, rec.text, max_new_tokens);
        } catch (const std::exception&) {
            cont.clear();
        }
        TurnPrediction p = finish_turn(rec.text, cont, false, out.empty() ? nullptr : &out.back(), post);
        p.transcription = *turn.asr_hyp;
        p.dialogue_id = d.id;
        p.turn_id = turn.turn_id;
        history.push_back({Speaker::user, *turn.asr_hyp});
        if (!turn.agent.empty()) history.push_back({Speaker::agent, turn.agent});
        out.push_back(std::move(p));
    }
    return out;
}

/// Decodes dialogues in parallel (turns within a dialogue stay sequential);
/// output order follows the corpus.
inline std::vector<TurnPrediction> run_corpus(const TurnModel& model, const DialogueCorpus& corpus,
                                              const HistoryMode& hm, int workers = 1, const PostProcess& post = {},
                                              bool text_only = false) {
    for (const auto& d : corpus.dialogues) {
        if (text_only) {
            if (d.turns.empty()) throw std::invalid_argument("dialogue '" + d.id + "' has no turns");
        } else {
            check_history_mode(hm, d);
        }
    }
    FeatureStore store(corpus.base_dir);
    std::vector<std::vector<TurnPrediction>> per(corpus.dialogues.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto work = [&] {
        for (std::size_t i; (i = next++) < per.size();) {
            try {
                const auto& d = corpus.dialogues[i];
                per[i] = text_only ? text_only_run(model, d, hm.include_agent, hm.max_history_bytes,
                                                   hm.max_new_tokens, post)
                                   : run_dialogue(model, d, hm, store, post);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    int n = std::max(1, workers);
    if (n == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < n; ++w) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    if (error) std::rethrow_exception(error);
    std::vector<TurnPrediction> out;
    for (auto& v : per)
        for (auto& p : v) out.push_back(std::move(p));
    return out;
}

}  // namespace sdst
