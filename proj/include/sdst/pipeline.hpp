#pragma once

// End-to-end orchestration shared by the CLI and the acceptance suite:
// synthetic data, LM pretraining, stage 1, stage 2, decoding and scoring.

#include "sdst/config.hpp"
#include "sdst/metrics.hpp"

#include <iostream>

namespace sdst {

using Logger = std::function<void(const std::string&)>;

struct PipelineData {
    DialogueCorpus lm_text;
    DialogueCorpus asr;
    DialogueCorpus train;
    DialogueCorpus dev;
};

inline SynthSpec corpus_spec(const RunConfig& c, std::uint64_t seed, int n, const std::string& prefix) {
    SynthSpec s = c.data.synth;
    s.schema_seed = c.data.synth.effective_schema_seed();
    s.seed = seed;
    s.n_dialogues = n;
    s.id_prefix = prefix;
    return s;
}

/// All corpora share the training schema (and hence one ontology).
inline PipelineData make_pipeline_data(const RunConfig& c) {
    PipelineData d;
    d.train = generate_synthetic(c.data.synth);
    d.dev = generate_synthetic(corpus_spec(c, c.data.dev_seed, c.data.dev_dialogues, "dev"));
    d.asr = generate_synthetic(corpus_spec(c, c.data.asr_seed, c.data.asr_dialogues, "asr"));
    d.lm_text = generate_synthetic(corpus_spec(c, c.data.lm_seed, c.data.lm_dialogues, "lm"));
    return d;
}

inline StepHook progress_hook(const Logger& log, const std::string& stage, long every = 100) {
    if (!log) return {};
    return [log, stage, every](long step, double loss, double lr) {
        if (step % every == 0) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%s step %ld loss %.4f lr %.2e", stage.c_str(), step, loss, lr);
            log(buf);
        }
    };
}

inline std::string stats_line(const std::string& stage, const TrainStats& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s: %ld steps, best dev CE %.4f at step %ld%s, %.1fs", stage.c_str(), s.steps,
                  s.best_dev_ce, s.best_step, s.early_stopped ? " (early stop)" : "", s.seconds);
    return buf;
}

inline nlohmann::ordered_json stats_json(const TrainStats& s) {
    nlohmann::ordered_json j;
    j["steps"] = s.steps;
    j["best_step"] = s.best_step;
    j["best_dev_ce"] = s.best_dev_ce;
    j["early_stopped"] = s.early_stopped;
    j["train_ce"] = s.train_ce;
    j["dev_ce"] = s.dev_ce;
    return j;
}

inline ToyCausalLm run_lm_pretrain(const RunConfig& c, const PipelineData& d, TrainStats* stats = nullptr,
                                   const Logger& log = {}) {
    ToyCausalLm lm(c.model.lm);
    auto dev = lm_text_examples(d.dev, c.lm_pretrain.max_history_bytes);
    auto st = pretrain_lm(lm, lm_text_examples(d.lm_text, c.lm_pretrain.max_history_bytes), dev, c.lm_pretrain,
                          progress_hook(log, "lm_pretrain"));
    if (log) log(stats_line("lm_pretrain", st));
    if (stats) *stats = st;
    return lm;
}

inline TrainStats run_stage1(SpokenDstModel& m, const RunConfig& c, const PipelineData& d, const Logger& log = {}) {
    auto st = train_stage1(m, asr_examples(d.asr), asr_examples(d.dev), c.stage1, progress_hook(log, "stage1"));
    if (log) log(stats_line("stage1", st));
    return st;
}

inline TrainStats run_stage2(SpokenDstModel& m, const StageConfig& s2, const PipelineData& d,
                             const Logger& log = {}) {
    auto st = train_stage2(m, dst_examples(d.train, s2), dst_examples(d.dev, s2), s2, progress_hook(log, "stage2"));
    if (log) log(stats_line("stage2", st));
    return st;
}

struct PipelineResult {
    SpokenDstModel model;
    EvalReport train_report;
    EvalReport dev_report;
    nlohmann::ordered_json report;
};

/// Full desk-scale run. The report holds only quantities that are
/// deterministic given config and seed (no timings).
inline PipelineResult run_pipeline(const RunConfig& c, const Logger& log = {}) {
    c.validate();
    PipelineData d = make_pipeline_data(c);
    Ontology ont = derive_ontology(d.train);
    TrainStats s0;
    ToyCausalLm lm = run_lm_pretrain(c, d, &s0, log);
    ModelConfig mc = c.model;
    mc.lora.reset();
    SpokenDstModel m(mc);
    m.set_lm(lm);
    TrainStats s1 = run_stage1(m, c, d, log);
    TrainStats s2 = run_stage2(m, c.stage2, d, log);
    PostProcess none;
    auto train_preds = run_corpus(m, d.train, c.inference, c.workers, none);
    auto dev_preds = run_corpus(m, d.dev, c.inference, c.workers, none);
    EvalReport tr = evaluate(train_preds, d.train);
    EvalReport dv = evaluate(dev_preds, d.dev);
    EvalReport dv_fuzzy = evaluate(dev_preds, d.dev, &ont, true, c.fuzzy_threshold);
    std::string hash = config_hash(c);
    tr.config_hash = dv.config_hash = dv_fuzzy.config_hash = hash;
    nlohmann::ordered_json r;
    r["config_hash"] = hash;
    r["train"] = tr.to_json();
    r["dev"] = dv.to_json();
    r["dev_fuzzy"] = dv_fuzzy.to_json();
    r["training"] = {{"lm_pretrain", stats_json(s0)}, {"stage1", stats_json(s1)}, {"stage2", stats_json(s2)}};
    r["model_checksum"] = hex64(checksum(m.all_parameters()));
    return {std::move(m), std::move(tr), std::move(dv), std::move(r)};
}

}  // namespace sdst
