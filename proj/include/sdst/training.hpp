#pragma once

// Training stages: text LM pretraining (toy stand-in for a pretrained LM),
// stage-1 ASR alignment, stage-2 joint ASR-DST with LoRA, and the one-epoch
// final fine-tune. All share one loop with warmup, early stopping on dev
// cross-entropy and restoration of the best weights.

#include "sdst/model.hpp"
#include "sdst/optim.hpp"

#include <chrono>
#include <functional>
#include <numeric>

namespace sdst {

enum class Stage { lm_pretrain, asr_pretrain, joint_dst, final_ft };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::lm_pretrain, "lm_pretrain"},
                                     {Stage::asr_pretrain, "asr_pretrain"},
                                     {Stage::joint_dst, "joint_dst"},
                                     {Stage::final_ft, "final_ft"}})

inline std::string stage_name(Stage s) { return nlohmann::json(s).get<std::string>(); }

struct StageConfig {
    Stage stage = Stage::asr_pretrain;
    int batch_size = 64;
    double learning_rate = 1e-4;
    long warmup_steps = 2000;
    std::vector<std::string> freeze{"lm"};
    std::optional<LoraConfig> lora;
    int early_stop_patience = 3;
    long eval_interval = 200;
    long max_steps = 100000;
    bool include_agent = true;
    bool loss_on_history = false;
    bool no_asr_init = false;
    std::size_t max_history_bytes = 4096;
    std::uint64_t seed = 1;
    AdamWConfig optimizer;

    bool freezes(const std::string& module) const {
        return std::find(freeze.begin(), freeze.end(), module) != freeze.end();
    }

    void validate() const {
        auto fail = [&](const std::string& msg) { throw std::invalid_argument(stage_name(stage) + ": " + msg); };
        if (batch_size < 1) fail("batch_size must be positive");
        if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
        if (warmup_steps < 0) fail("warmup_steps must be non-negative");
        if (early_stop_patience < 1) fail("early_stop_patience must be positive");
        if (eval_interval < 1) fail("eval_interval must be positive");
        if (max_steps < 1) fail("max_steps must be positive");
        for (const auto& m : freeze)
            if (m != "encoder" && m != "connector" && m != "lm") fail("unknown module '" + m + "' in freeze");
        switch (stage) {
        case Stage::lm_pretrain:
            if (lora) fail("LM pretraining takes no LoRA");
            break;
        case Stage::asr_pretrain:
            if (!freezes("lm")) fail("stage 1 must freeze the LM");
            if (lora) fail("stage 1 takes no LoRA");
            break;
        case Stage::joint_dst:
        case Stage::final_ft:
            if (!freezes("encoder")) fail("must freeze the encoder");
            if (!freezes("lm")) fail("LM base weights must stay frozen (use LoRA)");
            if (lora && lora->rank < 1) fail("lora.rank must be >= 1");
            break;
        }
    }

    /// Published hyperparameters per stage.
    static StageConfig defaults(Stage s) {
        StageConfig c;
        c.stage = s;
        switch (s) {
        case Stage::lm_pretrain:
            c.batch_size = 16;
            c.learning_rate = 1e-3;
            c.warmup_steps = 100;
            c.freeze = {"encoder", "connector"};
            break;
        case Stage::asr_pretrain:
            break;
        case Stage::joint_dst:
            c.batch_size = 128;
            c.learning_rate = 5e-5;
            c.warmup_steps = 500;
            c.freeze = {"encoder", "lm"};
            c.lora = LoraConfig{};
            break;
        case Stage::final_ft:
            c.batch_size = 256;
            c.learning_rate = 5e-5;
            c.warmup_steps = 0;
            c.freeze = {"encoder", "lm"};
            c.lora = LoraConfig{};
            break;
        }
        return c;
    }
};

inline void to_json(nlohmann::json& j, const StageConfig& c) {
    j = nlohmann::json{{"stage", c.stage},
                       {"batch_size", c.batch_size},
                       {"learning_rate", c.learning_rate},
                       {"warmup_steps", c.warmup_steps},
                       {"freeze", c.freeze},
                       {"lora", c.lora ? nlohmann::json(*c.lora) : nlohmann::json(nullptr)},
                       {"early_stop_patience", c.early_stop_patience},
                       {"eval_interval", c.eval_interval},
                       {"max_steps", c.max_steps},
                       {"include_agent", c.include_agent},
                       {"loss_on_history", c.loss_on_history},
                       {"no_asr_init", c.no_asr_init},
                       {"max_history_bytes", c.max_history_bytes},
                       {"seed", c.seed},
                       {"weight_decay", c.optimizer.weight_decay},
                       {"clip_norm", c.optimizer.clip_norm}};
}

/// Fields absent from `j` keep the stage's published defaults.
inline void from_json(const nlohmann::json& j, StageConfig& c) {
    Stage s = j.contains("stage") ? j.at("stage").get<Stage>() : c.stage;
    c = StageConfig::defaults(s);
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    opt("batch_size", c.batch_size);
    opt("learning_rate", c.learning_rate);
    opt("warmup_steps", c.warmup_steps);
    opt("freeze", c.freeze);
    if (j.contains("lora")) {
        if (j.at("lora").is_null()) c.lora.reset();
        else c.lora = j.at("lora").get<LoraConfig>();
    }
    opt("early_stop_patience", c.early_stop_patience);
    opt("eval_interval", c.eval_interval);
    opt("max_steps", c.max_steps);
    opt("include_agent", c.include_agent);
    opt("loss_on_history", c.loss_on_history);
    opt("no_asr_init", c.no_asr_init);
    opt("max_history_bytes", c.max_history_bytes);
    opt("seed", c.seed);
    opt("weight_decay", c.optimizer.weight_decay);
    opt("clip_norm", c.optimizer.clip_norm);
}

// ---------------------------------------------------------------------------
// Loss

/// Mean negative log-likelihood over masked-in rows.
inline double compute_nll(const Matrix& logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
    Tape t;
    return t.value(ops::masked_nll(t, t.constant(logits), targets, mask))(0, 0);
}

/// One teacher-forced sequence. Logit rows cover the last soft-prefix
/// position (when speech is present) and every input token.
struct TrainExample {
    std::optional<Utterance> speech;
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
};

/// Speech (optional) + BOS + record text, predicting the record text.
inline TrainExample make_example(const PromptRecord& r, std::optional<Utterance> speech) {
    if (r.token_ids.empty()) throw std::invalid_argument("empty prompt record");
    TrainExample ex;
    ex.inputs.push_back(ByteTokenizer::kBos);
    ex.inputs.insert(ex.inputs.end(), r.token_ids.begin(), r.token_ids.end() - 1);
    if (speech) {
        ex.targets.push_back(ByteTokenizer::kBos);
        ex.mask.push_back(0);
    }
    ex.targets.insert(ex.targets.end(), r.token_ids.begin(), r.token_ids.end());
    ex.mask.insert(ex.mask.end(), r.loss_mask.begin(), r.loss_mask.end());
    ex.speech = std::move(speech);
    return ex;
}

/// Text stand-in for the speech prefix: transcript bytes take the place of
/// the soft prompt, then BOS and the record text.
inline TrainExample make_text_prefixed_example(std::string_view transcript, const PromptRecord& r) {
    if (r.token_ids.empty()) throw std::invalid_argument("empty prompt record");
    TrainExample ex;
    auto pre = ByteTokenizer::encode(transcript);
    ex.inputs = pre;
    ex.inputs.push_back(ByteTokenizer::kBos);
    ex.inputs.insert(ex.inputs.end(), r.token_ids.begin(), r.token_ids.end() - 1);
    ex.targets.assign(pre.begin() + (pre.empty() ? 0 : 1), pre.end());
    ex.targets.push_back(ByteTokenizer::kBos);
    ex.mask.assign(ex.targets.size(), 0);
    if (pre.empty()) {
        ex.targets.clear();
        ex.mask.clear();
    }
    ex.targets.insert(ex.targets.end(), r.token_ids.begin(), r.token_ids.end());
    ex.mask.insert(ex.mask.end(), r.loss_mask.begin(), r.loss_mask.end());
    return ex;
}

inline Var example_loss(Tape& t, const SpokenDstModel& model, const TrainExample& ex) {
    std::optional<Var> prefix;
    if (ex.speech) prefix = model.soft_prefix(t, *ex.speech);
    Var logits = model.lm().forward(t, prefix, ex.inputs);
    return ops::masked_nll(t, logits, ex.targets, ex.mask);
}

inline Var example_loss(Tape& t, const ToyCausalLm& lm, const TrainExample& ex) {
    if (ex.speech) throw std::invalid_argument("text LM example carries speech");
    return ops::masked_nll(t, lm.forward(t, std::nullopt, ex.inputs), ex.targets, ex.mask);
}

// ---------------------------------------------------------------------------
// Examples from corpora

struct AsrPair {
    Utterance speech;
    std::string transcript;
};

inline std::vector<AsrPair> asr_pairs(const DialogueCorpus& c) {
    FeatureStore store(c.base_dir);
    std::vector<AsrPair> out;
    for (const auto& d : c.dialogues)
        for (const auto& t : d.turns) out.push_back({resolve_utterance(t, store), t.transcript});
    return out;
}

/// Gold history preceding turn `index`, truncated to the byte budget.
inline std::string gold_history(const Dialogue& d, std::size_t index, bool include_agent, std::size_t max_bytes) {
    std::vector<HistoryTurnText> h;
    for (std::size_t i = 0; i < index; ++i) {
        h.push_back({Speaker::user, d.turns[i].transcript});
        if (!d.turns[i].agent.empty()) h.push_back({Speaker::agent, d.turns[i].agent});
    }
    return render_history(truncate_history(std::move(h), include_agent, max_bytes), include_agent);
}

inline std::vector<TrainExample> asr_examples(const DialogueCorpus& c) {
    std::vector<TrainExample> out;
    for (auto& p : asr_pairs(c)) out.push_back(make_example(build_asr_prompt(p.transcript), std::move(p.speech)));
    return out;
}

inline std::vector<TrainExample> dst_examples(const DialogueCorpus& c, const StageConfig& cfg) {
    FeatureStore store(c.base_dir);
    std::vector<TrainExample> out;
    for (const auto& d : c.dialogues)
        for (std::size_t i = 0; i < d.turns.size(); ++i) {
            const auto& t = d.turns[i];
            auto rec = build_dst_prompt(gold_history(d, i, cfg.include_agent, cfg.max_history_bytes), t.transcript,
                                        t.state, true, cfg.loss_on_history);
            rec.prefix_source = d.id + "/" + std::to_string(t.turn_id);
            out.push_back(make_example(rec, resolve_utterance(t, store)));
        }
    return out;
}

/// Text-only LM pretraining data. ASR and DST targets appear with the
/// transcript as a token prefix (mirroring the speech layout) under both
/// history renderings; cascade-style DST records continue from a given
/// transcript.
inline std::vector<TrainExample> lm_text_examples(const DialogueCorpus& c, std::size_t max_history_bytes = 4096) {
    std::vector<TrainExample> out;
    for (const auto& d : c.dialogues)
        for (std::size_t i = 0; i < d.turns.size(); ++i) {
            const auto& t = d.turns[i];
            out.push_back(make_text_prefixed_example(t.transcript, build_asr_prompt(t.transcript)));
            for (bool agent : {true, false}) {
                std::string h = gold_history(d, i, agent, max_history_bytes);
                out.push_back(make_text_prefixed_example(t.transcript, build_dst_prompt(h, t.transcript, t.state, true)));
            }
            std::string h = gold_history(d, i, true, max_history_bytes);
            auto full = build_dst_prompt(h, t.transcript, t.state, true);
            auto head = build_text_only_prompt(h, t.transcript);
            std::fill(full.loss_mask.begin(), full.loss_mask.begin() + static_cast<long>(head.text.size()), 0);
            out.push_back(make_example(full, std::nullopt));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling and the training loop

/// Batches drawn from the concatenated union of all examples, reshuffled at
/// every epoch boundary.
class BatchSampler {
public:
    BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
        if (n == 0) throw std::invalid_argument("no training examples");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }

    std::vector<std::size_t> next(std::size_t batch) {
        std::vector<std::size_t> out;
        out.reserve(batch);
        while (out.size() < batch) {
            if (pos_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                pos_ = 0;
                ++epoch_;
            }
            out.push_back(order_[pos_++]);
        }
        return out;
    }

    long epoch() const { return epoch_; }

private:
    std::vector<std::size_t> order_;
    Rng rng_;
    std::size_t pos_ = 0;
    long epoch_ = 0;
};

struct TrainStats {
    long steps = 0;
    std::vector<double> train_ce;  // mean training loss per evaluation window
    std::vector<double> dev_ce;
    double best_dev_ce = std::numeric_limits<double>::infinity();
    long best_step = 0;
    bool early_stopped = false;
    double seconds = 0.0;
};

class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using LossFn = std::function<Var(Tape&, std::size_t)>;
using StepHook = std::function<void(long step, double loss, double lr)>;

struct LoopOptions {
    std::size_t train_size = 0;
    std::size_t dev_size = 0;
    LossFn train_loss;
    LossFn dev_loss;
    ParameterList trainable;
    bool single_epoch = false;
    StepHook on_step;
};

inline double mean_loss(std::size_t n, const LossFn& fn) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        Tape t;
        sum += t.value(fn(t, i))(0, 0);
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

inline std::string nonfinite_report(const ParameterList& ps) {
    std::string out;
    for (const auto& p : ps)
        if (!p->grad.allFinite() || !p->value.allFinite()) out += (out.empty() ? "" : ", ") + p->name;
    return out.empty() ? "none" : out;
}

/// Shared loop: warmup-then-constant LR, dev evaluation every
/// eval_interval steps, early stopping with best-weight restoration.
inline TrainStats train_loop(const StageConfig& cfg, const LoopOptions& o) {
    auto t0 = std::chrono::steady_clock::now();
    TrainStats st;
    ParameterList params;
    for (const auto& p : o.trainable)
        if (p->trainable) params.push_back(p);
    if (params.empty()) throw std::invalid_argument(stage_name(cfg.stage) + ": nothing to train");
    zero_grad(params);
    AdamW opt(cfg.optimizer);
    BatchSampler sampler(o.train_size, cfg.seed);
    const std::size_t batch = std::min<std::size_t>(cfg.batch_size, o.train_size);
    long total = o.single_epoch ? static_cast<long>((o.train_size + cfg.batch_size - 1) / cfg.batch_size) : cfg.max_steps;
    std::vector<std::size_t> epoch_order;
    if (o.single_epoch) epoch_order = sampler.next(o.train_size);
    std::vector<Matrix> best;
    int bad_evals = 0;
    double window = 0.0;
    long window_n = 0;
    for (long step = 1; step <= total; ++step) {
        std::vector<std::size_t> idx;
        if (o.single_epoch) {
            std::size_t lo = static_cast<std::size_t>(step - 1) * cfg.batch_size;
            std::size_t hi = std::min(o.train_size, lo + cfg.batch_size);
            idx.assign(epoch_order.begin() + static_cast<long>(lo), epoch_order.begin() + static_cast<long>(hi));
        } else {
            idx = sampler.next(batch);
        }
        double loss = 0.0;
        for (std::size_t i : idx) {
            Tape t;
            Var l = o.train_loss(t, i);
            loss += t.value(l)(0, 0);
            t.backward(l, 1.0f / static_cast<float>(idx.size()));
        }
        loss /= static_cast<double>(idx.size());
        if (!std::isfinite(loss))
            throw TrainingDiverged(stage_name(cfg.stage) + ": loss is " + std::to_string(loss) + " at step " +
                                   std::to_string(step) + "; non-finite tensors: " + nonfinite_report(params));
        double lr = warmup_lr(cfg.learning_rate, step, cfg.warmup_steps);
        double gnorm = opt.step(params, lr);
        if (!std::isfinite(gnorm))
            throw TrainingDiverged(stage_name(cfg.stage) + ": gradient norm is not finite at step " +
                                   std::to_string(step) + "; loss " + std::to_string(loss));
        st.steps = step;
        window += loss;
        ++window_n;
        if (o.on_step) o.on_step(step, loss, lr);
        if (o.single_epoch) continue;
        if (step % cfg.eval_interval == 0 || step == total) {
            st.train_ce.push_back(window / static_cast<double>(window_n));
            window = 0.0;
            window_n = 0;
            if (o.dev_size == 0) continue;
            double dev = mean_loss(o.dev_size, o.dev_loss);
            st.dev_ce.push_back(dev);
            if (dev < st.best_dev_ce) {
                st.best_dev_ce = dev;
                st.best_step = step;
                best = snapshot(params);
                bad_evals = 0;
            } else if (++bad_evals >= cfg.early_stop_patience) {
                st.early_stopped = true;
                break;
            }
        }
    }
    if (!best.empty()) restore(params, best);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return st;
}

// ---------------------------------------------------------------------------
// Stages

inline TrainStats pretrain_lm(ToyCausalLm& lm, const std::vector<TrainExample>& train,
                              const std::vector<TrainExample>& dev, const StageConfig& cfg,
                              StepHook hook = {}) {
    cfg.validate();
    if (cfg.stage != Stage::lm_pretrain) throw std::invalid_argument("pretrain_lm expects stage lm_pretrain");
    ParameterList ps = lm.parameters();
    set_trainable(ps, true);
    LoopOptions o;
    o.train_size = train.size();
    o.dev_size = dev.size();
    o.train_loss = [&](Tape& t, std::size_t i) { return example_loss(t, lm, train[i]); };
    o.dev_loss = [&](Tape& t, std::size_t i) { return example_loss(t, lm, dev[i]); };
    o.trainable = ps;
    o.on_step = std::move(hook);
    return train_loop(cfg, o);
}

/// Applies the freeze set: encoder and connector follow `freeze`; LM base
/// weights are frozen whenever "lm" is listed, adapters are always trainable.
inline ParameterList apply_freeze(SpokenDstModel& model, const StageConfig& cfg) {
    if (cfg.freezes("encoder")) model.encoder().set_trainable(false);
    else model.encoder().set_trainable(true);
    set_trainable(model.connector_parameters(), !cfg.freezes("connector"));
    set_trainable(model.lm_parameters(), !cfg.freezes("lm"));
    set_trainable(model.adapter_parameters(), true);
    return model.all_parameters();
}

inline TrainStats fit(SpokenDstModel& model, const std::vector<TrainExample>& train,
                      const std::vector<TrainExample>& dev, const StageConfig& cfg, bool single_epoch,
                      StepHook hook) {
    LoopOptions o;
    o.train_size = train.size();
    o.dev_size = dev.size();
    o.train_loss = [&](Tape& t, std::size_t i) { return example_loss(t, model, train[i]); };
    o.dev_loss = [&](Tape& t, std::size_t i) { return example_loss(t, model, dev[i]); };
    o.trainable = apply_freeze(model, cfg);
    o.single_epoch = single_epoch;
    o.on_step = std::move(hook);
    return train_loop(cfg, o);
}

/// Stage 1: LM frozen, encoder and connector trained on ASR prompts.
inline TrainStats train_stage1(SpokenDstModel& model, const std::vector<TrainExample>& train,
                               const std::vector<TrainExample>& dev, const StageConfig& cfg, StepHook hook = {}) {
    cfg.validate();
    if (cfg.stage != Stage::asr_pretrain) throw std::invalid_argument("train_stage1 expects stage asr_pretrain");
    if (model.lm().has_adapters()) throw std::invalid_argument("stage 1 runs without LoRA adapters");
    return fit(model, train, dev, cfg, false, std::move(hook));
}

/// Stage 2: encoder frozen; connector plus LoRA (or connector only when the
/// config has no LoRA) trained on DST prompts with gold history.
inline TrainStats train_stage2(SpokenDstModel& model, const std::vector<TrainExample>& train,
                               const std::vector<TrainExample>& dev, const StageConfig& cfg, StepHook hook = {}) {
    cfg.validate();
    if (cfg.stage != Stage::joint_dst) throw std::invalid_argument("train_stage2 expects stage joint_dst");
    if (cfg.no_asr_init) model.reinitialize_front(cfg.seed * 2 + 11, cfg.seed * 2 + 12);
    if (cfg.lora && !model.lm().has_adapters()) model.enable_lora(*cfg.lora);
    return fit(model, train, dev, cfg, false, std::move(hook));
}

/// Exactly one pass over the target corpus in batches of batch_size.
inline TrainStats final_finetune(SpokenDstModel& model, const std::vector<TrainExample>& train,
                                 const StageConfig& cfg, StepHook hook = {}) {
    cfg.validate();
    if (cfg.stage != Stage::final_ft) throw std::invalid_argument("final_finetune expects stage final_ft");
    if (cfg.lora && !model.lm().has_adapters()) model.enable_lora(*cfg.lora);
    return fit(model, train, {}, cfg, true, std::move(hook));
}

}  // namespace sdst
