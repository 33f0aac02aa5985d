// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion ids as
// arguments to run a subset, e.g. `acceptance 1 4 5`.

#include "../fixtures.hpp"
#include "../oracles.hpp"
#include "../pinned_corpus.hpp"
#include "sdst/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>

using namespace sdst;
using namespace sdst::testing_support;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::vector<int> random_tokens(Rng& rng, int n) {
    std::uniform_int_distribution<int> d(0, 255);
    std::vector<int> out(n);
    for (auto& x : out) x = d(rng);
    return out;
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// 1. Frame stacking

Outcome shapes() {
    Rng rng(101);
    std::uniform_int_distribution<int> tdist(1, 300), kdist(1, 12), fdist(1, 24);
    int mismatches = 0, checked = 0;
    for (int i = 0; i < 500; ++i) {
        int t = tdist(rng), k = kdist(rng), f = fdist(rng);
        Matrix x = gaussian(t, f, 1.0f, rng);
        Matrix got = stack_downsample(x, k);
        long expect_rows = t / k + (t % k != 0 ? 1 : 0);
        if (got.rows() != expect_rows || got.cols() != static_cast<long>(k) * f || got != oracle::stack_frames(x, k))
            ++mismatches;
        if (i % 10 == 0) {
            ConnectorConfig cc;
            cc.stack_factor = k;
            cc.hidden = 8;
            cc.layers = 1;
            cc.heads = 2;
            cc.ffn_dim = 16;
            cc.encoder_dim = f;
            cc.lm_dim = 4;
            cc.max_positions = 300;
            Rng crng(i);
            Connector conn(cc, crng);
            Tape tape;
            if (tape.value(conn.forward(tape, tape.constant(x))).rows() != expect_rows) ++mismatches;
            ++checked;
        }
    }
    return {mismatches == 0, "500 triples against the loop oracle, " + std::to_string(checked) +
                                 " connector outputs, " + std::to_string(mismatches) + " mismatches"};
}

// ---------------------------------------------------------------------------
// 2. LoRA

Outcome lora() {
    LmSpec spec = RunConfig::desk_defaults().model.lm;
    ToyCausalLm base(spec);
    ToyCausalLm adapted = base.inject_lora(LoraConfig{});
    Rng rng(202);
    std::uniform_int_distribution<int> len(1, 40), plen(0, 6);
    float init_gap = 0.0f;
    for (int i = 0; i < 100; ++i) {
        auto toks = random_tokens(rng, len(rng));
        Matrix prefix = gaussian(plen(rng), spec.embed_dim, 1.0f, rng);
        init_gap = std::max(init_gap, (base.forward_with_prefix(prefix, toks) - adapted.forward_with_prefix(prefix, toks))
                                          .cwiseAbs()
                                          .maxCoeff());
    }

    ModelConfig mc = tiny_model();
    SpokenDstModel m(mc);
    auto corpus = tiny_corpus(6);
    StageConfig s2 = StageConfig::defaults(Stage::joint_dst);
    s2.batch_size = 2;
    s2.learning_rate = 1e-3;
    s2.warmup_steps = 0;
    s2.max_steps = 50;
    s2.eval_interval = 1000;
    std::vector<Matrix> before;
    m.enable_lora(*s2.lora);
    for (const auto& group : {m.lm_parameters(), m.encoder_parameters()})
        for (const auto& p : group) before.push_back(p->value);
    std::uint64_t adapters_before = checksum(m.adapter_parameters());
    auto dev = dst_examples(corpus, s2);
    dev.resize(4);
    TrainStats st = train_stage2(m, dst_examples(corpus, s2), dev, s2);
    bool frozen = true;
    std::size_t i = 0;
    for (const auto& group : {m.lm_parameters(), m.encoder_parameters()})
        for (const auto& p : group) frozen = frozen && p->value == before[i++];
    bool moved = checksum(m.adapter_parameters()) != adapters_before;

    ToyCausalLm merged = m.lm().merge_lora();
    float merge_gap = 0.0f;
    for (int k = 0; k < 100; ++k) {
        auto toks = random_tokens(rng, len(rng));
        Matrix prefix = gaussian(plen(rng), mc.lm.embed_dim, 1.0f, rng);
        merge_gap = std::max(
            merge_gap, (m.lm().forward_with_prefix(prefix, toks) - merged.forward_with_prefix(prefix, toks)).cwiseAbs().maxCoeff());
    }
    bool pass = init_gap < 1e-6f && merge_gap < 1e-5f && frozen && moved && st.steps == 50;
    return {pass, "init max|dlogit| " + fmt(init_gap, 9) + ", merge max|dlogit| " + fmt(merge_gap, 9) +
                      ", base bit-identical after " + std::to_string(st.steps) + " steps: " + (frozen ? "yes" : "no") +
                      ", adapters moved: " + (moved ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 3. Loss masking

Outcome masking() {
    Rng rng(303);
    const int vocab = ByteTokenizer::kVocabSize;
    std::uniform_int_distribution<int> rows(2, 30), tok(0, vocab - 1), bit(0, 1);
    int loss_changes = 0, grad_leaks = 0, dead_rows = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int n = rows(rng);
        auto p = make_param("logits", gaussian(n, vocab, 2.0f, rng));
        std::vector<int> targets(n), other(n);
        std::vector<std::uint8_t> mask(n);
        for (int r = 0; r < n; ++r) {
            targets[r] = tok(rng);
            mask[r] = static_cast<std::uint8_t>(bit(rng));
        }
        mask[rng() % n] = 1;
        for (int r = 0; r < n; ++r) other[r] = mask[r] ? targets[r] : tok(rng);
        if (compute_nll(p->value, targets, mask) != compute_nll(p->value, other, mask)) ++loss_changes;
        Tape t;
        t.backward(ops::masked_nll(t, t.param(p), targets, mask));
        for (int r = 0; r < n; ++r) {
            if (!mask[r] && !p->grad.row(r).isZero(0.0f)) ++grad_leaks;
            if (mask[r] && p->grad.row(r).isZero(0.0f)) ++dead_rows;
        }
    }

    // Through the whole model: history bytes sit outside the loss span.
    SpokenDstModel m(tiny_model());
    auto corpus = tiny_corpus(4);
    StageConfig s2 = StageConfig::defaults(Stage::joint_dst);
    int model_changes = 0, examples = 0;
    for (const auto& ex : dst_examples(corpus, s2)) {
        if (std::count(ex.mask.begin(), ex.mask.end(), 0) < 2) continue;
        TrainExample alt = ex;
        for (std::size_t r = 0; r < alt.targets.size(); ++r)
            if (!alt.mask[r]) alt.targets[r] = (alt.targets[r] + 17) % 256;
        Tape a, b;
        double la = a.value(example_loss(a, m, ex))(0, 0), lb = b.value(example_loss(b, m, alt))(0, 0);
        if (la != lb) ++model_changes;
        if (++examples == 8) break;
    }

    Matrix uniform = Matrix::Zero(7, vocab);
    std::vector<int> targets{0, 3, 99, 255, 256, 257, 258};
    std::vector<std::uint8_t> all(7, 1);
    double uniform_gap = std::abs(compute_nll(uniform, targets, all) - std::log(static_cast<double>(vocab)));
    bool pass = loss_changes == 0 && grad_leaks == 0 && dead_rows == 0 && model_changes == 0 && examples > 0 &&
                uniform_gap < 1e-6;
    return {pass, "200 logit trials: " + std::to_string(loss_changes) + " loss changes, " + std::to_string(grad_leaks) +
                      " masked rows with gradient; " + std::to_string(examples) + " model examples: " +
                      std::to_string(model_changes) + " changes; |nll(uniform) - ln V| " + fmt(uniform_gap, 9)};
}

// ---------------------------------------------------------------------------
// 4. Fuzzy matching

std::string mutate(std::string s, Rng& rng) {
    static const std::string pool = "abcdefghijklmnopqrstuvwxyz  -'.";
    std::uniform_int_distribution<int> edits(1, 3), kind(0, 5), ch(0, static_cast<int>(pool.size()) - 1);
    for (int e = edits(rng); e > 0; --e) {
        std::size_t pos = s.empty() ? 0 : rng() % (s.size() + 1);
        switch (kind(rng)) {
        case 0:
            if (pos < s.size()) s.erase(pos, 1);
            break;
        case 1: s.insert(pos, 1, pool[ch(rng)]); break;
        case 2:
            if (pos < s.size()) s[pos] = pool[ch(rng)];
            break;
        case 3:
            if (pos + 1 < s.size()) std::swap(s[pos], s[pos + 1]);
            break;
        case 4:
            for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            break;
        default: s = "  " + s + " "; break;
        }
    }
    return s;
}

Outcome fuzzy() {
    Rng rng(404);
    static const std::string alphabet = "abcab c-d .A";
    std::uniform_int_distribution<int> len(0, 24), pick(0, static_cast<int>(alphabet.size()) - 1), coin(0, 1);
    int ratio_mismatch = 0;
    for (int i = 0; i < 1000; ++i) {
        std::string a, b;
        for (int k = len(rng); k > 0; --k) a += alphabet[pick(rng)];
        if (coin(rng)) {
            b = mutate(a, rng);
        } else {
            for (int k = len(rng); k > 0; --k) b += alphabet[pick(rng)];
        }
        if (similarity_ratio(a, b) != oracle::ratio(a, b)) ++ratio_mismatch;
    }

    SynthSpec spec;
    Ontology ont = generate_schema(spec).ontology();
    std::vector<std::pair<std::string, const OntologySlot*>> slots;
    for (const auto& [name, s] : ont.slots()) slots.emplace_back(name, &s);
    const int thresholds[] = {50, 70, kDefaultFuzzyThreshold, 90};
    int violations = 0, snapped = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto& [slot, s] = slots[rng() % slots.size()];
        std::string value = mutate(s->values[rng() % s->values.size()], rng);
        int th = thresholds[rng() % 4];
        std::string out = fuzzy_normalize(slot, value, ont, th);
        bool member = std::find(s->values.begin(), s->values.end(), out) != s->values.end();
        if (out != value && !member) ++violations;
        if (fuzzy_normalize(slot, out, ont, th) != out) ++violations;
        int best = 0;
        for (const auto& cand : s->values) best = std::max(best, oracle::ratio(value, cand));
        if (out != value) {
            ++snapped;
            if (oracle::ratio(value, out) != best || best < th) ++violations;
        } else if (!member && best >= th) {
            ++violations;
        }
    }
    bool pass = ratio_mismatch == 0 && violations == 0;
    return {pass, "1000 ratio pairs: " + std::to_string(ratio_mismatch) + " mismatches; 1000 fuzzed values (" +
                      std::to_string(snapped) + " snapped): " + std::to_string(violations) + " property violations"};
}

// ---------------------------------------------------------------------------
// 5. Metrics

Outcome metrics() {
    Rng rng(505);
    int mismatches = 0, identity = 0;
    for (int trial = 0; trial < 200; ++trial) {
        MiniCorpus m = random_mini_corpus(rng);
        EvalReport r = evaluate(m.preds, m.gold);
        oracle::Tally o = oracle::score(m.oracle_preds, m.oracle_golds);
        bool same = r.jga == static_cast<double>(o.exact) / static_cast<double>(o.turns) &&
                    r.counts.gold_slots == o.gold && r.counts.correct == o.correct && r.counts.missing == o.missing &&
                    r.counts.spurious == o.spurious && r.counts.wrong_value == o.wrong;
        if (o.gold > 0)
            same = same && r.ser.defined &&
                   r.ser.value == static_cast<double>(o.missing + o.spurious + o.wrong) / static_cast<double>(o.gold);
        if (!same) ++mismatches;
        if (r.counts.correct + r.counts.missing + r.counts.wrong_value != r.counts.gold_slots) ++identity;
    }
    PinnedCorpus pc = pinned();
    PinnedExpectation want;
    EvalReport r = evaluate(pc.preds, pc.gold);
    bool pinned_ok = r.jga == want.jga && r.ser.value == want.ser && r.counts.gold_slots == want.gold &&
                     r.counts.correct == want.correct && r.counts.missing == want.missing &&
                     r.counts.spurious == want.spurious && r.counts.wrong_value == want.wrong;
    bool pass = mismatches == 0 && identity == 0 && pinned_ok;
    return {pass, "200 random corpora: " + std::to_string(mismatches) + " oracle mismatches, " +
                      std::to_string(identity) + " accounting failures; pinned corpus JGA " + fmt(r.jga) + " SER " +
                      fmt(r.ser.value) + (pinned_ok ? " as pinned" : " NOT as pinned")};
}

// ---------------------------------------------------------------------------
// Shared desk-scale setup for 6 and 7

RunConfig desk() { return RunConfig::desk_defaults(); }

const ToyCausalLm& shared_lm() {
    static std::optional<ToyCausalLm> lm;
    if (!lm) {
        RunConfig c = desk();
        PipelineData d = make_pipeline_data(c);
        TrainStats st;
        lm = run_lm_pretrain(c, d, &st);
        std::cerr << "  " << stats_line("lm_pretrain", st) << std::endl;
    }
    return *lm;
}

ModelConfig front_config(const RunConfig& c) {
    ModelConfig m = c.model;
    m.lora.reset();
    return m;
}

double jga_of(const SpokenDstModel& m, const DialogueCorpus& corpus, HistoryMode hm) {
    return evaluate(run_corpus(m, corpus, hm), corpus).jga;
}

// ---------------------------------------------------------------------------
// 6. End-to-end overfit

Outcome overfit() {
    RunConfig c = desk();
    PipelineData d = make_pipeline_data(c);
    SpokenDstModel m(front_config(c));
    m.set_lm(shared_lm());
    TrainStats s1 = run_stage1(m, c, d);
    std::cerr << "  " << stats_line("stage1", s1) << std::endl;
    StageConfig s2 = c.stage2;
    s2.max_steps = 1000;
    s2.early_stop_patience = 1000;
    auto train = dst_examples(d.train, s2);
    // Checkpoint selection on the training set itself: the goal is to fit it.
    TrainStats st = train_stage2(m, train, train, s2);
    std::cerr << "  " << stats_line("stage2", st) << std::endl;
    double jga = jga_of(m, d.train, c.inference);
    std::size_t utterances = asr_examples(d.asr).size();
    return {jga >= 0.90, "train JGA (self_decoded) " + fmt(jga) + " on " + std::to_string(d.train.dialogues.size()) +
                             " dialogues; stage 1 on " + std::to_string(utterances) + " utterances stopped at step " +
                             std::to_string(s1.steps) + "; stage 2 ran " + std::to_string(st.steps) + " steps"};
}

// ---------------------------------------------------------------------------
// 7. Qualitative orderings

struct SeedScores {
    double base = 0, base_oracle = 0, no_asr_init = 0, connector_only = 0, user_only = 0;
};

SeedScores seed_run(int seed) {
    RunConfig c = desk();
    c.data.synth.seed = 1000 + static_cast<std::uint64_t>(seed);
    c.data.synth.schema_seed = desk().data.synth.effective_schema_seed();
    c.data.asr_seed = 2000 + static_cast<std::uint64_t>(seed);
    c.model.connector_seed = static_cast<std::uint64_t>(seed);
    c.stage1.seed = c.stage2.seed = static_cast<std::uint64_t>(seed);
    c.stage2.lora->seed = static_cast<std::uint64_t>(seed);
    PipelineData d = make_pipeline_data(c);

    std::string ckpt = (std::filesystem::temp_directory_path() / ("sdst_acceptance_s1_" + std::to_string(seed))).string();
    {
        SpokenDstModel m(front_config(c));
        m.set_lm(shared_lm());
        run_stage1(m, c, d);
        save_checkpoint(ckpt, m, CheckpointInfo{"asr_pretrain", 0, c.seed, c, config_hash(c)});
    }
    auto train_variant = [&](StageConfig s2) {
        SpokenDstModel m = load_checkpoint(ckpt).model;
        run_stage2(m, s2, d);
        return m;
    };
    SeedScores s;
    HistoryMode hm = c.inference;
    {
        SpokenDstModel m = train_variant(c.stage2);
        s.base = jga_of(m, d.dev, hm);
        HistoryMode oracle_hm = hm;
        oracle_hm.mode = HistorySource::oracle_user;
        s.base_oracle = jga_of(m, d.dev, oracle_hm);
    }
    {
        StageConfig v = c.stage2;
        v.no_asr_init = true;
        s.no_asr_init = jga_of(train_variant(v), d.dev, hm);
    }
    {
        StageConfig v = c.stage2;
        v.lora.reset();
        s.connector_only = jga_of(train_variant(v), d.dev, hm);
    }
    {
        StageConfig v = c.stage2;
        v.include_agent = false;
        HistoryMode user_hm = hm;
        user_hm.include_agent = false;
        s.user_only = jga_of(train_variant(v), d.dev, user_hm);
    }
    std::filesystem::remove_all(ckpt);
    std::cerr << "  seed " << seed << ": base " << fmt(s.base) << ", oracle_user " << fmt(s.base_oracle)
              << ", no-asr-init " << fmt(s.no_asr_init) << ", connector-only " << fmt(s.connector_only)
              << ", user-only " << fmt(s.user_only) << std::endl;
    return s;
}

Outcome orderings() {
    std::vector<double> base, oracle_user, no_init, conn, user;
    for (int seed = 1; seed <= 3; ++seed) {
        SeedScores s = seed_run(seed);
        base.push_back(s.base);
        oracle_user.push_back(s.base_oracle);
        no_init.push_back(s.no_asr_init);
        conn.push_back(s.connector_only);
        user.push_back(s.user_only);
    }
    double b = median3(base);
    bool a_ok = b >= median3(no_init), b_ok = b >= median3(conn), c_ok = b >= median3(user),
         d_ok = median3(oracle_user) >= b;
    auto mark = [](bool ok) { return ok ? "ok" : "VIOLATED"; };
    std::string detail = "median dev JGA: stage1-init " + fmt(b) + " vs no-asr-init " + fmt(median3(no_init)) + " (" +
                         mark(a_ok) + "); LoRA " + fmt(b) + " vs connector-only " + fmt(median3(conn)) + " (" +
                         mark(b_ok) + "); with agent " + fmt(b) + " vs user-only " + fmt(median3(user)) + " (" +
                         mark(c_ok) + "); oracle_user " + fmt(median3(oracle_user)) + " vs self_decoded " + fmt(b) +
                         " (" + mark(d_ok) + ")";
    return {a_ok && b_ok && c_ok && d_ok, detail};
}

// ---------------------------------------------------------------------------
// 8. Robustness of decoding against malformed output

class FuzzedModel final : public TurnModel {
public:
    explicit FuzzedModel(std::uint64_t seed) : rng_(seed) {}

    std::string complete(const Utterance*, const std::string&, int) const override {
        std::lock_guard lock(mu_);
        ++calls_;
        std::uniform_int_distribution<int> kind(0, 9);
        std::string good = json_quote(valid_transcript_).substr(1) + ", " + serialize_state(valid_state_) + "}";
        switch (kind(rng_)) {
        case 0: return good.substr(0, rng_() % (good.size() + 1));
        case 1: {
            std::string s = good;
            for (int i = 0; i < 3; ++i) s[rng_() % s.size()] = static_cast<char>(rng_() % 256);
            return s;
        }
        case 2: {
            std::string s = good;
            static const char noise[] = "{}[]\",:\\";
            for (int i = 0; i < 4; ++i) s.insert(rng_() % (s.size() + 1), 1, noise[rng_() % 8]);
            return s;
        }
        case 3: {
            std::string s;
            for (int i = static_cast<int>(rng_() % 60); i > 0; --i) s += static_cast<char>(rng_() % 256);
            return s;
        }
        case 4: return "";
        case 5: throw std::runtime_error("decoder failure");
        case 6: return "x\", \"domains\": [\"hotel\"], \"slots\": {\"taxi-leave\": \"5pm\"}}";
        case 7: return "x\", \"domains\": [\"a\", \"a\"], \"slots\": {}, \"domains\": 3}";
        case 8: return "x\", \"domains\": [], \"slots\": {\"a-b\": 7}}";
        default: return good;
        }
    }

    void set_target(const DialogueTurn& t) {
        valid_transcript_ = t.transcript;
        valid_state_ = t.state;
    }

    long calls() const { return calls_; }

private:
    mutable std::mutex mu_;
    mutable Rng rng_;
    mutable long calls_ = 0;
    std::string valid_transcript_ = "hello";
    DialogueState valid_state_;
};

Outcome robustness() {
    SynthSpec spec;
    spec.n_dialogues = 400;
    DialogueCorpus corpus = generate_synthetic(spec);
    FuzzedModel model(808);
    FeatureStore store;
    HistoryMode hm;
    long turns = 0, crashes = 0, misaligned = 0, invalid = 0, bad_fallback = 0, failures = 0;
    for (const auto& d : corpus.dialogues) {
        if (model.calls() >= 1000) break;
        model.set_target(d.turns.back());
        std::vector<TurnPrediction> preds;
        try {
            preds = run_dialogue(model, d, hm, store);
        } catch (const std::exception&) {
            ++crashes;
            continue;
        }
        if (preds.size() != d.turns.size()) ++misaligned;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const auto& p = preds[i];
            ++turns;
            if (p.dialogue_id != d.id || p.turn_id != d.turns[i].turn_id) ++misaligned;
            if (!state_violation(p.state).empty()) ++invalid;
            if (!p.parse_ok) {
                ++failures;
                const DialogueState expect = i ? preds[i - 1].state : DialogueState{};
                if (p.state.domains != expect.domains || p.state.slots != expect.slots) ++bad_fallback;
            }
            ParseResult again = parse_turn_output(p.raw_output);
            if (again.ok() != p.parse_ok && !p.raw_output.empty()) ++bad_fallback;
        }
    }
    bool pass = turns >= 1000 && crashes == 0 && misaligned == 0 && invalid == 0 && bad_fallback == 0;
    return {pass, std::to_string(turns) + " fuzzed outputs (" + std::to_string(failures) + " unparseable): " +
                      std::to_string(crashes) + " crashes, " + std::to_string(misaligned) + " misaligned, " +
                      std::to_string(invalid) + " invalid states, " + std::to_string(bad_fallback) +
                      " wrong fallbacks"};
}

// ---------------------------------------------------------------------------
// 9. Determinism

RunConfig determinism_config() {
    RunConfig c = RunConfig::desk_defaults();
    c = apply_overrides(c, {"model.lm.embed_dim=64", "model.lm.layers=2", "model.lm.heads=4", "model.lm.ffn_dim=128",
                            "model.connector.hidden=64", "model.connector.layers=1", "lm_pretrain.max_steps=60",
                            "stage1.max_steps=60", "stage2.max_steps=60", "lm_pretrain.eval_interval=20",
                            "stage1.eval_interval=20", "stage2.eval_interval=20", "data.synth.n_dialogues=12",
                            "data.dev_dialogues=6", "data.asr_dialogues=12", "data.lm_dialogues=30",
                            "inference.max_new_tokens=200", "workers=2"});
    return c;
}

Outcome determinism() {
    RunConfig c = determinism_config();
    std::string a = run_pipeline(c).report.dump(), b = run_pipeline(c).report.dump();
    std::string ha = hex64(fnv1a(a)), hb = hex64(fnv1a(b));
    return {a == b, "report hashes " + ha + " and " + hb + " (config " + config_hash(c) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
    struct Criterion {
        int id;
        const char* name;
        Outcome (*run)();
    };
    const Criterion all[] = {
        {1, "shape/downsampling", shapes},  {2, "lora", lora},         {3, "loss masking", masking},
        {4, "fuzzy matching", fuzzy},       {5, "metrics oracle", metrics}, {6, "end-to-end overfit", overfit},
        {7, "qualitative orderings", orderings}, {8, "robustness", robustness}, {9, "determinism", determinism},
    };
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!selected.empty() && !selected.contains(c.id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
                  << fmt(secs, 1) << "s)" << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
