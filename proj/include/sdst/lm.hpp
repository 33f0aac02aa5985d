#pragma once

// Causal language model contract, the toy byte-level transformer LM,
// soft-prefix conditioning, low-rank adapter injection/merging and greedy
// generation with a JSON-aware stop condition.

#include "sdst/connector.hpp"
#include "sdst/tokenizer.hpp"

#include <set>

namespace sdst {

struct LmSpec {
    int vocab_size = ByteTokenizer::kVocabSize;
    int embed_dim = 128;
    int layers = 4;
    int heads = 4;
    int ffn_dim = 512;
    int max_context = 1024;
    std::uint64_t seed = 1;

    void validate() const {
        if (vocab_size < 1 || embed_dim < 1 || layers < 1 || heads < 1 || ffn_dim < 1 || max_context < 1)
            throw std::invalid_argument("lm: all sizes must be positive");
        if (embed_dim % heads != 0) throw std::invalid_argument("lm.embed_dim must be divisible by lm.heads");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LmSpec, vocab_size, embed_dim, layers, heads, ffn_dim, max_context, seed)

inline const std::vector<std::string>& lora_site_names() {
    static const std::vector<std::string> names{"q_proj", "k_proj", "v_proj", "o_proj", "ffn_up", "ffn_down"};
    return names;
}

struct LoraConfig {
    int rank = 16;
    std::optional<float> alpha;  // defaults to 2 * rank
    std::vector<std::string> targets{"q_proj", "k_proj", "v_proj", "o_proj"};
    std::uint64_t seed = 1;

    float effective_alpha() const { return alpha.value_or(2.0f * static_cast<float>(rank)); }
};

inline void to_json(nlohmann::json& j, const LoraConfig& c) {
    j = nlohmann::json{{"rank", c.rank}, {"alpha", c.alpha ? nlohmann::json(*c.alpha) : nlohmann::json(nullptr)}, {"targets", c.targets}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, LoraConfig& c) {
    c = LoraConfig{};
    if (j.contains("rank")) j.at("rank").get_to(c.rank);
    if (j.contains("alpha") && !j.at("alpha").is_null()) c.alpha = j.at("alpha").get<float>();
    if (j.contains("targets")) j.at("targets").get_to(c.targets);
    if (j.contains("seed")) j.at("seed").get_to(c.seed);
}

/// Incremental decoding state over [prefix || tokens].
class DecodeSession {
public:
    virtual ~DecodeSession() = default;
    /// Logits predicting the next token.
    virtual const RowVector& next_logits() const = 0;
    virtual void append(int token) = 0;
    virtual int length() const = 0;
};

class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual const LmSpec& spec() const = 0;
    virtual std::unique_ptr<DecodeSession> start(const Matrix& prefix, std::span<const int> tokens) const = 0;
};

inline void check_context(const LmSpec& spec, Eigen::Index prefix_len, std::size_t token_len) {
    auto total = static_cast<long>(prefix_len) + static_cast<long>(token_len);
    if (total > spec.max_context)
        throw std::length_error("context overflow by " + std::to_string(total - spec.max_context) + " (prefix " +
                                std::to_string(prefix_len) + " + tokens " + std::to_string(token_len) +
                                " > max_context " + std::to_string(spec.max_context) + ")");
}

class ToyCausalLm;

class ToyDecodeSession final : public DecodeSession {
public:
    ToyDecodeSession(const ToyCausalLm& lm, const Matrix& prefix, std::span<const int> tokens);
    const RowVector& next_logits() const override { return logits_; }
    void append(int token) override;
    int length() const override { return length_; }

private:
    void run(const Matrix& embeddings);

    const ToyCausalLm& lm_;
    std::vector<KvCache> caches_;
    RowVector logits_;
    int length_ = 0;
};

/// Pre-norm causal transformer over bytes with learned absolute positions.
class ToyCausalLm final : public LanguageModel {
public:
    ToyCausalLm() = default;
    explicit ToyCausalLm(const LmSpec& spec) : spec_(spec) {
        spec_.validate();
        Rng rng(spec.seed);
        embed_ = gaussian_param("lm.embed", spec.vocab_size, spec.embed_dim, 0.02f, rng);
        positions_ = gaussian_param("lm.positions", spec.max_context, spec.embed_dim, 0.02f, rng);
        BlockConfig bc{spec.embed_dim, spec.heads, spec.ffn_dim, true};
        for (int i = 0; i < spec.layers; ++i) blocks_.emplace_back("lm.layers." + std::to_string(i), bc, rng);
        norm_ = LayerNorm("lm.norm", spec.embed_dim);
        head_ = Linear("lm.head", spec.embed_dim, spec.vocab_size, true, rng);
    }

    const LmSpec& spec() const override { return spec_; }

    /// Logits for the last prefix position (when the prefix is non-empty)
    /// followed by every token position: [(P > 0) + L] x vocab.
    Var forward(Tape& t, std::optional<Var> prefix, std::span<const int> tokens) const {
        Eigen::Index plen = prefix ? t.value(*prefix).rows() : 0;
        if (prefix && t.value(*prefix).cols() != spec_.embed_dim)
            throw std::invalid_argument("lm: soft prefix width " + std::to_string(t.value(*prefix).cols()) +
                                        " != embed_dim " + std::to_string(spec_.embed_dim));
        check_context(spec_, plen, tokens.size());
        if (plen == 0 && tokens.empty()) throw std::invalid_argument("lm: empty input");
        Var x;
        if (!tokens.empty()) {
            x = ops::gather_rows(t, t.param(embed_), tokens);
            if (plen > 0) x = ops::concat_rows(t, *prefix, x);
        } else {
            x = *prefix;
        }
        Eigen::Index total = t.value(x).rows();
        x = ops::add(t, x, ops::slice_rows(t, t.param(positions_), 0, total));
        for (const auto& b : blocks_) x = b.forward(t, x);
        Eigen::Index first = plen > 0 ? plen - 1 : 0;
        x = ops::slice_rows(t, x, first, total - first);
        return head_.forward(t, norm_.forward(t, x));
    }

    Matrix forward_with_prefix(const Matrix& prefix, std::span<const int> tokens) const {
        Tape t;
        std::optional<Var> p;
        if (prefix.rows() > 0) p = t.constant(prefix);
        return t.value(forward(t, p, tokens));
    }

    std::unique_ptr<DecodeSession> start(const Matrix& prefix, std::span<const int> tokens) const override {
        return std::make_unique<ToyDecodeSession>(*this, prefix, tokens);
    }

    /// Copy with adapters on every block's target sites; base weights frozen,
    /// only the adapter factors trainable.
    ToyCausalLm inject_lora(const LoraConfig& cfg) const {
        const auto& valid = lora_site_names();
        for (const auto& target : cfg.targets) {
            if (std::find(valid.begin(), valid.end(), target) == valid.end()) {
                std::string list;
                for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
                throw std::invalid_argument("unknown LoRA target site '" + target + "'; valid sites: " + list);
            }
        }
        if (has_adapters()) throw std::logic_error("lm already carries LoRA adapters");
        ToyCausalLm out = clone();
        set_trainable(out.parameters(), false);
        Rng rng(cfg.seed);
        for (auto& b : out.blocks_)
            for (auto& [name, site] : b.sites())
                if (std::find(cfg.targets.begin(), cfg.targets.end(), name) != cfg.targets.end())
                    site->attach_lora(cfg.rank, cfg.effective_alpha(), rng);
        return out;
    }

    /// Plain model with W' = W + (alpha / r) A B at every adapted site.
    ToyCausalLm merge_lora() const {
        if (!has_adapters()) throw std::logic_error("no LoRA adapters to merge");
        ToyCausalLm out = clone();
        for (auto& b : out.blocks_)
            for (auto& [name, site] : b.sites())
                if (site->lora()) site->merge_lora();
        return out;
    }

    bool has_adapters() const { return !adapter_parameters().empty(); }

    /// Base weights (never includes adapter factors).
    ParameterList parameters() const {
        ParameterList ps{embed_, positions_};
        for (const auto& b : blocks_)
            for (const auto& p : b.parameters()) ps.push_back(p);
        for (const auto& p : norm_.parameters()) ps.push_back(p);
        for (const auto& p : head_.parameters()) ps.push_back(p);
        return ps;
    }

    ParameterList adapter_parameters() const {
        ParameterList ps;
        for (const auto& b : blocks_)
            for (const auto& p : b.adapter_parameters()) ps.push_back(p);
        return ps;
    }

    /// Adapter sites in block order, for checkpoint restore.
    std::vector<Linear*> adapted_sites(const std::vector<std::string>& targets) {
        std::vector<Linear*> out;
        for (auto& b : blocks_)
            for (auto& [name, site] : b.sites())
                if (std::find(targets.begin(), targets.end(), name) != targets.end()) out.push_back(site);
        return out;
    }

    ToyCausalLm clone() const {
        ToyCausalLm c;
        c.spec_ = spec_;
        c.embed_ = make_param(embed_->name, embed_->value);
        c.embed_->trainable = embed_->trainable;
        c.positions_ = make_param(positions_->name, positions_->value);
        c.positions_->trainable = positions_->trainable;
        for (const auto& b : blocks_) c.blocks_.push_back(b.clone());
        c.norm_ = LayerNorm("lm.norm", spec_.embed_dim);
        auto src = norm_.parameters(), dst = c.norm_.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i]->value = src[i]->value;
            dst[i]->trainable = src[i]->trainable;
        }
        c.head_ = head_.clone();
        return c;
    }

private:
    friend class ToyDecodeSession;

    LmSpec spec_;
    ParamPtr embed_;
    ParamPtr positions_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm norm_;
    Linear head_;
};

inline ToyDecodeSession::ToyDecodeSession(const ToyCausalLm& lm, const Matrix& prefix, std::span<const int> tokens)
    : lm_(lm), caches_(lm.blocks_.size()) {
    const auto& spec = lm.spec_;
    if (prefix.rows() > 0 && prefix.cols() != spec.embed_dim)
        throw std::invalid_argument("lm: soft prefix width mismatch");
    check_context(spec, prefix.rows(), tokens.size());
    if (prefix.rows() == 0 && tokens.empty()) throw std::invalid_argument("lm: empty input");
    Matrix x(prefix.rows() + static_cast<Eigen::Index>(tokens.size()), spec.embed_dim);
    if (prefix.rows() > 0) x.topRows(prefix.rows()) = prefix;
    for (std::size_t i = 0; i < tokens.size(); ++i)
        x.row(prefix.rows() + static_cast<Eigen::Index>(i)) = lm.embed_->value.row(tokens[i]);
    run(x);
}

inline void ToyDecodeSession::append(int token) {
    check_context(lm_.spec_, length_, 1);
    if (token < 0 || token >= lm_.spec_.vocab_size) throw std::out_of_range("lm: token id out of range");
    run(lm_.embed_->value.row(token));
}

inline void ToyDecodeSession::run(const Matrix& embeddings) {
    Matrix x = embeddings + lm_.positions_->value.middleRows(length_, embeddings.rows());
    for (std::size_t i = 0; i < lm_.blocks_.size(); ++i) x = lm_.blocks_[i].forward_cached(x, caches_[i]);
    length_ += static_cast<int>(embeddings.rows());
    logits_ = lm_.head_.forward(lm_.norm_.forward(x.bottomRows(1)));
}

/// Tracks brace depth of a JSON text outside string literals.
class JsonBalanceTracker {
public:
    /// Feeds one byte; returns true when the outermost object has just closed.
    bool feed(char c) {
        if (in_string_) {
            if (escape_) escape_ = false;
            else if (c == '\\') escape_ = true;
            else if (c == '"') in_string_ = false;
            return false;
        }
        if (c == '"') in_string_ = true;
        else if (c == '{') {
            ++depth_;
            opened_ = true;
        } else if (c == '}') {
            --depth_;
            if (opened_ && depth_ == 0) return true;
        }
        return false;
    }
    int depth() const { return depth_; }

private:
    int depth_ = 0;
    bool opened_ = false;
    bool in_string_ = false;
    bool escape_ = false;
};

struct StopCondition {
    bool on_eos = true;
    bool on_balanced_json = true;
};

enum class StopReason { eos, balanced_json, max_new_tokens, context_full };

struct GenerationResult {
    std::vector<int> tokens;
    StopReason reason = StopReason::max_new_tokens;
    bool truncated() const { return reason == StopReason::max_new_tokens || reason == StopReason::context_full; }
};

inline int argmax(const RowVector& v) {
    Eigen::Index best = 0;
    v.maxCoeff(&best);
    return static_cast<int>(best);
}

/// Greedy decoding. Prompt bytes seed the brace tracker, so a continuation
/// that closes an object opened in the prompt stops generation.
inline GenerationResult generate(const LanguageModel& lm, const Matrix& prefix, std::span<const int> prompt,
                                 const StopCondition& stop, int max_new_tokens = 512) {
    GenerationResult out;
    if (max_new_tokens <= 0) return out;
    JsonBalanceTracker tracker;
    for (int id : prompt)
        if (id < 256) tracker.feed(static_cast<char>(id));
    auto session = lm.start(prefix, prompt);
    for (int i = 0; i < max_new_tokens; ++i) {
        int next = argmax(session->next_logits());
        if (stop.on_eos && next == ByteTokenizer::kEos) {
            out.reason = StopReason::eos;
            return out;
        }
        out.tokens.push_back(next);
        if (stop.on_balanced_json && next < 256 && tracker.feed(static_cast<char>(next))) {
            out.reason = StopReason::balanced_json;
            return out;
        }
        if (i + 1 == max_new_tokens) break;
        if (session->length() >= lm.spec().max_context) {
            out.reason = StopReason::context_full;
            return out;
        }
        session->append(next);
    }
    out.reason = StopReason::max_new_tokens;
    return out;
}

}  // namespace sdst
