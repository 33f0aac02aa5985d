#pragma once

// Building blocks shared by the connector and the toy language model:
// layer norm, linear projections with optional low-rank adapters, and a
// pre-norm transformer block with an incremental (key/value cached) path.

#include "sdst/autograd.hpp"

#include <optional>

namespace sdst {

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(const std::string& name, int dim)
        : gain_(ones_param(name + ".gain", 1, dim)), bias_(zeros_param(name + ".bias", 1, dim)) {}

    Var forward(Tape& t, Var x) const { return ops::layer_norm(t, x, t.param(gain_), t.param(bias_)); }

    Matrix forward(const Matrix& x) const {
        Matrix out(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            float mean = x.row(i).mean();
            RowVector c = x.row(i).array() - mean;
            float inv = 1.0f / std::sqrt(c.squaredNorm() / static_cast<float>(x.cols()) + ops::kLayerNormEps);
            out.row(i) = (c.array() * inv * gain_->value.row(0).array() + bias_->value.row(0).array()).matrix();
        }
        return out;
    }

    ParameterList parameters() const { return {gain_, bias_}; }

private:
    ParamPtr gain_, bias_;
};

/// Low-rank factors attached to one projection: delta = (alpha / rank) * A * B.
struct LoraFactors {
    ParamPtr a;  // [d_in x rank]
    ParamPtr b;  // [rank x d_out]
    int rank = 0;
    float alpha = 0.0f;
    float scaling() const { return alpha / static_cast<float>(rank); }
};

/// y = x W (+ bias), with an optional low-rank adapter added on top.
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in, int out, bool with_bias, Rng& rng, float init_std = 0.02f)
        : name_(name), weight_(gaussian_param(name + ".weight", in, out, init_std, rng)) {
        if (with_bias) bias_ = zeros_param(name + ".bias", 1, out);
    }

    int in_dim() const { return static_cast<int>(weight_->value.rows()); }
    int out_dim() const { return static_cast<int>(weight_->value.cols()); }
    const std::string& name() const { return name_; }
    const ParamPtr& weight() const { return weight_; }
    const ParamPtr& bias() const { return bias_; }
    const std::optional<LoraFactors>& lora() const { return lora_; }

    Var forward(Tape& t, Var x) const {
        Var y = ops::matmul(t, x, t.param(weight_));
        if (bias_) y = ops::add_row(t, y, t.param(bias_));
        if (lora_) {
            Var xa = ops::matmul(t, x, t.param(lora_->a));
            Var d = ops::matmul(t, xa, t.param(lora_->b));
            y = ops::add(t, y, ops::scale(t, d, lora_->scaling()));
        }
        return y;
    }

    Matrix forward(const Matrix& x) const {
        Matrix y(x.rows(), out_dim());
        y.noalias() = x * weight_->value;
        if (bias_) y.rowwise() += bias_->value.row(0);
        if (lora_) {
            Matrix xa(x.rows(), lora_->rank);
            xa.noalias() = x * lora_->a->value;
            y.noalias() += lora_->scaling() * (xa * lora_->b->value);
        }
        return y;
    }

    /// Attaches zero-initialised B and Gaussian A; the base projection is frozen.
    void attach_lora(int rank, float alpha, Rng& rng) {
        if (lora_) throw std::logic_error(name_ + ": adapter already attached");
        if (rank < 1 || rank > std::min(in_dim(), out_dim()))
            throw std::invalid_argument(name_ + ": LoRA rank " + std::to_string(rank) + " exceeds matrix dimension " +
                                        std::to_string(std::min(in_dim(), out_dim())));
        LoraFactors f;
        f.a = gaussian_param(name_ + ".lora_a", in_dim(), rank, 0.02f, rng);
        f.b = zeros_param(name_ + ".lora_b", rank, out_dim());
        f.rank = rank;
        f.alpha = alpha;
        lora_ = std::move(f);
        weight_->trainable = false;
        if (bias_) bias_->trainable = false;
    }

    /// Folds the adapter into the weight: W' = W + (alpha / r) A B.
    void merge_lora() {
        if (!lora_) throw std::logic_error(name_ + ": no adapter to merge");
        weight_->value.noalias() += lora_->scaling() * (lora_->a->value * lora_->b->value);
        lora_.reset();
    }

    /// Restores adapter factors loaded from a checkpoint.
    void set_lora(LoraFactors f) { lora_ = std::move(f); }

    ParameterList parameters() const {
        ParameterList ps{weight_};
        if (bias_) ps.push_back(bias_);
        return ps;
    }

    ParameterList adapter_parameters() const {
        if (!lora_) return {};
        return {lora_->a, lora_->b};
    }

    Linear clone() const {
        Linear c;
        c.name_ = name_;
        c.weight_ = make_param(weight_->name, weight_->value);
        c.weight_->trainable = weight_->trainable;
        if (bias_) {
            c.bias_ = make_param(bias_->name, bias_->value);
            c.bias_->trainable = bias_->trainable;
        }
        if (lora_) {
            LoraFactors f = *lora_;
            f.a = make_param(lora_->a->name, lora_->a->value);
            f.b = make_param(lora_->b->name, lora_->b->value);
            f.a->trainable = lora_->a->trainable;
            f.b->trainable = lora_->b->trainable;
            c.lora_ = std::move(f);
        }
        return c;
    }

private:
    std::string name_;
    ParamPtr weight_;
    ParamPtr bias_;
    std::optional<LoraFactors> lora_;
};

/// y = x W + (alpha / r) x A B, checked for conformable shapes.
inline Matrix lora_site_forward(const Matrix& x, const Matrix& w, const Matrix& a, const Matrix& b, float alpha,
                                int r) {
    if (x.cols() != w.rows() || a.rows() != w.rows() || a.cols() != r || b.rows() != r || b.cols() != w.cols())
        throw std::invalid_argument("lora_site_forward: shape mismatch");
    if (r < 1) throw std::invalid_argument("lora_site_forward: rank must be >= 1");
    Matrix y(x.rows(), w.cols());
    y.noalias() = x * w;
    Matrix xa(x.rows(), r);
    xa.noalias() = x * a;
    y.noalias() += (alpha / static_cast<float>(r)) * (xa * b);
    return y;
}

/// Key/value rows of one attention layer for positions decoded so far.
struct KvCache {
    Matrix keys;
    Matrix values;
};

struct BlockConfig {
    int dim = 128;
    int heads = 4;
    int ffn_dim = 512;
    bool causal = true;
};

/// Pre-norm transformer layer: x + Attn(LN(x)), then x + FFN(LN(x)).
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(const std::string& name, const BlockConfig& cfg, Rng& rng)
        : cfg_(cfg),
          ln1_(name + ".ln1", cfg.dim),
          q_(name + ".attn.q", cfg.dim, cfg.dim, false, rng),
          k_(name + ".attn.k", cfg.dim, cfg.dim, false, rng),
          v_(name + ".attn.v", cfg.dim, cfg.dim, false, rng),
          o_(name + ".attn.o", cfg.dim, cfg.dim, false, rng),
          ln2_(name + ".ln2", cfg.dim),
          up_(name + ".ffn.up", cfg.dim, cfg.ffn_dim, true, rng),
          down_(name + ".ffn.down", cfg.ffn_dim, cfg.dim, true, rng) {
        if (cfg.heads < 1 || cfg.dim % cfg.heads != 0)
            throw std::invalid_argument(name + ": width " + std::to_string(cfg.dim) + " not divisible by " +
                                        std::to_string(cfg.heads) + " heads");
    }

    Var forward(Tape& t, Var x) const {
        Var h = ln1_.forward(t, x);
        Var a = ops::attention(t, q_.forward(t, h), k_.forward(t, h), v_.forward(t, h), cfg_.heads, cfg_.causal);
        x = ops::add(t, x, o_.forward(t, a));
        Var h2 = ln2_.forward(t, x);
        Var f = down_.forward(t, ops::gelu(t, up_.forward(t, h2)));
        return ops::add(t, x, f);
    }

    /// Processes new positions appended after those already in `cache`.
    Matrix forward_cached(const Matrix& x, KvCache& cache) const {
        Matrix h = ln1_.forward(x);
        Matrix q = q_.forward(h);
        Matrix k = k_.forward(h);
        Matrix v = v_.forward(h);
        Eigen::Index past = cache.keys.rows();
        Eigen::Index n = x.rows();
        Matrix keys(past + n, cfg_.dim), values(past + n, cfg_.dim);
        if (past > 0) {
            keys.topRows(past) = cache.keys;
            values.topRows(past) = cache.values;
        }
        keys.bottomRows(n) = k;
        values.bottomRows(n) = v;
        cache.keys = std::move(keys);
        cache.values = std::move(values);

        Eigen::Index dh = cfg_.dim / cfg_.heads;
        float sc = 1.0f / std::sqrt(static_cast<float>(dh));
        Matrix att(n, cfg_.dim);
        for (int hd = 0; hd < cfg_.heads; ++hd) {
            Matrix s(n, past + n);
            s.noalias() = q.middleCols(hd * dh, dh) * cache.keys.middleCols(hd * dh, dh).transpose();
            s *= sc;
            for (Eigen::Index i = 0; i < n; ++i) {
                Eigen::Index limit = cfg_.causal ? past + i + 1 : past + n;
                float mx = s.row(i).head(limit).maxCoeff();
                float sum = 0.0f;
                for (Eigen::Index j = 0; j < limit; ++j) {
                    float e = std::exp(s(i, j) - mx);
                    s(i, j) = e;
                    sum += e;
                }
                s.row(i).head(limit) /= sum;
                for (Eigen::Index j = limit; j < past + n; ++j) s(i, j) = 0.0f;
            }
            att.middleCols(hd * dh, dh).noalias() = s * cache.values.middleCols(hd * dh, dh);
        }
        Matrix out = x + o_.forward(att);
        Matrix h2 = ln2_.forward(out);
        Matrix u = up_.forward(h2);
        constexpr float k0 = 0.7978845608028654f, k1 = 0.044715f;
        u = (0.5f * u.array() * (1.0f + ((u.array() + k1 * u.array().cube()) * k0).tanh())).matrix();
        return out + down_.forward(u);
    }

    /// Projection sites addressable by adapter injection.
    std::vector<std::pair<std::string, Linear*>> sites() {
        return {{"q_proj", &q_}, {"k_proj", &k_}, {"v_proj", &v_}, {"o_proj", &o_}, {"ffn_up", &up_}, {"ffn_down", &down_}};
    }
    std::vector<std::pair<std::string, const Linear*>> sites() const {
        return {{"q_proj", &q_}, {"k_proj", &k_}, {"v_proj", &v_}, {"o_proj", &o_}, {"ffn_up", &up_}, {"ffn_down", &down_}};
    }

    ParameterList parameters() const {
        ParameterList ps;
        for (const auto& p : ln1_.parameters()) ps.push_back(p);
        for (const auto* l : {&q_, &k_, &v_, &o_})
            for (const auto& p : l->parameters()) ps.push_back(p);
        for (const auto& p : ln2_.parameters()) ps.push_back(p);
        for (const auto* l : {&up_, &down_})
            for (const auto& p : l->parameters()) ps.push_back(p);
        return ps;
    }

    ParameterList adapter_parameters() const {
        ParameterList ps;
        for (const auto& [n, l] : sites())
            for (const auto& p : l->adapter_parameters()) ps.push_back(p);
        return ps;
    }

    TransformerBlock clone() const {
        TransformerBlock c;
        c.cfg_ = cfg_;
        c.ln1_ = clone_norm(ln1_);
        c.ln2_ = clone_norm(ln2_);
        c.q_ = q_.clone();
        c.k_ = k_.clone();
        c.v_ = v_.clone();
        c.o_ = o_.clone();
        c.up_ = up_.clone();
        c.down_ = down_.clone();
        return c;
    }

private:
    static LayerNorm clone_norm(const LayerNorm& src) {
        auto ps = src.parameters();
        std::string base = ps[0]->name.substr(0, ps[0]->name.size() - std::string(".gain").size());
        LayerNorm out(base, static_cast<int>(ps[0]->value.cols()));
        auto dst = out.parameters();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            dst[i]->value = ps[i]->value;
            dst[i]->trainable = ps[i]->trainable;
        }
        return out;
    }

    BlockConfig cfg_;
    LayerNorm ln1_;
    Linear q_, k_, v_, o_;
    LayerNorm ln2_;
    Linear up_, down_;
};

}  // namespace sdst
