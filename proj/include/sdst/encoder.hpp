#pragma once

// Speech encoder contract with a trainable toy encoder over synthetic symbol
// sequences and a frozen passthrough encoder over precomputed features.

#include "sdst/layers.hpp"

#include "json.hpp"

#include <array>
#include <memory>

namespace sdst {

/// Encoder input for one user turn: synthetic symbols or precomputed frames.
struct Utterance {
    std::vector<int> symbols;
    std::optional<FeatureSequence> features;

    bool empty() const { return symbols.empty() && (!features || features->rows() == 0); }
};

enum class EncoderKind { toy, precomputed };

NLOHMANN_JSON_SERIALIZE_ENUM(EncoderKind, {{EncoderKind::toy, "toy"}, {EncoderKind::precomputed, "precomputed"}})

struct EncoderSpec {
    EncoderKind kind = EncoderKind::toy;
    int output_dim = 16;
    double frame_rate = 50.0;  // informational only
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderSpec, kind, output_dim, frame_rate)

class SpeechEncoder {
public:
    virtual ~SpeechEncoder() = default;
    virtual EncoderSpec spec() const = 0;
    virtual Var encode(Tape& t, const Utterance& u) const = 0;
    virtual void set_trainable(bool flag) = 0;
    virtual bool trainable() const = 0;
    virtual ParameterList parameters() const = 0;

    FeatureSequence encode(const Utterance& u) const {
        Tape t;
        return t.value(encode(t, u));
    }
};

struct ToyEncoderConfig {
    int symbol_count = 48;
    int dim = 16;
    int expansion = 4;     // frames per symbol
    float jitter = 0.1f;   // amplitude of the additive sinusoid
    std::uint64_t seed = 1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ToyEncoderConfig, symbol_count, dim, expansion, jitter, seed)

/// Symbol embedding, upsampling by `expansion` with deterministic sinusoidal
/// jitter, then a width-3 convolutional mixer with a residual connection.
class ToyEncoder final : public SpeechEncoder {
public:
    explicit ToyEncoder(const ToyEncoderConfig& cfg) : cfg_(cfg) {
        if (cfg.symbol_count < 1 || cfg.dim < 1 || cfg.expansion < 1)
            throw std::invalid_argument("toy encoder: symbol_count, dim and expansion must be positive");
        Rng rng(cfg.seed);
        table_ = gaussian_param("encoder.embed", cfg.symbol_count, cfg.dim, 1.0f, rng);
        mixer_ = Linear("encoder.mixer", 3 * cfg.dim, cfg.dim, true, rng, 0.1f);
        std::uniform_real_distribution<float> phase(0.0f, 6.2831853f);
        phases_.resize(cfg.dim);
        for (auto& p : phases_) p = phase(rng);
    }

    const ToyEncoderConfig& config() const { return cfg_; }

    EncoderSpec spec() const override { return {EncoderKind::toy, cfg_.dim, 50.0}; }

    using SpeechEncoder::encode;
    Var encode(Tape& t, const Utterance& u) const override {
        if (u.symbols.empty()) throw std::invalid_argument("toy encoder: empty utterance");
        for (int s : u.symbols)
            if (s < 0 || s >= cfg_.symbol_count)
                throw std::out_of_range("toy encoder: symbol " + std::to_string(s) + " outside vocabulary");
        Var x = ops::gather_rows(t, t.param(table_), u.symbols);
        x = ops::repeat_rows(t, x, cfg_.expansion);
        x = ops::add(t, x, t.constant(jitter(static_cast<Eigen::Index>(u.symbols.size()) * cfg_.expansion)));
        std::array<Var, 3> taps{ops::shift_rows(t, x, -1), x, ops::shift_rows(t, x, 1)};
        Var mixed = ops::gelu(t, mixer_.forward(t, ops::concat_cols(t, taps)));
        return ops::add(t, x, mixed);
    }

    void set_trainable(bool flag) override { sdst::set_trainable(parameters(), flag); }
    bool trainable() const override { return table_->trainable; }

    ParameterList parameters() const override {
        ParameterList ps{table_};
        for (const auto& p : mixer_.parameters()) ps.push_back(p);
        return ps;
    }

private:
    Matrix jitter(Eigen::Index frames) const {
        Matrix j(frames, cfg_.dim);
        for (Eigen::Index t = 0; t < frames; ++t)
            for (int f = 0; f < cfg_.dim; ++f)
                j(t, f) = cfg_.jitter * std::sin(0.7f * static_cast<float>(t) * static_cast<float>(f + 1) /
                                                     static_cast<float>(cfg_.dim) +
                                                 phases_[f]);
        return j;
    }

    ToyEncoderConfig cfg_;
    ParamPtr table_;
    Linear mixer_;
    std::vector<float> phases_;
};

/// Stands in for a frozen pretrained encoder: returns the stored frames.
class PrecomputedEncoder final : public SpeechEncoder {
public:
    explicit PrecomputedEncoder(int output_dim) : dim_(output_dim) {
        if (output_dim < 1) throw std::invalid_argument("precomputed encoder: output_dim must be >= 1");
    }

    EncoderSpec spec() const override { return {EncoderKind::precomputed, dim_, 50.0}; }

    using SpeechEncoder::encode;
    Var encode(Tape& t, const Utterance& u) const override {
        if (!u.features || u.features->rows() == 0) throw std::invalid_argument("precomputed encoder: empty utterance");
        if (u.features->cols() != dim_)
            throw std::invalid_argument("precomputed encoder: expected " + std::to_string(dim_) + "-dim frames, got " +
                                        std::to_string(u.features->cols()));
        return t.constant(*u.features);
    }

    void set_trainable(bool flag) override {
        if (flag) throw std::logic_error("encoder not trainable");
    }
    bool trainable() const override { return false; }
    ParameterList parameters() const override { return {}; }

private:
    int dim_;
};

}  // namespace sdst
