#pragma once

// Frame stacking and the transformer connector that maps speech-encoder
// frames into the language model's embedding space as a soft prompt.

#include "sdst/layers.hpp"

#include "json.hpp"

namespace sdst {

struct ConnectorConfig {
    int stack_factor = 6;
    int hidden = 1024;
    int layers = 2;
    int heads = 16;
    int ffn_dim = 4096;
    int encoder_dim = 0;
    int lm_dim = 0;
    int max_positions = 512;  // longest stacked sequence with a learned position

    void validate() const {
        auto positive = [](int v, const char* field) {
            if (v < 1) throw std::invalid_argument(std::string("connector.") + field + " must be positive");
        };
        positive(stack_factor, "stack_factor");
        positive(hidden, "hidden");
        positive(layers, "layers");
        positive(heads, "heads");
        positive(ffn_dim, "ffn_dim");
        positive(encoder_dim, "encoder_dim");
        positive(lm_dim, "lm_dim");
        positive(max_positions, "max_positions");
        if (hidden % heads != 0) throw std::invalid_argument("connector.hidden must be divisible by connector.heads");
    }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ConnectorConfig, stack_factor, hidden, layers, heads, ffn_dim,
                                                encoder_dim, lm_dim, max_positions)

struct SoftPromptSequence {
    Matrix embeddings;  // [ceil(T / stack_factor) x lm_dim]
    int source_length = 0;
};

inline Eigen::Index stacked_length(Eigen::Index frames, int k) { return (frames + k - 1) / k; }

/// Row i of the result concatenates frames i*k .. i*k+k-1; a partial final
/// group is zero-padded.
inline Matrix stack_downsample(const FeatureSequence& frames, int k) {
    if (k < 1) throw std::invalid_argument("stack factor must be >= 1");
    if (frames.rows() == 0) throw std::invalid_argument("empty feature sequence");
    if (!frames.allFinite()) throw std::invalid_argument("feature sequence contains non-finite values");
    Tape t;
    Var out = ops::stack_frames(t, t.constant(frames), k);
    return t.value(out);
}

class Connector {
public:
    Connector() = default;
    Connector(const ConnectorConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg_.validate();
        in_ = Linear("connector.in", cfg.stack_factor * cfg.encoder_dim, cfg.hidden, true, rng);
        positions_ = gaussian_param("connector.positions", cfg.max_positions, cfg.hidden, 0.02f, rng);
        BlockConfig bc{cfg.hidden, cfg.heads, cfg.ffn_dim, false};
        for (int i = 0; i < cfg.layers; ++i)
            blocks_.emplace_back("connector.layers." + std::to_string(i), bc, rng);
        norm_ = LayerNorm("connector.norm", cfg.hidden);
        out_ = Linear("connector.out", cfg.hidden, cfg.lm_dim, true, rng);
    }

    const ConnectorConfig& config() const { return cfg_; }

    Var forward(Tape& t, Var frames) const {
        const Matrix& fv = t.value(frames);
        if (fv.cols() != cfg_.encoder_dim)
            throw std::invalid_argument("connector: expected " + std::to_string(cfg_.encoder_dim) +
                                        "-dim frames, got " + std::to_string(fv.cols()));
        Var x = ops::stack_frames(t, frames, cfg_.stack_factor);
        Eigen::Index len = t.value(x).rows();
        if (len > cfg_.max_positions)
            throw std::invalid_argument("connector: stacked length " + std::to_string(len) + " exceeds max_positions " +
                                        std::to_string(cfg_.max_positions));
        Var h = in_.forward(t, x);
        h = ops::add(t, h, ops::slice_rows(t, t.param(positions_), 0, len));
        for (const auto& b : blocks_) h = b.forward(t, h);
        return out_.forward(t, norm_.forward(t, h));
    }

    SoftPromptSequence forward(const FeatureSequence& frames) const {
        Tape t;
        Var out = forward(t, t.constant(frames));
        return {t.value(out), static_cast<int>(frames.rows())};
    }

    ParameterList parameters() const {
        ParameterList ps = in_.parameters();
        ps.push_back(positions_);
        for (const auto& b : blocks_)
            for (const auto& p : b.parameters()) ps.push_back(p);
        for (const auto& p : norm_.parameters()) ps.push_back(p);
        for (const auto& p : out_.parameters()) ps.push_back(p);
        return ps;
    }

private:
    ConnectorConfig cfg_;
    Linear in_;
    ParamPtr positions_;
    std::vector<TransformerBlock> blocks_;
    LayerNorm norm_;
    Linear out_;
};

}  // namespace sdst
