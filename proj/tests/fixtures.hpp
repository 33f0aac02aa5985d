#pragma once

#include "sdst/model.hpp"
#include "sdst/synth.hpp"

namespace sdst::testing_support {

inline ModelConfig tiny_model() {
    ModelConfig c;
    c.toy_encoder.symbol_count = kSymbolCount;
    c.toy_encoder.dim = 8;
    c.toy_encoder.expansion = 6;
    c.connector.hidden = 32;
    c.connector.layers = 1;
    c.connector.heads = 2;
    c.connector.ffn_dim = 64;
    c.lm.embed_dim = 32;
    c.lm.layers = 1;
    c.lm.heads = 2;
    c.lm.ffn_dim = 64;
    c.lm.max_context = 512;
    return c;
}

inline DialogueCorpus tiny_corpus(int n = 3, std::uint64_t seed = 7) {
    SynthSpec s;
    s.seed = seed;
    s.schema_seed = 7;
    s.n_dialogues = n;
    return generate_synthetic(s);
}

}  // namespace sdst::testing_support
