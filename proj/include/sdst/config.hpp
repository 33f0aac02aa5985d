#pragma once

// Run configuration: one JSON document (comments allowed) merging model,
// stage, inference and data settings. Precedence, lowest first: built-in
// desk-scale defaults, the config file, then command-line overrides.

#include "sdst/inference.hpp"
#include "sdst/synth.hpp"
#include "sdst/training.hpp"

namespace sdst {

struct DataConfig {
    SynthSpec synth;                 // training dialogues
    int dev_dialogues = 20;
    int asr_dialogues = 67;          // stage-1 utterance pool (about 200 utterances)
    int lm_dialogues = 200;          // text-only LM pretraining dialogues
    std::uint64_t dev_seed = 8;
    std::uint64_t asr_seed = 9;
    std::uint64_t lm_seed = 101;
};

inline void to_json(nlohmann::json& j, const DataConfig& c) {
    j = nlohmann::json{{"synth", c.synth},           {"dev_dialogues", c.dev_dialogues},
                       {"asr_dialogues", c.asr_dialogues}, {"lm_dialogues", c.lm_dialogues},
                       {"dev_seed", c.dev_seed},     {"asr_seed", c.asr_seed},
                       {"lm_seed", c.lm_seed}};
}

inline void from_json(const nlohmann::json& j, DataConfig& c) {
    DataConfig d;
    if (j.contains("synth")) j.at("synth").get_to(d.synth);
    d.dev_dialogues = j.value("dev_dialogues", d.dev_dialogues);
    d.asr_dialogues = j.value("asr_dialogues", d.asr_dialogues);
    d.lm_dialogues = j.value("lm_dialogues", d.lm_dialogues);
    d.dev_seed = j.value("dev_seed", d.dev_seed);
    d.asr_seed = j.value("asr_seed", d.asr_seed);
    d.lm_seed = j.value("lm_seed", d.lm_seed);
    c = d;
}

struct RunConfig {
    std::uint64_t seed = 7;
    DataConfig data;
    ModelConfig model;
    StageConfig lm_pretrain = StageConfig::defaults(Stage::lm_pretrain);
    StageConfig stage1 = StageConfig::defaults(Stage::asr_pretrain);
    StageConfig stage2 = StageConfig::defaults(Stage::joint_dst);
    StageConfig final_ft = StageConfig::defaults(Stage::final_ft);
    HistoryMode inference;
    int fuzzy_threshold = kDefaultFuzzyThreshold;
    int workers = 1;

    /// Toy sizes that train on one CPU core in minutes. Stage batch sizes
    /// and rates are scaled down from the published ones accordingly.
    static RunConfig desk_defaults() {
        RunConfig c;
        c.model.toy_encoder.symbol_count = kSymbolCount;
        c.model.toy_encoder.expansion = 6;
        c.model.connector.hidden = 128;
        c.model.connector.heads = 4;
        c.model.connector.ffn_dim = 256;
        c.model.lm.max_context = 768;
        c.lm_pretrain.batch_size = 16;
        c.lm_pretrain.learning_rate = 1e-3;
        c.lm_pretrain.warmup_steps = 100;
        c.lm_pretrain.eval_interval = 100;
        c.lm_pretrain.max_steps = 600;
        c.stage1.batch_size = 16;
        c.stage1.learning_rate = 1e-3;
        c.stage1.warmup_steps = 50;
        c.stage1.eval_interval = 100;
        c.stage1.max_steps = 1500;
        c.stage2.batch_size = 8;
        c.stage2.learning_rate = 1e-3;
        c.stage2.warmup_steps = 50;
        c.stage2.eval_interval = 100;
        c.stage2.max_steps = 1500;
        c.final_ft.batch_size = 8;
        c.final_ft.learning_rate = 2e-4;
        c.inference.max_new_tokens = 320;
        return c;
    }

    void validate() const {
        ModelConfig m = model;
        m.resolve();
        lm_pretrain.validate();
        stage1.validate();
        stage2.validate();
        final_ft.validate();
        if (lm_pretrain.stage != Stage::lm_pretrain || stage1.stage != Stage::asr_pretrain ||
            stage2.stage != Stage::joint_dst || final_ft.stage != Stage::final_ft)
            throw std::invalid_argument("config: stage sections carry the wrong stage kind");
        if (fuzzy_threshold < 0 || fuzzy_threshold > 100)
            throw std::invalid_argument("config.fuzzy_threshold: must lie in [0, 100]");
        if (workers < 1) throw std::invalid_argument("config.workers: must be positive");
        if (data.synth.n_dialogues < 1 || data.dev_dialogues < 1 || data.asr_dialogues < 1 || data.lm_dialogues < 1)
            throw std::invalid_argument("config.data: dialogue counts must be positive");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"data", c.data},
                       {"model", c.model},
                       {"lm_pretrain", c.lm_pretrain},
                       {"stage1", c.stage1},
                       {"stage2", c.stage2},
                       {"final_ft", c.final_ft},
                       {"inference", c.inference},
                       {"fuzzy_threshold", c.fuzzy_threshold},
                       {"workers", c.workers}};
}

namespace detail {

/// Recursive object overlay; unlike merge-patch, explicit nulls are kept.
/// Keys the base does not know are rejected with their dotted path.
inline void overlay(nlohmann::json& into, const nlohmann::json& patch, const std::string& path) {
    for (const auto& [k, v] : patch.items()) {
        std::string at = path + "." + k;
        if (!into.contains(k)) throw std::invalid_argument(at + ": unknown field");
        if (v.is_object() && into[k].is_object()) overlay(into[k], v, at);
        else into[k] = v;
    }
}

}  // namespace detail

/// Overlays `j` onto `base`, reporting errors with the offending field path.
inline RunConfig merge_run_config(const RunConfig& base, const nlohmann::json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
    nlohmann::json merged = base;
    static const std::set<std::string> known{"seed",     "data",     "model",     "lm_pretrain",     "stage1",
                                             "stage2",   "final_ft", "inference", "fuzzy_threshold", "workers"};
    for (const auto& [k, v] : j.items()) {
        if (!known.contains(k)) throw std::invalid_argument("config." + k + ": unknown field");
        if (v.is_object() && merged[k].is_object()) detail::overlay(merged[k], v, "config." + k);
        else merged[k] = v;
    }
    RunConfig c;
    auto section = [&](const char* key, auto& field) {
        try {
            merged.at(key).get_to(field);
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(std::string("config.") + key + ": " + e.what());
        }
    };
    section("seed", c.seed);
    section("data", c.data);
    section("model", c.model);
    section("lm_pretrain", c.lm_pretrain);
    section("stage1", c.stage1);
    section("stage2", c.stage2);
    section("final_ft", c.final_ft);
    section("inference", c.inference);
    section("fuzzy_threshold", c.fuzzy_threshold);
    section("workers", c.workers);
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path, const RunConfig& base = RunConfig::desk_defaults()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument("config '" + path + "': " + e.what());
    }
    return merge_run_config(base, j);
}

/// Applies `dotted.path=value` overrides; values parse as JSON when they
/// can, otherwise they are taken as strings.
inline RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
    nlohmann::json patch = nlohmann::json::object();
    for (const auto& o : overrides) {
        auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + o + "': expected key=value");
        std::string key = o.substr(0, eq), raw = o.substr(eq + 1);
        nlohmann::json value;
        try {
            value = nlohmann::json::parse(raw);
        } catch (const nlohmann::json::exception&) {
            value = raw;
        }
        std::string pointer = "/" + key;
        std::replace(pointer.begin(), pointer.end(), '.', '/');
        patch[nlohmann::json::json_pointer(pointer)] = value;
    }
    return merge_run_config(base, patch);
}

/// Hash of everything that can change results; the worker count cannot.
inline std::string config_hash(const RunConfig& c) {
    nlohmann::json j = c;
    j.erase("workers");
    return hex64(fnv1a(j.dump()));
}

}  // namespace sdst
