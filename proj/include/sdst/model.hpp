#pragma once

// The assembled spoken DST model (speech encoder -> connector -> causal LM)
// and its checkpoint container.
//
// Checkpoint directory layout:
//   manifest.json   configs, training step, seeds, tokenizer, blob list
//   <module>.bin    "SDSTPARM", u32 version (1), u32 count, then per tensor
//                   u32 name_len, name, u32 rows, u32 cols, f32 LE row-major

#include "sdst/data_io.hpp"
#include "sdst/lm.hpp"

namespace sdst {

struct ModelConfig {
    EncoderSpec encoder;
    ToyEncoderConfig toy_encoder;
    ConnectorConfig connector;
    LmSpec lm;
    std::optional<LoraConfig> lora;
    std::uint64_t connector_seed = 1;

    /// Fills derived widths and validates the combination.
    void resolve() {
        if (encoder.kind == EncoderKind::toy) encoder.output_dim = toy_encoder.dim;
        connector.encoder_dim = encoder.output_dim;
        connector.lm_dim = lm.embed_dim;
        connector.validate();
        lm.validate();
        if (lora && lora->rank < 1) throw std::invalid_argument("lora.rank must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"encoder", c.encoder},
                       {"toy_encoder", c.toy_encoder},
                       {"connector", c.connector},
                       {"lm", c.lm},
                       {"lora", c.lora ? nlohmann::json(*c.lora) : nlohmann::json(nullptr)},
                       {"connector_seed", c.connector_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c = ModelConfig{};
    if (j.contains("encoder")) j.at("encoder").get_to(c.encoder);
    if (j.contains("toy_encoder")) j.at("toy_encoder").get_to(c.toy_encoder);
    if (j.contains("connector")) j.at("connector").get_to(c.connector);
    if (j.contains("lm")) j.at("lm").get_to(c.lm);
    if (j.contains("lora") && !j.at("lora").is_null()) c.lora = j.at("lora").get<LoraConfig>();
    if (j.contains("connector_seed")) j.at("connector_seed").get_to(c.connector_seed);
}

/// Anything that completes a prompt, optionally conditioned on speech.
/// Inference is written against this so tests can inject stubs.
class TurnModel {
public:
    virtual ~TurnModel() = default;
    virtual std::string complete(const Utterance* speech, const std::string& prompt, int max_new_tokens) const = 0;
};

/// Copies values into `dst` by parameter name; shapes must agree.
inline void assign_values(const ParameterList& dst, const std::map<std::string, Matrix>& values,
                          const std::string& what) {
    for (const auto& p : dst) {
        auto it = values.find(p->name);
        if (it == values.end()) throw std::runtime_error(what + ": missing tensor '" + p->name + "'");
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw std::runtime_error(what + ": shape mismatch for '" + p->name + "'");
        p->value = it->second;
    }
}

inline std::map<std::string, Matrix> values_by_name(const ParameterList& ps) {
    std::map<std::string, Matrix> out;
    for (const auto& p : ps) out[p->name] = p->value;
    return out;
}

class SpokenDstModel final : public TurnModel {
public:
    explicit SpokenDstModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.resolve();
        if (cfg_.encoder.kind == EncoderKind::toy) encoder_ = std::make_shared<ToyEncoder>(cfg_.toy_encoder);
        else encoder_ = std::make_shared<PrecomputedEncoder>(cfg_.encoder.output_dim);
        Rng rng(cfg_.connector_seed);
        connector_ = Connector(cfg_.connector, rng);
        lm_ = ToyCausalLm(cfg_.lm);
        if (cfg_.lora) lm_ = lm_.inject_lora(*cfg_.lora);
    }

    const ModelConfig& config() const { return cfg_; }
    SpeechEncoder& encoder() { return *encoder_; }
    const SpeechEncoder& encoder() const { return *encoder_; }
    const Connector& connector() const { return connector_; }
    const ToyCausalLm& lm() const { return lm_; }

    /// Replaces the LM weights (e.g. with a separately pretrained LM). Any
    /// configured adapters are re-injected fresh on top.
    void set_lm(const ToyCausalLm& lm) {
        if (lm.has_adapters()) throw std::invalid_argument("set_lm expects a model without adapters");
        cfg_.lm = lm.spec();
        cfg_.resolve();
        lm_ = cfg_.lora ? lm.inject_lora(*cfg_.lora) : lm.clone();
    }

    void enable_lora(const LoraConfig& lora) {
        cfg_.lora = lora;
        lm_ = lm_.inject_lora(lora);
    }

    /// Folds adapters into the base weights.
    void merge_lora() {
        lm_ = lm_.merge_lora();
        cfg_.lora.reset();
    }

    ParameterList lm_parameters() const { return lm_.parameters(); }
    ParameterList adapter_parameters() const { return lm_.adapter_parameters(); }
    ParameterList connector_parameters() const { return connector_.parameters(); }
    ParameterList encoder_parameters() const { return encoder_->parameters(); }

    ParameterList all_parameters() const {
        ParameterList ps = encoder_parameters();
        for (const auto& group : {connector_parameters(), lm_parameters(), adapter_parameters()})
            ps.insert(ps.end(), group.begin(), group.end());
        return ps;
    }

    Var soft_prefix(Tape& t, const Utterance& u) const { return connector_.forward(t, encoder_->encode(t, u)); }

    Matrix soft_prefix(const Utterance& u) const {
        Tape t;
        return t.value(soft_prefix(t, u));
    }

    /// Greedy JSON completion of BOS + prompt, with the speech soft prefix when given.
    std::string complete(const Utterance* speech, const std::string& prompt, int max_new_tokens) const override {
        Matrix prefix(0, cfg_.lm.embed_dim);
        if (speech) prefix = soft_prefix(*speech);
        std::vector<int> ids{ByteTokenizer::kBos};
        for (int id : ByteTokenizer::encode(prompt)) ids.push_back(id);
        auto res = generate(lm_, prefix, ids, StopCondition{}, max_new_tokens);
        return ByteTokenizer::decode(res.tokens);
    }

    /// Independent copy with identical weights.
    SpokenDstModel clone() const {
        ModelConfig base = cfg_;
        base.lora.reset();
        SpokenDstModel c(base);
        c.cfg_.lora = cfg_.lora;
        if (cfg_.lora) c.lm_ = c.lm_.inject_lora(*cfg_.lora);
        c.copy_from(*this);
        auto src = all_parameters(), dst = c.all_parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i]->trainable = src[i]->trainable;
        return c;
    }

    void copy_from(const SpokenDstModel& other) {
        assign_values(encoder_parameters(), values_by_name(other.encoder_parameters()), "encoder");
        assign_values(connector_parameters(), values_by_name(other.connector_parameters()), "connector");
        assign_values(lm_parameters(), values_by_name(other.lm_parameters()), "lm");
        assign_values(adapter_parameters(), values_by_name(other.adapter_parameters()), "lora");
    }

    /// Re-initializes encoder and connector weights from fresh seeds.
    void reinitialize_front(std::uint64_t encoder_seed, std::uint64_t connector_seed) {
        if (cfg_.encoder.kind == EncoderKind::toy) {
            cfg_.toy_encoder.seed = encoder_seed;
            encoder_ = std::make_shared<ToyEncoder>(cfg_.toy_encoder);
        }
        cfg_.connector_seed = connector_seed;
        Rng rng(connector_seed);
        connector_ = Connector(cfg_.connector, rng);
    }

private:
    ModelConfig cfg_;
    std::shared_ptr<SpeechEncoder> encoder_;
    Connector connector_;
    ToyCausalLm lm_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kParamMagic[8] = {'S', 'D', 'S', 'T', 'P', 'A', 'R', 'M'};

inline void write_param_blob(const std::string& path, const ParameterList& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(kParamMagic, 8);
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        detail::put_string(out, p->name);
        detail::put_matrix(out, p->value);
    }
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::map<std::string, Matrix> read_param_blob(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kParamMagic, 8) != 0)
        throw std::runtime_error("'" + path + "' is not a parameter blob");
    if (std::uint32_t v = detail::get_u32(in); v != 1)
        throw std::runtime_error("'" + path + "': unsupported blob version " + std::to_string(v));
    std::uint32_t n = detail::get_u32(in);
    std::map<std::string, Matrix> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = detail::get_string(in);
        out[name] = detail::get_matrix(in);
    }
    return out;
}

struct CheckpointInfo {
    std::string stage;
    long step = 0;
    std::uint64_t seed = 0;
    nlohmann::json run_config;  // embedded verbatim for reproducibility
    std::string config_hash;
};

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Writes into a sibling temp directory and renames, so a failed save never
/// leaves a half-written checkpoint behind.
inline void save_checkpoint(const std::string& dir, const SpokenDstModel& model, const CheckpointInfo& info) {
    namespace fs = std::filesystem;
    fs::path target(dir);
    fs::path tmp = target.string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    nlohmann::ordered_json blobs = nlohmann::ordered_json::object();
    auto put = [&](const std::string& module, const ParameterList& ps) {
        if (ps.empty()) return;
        std::string file = module + ".bin";
        write_param_blob((tmp / file).string(), ps);
        blobs[module] = {{"file", file}, {"tensors", ps.size()}, {"checksum", hex64(checksum(ps))}};
    };
    put("encoder", model.encoder_parameters());
    put("connector", model.connector_parameters());
    put("lm", model.lm_parameters());
    put("lora", model.adapter_parameters());
    nlohmann::ordered_json m;
    m["format"] = "sdst-checkpoint/1";
    m["stage"] = info.stage;
    m["step"] = info.step;
    m["seed"] = info.seed;
    m["tokenizer"] = ByteTokenizer::name();
    m["model"] = nlohmann::json(model.config());
    m["modules"] = std::move(blobs);
    m["run_config"] = info.run_config;
    m["config_hash"] = info.config_hash;
    std::ofstream((tmp / "manifest.json").string()) << m.dump(2) << '\n';
    fs::remove_all(target);
    fs::rename(tmp, target);
}

struct LoadedCheckpoint {
    SpokenDstModel model;
    CheckpointInfo info;
};

/// Accepts the checkpoint directory or its manifest path.
inline LoadedCheckpoint load_checkpoint(const std::string& path) {
    namespace fs = std::filesystem;
    fs::path dir(path);
    if (fs::is_regular_file(dir)) dir = dir.parent_path();
    fs::path manifest = dir / "manifest.json";
    std::ifstream in(manifest.string());
    if (!in) throw std::runtime_error("checkpoint not found: '" + manifest.string() + "'");
    auto m = nlohmann::json::parse(in);
    if (m.value("tokenizer", std::string()) != ByteTokenizer::name())
        throw std::runtime_error("checkpoint tokenizer '" + m.value("tokenizer", std::string()) + "' is not supported");
    ModelConfig cfg = m.at("model").get<ModelConfig>();
    SpokenDstModel model(cfg);
    const auto& mods = m.at("modules");
    auto load = [&](const std::string& module, const ParameterList& ps) {
        if (ps.empty()) return;
        if (!mods.contains(module)) throw std::runtime_error("checkpoint lacks module '" + module + "'");
        assign_values(ps, read_param_blob((dir / mods.at(module).at("file").get<std::string>()).string()),
                      "checkpoint " + module);
    };
    load("encoder", model.encoder_parameters());
    load("connector", model.connector_parameters());
    load("lm", model.lm_parameters());
    load("lora", model.adapter_parameters());
    CheckpointInfo info;
    info.stage = m.value("stage", std::string());
    info.step = m.value("step", 0L);
    info.seed = m.value("seed", std::uint64_t{0});
    info.run_config = m.value("run_config", nlohmann::json());
    info.config_hash = m.value("config_hash", std::string());
    return {std::move(model), std::move(info)};
}

}  // namespace sdst
