// sdst: command-line front end for the spoken DST pipeline.

#include "sdst/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace sdst;
namespace fs = std::filesystem;

namespace {

constexpr const char* kRootEnv = "SDST_HOME";

struct CommonOptions {
    std::string config;
    std::vector<std::string> overrides;
    int workers = 0;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
    cmd->add_option("-c,--config", o.config, "JSON run config (comments allowed)");
    cmd->add_option("-s,--set", o.overrides, "Override a config field, e.g. --set stage2.max_steps=200");
    cmd->add_option("-w,--workers", o.workers, "Parallel decoding workers");
    cmd->add_flag("-q,--quiet", o.quiet, "Only print errors");
}

RunConfig resolve_config(const CommonOptions& o) {
    RunConfig c = o.config.empty() ? RunConfig::desk_defaults() : load_run_config(o.config);
    std::vector<std::string> overrides = o.overrides;
    if (o.workers > 0) overrides.push_back("workers=" + std::to_string(o.workers));
    if (!overrides.empty()) c = apply_overrides(c, overrides);
    c.validate();
    return c;
}

Logger make_logger(const CommonOptions& o) {
    if (o.quiet) return {};
    return [](const std::string& line) { std::cerr << line << std::endl; };
}

/// Relative paths resolve under $SDST_HOME when it is set.
std::string under_root(const std::string& path) {
    const char* root = std::getenv(kRootEnv);
    if (!root || !*root || path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
}

/// Writes `body` next to `path` and renames it into place.
void write_atomic(const std::string& path, const std::string& body) {
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
        out << body;
        if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
}

nlohmann::ordered_json config_block(const RunConfig& c) {
    nlohmann::ordered_json j;
    j["config_hash"] = config_hash(c);
    j["config"] = nlohmann::ordered_json::parse(nlohmann::json(c).dump());
    return j;
}

PipelineData load_or_generate(const RunConfig& c, const std::string& data_dir) {
    if (data_dir.empty()) return make_pipeline_data(c);
    PipelineData d;
    auto part = [&](const char* name) { return load_corpus((fs::path(data_dir) / name).string()); };
    d.train = part("train.jsonl");
    d.dev = part("dev.jsonl");
    d.asr = part("asr.jsonl");
    d.lm_text = part("lm.jsonl");
    return d;
}

CheckpointInfo info_for(const RunConfig& c, const std::string& stage, const TrainStats& st) {
    CheckpointInfo info;
    info.stage = stage;
    info.step = st.steps;
    info.seed = c.seed;
    info.run_config = c;
    info.config_hash = config_hash(c);
    return info;
}

void save_stats(const std::string& ckpt, const TrainStats& st) {
    write_atomic((fs::path(ckpt) / "train_stats.json").string(), stats_json(st).dump(2) + "\n");
}

ModelConfig base_model(const RunConfig& c) {
    ModelConfig m = c.model;
    m.lora.reset();
    return m;
}

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& c, const std::string& out_dir) {
    PipelineData d = make_pipeline_data(c);
    fs::create_directories(out_dir);
    auto put = [&](const char* name, const DialogueCorpus& corpus) {
        write_atomic((fs::path(out_dir) / name).string(), corpus_to_string(corpus));
    };
    put("train.jsonl", d.train);
    put("dev.jsonl", d.dev);
    put("asr.jsonl", d.asr);
    put("lm.jsonl", d.lm_text);
    write_atomic((fs::path(out_dir) / "ontology.json").string(), derive_ontology(d.train).to_json().dump(2) + "\n");
    write_atomic((fs::path(out_dir) / "synth.json").string(), config_block(c).dump(2) + "\n");
    std::cout << "wrote " << d.train.dialogues.size() << " train, " << d.dev.dialogues.size() << " dev, "
              << d.asr.dialogues.size() << " asr, " << d.lm_text.dialogues.size() << " lm dialogues to " << out_dir
              << "\n";
    return 0;
}

int cmd_pretrain_lm(const RunConfig& c, const PipelineData& d, const std::string& out, const Logger& log) {
    TrainStats st;
    ToyCausalLm lm = run_lm_pretrain(c, d, &st, log);
    SpokenDstModel m(base_model(c));
    m.set_lm(lm);
    save_checkpoint(out, m, info_for(c, "lm_pretrain", st));
    save_stats(out, st);
    std::cout << "checkpoint " << out << "\n";
    return 0;
}

SpokenDstModel init_model(const RunConfig& c, const std::string& init, const Logger& log) {
    if (init.empty()) {
        if (log) log("no --init checkpoint; starting from randomly initialised weights");
        return SpokenDstModel(base_model(c));
    }
    return load_checkpoint(init).model;
}

int cmd_pretrain_asr(const RunConfig& c, const PipelineData& d, const std::string& init, const std::string& out,
                     const Logger& log) {
    SpokenDstModel m = init_model(c, init, log);
    TrainStats st = run_stage1(m, c, d, log);
    save_checkpoint(out, m, info_for(c, "asr_pretrain", st));
    save_stats(out, st);
    std::cout << "checkpoint " << out << "\n";
    return 0;
}

int cmd_train_dst(const RunConfig& c, const PipelineData& d, const std::string& init, const std::string& out,
                  const Logger& log) {
    SpokenDstModel m = init_model(c, init, log);
    TrainStats st = run_stage2(m, c.stage2, d, log);
    save_checkpoint(out, m, info_for(c, "joint_dst", st));
    save_stats(out, st);
    std::cout << "checkpoint " << out << "\n";
    return 0;
}

int cmd_finetune(const RunConfig& c, const std::string& init, const std::string& corpus_path, const std::string& out,
                 const Logger& log) {
    SpokenDstModel m = load_checkpoint(init).model;
    DialogueCorpus corpus = load_corpus(corpus_path);
    for (const auto& w : corpus.warnings)
        if (log) log("warning: " + w);
    TrainStats st = final_finetune(m, dst_examples(corpus, c.final_ft), c.final_ft, progress_hook(log, "final_ft"));
    if (log) log(stats_line("final_ft", st));
    save_checkpoint(out, m, info_for(c, "final_ft", st));
    save_stats(out, st);
    std::cout << "checkpoint " << out << "\n";
    return 0;
}

struct InferOptions {
    std::string checkpoint;
    std::string corpus;
    std::string out;
    std::string mode;
    bool user_only = false;
    bool text_only = false;
    std::string ontology;
};

int cmd_infer(RunConfig c, const InferOptions& o, const Logger& log) {
    LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
    DialogueCorpus corpus = load_corpus(o.corpus);
    for (const auto& w : corpus.warnings)
        if (log) log("warning: " + w);
    if (!o.mode.empty()) c.inference.mode = nlohmann::json(o.mode).get<HistorySource>();
    if (o.user_only) c.inference.include_agent = false;
    Ontology ont;
    PostProcess post;
    if (!o.ontology.empty()) {
        ont = Ontology::load(o.ontology);
        post.ontology = &ont;
        post.threshold = c.fuzzy_threshold;
    }
    auto preds = run_corpus(ck.model, corpus, c.inference, c.workers, post, o.text_only);
    std::string hash = config_hash(c);
    std::string body;
    for (const auto& p : preds) {
        auto j = to_json(p);
        j["config_hash"] = hash;
        body += dump_line(j) + "\n";
    }
    write_atomic(o.out, body);
    long failures = std::count_if(preds.begin(), preds.end(), [](const TurnPrediction& p) { return !p.parse_ok; });
    std::cout << "wrote " << preds.size() << " predictions to " << o.out << " (" << failures
              << " parse failures, config " << hash << ")\n";
    return 0;
}

struct EvalOptions {
    std::string predictions;
    std::string corpus;
    std::string ontology;
    std::string out;
    bool fuzzy = false;
    int threshold = -1;
};

int cmd_evaluate(const RunConfig& c, const EvalOptions& o) {
    auto preds = read_predictions(o.predictions);
    DialogueCorpus gold = load_corpus(o.corpus);
    Ontology ont;
    if (!o.ontology.empty()) ont = Ontology::load(o.ontology);
    else if (o.fuzzy) ont = derive_ontology(gold);
    int threshold = o.threshold >= 0 ? o.threshold : c.fuzzy_threshold;
    if (threshold > 100) throw std::invalid_argument("--fuzzy-threshold: must lie in [0, 100]");
    EvalReport r = evaluate(preds, gold, &ont, o.fuzzy, threshold);
    r.config_hash = config_hash(c);
    std::cout << r.table();
    if (!o.out.empty()) {
        auto j = r.to_json();
        j["predictions"] = o.predictions;
        j["corpus"] = o.corpus;
        write_atomic(o.out, j.dump(2) + "\n");
        std::cout << "report " << o.out << "\n";
    }
    return 0;
}

int cmd_pipeline(const RunConfig& c, const std::string& out, const std::string& ckpt, const Logger& log) {
    PipelineResult res = run_pipeline(c, log);
    std::cout << "train\n" << res.train_report.table() << "dev\n" << res.dev_report.table();
    if (!ckpt.empty()) {
        TrainStats st;
        st.steps = res.report["training"]["stage2"]["steps"].get<long>();
        save_checkpoint(ckpt, res.model, info_for(c, "joint_dst", st));
        std::cout << "checkpoint " << ckpt << "\n";
    }
    if (!out.empty()) {
        write_atomic(out, res.report.dump(2) + "\n");
        std::cout << "report " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spoken dialogue state tracking: synthetic data, training, decoding and scoring"};
    app.require_subcommand(1);
    app.footer(std::string("Relative checkpoint and output paths resolve under $") + kRootEnv + " when set.");

    CommonOptions common;
    std::string out, data_dir, init, corpus_path;

    auto* synth = app.add_subcommand("synth", "Write synthetic train/dev/asr/lm corpora and an ontology");
    add_common(synth, common);
    synth->add_option("-o,--out", out, "Output directory")->required();

    auto training_cmd = [&](const char* name, const char* help, bool needs_init) {
        auto* cmd = app.add_subcommand(name, help);
        add_common(cmd, common);
        cmd->add_option("-o,--out", out, "Checkpoint directory to write")->required();
        cmd->add_option("-d,--data", data_dir, "Directory written by `synth` (default: generate from config)");
        auto* opt = cmd->add_option("-i,--init", init, "Checkpoint to start from");
        if (needs_init) opt->required();
        return cmd;
    };
    auto* pre_lm = training_cmd("pretrain-lm", "Pretrain the toy LM on text-only prompts", false);
    auto* pre_asr = training_cmd("pretrain-asr", "Stage 1: train encoder and connector on ASR prompts", false);
    auto* train_dst = training_cmd("train-dst", "Stage 2: train connector and LoRA on DST prompts", true);

    auto* finetune = app.add_subcommand("finetune", "One epoch of final fine-tuning on a target corpus");
    add_common(finetune, common);
    finetune->add_option("-i,--init", init, "Checkpoint to start from")->required();
    finetune->add_option("--corpus", corpus_path, "Target corpus (JSONL)")->required();
    finetune->add_option("-o,--out", out, "Checkpoint directory to write")->required();

    InferOptions io;
    auto* infer = app.add_subcommand("infer", "Decode a corpus turn by turn into predictions JSONL");
    add_common(infer, common);
    infer->add_option("--checkpoint", io.checkpoint, "Checkpoint directory or manifest")->required();
    infer->add_option("--corpus", io.corpus, "Corpus to decode (JSONL)")->required();
    infer->add_option("-o,--out", io.out, "Predictions file to write")->required();
    infer->add_option("--history", io.mode, "History source")
        ->check(CLI::IsMember({"self_decoded", "oracle_user", "external_asr"}));
    infer->add_flag("--user-only", io.user_only, "Leave agent turns out of the history");
    infer->add_flag("--text-only", io.text_only, "Cascade decoding from external ASR hypotheses, no speech");
    infer->add_option("--ontology", io.ontology, "Normalise slot values against this ontology while decoding");

    EvalOptions eo;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against a gold corpus");
    add_common(evaluate_cmd, common);
    evaluate_cmd->add_option("--predictions", eo.predictions, "Predictions JSONL")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--corpus", eo.corpus, "Gold corpus JSONL")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--ontology", eo.ontology, "Ontology JSON (default: derived from the gold corpus)");
    evaluate_cmd->add_flag("--fuzzy", eo.fuzzy, "Fuzzy-normalise predicted values before scoring");
    evaluate_cmd->add_option("--fuzzy-threshold", eo.threshold, "Similarity threshold 0-100")
        ->check(CLI::Range(0, 100));
    evaluate_cmd->add_option("-o,--out", eo.out, "Report JSON to write");

    std::string ckpt;
    auto* pipeline = app.add_subcommand("pipeline", "Run LM pretraining, stage 1, stage 2, decoding and scoring");
    add_common(pipeline, common);
    pipeline->add_option("-o,--out", out, "Report JSON to write");
    pipeline->add_option("--checkpoint", ckpt, "Also save the final model here");

    auto* show = app.add_subcommand("show-config", "Print the merged run config and its hash");
    add_common(show, common);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig c = resolve_config(common);
        Logger log = make_logger(common);
        if (log && !show->parsed()) log("config " + config_hash(c));
        out = under_root(out);
        init = under_root(init);
        if (synth->parsed()) return cmd_synth(c, out);
        if (pre_lm->parsed()) return cmd_pretrain_lm(c, load_or_generate(c, data_dir), out, log);
        if (pre_asr->parsed()) return cmd_pretrain_asr(c, load_or_generate(c, data_dir), init, out, log);
        if (train_dst->parsed()) return cmd_train_dst(c, load_or_generate(c, data_dir), init, out, log);
        if (finetune->parsed()) return cmd_finetune(c, init, corpus_path, out, log);
        if (infer->parsed()) {
            io.checkpoint = under_root(io.checkpoint);
            io.out = under_root(io.out);
            return cmd_infer(c, io, log);
        }
        if (evaluate_cmd->parsed()) {
            eo.out = under_root(eo.out);
            return cmd_evaluate(c, eo);
        }
        if (pipeline->parsed()) return cmd_pipeline(c, out, under_root(ckpt), log);
        if (show->parsed()) {
            std::cout << config_block(c).dump(2) << "\n";
            return 0;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
