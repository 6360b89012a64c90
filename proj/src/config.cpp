#include "xlmt/config.hpp"

#include <fstream>
#include <set>

namespace xlmt {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& section, const std::set<std::string>& known) {
    for (const auto& [key, value] : obj.items())
        if (!known.count(key))
            throw ConfigError(concat("config: unknown key '", key, "' in section '", section, "'"));
}

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

void parse_corpus(const json& j, CorpusSpec& spec) {
    reject_unknown(j, "corpus",
                   {"num_languages", "tasks", "samples_per_task", "class_priors", "task_coverage",
                    "label_noise", "seed", "cross_lingual_signal", "task_correlation"});
    read_key(j, "num_languages", spec.num_languages);
    if (j.contains("tasks")) spec.tasks = j.at("tasks").get<std::vector<TaskSpec>>();
    if (j.contains("samples_per_task"))
        spec.samples_per_task = j.at("samples_per_task").get<std::map<std::string, int64_t>>();
    if (j.contains("class_priors"))
        spec.class_priors = j.at("class_priors").get<std::map<std::string, std::vector<double>>>();
    if (j.contains("task_coverage"))
        spec.task_coverage = j.at("task_coverage").get<std::map<std::string, std::vector<int>>>();
    read_key(j, "label_noise", spec.label_noise);
    read_key(j, "seed", spec.seed);
    read_key(j, "cross_lingual_signal", spec.cross_lingual_signal);
    read_key(j, "task_correlation", spec.task_correlation);
    // coverage defaults track num_languages overrides
    if (!j.contains("task_coverage")) {
        std::vector<int> all_langs, partial;
        for (int l = 0; l < spec.num_languages; ++l) all_langs.push_back(l);
        for (int l = 0; l < spec.num_languages * 3 / 4; ++l) partial.push_back(l);
        spec.task_coverage.clear();
        for (size_t t = 0; t < spec.tasks.size(); ++t)
            spec.task_coverage[spec.tasks[t].task_id] = t == 0 ? all_langs : partial;
    }
}

void parse_model(const json& j, ModelConfig& cfg) {
    reject_unknown(j, "model",
                   {"vocab_size", "hidden", "layers", "heads", "ffn_dim", "max_seq_len", "dropout_rate"});
    read_key(j, "vocab_size", cfg.vocab_size);
    read_key(j, "hidden", cfg.hidden);
    read_key(j, "layers", cfg.layers);
    read_key(j, "heads", cfg.heads);
    read_key(j, "ffn_dim", cfg.ffn_dim);
    read_key(j, "max_seq_len", cfg.max_seq_len);
    read_key(j, "dropout_rate", cfg.dropout_rate);
}

void parse_train(const json& j, TrainConfig& tc) {
    reject_unknown(j, "train",
                   {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps", "warmup_frac", "clip_norm",
                    "seed", "qat_ema_decay"});
    read_key(j, "epochs", tc.epochs);
    read_key(j, "batch_size", tc.batch_size);
    read_key(j, "lr", tc.lr);
    read_key(j, "beta1", tc.beta1);
    read_key(j, "beta2", tc.beta2);
    read_key(j, "adam_eps", tc.adam_eps);
    read_key(j, "warmup_frac", tc.warmup_frac);
    read_key(j, "clip_norm", tc.clip_norm);
    read_key(j, "seed", tc.seed);
    read_key(j, "qat_ema_decay", tc.qat_ema_decay);
}

void parse_distill(const json& j, DistillConfig& dc) {
    reject_unknown(j, "distill", {"alpha", "temperature", "teacher_assignment"});
    read_key(j, "alpha", dc.alpha);
    read_key(j, "temperature", dc.temperature);
    if (j.contains("teacher_assignment"))
        dc.teacher_assignment = j.at("teacher_assignment").get<std::map<std::string, std::string>>();
}

void parse_prune(const json& j, PruneSpec& ps) {
    reject_unknown(j, "prune", {"keep_layers", "keep_heads"});
    read_key(j, "keep_layers", ps.keep_layers);
    if (j.contains("keep_heads")) ps.keep_heads = j.at("keep_heads").get<std::vector<std::vector<int>>>();
}

void parse_quant(const json& j, QuantSection& q) {
    reject_unknown(j, "quant", {"mode", "calibration_batches"});
    read_key(j, "mode", q.mode);
    read_key(j, "calibration_batches", q.calibration_batches);
    if (q.mode != "none" && q.mode != "ptq" && q.mode != "qat")
        throw ConfigError(concat("config: quant.mode must be none|ptq|qat, got '", q.mode, "'"));
}

void parse_bench(const json& j, BenchConfig& bc) {
    reject_unknown(j, "bench",
                   {"seq_len", "batch_size", "warmup_iters", "measured_iters", "thread_count", "seed"});
    read_key(j, "seq_len", bc.seq_len);
    read_key(j, "batch_size", bc.batch_size);
    read_key(j, "warmup_iters", bc.warmup_iters);
    read_key(j, "measured_iters", bc.measured_iters);
    read_key(j, "thread_count", bc.thread_count);
    read_key(j, "seed", bc.seed);
}

void parse_recipe(const json& j, RecipeOptions& r) {
    reject_unknown(j, "recipe", {"seeds", "student_layers", "quarter_layers"});
    read_key(j, "seeds", r.seeds);
    read_key(j, "student_layers", r.student_layers);
    read_key(j, "quarter_layers", r.quarter_layers);
    if (r.seeds < 1) throw ConfigError("config: recipe.seeds must be >= 1");
}

}  // namespace

RunConfig RunConfig::defaults() {
    RunConfig cfg;
    cfg.corpus = CorpusSpec::defaults();
    cfg.model.hidden = 64;
    cfg.model.layers = 4;
    cfg.model.heads = 4;
    cfg.model.ffn_dim = 128;
    return cfg;
}

RunConfig parse_run_config(const json& doc) {
    if (!doc.is_object()) throw ConfigError("config: document must be a JSON object");
    reject_unknown(doc, "(top level)",
                   {"corpus", "model", "train", "distill", "prune", "quant", "bench", "recipe",
                    "output_dir", "seed", "threads"});
    RunConfig cfg = RunConfig::defaults();
    if (doc.contains("corpus")) parse_corpus(doc.at("corpus"), cfg.corpus);
    if (doc.contains("model")) parse_model(doc.at("model"), cfg.model);
    if (doc.contains("train")) parse_train(doc.at("train"), cfg.train);
    if (doc.contains("distill")) {
        parse_distill(doc.at("distill"), cfg.distill);
        cfg.distill_enabled = true;
    }
    if (doc.contains("prune")) {
        parse_prune(doc.at("prune"), cfg.prune);
        cfg.prune_enabled = true;
    }
    if (doc.contains("quant")) parse_quant(doc.at("quant"), cfg.quant);
    if (doc.contains("bench")) parse_bench(doc.at("bench"), cfg.bench);
    if (doc.contains("recipe")) parse_recipe(doc.at("recipe"), cfg.recipe);
    if (doc.contains("output_dir")) cfg.output_dir = doc.at("output_dir").get<std::string>();
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<uint64_t>();
    if (doc.contains("threads")) cfg.threads = doc.at("threads").get<int>();

    cfg.model.validate();
    cfg.train.validate();
    cfg.corpus.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError(concat("cannot open config file ", path));
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(concat("config: ", path, " is not valid JSON: ", e.what()));
    }
    return parse_run_config(doc);
}

void to_json(json& j, const CorpusSpec& spec) {
    j = json{{"num_languages", spec.num_languages},
             {"tasks", spec.tasks},
             {"samples_per_task", spec.samples_per_task},
             {"class_priors", spec.class_priors},
             {"task_coverage", spec.task_coverage},
             {"label_noise", spec.label_noise},
             {"seed", spec.seed},
             {"cross_lingual_signal", spec.cross_lingual_signal},
             {"task_correlation", spec.task_correlation}};
}

void to_json(json& j, const TrainConfig& tc) {
    j = json{{"epochs", tc.epochs},         {"batch_size", tc.batch_size},
             {"lr", tc.lr},                 {"beta1", tc.beta1},
             {"beta2", tc.beta2},           {"adam_eps", tc.adam_eps},
             {"warmup_frac", tc.warmup_frac}, {"clip_norm", tc.clip_norm},
             {"seed", tc.seed},             {"qat_ema_decay", tc.qat_ema_decay}};
}

void to_json(json& j, const DistillConfig& dc) {
    j = json{{"alpha", dc.alpha},
             {"temperature", dc.temperature},
             {"teacher_assignment", dc.teacher_assignment}};
}

void to_json(json& j, const PruneSpec& ps) {
    j = json{{"keep_layers", ps.keep_layers}, {"keep_heads", ps.keep_heads}};
}

void to_json(json& j, const BenchConfig& bc) {
    j = json{{"seq_len", bc.seq_len},
             {"batch_size", bc.batch_size},
             {"warmup_iters", bc.warmup_iters},
             {"measured_iters", bc.measured_iters},
             {"thread_count", bc.thread_count},
             {"seed", bc.seed}};
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["corpus"] = cfg.corpus;
    j["model"] = cfg.model;
    j["train"] = cfg.train;
    if (cfg.distill_enabled) j["distill"] = cfg.distill;
    if (cfg.prune_enabled) j["prune"] = cfg.prune;
    j["quant"] = json{{"mode", cfg.quant.mode}, {"calibration_batches", cfg.quant.calibration_batches}};
    j["bench"] = cfg.bench;
    j["recipe"] = json{{"seeds", cfg.recipe.seeds},
                       {"student_layers", cfg.recipe.student_layers},
                       {"quarter_layers", cfg.recipe.quarter_layers}};
    j["output_dir"] = cfg.output_dir;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    return j;
}

uint64_t fnv1a64(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace xlmt
