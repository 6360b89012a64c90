// xlmt: cross-lingual multi-task classifier workbench.
//
// Every command reads one JSON config file; artifacts land under the config's
// output_dir with content-hash-stamped names, so re-running with unchanged
// inputs is a cache hit.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "xlmt/pipeline.hpp"
#include "xlmt/tensor.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xlmt;

namespace {

struct Paths {
    std::string out;
    std::string data_dir() const { return out + "/data"; }
    std::string model_dir() const { return out + "/models"; }
    std::string report_dir() const { return out + "/reports"; }
};

uint64_t json_hash(const json& j) { return fnv1a64(j.dump()); }

std::string hex16(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint32_t file_crc(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return crc32(raw.data(), raw.size());
}

void append_manifest(const Paths& paths, const std::string& command, uint64_t config_hash, uint64_t seed,
                     const std::vector<std::string>& artifacts, bool cache_hit) {
    fs::create_directories(paths.out);
    std::ofstream out(paths.out + "/manifest.jsonl", std::ios::app);
    json entry;
    entry["command"] = command;
    entry["config_hash"] = hex16(config_hash);
    entry["seed"] = seed;
    entry["cache_hit"] = cache_hit;
    json arts = json::array();
    for (const std::string& a : artifacts)
        arts.push_back(json{{"path", a}, {"crc32", file_crc(a)}});
    entry["artifacts"] = arts;
    out << entry.dump() << "\n";
}

struct DataPaths {
    std::string train, eval;
};

DataPaths data_paths(const Paths& paths, const RunConfig& cfg) {
    json key;
    key["corpus"] = cfg.corpus;
    const std::string h = hex16(json_hash(key));
    return DataPaths{paths.data_dir() + "/corpus-" + h + ".train.jsonl",
                     paths.data_dir() + "/corpus-" + h + ".eval.jsonl"};
}

// generates the corpus files if they are not already on disk
DataPaths ensure_data(const Paths& paths, const RunConfig& cfg, bool* hit = nullptr) {
    DataPaths dp = data_paths(paths, cfg);
    if (fs::exists(dp.train) && fs::exists(dp.eval)) {
        if (hit) *hit = true;
        return dp;
    }
    fs::create_directories(paths.data_dir());
    Corpus corpus = generate(cfg.corpus);
    write_dataset(corpus.train, dp.train);
    write_dataset(corpus.eval, dp.eval);
    if (hit) *hit = false;
    return dp;
}

void write_eval_report(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    for (const auto& [task, score] : report.tasks) {
        json j;
        j["model"] = report.model_id;
        j["task"] = task;
        j["macro_f1"] = score.macro_f1;
        j["rows"] = score.count;
        json per_class = json::array();
        for (const ClassScore& cs : score.per_class)
            per_class.push_back(json{{"precision", cs.precision}, {"recall", cs.recall}, {"f1", cs.f1}});
        j["per_class"] = per_class;
        out << j.dump() << "\n";
    }
}

std::string eval_table(const EvalReport& report) {
    std::ostringstream os;
    os << "Task   | Macro-F1 | Rows\n";
    for (const auto& [task, score] : report.tasks) {
        char line[96];
        std::snprintf(line, sizeof(line), "%-6s | %8.2f | %lld\n", task.c_str(), score.macro_f1 * 100.0,
                      static_cast<long long>(score.count));
        os << line;
    }
    return os.str();
}

TeacherSet load_teachers(const RunConfig& cfg) {
    TeacherSet teachers;
    std::map<std::string, size_t> by_path;
    for (const TaskSpec& spec : cfg.corpus.tasks) {
        std::string path;
        auto it = cfg.distill.teacher_assignment.find(spec.task_id);
        if (it != cfg.distill.teacher_assignment.end()) {
            path = it->second;
        } else {
            auto star = cfg.distill.teacher_assignment.find("*");
            if (star == cfg.distill.teacher_assignment.end())
                throw ConfigError(concat("distill: no teacher assigned for task ", spec.task_id));
            path = star->second;
        }
        if (!fs::exists(path)) throw IoError(concat("teacher checkpoint missing: ", path));
        auto pit = by_path.find(path);
        if (pit == by_path.end()) {
            teachers.models.push_back(model_from_checkpoint(load_checkpoint(path)));
            pit = by_path.emplace(path, teachers.models.size() - 1).first;
        }
        teachers.assignment[spec.task_id] = pit->second;
    }
    return teachers;
}

int cmd_gen_data(const RunConfig& cfg, const Paths& paths) {
    bool hit = false;
    DataPaths dp = ensure_data(paths, cfg, &hit);
    append_manifest(paths, "gen-data", json_hash(run_config_to_json(cfg)), cfg.corpus.seed,
                    {dp.train, dp.eval}, hit);
    std::cout << (hit ? "cache hit: " : "wrote ") << dp.train << " and " << dp.eval << "\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const Paths& paths, bool with_distill, bool qat) {
    DataPaths dp = ensure_data(paths, cfg);
    std::vector<Sample> train_data = read_dataset(dp.train, &cfg.corpus.tasks);
    std::vector<Sample> eval_data = read_dataset(dp.eval, &cfg.corpus.tasks);

    json key = run_config_to_json(cfg);
    key["command"] = with_distill ? "distill" : (qat ? "train-qat" : "train");
    const std::string h = hex16(json_hash(key));
    const std::string ckpt_path = paths.model_dir() + "/" + (with_distill ? "distilled-" : "model-") + h +
                                  (qat ? ".int8.ckpt" : ".ckpt");
    const std::string metrics_path = paths.model_dir() + "/metrics-" + h + ".jsonl";

    if (fs::exists(ckpt_path)) {
        std::cout << "cache hit: " << ckpt_path << "\n";
        append_manifest(paths, key["command"], json_hash(key), cfg.train.seed, {ckpt_path}, true);
        return 0;
    }
    fs::create_directories(paths.model_dir());

    TeacherSet teachers;
    const DistillConfig* distill = nullptr;
    if (with_distill) {
        teachers = load_teachers(cfg);
        distill = &cfg.distill;
    }
    TrainResult result = train(cfg.model, cfg.corpus.tasks, train_data, eval_data, cfg.train, distill,
                               with_distill ? &teachers : nullptr, qat);

    std::ofstream metrics(metrics_path);
    for (const EpochMetrics& em : result.metrics) {
        json j;
        j["epoch"] = em.epoch;
        j["train_loss"] = em.train_loss;
        j["eval_macro_f1"] = em.eval_macro_f1;
        metrics << j.dump() << "\n";
    }
    if (result.diverged) {
        save_checkpoint(to_checkpoint(result.model), ckpt_path);
        std::cerr << "error: training diverged (non-finite loss); last finite checkpoint kept at "
                  << ckpt_path << "\n";
        return 1;
    }
    if (qat) {
        save_checkpoint(to_checkpoint(quantize_model(result.model, result.act_scales)), ckpt_path);
    } else {
        save_checkpoint(to_checkpoint(result.model), ckpt_path);
    }
    append_manifest(paths, key["command"], json_hash(key), cfg.train.seed, {ckpt_path, metrics_path},
                    false);
    std::cout << "wrote " << ckpt_path << "\n";
    for (const EpochMetrics& em : result.metrics) {
        std::cout << "epoch " << em.epoch << ": loss " << em.train_loss;
        for (const auto& [task, f1] : em.eval_macro_f1) std::cout << "  " << task << " F1 " << f1 * 100.0;
        std::cout << "\n";
    }
    return 0;
}

int cmd_prune(const RunConfig& cfg, const Paths& paths, const std::string& model_path) {
    if (!fs::exists(model_path)) throw IoError(concat("checkpoint missing: ", model_path));
    if (!cfg.prune_enabled) throw ConfigError("prune: config has no prune section");
    ClassifierModel model = model_from_checkpoint(load_checkpoint(model_path));

    json key;
    key["command"] = "prune";
    key["input_crc"] = file_crc(model_path);
    key["prune"] = cfg.prune;
    const std::string out_path = paths.model_dir() + "/pruned-" + hex16(json_hash(key)) + ".ckpt";
    if (fs::exists(out_path)) {
        std::cout << "cache hit: " << out_path << "\n";
        append_manifest(paths, "prune", json_hash(key), cfg.seed, {out_path}, true);
        return 0;
    }
    fs::create_directories(paths.model_dir());
    ClassifierModel pruned = prune(model, cfg.prune);
    save_checkpoint(to_checkpoint(pruned), out_path);
    append_manifest(paths, "prune", json_hash(key), cfg.seed, {out_path}, false);
    std::cout << "wrote " << out_path << " (" << pruned.param_count() << " params, was "
              << model.param_count() << ")\n";
    return 0;
}

int cmd_quantize(const RunConfig& cfg, const Paths& paths, const std::string& model_path) {
    if (cfg.quant.mode == "qat") return cmd_train(cfg, paths, cfg.distill_enabled, true);
    if (cfg.quant.mode != "ptq")
        throw ConfigError("quantize: set quant.mode to ptq or qat in the config");
    if (!fs::exists(model_path)) throw IoError(concat("checkpoint missing: ", model_path));
    ClassifierModel model = model_from_checkpoint(load_checkpoint(model_path));

    DataPaths dp = ensure_data(paths, cfg);
    std::vector<Sample> train_data = read_dataset(dp.train, &cfg.corpus.tasks);

    json key;
    key["command"] = "quantize-ptq";
    key["input_crc"] = file_crc(model_path);
    key["calibration_batches"] = cfg.quant.calibration_batches;
    key["corpus"] = cfg.corpus;
    const std::string out_path = paths.model_dir() + "/quantized-" + hex16(json_hash(key)) + ".ckpt";
    if (fs::exists(out_path)) {
        std::cout << "cache hit: " << out_path << "\n";
        append_manifest(paths, "quantize", json_hash(key), cfg.seed, {out_path}, true);
        return 0;
    }
    fs::create_directories(paths.model_dir());
    std::vector<Batch> calib =
        calibration_batches(filter_labeled(train_data, model.tasks), model.tasks,
                            model.encoder.config.max_seq_len, cfg.quant.calibration_batches,
                            cfg.train.batch_size);
    QuantModel qm = quantize_model(model, calibrate_activations(model, calib));
    save_checkpoint(to_checkpoint(qm), out_path);
    append_manifest(paths, "quantize", json_hash(key), cfg.seed, {out_path}, false);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const Paths& paths, const std::string& model_path) {
    if (!fs::exists(model_path)) throw IoError(concat("checkpoint missing: ", model_path));
    DataPaths dp = ensure_data(paths, cfg);
    std::vector<Sample> eval_data = read_dataset(dp.eval, &cfg.corpus.tasks);

    Checkpoint ckpt = load_checkpoint(model_path);
    EvalReport report;
    if (checkpoint_is_quant(ckpt))
        report = evaluate_int8(quant_from_checkpoint(ckpt), eval_data);
    else
        report = evaluate_model(model_from_checkpoint(ckpt), eval_data);
    report.model_id = model_path;

    json key;
    key["command"] = "eval";
    key["input_crc"] = file_crc(model_path);
    key["corpus"] = cfg.corpus;
    const std::string out_path = paths.report_dir() + "/eval-" + hex16(json_hash(key)) + ".jsonl";
    fs::create_directories(paths.report_dir());
    if (!fs::exists(out_path)) write_eval_report(report, out_path);
    append_manifest(paths, "eval", json_hash(key), cfg.seed, {out_path}, false);
    std::cout << eval_table(report) << "report: " << out_path << "\n";
    return 0;
}

int cmd_bench(const RunConfig& cfg, const Paths& paths, const std::vector<std::string>& model_paths,
              bool dump_latencies) {
    if (model_paths.empty()) throw ConfigError("bench: give at least one checkpoint (the baseline first)");
    std::vector<std::pair<std::string, BenchForward>> models;
    std::vector<ClassifierModel> fp32_models;
    std::vector<QuantModel> int8_models;
    // two passes so the vectors stop reallocating before we capture pointers
    std::vector<bool> is_quant;
    for (const std::string& path : model_paths) {
        if (!fs::exists(path)) throw IoError(concat("checkpoint missing: ", path));
        Checkpoint ckpt = load_checkpoint(path);
        if (checkpoint_is_quant(ckpt)) {
            int8_models.push_back(quant_from_checkpoint(ckpt));
            is_quant.push_back(true);
        } else {
            fp32_models.push_back(model_from_checkpoint(ckpt));
            is_quant.push_back(false);
        }
    }
    size_t fi = 0, qi = 0;
    for (size_t i = 0; i < model_paths.size(); ++i) {
        if (is_quant[i]) {
            const QuantModel* qm = &int8_models[qi++];
            models.emplace_back(model_paths[i], [qm](const Batch& b) { (void)int8_infer(*qm, b); });
        } else {
            const ClassifierModel* m = &fp32_models[fi++];
            models.emplace_back(model_paths[i], [m](const Batch& b) { (void)m->predict_logits(b); });
        }
    }
    std::vector<BenchResult> results = bench_suite(models, cfg.bench);

    json key;
    key["command"] = "bench";
    key["bench"] = cfg.bench;
    json inputs = json::array();
    for (const std::string& p : model_paths) inputs.push_back(p);
    key["models"] = inputs;
    const std::string out_path = paths.report_dir() + "/bench-" + hex16(json_hash(key)) + ".jsonl";
    fs::create_directories(paths.report_dir());
    std::ofstream out(out_path);
    for (const BenchResult& r : results) {
        json j;
        j["model"] = r.model_id;
        j["median_ms"] = r.median_ms;
        j["p95_ms"] = r.p95_ms;
        j["throughput_seq_per_s"] = r.throughput_seq_per_s;
        j["speedup"] = r.speedup;
        if (dump_latencies) j["raw_ms"] = r.raw_ms;
        out << j.dump() << "\n";
    }
    append_manifest(paths, "bench", json_hash(key), cfg.bench.seed, {out_path}, false);
    std::cout << bench_table(results) << "report: " << out_path << "\n";
    return 0;
}

int cmd_recipe(const RunConfig& cfg, const Paths& paths, const std::string& which) {
    json key = run_config_to_json(cfg);
    key["command"] = "recipe-" + which;
    const std::string out_path = paths.report_dir() + "/recipe-" + which + "-" +
                                 hex16(json_hash(key)) + ".txt";
    fs::create_directories(paths.report_dir());

    std::string table;
    if (which == "xlm") {
        table = recipe_xlm_vs_mono(cfg).table();
    } else if (which == "mtl") {
        table = recipe_mtl_vs_single(cfg).table();
    } else if (which == "compress") {
        CompressReport report = recipe_compress(cfg);
        table = report.table() + "\n" + bench_table(report.bench);
    } else {
        throw ConfigError(concat("unknown recipe '", which, "' (expected xlm, mtl or compress)"));
    }
    std::ofstream(out_path) << table;
    append_manifest(paths, "recipe-" + which, json_hash(key), cfg.seed, {out_path}, false);
    std::cout << table << "report: " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-lingual multi-task classifier workbench"};
    app.require_subcommand(1);

    std::string config_path;
    int threads = 0;
    app.add_option("-c,--config", config_path, "JSON config file")->required();
    app.add_option("--threads", threads, "kernel thread count (overrides config)");

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    auto* tr = app.add_subcommand("train", "train a model on the corpus");
    auto* di = app.add_subcommand("distill", "train a student against teacher checkpoints");
    auto* pr = app.add_subcommand("prune", "drop layers/heads from a checkpoint");
    std::string prune_model;
    pr->add_option("model", prune_model, "input checkpoint")->required();
    auto* qu = app.add_subcommand("quantize", "PTQ or QAT per the config quant.mode");
    std::string quant_model;
    qu->add_option("model", quant_model, "input checkpoint (ptq mode)");
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
    std::string eval_model;
    ev->add_option("model", eval_model, "checkpoint to evaluate")->required();
    auto* be = app.add_subcommand("bench", "latency benchmark; first checkpoint is the baseline");
    std::vector<std::string> bench_models;
    bool dump_latencies = false;
    be->add_option("models", bench_models, "checkpoints to benchmark")->required();
    be->add_flag("--dump-latencies", dump_latencies, "include raw per-iteration latencies in the report");
    auto* re = app.add_subcommand("recipe", "run a composed experiment: xlm, mtl or compress");
    std::string recipe_name;
    re->add_option("name", recipe_name, "xlm | mtl | compress")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_run_config(config_path);
        if (const char* env_out = std::getenv("XLMT_OUTPUT_DIR")) cfg.output_dir = env_out;
        if (threads > 0) cfg.threads = threads;
        if (cfg.threads > 0) set_kernel_threads(cfg.threads);
        Paths paths{cfg.output_dir};

        if (gen->parsed()) return cmd_gen_data(cfg, paths);
        if (tr->parsed()) return cmd_train(cfg, paths, false, cfg.quant.mode == "qat");
        if (di->parsed()) return cmd_train(cfg, paths, true, cfg.quant.mode == "qat");
        if (pr->parsed()) return cmd_prune(cfg, paths, prune_model);
        if (qu->parsed()) return cmd_quantize(cfg, paths, quant_model);
        if (ev->parsed()) return cmd_eval(cfg, paths, eval_model);
        if (be->parsed()) return cmd_bench(cfg, paths, bench_models, dump_latencies);
        if (re->parsed()) return cmd_recipe(cfg, paths, recipe_name);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
