#pragma once

#include "json.hpp"
#include "xlmt/bench.hpp"
#include "xlmt/checkpoint.hpp"
#include "xlmt/data.hpp"
#include "xlmt/distill.hpp"

namespace xlmt {

struct TrainConfig {
    int epochs = 2;
    int batch_size = 32;
    float lr = 2e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float adam_eps = 1e-8f;
    float warmup_frac = 0.1f;  // linear warmup, then linear decay to zero
    float clip_norm = 1.0f;
    uint64_t seed = 1;
    float qat_ema_decay = 0.99f;

    void validate() const {
        if (epochs < 1 || batch_size < 1) throw ConfigError("train: epochs and batch_size must be >= 1");
        if (!(lr > 0.0f)) throw ConfigError("train: lr must be > 0");
        if (warmup_frac < 0.0f || warmup_frac >= 1.0f)
            throw ConfigError("train: warmup_frac must be in [0,1)");
        if (!(clip_norm > 0.0f)) throw ConfigError("train: clip_norm must be > 0");
    }
};

struct QuantSection {
    std::string mode = "none";  // none | ptq | qat
    int calibration_batches = 8;
};

struct RecipeOptions {
    int seeds = 5;           // models per configuration for the interval procedure
    int student_layers = 0;  // 0 -> half of the model depth
    int quarter_layers = 0;  // 0 -> quarter of the model depth (compress recipe ladder)
};

// One config document drives every command: sections map 1:1 onto the
// structs above. Unknown keys anywhere are rejected by name.
struct RunConfig {
    CorpusSpec corpus;
    ModelConfig model;
    TrainConfig train;
    DistillConfig distill;
    bool distill_enabled = false;
    PruneSpec prune;
    bool prune_enabled = false;
    QuantSection quant;
    BenchConfig bench;
    RecipeOptions recipe;
    std::string output_dir = "out";
    uint64_t seed = 1;
    int threads = 0;

    static RunConfig defaults();
};

RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::string& path);

nlohmann::json run_config_to_json(const RunConfig& cfg);

void to_json(nlohmann::json& j, const CorpusSpec& spec);
void to_json(nlohmann::json& j, const TrainConfig& tc);
void to_json(nlohmann::json& j, const DistillConfig& dc);
void to_json(nlohmann::json& j, const PruneSpec& ps);
void to_json(nlohmann::json& j, const BenchConfig& bc);

uint64_t fnv1a64(const std::string& s);

}  // namespace xlmt
