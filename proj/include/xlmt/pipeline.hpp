#pragma once

#include "xlmt/config.hpp"
#include "xlmt/eval.hpp"

namespace xlmt {

struct EpochMetrics {
    int epoch = 0;
    double train_loss = 0.0;
    std::map<std::string, double> eval_macro_f1;
};

struct TrainResult {
    ClassifierModel model;
    std::vector<EpochMetrics> metrics;
    bool diverged = false;
    std::map<std::string, float> act_scales;  // populated by QAT runs
};

// Mini-batch Adam over seeded shuffles. Loss is the multitask CE, or the
// distillation loss when teachers are given; the forward runs fake-quant when
// qat is set. Bitwise deterministic for a fixed seed and thread count. On
// divergence (non-finite loss) training stops before applying the bad update
// and returns the last finite state with diverged = true.
TrainResult train(const ModelConfig& cfg, const std::vector<TaskSpec>& tasks,
                  const std::vector<Sample>& train_data, const std::vector<Sample>& eval_data,
                  const TrainConfig& tc, const DistillConfig* distill = nullptr,
                  const TeacherSet* teachers = nullptr, bool qat = false,
                  const ClassifierModel* init_from = nullptr);

EvalReport evaluate_model(const ClassifierModel& model, const std::vector<Sample>& samples,
                          int batch_size = 64);
EvalReport evaluate_fake_quant(const ClassifierModel& model, const std::map<std::string, float>& scales,
                               const std::vector<Sample>& samples, int batch_size = 64);
EvalReport evaluate_int8(const QuantModel& qm, const std::vector<Sample>& samples, int batch_size = 64);

// Builds calibration batches from the head of the dataset.
std::vector<Batch> calibration_batches(const std::vector<Sample>& samples,
                                       const std::vector<TaskSpec>& specs, int max_seq_len, int count,
                                       int batch_size = 32);

// Content-addressed checkpoint cache: a stage whose key hashes to an existing
// file is loaded instead of rebuilt.
class StageCache {
  public:
    explicit StageCache(std::string dir);  // empty dir disables caching

    ClassifierModel get_model(const nlohmann::json& key, const std::string& stem,
                              const std::function<ClassifierModel()>& build);
    QuantModel get_quant(const nlohmann::json& key, const std::string& stem,
                         const std::function<QuantModel()>& build);

    int hits() const { return hits_; }
    int misses() const { return misses_; }

    static uint64_t key_hash(const nlohmann::json& key);

  private:
    std::string path_for(const nlohmann::json& key, const std::string& stem) const;
    std::string dir_;
    int hits_ = 0;
    int misses_ = 0;
};

// trains per-task single-task models and routes each task to its own teacher
TeacherSet train_task_teachers(const RunConfig& cfg, const std::vector<Sample>& train_data,
                               const std::vector<Sample>& eval_data, StageCache& cache);

// keeps only samples carrying at least one of the given tasks' labels
std::vector<Sample> filter_labeled(const std::vector<Sample>& samples, const std::vector<TaskSpec>& specs);
std::vector<Sample> filter_language(const std::vector<Sample>& samples, const std::string& language);

struct XlmMonoRow {
    std::string language;
    SeedInterval cross_lingual, monolingual;
    Verdict verdict = Verdict::same;  // cross-lingual vs monolingual
};

struct XlmMonoReport {
    std::vector<XlmMonoRow> rows;
    std::string table() const;
};

XlmMonoReport recipe_xlm_vs_mono(const RunConfig& cfg);

struct MtlRow {
    std::string task;
    SeedInterval multi_task, single_task;
    Verdict verdict = Verdict::same;  // multi-task vs single-task
};

struct MtlReport {
    std::vector<MtlRow> rows;
    std::string table() const;
};

MtlReport recipe_mtl_vs_single(const RunConfig& cfg);

struct CompressRow {
    std::string model_id;
    double speedup = 0.0;                                  // 0 when the model was not benchmarked
    std::map<std::string, SeedInterval> task_f1;           // mean over recipe seeds
};

struct CompressReport {
    std::vector<CompressRow> rows;
    std::vector<BenchResult> bench;
    int cache_hits = 0;
    std::string table() const;
};

// Full-size multitask baseline, half- and quarter-depth students fine-tuned
// from the pruned baseline with and without task-specific teachers, plus PTQ
// and QAT int8 variants; everything evaluated and the fp32/int8 ladder
// benchmarked against the full-size baseline.
CompressReport recipe_compress(const RunConfig& cfg);

}  // namespace xlmt
