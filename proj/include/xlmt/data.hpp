#pragma once

#include <map>
#include <string>
#include <vector>

#include "xlmt/batch.hpp"
#include "xlmt/multitask.hpp"

namespace xlmt {

// Per-sample label for one task. `present` is the task-presence flag: samples
// from languages outside a task's coverage carry no label for it.
struct SampleLabel {
    bool present = false;
    int32_t class_id = 0;       // multiclass
    std::vector<uint8_t> bits;  // multilabel
};

struct Sample {
    std::string text;
    std::string language;
    std::map<std::string, SampleLabel> labels;
};

struct CorpusSpec {
    int num_languages = 12;
    std::vector<TaskSpec> tasks;                               // defaults to the 6/4/9 trio
    std::map<std::string, int64_t> samples_per_task;           // quota of labeled docs per task
    std::map<std::string, std::vector<double>> class_priors;   // multiclass: priors; multilabel: positive rates
    std::map<std::string, std::vector<int>> task_coverage;     // task -> language indices carrying labels
    float label_noise = 0.05f;
    uint64_t seed = 1;
    // When off, each language permutes the class->stem association, so surface
    // forms carry different meanings per language and pooling languages stops
    // paying off.
    bool cross_lingual_signal = true;
    // Gaussian-copula coupling between the task1 and task2 latents.
    double task_correlation = 0.9;

    static CorpusSpec defaults();
    void validate() const;
    const TaskSpec& task(const std::string& id) const;
};

struct Corpus {
    std::vector<Sample> train;
    std::vector<Sample> eval;
};

// Pre-noise labels and latents, exposed for tests of the generative contract.
struct GenerationTrace {
    std::vector<std::map<std::string, SampleLabel>> clean_labels;  // train then eval order lost; indexed like all_docs
    std::vector<std::vector<double>> latents;                      // one row per generated doc
};

Corpus generate(const CorpusSpec& spec, GenerationTrace* trace = nullptr);

// Line-delimited records: {"text":..., "language":..., "labels": {task: value}}.
// Multiclass labels are integers, multilabel labels are 0/1 arrays. Unknown
// record fields are ignored; labels for tasks outside `expected` are dropped
// with a warning on stderr.
std::vector<Sample> read_dataset(const std::string& path,
                                 const std::vector<TaskSpec>* expected = nullptr);
void write_dataset(const std::vector<Sample>& samples, const std::string& path);

// Assembles padded token batches plus per-task label tensors.
Batch samples_to_batch(const std::vector<Sample>& samples, const std::vector<TaskSpec>& specs,
                       int max_seq_len);

std::string language_name(int index);

}  // namespace xlmt
