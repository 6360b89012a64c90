#pragma once

#include <functional>

#include "xlmt/data.hpp"
#include "xlmt/multitask.hpp"

namespace xlmt {

struct TaskPredictions {
    std::vector<int32_t> class_ids;  // multiclass: argmax per row
    std::vector<uint8_t> bits;       // multilabel: logit > 0 per class
};

TaskPredictions predictions_from_logits(const Tensor& logits, const TaskSpec& spec);

struct ClassScore {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct TaskScore {
    double macro_f1 = 0.0;  // unweighted mean over all classes
    std::vector<ClassScore> per_class;
    int64_t count = 0;  // presence-masked-in rows scored
};

// Per-class F1 = 2PR/(P+R), 0 when P+R = 0; classes absent from both
// predictions and labels still count in the macro mean. Multilabel tasks score
// the positive class of each binary label.
TaskScore task_score(const TaskPredictions& pred, const TaskLabels::Entry& labels, const TaskSpec& spec);

double macro_f1(const TaskPredictions& pred, const TaskLabels::Entry& labels, const TaskSpec& spec);

struct EvalReport {
    std::string model_id;
    uint64_t seed = 0;
    std::map<std::string, TaskScore> tasks;
};

// Runs a forward function over the dataset in fixed-size batches and scores
// every task.
EvalReport evaluate(const std::function<std::map<std::string, Tensor>(const Batch&)>& forward,
                    const std::vector<Sample>& samples, const std::vector<TaskSpec>& specs,
                    int max_seq_len, int batch_size = 64);

struct SeedInterval {
    double mean = 0.0, lower = 0.0, upper = 0.0;
    double half_width() const { return upper - mean; }
};

// Two-sided 95% Student-t interval over k seed scores (k >= 2).
SeedInterval seed_interval(const std::vector<double>& scores);

enum class Verdict { better, worse, same };

const char* verdict_name(Verdict v);

// "same" when the mean gap is within the larger of the two interval
// half-widths; the sign of the gap decides otherwise.
Verdict compare_means(const SeedInterval& a, const SeedInterval& b);

std::map<std::string, Verdict> compare(const std::map<std::string, SeedInterval>& a,
                                       const std::map<std::string, SeedInterval>& b);

}  // namespace xlmt
