#pragma once

#include <map>
#include <string>
#include <vector>

#include "xlmt/tensor.hpp"

namespace xlmt {

enum class TaskKind { multiclass, multilabel };

struct TaskSpec {
    std::string task_id;
    TaskKind kind = TaskKind::multiclass;
    int num_classes = 2;

    void validate() const {
        if (kind == TaskKind::multiclass && num_classes < 2)
            throw ConfigError(concat("task ", task_id, ": multiclass needs >= 2 classes"));
        if (kind == TaskKind::multilabel && num_classes < 1)
            throw ConfigError(concat("task ", task_id, ": multilabel needs >= 1 class"));
    }
};

struct TaskHead {
    Tensor weight;  // [H x C]
    Tensor bias;    // [C]
};

// Per-task labels for one batch. A row participates in a task's loss only when
// its presence flag is set; absent rows contribute neither to the sum nor to N.
struct TaskLabels {
    struct Entry {
        std::vector<int32_t> class_ids;  // multiclass: one id per row
        std::vector<float> bits;         // multilabel: B*C 0/1 values
        std::vector<uint8_t> present;    // one flag per row
    };
    std::map<std::string, Entry> tasks;

    int64_t present_count(const std::string& task_id) const {
        auto it = tasks.find(task_id);
        if (it == tasks.end()) return 0;
        int64_t n = 0;
        for (uint8_t p : it->second.present) n += p ? 1 : 0;
        return n;
    }
};

// pooled[B x H] * head.weight[H x C] + head.bias
Tensor head_logits(const Tensor& pooled, const TaskHead& head);

struct LossResult {
    double loss = 0.0;
    std::map<std::string, double> per_task;  // unnormalized CE sums per task
    int64_t total_present = 0;               // N = sum over tasks of present rows
};

// Sum of per-task cross-entropies over present rows, divided by N.
// Multiclass rows use softmax CE; multilabel rows sum independent binary CEs.
LossResult multitask_loss(const std::map<std::string, Tensor>& logits, const TaskLabels& labels,
                          const std::vector<TaskSpec>& specs);

// d loss / d logits per task. Multiclass: (softmax - onehot)/N. Multilabel:
// (sigmoid - label)/N. Masked rows get zero gradient.
std::map<std::string, Tensor> multitask_loss_backward(const std::map<std::string, Tensor>& logits,
                                                      const TaskLabels& labels,
                                                      const std::vector<TaskSpec>& specs);

}  // namespace xlmt
