#pragma once

#include "xlmt/encoder.hpp"
#include "xlmt/multitask.hpp"

namespace xlmt {

// Shared encoder plus one classification head per task.
struct ClassifierModel {
    EncoderParams encoder;
    std::vector<TaskSpec> tasks;
    std::map<std::string, TaskHead> heads;

    static ClassifierModel init(const ModelConfig& cfg, const std::vector<TaskSpec>& task_list,
                                uint64_t seed);

    const TaskHead& head(const std::string& task_id) const;
    TaskHead& head(const std::string& task_id);
    const TaskSpec& task(const std::string& task_id) const;

    int64_t param_count() const;

    // Inference-mode forward: pooled representation and per-task logits.
    std::map<std::string, Tensor> predict_logits(const Batch& batch) const;
};

}  // namespace xlmt
