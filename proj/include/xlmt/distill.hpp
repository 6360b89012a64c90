#pragma once

#include "xlmt/model.hpp"

namespace xlmt {

struct DistillConfig {
    float alpha = 1.0f;        // teacher coefficient; 0 disables the distillation term
    float temperature = 2.0f;  // softening temperature F
    // task_id -> teacher checkpoint path; a single entry under key "*" assigns
    // one shared teacher to every task.
    std::map<std::string, std::string> teacher_assignment;

    void validate() const {
        if (!(temperature > 0.0f)) throw ConfigError("distill: temperature must be > 0");
        if (alpha < 0.0f) throw ConfigError("distill: alpha must be >= 0");
    }
};

using TeacherOutputs = std::map<std::string, Tensor>;

// Frozen teachers with a per-task routing table.
struct TeacherSet {
    std::vector<ClassifierModel> models;
    std::map<std::string, size_t> assignment;  // task_id -> index into models

    // Checks every task is routed to a teacher exposing a matching head.
    void validate(const std::vector<TaskSpec>& tasks) const;
};

// softmax(logits / F)
Tensor soften(const Tensor& logits, float temperature);

// Frozen forward passes on the identical batch; per-task logits come from the
// assigned teacher. No dropout, no cache, no gradient state.
TeacherOutputs teacher_predict(const TeacherSet& teachers, const std::vector<TaskSpec>& tasks,
                               const Batch& batch);

// Label loss plus alpha * F^2 * KL(teacher softened || student softened),
// presence-masked like the label loss. Multilabel tasks use per-class binary
// KLs of sigmoid-softened pairs.
LossResult kd_loss(const std::map<std::string, Tensor>& student_logits, const TeacherOutputs& teacher_logits,
                   const TaskLabels& labels, const std::vector<TaskSpec>& specs, const DistillConfig& cfg);

std::map<std::string, Tensor> kd_loss_backward(const std::map<std::string, Tensor>& student_logits,
                                               const TeacherOutputs& teacher_logits, const TaskLabels& labels,
                                               const std::vector<TaskSpec>& specs, const DistillConfig& cfg);

}  // namespace xlmt
