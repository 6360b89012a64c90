#include "xlmt/distill.hpp"

#include <cmath>

namespace xlmt {

namespace {

double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log-softmax of row/F in fp64
void log_softmax_scaled(const Tensor& z, int64_t row, double inv_f, std::vector<double>& out) {
    const int64_t c = z.cols();
    out.resize(static_cast<size_t>(c));
    double mx = static_cast<double>(z.at(row, 0)) * inv_f;
    for (int64_t j = 0; j < c; ++j) {
        out[static_cast<size_t>(j)] = static_cast<double>(z.at(row, j)) * inv_f;
        mx = std::max(mx, out[static_cast<size_t>(j)]);
    }
    double sum = 0;
    for (int64_t j = 0; j < c; ++j) sum += std::exp(out[static_cast<size_t>(j)] - mx);
    const double lse = mx + std::log(sum);
    for (int64_t j = 0; j < c; ++j) out[static_cast<size_t>(j)] -= lse;
}

}  // namespace

void TeacherSet::validate(const std::vector<TaskSpec>& tasks) const {
    for (const TaskSpec& spec : tasks) {
        auto it = assignment.find(spec.task_id);
        if (it == assignment.end()) throw ConfigError(concat("no teacher assigned for task ", spec.task_id));
        if (it->second >= models.size())
            throw ConfigError(concat("teacher index out of range for task ", spec.task_id));
        const ClassifierModel& teacher = models[it->second];
        auto head = teacher.heads.find(spec.task_id);
        if (head == teacher.heads.end())
            throw ConfigError(concat("assigned teacher lacks a head for task ", spec.task_id));
        if (head->second.weight.dim(1) != spec.num_classes)
            throw ConfigError(concat("teacher head for task ", spec.task_id, " has ",
                                     head->second.weight.dim(1), " classes, student expects ",
                                     spec.num_classes));
    }
}

Tensor soften(const Tensor& logits, float temperature) {
    if (!(temperature > 0.0f)) throw ConfigError("soften: temperature must be > 0");
    Tensor scaled = logits;
    const scalar inv = static_cast<scalar>(1.0 / static_cast<double>(temperature));
    for (scalar& v : scaled.data) v *= inv;
    return softmax(scaled);
}

TeacherOutputs teacher_predict(const TeacherSet& teachers, const std::vector<TaskSpec>& tasks,
                               const Batch& batch) {
    teachers.validate(tasks);
    TeacherOutputs out;
    // One frozen forward per distinct teacher; each task reads its assignee.
    std::map<size_t, Tensor> pooled_by_model;
    for (const TaskSpec& spec : tasks) {
        const size_t idx = teachers.assignment.at(spec.task_id);
        auto it = pooled_by_model.find(idx);
        if (it == pooled_by_model.end()) {
            Tensor pooled = encode_forward(teachers.models[idx].encoder, batch, ForwardOptions{});
            it = pooled_by_model.emplace(idx, std::move(pooled)).first;
        }
        out.emplace(spec.task_id, head_logits(it->second, teachers.models[idx].head(spec.task_id)));
    }
    return out;
}

LossResult kd_loss(const std::map<std::string, Tensor>& student_logits, const TeacherOutputs& teacher_logits,
                   const TaskLabels& labels, const std::vector<TaskSpec>& specs, const DistillConfig& cfg) {
    cfg.validate();
    LossResult label_part = multitask_loss(student_logits, labels, specs);
    if (cfg.alpha == 0.0f) return label_part;

    const double f = static_cast<double>(cfg.temperature);
    const double inv_f = 1.0 / f;
    const double weight = static_cast<double>(cfg.alpha) * f * f;
    double kd_sum = 0.0;
    std::vector<double> lq, lp;
    for (const TaskSpec& spec : specs) {
        const Tensor& z = student_logits.at(spec.task_id);
        auto tit = teacher_logits.find(spec.task_id);
        if (tit == teacher_logits.end())
            throw ConfigError(concat("kd_loss: no teacher logits for task ", spec.task_id));
        const Tensor& q = tit->second;
        if (q.dim(0) != z.dim(0) || q.dim(1) != z.dim(1))
            throw ConfigError(concat("kd_loss: teacher/student logit shapes differ for task ", spec.task_id,
                                     ": ", q.shape_str(), " vs ", z.shape_str()));
        const TaskLabels::Entry& lab = labels.tasks.at(spec.task_id);
        const int64_t b = z.dim(0), c = z.dim(1);
        for (int64_t i = 0; i < b; ++i) {
            if (!lab.present[static_cast<size_t>(i)]) continue;
            if (spec.kind == TaskKind::multiclass) {
                log_softmax_scaled(q, i, inv_f, lq);
                log_softmax_scaled(z, i, inv_f, lp);
                double kl = 0.0;
                for (int64_t j = 0; j < c; ++j) {
                    const double qh = std::exp(lq[static_cast<size_t>(j)]);
                    if (qh > 0.0) kl += qh * (lq[static_cast<size_t>(j)] - lp[static_cast<size_t>(j)]);
                }
                kd_sum += std::max(kl, 0.0);
            } else {
                for (int64_t j = 0; j < c; ++j) {
                    const double qf = static_cast<double>(q.at(i, j)) * inv_f;
                    const double zf = static_cast<double>(z.at(i, j)) * inv_f;
                    const double qh = sigmoid(qf);
                    // binary KL via log sigmoid identities: log s(x) = -softplus(-x)
                    const double kl =
                        qh * (softplus(-zf) - softplus(-qf)) + (1.0 - qh) * (softplus(zf) - softplus(qf));
                    kd_sum += std::max(kl, 0.0);
                }
            }
        }
    }
    LossResult res = label_part;
    res.loss = label_part.loss + weight * kd_sum / static_cast<double>(label_part.total_present);
    return res;
}

std::map<std::string, Tensor> kd_loss_backward(const std::map<std::string, Tensor>& student_logits,
                                               const TeacherOutputs& teacher_logits, const TaskLabels& labels,
                                               const std::vector<TaskSpec>& specs, const DistillConfig& cfg) {
    cfg.validate();
    std::map<std::string, Tensor> grads = multitask_loss_backward(student_logits, labels, specs);
    if (cfg.alpha == 0.0f) return grads;

    int64_t n_total = 0;
    for (const TaskSpec& spec : specs) n_total += labels.present_count(spec.task_id);
    const double f = static_cast<double>(cfg.temperature);
    const double inv_f = 1.0 / f;
    // d/dz of alpha*F^2*KL collapses to alpha*F*(p_hat - q_hat)
    const double coeff = static_cast<double>(cfg.alpha) * f / static_cast<double>(n_total);
    std::vector<double> lq, lp;
    for (const TaskSpec& spec : specs) {
        const Tensor& z = student_logits.at(spec.task_id);
        const Tensor& q = teacher_logits.at(spec.task_id);
        const TaskLabels::Entry& lab = labels.tasks.at(spec.task_id);
        Tensor& g = grads.at(spec.task_id);
        const int64_t b = z.dim(0), c = z.dim(1);
        for (int64_t i = 0; i < b; ++i) {
            if (!lab.present[static_cast<size_t>(i)]) continue;
            if (spec.kind == TaskKind::multiclass) {
                log_softmax_scaled(q, i, inv_f, lq);
                log_softmax_scaled(z, i, inv_f, lp);
                for (int64_t j = 0; j < c; ++j) {
                    const double ph = std::exp(lp[static_cast<size_t>(j)]);
                    const double qh = std::exp(lq[static_cast<size_t>(j)]);
                    g.at(i, j) += static_cast<scalar>(coeff * (ph - qh));
                }
            } else {
                for (int64_t j = 0; j < c; ++j) {
                    const double ph = sigmoid(static_cast<double>(z.at(i, j)) * inv_f);
                    const double qh = sigmoid(static_cast<double>(q.at(i, j)) * inv_f);
                    g.at(i, j) += static_cast<scalar>(coeff * (ph - qh));
                }
            }
        }
    }
    return grads;
}

}  // namespace xlmt
