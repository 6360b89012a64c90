#include "xlmt/multitask.hpp"

#include <cmath>

namespace xlmt {

namespace {

double softplus(double z) {
    return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const TaskLabels::Entry& entry_for(const TaskLabels& labels, const std::string& task_id) {
    auto it = labels.tasks.find(task_id);
    if (it == labels.tasks.end()) throw ValidationError(concat("no labels for task ", task_id));
    return it->second;
}

const Tensor& logits_for(const std::map<std::string, Tensor>& logits, const std::string& task_id) {
    auto it = logits.find(task_id);
    if (it == logits.end()) throw ValidationError(concat("no logits for task ", task_id));
    return it->second;
}

}  // namespace

Tensor head_logits(const Tensor& pooled, const TaskHead& head) {
    Tensor out = matmul(pooled, head.weight);
    const int64_t b = out.dim(0), c = out.dim(1);
    if (head.bias.numel() != c)
        throw ShapeError(concat("head bias has ", head.bias.numel(), " elements, logits need ", c));
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < c; ++j) out.at(i, j) += head.bias.data[static_cast<size_t>(j)];
    return out;
}

LossResult multitask_loss(const std::map<std::string, Tensor>& logits, const TaskLabels& labels,
                          const std::vector<TaskSpec>& specs) {
    LossResult res;
    double total = 0.0;
    for (const TaskSpec& spec : specs) {
        const Tensor& z = logits_for(logits, spec.task_id);
        const TaskLabels::Entry& lab = entry_for(labels, spec.task_id);
        const int64_t b = z.dim(0), c = z.dim(1);
        if (c != spec.num_classes)
            throw ShapeError(concat("task ", spec.task_id, ": logits have ", c, " classes, spec says ",
                                    spec.num_classes));
        if (static_cast<int64_t>(lab.present.size()) != b)
            throw ValidationError(concat("task ", spec.task_id, ": presence mask size mismatch"));
        double task_sum = 0.0;
        int64_t task_n = 0;
        for (int64_t i = 0; i < b; ++i) {
            if (!lab.present[static_cast<size_t>(i)]) continue;
            ++task_n;
            if (spec.kind == TaskKind::multiclass) {
                const int32_t y = lab.class_ids[static_cast<size_t>(i)];
                if (y < 0 || y >= c)
                    throw ValidationError(concat("task ", spec.task_id, ": label ", y,
                                                 " out of range [0,", c, ") at row ", i));
                double mx = static_cast<double>(z.at(i, 0));
                for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(z.at(i, j)));
                double lse = 0.0;
                for (int64_t j = 0; j < c; ++j) lse += std::exp(static_cast<double>(z.at(i, j)) - mx);
                lse = mx + std::log(lse);
                task_sum += lse - static_cast<double>(z.at(i, y));
            } else {
                for (int64_t j = 0; j < c; ++j) {
                    const double zj = static_cast<double>(z.at(i, j));
                    const double yj = static_cast<double>(lab.bits[static_cast<size_t>(i * c + j)]);
                    task_sum += softplus(zj) - yj * zj;
                }
            }
        }
        res.per_task[spec.task_id] = task_sum;
        res.total_present += task_n;
        total += task_sum;
    }
    if (res.total_present == 0) throw ValidationError("no labeled rows in batch");
    res.loss = total / static_cast<double>(res.total_present);
    return res;
}

std::map<std::string, Tensor> multitask_loss_backward(const std::map<std::string, Tensor>& logits,
                                                      const TaskLabels& labels,
                                                      const std::vector<TaskSpec>& specs) {
    int64_t n_total = 0;
    for (const TaskSpec& spec : specs) n_total += labels.present_count(spec.task_id);
    if (n_total == 0) throw ValidationError("no labeled rows in batch");
    const double inv_n = 1.0 / static_cast<double>(n_total);

    std::map<std::string, Tensor> grads;
    for (const TaskSpec& spec : specs) {
        const Tensor& z = logits_for(logits, spec.task_id);
        const TaskLabels::Entry& lab = entry_for(labels, spec.task_id);
        const int64_t b = z.dim(0), c = z.dim(1);
        Tensor g({b, c});
        for (int64_t i = 0; i < b; ++i) {
            if (!lab.present[static_cast<size_t>(i)]) continue;
            if (spec.kind == TaskKind::multiclass) {
                const int32_t y = lab.class_ids[static_cast<size_t>(i)];
                double mx = static_cast<double>(z.at(i, 0));
                for (int64_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(z.at(i, j)));
                double sum = 0.0;
                for (int64_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(z.at(i, j)) - mx);
                for (int64_t j = 0; j < c; ++j) {
                    const double p = std::exp(static_cast<double>(z.at(i, j)) - mx) / sum;
                    g.at(i, j) = static_cast<scalar>((p - (j == y ? 1.0 : 0.0)) * inv_n);
                }
            } else {
                for (int64_t j = 0; j < c; ++j) {
                    const double zj = static_cast<double>(z.at(i, j));
                    const double yj = static_cast<double>(lab.bits[static_cast<size_t>(i * c + j)]);
                    g.at(i, j) = static_cast<scalar>((sigmoid(zj) - yj) * inv_n);
                }
            }
        }
        grads.emplace(spec.task_id, std::move(g));
    }
    return grads;
}

}  // namespace xlmt
