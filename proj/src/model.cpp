#include "xlmt/model.hpp"

#include "xlmt/rng.hpp"

namespace xlmt {

ClassifierModel ClassifierModel::init(const ModelConfig& cfg, const std::vector<TaskSpec>& task_list,
                                      uint64_t seed) {
    ClassifierModel m;
    m.encoder = EncoderParams::init(cfg, seed);
    m.tasks = task_list;
    Rng rng(mix64(seed, 0x68656164));  // head init stream, separate from encoder
    for (const TaskSpec& spec : task_list) {
        spec.validate();
        TaskHead head;
        head.weight = Tensor({cfg.hidden, spec.num_classes});
        head.bias = Tensor({spec.num_classes});
        for (scalar& v : head.weight.data) v = static_cast<scalar>(rng.normal() * 0.02);
        m.heads.emplace(spec.task_id, std::move(head));
    }
    return m;
}

const TaskHead& ClassifierModel::head(const std::string& task_id) const {
    auto it = heads.find(task_id);
    if (it == heads.end()) throw ConfigError(concat("model has no head for task ", task_id));
    return it->second;
}

TaskHead& ClassifierModel::head(const std::string& task_id) {
    auto it = heads.find(task_id);
    if (it == heads.end()) throw ConfigError(concat("model has no head for task ", task_id));
    return it->second;
}

const TaskSpec& ClassifierModel::task(const std::string& task_id) const {
    for (const TaskSpec& t : tasks)
        if (t.task_id == task_id) return t;
    throw ConfigError(concat("model has no task ", task_id));
}

int64_t ClassifierModel::param_count() const {
    int64_t n = encoder.param_count();
    for (const auto& [id, head] : heads) n += head.weight.numel() + head.bias.numel();
    return n;
}

std::map<std::string, Tensor> ClassifierModel::predict_logits(const Batch& batch) const {
    Tensor pooled = encode_forward(encoder, batch, ForwardOptions{});
    std::map<std::string, Tensor> logits;
    for (const TaskSpec& spec : tasks) logits.emplace(spec.task_id, head_logits(pooled, head(spec.task_id)));
    return logits;
}

}  // namespace xlmt
