#include "xlmt/eval.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

namespace xlmt {

TaskPredictions predictions_from_logits(const Tensor& logits, const TaskSpec& spec) {
    TaskPredictions pred;
    const int64_t b = logits.dim(0), c = logits.dim(1);
    if (c != spec.num_classes)
        throw ShapeError(concat("logits for task ", spec.task_id, " have ", c, " classes, spec says ",
                                spec.num_classes));
    if (spec.kind == TaskKind::multiclass) {
        pred.class_ids.resize(static_cast<size_t>(b));
        for (int64_t i = 0; i < b; ++i) {
            int32_t best = 0;
            for (int64_t j = 1; j < c; ++j)
                if (logits.at(i, j) > logits.at(i, best)) best = static_cast<int32_t>(j);
            pred.class_ids[static_cast<size_t>(i)] = best;
        }
    } else {
        pred.bits.resize(static_cast<size_t>(b * c));
        for (int64_t i = 0; i < b * c; ++i)
            pred.bits[static_cast<size_t>(i)] = logits.data[static_cast<size_t>(i)] > 0 ? 1 : 0;
    }
    return pred;
}

TaskScore task_score(const TaskPredictions& pred, const TaskLabels::Entry& labels, const TaskSpec& spec) {
    const int c = spec.num_classes;
    std::vector<int64_t> tp(static_cast<size_t>(c), 0), fp(static_cast<size_t>(c), 0),
        fn(static_cast<size_t>(c), 0);
    int64_t rows = 0;
    const int64_t b = static_cast<int64_t>(labels.present.size());
    for (int64_t i = 0; i < b; ++i) {
        if (!labels.present[static_cast<size_t>(i)]) continue;
        ++rows;
        if (spec.kind == TaskKind::multiclass) {
            const int32_t want = labels.class_ids[static_cast<size_t>(i)];
            const int32_t got = pred.class_ids[static_cast<size_t>(i)];
            if (got == want) {
                ++tp[static_cast<size_t>(want)];
            } else {
                ++fp[static_cast<size_t>(got)];
                ++fn[static_cast<size_t>(want)];
            }
        } else {
            for (int j = 0; j < c; ++j) {
                const bool want = labels.bits[static_cast<size_t>(i * c + j)] != 0.0f;
                const bool got = pred.bits[static_cast<size_t>(i * c + j)] != 0;
                if (got && want) ++tp[static_cast<size_t>(j)];
                if (got && !want) ++fp[static_cast<size_t>(j)];
                if (!got && want) ++fn[static_cast<size_t>(j)];
            }
        }
    }
    if (rows == 0) throw ValidationError(concat("task ", spec.task_id, ": no labeled rows to score"));

    TaskScore score;
    score.count = rows;
    score.per_class.resize(static_cast<size_t>(c));
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
        ClassScore& cs = score.per_class[static_cast<size_t>(j)];
        const double tpv = static_cast<double>(tp[static_cast<size_t>(j)]);
        const double fpv = static_cast<double>(fp[static_cast<size_t>(j)]);
        const double fnv = static_cast<double>(fn[static_cast<size_t>(j)]);
        cs.precision = tpv + fpv > 0 ? tpv / (tpv + fpv) : 0.0;
        cs.recall = tpv + fnv > 0 ? tpv / (tpv + fnv) : 0.0;
        cs.f1 = cs.precision + cs.recall > 0 ? 2.0 * cs.precision * cs.recall / (cs.precision + cs.recall)
                                             : 0.0;
        sum += cs.f1;
    }
    score.macro_f1 = sum / static_cast<double>(c);
    return score;
}

double macro_f1(const TaskPredictions& pred, const TaskLabels::Entry& labels, const TaskSpec& spec) {
    return task_score(pred, labels, spec).macro_f1;
}

EvalReport evaluate(const std::function<std::map<std::string, Tensor>(const Batch&)>& forward,
                    const std::vector<Sample>& samples, const std::vector<TaskSpec>& specs,
                    int max_seq_len, int batch_size) {
    if (samples.empty()) throw ValidationError("evaluate: empty dataset");
    // accumulate predictions and labels over the whole set, then score once
    std::map<std::string, TaskPredictions> preds;
    std::map<std::string, TaskLabels::Entry> all_labels;
    for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        std::vector<Sample> slice(samples.begin() + static_cast<int64_t>(start),
                                  samples.begin() + static_cast<int64_t>(end));
        Batch batch = samples_to_batch(slice, specs, max_seq_len);
        std::map<std::string, Tensor> logits = forward(batch);
        for (const TaskSpec& spec : specs) {
            TaskPredictions p = predictions_from_logits(logits.at(spec.task_id), spec);
            TaskPredictions& acc = preds[spec.task_id];
            acc.class_ids.insert(acc.class_ids.end(), p.class_ids.begin(), p.class_ids.end());
            acc.bits.insert(acc.bits.end(), p.bits.begin(), p.bits.end());
            const TaskLabels::Entry& e = batch.labels.tasks.at(spec.task_id);
            TaskLabels::Entry& le = all_labels[spec.task_id];
            le.present.insert(le.present.end(), e.present.begin(), e.present.end());
            le.class_ids.insert(le.class_ids.end(), e.class_ids.begin(), e.class_ids.end());
            le.bits.insert(le.bits.end(), e.bits.begin(), e.bits.end());
        }
    }
    EvalReport report;
    for (const TaskSpec& spec : specs) {
        const TaskLabels::Entry& e = all_labels.at(spec.task_id);
        int64_t present = 0;
        for (uint8_t p : e.present) present += p ? 1 : 0;
        if (present == 0) continue;  // task unlabeled in this slice
        report.tasks[spec.task_id] = task_score(preds.at(spec.task_id), e, spec);
    }
    if (report.tasks.empty()) throw ValidationError("evaluate: no labeled rows for any task");
    return report;
}

SeedInterval seed_interval(const std::vector<double>& scores) {
    const size_t k = scores.size();
    if (k < 2) throw ValidationError("seed_interval needs at least 2 scores");
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(k - 1);
    const double stderr_mean = std::sqrt(var / static_cast<double>(k));
    boost::math::students_t dist(static_cast<double>(k - 1));
    const double t = boost::math::quantile(dist, 0.975);
    SeedInterval iv;
    iv.mean = mean;
    iv.lower = mean - t * stderr_mean;
    iv.upper = mean + t * stderr_mean;
    return iv;
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::better: return "better";
        case Verdict::worse: return "worse";
        default: return "same";
    }
}

Verdict compare_means(const SeedInterval& a, const SeedInterval& b) {
    const double slack = std::max(a.half_width(), b.half_width());
    if (std::abs(a.mean - b.mean) <= slack) return Verdict::same;
    return a.mean > b.mean ? Verdict::better : Verdict::worse;
}

std::map<std::string, Verdict> compare(const std::map<std::string, SeedInterval>& a,
                                       const std::map<std::string, SeedInterval>& b) {
    if (a.size() != b.size()) throw ValidationError("compare: task sets differ");
    std::map<std::string, Verdict> verdicts;
    for (const auto& [task, iv] : a) {
        auto it = b.find(task);
        if (it == b.end()) throw ValidationError(concat("compare: task ", task, " missing on one side"));
        verdicts[task] = compare_means(iv, it->second);
    }
    return verdicts;
}

}  // namespace xlmt
