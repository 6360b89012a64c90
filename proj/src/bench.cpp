#include "xlmt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "xlmt/rng.hpp"
#include "xlmt/tensor.hpp"

namespace xlmt {

namespace {

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.size() == 1) return v[0];
    const double idx = q * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(idx));
    const size_t hi = static_cast<size_t>(std::ceil(idx));
    const double t = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - t) + v[hi] * t;
}

}  // namespace

Batch bench_batch(const BenchConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    Batch b;
    b.batch_size = cfg.batch_size;
    b.seq_len = cfg.seq_len;
    b.token_ids.resize(static_cast<size_t>(b.batch_size * b.seq_len));
    b.attn_mask.assign(static_cast<size_t>(b.batch_size * b.seq_len), 1);
    for (int64_t i = 0; i < b.batch_size; ++i) {
        b.token_ids[static_cast<size_t>(i * b.seq_len)] = kBosToken;
        for (int64_t s = 1; s + 1 < b.seq_len; ++s)
            b.token_ids[static_cast<size_t>(i * b.seq_len + s)] = static_cast<int32_t>(rng.below(256));
        b.token_ids[static_cast<size_t>((i + 1) * b.seq_len - 1)] = kEosToken;
    }
    return b;
}

BenchResult bench_model(const std::string& id, const BenchForward& forward, const BenchConfig& cfg) {
    cfg.validate();
    if (cfg.thread_count > 0) set_kernel_threads(cfg.thread_count);
    const Batch batch = bench_batch(cfg);

    using clock = std::chrono::steady_clock;
    BenchResult res;
    res.model_id = id;
    try {
        for (int i = 0; i < cfg.warmup_iters; ++i) forward(batch);
        res.raw_ms.reserve(static_cast<size_t>(cfg.measured_iters));
        for (int i = 0; i < cfg.measured_iters; ++i) {
            const auto t0 = clock::now();
            forward(batch);
            const auto t1 = clock::now();
            res.raw_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    } catch (const std::exception& e) {
        throw NumericError(concat("bench: model ", id, " failed forward: ", e.what()));
    }
    res.median_ms = percentile(res.raw_ms, 0.5);
    res.p95_ms = percentile(res.raw_ms, 0.95);
    res.throughput_seq_per_s = 1000.0 / res.median_ms * static_cast<double>(cfg.batch_size);
    return res;
}

std::vector<BenchResult> bench_suite(const std::vector<std::pair<std::string, BenchForward>>& models,
                                     const BenchConfig& cfg) {
    if (models.empty()) throw ConfigError("bench suite needs at least one model (the baseline)");
    std::vector<BenchResult> results;
    for (const auto& [id, fwd] : models) results.push_back(bench_model(id, fwd, cfg));
    const double baseline = results.front().median_ms;
    for (BenchResult& r : results) r.speedup = baseline / r.median_ms;
    return results;
}

std::string bench_table(const std::vector<BenchResult>& results,
                        const std::map<std::string, std::map<std::string, double>>* task_f1) {
    std::vector<std::string> task_ids;
    if (task_f1)
        for (const auto& [model, scores] : *task_f1)
            for (const auto& [task, f1] : scores)
                if (std::find(task_ids.begin(), task_ids.end(), task) == task_ids.end())
                    task_ids.push_back(task);

    std::ostringstream os;
    os << "Model                          | Speedup | Median ms | p95 ms  ";
    for (const std::string& t : task_ids) os << "| " << t << " F1 ";
    os << "\n";
    for (const BenchResult& r : results) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-30s | x%-6.2f | %9.3f | %7.3f ", r.model_id.c_str(),
                      r.speedup, r.median_ms, r.p95_ms);
        os << line;
        if (task_f1) {
            auto mit = task_f1->find(r.model_id);
            for (const std::string& t : task_ids) {
                if (mit != task_f1->end() && mit->second.count(t)) {
                    std::snprintf(line, sizeof(line), "| %8.2f ", mit->second.at(t) * 100.0);
                    os << line;
                } else {
                    os << "|      -   ";
                }
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace xlmt
