#pragma once

#include <functional>

#include "xlmt/batch.hpp"

namespace xlmt {

struct BenchConfig {
    int seq_len = 128;
    int batch_size = 32;
    int warmup_iters = 10;
    int measured_iters = 100;
    int thread_count = 0;  // 0 = leave as configured
    uint64_t seed = 20240807;

    void validate() const {
        if (seq_len < 2 || batch_size < 1 || warmup_iters < 0 || measured_iters < 1)
            throw ConfigError("bench config values must be positive");
    }
};

struct BenchResult {
    std::string model_id;
    double median_ms = 0.0;
    double p95_ms = 0.0;
    double throughput_seq_per_s = 0.0;
    double speedup = 1.0;  // baseline median / this median
    std::vector<double> raw_ms;
};

using BenchForward = std::function<void(const Batch&)>;

// Fully-populated random byte batch; identical for a given config so every
// model in a session is measured on the same input.
Batch bench_batch(const BenchConfig& cfg);

// Warmup iterations discarded; median and p95 over the measured iterations.
BenchResult bench_model(const std::string& id, const BenchForward& forward, const BenchConfig& cfg);

// First entry is the baseline; speedups are ratios of medians against it.
std::vector<BenchResult> bench_suite(const std::vector<std::pair<std::string, BenchForward>>& models,
                                     const BenchConfig& cfg);

std::string bench_table(const std::vector<BenchResult>& results,
                        const std::map<std::string, std::map<std::string, double>>* task_f1 = nullptr);

}  // namespace xlmt
