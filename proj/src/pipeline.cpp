#include "xlmt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "xlmt/rng.hpp"

namespace xlmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct AdamState {
    std::vector<Tensor*> params;
    std::vector<Tensor> m, v;
    int64_t step = 0;

    void attach(ClassifierModel& model) {
        params.clear();
        model.encoder.for_each([this](const std::string&, Tensor& t) { params.push_back(&t); });
        for (auto& [task, head] : model.heads) {
            params.push_back(&head.weight);
            params.push_back(&head.bias);
        }
        m.clear();
        v.clear();
        for (Tensor* p : params) {
            m.emplace_back(p->shape);
            v.emplace_back(p->shape);
        }
    }

    void update(const std::vector<const Tensor*>& grads, const TrainConfig& tc, double lr_t) {
        ++step;
        const double b1 = tc.beta1, b2 = tc.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = *grads[i];
            for (size_t j = 0; j < p.data.size(); ++j) {
                const double gj = static_cast<double>(g.data[j]);
                const double mj = b1 * static_cast<double>(m[i].data[j]) + (1.0 - b1) * gj;
                const double vj = b2 * static_cast<double>(v[i].data[j]) + (1.0 - b2) * gj * gj;
                m[i].data[j] = static_cast<scalar>(mj);
                v[i].data[j] = static_cast<scalar>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                p.data[j] -= static_cast<scalar>(lr_t * mhat /
                                                 (std::sqrt(vhat) + static_cast<double>(tc.adam_eps)));
            }
        }
    }
};

double lr_at(int64_t t, int64_t total, const TrainConfig& tc) {
    const int64_t warmup = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(tc.warmup_frac * static_cast<double>(total))));
    const double base = static_cast<double>(tc.lr);
    if (t <= warmup) return base * static_cast<double>(t) / static_cast<double>(warmup);
    if (total <= warmup) return base;
    return base * static_cast<double>(total - t + 1) / static_cast<double>(total - warmup);
}

Tensor column_sums(const Tensor& t) {
    Tensor out({t.dim(1)});
    for (int64_t i = 0; i < t.dim(0); ++i)
        for (int64_t j = 0; j < t.dim(1); ++j) out.data[static_cast<size_t>(j)] += t.at(i, j);
    return out;
}

double global_grad_norm(const EncoderParams& egrads, const std::map<std::string, TaskHead>& hgrads) {
    double sq = 0.0;
    egrads.for_each([&sq](const std::string&, const Tensor& t) {
        for (scalar v : t.data) sq += static_cast<double>(v) * static_cast<double>(v);
    });
    for (const auto& [task, head] : hgrads) {
        for (scalar v : head.weight.data) sq += static_cast<double>(v) * static_cast<double>(v);
        for (scalar v : head.bias.data) sq += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(sq);
}

void scale_grads(EncoderParams& egrads, std::map<std::string, TaskHead>& hgrads, double factor) {
    const scalar f = static_cast<scalar>(factor);
    egrads.for_each([f](const std::string&, Tensor& t) {
        for (scalar& v : t.data) v *= f;
    });
    for (auto& [task, head] : hgrads) {
        for (scalar& v : head.weight.data) v *= f;
        for (scalar& v : head.bias.data) v *= f;
    }
}

void observe_pooled(QuantSim& qs, const Tensor& pooled) {
    double mx = 0.0;
    for (scalar v : pooled.data) mx = std::max(mx, std::abs(static_cast<double>(v)));
    auto it = qs.observed.find(sites::pooled());
    if (it == qs.observed.end())
        qs.observed[sites::pooled()] = static_cast<float>(mx);
    else
        it->second = std::max(it->second, static_cast<float>(mx));
}

SeedInterval interval_of(const std::vector<double>& scores) {
    if (scores.size() == 1) return SeedInterval{scores[0], scores[0], scores[0]};
    return seed_interval(scores);
}

double mean_f1(const EvalReport& report) {
    double sum = 0.0;
    for (const auto& [task, score] : report.tasks) sum += score.macro_f1;
    return report.tasks.empty() ? 0.0 : sum / static_cast<double>(report.tasks.size());
}

}  // namespace

std::vector<Sample> filter_labeled(const std::vector<Sample>& samples, const std::vector<TaskSpec>& specs) {
    std::vector<Sample> kept;
    for (const Sample& s : samples) {
        bool any = false;
        for (const TaskSpec& spec : specs) {
            auto it = s.labels.find(spec.task_id);
            any = any || (it != s.labels.end() && it->second.present);
        }
        if (any) kept.push_back(s);
    }
    return kept;
}

std::vector<Sample> filter_language(const std::vector<Sample>& samples, const std::string& language) {
    std::vector<Sample> kept;
    for (const Sample& s : samples)
        if (s.language == language) kept.push_back(s);
    return kept;
}

TrainResult train(const ModelConfig& cfg, const std::vector<TaskSpec>& tasks,
                  const std::vector<Sample>& train_data, const std::vector<Sample>& eval_data,
                  const TrainConfig& tc, const DistillConfig* distill, const TeacherSet* teachers,
                  bool qat, const ClassifierModel* init_from) {
    cfg.validate();
    tc.validate();
    if (distill && !teachers) throw ConfigError("train: distillation configured without teachers");
    if (distill) distill->validate();

    const std::vector<Sample> data = filter_labeled(train_data, tasks);
    if (data.empty()) throw ValidationError("train: no labeled samples for the configured tasks");

    TrainResult result;
    result.model = init_from ? *init_from : ClassifierModel::init(cfg, tc.seed);
    ClassifierModel& model = result.model;
    if (teachers) teachers->validate(tasks);

    AdamState adam;
    adam.attach(model);

    const int64_t n = static_cast<int64_t>(data.size());
    const int64_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    const int64_t total_steps = steps_per_epoch * tc.epochs;

    QuantSim qs;
    if (qat) {
        qs.simulate = true;
        qs.observe = true;
        std::vector<Batch> calib = calibration_batches(data, tasks, cfg.max_seq_len, 8, tc.batch_size);
        qs.scales = calibrate_activations(model, calib);
    }

    int64_t step = 0;
    bool stop = false;
    for (int epoch = 0; epoch < tc.epochs && !stop; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_rng(mix64(tc.seed, 0xE70C, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (int64_t start = 0; start < n && !stop; start += tc.batch_size) {
            const int64_t end = std::min(n, start + tc.batch_size);
            std::vector<Sample> slice;
            slice.reserve(static_cast<size_t>(end - start));
            for (int64_t i = start; i < end; ++i)
                slice.push_back(data[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            Batch batch = samples_to_batch(slice, tasks, cfg.max_seq_len);

            ForwardOptions opts;
            opts.training = true;
            opts.dropout_seed = mix64(tc.seed, 0xD80, static_cast<uint64_t>(step));
            ForwardCache cache;
            Tensor pooled = encode_forward(model.encoder, batch, opts, &cache, qat ? &qs : nullptr);

            Tensor pooled_used = pooled;
            std::vector<uint8_t> pooled_pass;
            std::map<std::string, TaskHead> fq_heads;
            if (qat) {
                observe_pooled(qs, pooled);
                pooled_used = fake_quant_activation(pooled, qs.scales.at(sites::pooled()), &pooled_pass);
                for (const auto& [task, head] : model.heads)
                    fq_heads.emplace(task, TaskHead{fake_quant_weight(head.weight), head.bias});
            }
            const std::map<std::string, TaskHead>& heads_used = qat ? fq_heads : model.heads;

            std::map<std::string, Tensor> logits;
            for (const TaskSpec& spec : tasks)
                logits.emplace(spec.task_id, head_logits(pooled_used, heads_used.at(spec.task_id)));

            TeacherOutputs teacher_logits;
            if (teachers) teacher_logits = teacher_predict(*teachers, tasks, batch);

            double loss;
            std::map<std::string, Tensor> dlogits;
            if (distill) {
                loss = kd_loss(logits, teacher_logits, batch.labels, tasks, *distill).loss;
                dlogits = kd_loss_backward(logits, teacher_logits, batch.labels, tasks, *distill);
            } else {
                loss = multitask_loss(logits, batch.labels, tasks).loss;
                dlogits = multitask_loss_backward(logits, batch.labels, tasks);
            }
            if (!std::isfinite(loss)) {
                result.diverged = true;
                stop = true;
                break;  // abort before the update: the model keeps its last finite state
            }
            loss_sum += loss;
            ++loss_count;

            std::map<std::string, TaskHead> head_grads;
            Tensor d_pooled(pooled.shape);
            for (const TaskSpec& spec : tasks) {
                const Tensor& dz = dlogits.at(spec.task_id);
                TaskHead hg;
                hg.weight = matmul_tn(pooled_used, dz);
                hg.bias = column_sums(dz);
                head_grads.emplace(spec.task_id, std::move(hg));
                Tensor dp = matmul_nt(dz, heads_used.at(spec.task_id).weight);
                for (size_t i = 0; i < d_pooled.data.size(); ++i) d_pooled.data[i] += dp.data[i];
            }
            if (qat)
                for (size_t i = 0; i < d_pooled.data.size(); ++i)
                    if (!pooled_pass[i]) d_pooled.data[i] = 0;

            EncoderParams egrads = encode_backward(model.encoder, cache, d_pooled);

            const double norm = global_grad_norm(egrads, head_grads);
            if (!std::isfinite(norm)) {
                result.diverged = true;
                stop = true;
                break;
            }
            if (norm > static_cast<double>(tc.clip_norm))
                scale_grads(egrads, head_grads, static_cast<double>(tc.clip_norm) / norm);

            ++step;
            const double lr_t = lr_at(step, total_steps, tc);
            std::vector<const Tensor*> grads;
            egrads.for_each([&grads](const std::string&, const Tensor& t) { grads.push_back(&t); });
            for (const auto& [task, hg] : head_grads) {
                grads.push_back(&hg.weight);
                grads.push_back(&hg.bias);
            }
            adam.update(grads, tc, lr_t);

            if (qat) update_activation_scales(qs, tc.qat_ema_decay);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.train_loss = loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0;
        if (!eval_data.empty() && !stop) {
            EvalReport report = qat ? evaluate_fake_quant(model, qs.scales, eval_data)
                                    : evaluate_model(model, eval_data);
            for (const auto& [task, score] : report.tasks) em.eval_macro_f1[task] = score.macro_f1;
        }
        result.metrics.push_back(std::move(em));
    }

    if (qat) result.act_scales = qs.scales;
    return result;
}

EvalReport evaluate_model(const ClassifierModel& model, const std::vector<Sample>& samples,
                          int batch_size) {
    auto forward = [&model](const Batch& b) { return model.predict_logits(b); };
    return evaluate(forward, samples, model.tasks, model.encoder.config.max_seq_len, batch_size);
}

EvalReport evaluate_fake_quant(const ClassifierModel& model, const std::map<std::string, float>& scales,
                               const std::vector<Sample>& samples, int batch_size) {
    auto forward = [&model, &scales](const Batch& b) {
        QuantSim qs;
        qs.simulate = true;
        qs.scales = scales;
        Tensor pooled = encode_forward(model.encoder, b, ForwardOptions{}, nullptr, &qs);
        Tensor pooled_fq = fake_quant_activation(pooled, scales.at(sites::pooled()));
        std::map<std::string, Tensor> logits;
        for (const TaskSpec& spec : model.tasks) {
            TaskHead fq{fake_quant_weight(model.head(spec.task_id).weight), model.head(spec.task_id).bias};
            logits.emplace(spec.task_id, head_logits(pooled_fq, fq));
        }
        return logits;
    };
    return evaluate(forward, samples, model.tasks, model.encoder.config.max_seq_len, batch_size);
}

EvalReport evaluate_int8(const QuantModel& qm, const std::vector<Sample>& samples, int batch_size) {
    auto forward = [&qm](const Batch& b) { return int8_infer(qm, b); };
    return evaluate(forward, samples, qm.tasks, qm.config.max_seq_len, batch_size);
}

std::vector<Batch> calibration_batches(const std::vector<Sample>& samples,
                                       const std::vector<TaskSpec>& specs, int max_seq_len, int count,
                                       int batch_size) {
    std::vector<Batch> batches;
    for (int b = 0; b < count; ++b) {
        const size_t start = static_cast<size_t>(b) * static_cast<size_t>(batch_size);
        if (start >= samples.size()) break;
        const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
        std::vector<Sample> slice(samples.begin() + static_cast<int64_t>(start),
                                  samples.begin() + static_cast<int64_t>(end));
        batches.push_back(samples_to_batch(slice, specs, max_seq_len));
    }
    if (batches.empty()) throw ConfigError("calibration: dataset has no samples");
    return batches;
}

StageCache::StageCache(std::string dir) : dir_(std::move(dir)) {
    if (!dir_.empty()) fs::create_directories(dir_);
}

uint64_t StageCache::key_hash(const json& key) { return fnv1a64(key.dump()); }

std::string StageCache::path_for(const json& key, const std::string& stem) const {
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(key_hash(key)));
    return dir_ + "/" + stem + "-" + hex + ".ckpt";
}

ClassifierModel StageCache::get_model(const json& key, const std::string& stem,
                                      const std::function<ClassifierModel()>& build) {
    if (dir_.empty()) {
        ++misses_;
        return build();
    }
    const std::string path = path_for(key, stem);
    if (fs::exists(path)) {
        try {
            ClassifierModel model = model_from_checkpoint(load_checkpoint(path));
            ++hits_;
            return model;
        } catch (const std::exception& e) {
            std::cerr << "warning: rebuilding stage " << stem << ": " << e.what() << "\n";
        }
    }
    ClassifierModel model = build();
    save_checkpoint(to_checkpoint(model), path);
    ++misses_;
    return model;
}

QuantModel StageCache::get_quant(const json& key, const std::string& stem,
                                 const std::function<QuantModel()>& build) {
    if (dir_.empty()) {
        ++misses_;
        return build();
    }
    const std::string path = path_for(key, stem);
    if (fs::exists(path)) {
        try {
            QuantModel qm = quant_from_checkpoint(load_checkpoint(path));
            ++hits_;
            return qm;
        } catch (const std::exception& e) {
            std::cerr << "warning: rebuilding stage " << stem << ": " << e.what() << "\n";
        }
    }
    QuantModel qm = build();
    save_checkpoint(to_checkpoint(qm), path);
    ++misses_;
    return qm;
}

namespace {

json stage_key(const RunConfig& cfg, const std::string& stage, const json& extra) {
    json key;
    key["stage"] = stage;
    key["corpus"] = cfg.corpus;
    key["model"] = cfg.model;
    key["train"] = cfg.train;
    key["extra"] = extra;
    return key;
}

TrainConfig with_seed(TrainConfig tc, uint64_t seed) {
    tc.seed = seed;
    return tc;
}

}  // namespace

TeacherSet train_task_teachers(const RunConfig& cfg, const std::vector<Sample>& train_data,
                               const std::vector<Sample>& eval_data, StageCache& cache) {
    TeacherSet teachers;
    for (size_t t = 0; t < cfg.corpus.tasks.size(); ++t) {
        const TaskSpec& spec = cfg.corpus.tasks[t];
        const std::vector<TaskSpec> single = {spec};
        const uint64_t seed = mix64(cfg.seed, 0x7EAC, t);
        json key = stage_key(cfg, "teacher", json{{"task", spec.task_id}, {"seed", seed}});
        ClassifierModel teacher = cache.get_model(key, concat("teacher-", spec.task_id), [&]() {
            return train(cfg.model, single, filter_labeled(train_data, single), eval_data,
                         with_seed(cfg.train, seed))
                .model;
        });
        teachers.assignment[spec.task_id] = teachers.models.size();
        teachers.models.push_back(std::move(teacher));
    }
    return teachers;
}

XlmMonoReport recipe_xlm_vs_mono(const RunConfig& cfg) {
    Corpus corpus = generate(cfg.corpus);
    StageCache cache(cfg.output_dir.empty() ? "" : cfg.output_dir + "/cache");
    const std::vector<TaskSpec>& tasks = cfg.corpus.tasks;

    std::vector<std::string> languages;
    for (int l = 0; l < cfg.corpus.num_languages; ++l) languages.push_back(language_name(l));

    // cross-lingual models, one per seed, each evaluated on every language slice
    std::map<std::string, std::vector<double>> xlm_scores;
    for (int s = 0; s < cfg.recipe.seeds; ++s) {
        const uint64_t seed = mix64(cfg.seed, 0x316D, static_cast<uint64_t>(s));
        json key = stage_key(cfg, "xlm", json{{"seed", seed}});
        ClassifierModel model = cache.get_model(key, concat("xlm-s", s), [&]() {
            return train(cfg.model, tasks, corpus.train, corpus.eval, with_seed(cfg.train, seed)).model;
        });
        for (const std::string& lang : languages) {
            std::vector<Sample> slice = filter_language(corpus.eval, lang);
            if (slice.empty()) continue;
            xlm_scores[lang].push_back(mean_f1(evaluate_model(model, slice)));
        }
    }

    XlmMonoReport report;
    for (const std::string& lang : languages) {
        std::vector<Sample> train_slice = filter_language(corpus.train, lang);
        std::vector<Sample> eval_slice = filter_language(corpus.eval, lang);
        if (train_slice.empty() || eval_slice.empty()) {
            std::cerr << "warning: language " << lang << " has no samples, skipped\n";
            continue;
        }
        std::vector<double> mono_scores;
        for (int s = 0; s < cfg.recipe.seeds; ++s) {
            const uint64_t seed = mix64(cfg.seed, 0x3040, static_cast<uint64_t>(s));
            json key = stage_key(cfg, "mono", json{{"language", lang}, {"seed", seed}});
            ClassifierModel model = cache.get_model(key, concat("mono-", lang, "-s", s), [&]() {
                return train(cfg.model, tasks, train_slice, eval_slice, with_seed(cfg.train, seed)).model;
            });
            mono_scores.push_back(mean_f1(evaluate_model(model, eval_slice)));
        }
        XlmMonoRow row;
        row.language = lang;
        row.cross_lingual = interval_of(xlm_scores.at(lang));
        row.monolingual = interval_of(mono_scores);
        row.verdict = compare_means(row.cross_lingual, row.monolingual);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string XlmMonoReport::table() const {
    std::ostringstream os;
    os << "Eval Lang | Cross-lingual F1 | Monolingual F1 | Verdict\n";
    for (const XlmMonoRow& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-9s | %7.2f +-%5.2f | %7.2f +-%5.2f | %s\n",
                      r.language.c_str(), r.cross_lingual.mean * 100.0, r.cross_lingual.half_width() * 100.0,
                      r.monolingual.mean * 100.0, r.monolingual.half_width() * 100.0,
                      verdict_name(r.verdict));
        os << line;
    }
    return os.str();
}

MtlReport recipe_mtl_vs_single(const RunConfig& cfg) {
    Corpus corpus = generate(cfg.corpus);
    StageCache cache(cfg.output_dir.empty() ? "" : cfg.output_dir + "/cache");
    const std::vector<TaskSpec>& tasks = cfg.corpus.tasks;

    std::map<std::string, std::vector<double>> multi_scores, single_scores;
    for (int s = 0; s < cfg.recipe.seeds; ++s) {
        const uint64_t seed = mix64(cfg.seed, 0x4716, static_cast<uint64_t>(s));
        json key = stage_key(cfg, "mtl", json{{"seed", seed}});
        ClassifierModel multi = cache.get_model(key, concat("mtl-s", s), [&]() {
            return train(cfg.model, tasks, corpus.train, corpus.eval, with_seed(cfg.train, seed)).model;
        });
        EvalReport multi_report = evaluate_model(multi, corpus.eval);
        for (const auto& [task, score] : multi_report.tasks) multi_scores[task].push_back(score.macro_f1);

        for (const TaskSpec& spec : tasks) {
            const std::vector<TaskSpec> single = {spec};
            json skey = stage_key(cfg, "single", json{{"task", spec.task_id}, {"seed", seed}});
            ClassifierModel model = cache.get_model(skey, concat("single-", spec.task_id, "-s", s), [&]() {
                return train(cfg.model, single, filter_labeled(corpus.train, single), corpus.eval,
                             with_seed(cfg.train, seed))
                    .model;
            });
            EvalReport report = evaluate_model(model, corpus.eval);
            single_scores[spec.task_id].push_back(report.tasks.at(spec.task_id).macro_f1);
        }
    }

    MtlReport report;
    for (const TaskSpec& spec : tasks) {
        MtlRow row;
        row.task = spec.task_id;
        row.multi_task = interval_of(multi_scores.at(spec.task_id));
        row.single_task = interval_of(single_scores.at(spec.task_id));
        row.verdict = compare_means(row.multi_task, row.single_task);
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string MtlReport::table() const {
    std::ostringstream os;
    os << "Task   | Multi-task F1    | Single-task F1   | Verdict\n";
    for (const MtlRow& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-6s | %7.2f +-%5.2f | %7.2f +-%5.2f | %s\n", r.task.c_str(),
                      r.multi_task.mean * 100.0, r.multi_task.half_width() * 100.0,
                      r.single_task.mean * 100.0, r.single_task.half_width() * 100.0,
                      verdict_name(r.verdict));
        os << line;
    }
    return os.str();
}

CompressReport recipe_compress(const RunConfig& cfg) {
    Corpus corpus = generate(cfg.corpus);
    StageCache cache(cfg.output_dir.empty() ? "" : cfg.output_dir + "/cache");
    const std::vector<TaskSpec>& tasks = cfg.corpus.tasks;

    const int full_layers = cfg.model.layers;
    const int half_layers = cfg.recipe.student_layers > 0 ? cfg.recipe.student_layers
                                                          : std::max(1, full_layers / 2);
    const int quarter_layers = cfg.recipe.quarter_layers > 0 ? cfg.recipe.quarter_layers
                                                             : std::max(1, full_layers / 4);

    TeacherSet teachers = train_task_teachers(cfg, corpus.train, corpus.eval, cache);
    DistillConfig distill = cfg.distill;  // defaults alpha=1, F=2 unless configured

    std::map<std::string, std::map<std::string, std::vector<double>>> scores;  // model -> task -> seeds
    ClassifierModel bench_full, bench_half;
    QuantModel bench_int8;

    for (int s = 0; s < cfg.recipe.seeds; ++s) {
        const uint64_t seed = mix64(cfg.seed, 0xC0B9, static_cast<uint64_t>(s));

        json full_key = stage_key(cfg, "compress-full", json{{"seed", seed}});
        ClassifierModel full = cache.get_model(full_key, concat("full-s", s), [&]() {
            return train(cfg.model, tasks, corpus.train, corpus.eval, with_seed(cfg.train, seed)).model;
        });
        const std::string full_hash = concat(StageCache::key_hash(full_key));

        PruneSpec half_spec;
        half_spec.keep_layers = uniform_keep_layers(full_layers, half_layers);
        ClassifierModel half_init = prune(full, half_spec);
        PruneSpec quarter_spec;
        quarter_spec.keep_layers = uniform_keep_layers(full_layers, quarter_layers);
        ClassifierModel quarter_init = prune(full, quarter_spec);

        json half_plain_key =
            stage_key(cfg, "compress-half-plain", json{{"seed", seed}, {"parent", full_hash}});
        ClassifierModel half_plain = cache.get_model(half_plain_key, concat("half-plain-s", s), [&]() {
            return train(half_init.encoder.config, tasks, corpus.train, corpus.eval,
                         with_seed(cfg.train, mix64(seed, 1)), nullptr, nullptr, false, &half_init)
                .model;
        });

        json half_kd_key = stage_key(cfg, "compress-half-kd",
                                     json{{"seed", seed}, {"parent", full_hash}, {"distill", distill}});
        ClassifierModel half_kd = cache.get_model(half_kd_key, concat("half-kd-s", s), [&]() {
            return train(half_init.encoder.config, tasks, corpus.train, corpus.eval,
                         with_seed(cfg.train, mix64(seed, 2)), &distill, &teachers, false, &half_init)
                .model;
        });

        json quarter_key =
            stage_key(cfg, "compress-quarter-plain", json{{"seed", seed}, {"parent", full_hash}});
        ClassifierModel quarter_plain = cache.get_model(quarter_key, concat("quarter-plain-s", s), [&]() {
            return train(quarter_init.encoder.config, tasks, corpus.train, corpus.eval,
                         with_seed(cfg.train, mix64(seed, 3)), nullptr, nullptr, false, &quarter_init)
                .model;
        });

        json ptq_key = stage_key(cfg, "compress-ptq", json{{"seed", seed}, {"parent", full_hash}});
        QuantModel ptq = cache.get_quant(ptq_key, concat("half-int8-ptq-s", s), [&]() {
            std::vector<Batch> calib = calibration_batches(
                filter_labeled(corpus.train, tasks), tasks, cfg.model.max_seq_len,
                cfg.quant.calibration_batches, cfg.train.batch_size);
            return quantize_model(half_kd, calibrate_activations(half_kd, calib));
        });

        json qat_key = stage_key(cfg, "compress-qat",
                                 json{{"seed", seed}, {"parent", full_hash}, {"distill", distill}});
        QuantModel qat = cache.get_quant(qat_key, concat("half-int8-qat-s", s), [&]() {
            TrainResult r = train(half_init.encoder.config, tasks, corpus.train, corpus.eval,
                                  with_seed(cfg.train, mix64(seed, 4)), &distill, &teachers, true,
                                  &half_init);
            return quantize_model(r.model, r.act_scales);
        });

        auto record = [&](const std::string& id, const EvalReport& report) {
            for (const auto& [task, score] : report.tasks) scores[id][task].push_back(score.macro_f1);
        };
        record("full (fp32)", evaluate_model(full, corpus.eval));
        record("half (fp32, no teacher)", evaluate_model(half_plain, corpus.eval));
        record("half (fp32, with teacher)", evaluate_model(half_kd, corpus.eval));
        record("quarter (fp32, no teacher)", evaluate_model(quarter_plain, corpus.eval));
        record("half (int8 ptq)", evaluate_int8(ptq, corpus.eval));
        record("half (int8 qat)", evaluate_int8(qat, corpus.eval));

        if (s == 0) {
            bench_full = full;
            bench_half = half_kd;
            bench_int8 = ptq;
        }
    }

    CompressReport report;
    report.cache_hits = cache.hits();

    BenchConfig bc = cfg.bench;
    std::vector<std::pair<std::string, BenchForward>> bench_models;
    bench_models.emplace_back("full (fp32)",
                              [&bench_full](const Batch& b) { (void)bench_full.predict_logits(b); });
    bench_models.emplace_back("half (fp32, with teacher)",
                              [&bench_half](const Batch& b) { (void)bench_half.predict_logits(b); });
    bench_models.emplace_back("half (int8 ptq)",
                              [&bench_int8](const Batch& b) { (void)int8_infer(bench_int8, b); });
    report.bench = bench_suite(bench_models, bc);

    const std::vector<std::string> order = {"full (fp32)",
                                            "half (fp32, no teacher)",
                                            "half (fp32, with teacher)",
                                            "quarter (fp32, no teacher)",
                                            "half (int8 ptq)",
                                            "half (int8 qat)"};
    for (const std::string& id : order) {
        CompressRow row;
        row.model_id = id;
        for (const auto& [task, seed_scores] : scores.at(id)) row.task_f1[task] = interval_of(seed_scores);
        for (const BenchResult& b : report.bench)
            if (b.model_id == id) row.speedup = b.speedup;
        report.rows.push_back(std::move(row));
    }
    return report;
}

std::string CompressReport::table() const {
    std::vector<std::string> task_ids;
    for (const CompressRow& r : rows)
        for (const auto& [task, iv] : r.task_f1)
            if (std::find(task_ids.begin(), task_ids.end(), task) == task_ids.end())
                task_ids.push_back(task);
    std::sort(task_ids.begin(), task_ids.end());

    std::ostringstream os;
    os << "Model                          | Speedup ";
    for (const std::string& t : task_ids) os << "| " << t << " F1 ";
    os << "\n";
    for (const CompressRow& r : rows) {
        char buf[64];
        if (r.speedup > 0.0)
            std::snprintf(buf, sizeof(buf), "x%-6.2f", r.speedup);
        else
            std::snprintf(buf, sizeof(buf), "   -   ");
        os << (r.model_id + std::string(r.model_id.size() < 30 ? 30 - r.model_id.size() : 0, ' ')) << " | "
           << buf << " ";
        for (const std::string& t : task_ids) {
            auto it = r.task_f1.find(t);
            if (it == r.task_f1.end()) {
                os << "|    -     ";
            } else {
                std::snprintf(buf, sizeof(buf), "| %8.2f ", it->second.mean * 100.0);
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace xlmt
