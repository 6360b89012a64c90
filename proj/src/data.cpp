#include "xlmt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>

#include "json.hpp"
#include "xlmt/rng.hpp"

namespace xlmt {

namespace {

using nlohmann::json;

constexpr uint64_t kRenderStream = 0x52454e44;
constexpr uint64_t kStemStream = 0x5354454d;

const char* kLanguagePool[] = {"en", "fr", "de", "ja", "es", "pt", "it", "ko",
                               "zh", "ru", "pl", "nl", "sv", "tr", "ar", "hi"};

double phi(double x) { return 0.5 * std::erfc(-x * 0.7071067811865476); }

int bin_of(double u, const std::vector<double>& priors) {
    double acc = 0.0;
    for (size_t c = 0; c < priors.size(); ++c) {
        acc += priors[c];
        if (u < acc) return static_cast<int>(c);
    }
    return static_cast<int>(priors.size()) - 1;
}

// Symbol pool for language alphabets: ascii letters, digits, and Latin-1
// supplement letters (2-byte UTF-8) so some languages read non-ascii.
std::vector<std::string> symbol_pool() {
    std::vector<std::string> pool;
    for (char c = 'a'; c <= 'z'; ++c) pool.push_back(std::string(1, c));
    for (char c = 'A'; c <= 'Z'; ++c) pool.push_back(std::string(1, c));
    for (char c = '0'; c <= '9'; ++c) pool.push_back(std::string(1, c));
    for (int cp = 0xC0; cp <= 0xFF; ++cp) {
        if (cp == 0xD7 || cp == 0xF7) continue;  // multiplication/division signs
        std::string s;
        s += static_cast<char>(0xC0 | (cp >> 6));
        s += static_cast<char>(0x80 | (cp & 0x3F));
        pool.push_back(s);
    }
    return pool;
}

struct Renderer {
    uint64_t key;          // derived from the corpus seed
    bool shared_signal;
    std::vector<std::vector<std::string>> alphabets;        // per language
    std::vector<std::vector<std::string>> fillers;          // per language
    std::map<std::pair<int, int>, std::string> stem_cores;  // (task index, class) -> shared core

    Renderer(const CorpusSpec& spec) : key(mix64(spec.seed, kRenderStream)), shared_signal(spec.cross_lingual_signal) {
        const std::vector<std::string> pool = symbol_pool();
        alphabets.resize(static_cast<size_t>(spec.num_languages));
        fillers.resize(static_cast<size_t>(spec.num_languages));
        for (int l = 0; l < spec.num_languages; ++l) {
            Rng rng(mix64(key, 0xA1FA, static_cast<uint64_t>(l)));
            std::vector<std::string> shuffled = pool;
            rng.shuffle(shuffled);
            shuffled.resize(12);
            alphabets[static_cast<size_t>(l)] = shuffled;
            for (int f = 0; f < 16; ++f) {
                const int64_t len = 3 + rng.below(5);
                std::string w;
                for (int64_t i = 0; i < len; ++i)
                    w += shuffled[static_cast<size_t>(rng.below(12))];
                fillers[static_cast<size_t>(l)].push_back(w);
            }
        }
        // shared stem cores, distinct by construction
        std::set<std::string> used;
        Rng rng(mix64(spec.seed, kStemStream));
        for (size_t t = 0; t < spec.tasks.size(); ++t) {
            for (int c = 0; c < spec.tasks[t].num_classes; ++c) {
                std::string core;
                do {
                    core.clear();
                    for (int i = 0; i < 4; ++i) core += static_cast<char>('a' + rng.below(26));
                } while (!used.insert(core).second);
                stem_cores[{static_cast<int>(t), c}] = core;
            }
        }
    }

    // Class index whose stem this language renders for the given class: the
    // identity when cross-lingual signal is on, a per-language rotation otherwise.
    int rendered_class(int lang, int task_idx, int cls, int num_classes) const {
        if (shared_signal) return cls;
        const int shift = static_cast<int>(mix64(key, 0x0FF5E7, static_cast<uint64_t>(lang * 31 + task_idx)) %
                                           static_cast<uint64_t>(num_classes));
        return (cls + shift) % num_classes;
    }

    std::string stem_word(int lang, int task_idx, int cls, int num_classes) const {
        const int rc = rendered_class(lang, task_idx, cls, num_classes);
        const std::string& core = stem_cores.at({task_idx, rc});
        const std::vector<std::string>& alpha = alphabets[static_cast<size_t>(lang)];
        const uint64_t h = mix64(key, static_cast<uint64_t>(lang), static_cast<uint64_t>(task_idx * 64 + rc));
        std::string w;
        const int pre = 1 + static_cast<int>(h % 2);
        const int post = 1 + static_cast<int>((h >> 8) % 2);
        for (int i = 0; i < pre; ++i) w += alpha[(h >> (16 + 4 * i)) % 12];
        w += core;
        for (int i = 0; i < post; ++i) w += alpha[(h >> (32 + 4 * i)) % 12];
        return w;
    }

    const std::string& filler(int lang, int64_t pick) const {
        return fillers[static_cast<size_t>(lang)][static_cast<size_t>(pick)];
    }
};

}  // namespace

std::string language_name(int index) {
    if (index < 16) return kLanguagePool[index];
    return concat("l", index);
}

CorpusSpec CorpusSpec::defaults() {
    CorpusSpec spec;
    spec.tasks = {TaskSpec{"task1", TaskKind::multiclass, 6}, TaskSpec{"task2", TaskKind::multiclass, 4},
                  TaskSpec{"task3", TaskKind::multilabel, 9}};
    spec.samples_per_task = {{"task1", 4000}, {"task2", 3000}, {"task3", 3000}};
    spec.class_priors["task1"] = {0.3637, 0.2724, 0.1505, 0.1023, 0.0729, 0.0382};
    spec.class_priors["task2"] = {0.6574, 0.2834, 0.0340, 0.0252};
    // multilabel positive rates
    spec.class_priors["task3"] = {0.2635, 0.1698, 0.1776, 0.0086, 0.0593, 0.3503, 0.0893, 0.0198, 0.0154};
    std::vector<int> all_langs, partial;
    for (int l = 0; l < spec.num_languages; ++l) all_langs.push_back(l);
    for (int l = 0; l < spec.num_languages * 3 / 4; ++l) partial.push_back(l);
    spec.task_coverage = {{"task1", all_langs}, {"task2", partial}, {"task3", partial}};
    return spec;
}

const TaskSpec& CorpusSpec::task(const std::string& id) const {
    for (const TaskSpec& t : tasks)
        if (t.task_id == id) return t;
    throw ConfigError(concat("corpus spec has no task ", id));
}

void CorpusSpec::validate() const {
    if (num_languages < 1) throw ConfigError("corpus: num_languages must be >= 1");
    if (tasks.empty()) throw ConfigError("corpus: no tasks configured");
    if (label_noise < 0.0f || label_noise >= 0.5f)
        throw ConfigError("corpus: label_noise must be in [0, 0.5)");
    if (task_correlation < 0.0 || task_correlation > 1.0)
        throw ConfigError("corpus: task_correlation must be in [0, 1]");
    for (const TaskSpec& t : tasks) {
        t.validate();
        auto pit = class_priors.find(t.task_id);
        if (pit == class_priors.end())
            throw ConfigError(concat("corpus: no class priors for task ", t.task_id));
        if (static_cast<int>(pit->second.size()) != t.num_classes)
            throw ConfigError(concat("corpus: priors for task ", t.task_id, " need ", t.num_classes,
                                     " entries"));
        if (t.kind == TaskKind::multiclass) {
            double sum = 0.0;
            for (double p : pit->second) {
                if (p < 0.0) throw ConfigError(concat("corpus: negative prior in task ", t.task_id));
                sum += p;
            }
            if (std::abs(sum - 1.0) > 1e-6)
                throw ConfigError(concat("corpus: priors for task ", t.task_id, " sum to ", sum));
        } else {
            for (double p : pit->second)
                if (p < 0.0 || p > 1.0)
                    throw ConfigError(concat("corpus: positive rate outside [0,1] in task ", t.task_id));
        }
        auto cit = task_coverage.find(t.task_id);
        if (cit == task_coverage.end() || cit->second.empty())
            throw ConfigError(concat("corpus: task ", t.task_id, " has an empty language coverage set"));
        for (int l : cit->second)
            if (l < 0 || l >= num_languages)
                throw ConfigError(concat("corpus: coverage language ", l, " outside [0,", num_languages, ")"));
        if (samples_per_task.find(t.task_id) == samples_per_task.end())
            throw ConfigError(concat("corpus: no sample count for task ", t.task_id));
    }
}

Corpus generate(const CorpusSpec& spec, GenerationTrace* trace) {
    spec.validate();
    Renderer renderer(spec);
    Rng rng(mix64(spec.seed, 0xD0C5));

    int64_t total = 0;
    for (const auto& [task, n] : spec.samples_per_task) total = std::max(total, n);

    // find the multilabel task(s) latent layout: task1/task2 use the coupled
    // pair of gaussian coordinates, every other latent coordinate is its own
    // uniform draw
    std::vector<Sample> docs;
    docs.reserve(static_cast<size_t>(total));
    if (trace) {
        trace->clean_labels.clear();
        trace->latents.clear();
    }

    const double rho = spec.task_correlation;
    for (int64_t i = 0; i < total; ++i) {
        const int lang = static_cast<int>(i % spec.num_languages);
        Sample sample;
        sample.language = language_name(lang);

        const double n0 = rng.normal();
        const double n1 = rng.normal();
        const double u1 = phi(n0);
        const double u2 = phi(rho * n0 + std::sqrt(1.0 - rho * rho) * n1);
        std::vector<double> latent = {u1, u2};

        std::map<std::string, SampleLabel> clean;
        std::vector<std::string> words;
        for (size_t t = 0; t < spec.tasks.size(); ++t) {
            const TaskSpec& task = spec.tasks[t];
            const std::vector<double>& priors = spec.class_priors.at(task.task_id);
            SampleLabel lab;
            if (task.kind == TaskKind::multiclass) {
                const double u = t == 0 ? u1 : (t == 1 ? u2 : rng.uniform());
                if (t > 1) latent.push_back(u);
                lab.class_id = bin_of(u, priors);
                const int reps = 2 + static_cast<int>(rng.below(2));
                for (int r = 0; r < reps; ++r)
                    words.push_back(renderer.stem_word(lang, static_cast<int>(t), lab.class_id,
                                                       task.num_classes));
            } else {
                lab.bits.resize(static_cast<size_t>(task.num_classes), 0);
                for (int c = 0; c < task.num_classes; ++c) {
                    const double u = rng.uniform();
                    latent.push_back(u);
                    if (u < priors[static_cast<size_t>(c)]) {
                        lab.bits[static_cast<size_t>(c)] = 1;
                        words.push_back(renderer.stem_word(lang, static_cast<int>(t), c, task.num_classes));
                    }
                }
            }
            lab.present = true;
            clean[task.task_id] = lab;
        }

        const int64_t n_fillers = 3 + rng.below(4);
        for (int64_t f = 0; f < n_fillers; ++f) words.push_back(renderer.filler(lang, rng.below(16)));
        rng.shuffle(words);
        for (size_t w = 0; w < words.size(); ++w) {
            if (w) sample.text += ' ';
            sample.text += words[w];
        }

        // labels: coverage and quota decide presence; noise corrupts the kept ones
        for (size_t t = 0; t < spec.tasks.size(); ++t) {
            const TaskSpec& task = spec.tasks[t];
            const std::vector<int>& cov = spec.task_coverage.at(task.task_id);
            const bool covered = std::find(cov.begin(), cov.end(), lang) != cov.end();
            const bool in_quota = i < spec.samples_per_task.at(task.task_id);
            SampleLabel lab = clean.at(task.task_id);
            if (!covered || !in_quota) {
                lab.present = false;
                lab.class_id = 0;
                std::fill(lab.bits.begin(), lab.bits.end(), uint8_t(0));
            } else if (task.kind == TaskKind::multiclass) {
                if (static_cast<float>(rng.uniform()) < spec.label_noise) {
                    const int other = static_cast<int>(rng.below(task.num_classes - 1));
                    lab.class_id = other >= lab.class_id ? other + 1 : other;
                }
            } else {
                for (int c = 0; c < task.num_classes; ++c)
                    if (static_cast<float>(rng.uniform()) < spec.label_noise)
                        lab.bits[static_cast<size_t>(c)] ^= 1;
            }
            sample.labels[task.task_id] = lab;
        }

        if (trace) {
            trace->clean_labels.push_back(clean);
            trace->latents.push_back(latent);
        }
        docs.push_back(std::move(sample));
    }

    // 90/10 split, stratified by (language, task1 label): every 10th doc of a
    // cell goes to eval
    Corpus corpus;
    const std::string& strat_task = spec.tasks.front().task_id;
    std::map<std::string, int64_t> cell_counts;
    for (Sample& doc : docs) {
        const SampleLabel& lab = doc.labels.at(strat_task);
        const std::string cell = concat(doc.language, "|", lab.present ? lab.class_id : -1);
        const int64_t seen = cell_counts[cell]++;
        if (seen % 10 == 9)
            corpus.eval.push_back(std::move(doc));
        else
            corpus.train.push_back(std::move(doc));
    }
    return corpus;
}

void write_dataset(const std::vector<Sample>& samples, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError(concat("cannot open ", path, " for writing"));
    for (const Sample& s : samples) {
        json j;
        j["text"] = s.text;
        j["language"] = s.language;
        json labels = json::object();
        for (const auto& [task, lab] : s.labels) {
            if (!lab.present) continue;
            if (lab.bits.empty())
                labels[task] = lab.class_id;
            else {
                json arr = json::array();
                for (uint8_t b : lab.bits) arr.push_back(static_cast<int>(b));
                labels[task] = arr;
            }
        }
        j["labels"] = labels;
        out << j.dump() << '\n';
    }
    if (!out) throw IoError(concat("write failed for ", path));
}

std::vector<Sample> read_dataset(const std::string& path, const std::vector<TaskSpec>* expected) {
    std::ifstream in(path);
    if (!in) throw IoError(concat("cannot open ", path));
    std::vector<Sample> samples;
    std::string line;
    int64_t line_no = 0;
    std::set<std::string> warned;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw IoError(concat(path, ":", line_no, ": malformed record: ", e.what()));
        }
        if (!j.is_object() || !j.contains("text") || !j.contains("language"))
            throw IoError(concat(path, ":", line_no, ": record needs text and language fields"));
        Sample s;
        try {
            s.text = j.at("text").get<std::string>();
            s.language = j.at("language").get<std::string>();
            if (j.contains("labels")) {
                for (const auto& [task, value] : j.at("labels").items()) {
                    if (expected) {
                        bool known = false;
                        for (const TaskSpec& spec : *expected) known = known || spec.task_id == task;
                        if (!known) {
                            if (warned.insert(task).second)
                                std::cerr << "warning: " << path << ": dropping labels for unknown task "
                                          << task << "\n";
                            continue;
                        }
                    }
                    SampleLabel lab;
                    lab.present = true;
                    if (value.is_array()) {
                        for (const auto& bit : value)
                            lab.bits.push_back(static_cast<uint8_t>(bit.get<int>() != 0));
                    } else {
                        lab.class_id = value.get<int32_t>();
                    }
                    s.labels[task] = lab;
                }
            }
        } catch (const json::exception& e) {
            throw IoError(concat(path, ":", line_no, ": malformed record: ", e.what()));
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

Batch samples_to_batch(const std::vector<Sample>& samples, const std::vector<TaskSpec>& specs,
                       int max_seq_len) {
    std::vector<std::string> texts;
    texts.reserve(samples.size());
    for (const Sample& s : samples) texts.push_back(s.text);
    Batch batch = make_batch(texts, max_seq_len);
    for (const Sample& s : samples) batch.languages.push_back(s.language);

    const int64_t b = batch.batch_size;
    for (const TaskSpec& spec : specs) {
        TaskLabels::Entry entry;
        entry.present.assign(static_cast<size_t>(b), 0);
        if (spec.kind == TaskKind::multiclass)
            entry.class_ids.assign(static_cast<size_t>(b), 0);
        else
            entry.bits.assign(static_cast<size_t>(b * spec.num_classes), 0.0f);
        for (int64_t i = 0; i < b; ++i) {
            auto it = samples[static_cast<size_t>(i)].labels.find(spec.task_id);
            if (it == samples[static_cast<size_t>(i)].labels.end() || !it->second.present) continue;
            const SampleLabel& lab = it->second;
            entry.present[static_cast<size_t>(i)] = 1;
            if (spec.kind == TaskKind::multiclass) {
                if (lab.class_id < 0 || lab.class_id >= spec.num_classes)
                    throw ValidationError(concat("sample ", i, ": label ", lab.class_id,
                                                 " out of range for task ", spec.task_id));
                entry.class_ids[static_cast<size_t>(i)] = lab.class_id;
            } else {
                if (static_cast<int>(lab.bits.size()) != spec.num_classes)
                    throw ValidationError(concat("sample ", i, ": task ", spec.task_id, " needs ",
                                                 spec.num_classes, " label bits, got ", lab.bits.size()));
                for (int c = 0; c < spec.num_classes; ++c)
                    entry.bits[static_cast<size_t>(i * spec.num_classes + c)] =
                        lab.bits[static_cast<size_t>(c)] ? 1.0f : 0.0f;
            }
        }
        batch.labels.tasks[spec.task_id] = std::move(entry);
    }
    return batch;
}

}  // namespace xlmt
