#include <cmath>

#include "doctest.h"
#include "xlmt/distill.hpp"
#include "xlmt/reference.hpp"
#include "xlmt/rng.hpp"

using namespace xlmt;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double span = 1.0) {
    Tensor t(std::move(shape));
    for (scalar& v : t.data) v = static_cast<scalar>((rng.uniform() * 2.0 - 1.0) * span);
    return t;
}

struct KdCase {
    std::vector<TaskSpec> specs{TaskSpec{"t", TaskKind::multiclass, 2}};
    TaskLabels labels;
    std::map<std::string, Tensor> student;
    TeacherOutputs teacher;
};

KdCase two_class_case() {
    KdCase c;
    c.labels.tasks["t"] = {{0}, {}, {1}};
    c.student["t"] = Tensor({1, 2}, {0, 1});
    c.teacher["t"] = Tensor({1, 2}, {1, 0});
    return c;
}

}  // namespace

TEST_CASE("soften basic behavior") {
    Rng rng(41);
    Tensor z = random_tensor({3, 5}, rng, 3.0);
    Tensor a = soften(z, 1.0f);
    Tensor b = softmax(z);
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);

    Tensor flat = soften(z, 1e6f);
    for (scalar v : flat.data) CHECK(std::abs(static_cast<double>(v) - 0.2) < 1e-4);

    Tensor two({1, 2}, {2, 0});
    Tensor s = soften(two, 2.0f);
    auto want = ref::softmax_f64({1, 0});
    CHECK(std::abs(static_cast<double>(s.data[0]) - want[0]) < 1e-6);
    CHECK(std::abs(static_cast<double>(s.data[1]) - want[1]) < 1e-6);
    CHECK(want[0] == doctest::Approx(0.7311).epsilon(1e-4));

    CHECK_THROWS_AS(soften(two, 0.0f), ConfigError);
    CHECK_THROWS_AS(soften(two, -1.0f), ConfigError);

    // rows sum to one
    Tensor p = soften(z, 3.7f);
    for (int64_t i = 0; i < 3; ++i) {
        double sum = 0;
        for (int64_t j = 0; j < 5; ++j) sum += static_cast<double>(p.at(i, j));
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("kd_loss with alpha 0 reduces to the label loss bitwise") {
    Rng rng(43);
    std::vector<TaskSpec> specs = {TaskSpec{"a", TaskKind::multiclass, 4},
                                   TaskSpec{"b", TaskKind::multilabel, 3}};
    for (int trial = 0; trial < 20; ++trial) {
        std::map<std::string, Tensor> student{{"a", random_tensor({5, 4}, rng, 4.0)},
                                              {"b", random_tensor({5, 3}, rng, 4.0)}};
        TeacherOutputs teacher{{"a", random_tensor({5, 4}, rng, 4.0)},
                               {"b", random_tensor({5, 3}, rng, 4.0)}};
        TaskLabels labels;
        labels.tasks["a"].class_ids = {0, 1, 2, 3, 1};
        labels.tasks["a"].present = {1, 0, 1, 1, 1};
        labels.tasks["b"].bits.assign(15, 0.0f);
        for (int i = 0; i < 15; i += 2) labels.tasks["b"].bits[static_cast<size_t>(i)] = 1.0f;
        labels.tasks["b"].present = {1, 1, 0, 1, 0};

        DistillConfig cfg;
        cfg.alpha = 0.0f;
        cfg.temperature = 2.0f;
        LossResult kd = kd_loss(student, teacher, labels, specs, cfg);
        LossResult mt = multitask_loss(student, labels, specs);
        CHECK(kd.loss == mt.loss);

        auto kd_grads = kd_loss_backward(student, teacher, labels, specs, cfg);
        auto mt_grads = multitask_loss_backward(student, labels, specs);
        for (const auto& [task, g] : kd_grads)
            for (size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == mt_grads[task].data[i]);
    }
}

TEST_CASE("kd_loss with identical teacher and student adds nothing") {
    Rng rng(47);
    std::vector<TaskSpec> specs = {TaskSpec{"a", TaskKind::multiclass, 3},
                                   TaskSpec{"b", TaskKind::multilabel, 2}};
    std::map<std::string, Tensor> student{{"a", random_tensor({4, 3}, rng)},
                                          {"b", random_tensor({4, 2}, rng)}};
    TeacherOutputs teacher{{"a", student["a"]}, {"b", student["b"]}};
    TaskLabels labels;
    labels.tasks["a"].class_ids = {0, 1, 2, 0};
    labels.tasks["a"].present.assign(4, 1);
    labels.tasks["b"].bits.assign(8, 1.0f);
    labels.tasks["b"].present.assign(4, 1);

    DistillConfig cfg;  // alpha 1, F 2
    CHECK(kd_loss(student, teacher, labels, specs, cfg).loss ==
          multitask_loss(student, labels, specs).loss);
    auto kd_grads = kd_loss_backward(student, teacher, labels, specs, cfg);
    auto mt_grads = multitask_loss_backward(student, labels, specs);
    for (const auto& [task, g] : kd_grads)
        for (size_t i = 0; i < g.data.size(); ++i) CHECK(g.data[i] == mt_grads[task].data[i]);
}

TEST_CASE("kd_loss two-class hand evaluation") {
    KdCase c = two_class_case();
    DistillConfig cfg;
    cfg.alpha = 1.0f;
    cfg.temperature = 2.0f;

    // independent fp64 evaluation: label CE + alpha*F^2*KL(q_hat || p_hat)
    auto ps = ref::softmax_f64({0.0, 1.0});  // student probs (unsoftened, F=1 for the label term)
    const double label = -std::log(ps[0]);
    auto qh = ref::softmax_f64({0.5, 0.0});  // teacher logits [1,0] / F=2
    auto ph = ref::softmax_f64({0.0, 0.5});  // student logits [0,1] / F=2
    const double kl = qh[0] * std::log(qh[0] / ph[0]) + qh[1] * std::log(qh[1] / ph[1]);
    const double want = label + 4.0 * kl;

    CHECK(kd_loss(c.student, c.teacher, c.labels, c.specs, cfg).loss ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("kd_loss never drops below the label loss") {
    Rng rng(53);
    std::vector<TaskSpec> specs = {TaskSpec{"a", TaskKind::multiclass, 5},
                                   TaskSpec{"b", TaskKind::multilabel, 4}};
    for (int trial = 0; trial < 50; ++trial) {
        std::map<std::string, Tensor> student{{"a", random_tensor({3, 5}, rng, 5.0)},
                                              {"b", random_tensor({3, 4}, rng, 5.0)}};
        TeacherOutputs teacher{{"a", random_tensor({3, 5}, rng, 5.0)},
                               {"b", random_tensor({3, 4}, rng, 5.0)}};
        TaskLabels labels;
        labels.tasks["a"].class_ids = {4, 0, 2};
        labels.tasks["a"].present = {1, 1, 0};
        labels.tasks["b"].bits.assign(12, 0.0f);
        labels.tasks["b"].present = {0, 1, 1};

        DistillConfig cfg;
        cfg.alpha = static_cast<float>(rng.uniform() * 3.0);
        cfg.temperature = static_cast<float>(0.25 + rng.uniform() * 7.75);
        const double kd = kd_loss(student, teacher, labels, specs, cfg).loss;
        const double label = multitask_loss(student, labels, specs).loss;
        CHECK(kd >= label - 1e-12);
    }
}

TEST_CASE("kd term is invariant to common logit shifts") {
    Rng rng(59);
    std::vector<TaskSpec> specs = {TaskSpec{"a", TaskKind::multiclass, 4}};
    Tensor s = random_tensor({2, 4}, rng, 2.0);
    Tensor t = random_tensor({2, 4}, rng, 2.0);
    TaskLabels labels;
    labels.tasks["a"].class_ids = {1, 2};
    labels.tasks["a"].present = {1, 1};
    DistillConfig cfg;

    const double base_kd = kd_loss({{"a", s}}, {{"a", t}}, labels, specs, cfg).loss -
                           multitask_loss({{"a", s}}, labels, specs).loss;
    Tensor s2 = s, t2 = t;
    for (int64_t j = 0; j < 4; ++j) {
        s2.at(0, j) += scalar(7.5);
        t2.at(0, j) += scalar(7.5);
    }
    const double shifted_kd = kd_loss({{"a", s2}}, {{"a", t2}}, labels, specs, cfg).loss -
                              multitask_loss({{"a", s2}}, labels, specs).loss;
    // fp32 storage of the shifted logits perturbs the softened distributions slightly
    CHECK(shifted_kd == doctest::Approx(base_kd).epsilon(1e-4));
}

TEST_CASE("teacher_predict is frozen and assignment-transparent") {
    ModelConfig cfg;
    cfg.hidden = 16;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.ffn_dim = 32;
    cfg.max_seq_len = 16;
    std::vector<TaskSpec> tasks = {TaskSpec{"task1", TaskKind::multiclass, 3},
                                   TaskSpec{"task2", TaskKind::multiclass, 4}};
    ClassifierModel teacher = ClassifierModel::init(cfg, tasks, 123);
    Batch batch = make_batch({"hello world", "salve munde"}, cfg.max_seq_len);

    TeacherSet shared;
    shared.models.push_back(teacher);
    shared.assignment = {{"task1", 0}, {"task2", 0}};
    TeacherOutputs a = teacher_predict(shared, tasks, batch);
    TeacherOutputs b = teacher_predict(shared, tasks, batch);
    for (const auto& [task, t] : a)
        for (size_t i = 0; i < t.data.size(); ++i) CHECK(t.data[i] == b.at(task).data[i]);

    // per-task assignment pointing both tasks at the same teacher
    TeacherSet split;
    split.models.push_back(teacher);
    split.models.push_back(teacher);
    split.assignment = {{"task1", 0}, {"task2", 1}};
    TeacherOutputs c = teacher_predict(split, tasks, batch);
    for (const auto& [task, t] : a)
        for (size_t i = 0; i < t.data.size(); ++i) CHECK(t.data[i] == c.at(task).data[i]);
}

TEST_CASE("teacher_predict rejects a teacher missing a task head") {
    ModelConfig cfg;
    cfg.hidden = 8;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.ffn_dim = 16;
    cfg.max_seq_len = 8;
    std::vector<TaskSpec> teacher_tasks = {TaskSpec{"task1", TaskKind::multiclass, 3}};
    std::vector<TaskSpec> student_tasks = {TaskSpec{"task1", TaskKind::multiclass, 3},
                                           TaskSpec{"task2", TaskKind::multiclass, 2}};
    TeacherSet ts;
    ts.models.push_back(ClassifierModel::init(cfg, teacher_tasks, 1));
    ts.assignment = {{"task1", 0}, {"task2", 0}};
    Batch batch = make_batch({"x"}, cfg.max_seq_len);
    CHECK_THROWS_AS(teacher_predict(ts, student_tasks, batch), ConfigError);
}
