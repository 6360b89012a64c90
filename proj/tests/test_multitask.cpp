#include <cmath>

#include "doctest.h"
#include "xlmt/multitask.hpp"
#include "xlmt/reference.hpp"
#include "xlmt/rng.hpp"

using namespace xlmt;

namespace {

std::vector<TaskSpec> two_task_specs() {
    return {TaskSpec{"task1", TaskKind::multiclass, 3}, TaskSpec{"task3", TaskKind::multilabel, 2}};
}

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double span = 1.0) {
    Tensor t(std::move(shape));
    for (scalar& v : t.data) v = static_cast<scalar>((rng.uniform() * 2.0 - 1.0) * span);
    return t;
}

// independent fp64 evaluation of the masked multiclass CE sum
double ce_sum_multiclass(const Tensor& z, const std::vector<int32_t>& ids,
                         const std::vector<uint8_t>& present) {
    double sum = 0;
    const int64_t c = z.cols();
    for (int64_t i = 0; i < z.rows(); ++i) {
        if (!present[static_cast<size_t>(i)]) continue;
        std::vector<double> row(static_cast<size_t>(c));
        for (int64_t j = 0; j < c; ++j) row[static_cast<size_t>(j)] = static_cast<double>(z.at(i, j));
        auto p = ref::softmax_f64(row);
        sum += -std::log(p[static_cast<size_t>(ids[static_cast<size_t>(i)])]);
    }
    return sum;
}

double ce_sum_multilabel(const Tensor& z, const std::vector<float>& bits,
                         const std::vector<uint8_t>& present) {
    double sum = 0;
    const int64_t c = z.cols();
    for (int64_t i = 0; i < z.rows(); ++i) {
        if (!present[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < c; ++j) {
            const double zj = static_cast<double>(z.at(i, j));
            const double y = static_cast<double>(bits[static_cast<size_t>(i * c + j)]);
            const double p = 1.0 / (1.0 + std::exp(-zj));
            sum += -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
        }
    }
    return sum;
}

}  // namespace

TEST_CASE("head_logits affine map") {
    TaskHead zero_head{Tensor({4, 3}), Tensor({3})};
    Tensor pooled({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor out = head_logits(pooled, zero_head);
    for (scalar v : out.data) CHECK(v == scalar(0));

    TaskHead scalar_head{Tensor({1, 1}, {2}), Tensor({1}, {1})};
    Tensor p1({1, 1}, {3});
    CHECK(head_logits(p1, scalar_head).data[0] == scalar(7));

    Rng rng(3);
    Tensor pooled_r = random_tensor({5, 8}, rng);
    TaskHead head{random_tensor({8, 4}, rng), random_tensor({4}, rng)};
    Tensor got = head_logits(pooled_r, head);
    Tensor want = ref::matmul(pooled_r, head.weight);
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(got.at(i, j) == want.at(i, j) + head.bias.data[static_cast<size_t>(j)]);
}

TEST_CASE("multitask_loss simple cases") {
    std::vector<TaskSpec> specs = {TaskSpec{"t", TaskKind::multiclass, 3}};
    TaskLabels labels;
    labels.tasks["t"] = {{0}, {}, {1}};

    // near-certain true class
    std::map<std::string, Tensor> logits;
    logits["t"] = Tensor({1, 3}, {100, 0, 0});
    CHECK(multitask_loss(logits, labels, specs).loss == doctest::Approx(0.0).epsilon(1e-9));

    // uniform logits -> ln C
    logits["t"] = Tensor({1, 3}, {0.5, 0.5, 0.5});
    CHECK(multitask_loss(logits, labels, specs).loss == doctest::Approx(std::log(3.0)).epsilon(1e-7));
}

TEST_CASE("multitask_loss with disjoint presence masks matches the fp64 oracle") {
    auto specs = two_task_specs();
    Rng rng(5);
    Tensor z1 = random_tensor({4, 3}, rng, 2.0);
    Tensor z3 = random_tensor({4, 2}, rng, 2.0);
    TaskLabels labels;
    labels.tasks["task1"] = {{0, 2, 1, 0}, {}, {1, 1, 0, 0}};
    labels.tasks["task3"] = {{}, {1, 0, 0, 1, 1, 1, 0, 0}, {0, 0, 1, 1}};
    std::map<std::string, Tensor> logits{{"task1", z1}, {"task3", z3}};

    LossResult res = multitask_loss(logits, labels, specs);
    CHECK(res.total_present == 4);
    const double want = (ce_sum_multiclass(z1, labels.tasks["task1"].class_ids, labels.tasks["task1"].present) +
                         ce_sum_multilabel(z3, labels.tasks["task3"].bits, labels.tasks["task3"].present)) /
                        4.0;
    CHECK(res.loss == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("single fully-present task equals plain mean cross-entropy") {
    std::vector<TaskSpec> specs = {TaskSpec{"t", TaskKind::multiclass, 4}};
    Rng rng(9);
    Tensor z = random_tensor({6, 4}, rng, 2.0);
    TaskLabels labels;
    labels.tasks["t"].class_ids = {3, 1, 0, 2, 2, 1};
    labels.tasks["t"].present.assign(6, 1);
    const double want = ce_sum_multiclass(z, labels.tasks["t"].class_ids, labels.tasks["t"].present) / 6.0;
    CHECK(multitask_loss({{"t", z}}, labels, specs).loss == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("loss is invariant under row permutation and row duplication") {
    auto specs = two_task_specs();
    Rng rng(15);
    Tensor z1 = random_tensor({3, 3}, rng);
    Tensor z3 = random_tensor({3, 2}, rng);
    TaskLabels labels;
    labels.tasks["task1"] = {{0, 2, 1}, {}, {1, 0, 1}};
    labels.tasks["task3"] = {{}, {1, 0, 0, 1, 1, 1}, {1, 1, 0}};
    const double base = multitask_loss({{"task1", z1}, {"task3", z3}}, labels, specs).loss;

    // reverse rows
    std::vector<int64_t> perm = {2, 1, 0};
    Tensor z1p({3, 3}), z3p({3, 2});
    TaskLabels labp;
    labp.tasks["task1"].class_ids.resize(3);
    labp.tasks["task1"].present.resize(3);
    labp.tasks["task3"].bits.resize(6);
    labp.tasks["task3"].present.resize(3);
    for (int64_t i = 0; i < 3; ++i) {
        for (int64_t j = 0; j < 3; ++j) z1p.at(i, j) = z1.at(perm[i], j);
        for (int64_t j = 0; j < 2; ++j) z3p.at(i, j) = z3.at(perm[i], j);
        labp.tasks["task1"].class_ids[i] = labels.tasks["task1"].class_ids[perm[i]];
        labp.tasks["task1"].present[i] = labels.tasks["task1"].present[perm[i]];
        labp.tasks["task3"].present[i] = labels.tasks["task3"].present[perm[i]];
        for (int64_t j = 0; j < 2; ++j)
            labp.tasks["task3"].bits[i * 2 + j] = labels.tasks["task3"].bits[perm[i] * 2 + j];
    }
    CHECK(multitask_loss({{"task1", z1p}, {"task3", z3p}}, labp, specs).loss ==
          doctest::Approx(base).epsilon(1e-12));

    // duplicate every row: both the sums and N double, the loss is unchanged
    Tensor z1d({6, 3}), z3d({6, 2});
    TaskLabels labd;
    labd.tasks["task1"].class_ids.resize(6);
    labd.tasks["task1"].present.resize(6);
    labd.tasks["task3"].bits.resize(12);
    labd.tasks["task3"].present.resize(6);
    for (int64_t i = 0; i < 6; ++i) {
        const int64_t src = i % 3;
        for (int64_t j = 0; j < 3; ++j) z1d.at(i, j) = z1.at(src, j);
        for (int64_t j = 0; j < 2; ++j) z3d.at(i, j) = z3.at(src, j);
        labd.tasks["task1"].class_ids[i] = labels.tasks["task1"].class_ids[src];
        labd.tasks["task1"].present[i] = labels.tasks["task1"].present[src];
        labd.tasks["task3"].present[i] = labels.tasks["task3"].present[src];
        for (int64_t j = 0; j < 2; ++j)
            labd.tasks["task3"].bits[i * 2 + j] = labels.tasks["task3"].bits[src * 2 + j];
    }
    CHECK(multitask_loss({{"task1", z1d}, {"task3", z3d}}, labd, specs).loss ==
          doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("an all-masked extra row changes neither loss nor gradients") {
    std::vector<TaskSpec> specs = {TaskSpec{"t", TaskKind::multiclass, 3}};
    Rng rng(21);
    Tensor z = random_tensor({2, 3}, rng);
    TaskLabels labels;
    labels.tasks["t"] = {{1, 2}, {}, {1, 1}};
    const double base = multitask_loss({{"t", z}}, labels, specs).loss;
    auto base_grads = multitask_loss_backward({{"t", z}}, labels, specs);

    Tensor z3({3, 3});
    for (int64_t j = 0; j < 3; ++j) {
        z3.at(0, j) = z.at(0, j);
        z3.at(1, j) = z.at(1, j);
        z3.at(2, j) = scalar(42);
    }
    TaskLabels lab3;
    lab3.tasks["t"] = {{1, 2, 0}, {}, {1, 1, 0}};
    CHECK(multitask_loss({{"t", z3}}, lab3, specs).loss == base);
    auto grads3 = multitask_loss_backward({{"t", z3}}, lab3, specs);
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) CHECK(grads3["t"].at(i, j) == base_grads["t"].at(i, j));
    for (int64_t j = 0; j < 3; ++j) CHECK(grads3["t"].at(2, j) == scalar(0));
}

TEST_CASE("loss errors") {
    std::vector<TaskSpec> specs = {TaskSpec{"t", TaskKind::multiclass, 3}};
    TaskLabels labels;
    labels.tasks["t"] = {{0}, {}, {0}};  // masked out
    std::map<std::string, Tensor> logits{{"t", Tensor({1, 3})}};
    CHECK_THROWS_WITH_AS(multitask_loss(logits, labels, specs), "no labeled rows in batch", ValidationError);

    labels.tasks["t"] = {{5}, {}, {1}};
    CHECK_THROWS_AS(multitask_loss(logits, labels, specs), ValidationError);
}

TEST_CASE("backward gradients") {
    std::vector<TaskSpec> specs = {TaskSpec{"t", TaskKind::multiclass, 3}};
    TaskLabels labels;
    labels.tasks["t"] = {{0, 1}, {}, {1, 0}};
    Tensor z({2, 3}, {50, 0, 0, 1, 2, 3});
    auto grads = multitask_loss_backward({{"t", z}}, labels, specs);
    // near-perfect prediction: tiny gradient
    for (int64_t j = 0; j < 3; ++j) CHECK(std::abs(static_cast<double>(grads["t"].at(0, j))) < 1e-6);
    // masked row: exactly zero
    for (int64_t j = 0; j < 3; ++j) CHECK(grads["t"].at(1, j) == scalar(0));
}
