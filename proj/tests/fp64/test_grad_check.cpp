#include <cmath>
#include <functional>

#include "doctest.h"
#include "straightline_oracle.hpp"
#include "xlmt/distill.hpp"
#include "xlmt/rng.hpp"

using namespace xlmt;

static_assert(sizeof(scalar) == 8, "gradient checks require the fp64 build");

namespace {

ModelConfig grad_config() {
    ModelConfig cfg;
    cfg.hidden = 8;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_dim = 12;
    cfg.max_seq_len = 8;
    return cfg;
}

Batch small_batch(int max_seq_len) {
    Batch b = make_batch({"ab", "defg"}, max_seq_len);
    return b;
}

// The default 0.02 init leaves attention-score gradients near 1e-7, too small
// for a scale-relative check against h=1e-5 central differences. Re-draw the
// parameters at healthy magnitudes so every path carries signal.
void randomize_params(EncoderParams& params, uint64_t seed) {
    Rng rng(seed);
    params.for_each([&](const std::string& name, Tensor& t) {
        const bool is_gamma = name.find("gamma") != std::string::npos;
        for (scalar& v : t.data) {
            const double u = rng.uniform() * 0.8 - 0.4;
            v = static_cast<scalar>(is_gamma ? 1.0 + u * 0.5 : u);
        }
    });
}

// max |analytic - fd| relative to the gradient scale of the tensor
double tensor_rel_error(const Tensor& analytic, const Tensor& fd) {
    double denom = 1e-10;
    for (size_t i = 0; i < analytic.data.size(); ++i) {
        denom = std::max(denom, std::abs(static_cast<double>(analytic.data[i])));
        denom = std::max(denom, std::abs(static_cast<double>(fd.data[i])));
    }
    double worst = 0;
    for (size_t i = 0; i < analytic.data.size(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(analytic.data[i]) -
                                         static_cast<double>(fd.data[i])) / denom);
    return worst;
}

// Central differences over every element of every parameter tensor.
void check_encoder_gradients(EncoderParams& params, const std::function<double()>& loss_fn,
                             EncoderParams& analytic, double h, double tol) {
    std::map<std::string, Tensor*> analytic_by_name;
    analytic.for_each([&](const std::string& name, Tensor& t) { analytic_by_name[name] = &t; });
    params.for_each([&](const std::string& name, Tensor& t) {
        Tensor fd(t.shape);
        for (size_t i = 0; i < t.data.size(); ++i) {
            const scalar saved = t.data[i];
            t.data[i] = saved + static_cast<scalar>(h);
            const double up = loss_fn();
            t.data[i] = saved - static_cast<scalar>(h);
            const double down = loss_fn();
            t.data[i] = saved;
            fd.data[i] = static_cast<scalar>((up - down) / (2.0 * h));
        }
        const double err = tensor_rel_error(*analytic_by_name.at(name), fd);
        INFO("parameter ", name);
        CHECK(err < tol);
    });
}

}  // namespace

TEST_CASE("fp64 forward matches the straight-line oracle within 1e-10") {
    ModelConfig cfg = grad_config();
    EncoderParams params = EncoderParams::init(cfg, 2024);
    Batch batch = small_batch(cfg.max_seq_len);
    Tensor pooled = encode_forward(params, batch, ForwardOptions{});
    oracle::Mat want = oracle::encode(params, batch);
    for (int64_t i = 0; i < pooled.rows(); ++i)
        for (int64_t j = 0; j < pooled.cols(); ++j)
            CHECK(std::abs(static_cast<double>(pooled.at(i, j)) -
                           want[static_cast<size_t>(i)][static_cast<size_t>(j)]) < 1e-10);
}

TEST_CASE("encoder gradients match central differences") {
    ModelConfig cfg = grad_config();
    EncoderParams params = EncoderParams::init(cfg, 512);
    randomize_params(params, 1301);
    Batch batch = small_batch(cfg.max_seq_len);

    // scalar projection of the pooled output as the probe loss
    Rng rng(77);
    Tensor probe({batch.batch_size, cfg.hidden});
    for (scalar& v : probe.data) v = static_cast<scalar>(rng.uniform() * 2.0 - 1.0);

    auto loss_fn = [&]() {
        Tensor pooled = encode_forward(params, batch, ForwardOptions{});
        double sum = 0;
        for (size_t i = 0; i < pooled.data.size(); ++i)
            sum += static_cast<double>(pooled.data[i]) * static_cast<double>(probe.data[i]);
        return sum;
    };

    ForwardCache cache;
    encode_forward(params, batch, ForwardOptions{}, &cache);
    EncoderParams analytic = encode_backward(params, cache, probe);
    check_encoder_gradients(params, loss_fn, analytic, 1e-5, 1e-6);
}

TEST_CASE("loss gradients w.r.t. logits match central differences") {
    Rng rng(88);
    std::vector<TaskSpec> specs = {TaskSpec{"t1", TaskKind::multiclass, 4},
                                   TaskSpec{"t3", TaskKind::multilabel, 3}};
    std::map<std::string, Tensor> logits;
    logits["t1"] = Tensor({3, 4});
    logits["t3"] = Tensor({3, 3});
    TeacherOutputs teacher;
    teacher["t1"] = Tensor({3, 4});
    teacher["t3"] = Tensor({3, 3});
    for (auto* t : {&logits["t1"], &logits["t3"], &teacher["t1"], &teacher["t3"]})
        for (scalar& v : t->data) v = static_cast<scalar>(rng.uniform() * 4.0 - 2.0);
    TaskLabels labels;
    labels.tasks["t1"].class_ids = {0, 3, 2};
    labels.tasks["t1"].present = {1, 1, 0};
    labels.tasks["t3"].bits = {1, 0, 1, 0, 0, 1, 1, 1, 0};
    labels.tasks["t3"].present = {1, 0, 1};

    DistillConfig cfg;
    cfg.alpha = 1.0f;
    cfg.temperature = 2.0f;

    SUBCASE("label loss") {
        auto grads = multitask_loss_backward(logits, labels, specs);
        for (const std::string& task : {"t1", "t3"}) {
            Tensor& z = logits.at(task);
            Tensor fd(z.shape);
            const double h = 1e-5;
            for (size_t i = 0; i < z.data.size(); ++i) {
                const scalar saved = z.data[i];
                z.data[i] = saved + static_cast<scalar>(h);
                const double up = multitask_loss(logits, labels, specs).loss;
                z.data[i] = saved - static_cast<scalar>(h);
                const double down = multitask_loss(logits, labels, specs).loss;
                z.data[i] = saved;
                fd.data[i] = static_cast<scalar>((up - down) / (2.0 * h));
            }
            CHECK(tensor_rel_error(grads.at(task), fd) < 1e-6);
        }
    }

    SUBCASE("distillation loss") {
        auto grads = kd_loss_backward(logits, teacher, labels, specs, cfg);
        for (const std::string& task : {"t1", "t3"}) {
            Tensor& z = logits.at(task);
            Tensor fd(z.shape);
            const double h = 1e-5;
            for (size_t i = 0; i < z.data.size(); ++i) {
                const scalar saved = z.data[i];
                z.data[i] = saved + static_cast<scalar>(h);
                const double up = kd_loss(logits, teacher, labels, specs, cfg).loss;
                z.data[i] = saved - static_cast<scalar>(h);
                const double down = kd_loss(logits, teacher, labels, specs, cfg).loss;
                z.data[i] = saved;
                fd.data[i] = static_cast<scalar>((up - down) / (2.0 * h));
            }
            CHECK(tensor_rel_error(grads.at(task), fd) < 1e-6);
        }
    }
}
