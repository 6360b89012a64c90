#include <cmath>
#include <cstring>

#include "doctest.h"
#include "xlmt/encoder.hpp"
#include "xlmt/rng.hpp"

using namespace xlmt;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.hidden = 16;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.ffn_dim = 24;
    cfg.max_seq_len = 12;
    return cfg;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(scalar)) == 0;
}

bool all_zero(const Tensor& t) {
    for (scalar v : t.data)
        if (v != scalar(0)) return false;
    return true;
}

}  // namespace

TEST_CASE("inference forward is deterministic") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 99);
    Batch batch = make_batch({"abc", "defghij", "k"}, cfg.max_seq_len);
    Tensor a = encode_forward(params, batch, ForwardOptions{});
    Tensor b = encode_forward(params, batch, ForwardOptions{});
    CHECK(bitwise_equal(a, b));
}

TEST_CASE("single-token sequence pools to the layernormed hidden state") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 7);
    Batch batch;
    batch.batch_size = 1;
    batch.seq_len = 1;
    batch.token_ids = {65};
    batch.attn_mask = {1};
    ForwardCache cache;
    Tensor pooled = encode_forward(params, batch, ForwardOptions{}, &cache);
    Tensor last = cache.layers.back().ln2_out;  // [1 x H]
    Tensor want = layernorm(last, params.final_gamma, params.final_beta, kLayerNormEps);
    CHECK(bitwise_equal(pooled, want));
}

TEST_CASE("masked positions have zero influence bitwise") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 3);
    Batch batch = make_batch({"short", "a much longer sentence"}, cfg.max_seq_len);
    Tensor base = encode_forward(params, batch, ForwardOptions{});

    // rewrite a padded position of row 0
    REQUIRE(batch.attn_mask[2 + 0 * batch.seq_len] == 1);
    int64_t pad_pos = -1;
    for (int64_t s = 0; s < batch.seq_len; ++s)
        if (!batch.attn_mask[static_cast<size_t>(s)]) pad_pos = s;
    REQUIRE(pad_pos >= 0);
    batch.token_ids[static_cast<size_t>(pad_pos)] = 200;
    Tensor changed = encode_forward(params, batch, ForwardOptions{});
    CHECK(bitwise_equal(base, changed));
}

TEST_CASE("permuting batch rows permutes pooled rows identically") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 31);
    std::vector<std::string> texts = {"one", "another row", "third text", "d"};
    Batch batch = make_batch(texts, cfg.max_seq_len);
    Tensor pooled = encode_forward(params, batch, ForwardOptions{});

    std::vector<std::string> rev(texts.rbegin(), texts.rend());
    Batch batch_rev = make_batch(rev, cfg.max_seq_len);
    Tensor pooled_rev = encode_forward(params, batch_rev, ForwardOptions{});
    const int64_t h = cfg.hidden;
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < h; ++j) CHECK(pooled_rev.at(i, j) == pooled.at(3 - i, j));
}

TEST_CASE("attention head slices reproduce the fused context bitwise") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 17);
    Batch batch = make_batch({"abcd", "xy"}, cfg.max_seq_len);
    ForwardCache cache;
    encode_forward(params, batch, ForwardOptions{}, &cache);

    const LayerShape ls = cfg.layer_shape(0);
    std::vector<Tensor> heads = attention_head_outputs(params, 0, cache.layers[0].x_in, batch);
    REQUIRE(static_cast<int>(heads.size()) == ls.heads);
    const Tensor& ctx = cache.layers[0].ctx;
    for (int a = 0; a < ls.heads; ++a)
        for (int64_t i = 0; i < ctx.rows(); ++i)
            for (int d = 0; d < ls.head_dim; ++d)
                CHECK(heads[static_cast<size_t>(a)].at(i, d) ==
                      ctx.at(i, a * ls.head_dim + d));
}

TEST_CASE("a single head equals the full attention output") {
    ModelConfig cfg = tiny_config();
    cfg.heads = 1;
    EncoderParams params = EncoderParams::init(cfg, 19);
    Batch batch = make_batch({"abc"}, cfg.max_seq_len);
    ForwardCache cache;
    encode_forward(params, batch, ForwardOptions{}, &cache);
    std::vector<Tensor> heads = attention_head_outputs(params, 0, cache.layers[0].x_in, batch);
    REQUIRE(heads.size() == 1);
    CHECK(bitwise_equal(heads[0], cache.layers[0].ctx));
}

TEST_CASE("zeroing a head's slice equals zeroing its projections") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 23);
    Batch batch = make_batch({"some bytes", "mo"}, cfg.max_seq_len);
    const LayerShape ls = cfg.layer_shape(0);
    const int dropped = 1;

    ForwardCache cache;
    encode_forward(params, batch, ForwardOptions{}, &cache);
    Tensor ctx_zeroed = cache.layers[0].ctx;
    for (int64_t i = 0; i < ctx_zeroed.rows(); ++i)
        for (int d = 0; d < ls.head_dim; ++d) ctx_zeroed.at(i, dropped * ls.head_dim + d) = 0;
    Tensor path_a = matmul(ctx_zeroed, params.layers[0].wo);

    EncoderParams zeroed = params;
    for (int64_t r = 0; r < cfg.hidden; ++r)
        for (int d = 0; d < ls.head_dim; ++d) {
            zeroed.layers[0].wq.at(r, dropped * ls.head_dim + d) = 0;
            zeroed.layers[0].wk.at(r, dropped * ls.head_dim + d) = 0;
            zeroed.layers[0].wv.at(r, dropped * ls.head_dim + d) = 0;
        }
    ForwardCache cache_b;
    encode_forward(zeroed, batch, ForwardOptions{}, &cache_b);
    Tensor path_b = matmul(cache_b.layers[0].ctx, params.layers[0].wo);
    CHECK(bitwise_equal(path_a, path_b));
}

TEST_CASE("zero pooled gradient gives zero parameter gradients") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 5);
    Batch batch = make_batch({"abc", "de"}, cfg.max_seq_len);
    ForwardCache cache;
    encode_forward(params, batch, ForwardOptions{}, &cache);
    EncoderParams grads = encode_backward(params, cache, Tensor({2, cfg.hidden}));
    grads.for_each([](const std::string&, Tensor& t) { CHECK(all_zero(t)); });
}

TEST_CASE("duplicating a batch row doubles its gradient contribution") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 37);
    Rng rng(101);
    Batch one = make_batch({"duplicate me"}, cfg.max_seq_len);
    Tensor g1({1, cfg.hidden});
    for (scalar& v : g1.data) v = static_cast<scalar>(rng.uniform() - 0.5);

    ForwardCache c1;
    encode_forward(params, one, ForwardOptions{}, &c1);
    EncoderParams grads1 = encode_backward(params, c1, g1);

    Batch two = make_batch({"duplicate me", "duplicate me"}, cfg.max_seq_len);
    Tensor g2({2, cfg.hidden});
    for (int64_t j = 0; j < cfg.hidden; ++j) g2.at(0, j) = g2.at(1, j) = g1.at(0, j);
    ForwardCache c2;
    encode_forward(params, two, ForwardOptions{}, &c2);
    EncoderParams grads2 = encode_backward(params, c2, g2);

    std::map<std::string, const Tensor*> doubled;
    grads2.for_each([&](const std::string& name, Tensor& t) { doubled[name] = &t; });
    grads1.for_each([&](const std::string& name, Tensor& t) {
        const Tensor& d = *doubled.at(name);
        for (size_t i = 0; i < t.data.size(); ++i) {
            const double want = 2.0 * static_cast<double>(t.data[i]);
            const double got = static_cast<double>(d.data[i]);
            CHECK(std::abs(got - want) <= 1e-4 * std::max(1.0, std::abs(want)));
        }
    });
}

TEST_CASE("dropout is seed-reproducible and off at rate zero") {
    ModelConfig cfg = tiny_config();
    cfg.dropout_rate = 0.3f;
    EncoderParams params = EncoderParams::init(cfg, 71);
    Batch batch = make_batch({"dropout test text"}, cfg.max_seq_len);

    ForwardOptions train_opts;
    train_opts.training = true;
    train_opts.dropout_seed = 555;
    Tensor a = encode_forward(params, batch, train_opts);
    Tensor b = encode_forward(params, batch, train_opts);
    CHECK(bitwise_equal(a, b));

    train_opts.dropout_seed = 556;
    Tensor c = encode_forward(params, batch, train_opts);
    CHECK(!bitwise_equal(a, c));

    cfg.dropout_rate = 0.0f;
    EncoderParams params0 = EncoderParams::init(cfg, 71);
    Tensor train_out = encode_forward(params0, batch, train_opts);
    Tensor eval_out = encode_forward(params0, batch, ForwardOptions{});
    CHECK(bitwise_equal(train_out, eval_out));
}

TEST_CASE("over-length batches are truncated, not rejected") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 13);
    std::string long_text(300, 'q');
    Batch big = make_batch({long_text}, 64);  // longer than cfg.max_seq_len
    REQUIRE(big.seq_len > cfg.max_seq_len);
    Tensor pooled = encode_forward(params, big, ForwardOptions{});

    // equivalent to slicing the token stream at max_seq_len
    Batch cut;
    cut.batch_size = 1;
    cut.seq_len = cfg.max_seq_len;
    cut.token_ids.assign(big.token_ids.begin(), big.token_ids.begin() + cfg.max_seq_len);
    cut.attn_mask.assign(big.attn_mask.begin(), big.attn_mask.begin() + cfg.max_seq_len);
    Tensor want = encode_forward(params, cut, ForwardOptions{});
    CHECK(bitwise_equal(pooled, want));
}

TEST_CASE("forward validates token ids and masks") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 1);
    Batch bad;
    bad.batch_size = 1;
    bad.seq_len = 2;
    bad.token_ids = {kByteVocabSize + 5, 0};
    bad.attn_mask = {1, 1};
    CHECK_THROWS_AS(encode_forward(params, bad, ForwardOptions{}), ValidationError);

    Batch all_masked;
    all_masked.batch_size = 1;
    all_masked.seq_len = 2;
    all_masked.token_ids = {1, 2};
    all_masked.attn_mask = {0, 0};
    CHECK_THROWS_AS(encode_forward(params, all_masked, ForwardOptions{}), ValidationError);
}

TEST_CASE("parameter count matches the analytic formula") {
    ModelConfig cfg = tiny_config();
    EncoderParams params = EncoderParams::init(cfg, 2);
    CHECK(params.param_count() == encoder_param_count(cfg));
    const int64_t expected = static_cast<int64_t>(cfg.vocab_size) * cfg.hidden +
                             static_cast<int64_t>(cfg.max_seq_len) * cfg.hidden +
                             cfg.layers * (4 * static_cast<int64_t>(cfg.hidden) * cfg.hidden +
                                           2 * static_cast<int64_t>(cfg.hidden) * cfg.ffn_dim +
                                           4 * static_cast<int64_t>(cfg.hidden)) +
                             2 * cfg.hidden;
    CHECK(params.param_count() == expected);
}
