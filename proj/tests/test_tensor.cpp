#include <cmath>
#include <cstring>

#include "doctest.h"
#include "xlmt/reference.hpp"
#include "xlmt/rng.hpp"
#include "xlmt/tensor.hpp"

using namespace xlmt;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double span = 1.0) {
    Tensor t(std::move(shape));
    for (scalar& v : t.data) v = static_cast<scalar>((rng.uniform() * 2.0 - 1.0) * span);
    return t;
}

Tensor identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1;
    return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (size_t i = 0; i < a.data.size(); ++i)
        if (std::memcmp(&a.data[i], &b.data[i], sizeof(scalar)) != 0) return false;
    return true;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
    Tensor i2({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(i2, b);
    CHECK(bitwise_equal(c, b));

    Tensor r({1, 2}, {1, 2});
    Tensor col({2, 1}, {3, 4});
    Tensor prod = matmul(r, col);
    CHECK(prod.numel() == 1);
    CHECK(prod.data[0] == scalar(11));
}

TEST_CASE("matmul matches the triple-loop oracle bitwise") {
    Rng rng(7);
    const int64_t dims[][3] = {{8, 8, 8}, {5, 17, 3}, {1, 64, 33}};
    for (const auto& d : dims) {
        Tensor a = random_tensor({d[0], d[1]}, rng);
        Tensor b = random_tensor({d[1], d[2]}, rng);
        CHECK(bitwise_equal(matmul(a, b), ref::matmul(a, b)));
    }
}

TEST_CASE("matmul against a square identity is a bitwise no-op") {
    Rng rng(11);
    for (int64_t n : {1, 4, 13, 32}) {
        Tensor a = random_tensor({n, n}, rng, 3.0);
        CHECK(bitwise_equal(matmul(a, identity(n)), a));
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("transposed matmul variants match their oracles bitwise") {
    Rng rng(13);
    Tensor a = random_tensor({9, 6}, rng);
    Tensor b = random_tensor({9, 5}, rng);
    CHECK(bitwise_equal(matmul_tn(a, b), ref::matmul_tn(a, b)));
    Tensor c = random_tensor({7, 8}, rng);
    Tensor d = random_tensor({4, 8}, rng);
    CHECK(bitwise_equal(matmul_nt(c, d), ref::matmul_nt(c, d)));
}

TEST_CASE("kernels are pure: repeated calls are bitwise identical") {
    Rng rng(17);
    Tensor a = random_tensor({6, 12}, rng);
    Tensor b = random_tensor({12, 9}, rng);
    CHECK(bitwise_equal(matmul(a, b), matmul(a, b)));
    CHECK(bitwise_equal(softmax(a), softmax(a)));
}

TEST_CASE("parallel kernels agree with the serial reference across thread counts") {
    Rng rng(19);
    Tensor a = random_tensor({33, 29}, rng);
    Tensor b = random_tensor({29, 21}, rng);
    const Tensor want = ref::matmul(a, b);
    const int saved = kernel_threads();
    for (int t : {1, 2, 4}) {
        set_kernel_threads(t);
        CHECK(bitwise_equal(matmul(a, b), want));
    }
    set_kernel_threads(saved);
}

TEST_CASE("softmax hand cases") {
    Tensor z({1, 3}, {0, 0, 0});
    Tensor p = softmax(z);
    for (scalar v : p.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

    Tensor big({1, 2}, {1000, 0});
    Tensor pb = softmax(big);
    CHECK(std::isfinite(static_cast<double>(pb.data[0])));
    CHECK(pb.data[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(pb.data[1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("softmax matches the fp64 oracle") {
    Tensor z({1, 3}, {1, 2, 3});
    Tensor p = softmax(z);
    auto want = ref::softmax_f64({1, 2, 3});
    for (int j = 0; j < 3; ++j)
        CHECK(std::abs(static_cast<double>(p.data[j]) - want[j]) < 1e-6);
}

TEST_CASE("softmax rows sum to one for magnitudes up to 1e4") {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        // extreme spreads underflow the losing entries to +0 in fp32; the row
        // sum contract still holds
        Tensor z = random_tensor({4, 9}, rng, trial % 2 ? 1e4 : 20.0);
        Tensor p = softmax(z);
        for (int64_t i = 0; i < 4; ++i) {
            double sum = 0;
            for (int64_t j = 0; j < 9; ++j) {
                CHECK(p.at(i, j) >= 0);
                if (trial % 2 == 0) CHECK(p.at(i, j) > 0);
                sum += static_cast<double>(p.at(i, j));
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax rejects NaN input") {
    Tensor z({1, 2}, {scalar(NAN), 0});
    CHECK_THROWS_AS(softmax(z), NumericError);
}

TEST_CASE("layernorm hand cases") {
    Tensor gamma = Tensor::full({3}, 1);
    Tensor beta({3});
    Tensor constant({1, 3}, {5, 5, 5});
    Tensor out = layernorm(constant, gamma, beta, scalar(1e-5));
    for (scalar v : out.data) CHECK(v == scalar(0));

    Tensor g2 = Tensor::full({2}, 1);
    Tensor b2({2});
    Tensor pm({1, 2}, {1, -1});
    Tensor out2 = layernorm(pm, g2, b2, 0);
    CHECK(out2.data[0] == scalar(1));
    CHECK(out2.data[1] == scalar(-1));
}

TEST_CASE("layernorm matches the fp64 oracle") {
    Rng rng(29);
    Tensor x = random_tensor({1, 16}, rng, 2.0);
    Tensor gamma = random_tensor({16}, rng);
    Tensor beta = random_tensor({16}, rng);
    Tensor got = layernorm(x, gamma, beta, scalar(1e-5));
    std::vector<double> xr(16), gr(16), br(16);
    for (int j = 0; j < 16; ++j) {
        xr[j] = static_cast<double>(x.data[j]);
        gr[j] = static_cast<double>(gamma.data[j]);
        br[j] = static_cast<double>(beta.data[j]);
    }
    auto want = ref::layernorm_f64(xr, gr, br, 1e-5);
    for (int j = 0; j < 16; ++j)
        CHECK(std::abs(static_cast<double>(got.data[j]) - want[j]) < 1e-5);
}

TEST_CASE("int8_matmul zero case") {
    QuantTensor a({2, 3}, std::vector<int8_t>(6, 0), 0.5f);
    QuantTensor b({3, 2}, std::vector<int8_t>(6, 0), 0.25f);
    Tensor c = int8_matmul(a, b);
    for (scalar v : c.data) CHECK(v == scalar(0));
}

TEST_CASE("int8_matmul identity up to quantization error") {
    // identity scaled so 1.0 -> code 127
    const float s = 1.0f / 127.0f;
    std::vector<int8_t> eye(9, 0);
    eye[0] = eye[4] = eye[8] = 127;
    QuantTensor qi({3, 3}, eye, s);
    std::vector<int8_t> vec = {31, -88, 112};
    QuantTensor qv({3, 1}, vec, 0.01f);
    Tensor out = int8_matmul(qi, qv);
    for (int j = 0; j < 3; ++j) {
        const double orig = static_cast<double>(vec[j]) * 0.01;
        CHECK(std::abs(static_cast<double>(out.data[j]) - orig) < 0.01 + 1e-9);
    }
}

TEST_CASE("int8_matmul matches the integer-arithmetic oracle exactly") {
    Rng rng(31);
    QuantTensor a, b;
    a.shape = {16, 16};
    b.shape = {16, 16};
    a.scale = 0.013f;
    b.scale = 0.021f;
    for (int i = 0; i < 256; ++i) {
        a.data.push_back(static_cast<int8_t>(rng.below(255) - 127));
        b.data.push_back(static_cast<int8_t>(rng.below(255) - 127));
    }
    int64_t peak = 0;
    Tensor want = ref::int8_matmul(a, b, &peak);
    CHECK(peak < (int64_t(1) << 31));
    Tensor got = int8_matmul(a, b);
    CHECK(bitwise_equal(got, want));
}

TEST_CASE("int8_matmul rejects overflow-prone inner dimensions") {
    const int64_t k = (int64_t(1) << 16) + 1;
    QuantTensor a({1, k}, std::vector<int8_t>(static_cast<size_t>(k), 1), 1.0f);
    QuantTensor b({k, 1}, std::vector<int8_t>(static_cast<size_t>(k), 1), 1.0f);
    CHECK_THROWS_AS(int8_matmul(a, b), ConfigError);
}
