#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "xlmt/common.hpp"

namespace xlmt {

// Dense row-major tensor. No strided views; reshapes copy the shape only.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<scalar> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), scalar(0));
    }
    Tensor(std::vector<int64_t> s, std::vector<scalar> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw ShapeError(concat("tensor data size ", data.size(), " does not match shape ", shape_str()));
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 1) throw ShapeError("tensor dimensions must be >= 1");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int64_t> s, scalar v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // 2-D accessors; rows() collapses leading dimensions.
    int64_t rows() const { return numel() / cols(); }
    int64_t cols() const { return shape.empty() ? 1 : shape.back(); }

    scalar& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    scalar at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

// Symmetric int8 tensor: value = code * scale, zero-point 0, codes in [-127, 127].
struct QuantTensor {
    std::vector<int64_t> shape;
    std::vector<int8_t> data;
    float scale = 1.0f;

    QuantTensor() = default;
    QuantTensor(std::vector<int64_t> s, std::vector<int8_t> d, float sc)
        : shape(std::move(s)), data(std::move(d)), scale(sc) {}

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return numel() / cols(); }
    int64_t cols() const { return shape.empty() ? 1 : shape.back(); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

// Parallel kernels. All are pure and bit-reproducible: per output element the
// reduction order over k is fixed (ascending), so results do not depend on
// the OpenMP thread count.

// c[m,n] = sum_k a[m,k] * b[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// c[m,n] = sum_k a[k,m] * b[k,n]   (a transposed)
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// c[m,n] = sum_k a[m,k] * b[n,k]   (b transposed)
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Row-wise softmax over the last axis, max-subtracted. Throws NumericError on NaN input.
Tensor softmax(const Tensor& x);

// Per-row layernorm over the last axis H with scale gamma[H] and shift beta[H].
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, scalar eps);

// Integer matmul with i32 accumulation, dequantized as acc * a.scale * b.scale.
// k is limited to 2^16 so the accumulator cannot overflow (127*127*2^16 < 2^31).
Tensor int8_matmul(const QuantTensor& a, const QuantTensor& b);

void set_kernel_threads(int n);
int kernel_threads();

}  // namespace xlmt
