#include "xlmt/tensor.hpp"

#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xlmt {

namespace {

void check_2d(const Tensor& t, const char* name) {
    if (t.ndim() != 2) throw ShapeError(concat(name, " must be 2-D, got ", t.shape_str()));
}

constexpr int64_t kMaxInt8Inner = int64_t(1) << 16;

}  // namespace

void set_kernel_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

int kernel_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul lhs");
    check_2d(b, "matmul rhs");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError(concat("matmul shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    const scalar* pa = a.data.data();
    const scalar* pb = b.data.data();
    scalar* pc = c.data.data();
    // ikj order: each c[i][j] accumulates over k in ascending order.
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        scalar* crow = pc + i * n;
        const scalar* arow = pa + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const scalar av = arow[kk];
            const scalar* brow = pb + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_tn lhs");
    check_2d(b, "matmul_tn rhs");
    const int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError(concat("matmul_tn shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    const scalar* pa = a.data.data();
    const scalar* pb = b.data.data();
    scalar* pc = c.data.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        scalar* crow = pc + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const scalar av = pa[kk * m + i];
            const scalar* brow = pb + kk * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt lhs");
    check_2d(b, "matmul_nt rhs");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError(concat("matmul_nt shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    const scalar* pa = a.data.data();
    const scalar* pb = b.data.data();
    scalar* pc = c.data.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        const scalar* arow = pa + i * k;
        scalar* crow = pc + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const scalar* brow = pb + j * k;
            scalar acc = 0;
            for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] = acc;
        }
    }
    return c;
}

Tensor softmax(const Tensor& x) {
    const int64_t c = x.cols();
    const int64_t r = x.rows();
    Tensor out(x.shape.empty() ? std::vector<int64_t>{1} : x.shape);
    const scalar* px = x.data.data();
    scalar* po = out.data.data();
    bool has_nan = false;
#pragma omp parallel for schedule(static) reduction(|| : has_nan)
    for (int64_t i = 0; i < r; ++i) {
        const scalar* row = px + i * c;
        scalar* orow = po + i * c;
        scalar mx = row[0];
        for (int64_t j = 0; j < c; ++j) {
            if (std::isnan(static_cast<double>(row[j]))) has_nan = true;
            if (row[j] > mx) mx = row[j];
        }
        scalar sum = 0;
        for (int64_t j = 0; j < c; ++j) {
            const scalar e = std::exp(row[j] - mx);
            orow[j] = e;
            sum += e;
        }
        const scalar inv = scalar(1) / sum;
        for (int64_t j = 0; j < c; ++j) orow[j] *= inv;
    }
    if (has_nan) throw NumericError("softmax: NaN input");
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, scalar eps) {
    const int64_t h = x.cols();
    if (gamma.numel() != h || beta.numel() != h)
        throw ShapeError(concat("layernorm gamma/beta must have ", h, " elements, got ",
                                gamma.shape_str(), " and ", beta.shape_str()));
    const int64_t r = x.rows();
    Tensor out(x.shape);
    const scalar* px = x.data.data();
    const scalar* pg = gamma.data.data();
    const scalar* pbt = beta.data.data();
    scalar* po = out.data.data();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < r; ++i) {
        const scalar* row = px + i * h;
        scalar* orow = po + i * h;
        scalar mean = 0;
        for (int64_t j = 0; j < h; ++j) mean += row[j];
        mean /= scalar(h);
        scalar var = 0;
        for (int64_t j = 0; j < h; ++j) {
            const scalar d = row[j] - mean;
            var += d * d;
        }
        var /= scalar(h);
        const scalar inv = scalar(1) / std::sqrt(var + eps);
        for (int64_t j = 0; j < h; ++j) orow[j] = (row[j] - mean) * inv * pg[j] + pbt[j];
    }
    return out;
}

Tensor int8_matmul(const QuantTensor& a, const QuantTensor& b) {
    if (a.shape.size() != 2 || b.shape.size() != 2)
        throw ShapeError(concat("int8_matmul needs 2-D inputs, got ", a.shape_str(), " and ", b.shape_str()));
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    if (b.shape[0] != k)
        throw ShapeError(concat("int8_matmul shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    if (k > kMaxInt8Inner)
        throw ConfigError(concat("int8_matmul inner dimension ", k, " exceeds i32-safe limit ", kMaxInt8Inner));
    Tensor c({m, n});
    const double dq = static_cast<double>(a.scale) * static_cast<double>(b.scale);
    const int8_t* pa = a.data.data();
    const int8_t* pb = b.data.data();
    scalar* pc = c.data.data();
    // Integer accumulation is exact, so the summation order is free; ikj keeps
    // the inner loop contiguous for vectorization.
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) {
        std::vector<int32_t> acc(static_cast<size_t>(n), 0);
        const int8_t* arow = pa + i * k;
        for (int64_t kk = 0; kk < k; ++kk) {
            const int32_t av = arow[kk];
            const int8_t* brow = pb + kk * n;
            int32_t* accp = acc.data();
            for (int64_t j = 0; j < n; ++j) accp[j] += av * static_cast<int32_t>(brow[j]);
        }
        scalar* crow = pc + i * n;
        for (int64_t j = 0; j < n; ++j)
            crow[j] = static_cast<scalar>(static_cast<double>(acc[static_cast<size_t>(j)]) * dq);
    }
    return c;
}

}  // namespace xlmt
