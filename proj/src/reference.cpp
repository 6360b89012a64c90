#include "xlmt/reference.hpp"

#include <cmath>

namespace xlmt::ref {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError(concat("ref::matmul shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            scalar acc = 0;
            for (int64_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    const int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError(concat("ref::matmul_tn shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            scalar acc = 0;
            for (int64_t kk = 0; kk < k; ++kk) acc += a.at(kk, i) * b.at(kk, j);
            c.at(i, j) = acc;
        }
    return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k)
        throw ShapeError(concat("ref::matmul_nt shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            scalar acc = 0;
            for (int64_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(j, kk);
            c.at(i, j) = acc;
        }
    return c;
}

std::vector<double> softmax_f64(const std::vector<double>& row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    std::vector<double> out(row.size());
    double sum = 0;
    for (size_t i = 0; i < row.size(); ++i) {
        out[i] = std::exp(row[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::vector<double> layernorm_f64(const std::vector<double>& row, const std::vector<double>& gamma,
                                  const std::vector<double>& beta, double eps) {
    const double n = static_cast<double>(row.size());
    double mean = 0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(row.size());
    for (size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean) * inv * gamma[i] + beta[i];
    return out;
}

Tensor int8_matmul(const QuantTensor& a, const QuantTensor& b, int64_t* max_abs_acc) {
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    if (b.shape[0] != k)
        throw ShapeError(concat("ref::int8_matmul shape mismatch: ", a.shape_str(), " x ", b.shape_str()));
    Tensor c({m, n});
    const double dq = static_cast<double>(a.scale) * static_cast<double>(b.scale);
    int64_t peak = 0;
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            int64_t acc = 0;
            for (int64_t kk = 0; kk < k; ++kk)
                acc += static_cast<int64_t>(a.data[static_cast<size_t>(i * k + kk)]) *
                       static_cast<int64_t>(b.data[static_cast<size_t>(kk * n + j)]);
            peak = std::max(peak, std::abs(acc));
            c.at(i, j) = static_cast<scalar>(static_cast<double>(acc) * dq);
        }
    if (max_abs_acc) *max_abs_acc = peak;
    return c;
}

}  // namespace xlmt::ref
