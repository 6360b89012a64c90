#pragma once

#include "xlmt/tensor.hpp"

// Serial reference kernels. Straight-line single-threaded implementations kept
// independent of the parallel path: tests compare the two, and the kernel
// benchmark measures the parallel speedup against them.
namespace xlmt::ref {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Evaluated in fp64 regardless of the build scalar.
std::vector<double> softmax_f64(const std::vector<double>& row);
std::vector<double> layernorm_f64(const std::vector<double>& row, const std::vector<double>& gamma,
                                  const std::vector<double>& beta, double eps);

// Integer accumulation carried in int64, dequantized identically to the
// production kernel. Also reports the accumulator range seen.
Tensor int8_matmul(const QuantTensor& a, const QuantTensor& b, int64_t* max_abs_acc = nullptr);

}  // namespace xlmt::ref
