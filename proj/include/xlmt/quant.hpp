#pragma once

#include "xlmt/tensor.hpp"

namespace xlmt {

// Round half to even, explicit so results do not depend on the fenv rounding mode.
double round_half_even(double x);

// Symmetric per-tensor quantization: scale = max|w|/127, codes in [-127,127]
// (-128 is never produced). All-zero input quantizes with scale 1.
QuantTensor quantize_weights(const Tensor& w);

// Quantize against a fixed scale (activation path, idempotence checks).
QuantTensor quantize_with_scale(const Tensor& x, float scale);

Tensor dequantize(const QuantTensor& q);

// quantize->dequantize against the tensor's own max-derived scale.
Tensor fake_quant_weight(const Tensor& w);

// quantize->dequantize against a fixed scale. When pass is given, records the
// straight-through mask: 1 where |x| <= 127*scale, 0 where the clamp saturates.
Tensor fake_quant_activation(const Tensor& x, float scale, std::vector<uint8_t>* pass = nullptr);

}  // namespace xlmt
