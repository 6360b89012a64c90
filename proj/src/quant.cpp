#include "xlmt/quant.hpp"

#include <cmath>

namespace xlmt {

double round_half_even(double x) {
    const double f = std::floor(x);
    const double d = x - f;
    if (d > 0.5) return f + 1.0;
    if (d < 0.5) return f;
    return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

namespace {

int8_t code_of(double q) {
    double r = round_half_even(q);
    if (r > 127.0) r = 127.0;
    if (r < -127.0) r = -127.0;
    return static_cast<int8_t>(r);
}

}  // namespace

QuantTensor quantize_weights(const Tensor& w) {
    double maxabs = 0.0;
    for (scalar v : w.data) {
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("quantize_weights: non-finite weight");
        maxabs = std::max(maxabs, std::abs(static_cast<double>(v)));
    }
    QuantTensor q;
    q.shape = w.shape;
    q.data.resize(w.data.size());
    if (maxabs == 0.0) {
        q.scale = 1.0f;
        return q;  // codes already zero
    }
    q.scale = static_cast<float>(maxabs / 127.0);
    // codes = round_half_even(w * 127 / max|w|); computed this way the midpoint
    // cases land exactly on .5 (e.g. 0.5*127 = 63.5 -> 64).
    for (size_t i = 0; i < w.data.size(); ++i)
        q.data[i] = code_of(static_cast<double>(w.data[i]) * 127.0 / maxabs);
    return q;
}

QuantTensor quantize_with_scale(const Tensor& x, float scale) {
    if (!(scale > 0.0f)) throw ConfigError("quantize_with_scale: scale must be > 0");
    QuantTensor q;
    q.shape = x.shape;
    q.scale = scale;
    q.data.resize(x.data.size());
    const double s = static_cast<double>(scale);
    for (size_t i = 0; i < x.data.size(); ++i)
        q.data[i] = code_of(static_cast<double>(x.data[i]) / s);
    return q;
}

Tensor dequantize(const QuantTensor& q) {
    Tensor t(q.shape);
    for (size_t i = 0; i < q.data.size(); ++i)
        t.data[i] = static_cast<scalar>(static_cast<float>(q.data[i]) * q.scale);
    return t;
}

Tensor fake_quant_weight(const Tensor& w) { return dequantize(quantize_weights(w)); }

Tensor fake_quant_activation(const Tensor& x, float scale, std::vector<uint8_t>* pass) {
    if (!(scale > 0.0f)) throw ConfigError("fake_quant_activation: scale must be > 0");
    Tensor out(x.shape);
    if (pass) pass->assign(x.data.size(), 1);
    const double s = static_cast<double>(scale);
    const double clamp = 127.0 * s;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double v = static_cast<double>(x.data[i]);
        if (pass && std::abs(v) > clamp) (*pass)[i] = 0;
        out.data[i] = static_cast<scalar>(static_cast<double>(code_of(v / s)) * s);
    }
    return out;
}

}  // namespace xlmt
