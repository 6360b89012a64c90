#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "xlmt/batch.hpp"
#include "xlmt/tensor.hpp"

namespace xlmt {

struct LayerShape {
    int heads = 0;
    int head_dim = 0;
    int proj_dim() const { return heads * head_dim; }
};

struct ModelConfig {
    int vocab_size = kByteVocabSize;
    int hidden = 64;
    int layers = 4;
    int heads = 4;
    int ffn_dim = 128;
    int max_seq_len = 128;
    float dropout_rate = 0.0f;
    // Per-layer attention shapes; empty means uniform heads x (hidden/heads).
    // Head pruning produces layers with fewer heads than the uniform default.
    std::vector<LayerShape> layer_shapes;

    LayerShape layer_shape(int l) const {
        if (!layer_shapes.empty()) return layer_shapes[static_cast<size_t>(l)];
        return LayerShape{heads, hidden / heads};
    }

    void validate() const {
        if (layers < 1 || heads < 1) throw ConfigError("model config: layers and heads must be >= 1");
        if (hidden < 1 || ffn_dim < 1 || max_seq_len < 2 || vocab_size < 1)
            throw ConfigError("model config: dimensions must be positive");
        if (layer_shapes.empty() && hidden % heads != 0)
            throw ConfigError(concat("model config: hidden ", hidden, " not divisible by heads ", heads));
        if (!layer_shapes.empty() && static_cast<int>(layer_shapes.size()) != layers)
            throw ConfigError("model config: layer_shapes size must equal layers");
        for (const LayerShape& ls : layer_shapes)
            if (ls.heads < 1 || ls.head_dim < 1)
                throw ConfigError("model config: per-layer head counts must be >= 1");
        if (dropout_rate < 0.0f || dropout_rate >= 1.0f)
            throw ConfigError("model config: dropout_rate must be in [0,1)");
    }
};

struct LayerParams {
    Tensor wq, wk, wv;  // [H x P], P = heads * head_dim
    Tensor wo;          // [P x H]
    Tensor w1;          // [H x F]
    Tensor w2;          // [F x H]
    Tensor ln1_gamma, ln1_beta;  // [H]
    Tensor ln2_gamma, ln2_beta;  // [H]
};

// Parameter container; also reused as the gradient accumulator since grads
// share every shape.
struct EncoderParams {
    ModelConfig config;
    Tensor tok_embed;  // [V x H]
    Tensor pos_embed;  // [max_seq_len x H]
    std::vector<LayerParams> layers;
    Tensor final_gamma, final_beta;  // pooled-representation layernorm

    static EncoderParams init(const ModelConfig& cfg, uint64_t seed);
    static EncoderParams zeros_like(const EncoderParams& other);

    int64_t param_count() const;
    bool all_finite() const;

    // Visits every parameter tensor in a fixed order with a stable name.
    void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
    void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
};

int64_t encoder_param_count(const ModelConfig& cfg);

struct ForwardOptions {
    bool training = false;
    uint64_t dropout_seed = 0;
};

// Quantization hooks for the forward pass. `observe` records per-site
// activation maxima (calibration); `simulate` routes weights and designated
// activations through quantize->dequantize (QAT fake-quant).
struct QuantSim {
    bool simulate = false;
    bool observe = false;
    std::map<std::string, float> scales;    // site -> activation scale
    std::map<std::string, float> observed;  // site -> max |x| seen this pass
};

// Activation-quantization site names, shared by QAT, calibration and int8
// inference. Layer sites are "layer<i>." + suffix.
namespace sites {
inline std::string attn_in(int l) { return concat("layer", l, ".attn_in"); }
inline std::string attn_proj_in(int l) { return concat("layer", l, ".attn_proj_in"); }
inline std::string ffn_in(int l) { return concat("layer", l, ".ffn_in"); }
inline std::string ffn_mid(int l) { return concat("layer", l, ".ffn_mid"); }
inline const char* pooled() { return "pooled"; }
}  // namespace sites

struct LayerCache {
    Tensor x_in;      // [B*S x H]
    Tensor x_mm;      // matmul input (fake-quant view of x_in when simulating)
    Tensor q, k, v;   // [B*S x P]
    Tensor probs;     // [B*A*S x S] attention rows, zero where masked
    Tensor ctx;       // [B*S x P]
    Tensor ctx_mm;    // fake-quant view of ctx
    Tensor resid1;    // x_in + dropout(attn_out)
    Tensor ln1_out;
    Tensor ln1_mean, ln1_inv;  // [B*S]
    Tensor ln1_mm;    // fake-quant view of ln1_out
    Tensor ffn_pre;   // [B*S x F]
    Tensor gelu_out;
    Tensor gelu_mm;   // fake-quant view of gelu_out
    Tensor resid2;
    Tensor ln2_mean, ln2_inv;
    Tensor ln2_out;
    std::vector<uint8_t> attn_drop, ffn_drop;  // kept masks when training
    std::vector<uint8_t> ste_attn_in, ste_proj_in, ste_ffn_in, ste_ffn_mid;
    LayerParams fq_weights;  // weights actually multiplied when simulating
};

struct ForwardCache {
    ModelConfig config;
    int64_t batch = 0, seq = 0;
    std::vector<int32_t> token_ids;
    std::vector<uint8_t> attn_mask;
    bool training = false;
    uint64_t dropout_seed = 0;
    bool simulated = false;
    Tensor embedded;  // after dropout, layer 0 input
    std::vector<uint8_t> emb_drop;
    std::vector<LayerCache> layers;
    Tensor mask_counts;  // [B] unmasked positions per row
    Tensor pooled_raw;   // [B x H] masked mean
    Tensor pool_mean, pool_inv;
    Tensor pooled;       // [B x H] after final layernorm
};

// Masked mean pooling over the final hidden states, then layernorm. Dropout
// runs only when opts.training is set, driven by the counter-based generator.
Tensor encode_forward(const EncoderParams& params, const Batch& batch, const ForwardOptions& opts,
                      ForwardCache* cache = nullptr, QuantSim* qs = nullptr);

// Exact gradients of the pooled output w.r.t. every parameter. Also returns
// d loss / d layer-0 input through grad_embedded if requested.
EncoderParams encode_backward(const EncoderParams& params, const ForwardCache& cache,
                              const Tensor& grad_pooled);

// Per-head context slices (before the Wo projection) for one layer, given that
// layer's input. Concatenating the slices reproduces the fused path bitwise.
std::vector<Tensor> attention_head_outputs(const EncoderParams& params, int layer, const Tensor& x_in,
                                           const Batch& batch);

// Hard-masked scaled-dot attention from precomputed q/k/v. Shared by the
// fp32 training path and the int8 inference path.
Tensor attention_context(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::vector<uint8_t>& mask, int64_t batch, int64_t seq,
                         const LayerShape& ls, Tensor* probs_out = nullptr);

constexpr scalar kLayerNormEps = static_cast<scalar>(1e-5);

}  // namespace xlmt
