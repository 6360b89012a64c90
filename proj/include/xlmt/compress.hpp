#pragma once

#include "xlmt/model.hpp"
#include "xlmt/quant.hpp"

namespace xlmt {

struct PruneSpec {
    std::vector<int> keep_layers;                // strictly increasing indices into the source
    std::vector<std::vector<int>> keep_heads;    // optional, one list per kept layer

    void validate(const ModelConfig& cfg) const;
};

// Uniformly spaced layer selection, e.g. 12 -> 6 keeps every other layer.
std::vector<int> uniform_keep_layers(int src_layers, int dst_layers);

// Copies the kept layers and heads verbatim into a smaller model. Dropped
// heads remove their column block from wq/wk/wv and the matching input rows
// of wo; head_dim is preserved so attention scaling is unchanged.
ClassifierModel prune(const ClassifierModel& model, const PruneSpec& spec);

// Int8 weights with per-tensor scales; layernorm, biases and embeddings stay
// fp32. Activation scales are the PTQ/QAT calibration results per site.
struct QuantModel {
    struct QLayer {
        QuantTensor wq, wk, wv, wo, w1, w2;
        Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    };
    ModelConfig config;
    std::vector<TaskSpec> tasks;
    Tensor tok_embed, pos_embed;
    std::vector<QLayer> layers;
    Tensor final_gamma, final_beta;
    std::map<std::string, QuantTensor> head_weights;
    std::map<std::string, Tensor> head_biases;
    std::map<std::string, float> act_scales;
};

// Per-site scale = max |activation| over the calibration batches / 127.
std::map<std::string, float> calibrate_activations(const ClassifierModel& model,
                                                   const std::vector<Batch>& calibration);

QuantModel quantize_model(const ClassifierModel& model, std::map<std::string, float> act_scales);

// Full inference on the int8 path: projection and FFN matmuls (and head
// matmuls) run as int8 x int8 with quantized activations; softmax, layernorm,
// residuals and biases stay fp32.
std::map<std::string, Tensor> int8_infer(const QuantModel& qm, const Batch& batch);

// One QAT forward (fake-quant weights + activations, observing new maxima).
// Backward runs through the ordinary encode_backward on the returned cache.
Tensor fake_quant_forward(const EncoderParams& params, const Batch& batch, const ForwardOptions& opts,
                          QuantSim& qs, ForwardCache* cache);

// EMA update of activation scales from the maxima observed this step.
void update_activation_scales(QuantSim& qs, float decay);

}  // namespace xlmt
