#include "xlmt/compress.hpp"

#include <algorithm>
#include <cmath>

namespace xlmt {

namespace {

Tensor take_columns(const Tensor& w, const std::vector<int>& heads, int head_dim) {
    const int64_t rows = w.dim(0);
    const int64_t out_cols = static_cast<int64_t>(heads.size()) * head_dim;
    Tensor out({rows, out_cols});
    for (int64_t r = 0; r < rows; ++r)
        for (size_t h = 0; h < heads.size(); ++h)
            for (int d = 0; d < head_dim; ++d)
                out.at(r, static_cast<int64_t>(h) * head_dim + d) =
                    w.at(r, static_cast<int64_t>(heads[h]) * head_dim + d);
    return out;
}

Tensor take_rows(const Tensor& w, const std::vector<int>& heads, int head_dim) {
    const int64_t cols = w.dim(1);
    const int64_t out_rows = static_cast<int64_t>(heads.size()) * head_dim;
    Tensor out({out_rows, cols});
    for (size_t h = 0; h < heads.size(); ++h)
        for (int d = 0; d < head_dim; ++d)
            for (int64_t c = 0; c < cols; ++c)
                out.at(static_cast<int64_t>(h) * head_dim + d, c) =
                    w.at(static_cast<int64_t>(heads[h]) * head_dim + d, c);
    return out;
}

Tensor int8_linear(const Tensor& x, const QuantTensor& w, float act_scale) {
    QuantTensor qx = quantize_with_scale(x, act_scale);
    return int8_matmul(qx, w);
}

float scale_for(const QuantModel& qm, const std::string& site) {
    auto it = qm.act_scales.find(site);
    if (it == qm.act_scales.end())
        throw ConfigError(concat("quant model is missing the activation scale for site ", site));
    return it->second;
}

}  // namespace

void PruneSpec::validate(const ModelConfig& cfg) const {
    if (keep_layers.empty()) throw ValidationError("prune spec: keep_layers is empty");
    int prev = -1;
    for (int l : keep_layers) {
        if (l <= prev) throw ValidationError("prune spec: keep_layers must be strictly increasing");
        if (l < 0 || l >= cfg.layers)
            throw ValidationError(concat("prune spec: layer ", l, " outside [0,", cfg.layers, ")"));
        prev = l;
    }
    if (!keep_heads.empty()) {
        if (keep_heads.size() != keep_layers.size())
            throw ValidationError("prune spec: keep_heads must list one entry per kept layer");
        for (size_t i = 0; i < keep_heads.size(); ++i) {
            const LayerShape ls = cfg.layer_shape(keep_layers[i]);
            if (keep_heads[i].empty())
                throw ValidationError(concat("prune spec: layer ", keep_layers[i], " keeps no heads"));
            int hprev = -1;
            for (int h : keep_heads[i]) {
                if (h <= hprev)
                    throw ValidationError("prune spec: kept head indices must be strictly increasing");
                if (h < 0 || h >= ls.heads)
                    throw ValidationError(concat("prune spec: head ", h, " outside [0,", ls.heads,
                                                 ") in layer ", keep_layers[i]));
                hprev = h;
            }
        }
    }
}

std::vector<int> uniform_keep_layers(int src_layers, int dst_layers) {
    if (dst_layers < 1 || dst_layers > src_layers)
        throw ValidationError(concat("cannot keep ", dst_layers, " of ", src_layers, " layers"));
    std::vector<int> keep;
    keep.reserve(static_cast<size_t>(dst_layers));
    // evenly spaced, e.g. 4 -> 2 keeps layers {1, 3}
    for (int i = 1; i <= dst_layers; ++i)
        keep.push_back((i * src_layers) / dst_layers - 1);
    return keep;
}

ClassifierModel prune(const ClassifierModel& model, const PruneSpec& spec) {
    const ModelConfig& src_cfg = model.encoder.config;
    spec.validate(src_cfg);

    ModelConfig cfg = src_cfg;
    cfg.layers = static_cast<int>(spec.keep_layers.size());
    cfg.layer_shapes.clear();
    for (size_t i = 0; i < spec.keep_layers.size(); ++i) {
        const LayerShape src_ls = src_cfg.layer_shape(spec.keep_layers[i]);
        const int kept = spec.keep_heads.empty() ? src_ls.heads
                                                 : static_cast<int>(spec.keep_heads[i].size());
        cfg.layer_shapes.push_back(LayerShape{kept, src_ls.head_dim});
    }

    ClassifierModel out;
    out.tasks = model.tasks;
    out.heads = model.heads;
    out.encoder.config = cfg;
    out.encoder.tok_embed = model.encoder.tok_embed;
    out.encoder.pos_embed = model.encoder.pos_embed;
    out.encoder.final_gamma = model.encoder.final_gamma;
    out.encoder.final_beta = model.encoder.final_beta;
    for (size_t i = 0; i < spec.keep_layers.size(); ++i) {
        const LayerParams& src = model.encoder.layers[static_cast<size_t>(spec.keep_layers[i])];
        const LayerShape src_ls = src_cfg.layer_shape(spec.keep_layers[i]);
        LayerParams dst;
        if (spec.keep_heads.empty() ||
            static_cast<int>(spec.keep_heads[i].size()) == src_ls.heads) {
            dst = src;
        } else {
            const std::vector<int>& heads = spec.keep_heads[i];
            dst.wq = take_columns(src.wq, heads, src_ls.head_dim);
            dst.wk = take_columns(src.wk, heads, src_ls.head_dim);
            dst.wv = take_columns(src.wv, heads, src_ls.head_dim);
            dst.wo = take_rows(src.wo, heads, src_ls.head_dim);
            dst.w1 = src.w1;
            dst.w2 = src.w2;
            dst.ln1_gamma = src.ln1_gamma;
            dst.ln1_beta = src.ln1_beta;
            dst.ln2_gamma = src.ln2_gamma;
            dst.ln2_beta = src.ln2_beta;
        }
        out.encoder.layers.push_back(std::move(dst));
    }
    return out;
}

std::map<std::string, float> calibrate_activations(const ClassifierModel& model,
                                                   const std::vector<Batch>& calibration) {
    if (calibration.empty()) throw ConfigError("calibration needs at least one batch");
    QuantSim qs;
    qs.observe = true;
    for (const Batch& batch : calibration) {
        Tensor pooled = encode_forward(model.encoder, batch, ForwardOptions{}, nullptr, &qs);
        double mx = 0.0;
        for (scalar v : pooled.data) mx = std::max(mx, std::abs(static_cast<double>(v)));
        auto it = qs.observed.find(sites::pooled());
        if (it == qs.observed.end())
            qs.observed[sites::pooled()] = static_cast<float>(mx);
        else
            it->second = std::max(it->second, static_cast<float>(mx));
    }
    std::map<std::string, float> scales;
    for (const auto& [site, mx] : qs.observed)
        scales[site] = mx > 0.0f ? mx / 127.0f : 1.0f;
    return scales;
}

QuantModel quantize_model(const ClassifierModel& model, std::map<std::string, float> act_scales) {
    QuantModel qm;
    qm.config = model.encoder.config;
    qm.tasks = model.tasks;
    qm.tok_embed = model.encoder.tok_embed;
    qm.pos_embed = model.encoder.pos_embed;
    qm.final_gamma = model.encoder.final_gamma;
    qm.final_beta = model.encoder.final_beta;
    for (const LayerParams& lp : model.encoder.layers) {
        QuantModel::QLayer ql;
        ql.wq = quantize_weights(lp.wq);
        ql.wk = quantize_weights(lp.wk);
        ql.wv = quantize_weights(lp.wv);
        ql.wo = quantize_weights(lp.wo);
        ql.w1 = quantize_weights(lp.w1);
        ql.w2 = quantize_weights(lp.w2);
        ql.ln1_gamma = lp.ln1_gamma;
        ql.ln1_beta = lp.ln1_beta;
        ql.ln2_gamma = lp.ln2_gamma;
        ql.ln2_beta = lp.ln2_beta;
        qm.layers.push_back(std::move(ql));
    }
    for (const auto& [task, head] : model.heads) {
        qm.head_weights[task] = quantize_weights(head.weight);
        qm.head_biases[task] = head.bias;
    }
    qm.act_scales = std::move(act_scales);
    return qm;
}

std::map<std::string, Tensor> int8_infer(const QuantModel& qm, const Batch& batch_in) {
    const ModelConfig& cfg = qm.config;
    const Batch* bp = &batch_in;
    Batch truncated;
    if (batch_in.seq_len > cfg.max_seq_len) {
        // mirror encode_forward: over-length inputs are cut, not rejected
        truncated = batch_in;
        truncated.seq_len = cfg.max_seq_len;
        truncated.token_ids.resize(static_cast<size_t>(batch_in.batch_size * cfg.max_seq_len));
        truncated.attn_mask.resize(static_cast<size_t>(batch_in.batch_size * cfg.max_seq_len));
        for (int64_t b = 0; b < batch_in.batch_size; ++b)
            for (int64_t s = 0; s < cfg.max_seq_len; ++s) {
                truncated.token_ids[static_cast<size_t>(b * cfg.max_seq_len + s)] = batch_in.token(b, s);
                truncated.attn_mask[static_cast<size_t>(b * cfg.max_seq_len + s)] =
                    batch_in.attn_mask[static_cast<size_t>(b * batch_in.seq_len + s)];
            }
        bp = &truncated;
    }
    const Batch& batch = *bp;
    const int64_t b = batch.batch_size, s = batch.seq_len, h = cfg.hidden;
    const int64_t bs = b * s;

    Tensor x({bs, h});
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < s; ++j) {
            const int32_t id = batch.token(i, j);
            if (id < 0 || id >= cfg.vocab_size)
                throw ValidationError(concat("token id ", id, " outside vocab [0,", cfg.vocab_size, ")"));
            const scalar* te = qm.tok_embed.data.data() + static_cast<int64_t>(id) * h;
            const scalar* pe = qm.pos_embed.data.data() + j * h;
            scalar* row = x.data.data() + (i * s + j) * h;
            for (int64_t d = 0; d < h; ++d) row[d] = te[d] + pe[d];
        }

    for (int l = 0; l < cfg.layers; ++l) {
        const QuantModel::QLayer& ql = qm.layers[static_cast<size_t>(l)];
        const LayerShape ls = cfg.layer_shape(l);
        const float s_in = scale_for(qm, sites::attn_in(l));
        QuantTensor qx = quantize_with_scale(x, s_in);
        Tensor q = int8_matmul(qx, ql.wq);
        Tensor k = int8_matmul(qx, ql.wk);
        Tensor v = int8_matmul(qx, ql.wv);
        Tensor ctx = attention_context(q, k, v, batch.attn_mask, b, s, ls);
        Tensor attn = int8_linear(ctx, ql.wo, scale_for(qm, sites::attn_proj_in(l)));
        for (size_t i = 0; i < x.data.size(); ++i) attn.data[i] += x.data[i];
        Tensor ln1 = layernorm(attn, ql.ln1_gamma, ql.ln1_beta, kLayerNormEps);
        Tensor mid = int8_linear(ln1, ql.w1, scale_for(qm, sites::ffn_in(l)));
        for (scalar& vv : mid.data) {
            const double xd = static_cast<double>(vv);
            vv = static_cast<scalar>(xd * 0.5 * (1.0 + std::erf(xd * 0.7071067811865476)));
        }
        Tensor ffn = int8_linear(mid, ql.w2, scale_for(qm, sites::ffn_mid(l)));
        for (size_t i = 0; i < ffn.data.size(); ++i) ffn.data[i] += ln1.data[i];
        x = layernorm(ffn, ql.ln2_gamma, ql.ln2_beta, kLayerNormEps);
    }

    Tensor pooled_raw({b, h});
    for (int64_t i = 0; i < b; ++i) {
        scalar* prow = pooled_raw.data.data() + i * h;
        int64_t m = 0;
        for (int64_t j = 0; j < s; ++j) {
            if (!batch.attn_mask[static_cast<size_t>(i * s + j)]) continue;
            ++m;
            const scalar* row = x.data.data() + (i * s + j) * h;
            for (int64_t d = 0; d < h; ++d) prow[d] += row[d];
        }
        if (m == 0) throw ValidationError(concat("batch row ", i, " has an all-zero attention mask"));
        const scalar inv = scalar(1) / static_cast<scalar>(m);
        for (int64_t d = 0; d < h; ++d) prow[d] *= inv;
    }
    Tensor pooled = layernorm(pooled_raw, qm.final_gamma, qm.final_beta, kLayerNormEps);

    const float s_pooled = scale_for(qm, sites::pooled());
    std::map<std::string, Tensor> logits;
    for (const TaskSpec& spec : qm.tasks) {
        auto wit = qm.head_weights.find(spec.task_id);
        if (wit == qm.head_weights.end())
            throw ConfigError(concat("quant model has no head for task ", spec.task_id));
        Tensor z = int8_linear(pooled, wit->second, s_pooled);
        const Tensor& bias = qm.head_biases.at(spec.task_id);
        for (int64_t i = 0; i < z.dim(0); ++i)
            for (int64_t j = 0; j < z.dim(1); ++j) z.at(i, j) += bias.data[static_cast<size_t>(j)];
        logits.emplace(spec.task_id, std::move(z));
    }
    return logits;
}

Tensor fake_quant_forward(const EncoderParams& params, const Batch& batch, const ForwardOptions& opts,
                          QuantSim& qs, ForwardCache* cache) {
    qs.simulate = true;
    return encode_forward(params, batch, opts, cache, &qs);
}

void update_activation_scales(QuantSim& qs, float decay) {
    for (auto& [site, mx] : qs.observed) {
        const float fresh = mx > 0.0f ? mx / 127.0f : 0.0f;
        auto it = qs.scales.find(site);
        if (it == qs.scales.end() || it->second <= 0.0f)
            qs.scales[site] = fresh > 0.0f ? fresh : 1.0f;
        else
            it->second = decay * it->second + (1.0f - decay) * fresh;
    }
    qs.observed.clear();
}

}  // namespace xlmt
