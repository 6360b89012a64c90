#include "xlmt/encoder.hpp"

#include <cmath>

#include "xlmt/quant.hpp"
#include "xlmt/rng.hpp"

namespace xlmt {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;

void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (scalar& v : t.data) v = static_cast<scalar>(rng.normal() * stddev);
}

scalar gelu_value(scalar x) {
    const double xd = static_cast<double>(x);
    return static_cast<scalar>(xd * 0.5 * (1.0 + std::erf(xd * 0.7071067811865476)));
}

scalar gelu_grad(scalar x) {
    const double xd = static_cast<double>(x);
    const double cdf = 0.5 * (1.0 + std::erf(xd * 0.7071067811865476));
    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * xd * xd);
    return static_cast<scalar>(cdf + xd * pdf);
}

// Inverted dropout; kept mask recorded for backward.
void apply_dropout(Tensor& x, float rate, uint64_t seed, uint64_t site, std::vector<uint8_t>& kept) {
    kept.assign(x.data.size(), 1);
    if (rate <= 0.0f) return;
    const scalar inv_keep = static_cast<scalar>(1.0 / (1.0 - static_cast<double>(rate)));
    for (size_t i = 0; i < x.data.size(); ++i) {
        if (counter_uniform(seed, site, i) < static_cast<double>(rate)) {
            kept[i] = 0;
            x.data[i] = 0;
        } else {
            x.data[i] *= inv_keep;
        }
    }
}

void dropout_backward(Tensor& grad, float rate, const std::vector<uint8_t>& kept) {
    if (rate <= 0.0f || kept.empty()) return;
    const scalar inv_keep = static_cast<scalar>(1.0 / (1.0 - static_cast<double>(rate)));
    for (size_t i = 0; i < grad.data.size(); ++i) grad.data[i] = kept[i] ? grad.data[i] * inv_keep : scalar(0);
}

void ste_mask(Tensor& grad, const std::vector<uint8_t>& pass) {
    if (pass.empty()) return;
    for (size_t i = 0; i < grad.data.size(); ++i)
        if (!pass[i]) grad.data[i] = 0;
}

Tensor layernorm_fwd(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& mean_out,
                     Tensor& inv_out) {
    const int64_t h = x.cols();
    const int64_t r = x.rows();
    Tensor out(x.shape);
    mean_out = Tensor({r});
    inv_out = Tensor({r});
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < r; ++i) {
        const scalar* row = x.data.data() + i * h;
        scalar* orow = out.data.data() + i * h;
        scalar mean = 0;
        for (int64_t j = 0; j < h; ++j) mean += row[j];
        mean /= scalar(h);
        scalar var = 0;
        for (int64_t j = 0; j < h; ++j) {
            const scalar d = row[j] - mean;
            var += d * d;
        }
        var /= scalar(h);
        const scalar inv = scalar(1) / std::sqrt(var + kLayerNormEps);
        mean_out.data[static_cast<size_t>(i)] = mean;
        inv_out.data[static_cast<size_t>(i)] = inv;
        for (int64_t j = 0; j < h; ++j)
            orow[j] = (row[j] - mean) * inv * gamma.data[static_cast<size_t>(j)] +
                      beta.data[static_cast<size_t>(j)];
    }
    return out;
}

// dgamma/dbeta accumulate serially so the row order is fixed.
Tensor layernorm_bwd(const Tensor& x, const Tensor& gamma, const Tensor& mean, const Tensor& inv,
                     const Tensor& dy, Tensor& dgamma, Tensor& dbeta) {
    const int64_t h = x.cols();
    const int64_t r = x.rows();
    Tensor dx(x.shape);
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < r; ++i) {
        const scalar* row = x.data.data() + i * h;
        const scalar* dyr = dy.data.data() + i * h;
        scalar* dxr = dx.data.data() + i * h;
        const scalar mu = mean.data[static_cast<size_t>(i)];
        const scalar iv = inv.data[static_cast<size_t>(i)];
        scalar mg = 0, mgx = 0;
        for (int64_t j = 0; j < h; ++j) {
            const scalar g = dyr[j] * gamma.data[static_cast<size_t>(j)];
            const scalar xh = (row[j] - mu) * iv;
            mg += g;
            mgx += g * xh;
        }
        mg /= scalar(h);
        mgx /= scalar(h);
        for (int64_t j = 0; j < h; ++j) {
            const scalar g = dyr[j] * gamma.data[static_cast<size_t>(j)];
            const scalar xh = (row[j] - mu) * iv;
            dxr[j] = iv * (g - mg - xh * mgx);
        }
    }
    for (int64_t i = 0; i < r; ++i) {
        const scalar* row = x.data.data() + i * h;
        const scalar* dyr = dy.data.data() + i * h;
        const scalar mu = mean.data[static_cast<size_t>(i)];
        const scalar iv = inv.data[static_cast<size_t>(i)];
        for (int64_t j = 0; j < h; ++j) {
            dgamma.data[static_cast<size_t>(j)] += dyr[j] * (row[j] - mu) * iv;
            dbeta.data[static_cast<size_t>(j)] += dyr[j];
        }
    }
    return dx;
}

void add_inplace(Tensor& a, const Tensor& b) {
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

struct AttnOut {
    Tensor q, k, v, probs, ctx;
};

AttnOut attention_core(const LayerParams& lp, const LayerShape& ls, const Tensor& x_mm,
                       const std::vector<uint8_t>& mask, int64_t batch, int64_t seq) {
    AttnOut out;
    out.q = matmul(x_mm, lp.wq);
    out.k = matmul(x_mm, lp.wk);
    out.v = matmul(x_mm, lp.wv);
    out.ctx = attention_context(out.q, out.k, out.v, mask, batch, seq, ls, &out.probs);
    return out;
}

Batch truncate_batch(const Batch& batch, int max_seq_len) {
    Batch t;
    t.batch_size = batch.batch_size;
    t.seq_len = max_seq_len;
    t.languages = batch.languages;
    t.labels = batch.labels;
    t.token_ids.resize(static_cast<size_t>(t.batch_size * t.seq_len));
    t.attn_mask.resize(static_cast<size_t>(t.batch_size * t.seq_len));
    for (int64_t b = 0; b < t.batch_size; ++b)
        for (int64_t s = 0; s < t.seq_len; ++s) {
            t.token_ids[static_cast<size_t>(b * t.seq_len + s)] = batch.token(b, s);
            t.attn_mask[static_cast<size_t>(b * t.seq_len + s)] = batch.attn_mask[static_cast<size_t>(b * batch.seq_len + s)];
        }
    return t;
}

void observe_site(QuantSim* qs, const std::string& site, const Tensor& x) {
    if (!qs || !qs->observe) return;
    double mx = 0.0;
    for (scalar v : x.data) mx = std::max(mx, std::abs(static_cast<double>(v)));
    auto it = qs->observed.find(site);
    if (it == qs->observed.end())
        qs->observed[site] = static_cast<float>(mx);
    else
        it->second = std::max(it->second, static_cast<float>(mx));
}

float site_scale(const QuantSim* qs, const std::string& site) {
    auto it = qs->scales.find(site);
    if (it == qs->scales.end()) throw ConfigError(concat("no activation scale for site ", site));
    if (!(it->second > 0.0f)) throw ConfigError(concat("activation scale must be > 0 at site ", site));
    return it->second;
}

}  // namespace

// Hard-masked attention: masked keys are skipped entirely, so their content
// cannot leak into unmasked rows. Masked query rows produce zero context.
Tensor attention_context(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::vector<uint8_t>& mask, int64_t batch, int64_t seq,
                         const LayerShape& ls, Tensor* probs_out) {
    const int64_t heads = ls.heads, dh = ls.head_dim, p = ls.proj_dim();
    Tensor probs({batch * heads * seq, seq});
    Tensor ctx({batch * seq, p});
    const scalar inv_sqrt = static_cast<scalar>(1.0 / std::sqrt(static_cast<double>(dh)));
#pragma omp parallel for schedule(static)
    for (int64_t ba = 0; ba < batch * heads; ++ba) {
        const int64_t b = ba / heads;
        const int64_t a = ba % heads;
        const int64_t col = a * dh;
        std::vector<scalar> scores(static_cast<size_t>(seq));
        for (int64_t i = 0; i < seq; ++i) {
            if (!mask[static_cast<size_t>(b * seq + i)]) continue;
            const scalar* qi = q.data.data() + (b * seq + i) * p + col;
            scalar mx = 0;
            bool first = true;
            for (int64_t j = 0; j < seq; ++j) {
                if (!mask[static_cast<size_t>(b * seq + j)]) continue;
                const scalar* kj = k.data.data() + (b * seq + j) * p + col;
                scalar s = 0;
                for (int64_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
                s *= inv_sqrt;
                scores[static_cast<size_t>(j)] = s;
                if (first || s > mx) {
                    mx = s;
                    first = false;
                }
            }
            scalar sum = 0;
            scalar* prow = probs.data.data() + (ba * seq + i) * seq;
            for (int64_t j = 0; j < seq; ++j) {
                if (!mask[static_cast<size_t>(b * seq + j)]) continue;
                const scalar e = std::exp(scores[static_cast<size_t>(j)] - mx);
                prow[j] = e;
                sum += e;
            }
            const scalar inv = scalar(1) / sum;
            scalar* crow = ctx.data.data() + (b * seq + i) * p + col;
            for (int64_t j = 0; j < seq; ++j) {
                if (!mask[static_cast<size_t>(b * seq + j)]) continue;
                prow[j] *= inv;
                const scalar* vj = v.data.data() + (b * seq + j) * p + col;
                const scalar pij = prow[j];
                for (int64_t d = 0; d < dh; ++d) crow[d] += pij * vj[d];
            }
        }
    }
    if (probs_out) *probs_out = std::move(probs);
    return ctx;
}

EncoderParams EncoderParams::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderParams p;
    p.config = cfg;
    Rng rng(seed);
    const double std_init = 0.02;
    p.tok_embed = Tensor({cfg.vocab_size, cfg.hidden});
    fill_normal(p.tok_embed, rng, std_init);
    p.pos_embed = Tensor({cfg.max_seq_len, cfg.hidden});
    fill_normal(p.pos_embed, rng, std_init);
    p.layers.resize(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        const LayerShape ls = cfg.layer_shape(l);
        LayerParams& lp = p.layers[static_cast<size_t>(l)];
        lp.wq = Tensor({cfg.hidden, ls.proj_dim()});
        lp.wk = Tensor({cfg.hidden, ls.proj_dim()});
        lp.wv = Tensor({cfg.hidden, ls.proj_dim()});
        lp.wo = Tensor({ls.proj_dim(), cfg.hidden});
        lp.w1 = Tensor({cfg.hidden, cfg.ffn_dim});
        lp.w2 = Tensor({cfg.ffn_dim, cfg.hidden});
        fill_normal(lp.wq, rng, std_init);
        fill_normal(lp.wk, rng, std_init);
        fill_normal(lp.wv, rng, std_init);
        fill_normal(lp.wo, rng, std_init);
        fill_normal(lp.w1, rng, std_init);
        fill_normal(lp.w2, rng, std_init);
        lp.ln1_gamma = Tensor::full({cfg.hidden}, 1);
        lp.ln1_beta = Tensor({cfg.hidden});
        lp.ln2_gamma = Tensor::full({cfg.hidden}, 1);
        lp.ln2_beta = Tensor({cfg.hidden});
    }
    p.final_gamma = Tensor::full({cfg.hidden}, 1);
    p.final_beta = Tensor({cfg.hidden});
    return p;
}

EncoderParams EncoderParams::zeros_like(const EncoderParams& other) {
    EncoderParams p;
    p.config = other.config;
    p.tok_embed = Tensor(other.tok_embed.shape);
    p.pos_embed = Tensor(other.pos_embed.shape);
    p.layers.resize(other.layers.size());
    for (size_t l = 0; l < other.layers.size(); ++l) {
        const LayerParams& src = other.layers[l];
        LayerParams& dst = p.layers[l];
        dst.wq = Tensor(src.wq.shape);
        dst.wk = Tensor(src.wk.shape);
        dst.wv = Tensor(src.wv.shape);
        dst.wo = Tensor(src.wo.shape);
        dst.w1 = Tensor(src.w1.shape);
        dst.w2 = Tensor(src.w2.shape);
        dst.ln1_gamma = Tensor(src.ln1_gamma.shape);
        dst.ln1_beta = Tensor(src.ln1_beta.shape);
        dst.ln2_gamma = Tensor(src.ln2_gamma.shape);
        dst.ln2_beta = Tensor(src.ln2_beta.shape);
    }
    p.final_gamma = Tensor(other.final_gamma.shape);
    p.final_beta = Tensor(other.final_beta.shape);
    return p;
}

void EncoderParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("tok_embed", tok_embed);
    fn("pos_embed", pos_embed);
    for (size_t l = 0; l < layers.size(); ++l) {
        const std::string base = concat("layer", l, ".");
        fn(base + "wq", layers[l].wq);
        fn(base + "wk", layers[l].wk);
        fn(base + "wv", layers[l].wv);
        fn(base + "wo", layers[l].wo);
        fn(base + "w1", layers[l].w1);
        fn(base + "w2", layers[l].w2);
        fn(base + "ln1_gamma", layers[l].ln1_gamma);
        fn(base + "ln1_beta", layers[l].ln1_beta);
        fn(base + "ln2_gamma", layers[l].ln2_gamma);
        fn(base + "ln2_beta", layers[l].ln2_beta);
    }
    fn("final_ln_gamma", final_gamma);
    fn("final_ln_beta", final_beta);
}

void EncoderParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<EncoderParams*>(this)->for_each(
        [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

int64_t EncoderParams::param_count() const {
    int64_t n = 0;
    for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

bool EncoderParams::all_finite() const {
    bool ok = true;
    for_each([&ok](const std::string&, const Tensor& t) {
        for (scalar v : t.data)
            if (!std::isfinite(static_cast<double>(v))) ok = false;
    });
    return ok;
}

int64_t encoder_param_count(const ModelConfig& cfg) {
    int64_t n = static_cast<int64_t>(cfg.vocab_size) * cfg.hidden +
                static_cast<int64_t>(cfg.max_seq_len) * cfg.hidden;
    for (int l = 0; l < cfg.layers; ++l) {
        const LayerShape ls = cfg.layer_shape(l);
        const int64_t p = ls.proj_dim();
        n += 3 * static_cast<int64_t>(cfg.hidden) * p;  // wq wk wv
        n += p * static_cast<int64_t>(cfg.hidden);      // wo
        n += 2 * static_cast<int64_t>(cfg.hidden) * cfg.ffn_dim;
        n += 4 * static_cast<int64_t>(cfg.hidden);  // two layernorm pairs
    }
    n += 2 * static_cast<int64_t>(cfg.hidden);  // final layernorm
    return n;
}

Tensor encode_forward(const EncoderParams& params, const Batch& batch_in, const ForwardOptions& opts,
                      ForwardCache* cache, QuantSim* qs) {
    const ModelConfig& cfg = params.config;
    const Batch* bp = &batch_in;
    Batch truncated;
    if (batch_in.seq_len > cfg.max_seq_len) {
        truncated = truncate_batch(batch_in, cfg.max_seq_len);
        bp = &truncated;
    }
    const Batch& batch = *bp;
    const int64_t b = batch.batch_size, s = batch.seq_len, h = cfg.hidden;
    const int64_t bs = b * s;
    for (int64_t i = 0; i < bs; ++i) {
        const int32_t id = batch.token_ids[static_cast<size_t>(i)];
        if (id < 0 || id >= cfg.vocab_size)
            throw ValidationError(concat("token id ", id, " outside vocab [0,", cfg.vocab_size, ")"));
    }
    for (int64_t i = 0; i < b; ++i) {
        bool any = false;
        for (int64_t j = 0; j < s; ++j) any = any || batch.attn_mask[static_cast<size_t>(i * s + j)];
        if (!any) throw ValidationError(concat("batch row ", i, " has an all-zero attention mask"));
    }

    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc = ForwardCache{};
    fc.config = cfg;
    fc.batch = b;
    fc.seq = s;
    fc.token_ids = batch.token_ids;
    fc.attn_mask = batch.attn_mask;
    fc.training = opts.training;
    fc.dropout_seed = opts.dropout_seed;
    fc.simulated = qs && qs->simulate;

    Tensor x({bs, h});
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < s; ++j) {
            const int32_t id = batch.token_ids[static_cast<size_t>(i * s + j)];
            const scalar* te = params.tok_embed.data.data() + static_cast<int64_t>(id) * h;
            const scalar* pe = params.pos_embed.data.data() + j * h;
            scalar* row = x.data.data() + (i * s + j) * h;
            for (int64_t d = 0; d < h; ++d) row[d] = te[d] + pe[d];
        }
    if (opts.training) apply_dropout(x, cfg.dropout_rate, opts.dropout_seed, 0, fc.emb_drop);
    fc.embedded = x;

    fc.layers.resize(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        LayerCache& lc = fc.layers[static_cast<size_t>(l)];
        const LayerShape ls = cfg.layer_shape(l);
        lc.x_in = x;

        const LayerParams* w = &params.layers[static_cast<size_t>(l)];
        if (fc.simulated) {
            lc.fq_weights.wq = fake_quant_weight(w->wq);
            lc.fq_weights.wk = fake_quant_weight(w->wk);
            lc.fq_weights.wv = fake_quant_weight(w->wv);
            lc.fq_weights.wo = fake_quant_weight(w->wo);
            lc.fq_weights.w1 = fake_quant_weight(w->w1);
            lc.fq_weights.w2 = fake_quant_weight(w->w2);
            lc.fq_weights.ln1_gamma = w->ln1_gamma;
            lc.fq_weights.ln1_beta = w->ln1_beta;
            lc.fq_weights.ln2_gamma = w->ln2_gamma;
            lc.fq_weights.ln2_beta = w->ln2_beta;
            w = &lc.fq_weights;
        }

        observe_site(qs, sites::attn_in(l), x);
        lc.x_mm = fc.simulated ? fake_quant_activation(x, site_scale(qs, sites::attn_in(l)), &lc.ste_attn_in)
                               : x;

        AttnOut at = attention_core(*w, ls, lc.x_mm, batch.attn_mask, b, s);
        lc.q = std::move(at.q);
        lc.k = std::move(at.k);
        lc.v = std::move(at.v);
        lc.probs = std::move(at.probs);
        lc.ctx = std::move(at.ctx);

        observe_site(qs, sites::attn_proj_in(l), lc.ctx);
        lc.ctx_mm = fc.simulated
                        ? fake_quant_activation(lc.ctx, site_scale(qs, sites::attn_proj_in(l)), &lc.ste_proj_in)
                        : lc.ctx;

        Tensor attn_out = matmul(lc.ctx_mm, w->wo);
        if (opts.training)
            apply_dropout(attn_out, cfg.dropout_rate, opts.dropout_seed, 1 + 2 * static_cast<uint64_t>(l),
                          lc.attn_drop);
        lc.resid1 = x;
        add_inplace(lc.resid1, attn_out);
        lc.ln1_out = layernorm_fwd(lc.resid1, w->ln1_gamma, w->ln1_beta, lc.ln1_mean, lc.ln1_inv);

        observe_site(qs, sites::ffn_in(l), lc.ln1_out);
        lc.ln1_mm = fc.simulated
                        ? fake_quant_activation(lc.ln1_out, site_scale(qs, sites::ffn_in(l)), &lc.ste_ffn_in)
                        : lc.ln1_out;

        lc.ffn_pre = matmul(lc.ln1_mm, w->w1);
        lc.gelu_out = Tensor(lc.ffn_pre.shape);
        for (size_t i = 0; i < lc.ffn_pre.data.size(); ++i)
            lc.gelu_out.data[i] = gelu_value(lc.ffn_pre.data[i]);

        observe_site(qs, sites::ffn_mid(l), lc.gelu_out);
        lc.gelu_mm = fc.simulated ? fake_quant_activation(lc.gelu_out, site_scale(qs, sites::ffn_mid(l)),
                                                          &lc.ste_ffn_mid)
                                  : lc.gelu_out;

        Tensor ffn_out = matmul(lc.gelu_mm, w->w2);
        if (opts.training)
            apply_dropout(ffn_out, cfg.dropout_rate, opts.dropout_seed, 2 + 2 * static_cast<uint64_t>(l),
                          lc.ffn_drop);
        lc.resid2 = lc.ln1_out;
        add_inplace(lc.resid2, ffn_out);
        lc.ln2_out = layernorm_fwd(lc.resid2, w->ln2_gamma, w->ln2_beta, lc.ln2_mean, lc.ln2_inv);
        x = lc.ln2_out;
    }

    fc.mask_counts = Tensor({b});
    fc.pooled_raw = Tensor({b, h});
    for (int64_t i = 0; i < b; ++i) {
        scalar* prow = fc.pooled_raw.data.data() + i * h;
        int64_t m = 0;
        for (int64_t j = 0; j < s; ++j) {
            if (!batch.attn_mask[static_cast<size_t>(i * s + j)]) continue;
            ++m;
            const scalar* row = x.data.data() + (i * s + j) * h;
            for (int64_t d = 0; d < h; ++d) prow[d] += row[d];
        }
        fc.mask_counts.data[static_cast<size_t>(i)] = static_cast<scalar>(m);
        const scalar inv = scalar(1) / static_cast<scalar>(m);
        for (int64_t d = 0; d < h; ++d) prow[d] *= inv;
    }
    fc.pooled = layernorm_fwd(fc.pooled_raw, params.final_gamma, params.final_beta, fc.pool_mean, fc.pool_inv);
    return fc.pooled;
}

EncoderParams encode_backward(const EncoderParams& params, const ForwardCache& cache,
                              const Tensor& grad_pooled) {
    const ModelConfig& cfg = params.config;
    if (cache.config.layers != cfg.layers || cache.config.hidden != cfg.hidden)
        throw ValidationError("encode_backward: cache does not match the given parameters");
    const int64_t b = cache.batch, s = cache.seq, h = cfg.hidden;
    const int64_t bs = b * s;
    if (grad_pooled.rows() != b || grad_pooled.cols() != h)
        throw ShapeError(concat("grad_pooled must be [", b, "x", h, "], got ", grad_pooled.shape_str()));

    EncoderParams grads = EncoderParams::zeros_like(params);

    // final layernorm + masked mean pooling
    Tensor d_pooled_raw =
        layernorm_bwd(cache.pooled_raw, params.final_gamma, cache.pool_mean, cache.pool_inv, grad_pooled,
                      grads.final_gamma, grads.final_beta);
    Tensor dx({bs, h});
    for (int64_t i = 0; i < b; ++i) {
        const scalar inv = scalar(1) / cache.mask_counts.data[static_cast<size_t>(i)];
        const scalar* dp = d_pooled_raw.data.data() + i * h;
        for (int64_t j = 0; j < s; ++j) {
            if (!cache.attn_mask[static_cast<size_t>(i * s + j)]) continue;
            scalar* row = dx.data.data() + (i * s + j) * h;
            for (int64_t d = 0; d < h; ++d) row[d] = dp[d] * inv;
        }
    }

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const LayerShape ls = cfg.layer_shape(l);
        const int64_t p = ls.proj_dim();
        const LayerParams& w = cache.simulated ? lc.fq_weights : params.layers[static_cast<size_t>(l)];
        LayerParams& gw = grads.layers[static_cast<size_t>(l)];

        // x = ln2(resid2)
        Tensor d_resid2 =
            layernorm_bwd(lc.resid2, w.ln2_gamma, lc.ln2_mean, lc.ln2_inv, dx, gw.ln2_gamma, gw.ln2_beta);

        // resid2 = ln1_out + dropout(gelu_mm * w2)
        Tensor d_ln1_total = d_resid2;
        Tensor d_ffn_out = d_resid2;
        if (cache.training) dropout_backward(d_ffn_out, cfg.dropout_rate, lc.ffn_drop);
        add_inplace(gw.w2, matmul_tn(lc.gelu_mm, d_ffn_out));
        Tensor d_gelu = matmul_nt(d_ffn_out, w.w2);
        if (cache.simulated) ste_mask(d_gelu, lc.ste_ffn_mid);
        for (size_t i = 0; i < d_gelu.data.size(); ++i) d_gelu.data[i] *= gelu_grad(lc.ffn_pre.data[i]);
        add_inplace(gw.w1, matmul_tn(lc.ln1_mm, d_gelu));
        Tensor d_ln1_mm = matmul_nt(d_gelu, w.w1);
        if (cache.simulated) ste_mask(d_ln1_mm, lc.ste_ffn_in);
        add_inplace(d_ln1_total, d_ln1_mm);

        // ln1_out = ln1(resid1)
        Tensor d_resid1 = layernorm_bwd(lc.resid1, w.ln1_gamma, lc.ln1_mean, lc.ln1_inv, d_ln1_total,
                                        gw.ln1_gamma, gw.ln1_beta);

        // resid1 = x_in + dropout(ctx_mm * wo)
        Tensor d_x = d_resid1;
        Tensor d_attn_out = d_resid1;
        if (cache.training) dropout_backward(d_attn_out, cfg.dropout_rate, lc.attn_drop);
        add_inplace(gw.wo, matmul_tn(lc.ctx_mm, d_attn_out));
        Tensor d_ctx = matmul_nt(d_attn_out, w.wo);
        if (cache.simulated) ste_mask(d_ctx, lc.ste_proj_in);

        // attention backward
        Tensor dq({bs, p}), dk({bs, p}), dv({bs, p});
        const scalar inv_sqrt = static_cast<scalar>(1.0 / std::sqrt(static_cast<double>(ls.head_dim)));
#pragma omp parallel for schedule(static)
        for (int64_t ba = 0; ba < b * ls.heads; ++ba) {
            const int64_t bi = ba / ls.heads;
            const int64_t a = ba % ls.heads;
            const int64_t col = a * ls.head_dim;
            std::vector<scalar> dp(static_cast<size_t>(s));
            for (int64_t i = 0; i < s; ++i) {
                if (!cache.attn_mask[static_cast<size_t>(bi * s + i)]) continue;
                const scalar* dh_row = d_ctx.data.data() + (bi * s + i) * p + col;
                const scalar* prow = cache.layers[static_cast<size_t>(l)].probs.data.data() + (ba * s + i) * s;
                scalar sdot = 0;
                for (int64_t j = 0; j < s; ++j) {
                    if (!cache.attn_mask[static_cast<size_t>(bi * s + j)]) continue;
                    const scalar* vj = lc.v.data.data() + (bi * s + j) * p + col;
                    scalar d = 0;
                    for (int64_t e = 0; e < ls.head_dim; ++e) d += dh_row[e] * vj[e];
                    dp[static_cast<size_t>(j)] = d;
                    sdot += prow[j] * d;
                    scalar* dvj = dv.data.data() + (bi * s + j) * p + col;
                    const scalar pij = prow[j];
                    for (int64_t e = 0; e < ls.head_dim; ++e) dvj[e] += pij * dh_row[e];
                }
                const scalar* qi = lc.q.data.data() + (bi * s + i) * p + col;
                scalar* dqi = dq.data.data() + (bi * s + i) * p + col;
                for (int64_t j = 0; j < s; ++j) {
                    if (!cache.attn_mask[static_cast<size_t>(bi * s + j)]) continue;
                    const scalar ds = prow[j] * (dp[static_cast<size_t>(j)] - sdot) * inv_sqrt;
                    const scalar* kj = lc.k.data.data() + (bi * s + j) * p + col;
                    scalar* dkj = dk.data.data() + (bi * s + j) * p + col;
                    for (int64_t e = 0; e < ls.head_dim; ++e) {
                        dqi[e] += ds * kj[e];
                        dkj[e] += ds * qi[e];
                    }
                }
            }
        }
        add_inplace(gw.wq, matmul_tn(lc.x_mm, dq));
        add_inplace(gw.wk, matmul_tn(lc.x_mm, dk));
        add_inplace(gw.wv, matmul_tn(lc.x_mm, dv));
        Tensor d_x_mm = matmul_nt(dq, w.wq);
        add_inplace(d_x_mm, matmul_nt(dk, w.wk));
        add_inplace(d_x_mm, matmul_nt(dv, w.wv));
        if (cache.simulated) ste_mask(d_x_mm, lc.ste_attn_in);
        add_inplace(d_x, d_x_mm);
        dx = std::move(d_x);
    }

    if (cache.training) dropout_backward(dx, cfg.dropout_rate, cache.emb_drop);
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < s; ++j) {
            const int32_t id = cache.token_ids[static_cast<size_t>(i * s + j)];
            const scalar* row = dx.data.data() + (i * s + j) * h;
            scalar* te = grads.tok_embed.data.data() + static_cast<int64_t>(id) * h;
            scalar* pe = grads.pos_embed.data.data() + j * h;
            for (int64_t d = 0; d < h; ++d) {
                te[d] += row[d];
                pe[d] += row[d];
            }
        }
    return grads;
}

std::vector<Tensor> attention_head_outputs(const EncoderParams& params, int layer, const Tensor& x_in,
                                           const Batch& batch) {
    if (layer < 0 || layer >= params.config.layers)
        throw ValidationError(concat("attention_head_outputs: layer ", layer, " out of range"));
    const LayerShape ls = params.config.layer_shape(layer);
    AttnOut at = attention_core(params.layers[static_cast<size_t>(layer)], ls, x_in, batch.attn_mask,
                                batch.batch_size, batch.seq_len);
    std::vector<Tensor> heads;
    const int64_t bs = batch.batch_size * batch.seq_len;
    const int64_t p = ls.proj_dim();
    for (int a = 0; a < ls.heads; ++a) {
        Tensor slice({bs, ls.head_dim});
        for (int64_t i = 0; i < bs; ++i)
            for (int64_t d = 0; d < ls.head_dim; ++d)
                slice.at(i, d) = at.ctx.data[static_cast<size_t>(i * p + a * ls.head_dim + d)];
        heads.push_back(std::move(slice));
    }
    return heads;
}

}  // namespace xlmt
