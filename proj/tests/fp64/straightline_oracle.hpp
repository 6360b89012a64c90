#pragma once

// Independent straight-line re-implementation of the encoder forward pass in
// plain fp64 loops. Shares no code with the production path; used only to
// cross-check it.

#include <cmath>
#include <vector>

#include "xlmt/encoder.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < b[0].size(); ++j)
            for (size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat to_mat(const xlmt::Tensor& t) {
    Mat m(static_cast<size_t>(t.rows()), std::vector<double>(static_cast<size_t>(t.cols())));
    for (int64_t i = 0; i < t.rows(); ++i)
        for (int64_t j = 0; j < t.cols(); ++j) m[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            static_cast<double>(t.at(i, j));
    return m;
}

inline std::vector<double> layernorm_row(const std::vector<double>& x, const std::vector<double>& g,
                                         const std::vector<double>& b, double eps) {
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    std::vector<double> out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv * g[i] + b[i];
    return out;
}

inline double gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Returns pooled rows [B][H].
inline Mat encode(const xlmt::EncoderParams& params, const xlmt::Batch& batch) {
    const xlmt::ModelConfig& cfg = params.config;
    const int64_t b = batch.batch_size, s = batch.seq_len, h = cfg.hidden;
    const double eps = 1e-5;
    Mat tok = to_mat(params.tok_embed);
    Mat pos = to_mat(params.pos_embed);

    Mat x(static_cast<size_t>(b * s), std::vector<double>(static_cast<size_t>(h)));
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < s; ++j)
            for (int64_t d = 0; d < h; ++d)
                x[static_cast<size_t>(i * s + j)][static_cast<size_t>(d)] =
                    tok[static_cast<size_t>(batch.token(i, j))][static_cast<size_t>(d)] +
                    pos[static_cast<size_t>(j)][static_cast<size_t>(d)];

    for (int l = 0; l < cfg.layers; ++l) {
        const xlmt::LayerParams& lp = params.layers[static_cast<size_t>(l)];
        const xlmt::LayerShape ls = cfg.layer_shape(l);
        const int64_t p = ls.proj_dim();
        Mat wq = to_mat(lp.wq), wk = to_mat(lp.wk), wv = to_mat(lp.wv), wo = to_mat(lp.wo);
        Mat q = matmul(x, wq), k = matmul(x, wk), v = matmul(x, wv);

        Mat ctx(static_cast<size_t>(b * s), std::vector<double>(static_cast<size_t>(p), 0.0));
        for (int64_t bi = 0; bi < b; ++bi)
            for (int a = 0; a < ls.heads; ++a) {
                const int64_t col = static_cast<int64_t>(a) * ls.head_dim;
                for (int64_t i = 0; i < s; ++i) {
                    if (!batch.masked_in(bi, i)) continue;
                    std::vector<double> sc(static_cast<size_t>(s), 0.0);
                    double mx = -1e300;
                    for (int64_t j = 0; j < s; ++j) {
                        if (!batch.masked_in(bi, j)) continue;
                        double dot = 0;
                        for (int64_t d = 0; d < ls.head_dim; ++d)
                            dot += q[static_cast<size_t>(bi * s + i)][static_cast<size_t>(col + d)] *
                                   k[static_cast<size_t>(bi * s + j)][static_cast<size_t>(col + d)];
                        sc[static_cast<size_t>(j)] = dot / std::sqrt(static_cast<double>(ls.head_dim));
                        mx = std::max(mx, sc[static_cast<size_t>(j)]);
                    }
                    double sum = 0;
                    for (int64_t j = 0; j < s; ++j)
                        if (batch.masked_in(bi, j)) sum += std::exp(sc[static_cast<size_t>(j)] - mx);
                    for (int64_t j = 0; j < s; ++j) {
                        if (!batch.masked_in(bi, j)) continue;
                        const double pij = std::exp(sc[static_cast<size_t>(j)] - mx) / sum;
                        for (int64_t d = 0; d < ls.head_dim; ++d)
                            ctx[static_cast<size_t>(bi * s + i)][static_cast<size_t>(col + d)] +=
                                pij * v[static_cast<size_t>(bi * s + j)][static_cast<size_t>(col + d)];
                    }
                }
            }

        Mat attn = matmul(ctx, wo);
        std::vector<double> g1(static_cast<size_t>(h)), b1v(static_cast<size_t>(h));
        std::vector<double> g2(static_cast<size_t>(h)), b2v(static_cast<size_t>(h));
        for (int64_t d = 0; d < h; ++d) {
            g1[static_cast<size_t>(d)] = static_cast<double>(lp.ln1_gamma.data[static_cast<size_t>(d)]);
            b1v[static_cast<size_t>(d)] = static_cast<double>(lp.ln1_beta.data[static_cast<size_t>(d)]);
            g2[static_cast<size_t>(d)] = static_cast<double>(lp.ln2_gamma.data[static_cast<size_t>(d)]);
            b2v[static_cast<size_t>(d)] = static_cast<double>(lp.ln2_beta.data[static_cast<size_t>(d)]);
        }
        Mat ln1(x.size());
        for (size_t i = 0; i < x.size(); ++i) {
            std::vector<double> r(static_cast<size_t>(h));
            for (int64_t d = 0; d < h; ++d)
                r[static_cast<size_t>(d)] = x[i][static_cast<size_t>(d)] + attn[i][static_cast<size_t>(d)];
            ln1[i] = layernorm_row(r, g1, b1v, eps);
        }
        Mat w1 = to_mat(lp.w1), w2 = to_mat(lp.w2);
        Mat mid = matmul(ln1, w1);
        for (auto& row : mid)
            for (double& vv : row) vv = gelu(vv);
        Mat ffn = matmul(mid, w2);
        for (size_t i = 0; i < x.size(); ++i) {
            std::vector<double> r(static_cast<size_t>(h));
            for (int64_t d = 0; d < h; ++d)
                r[static_cast<size_t>(d)] = ln1[i][static_cast<size_t>(d)] + ffn[i][static_cast<size_t>(d)];
            x[i] = layernorm_row(r, g2, b2v, eps);
        }
    }

    std::vector<double> gf(static_cast<size_t>(h)), bf(static_cast<size_t>(h));
    for (int64_t d = 0; d < h; ++d) {
        gf[static_cast<size_t>(d)] = static_cast<double>(params.final_gamma.data[static_cast<size_t>(d)]);
        bf[static_cast<size_t>(d)] = static_cast<double>(params.final_beta.data[static_cast<size_t>(d)]);
    }
    Mat pooled(static_cast<size_t>(b));
    for (int64_t i = 0; i < b; ++i) {
        std::vector<double> mean(static_cast<size_t>(h), 0.0);
        int64_t m = 0;
        for (int64_t j = 0; j < s; ++j) {
            if (!batch.masked_in(i, j)) continue;
            ++m;
            for (int64_t d = 0; d < h; ++d)
                mean[static_cast<size_t>(d)] += x[static_cast<size_t>(i * s + j)][static_cast<size_t>(d)];
        }
        for (double& vv : mean) vv /= static_cast<double>(m);
        pooled[static_cast<size_t>(i)] = layernorm_row(mean, gf, bf, eps);
    }
    return pooled;
}

}  // namespace oracle
