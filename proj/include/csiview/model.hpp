#pragma once

// The imaging network and its trainer.
//
// Encoder: one token per time step (channels x subcarriers flattened),
// linear projection to d_model plus a learned positional encoding, then
// n_layers pre-norm transformer blocks (multi-head self-attention over the
// window positions, two-layer GELU FFN, residual connections) and a mean
// pool over positions.
//
// Decoder: linear map from the pooled latent to a seed_grid x seed_grid x
// base_ch tensor, then repeated (nearest-neighbor 2x upsample, 3x3 same
// convolution, GELU except after the last stage), a final 3-channel 3x3
// convolution, and a logistic squash into (0,1).
//
// Everything is kept in 64-bit and the backward pass is written out by
// hand, exactly mirroring the forward pass; a finite-difference check in
// the test suite keeps it honest. Model files store parameters as f32.
//
// Parameter vector layout, in order:
//   enc_in_W [token_dim x d_model], enc_in_b [d_model]
//   pos_enc  [window_len x d_model]
//   per layer: ln1_gain, ln1_bias,
//              Wq, bq, Wk, bk, Wv, bv, Wo, bo   (all [d_model x d_model])
//              ln2_gain, ln2_bias,
//              ffn_W1 [d_model x d_ffn], ffn_b1, ffn_W2 [d_ffn x d_model], ffn_b2
//   dec_W [d_model x seed_grid^2 base_ch], dec_b
//   per stage: conv_K [3][3][base_ch][base_ch], conv_b [base_ch]
//   out_K [3][3][base_ch][3], out_b [3]
// Matrices are row-major with the input dimension major: y = x W + b.
// Conv kernels are [kh][kw][in_ch][out_ch]; feature maps are
// height x width x channels interleaved.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "csiview/binio.hpp"
#include "csiview/common.hpp"
#include "csiview/image.hpp"
#include "csiview/ingest.hpp"
#include "csiview/parallel.hpp"
#include "csiview/rng.hpp"

namespace csiview::net {

struct HyperParams {
    int n_channels = 4;
    int n_subcarriers = 64;
    int window_len = 50;
    int d_model = 32;
    int n_heads = 2;
    int n_layers = 2;
    int d_ffn = 64;
    int out_h = 32;
    int out_w = 32;
    int seed_grid = 4;   // decoder base grid side
    int base_ch = 16;    // decoder channel width
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 16;

    int token_dim() const { return n_channels * n_subcarriers; }
    int grid_dim() const { return seed_grid * seed_grid * base_ch; }
    bool operator==(const HyperParams&) const = default;
};

// Number of 2x upsample stages; throws unless out_h = seed_grid * 2^u, u >= 1.
inline int upsample_stages(const HyperParams& h) {
    int u = 0, side = h.seed_grid;
    while (side < h.out_h) {
        side *= 2;
        ++u;
    }
    if (side != h.out_h || u < 1)
        throw ConfigError("out_h must be seed_grid * 2^u with u >= 1");
    return u;
}

inline void validate(const HyperParams& h) {
    if (h.n_channels < 1 || h.n_subcarriers < 1 || h.window_len < 1 || h.d_model < 1 ||
        h.n_heads < 1 || h.n_layers < 1 || h.d_ffn < 1 || h.seed_grid < 1 || h.base_ch < 1)
        throw ConfigError("hyperparameter dimensions must be >= 1");
    if (h.d_model % h.n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (h.out_h != h.out_w) throw ConfigError("decoder emits square images: out_h must equal out_w");
    upsample_stages(h);
    if (h.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (h.momentum < 0.0 || h.momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (h.batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

struct ParamLayout {
    struct Entry {
        std::string name;
        std::size_t offset = 0;
        std::size_t count = 0;
        int fan_in = 0;   // 0: bias / gain tensor, not bound-checked
        int fan_out = 0;
        double init = 0.0;  // constant init for fan-less tensors
    };
    std::vector<Entry> entries;
    std::size_t total = 0;

    static ParamLayout of(const HyperParams& h) {
        ParamLayout layout;
        auto add = [&layout](const std::string& name, std::size_t count, int fi, int fo,
                             double init = 0.0) {
            layout.entries.push_back({name, layout.total, count, fi, fo, init});
            layout.total += count;
        };
        const std::size_t D = h.d_model, T = h.window_len, F = h.d_ffn;
        add("enc_in_W", static_cast<std::size_t>(h.token_dim()) * D, h.token_dim(), h.d_model);
        add("enc_in_b", D, 0, 0);
        add("pos_enc", T * D, h.d_model, h.d_model);
        for (int l = 0; l < h.n_layers; ++l) {
            const std::string p = "layer" + std::to_string(l) + ".";
            add(p + "ln1_gain", D, 0, 0, 1.0);
            add(p + "ln1_bias", D, 0, 0);
            for (const char* w : {"Wq", "Wk", "Wv", "Wo"}) {
                add(p + w, D * D, h.d_model, h.d_model);
                add(p + "b" + std::string(1, w[1]), D, 0, 0);
            }
            add(p + "ln2_gain", D, 0, 0, 1.0);
            add(p + "ln2_bias", D, 0, 0);
            add(p + "ffn_W1", D * F, h.d_model, h.d_ffn);
            add(p + "ffn_b1", F, 0, 0);
            add(p + "ffn_W2", F * D, h.d_ffn, h.d_model);
            add(p + "ffn_b2", D, 0, 0);
        }
        add("dec_W", D * h.grid_dim(), h.d_model, h.grid_dim());
        add("dec_b", static_cast<std::size_t>(h.grid_dim()), 0, 0);
        const int u = upsample_stages(h);
        for (int s = 0; s < u; ++s) {
            add("stage" + std::to_string(s) + ".K",
                static_cast<std::size_t>(9) * h.base_ch * h.base_ch, 9 * h.base_ch,
                9 * h.base_ch);
            add("stage" + std::to_string(s) + ".b", static_cast<std::size_t>(h.base_ch), 0, 0);
        }
        add("out_K", static_cast<std::size_t>(9) * h.base_ch * 3, 9 * h.base_ch, 9 * 3);
        add("out_b", 3, 0, 0);
        return layout;
    }

    const Entry& find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw ConfigError("no such parameter tensor: " + name);
    }
};

struct Model {
    HyperParams hyper;
    std::vector<double> parameters;
    int version = 1;
};

// Uniform Glorot-style init in +-sqrt(6 / (fan_in + fan_out)); biases and
// layer-norm biases zero, layer-norm gains one. Deterministic in the seed.
inline Model init_model(const HyperParams& hyper, std::uint64_t seed) {
    validate(hyper);
    const ParamLayout layout = ParamLayout::of(hyper);
    Model m;
    m.hyper = hyper;
    m.parameters.assign(layout.total, 0.0);
    rng::Stream stream(rng::key(seed, 0x6d6f64656cULL));  // "model"
    for (const auto& e : layout.entries) {
        if (e.fan_in > 0) {
            const double bound = std::sqrt(6.0 / (e.fan_in + e.fan_out));
            for (std::size_t i = 0; i < e.count; ++i)
                m.parameters[e.offset + i] = stream.next_uniform(-bound, bound);
        } else if (e.init != 0.0) {
            for (std::size_t i = 0; i < e.count; ++i) m.parameters[e.offset + i] = e.init;
        }
    }
    return m;
}

namespace detail {

constexpr double kLnEps = 1e-5;

constexpr double kInvSqrt2 = 0.7071067811865476;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_grad(double x) {
    const double phi_big = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double phi_small = std::exp(-0.5 * x * x) * 0.3989422804014327;
    return phi_big + x * phi_small;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y[t] = x[t] W + b for row-major W [n_in x n_out].
inline void linear_forward(const double* x, const double* W, const double* b, double* y,
                           int rows, int n_in, int n_out) {
    for (int t = 0; t < rows; ++t) {
        double* yt = y + static_cast<std::size_t>(t) * n_out;
        for (int o = 0; o < n_out; ++o) yt[o] = b[o];
        const double* xt = x + static_cast<std::size_t>(t) * n_in;
        for (int i = 0; i < n_in; ++i) {
            const double a = xt[i];
            const double* Wi = W + static_cast<std::size_t>(i) * n_out;
            for (int o = 0; o < n_out; ++o) yt[o] += a * Wi[o];
        }
    }
}

// Accumulates dW, db and writes dx (overwrites).
inline void linear_backward(const double* x, const double* W, const double* dy, double* dx,
                            double* dW, double* db, int rows, int n_in, int n_out) {
    for (int t = 0; t < rows; ++t) {
        const double* xt = x + static_cast<std::size_t>(t) * n_in;
        const double* dyt = dy + static_cast<std::size_t>(t) * n_out;
        for (int o = 0; o < n_out; ++o) db[o] += dyt[o];
        for (int i = 0; i < n_in; ++i) {
            const double a = xt[i];
            double* dWi = dW + static_cast<std::size_t>(i) * n_out;
            double acc = 0.0;
            const double* Wi = W + static_cast<std::size_t>(i) * n_out;
            for (int o = 0; o < n_out; ++o) {
                dWi[o] += a * dyt[o];
                acc += Wi[o] * dyt[o];
            }
            dx[static_cast<std::size_t>(t) * n_in + i] = acc;
        }
    }
}

// Row-wise layer norm with cached normalized values and inverse stddev.
inline void layernorm_forward(const double* x, const double* gain, const double* bias,
                              double* out, double* xhat, double* inv_std, int rows, int dim) {
    for (int t = 0; t < rows; ++t) {
        const double* xt = x + static_cast<std::size_t>(t) * dim;
        double mu = 0.0;
        for (int d = 0; d < dim; ++d) mu += xt[d];
        mu /= dim;
        double var = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double c = xt[d] - mu;
            var += c * c;
        }
        var /= dim;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        inv_std[t] = inv;
        double* xh = xhat + static_cast<std::size_t>(t) * dim;
        double* ot = out + static_cast<std::size_t>(t) * dim;
        for (int d = 0; d < dim; ++d) {
            xh[d] = (xt[d] - mu) * inv;
            ot[d] = xh[d] * gain[d] + bias[d];
        }
    }
}

inline void layernorm_backward(const double* dout, const double* xhat, const double* inv_std,
                               const double* gain, double* dx, double* dgain, double* dbias,
                               int rows, int dim) {
    for (int t = 0; t < rows; ++t) {
        const double* dot = dout + static_cast<std::size_t>(t) * dim;
        const double* xh = xhat + static_cast<std::size_t>(t) * dim;
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int d = 0; d < dim; ++d) {
            const double dxh = dot[d] * gain[d];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[d];
            dgain[d] += dot[d] * xh[d];
            dbias[d] += dot[d];
        }
        double* dxt = dx + static_cast<std::size_t>(t) * dim;
        const double inv = inv_std[t];
        for (int d = 0; d < dim; ++d) {
            const double dxh = dot[d] * gain[d];
            dxt[d] = inv * (dxh - sum_dxhat / dim - xh[d] * sum_dxhat_xhat / dim);
        }
    }
}

inline void conv3x3_forward(const double* in, const double* K, const double* b, double* out,
                            int h, int w, int in_ch, int out_ch) {
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double* o = out + (static_cast<std::size_t>(r) * w + c) * out_ch;
            for (int oc = 0; oc < out_ch; ++oc) o[oc] = b[oc];
            for (int dr = -1; dr <= 1; ++dr) {
                const int rr = r + dr;
                if (rr < 0 || rr >= h) continue;
                for (int dc = -1; dc <= 1; ++dc) {
                    const int cc = c + dc;
                    if (cc < 0 || cc >= w) continue;
                    const double* ip = in + (static_cast<std::size_t>(rr) * w + cc) * in_ch;
                    const double* Kp =
                        K + ((static_cast<std::size_t>(dr + 1) * 3 + (dc + 1)) * in_ch) * out_ch;
                    for (int ic = 0; ic < in_ch; ++ic) {
                        const double a = ip[ic];
                        const double* Kc = Kp + static_cast<std::size_t>(ic) * out_ch;
                        for (int oc = 0; oc < out_ch; ++oc) o[oc] += a * Kc[oc];
                    }
                }
            }
        }
    }
}

inline void conv3x3_backward(const double* in, const double* K, const double* dout, double* din,
                             double* dK, double* db, int h, int w, int in_ch, int out_ch) {
    std::fill(din, din + static_cast<std::size_t>(h) * w * in_ch, 0.0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double* dop = dout + (static_cast<std::size_t>(r) * w + c) * out_ch;
            for (int oc = 0; oc < out_ch; ++oc) db[oc] += dop[oc];
            for (int dr = -1; dr <= 1; ++dr) {
                const int rr = r + dr;
                if (rr < 0 || rr >= h) continue;
                for (int dc = -1; dc <= 1; ++dc) {
                    const int cc = c + dc;
                    if (cc < 0 || cc >= w) continue;
                    const double* ip = in + (static_cast<std::size_t>(rr) * w + cc) * in_ch;
                    double* dip = din + (static_cast<std::size_t>(rr) * w + cc) * in_ch;
                    const std::size_t tap =
                        (static_cast<std::size_t>(dr + 1) * 3 + (dc + 1)) * in_ch;
                    const double* Kp = K + tap * out_ch;
                    double* dKp = dK + tap * out_ch;
                    for (int ic = 0; ic < in_ch; ++ic) {
                        const double a = ip[ic];
                        const double* Kc = Kp + static_cast<std::size_t>(ic) * out_ch;
                        double* dKc = dKp + static_cast<std::size_t>(ic) * out_ch;
                        double acc = 0.0;
                        for (int oc = 0; oc < out_ch; ++oc) {
                            dKc[oc] += a * dop[oc];
                            acc += Kc[oc] * dop[oc];
                        }
                        dip[ic] += acc;
                    }
                }
            }
        }
    }
}

inline void upsample2x_forward(const double* in, double* out, int h, int w, int ch) {
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const double* ip = in + (static_cast<std::size_t>(r) * w + c) * ch;
            for (int dr = 0; dr < 2; ++dr) {
                for (int dc = 0; dc < 2; ++dc) {
                    double* op =
                        out + ((static_cast<std::size_t>(2 * r + dr) * 2 * w) + 2 * c + dc) * ch;
                    for (int k = 0; k < ch; ++k) op[k] = ip[k];
                }
            }
        }
    }
}

inline void upsample2x_backward(const double* dout, double* din, int h, int w, int ch) {
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double* dip = din + (static_cast<std::size_t>(r) * w + c) * ch;
            for (int k = 0; k < ch; ++k) dip[k] = 0.0;
            for (int dr = 0; dr < 2; ++dr) {
                for (int dc = 0; dc < 2; ++dc) {
                    const double* dop =
                        dout + ((static_cast<std::size_t>(2 * r + dr) * 2 * w) + 2 * c + dc) * ch;
                    for (int k = 0; k < ch; ++k) dip[k] += dop[k];
                }
            }
        }
    }
}

// Parameter views into the flat vector, resolved once per pass.
struct ParamView {
    const HyperParams& h;
    const double* base;

    struct Layer {
        const double *ln1_g, *ln1_b, *Wq, *bq, *Wk, *bk, *Wv, *bv, *Wo, *bo;
        const double *ln2_g, *ln2_b, *W1, *b1, *W2, *b2;
    };
    const double *enc_W, *enc_b, *pos;
    std::vector<Layer> layers;
    const double *dec_W, *dec_b;
    std::vector<const double*> stage_K, stage_b;
    const double *out_K, *out_b;

    ParamView(const HyperParams& hyper, const double* params) : h(hyper), base(params) {
        const double* p = params;
        auto take = [&p](std::size_t n) {
            const double* q = p;
            p += n;
            return q;
        };
        const std::size_t D = h.d_model, T = h.window_len, F = h.d_ffn;
        enc_W = take(static_cast<std::size_t>(h.token_dim()) * D);
        enc_b = take(D);
        pos = take(T * D);
        layers.resize(h.n_layers);
        for (auto& L : layers) {
            L.ln1_g = take(D);
            L.ln1_b = take(D);
            L.Wq = take(D * D);
            L.bq = take(D);
            L.Wk = take(D * D);
            L.bk = take(D);
            L.Wv = take(D * D);
            L.bv = take(D);
            L.Wo = take(D * D);
            L.bo = take(D);
            L.ln2_g = take(D);
            L.ln2_b = take(D);
            L.W1 = take(D * F);
            L.b1 = take(F);
            L.W2 = take(F * D);
            L.b2 = take(D);
        }
        dec_W = take(D * h.grid_dim());
        dec_b = take(h.grid_dim());
        const int u = upsample_stages(h);
        for (int s = 0; s < u; ++s) {
            stage_K.push_back(take(static_cast<std::size_t>(9) * h.base_ch * h.base_ch));
            stage_b.push_back(take(h.base_ch));
        }
        out_K = take(static_cast<std::size_t>(9) * h.base_ch * 3);
        out_b = take(3);
    }
};

struct MutParamView : ParamView {
    MutParamView(const HyperParams& hyper, double* params) : ParamView(hyper, params) {}
    double* at(const double* p) const { return const_cast<double*>(p); }
};

// All intermediate activations of one forward pass, retained for backward.
struct Workspace {
    struct LayerActs {
        std::vector<double> ln1_out, ln1_xhat, ln1_inv;
        std::vector<double> q, k, v, probs, attn_concat, attn_proj, res1;
        std::vector<double> ln2_out, ln2_xhat, ln2_inv;
        std::vector<double> ffn_pre, ffn_act, ffn_out, res2;
    };
    std::vector<double> tokens;   // [T][token_dim]
    std::vector<double> embed;    // [T][D] after projection + positional
    std::vector<LayerActs> layers;
    std::vector<double> pooled;       // [D]
    std::vector<double> grid;         // seed grid activations
    std::vector<std::vector<double>> stage_up;    // upsampled inputs per stage
    std::vector<std::vector<double>> stage_pre;   // conv outputs pre-GELU
    std::vector<std::vector<double>> stage_act;   // stage outputs (post-GELU or raw)
    std::vector<double> logits;   // [out_h][out_w][3]
    std::vector<double> probs;    // sigmoid(logits)

    // backward scratch
    std::vector<double> d_x, d_tmp, d_ln, d_q, d_k, d_v, d_concat, d_ffn1, d_ffn2, d_prow;
    std::vector<double> d_pooled, d_grid;
    std::vector<std::vector<double>> d_stage;
    std::vector<double> d_logits;

    void resize(const HyperParams& h) {
        const std::size_t T = h.window_len, D = h.d_model, F = h.d_ffn;
        const int u = upsample_stages(h);
        tokens.resize(T * h.token_dim());
        embed.resize(T * D);
        layers.resize(h.n_layers);
        for (auto& L : layers) {
            L.ln1_out.resize(T * D);
            L.ln1_xhat.resize(T * D);
            L.ln1_inv.resize(T);
            L.q.resize(T * D);
            L.k.resize(T * D);
            L.v.resize(T * D);
            L.probs.resize(static_cast<std::size_t>(h.n_heads) * T * T);
            L.attn_concat.resize(T * D);
            L.attn_proj.resize(T * D);
            L.res1.resize(T * D);
            L.ln2_out.resize(T * D);
            L.ln2_xhat.resize(T * D);
            L.ln2_inv.resize(T);
            L.ffn_pre.resize(T * F);
            L.ffn_act.resize(T * F);
            L.ffn_out.resize(T * D);
            L.res2.resize(T * D);
        }
        pooled.resize(D);
        grid.resize(h.grid_dim());
        stage_up.resize(u);
        stage_pre.resize(u);
        stage_act.resize(u);
        int side = h.seed_grid;
        for (int s = 0; s < u; ++s) {
            side *= 2;
            stage_up[s].resize(static_cast<std::size_t>(side) * side * h.base_ch);
            stage_pre[s].resize(static_cast<std::size_t>(side) * side * h.base_ch);
            stage_act[s].resize(static_cast<std::size_t>(side) * side * h.base_ch);
        }
        logits.resize(static_cast<std::size_t>(h.out_h) * h.out_w * 3);
        probs.resize(logits.size());

        d_x.resize(T * D);
        d_tmp.resize(T * D);
        d_ln.resize(T * D);
        d_q.resize(T * D);
        d_k.resize(T * D);
        d_v.resize(T * D);
        d_concat.resize(T * D);
        d_ffn1.resize(T * F);
        d_ffn2.resize(T * F);
        d_prow.resize(T);
        d_pooled.resize(D);
        d_grid.resize(h.grid_dim());
        d_stage.resize(u + 1);
        side = h.seed_grid;
        d_stage[0].resize(static_cast<std::size_t>(side) * side * h.base_ch);
        for (int s = 0; s < u; ++s) {
            side *= 2;
            d_stage[s + 1].resize(static_cast<std::size_t>(side) * side * h.base_ch);
        }
        d_logits.resize(logits.size());
    }
};

inline void gather_tokens(const HyperParams& h, const ingest::AmplitudeWindow& window,
                          double* tokens) {
    if (window.n_channels != h.n_channels || window.n_subcarriers != h.n_subcarriers ||
        window.window_len != h.window_len)
        throw DimensionError("input window dimensions do not match the model");
    for (int t = 0; t < h.window_len; ++t) {
        double* row = tokens + static_cast<std::size_t>(t) * h.token_dim();
        for (int c = 0; c < h.n_channels; ++c)
            for (int k = 0; k < h.n_subcarriers; ++k)
                row[c * h.n_subcarriers + k] = window.at(c, k, t);
    }
}

// Forward pass through the encoder and decoder; fills the workspace.
inline void forward_pass(const HyperParams& h, const ParamView& P, Workspace& ws) {
    const int T = h.window_len, D = h.d_model, F = h.d_ffn, H = h.n_heads;
    const int dh = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    linear_forward(ws.tokens.data(), P.enc_W, P.enc_b, ws.embed.data(), T, h.token_dim(), D);
    for (std::size_t i = 0; i < ws.embed.size(); ++i) ws.embed[i] += P.pos[i];

    const double* x = ws.embed.data();
    for (int l = 0; l < h.n_layers; ++l) {
        auto& L = ws.layers[l];
        const auto& W = P.layers[l];
        layernorm_forward(x, W.ln1_g, W.ln1_b, L.ln1_out.data(), L.ln1_xhat.data(),
                          L.ln1_inv.data(), T, D);
        linear_forward(L.ln1_out.data(), W.Wq, W.bq, L.q.data(), T, D, D);
        linear_forward(L.ln1_out.data(), W.Wk, W.bk, L.k.data(), T, D, D);
        linear_forward(L.ln1_out.data(), W.Wv, W.bv, L.v.data(), T, D, D);

        for (int head = 0; head < H; ++head) {
            const int off = head * dh;
            double* probs = L.probs.data() + static_cast<std::size_t>(head) * T * T;
            for (int i = 0; i < T; ++i) {
                double* prow = probs + static_cast<std::size_t>(i) * T;
                const double* qi = L.q.data() + static_cast<std::size_t>(i) * D + off;
                double max_s = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < T; ++j) {
                    const double* kj = L.k.data() + static_cast<std::size_t>(j) * D + off;
                    double s = 0.0;
                    for (int d = 0; d < dh; ++d) s += qi[d] * kj[d];
                    prow[j] = s * scale;
                    max_s = std::max(max_s, prow[j]);
                }
                double denom = 0.0;
                for (int j = 0; j < T; ++j) {
                    prow[j] = std::exp(prow[j] - max_s);
                    denom += prow[j];
                }
                for (int j = 0; j < T; ++j) prow[j] /= denom;
                double* out = L.attn_concat.data() + static_cast<std::size_t>(i) * D + off;
                for (int d = 0; d < dh; ++d) out[d] = 0.0;
                for (int j = 0; j < T; ++j) {
                    const double p = prow[j];
                    const double* vj = L.v.data() + static_cast<std::size_t>(j) * D + off;
                    for (int d = 0; d < dh; ++d) out[d] += p * vj[d];
                }
            }
        }
        linear_forward(L.attn_concat.data(), W.Wo, W.bo, L.attn_proj.data(), T, D, D);
        for (std::size_t i = 0; i < L.res1.size(); ++i) L.res1[i] = x[i] + L.attn_proj[i];

        layernorm_forward(L.res1.data(), W.ln2_g, W.ln2_b, L.ln2_out.data(), L.ln2_xhat.data(),
                          L.ln2_inv.data(), T, D);
        linear_forward(L.ln2_out.data(), W.W1, W.b1, L.ffn_pre.data(), T, D, F);
        for (std::size_t i = 0; i < L.ffn_pre.size(); ++i) L.ffn_act[i] = gelu(L.ffn_pre[i]);
        linear_forward(L.ffn_act.data(), W.W2, W.b2, L.ffn_out.data(), T, F, D);
        for (std::size_t i = 0; i < L.res2.size(); ++i) L.res2[i] = L.res1[i] + L.ffn_out[i];
        x = L.res2.data();
    }

    for (int d = 0; d < D; ++d) {
        double acc = 0.0;
        for (int t = 0; t < T; ++t) acc += x[static_cast<std::size_t>(t) * D + d];
        ws.pooled[d] = acc / T;
    }

    linear_forward(ws.pooled.data(), P.dec_W, P.dec_b, ws.grid.data(), 1, D, h.grid_dim());

    const int u = upsample_stages(h);
    const double* map = ws.grid.data();
    int side = h.seed_grid;
    for (int s = 0; s < u; ++s) {
        upsample2x_forward(map, ws.stage_up[s].data(), side, side, h.base_ch);
        side *= 2;
        conv3x3_forward(ws.stage_up[s].data(), P.stage_K[s], P.stage_b[s],
                        ws.stage_pre[s].data(), side, side, h.base_ch, h.base_ch);
        if (s + 1 < u) {
            for (std::size_t i = 0; i < ws.stage_pre[s].size(); ++i)
                ws.stage_act[s][i] = gelu(ws.stage_pre[s][i]);
        } else {
            ws.stage_act[s] = ws.stage_pre[s];  // no GELU after the last stage
        }
        map = ws.stage_act[s].data();
    }
    conv3x3_forward(map, P.out_K, P.out_b, ws.logits.data(), h.out_h, h.out_w, h.base_ch, 3);
    for (std::size_t i = 0; i < ws.logits.size(); ++i) ws.probs[i] = sigmoid(ws.logits[i]);
}

// Backward pass. ws.d_logits must hold dL/dlogits on entry; the parameter
// gradient is accumulated into grad (same layout as the parameter vector).
inline void backward_pass(const HyperParams& h, const ParamView& P, Workspace& ws,
                          double* grad) {
    const int T = h.window_len, D = h.d_model, F = h.d_ffn, H = h.n_heads;
    const int dh = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const MutParamView G(h, grad);

    const int u = upsample_stages(h);
    int side = h.out_h;
    const double* last_map = u > 0 ? ws.stage_act[u - 1].data() : ws.grid.data();
    conv3x3_backward(last_map, P.out_K, ws.d_logits.data(), ws.d_stage[u].data(),
                     G.at(G.out_K), G.at(G.out_b), h.out_h, h.out_w, h.base_ch, 3);

    for (int s = u - 1; s >= 0; --s) {
        // d_stage[s+1] holds the gradient at stage_act[s]
        if (s + 1 < u) {
            for (std::size_t i = 0; i < ws.d_stage[s + 1].size(); ++i)
                ws.d_stage[s + 1][i] *= gelu_grad(ws.stage_pre[s][i]);
        }
        std::vector<double>& d_up = ws.stage_pre[s];  // reuse as scratch for d(stage_up)
        conv3x3_backward(ws.stage_up[s].data(), P.stage_K[s], ws.d_stage[s + 1].data(),
                         d_up.data(), G.at(G.stage_K[s]), G.at(G.stage_b[s]), side, side,
                         h.base_ch, h.base_ch);
        side /= 2;
        upsample2x_backward(d_up.data(), ws.d_stage[s].data(), side, side, h.base_ch);
    }

    linear_backward(ws.pooled.data(), P.dec_W, ws.d_stage[0].data(), ws.d_pooled.data(),
                    G.at(G.dec_W), G.at(G.dec_b), 1, D, h.grid_dim());

    // mean pool: every position receives d_pooled / T
    for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d)
            ws.d_x[static_cast<std::size_t>(t) * D + d] = ws.d_pooled[d] / T;

    for (int l = h.n_layers - 1; l >= 0; --l) {
        auto& L = ws.layers[l];
        const auto& W = P.layers[l];
        const auto& Gl = G.layers[l];

        // FFN branch: res2 = res1 + W2 gelu(W1 ln2(res1) + b1) + b2
        for (std::size_t i = 0; i < ws.d_ffn2.size(); ++i) ws.d_ffn2[i] = 0.0;
        linear_backward(ws.layers[l].ffn_act.data(), W.W2, ws.d_x.data(), ws.d_ffn1.data(),
                        G.at(Gl.W2), G.at(Gl.b2), T, F, D);
        for (std::size_t i = 0; i < ws.d_ffn1.size(); ++i)
            ws.d_ffn1[i] *= gelu_grad(L.ffn_pre[i]);
        linear_backward(L.ln2_out.data(), W.W1, ws.d_ffn1.data(), ws.d_ln.data(), G.at(Gl.W1),
                        G.at(Gl.b1), T, D, F);
        layernorm_backward(ws.d_ln.data(), L.ln2_xhat.data(), L.ln2_inv.data(), W.ln2_g,
                           ws.d_tmp.data(), G.at(Gl.ln2_g), G.at(Gl.ln2_b), T, D);
        for (std::size_t i = 0; i < ws.d_x.size(); ++i) ws.d_x[i] += ws.d_tmp[i];

        // attention branch: res1 = x + Wo concat(heads) + bo
        linear_backward(L.attn_concat.data(), W.Wo, ws.d_x.data(), ws.d_concat.data(),
                        G.at(Gl.Wo), G.at(Gl.bo), T, D, D);
        std::fill(ws.d_q.begin(), ws.d_q.end(), 0.0);
        std::fill(ws.d_k.begin(), ws.d_k.end(), 0.0);
        std::fill(ws.d_v.begin(), ws.d_v.end(), 0.0);
        for (int head = 0; head < H; ++head) {
            const int off = head * dh;
            const double* probs = L.probs.data() + static_cast<std::size_t>(head) * T * T;
            for (int i = 0; i < T; ++i) {
                const double* prow = probs + static_cast<std::size_t>(i) * T;
                const double* doi = ws.d_concat.data() + static_cast<std::size_t>(i) * D + off;
                // dP = dO V^T first, then the softmax jacobian needs sum(dP * P)
                double dot_dp_p = 0.0;
                double* dp = ws.d_prow.data();
                for (int j = 0; j < T; ++j) {
                    const double* vj = L.v.data() + static_cast<std::size_t>(j) * D + off;
                    double acc = 0.0;
                    for (int d = 0; d < dh; ++d) acc += doi[d] * vj[d];
                    dp[j] = acc;
                    dot_dp_p += acc * prow[j];
                }
                for (int j = 0; j < T; ++j) {
                    const double p = prow[j];
                    double* dvj = ws.d_v.data() + static_cast<std::size_t>(j) * D + off;
                    for (int d = 0; d < dh; ++d) dvj[d] += p * doi[d];
                    const double ds = p * (dp[j] - dot_dp_p) * scale;
                    const double* kj = L.k.data() + static_cast<std::size_t>(j) * D + off;
                    const double* qi = L.q.data() + static_cast<std::size_t>(i) * D + off;
                    double* dqi = ws.d_q.data() + static_cast<std::size_t>(i) * D + off;
                    double* dkj = ws.d_k.data() + static_cast<std::size_t>(j) * D + off;
                    for (int d = 0; d < dh; ++d) {
                        dqi[d] += ds * kj[d];
                        dkj[d] += ds * qi[d];
                    }
                }
            }
        }
        linear_backward(L.ln1_out.data(), W.Wq, ws.d_q.data(), ws.d_ln.data(), G.at(Gl.Wq),
                        G.at(Gl.bq), T, D, D);
        linear_backward(L.ln1_out.data(), W.Wk, ws.d_k.data(), ws.d_tmp.data(), G.at(Gl.Wk),
                        G.at(Gl.bk), T, D, D);
        for (std::size_t i = 0; i < ws.d_ln.size(); ++i) ws.d_ln[i] += ws.d_tmp[i];
        linear_backward(L.ln1_out.data(), W.Wv, ws.d_v.data(), ws.d_tmp.data(), G.at(Gl.Wv),
                        G.at(Gl.bv), T, D, D);
        for (std::size_t i = 0; i < ws.d_ln.size(); ++i) ws.d_ln[i] += ws.d_tmp[i];
        layernorm_backward(ws.d_ln.data(), L.ln1_xhat.data(), L.ln1_inv.data(), W.ln1_g,
                           ws.d_tmp.data(), G.at(Gl.ln1_g), G.at(Gl.ln1_b), T, D);
        for (std::size_t i = 0; i < ws.d_x.size(); ++i) ws.d_x[i] += ws.d_tmp[i];
    }

    // embedding: d_x is the gradient at (tokens W + b + pos)
    {
        double* dpos = G.at(G.pos);
        for (std::size_t i = 0; i < ws.d_x.size(); ++i) dpos[i] += ws.d_x[i];
        std::vector<double> d_tokens(ws.tokens.size());
        linear_backward(ws.tokens.data(), P.enc_W, ws.d_x.data(), d_tokens.data(),
                        G.at(G.enc_W), G.at(G.enc_b), T, h.token_dim(), D);
    }
}

}  // namespace detail

// Deterministic forward pass; output pixels in (0,1).
inline ImageFrame forward(const Model& model, const ingest::AmplitudeWindow& input) {
    const auto& h = model.hyper;
    detail::ParamView P(h, model.parameters.data());
    detail::Workspace ws;
    ws.resize(h);
    detail::gather_tokens(h, input, ws.tokens.data());
    detail::forward_pass(h, P, ws);
    ImageFrame img;
    img.timestamp_ns = input.anchor_timestamp_ns;
    img.height = h.out_h;
    img.width = h.out_w;
    img.data.resize(ws.probs.size());
    for (std::size_t i = 0; i < ws.probs.size(); ++i)
        img.data[i] = static_cast<float>(ws.probs[i]);
    return img;
}

// Mean squared error over pixels, channels, and batch, plus its exact
// gradient with respect to every parameter. Per-sample gradients are
// computed in parallel and reduced by pairwise tree summation in index
// order, so the result is bit-identical for any worker count.
inline std::pair<double, std::vector<double>> loss_and_gradients(
    const Model& model, std::span<const ingest::AlignedPair> batch) {
    if (batch.empty()) throw DataError("loss_and_gradients: empty batch");
    const auto& h = model.hyper;
    const std::size_t n_params = model.parameters.size();
    const std::size_t B = batch.size();

    // validate up front so worker threads cannot throw
    for (const auto& pair : batch) {
        if (pair.window.n_channels != h.n_channels ||
            pair.window.n_subcarriers != h.n_subcarriers ||
            pair.window.window_len != h.window_len)
            throw DimensionError("batch window dimensions do not match the model");
        if (pair.frame.height != h.out_h || pair.frame.width != h.out_w)
            throw DimensionError("batch frame dimensions do not match the model");
    }

    std::vector<std::vector<double>> grads(B);
    std::vector<double> losses(B, 0.0);

    const unsigned workers = std::min<std::size_t>(num_threads(), B);
    std::vector<std::thread> threads;
    auto run_range = [&](unsigned w) {
        detail::ParamView P(h, model.parameters.data());
        detail::Workspace ws;
        ws.resize(h);
        for (std::size_t i = w; i < B; i += workers) {
            const auto& pair = batch[i];
            detail::gather_tokens(h, pair.window, ws.tokens.data());
            detail::forward_pass(h, P, ws);
            const double inv_n = 1.0 / static_cast<double>(ws.probs.size());
            double loss = 0.0;
            for (std::size_t p = 0; p < ws.probs.size(); ++p) {
                const double diff = ws.probs[p] - static_cast<double>(pair.frame.data[p]);
                loss += diff * diff;
                // d(mse)/dlogit = 2 diff / n * sigmoid'(logit)
                ws.d_logits[p] = 2.0 * diff * inv_n * ws.probs[p] * (1.0 - ws.probs[p]);
            }
            losses[i] = loss * inv_n;
            grads[i].assign(n_params, 0.0);
            detail::backward_pass(h, P, ws, grads[i].data());
        }
    };
    if (workers <= 1) {
        run_range(0);
    } else {
        threads.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) threads.emplace_back(run_range, w);
        for (auto& t : threads) t.join();
    }

    // pairwise tree reduction in index order
    for (std::size_t step = 1; step < B; step *= 2) {
        for (std::size_t i = 0; i + step < B; i += 2 * step) {
            double* dst = grads[i].data();
            const double* src = grads[i + step].data();
            for (std::size_t p = 0; p < n_params; ++p) dst[p] += src[p];
            losses[i] += losses[i + step];
        }
    }
    std::vector<double> grad = std::move(grads[0]);
    const double inv_b = 1.0 / static_cast<double>(B);
    for (auto& g : grad) g *= inv_b;
    return {losses[0] * inv_b, std::move(grad)};
}

struct TrainConfig {
    int epochs = 0;
    double learning_rate = 0.01;
    double momentum = 0.9;
    int batch_size = 16;
    std::uint64_t shuffle_seed = 0;
};

inline void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

// SGD with momentum: v <- mu v - eta g, theta <- theta + v. Per epoch the
// sample order is reshuffled deterministically from (shuffle_seed, epoch);
// the last partial minibatch is kept. The input model is never modified.
inline Model train_epochs(const Model& model, std::span<const ingest::AlignedPair> data,
                          const TrainConfig& cfg) {
    validate(cfg);
    Model out = model;
    if (cfg.epochs == 0) return out;
    if (data.empty()) throw DataError("train_epochs: no training pairs");

    std::vector<double> velocity(out.parameters.size(), 0.0);
    std::vector<std::size_t> order(data.size());
    std::vector<ingest::AlignedPair> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng::Stream stream(rng::key(cfg.shuffle_seed, static_cast<std::uint64_t>(epoch)));
        stream.shuffle(order);
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
            auto [loss, grad] = loss_and_gradients(out, batch);
            if (!std::isfinite(loss))
                throw DivergenceError("training diverged: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(start / cfg.batch_size));
            for (std::size_t p = 0; p < out.parameters.size(); ++p) {
                velocity[p] = cfg.momentum * velocity[p] - cfg.learning_rate * grad[p];
                out.parameters[p] += velocity[p];
            }
        }
    }
    return out;
}

// Model file: magic "CSIM", u32 version=1, hyperparameter block (u32:
// n_channels, n_subcarriers, window_len, d_model, n_heads, n_layers,
// d_ffn, out_h, out_w, seed_grid, base_ch, batch_size; f64: learning_rate,
// momentum), u64 parameter count, then f32 parameters in layout order.
inline void save_model(const Model& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path.string());
    out << "CSIM";
    io::put_u32(out, 1);
    const auto& h = model.hyper;
    for (int v : {h.n_channels, h.n_subcarriers, h.window_len, h.d_model, h.n_heads, h.n_layers,
                  h.d_ffn, h.out_h, h.out_w, h.seed_grid, h.base_ch, h.batch_size})
        io::put_u32(out, static_cast<std::uint32_t>(v));
    io::put_f64(out, h.learning_rate);
    io::put_f64(out, h.momentum);
    io::put_u64(out, model.parameters.size());
    for (const double p : model.parameters) io::put_f32(out, static_cast<float>(p));
    if (!out) throw DataError("short write: " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
    io::Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != "CSIM")
        throw DataError(path.string() + ": bad magic at offset 0");
    const std::uint32_t version = r.u32();
    if (version != 1)
        throw DataError(path.string() + ": unsupported version " + std::to_string(version) +
                        " at offset 4");
    Model m;
    HyperParams& h = m.hyper;
    for (int* v : {&h.n_channels, &h.n_subcarriers, &h.window_len, &h.d_model, &h.n_heads,
                   &h.n_layers, &h.d_ffn, &h.out_h, &h.out_w, &h.seed_grid, &h.base_ch,
                   &h.batch_size})
        *v = static_cast<int>(r.u32());
    h.learning_rate = r.f64();
    h.momentum = r.f64();
    try {
        validate(h);
    } catch (const ConfigError& e) {
        throw DataError(path.string() + ": invalid hyperparameters: " + e.what());
    }
    const std::uint64_t count = r.u64();
    const std::size_t expected = ParamLayout::of(h).total;
    if (count != expected)
        throw DataError(path.string() + ": parameter count " + std::to_string(count) +
                        " does not match hyperparameters (expected " +
                        std::to_string(expected) + ") at offset 72");
    m.parameters.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
        m.parameters[i] = static_cast<double>(r.f32());
    if (!r.at_eof())
        throw DataError(path.string() + ": trailing bytes at offset " +
                        std::to_string(r.offset));
    return m;
}

}  // namespace csiview::net
