#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpword/cp.hpp"
#include "cpword/rng.hpp"
#include "cpword/vocab.hpp"

namespace cpword {

struct model_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowX = Eigen::Matrix<S, 1, Eigen::Dynamic>;

inline constexpr double kAttentionEps = 1e-6;  // additive denominator floor
inline constexpr double kLayerNormEps = 1e-5;

// Decoder hyperparameters. type_embed is aligned with the vocabulary's slot
// types for the task (7 entries conditional, 6 unconditional).
struct ModelConfig {
    Task task = Task::Unconditional;
    int d_model = 512;
    int n_layers = 12;
    int n_heads = 8;
    int d_ffn = 2048;
    int max_len = 5120;
    std::vector<int> type_embed;
    int family_embed = 32;
    std::string feature_map = "elu1";
    std::uint64_t seed = 1;

    int head_dim() const { return d_model / n_heads; }

    int concat_width() const {
        int e = family_embed;
        for (int d : type_embed) e += d;
        return e;
    }

    void validate(const Vocabulary& vocab) const {
        if (task != vocab.task()) throw model_error("config: task does not match the vocabulary");
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ffn <= 0 || max_len <= 0)
            throw model_error("config: dimensions must be positive");
        if (d_model % n_heads != 0) throw model_error("config: d_model must divide into heads");
        if (static_cast<int>(type_embed.size()) != vocab.num_slots())
            throw model_error("config: one embedding size per slot type required");
        if (feature_map != "elu1") throw model_error("config: unknown feature map " + feature_map);
    }

    // Full-scale preset: 12 layers, 8 heads, width 512, FFN 2048, adaptive
    // embedding sizes from the vocabulary table.
    static ModelConfig full_scale(const Vocabulary& vocab) {
        ModelConfig cfg;
        cfg.task = vocab.task();
        for (TokenType t : vocab.slot_types()) cfg.type_embed.push_back(vocab.embed_size(t));
        cfg.family_embed = vocab.family_embed_size();
        return cfg;
    }

    // Desk-scale preset with every width divided by 8.
    static ModelConfig toy(const Vocabulary& vocab) {
        ModelConfig cfg;
        cfg.task = vocab.task();
        cfg.d_model = 64;
        cfg.n_layers = 2;
        cfg.n_heads = 2;
        cfg.d_ffn = 256;
        cfg.max_len = 512;
        for (TokenType t : vocab.slot_types())
            cfg.type_embed.push_back(std::max(2, vocab.embed_size(t) / 8));
        cfg.family_embed = 4;
        return cfg;
    }

    bool operator==(const ModelConfig&) const = default;
};

// All trainable arrays. Gradients and Adam moments reuse the same structure
// so a single visit() drives updates, serialization and the gradient check.
template <typename S>
struct ModelParams {
    ModelConfig cfg;

    std::vector<MatX<S>> type_embed;  // per slot type: local_count x d_k
    MatX<S> family_embed;             // family locals x d_F
    MatX<S> w_in;                     // d x concat_width
    MatX<S> pos_embed;                // max_len x d

    struct Layer {
        MatX<S> ln1_gain, ln1_bias;  // d x 1
        MatX<S> wq, wk, wv, wo;      // d x d
        MatX<S> ln2_gain, ln2_bias;  // d x 1
        MatX<S> w1, b1;              // ffn x d, ffn x 1
        MatX<S> w2, b2;              // d x ffn, d x 1
    };
    std::vector<Layer> layers;

    MatX<S> lnf_gain, lnf_bias;      // d x 1
    MatX<S> w_family;                // family locals x d
    MatX<S> w_out;                   // d x (d + d_F)
    std::vector<MatX<S>> w_type;     // per slot type: local_count x d

    ModelParams() = default;

    ModelParams(const ModelConfig& config, const Vocabulary& vocab) : cfg(config) {
        cfg.validate(vocab);
        const int d = cfg.d_model;
        for (int k = 0; k < vocab.num_slots(); ++k) {
            const TokenType t = vocab.slot_types()[k];
            type_embed.push_back(MatX<S>::Zero(vocab.local_count(t), cfg.type_embed[k]));
            w_type.push_back(MatX<S>::Zero(vocab.local_count(t), d));
        }
        family_embed = MatX<S>::Zero(Vocabulary::kFamilyLocalCount, cfg.family_embed);
        w_in = MatX<S>::Zero(d, cfg.concat_width());
        pos_embed = MatX<S>::Zero(cfg.max_len, d);
        layers.resize(cfg.n_layers);
        for (auto& l : layers) {
            l.ln1_gain = MatX<S>::Ones(d, 1);
            l.ln1_bias = MatX<S>::Zero(d, 1);
            l.wq = MatX<S>::Zero(d, d);
            l.wk = MatX<S>::Zero(d, d);
            l.wv = MatX<S>::Zero(d, d);
            l.wo = MatX<S>::Zero(d, d);
            l.ln2_gain = MatX<S>::Ones(d, 1);
            l.ln2_bias = MatX<S>::Zero(d, 1);
            l.w1 = MatX<S>::Zero(cfg.d_ffn, d);
            l.b1 = MatX<S>::Zero(cfg.d_ffn, 1);
            l.w2 = MatX<S>::Zero(d, cfg.d_ffn);
            l.b2 = MatX<S>::Zero(d, 1);
        }
        lnf_gain = MatX<S>::Ones(d, 1);
        lnf_bias = MatX<S>::Zero(d, 1);
        w_family = MatX<S>::Zero(Vocabulary::kFamilyLocalCount, d);
        w_out = MatX<S>::Zero(d, d + cfg.family_embed);
    }

    template <typename F>
    void visit(F&& f) {
        for (std::size_t k = 0; k < type_embed.size(); ++k)
            f("embed." + std::to_string(k), type_embed[k]);
        f("embed.family", family_embed);
        f("w_in", w_in);
        f("pos_embed", pos_embed);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::string p = "layer." + std::to_string(l) + ".";
            f(p + "ln1.gain", layers[l].ln1_gain);
            f(p + "ln1.bias", layers[l].ln1_bias);
            f(p + "wq", layers[l].wq);
            f(p + "wk", layers[l].wk);
            f(p + "wv", layers[l].wv);
            f(p + "wo", layers[l].wo);
            f(p + "ln2.gain", layers[l].ln2_gain);
            f(p + "ln2.bias", layers[l].ln2_bias);
            f(p + "ffn.w1", layers[l].w1);
            f(p + "ffn.b1", layers[l].b1);
            f(p + "ffn.w2", layers[l].w2);
            f(p + "ffn.b2", layers[l].b2);
        }
        f("lnf.gain", lnf_gain);
        f("lnf.bias", lnf_bias);
        f("w_family", w_family);
        f("w_out", w_out);
        for (std::size_t k = 0; k < w_type.size(); ++k) f("head." + std::to_string(k), w_type[k]);
    }

    template <typename F>
    void visit(F&& f) const {
        const_cast<ModelParams*>(this)->visit([&](const std::string& name, MatX<S>& m) {
            f(name, static_cast<const MatX<S>&>(m));
        });
    }

    // Zero every array, gains included: the layout doubles as gradient and
    // optimizer-moment storage.
    void set_zero() {
        visit([](const std::string&, MatX<S>& m) { m.setZero(); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        visit([&](const std::string&, const MatX<S>& m) { n += m.size(); });
        return n;
    }

    void init_random(Rng& rng, double scale = 0.02) {
        visit([&](const std::string& name, MatX<S>& m) {
            const bool is_gain = name.ends_with("gain");
            const bool is_bias = name.ends_with("bias") || name.ends_with("b1") || name.ends_with("b2");
            for (Eigen::Index c = 0; c < m.cols(); ++c)
                for (Eigen::Index r = 0; r < m.rows(); ++r)
                    m(r, c) = is_gain ? S(1) : is_bias ? S(0) : static_cast<S>(rng.normal() * scale);
        });
    }
};

namespace nn {

// phi(u) = elu(u) + 1: positive feature map for linear attention.
template <typename S>
S feature(S u) {
    return u >= S(0) ? u + S(1) : std::exp(u);
}

template <typename S>
S feature_grad(S u) {
    return u >= S(0) ? S(1) : std::exp(u);
}

template <typename S>
S gelu(S u) {
    return S(0.5) * u * (S(1) + std::erf(u / std::sqrt(S(2))));
}

template <typename S>
S gelu_grad(S u) {
    const S cdf = S(0.5) * (S(1) + std::erf(u / std::sqrt(S(2))));
    const S pdf = std::exp(S(-0.5) * u * u) / std::sqrt(S(2) * static_cast<S>(M_PI));
    return cdf + u * pdf;
}

// Column-wise layer norm; xhat and rstd are kept for the backward pass.
template <typename S>
void layer_norm(const MatX<S>& x, const MatX<S>& gain, const MatX<S>& bias, MatX<S>& y,
                MatX<S>& xhat, RowX<S>& rstd) {
    const auto d = x.rows();
    y.resize(d, x.cols());
    xhat.resize(d, x.cols());
    rstd.resize(x.cols());
    for (Eigen::Index t = 0; t < x.cols(); ++t) {
        const S mean = x.col(t).mean();
        const S var = (x.col(t).array() - mean).square().sum() / static_cast<S>(d);
        const S r = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
        rstd(t) = r;
        xhat.col(t) = (x.col(t).array() - mean).matrix() * r;
        y.col(t) = (gain.col(0).array() * xhat.col(t).array() + bias.col(0).array()).matrix();
    }
}

template <typename S>
void layer_norm_backward(const MatX<S>& dy, const MatX<S>& xhat, const RowX<S>& rstd,
                         const MatX<S>& gain, MatX<S>& dx, MatX<S>& dgain, MatX<S>& dbias) {
    const auto d = xhat.rows();
    dx.resize(d, xhat.cols());
    for (Eigen::Index t = 0; t < xhat.cols(); ++t) {
        const VecX<S> g = dy.col(t).cwiseProduct(gain.col(0));
        const S mean_g = g.mean();
        const S mean_gx = g.cwiseProduct(xhat.col(t)).mean();
        dx.col(t) = (g.array() - mean_g - xhat.col(t).array() * mean_gx).matrix() * rstd(t);
        dgain.col(0) += dy.col(t).cwiseProduct(xhat.col(t));
        dbias.col(0) += dy.col(t);
    }
}

// Causal linear attention over per-position columns via prefix accumulators;
// den (H x T) is cached for the backward pass. O(T) in sequence length.
template <typename S>
void attention_forward(const MatX<S>& phi_q, const MatX<S>& phi_k, const MatX<S>& v, int n_heads,
                       MatX<S>& out, MatX<S>& den) {
    const auto d = phi_q.rows();
    const auto T = phi_q.cols();
    const auto D = d / n_heads;
    out.resize(d, T);
    den.resize(n_heads, T);
    MatX<S> acc(D, D);
    VecX<S> z(D);
    for (int h = 0; h < n_heads; ++h) {
        const auto r0 = h * D;
        acc.setZero();
        z.setZero();
        for (Eigen::Index t = 0; t < T; ++t) {
            acc.noalias() += phi_k.col(t).segment(r0, D) * v.col(t).segment(r0, D).transpose();
            z += phi_k.col(t).segment(r0, D);
            const S dn = z.dot(phi_q.col(t).segment(r0, D)) + static_cast<S>(kAttentionEps);
            den(h, t) = dn;
            out.col(t).segment(r0, D).noalias() = acc.transpose() * phi_q.col(t).segment(r0, D) / dn;
        }
    }
}

// Matching backward pass: forward accumulators give d(phi_q), reverse
// accumulators give d(phi_k) and d(v). Also O(T).
template <typename S>
void attention_backward(const MatX<S>& phi_q, const MatX<S>& phi_k, const MatX<S>& v,
                        const MatX<S>& out, const MatX<S>& den, const MatX<S>& dout, int n_heads,
                        MatX<S>& dphi_q, MatX<S>& dphi_k, MatX<S>& dv) {
    const auto d = phi_q.rows();
    const auto T = phi_q.cols();
    const auto D = d / n_heads;
    dphi_q.resize(d, T);
    dphi_k.resize(d, T);
    dv.resize(d, T);
    MatX<S> acc(D, D), rev(D, D);
    VecX<S> z(D), rvec(D);
    VecX<S> a(D);
    for (int h = 0; h < n_heads; ++h) {
        const auto r0 = h * D;
        acc.setZero();
        z.setZero();
        for (Eigen::Index t = 0; t < T; ++t) {
            acc.noalias() += phi_k.col(t).segment(r0, D) * v.col(t).segment(r0, D).transpose();
            z += phi_k.col(t).segment(r0, D);
            a = dout.col(t).segment(r0, D) / den(h, t);
            const S b = -dout.col(t).segment(r0, D).dot(out.col(t).segment(r0, D)) / den(h, t);
            dphi_q.col(t).segment(r0, D).noalias() = acc * a + b * z;
        }
        rev.setZero();
        rvec.setZero();
        for (Eigen::Index t = T - 1; t >= 0; --t) {
            a = dout.col(t).segment(r0, D) / den(h, t);
            const S b = -dout.col(t).segment(r0, D).dot(out.col(t).segment(r0, D)) / den(h, t);
            rev.noalias() += phi_q.col(t).segment(r0, D) * a.transpose();
            rvec += b * phi_q.col(t).segment(r0, D);
            dphi_k.col(t).segment(r0, D).noalias() = rev * v.col(t).segment(r0, D) + rvec;
            dv.col(t).segment(r0, D).noalias() = rev.transpose() * phi_k.col(t).segment(r0, D);
        }
    }
}

// Explicit O(T^2) definition of the same computation; the oracle that the
// prefix-accumulator paths must agree with.
template <typename S>
MatX<S> attention_quadratic(const MatX<S>& q, const MatX<S>& k, const MatX<S>& v, int n_heads) {
    const auto d = q.rows();
    const auto T = q.cols();
    const auto D = d / n_heads;
    MatX<S> out(d, T);
    for (int h = 0; h < n_heads; ++h) {
        const auto r0 = h * D;
        for (Eigen::Index t = 0; t < T; ++t) {
            VecX<S> num = VecX<S>::Zero(D);
            S dn = static_cast<S>(kAttentionEps);
            for (Eigen::Index s = 0; s <= t; ++s) {
                S w = 0;
                for (Eigen::Index i = 0; i < D; ++i)
                    w += feature(q(r0 + i, t)) * feature(k(r0 + i, s));
                num += w * v.col(s).segment(r0, D);
                dn += w;
            }
            out.col(t).segment(r0, D) = num / dn;
        }
    }
    return out;
}

}  // namespace nn

// Per-sequence activation cache for the backward pass.
template <typename S>
struct ForwardCache {
    struct LayerCache {
        MatX<S> x_in;
        MatX<S> ln1, ln1_hat;
        RowX<S> ln1_rstd;
        MatX<S> q, k, v, phi_q, phi_k, den, attn;
        MatX<S> u;
        MatX<S> ln2, ln2_hat;
        RowX<S> ln2_rstd;
        MatX<S> ffn_pre, ffn_act;
    };
    MatX<S> concat;  // concat_width x T
    MatX<S> x0;      // d x T
    std::vector<LayerCache> layers;
    MatX<S> h_hat;   // final layer-norm cache
    RowX<S> h_rstd;
    MatX<S> h;       // d x T
};

// Local target indices of one compound word, family first.
struct WordTargets {
    int family = 0;
    std::vector<int> slots;
};

inline WordTargets word_targets(const CompoundWord& w, const Vocabulary& vocab) {
    WordTargets t;
    t.family = vocab.family_local(w.family);
    for (TokenType st : vocab.slot_types()) t.slots.push_back(vocab.local_index(st, w.slot(st)));
    return t;
}

// Eq-style input fusion: concatenated type and family embeddings, linearly
// projected, plus the learned positional embedding for the step index.
template <typename S>
VecX<S> embed_compound(const ModelParams<S>& params, const Vocabulary& vocab,
                       const CompoundWord& word, int t) {
    if (t >= params.cfg.max_len) throw model_error("embed: position exceeds the attention window");
    const WordTargets idx = word_targets(word, vocab);
    VecX<S> concat(params.cfg.concat_width());
    int at = 0;
    for (std::size_t k = 0; k < params.type_embed.size(); ++k) {
        const auto& table = params.type_embed[k];
        concat.segment(at, table.cols()) = table.row(idx.slots[k]).transpose();
        at += static_cast<int>(table.cols());
    }
    concat.segment(at, params.cfg.family_embed) = params.family_embed.row(idx.family).transpose();
    VecX<S> x = params.w_in * concat;
    x += params.pos_embed.row(t).transpose();
    return x;
}

// Transformer stack over embedded inputs. Pre-norm residual blocks with
// causal linear attention and a GELU feed-forward, then a final layer norm.
template <typename S>
void forward_stack(const ModelParams<S>& params, const MatX<S>& x0, ForwardCache<S>& cache) {
    const int H = params.cfg.n_heads;
    cache.x0 = x0;
    cache.layers.resize(params.layers.size());
    MatX<S> x = x0;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& lp = params.layers[l];
        auto& lc = cache.layers[l];
        lc.x_in = x;
        nn::layer_norm(x, lp.ln1_gain, lp.ln1_bias, lc.ln1, lc.ln1_hat, lc.ln1_rstd);
        lc.q.noalias() = lp.wq * lc.ln1;
        lc.k.noalias() = lp.wk * lc.ln1;
        lc.v.noalias() = lp.wv * lc.ln1;
        lc.phi_q = lc.q.unaryExpr([](S u) { return nn::feature(u); });
        lc.phi_k = lc.k.unaryExpr([](S u) { return nn::feature(u); });
        nn::attention_forward(lc.phi_q, lc.phi_k, lc.v, H, lc.attn, lc.den);
        lc.u = x + lp.wo * lc.attn;
        nn::layer_norm(lc.u, lp.ln2_gain, lp.ln2_bias, lc.ln2, lc.ln2_hat, lc.ln2_rstd);
        lc.ffn_pre.noalias() = lp.w1 * lc.ln2;
        lc.ffn_pre.colwise() += lp.b1.col(0);
        lc.ffn_act = lc.ffn_pre.unaryExpr([](S u) { return nn::gelu(u); });
        x = lc.u + lp.w2 * lc.ffn_act;
        x.colwise() += lp.b2.col(0);
    }
    nn::layer_norm(x, params.lnf_gain, params.lnf_bias, cache.h, cache.h_hat, cache.h_rstd);
}

// Hidden states h_1..h_T for a compound-word prefix (h_t attends to words
// before t only; word i is embedded at position i).
template <typename S>
MatX<S> forward(const ModelParams<S>& params, const Vocabulary& vocab,
                std::span<const CompoundWord> words, ForwardCache<S>& cache) {
    const auto T = static_cast<Eigen::Index>(words.size());
    if (T > params.cfg.max_len) throw model_error("forward: sequence exceeds the attention window");
    MatX<S> x0(params.cfg.d_model, T);
    cache.concat.resize(params.cfg.concat_width(), T);
    for (Eigen::Index t = 0; t < T; ++t) {
        const WordTargets idx = word_targets(words[t], vocab);
        int at = 0;
        for (std::size_t k = 0; k < params.type_embed.size(); ++k) {
            const auto& table = params.type_embed[k];
            cache.concat.col(t).segment(at, table.cols()) = table.row(idx.slots[k]).transpose();
            at += static_cast<int>(table.cols());
        }
        cache.concat.col(t).segment(at, params.cfg.family_embed) =
            params.family_embed.row(idx.family).transpose();
        x0.col(t).noalias() = params.w_in * cache.concat.col(t);
        x0.col(t) += params.pos_embed.row(t).transpose();
    }
    forward_stack(params, x0, cache);
    return cache.h;
}

// Per-head and total teacher-forced NLL for a batch.
struct LossStats {
    double total = 0.0;                // mean over heads, steps and sequences
    std::vector<double> per_head;      // family head first, then slot heads
    std::size_t steps = 0;

    void finalize() {
        if (steps == 0) return;
        for (double& v : per_head) v /= static_cast<double>(steps);
        total = 0.0;
        for (double v : per_head) total += v;
        total /= static_cast<double>(per_head.size());
    }
};

namespace nn {

// Softmax cross-entropy on one logits column; returns the NLL and writes
// d(logits) scaled by `grad_scale` (softmax minus one-hot).
template <typename S>
double cross_entropy(const VecX<S>& logits, int target, S grad_scale, VecX<S>* dlogits) {
    const S top = logits.maxCoeff();
    VecX<S> p = (logits.array() - top).exp().matrix();
    const S z = p.sum();
    p /= z;
    const double nll = -std::log(static_cast<double>(std::max(p(target), std::numeric_limits<S>::min())));
    if (dlogits) {
        *dlogits = p * grad_scale;
        (*dlogits)(target) -= grad_scale;
    }
    return nll;
}

}  // namespace nn

// Teacher-forced loss (and gradients when `grads` is non-null) of one
// sequence: inputs are words[0..T-2], targets words[1..T-1]. The family head
// conditions the slot heads through the ground-truth family embedding. Every
// slot target participates, [ignore] included, with equal weight; the total
// is the mean over the K+1 heads.
template <typename S>
void sequence_loss(const ModelParams<S>& params, const Vocabulary& vocab, const CpSeq& seq,
                   LossStats& stats, ModelParams<S>* grads, double step_weight = 1.0) {
    const int K = vocab.num_slots();
    const int d = params.cfg.d_model;
    const int dF = params.cfg.family_embed;
    if (stats.per_head.empty()) stats.per_head.assign(K + 1, 0.0);
    if (seq.words.size() < 2) return;
    const auto T = static_cast<Eigen::Index>(seq.words.size()) - 1;

    ForwardCache<S> cache;
    forward(params, vocab, std::span<const CompoundWord>(seq.words.data(), T), cache);

    std::vector<WordTargets> targets;
    targets.reserve(T);
    for (Eigen::Index t = 0; t < T; ++t) targets.push_back(word_targets(seq.words[t + 1], vocab));

    // Two-stage heads under teacher forcing.
    MatX<S> fam_logits = params.w_family * cache.h;                 // locals x T
    MatX<S> cat(d + dF, T);                                         // [h ; E_F(target family)]
    for (Eigen::Index t = 0; t < T; ++t) {
        cat.col(t).head(d) = cache.h.col(t);
        cat.col(t).tail(dF) = params.family_embed.row(targets[t].family).transpose();
    }
    MatX<S> h_out = params.w_out * cat;                             // d x T

    const auto scale = static_cast<S>(step_weight / (K + 1));
    MatX<S> dh = MatX<S>::Zero(d, T);
    MatX<S> dh_out = MatX<S>::Zero(d, T);
    VecX<S> dlogits;

    for (Eigen::Index t = 0; t < T; ++t) {
        stats.per_head[0] += step_weight * nn::cross_entropy<S>(fam_logits.col(t), targets[t].family,
                                                                scale, grads ? &dlogits : nullptr);
        if (grads) {
            grads->w_family.noalias() += dlogits * cache.h.col(t).transpose();
            dh.col(t).noalias() += params.w_family.transpose() * dlogits;
        }
        for (int k = 0; k < K; ++k) {
            const VecX<S> logits = params.w_type[k] * h_out.col(t);
            stats.per_head[k + 1] += step_weight * nn::cross_entropy<S>(logits, targets[t].slots[k],
                                                                        scale, grads ? &dlogits : nullptr);
            if (grads) {
                grads->w_type[k].noalias() += dlogits * h_out.col(t).transpose();
                dh_out.col(t).noalias() += params.w_type[k].transpose() * dlogits;
            }
        }
    }
    stats.steps += static_cast<std::size_t>(T);
    if (!grads) return;

    // Backward through W_out, the family-embedding conditioning, the stack,
    // and the input fusion.
    MatX<S> dcat = params.w_out.transpose() * dh_out;
    grads->w_out.noalias() += dh_out * cat.transpose();
    for (Eigen::Index t = 0; t < T; ++t) {
        dh.col(t) += dcat.col(t).head(d);
        grads->family_embed.row(targets[t].family) += dcat.col(t).tail(dF).transpose();
    }

    MatX<S> dx;
    nn::layer_norm_backward(dh, cache.h_hat, cache.h_rstd, params.lnf_gain, dx, grads->lnf_gain,
                            grads->lnf_bias);

    for (auto l = static_cast<int>(params.layers.size()) - 1; l >= 0; --l) {
        const auto& lp = params.layers[l];
        auto& lc = cache.layers[l];
        auto& gl = grads->layers[l];

        // FFN block
        MatX<S> dffn_act = lp.w2.transpose() * dx;
        gl.w2.noalias() += dx * lc.ffn_act.transpose();
        gl.b2.col(0) += dx.rowwise().sum();
        MatX<S> dffn_pre =
            dffn_act.binaryExpr(lc.ffn_pre, [](S g, S u) { return g * nn::gelu_grad(u); });
        gl.w1.noalias() += dffn_pre * lc.ln2.transpose();
        gl.b1.col(0) += dffn_pre.rowwise().sum();
        MatX<S> dln2 = lp.w1.transpose() * dffn_pre;
        MatX<S> du;
        nn::layer_norm_backward(dln2, lc.ln2_hat, lc.ln2_rstd, lp.ln2_gain, du, gl.ln2_gain,
                                gl.ln2_bias);
        du += dx;  // residual

        // Attention block
        MatX<S> dattn = lp.wo.transpose() * du;
        gl.wo.noalias() += du * lc.attn.transpose();
        MatX<S> dphi_q, dphi_k, dv;
        nn::attention_backward(lc.phi_q, lc.phi_k, lc.v, lc.attn, lc.den, dattn,
                               params.cfg.n_heads, dphi_q, dphi_k, dv);
        const MatX<S> dq = dphi_q.binaryExpr(lc.q, [](S g, S u) { return g * nn::feature_grad(u); });
        const MatX<S> dk = dphi_k.binaryExpr(lc.k, [](S g, S u) { return g * nn::feature_grad(u); });
        gl.wq.noalias() += dq * lc.ln1.transpose();
        gl.wk.noalias() += dk * lc.ln1.transpose();
        gl.wv.noalias() += dv * lc.ln1.transpose();
        MatX<S> dln1 = lp.wq.transpose() * dq;
        dln1.noalias() += lp.wk.transpose() * dk;
        dln1.noalias() += lp.wv.transpose() * dv;
        MatX<S> dx_in;
        nn::layer_norm_backward(dln1, lc.ln1_hat, lc.ln1_rstd, lp.ln1_gain, dx_in, gl.ln1_gain,
                                gl.ln1_bias);
        dx = dx_in + du;  // residual
    }

    // Input fusion
    MatX<S> dconcat = params.w_in.transpose() * dx;
    grads->w_in.noalias() += dx * cache.concat.transpose();
    for (Eigen::Index t = 0; t < T; ++t) {
        grads->pos_embed.row(t) += dx.col(t).transpose();
        const WordTargets idx = word_targets(seq.words[t], vocab);
        int at = 0;
        for (std::size_t k = 0; k < params.type_embed.size(); ++k) {
            const auto cols = params.type_embed[k].cols();
            grads->type_embed[k].row(idx.slots[k]) += dconcat.col(t).segment(at, cols).transpose();
            at += static_cast<int>(cols);
        }
        grads->family_embed.row(idx.family) +=
            dconcat.col(t).segment(at, params.cfg.family_embed).transpose();
    }
}

// Batch loss: steps are weighted equally across the whole batch, which is
// the padding-free equivalent of masked fixed-length batches.
template <typename S>
LossStats batch_loss(const ModelParams<S>& params, const Vocabulary& vocab,
                     std::span<const CpSeq* const> batch, ModelParams<S>* grads) {
    LossStats stats;
    std::size_t total_steps = 0;
    for (const CpSeq* seq : batch)
        if (seq->words.size() >= 2) total_steps += seq->words.size() - 1;
    if (total_steps == 0) {
        stats.per_head.assign(vocab.num_slots() + 1, 0.0);
        return stats;
    }
    for (const CpSeq* seq : batch)
        sequence_loss(params, vocab, *seq, stats, grads, 1.0 / static_cast<double>(total_steps));
    stats.steps = total_steps;
    for (double& v : stats.per_head) v *= static_cast<double>(total_steps);  // undo per-seq scaling
    stats.finalize();
    return stats;
}

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
};

template <typename S>
struct AdamState {
    ModelParams<S> m, v;
    long long step = 0;

    AdamState() = default;
    AdamState(const ModelConfig& cfg, const Vocabulary& vocab) : m(cfg, vocab), v(cfg, vocab) {
        m.set_zero();
        v.set_zero();
    }
};

template <typename S>
double global_grad_norm(const ModelParams<S>& grads) {
    double sq = 0.0;
    grads.visit([&](const std::string&, const MatX<S>& g) {
        sq += static_cast<double>(g.template cast<double>().squaredNorm());
    });
    return std::sqrt(sq);
}

template <typename S>
void adam_update(ModelParams<S>& params, ModelParams<S>& grads, AdamState<S>& state,
                 const AdamConfig& cfg) {
    const double norm = global_grad_norm(grads);
    if (!std::isfinite(norm)) throw model_error("adam: non-finite gradient norm");
    const S scale = static_cast<S>(norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0);

    state.step++;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const S lr = static_cast<S>(cfg.lr * std::sqrt(bc2) / bc1);

    std::vector<MatX<S>*> ps, gs, ms, vs;
    params.visit([&](const std::string&, MatX<S>& m) { ps.push_back(&m); });
    grads.visit([&](const std::string&, MatX<S>& m) { gs.push_back(&m); });
    state.m.visit([&](const std::string&, MatX<S>& m) { ms.push_back(&m); });
    state.v.visit([&](const std::string&, MatX<S>& m) { vs.push_back(&m); });
    for (std::size_t i = 0; i < ps.size(); ++i) {
        auto g = (gs[i]->array() * scale).eval();
        ms[i]->array() = static_cast<S>(cfg.beta1) * ms[i]->array() + static_cast<S>(1 - cfg.beta1) * g;
        vs[i]->array() =
            static_cast<S>(cfg.beta2) * vs[i]->array() + static_cast<S>(1 - cfg.beta2) * g.square();
        ps[i]->array() -=
            lr * ms[i]->array() / (vs[i]->array().sqrt() + static_cast<S>(cfg.eps));
    }
}

// One optimization step over a batch of sequences. Deterministic given the
// parameter state and batch order.
template <typename S>
LossStats train_step(ModelParams<S>& params, const Vocabulary& vocab,
                     std::span<const CpSeq* const> batch, AdamState<S>& state,
                     const AdamConfig& cfg, ModelParams<S>& grads_scratch) {
    grads_scratch.set_zero();
    const LossStats stats = batch_loss(params, vocab, batch, &grads_scratch);
    if (!std::isfinite(stats.total))
        throw model_error("train: non-finite loss at optimizer step " + std::to_string(state.step));
    adam_update(params, grads_scratch, state, cfg);
    return stats;
}

// Incremental decoding state: per layer and head the running feature/value
// summaries, giving O(1) work per generated word.
template <typename S>
struct StepState {
    std::vector<MatX<S>> acc;  // layer*head: D x D
    std::vector<VecX<S>> z;    // layer*head: D
    int t = 0;

    StepState(const ModelConfig& cfg) {
        const int D = cfg.head_dim();
        acc.assign(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads, MatX<S>::Zero(D, D));
        z.assign(static_cast<std::size_t>(cfg.n_layers) * cfg.n_heads, VecX<S>::Zero(D));
    }
};

// Feed one word; returns the hidden state that predicts the next word.
// After t steps this equals column t-1 of the full-sequence forward().
template <typename S>
VecX<S> step_forward(const ModelParams<S>& params, const Vocabulary& vocab, const CompoundWord& word,
                     StepState<S>& state) {
    const int H = params.cfg.n_heads;
    const int D = params.cfg.head_dim();
    VecX<S> x = embed_compound(params, vocab, word, state.t);
    MatX<S> y, yhat;
    RowX<S> rstd;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const auto& lp = params.layers[l];
        nn::layer_norm(MatX<S>(x), lp.ln1_gain, lp.ln1_bias, y, yhat, rstd);
        const VecX<S> q = lp.wq * y.col(0);
        const VecX<S> k = lp.wk * y.col(0);
        const VecX<S> v = lp.wv * y.col(0);
        VecX<S> attn(params.cfg.d_model);
        for (int h = 0; h < H; ++h) {
            auto& acc = state.acc[l * H + h];
            auto& z = state.z[l * H + h];
            const VecX<S> phi_k = k.segment(h * D, D).unaryExpr([](S u) { return nn::feature(u); });
            const VecX<S> phi_q = q.segment(h * D, D).unaryExpr([](S u) { return nn::feature(u); });
            acc.noalias() += phi_k * v.segment(h * D, D).transpose();
            z += phi_k;
            const S dn = z.dot(phi_q) + static_cast<S>(kAttentionEps);
            attn.segment(h * D, D).noalias() = acc.transpose() * phi_q / dn;
        }
        x += lp.wo * attn;
        nn::layer_norm(MatX<S>(x), lp.ln2_gain, lp.ln2_bias, y, yhat, rstd);
        VecX<S> f = lp.w1 * y.col(0) + lp.b1.col(0);
        f = f.unaryExpr([](S u) { return nn::gelu(u); });
        x += lp.w2 * f + lp.b2.col(0);
    }
    nn::layer_norm(MatX<S>(x), params.lnf_gain, params.lnf_bias, y, yhat, rstd);
    state.t++;
    return y.col(0);
}

// Stage one of the output module.
template <typename S>
VecX<S> family_logits(const ModelParams<S>& params, const VecX<S>& h) {
    return params.w_family * h;
}

// Stage two: condition on a family, then score every slot head.
template <typename S>
VecX<S> conditioned_hidden(const ModelParams<S>& params, const VecX<S>& h, int family_local) {
    VecX<S> cat(params.cfg.d_model + params.cfg.family_embed);
    cat.head(params.cfg.d_model) = h;
    cat.tail(params.cfg.family_embed) = params.family_embed.row(family_local).transpose();
    return params.w_out * cat;
}

template <typename S>
VecX<S> slot_logits(const ModelParams<S>& params, int slot, const VecX<S>& h_out) {
    return params.w_type[slot] * h_out;
}

}  // namespace cpword
