#pragma once

#include <Eigen/Dense>
#include <vector>

#include "levelcast/common.hpp"
#include "levelcast/model.hpp"

namespace levelcast::model {

constexpr double kLayerNormEps = 1e-9;

/// Row-wise linear embedding: inputs [n x n_features] times E [n_features x d_model].
template <typename DerivedX, typename DerivedE>
inline Eigen::MatrixXd embed(const Eigen::MatrixBase<DerivedX>& inputs,
                             const Eigen::MatrixBase<DerivedE>& embedding) {
    require(inputs.cols() == embedding.rows(), ErrorCode::ShapeMismatch,
            "embedding expects " + std::to_string(embedding.rows()) + " features, got " +
                std::to_string(inputs.cols()));
    return inputs * embedding;
}

/// Sinusoidal position table: even columns sin(i / 10000^(c/d)), odd columns
/// cos with the shared pair frequency. Deterministic; callers may cache it.
inline Eigen::MatrixXd positional_encoding(std::size_t n, std::size_t d_model) {
    Eigen::MatrixXd pe(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_model));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < d_model; ++c) {
            const std::size_t pair = c - (c % 2);
            const double freq =
                std::pow(10000.0, -static_cast<double>(pair) / static_cast<double>(d_model));
            const double angle = static_cast<double>(i) * freq;
            pe(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) =
                (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return pe;
}

struct AttentionResult {
    Eigen::MatrixXd output;   ///< [n x d_v]
    Eigen::MatrixXd weights;  ///< [n x n], each row a probability vector
};

/// Scaled dot-product attention with max-subtracted row softmax.
inline AttentionResult attention(const Eigen::MatrixXd& Q, const Eigen::MatrixXd& K,
                                 const Eigen::MatrixXd& V, std::size_t d_k) {
    require(Q.cols() == K.cols(), ErrorCode::ShapeMismatch, "Q/K width mismatch");
    require(K.rows() == V.rows(), ErrorCode::ShapeMismatch, "K/V row mismatch");
    require(d_k >= 1, ErrorCode::ShapeMismatch, "d_k must be >= 1");

    AttentionResult res;
    res.weights = Q * K.transpose() / std::sqrt(static_cast<double>(d_k));
    for (Eigen::Index r = 0; r < res.weights.rows(); ++r) {
        auto row = res.weights.row(r);
        const double peak = row.maxCoeff();
        row = (row.array() - peak).exp();
        row /= row.sum();
    }
    res.output = res.weights * V;
    return res;
}

/// Position-wise two-layer network: relu(A W1 + b1) W2 + b2.
inline Eigen::MatrixXd feedforward(const Eigen::MatrixXd& A, const Eigen::MatrixXd& W1,
                                   const Eigen::RowVectorXd& b1, const Eigen::MatrixXd& W2,
                                   const Eigen::RowVectorXd& b2) {
    require(A.cols() == W1.rows() && W1.cols() == b1.cols() && W1.cols() == W2.rows() &&
                W2.cols() == b2.cols(),
            ErrorCode::ShapeMismatch, "feedforward shapes inconsistent");
    Eigen::MatrixXd h = ((A * W1).rowwise() + b1).cwiseMax(0.0);
    return (h * W2).rowwise() + b2;
}

/// Build the transformer parameter layout for a config (weights uninitialized).
inline ParameterSet transformer_layout(const ModelConfig& cfg) {
    cfg.validate();
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto f = static_cast<Eigen::Index>(cfg.n_features);
    const auto ff = static_cast<Eigen::Index>(cfg.d_ff);
    const auto m = static_cast<Eigen::Index>(cfg.horizon);
    ParameterSet p;
    p.add("embed", f, d);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        p.add(pre + "attn.wq", d, d);
        p.add(pre + "attn.wk", d, d);
        p.add(pre + "attn.wv", d, d);
        p.add(pre + "attn.wo", d, d);
        p.add(pre + "ln1.gain", 1, d);
        p.add(pre + "ln1.bias", 1, d);
        p.add(pre + "ffn.w1", d, ff);
        p.add(pre + "ffn.b1", 1, ff);
        p.add(pre + "ffn.w2", ff, d);
        p.add(pre + "ffn.b2", 1, d);
        p.add(pre + "ln2.gain", 1, d);
        p.add(pre + "ln2.bias", 1, d);
    }
    p.add("head.w", d, m);
    p.add("head.b", 1, m);
    return p;
}

inline ParameterSet transformer_init(const ModelConfig& cfg) {
    ParameterSet p = transformer_layout(cfg);
    detail::init_parameters(p, cfg.seed);
    return p;
}

namespace detail {

struct NormCache {
    Eigen::MatrixXd xhat;       ///< normalized pre-gain values
    Eigen::VectorXd inv_sigma;  ///< per-row 1/sqrt(var + eps)
    Eigen::MatrixXd out;
};

inline NormCache layer_norm(const Eigen::MatrixXd& x, ConstTensorView gain, ConstTensorView bias) {
    NormCache c;
    const Eigen::Index n = x.rows(), d = x.cols();
    c.xhat.resize(n, d);
    c.inv_sigma.resize(n);
    c.out.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        c.inv_sigma(r) = inv;
        c.xhat.row(r) = (x.row(r).array() - mu) * inv;
        c.out.row(r) = c.xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
    }
    return c;
}

/// dL/dx for layer norm given dL/dout; accumulates gain/bias gradients.
inline Eigen::MatrixXd layer_norm_backward(const NormCache& c, const Eigen::MatrixXd& dout,
                                           ConstTensorView gain, TensorView dgain,
                                           TensorView dbias) {
    const Eigen::Index n = dout.rows(), d = dout.cols();
    Eigen::MatrixXd dx(n, d);
    for (Eigen::Index r = 0; r < n; ++r) {
        dgain.row(0) += dout.row(r).cwiseProduct(c.xhat.row(r));
        dbias.row(0) += dout.row(r);
        const Eigen::RowVectorXd dxhat = dout.row(r).cwiseProduct(gain.row(0));
        const double mean_dxhat = dxhat.mean();
        const double mean_dxhat_xhat = dxhat.cwiseProduct(c.xhat.row(r)).mean();
        dx.row(r) = c.inv_sigma(r) *
                    (dxhat.array() - mean_dxhat - c.xhat.row(r).array() * mean_dxhat_xhat);
    }
    return dx;
}

struct LayerCache {
    Eigen::MatrixXd z_in;
    Eigen::MatrixXd q, k, v;                    ///< packed heads, [w x d_model]
    std::vector<Eigen::MatrixXd> attn_weights;  ///< per head, [w x w]
    Eigen::MatrixXd heads_concat;
    Eigen::MatrixXd mixed;  ///< heads_concat * wo (after dropout if enabled)
    std::vector<char> mixed_mask;
    NormCache norm1;
    Eigen::MatrixXd ffn_pre;
    Eigen::MatrixXd ffn_out;  ///< after dropout if enabled
    std::vector<char> ffn_mask;
    NormCache norm2;
};

inline void apply_dropout(Eigen::MatrixXd& x, std::vector<char>& mask, double rate, Rng* rng) {
    if (rate <= 0.0 || rng == nullptr) return;
    const double keep = 1.0 - rate;
    mask.resize(static_cast<std::size_t>(x.size()));
    double* data = x.data();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const bool kept = rng->uniform() >= rate;
        mask[static_cast<std::size_t>(i)] = kept;
        data[i] = kept ? data[i] / keep : 0.0;
    }
}

inline void apply_dropout_backward(Eigen::MatrixXd& dx, const std::vector<char>& mask, double rate) {
    if (rate <= 0.0 || mask.empty()) return;
    const double keep = 1.0 - rate;
    double* data = dx.data();
    for (Eigen::Index i = 0; i < dx.size(); ++i)
        data[i] = mask[static_cast<std::size_t>(i)] ? data[i] / keep : 0.0;
}

}  // namespace detail

struct TransformerCache {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd embedded;  ///< X*E + PE
    std::vector<detail::LayerCache> layers;
    Eigen::RowVectorXd prediction;
};

/// Full forward pass with every intermediate kept for backprop. Layout per
/// layer: multi-head self-attention, residual add, layer norm, position-wise
/// feedforward, residual add, layer norm; the last position's representation
/// feeds a linear head that emits all horizon steps jointly.
inline TransformerCache transformer_forward(const ParameterSet& params, const ModelConfig& cfg,
                                            const Eigen::MatrixXd& inputs,
                                            Rng* dropout_rng = nullptr) {
    cfg.validate();
    require(inputs.rows() == static_cast<Eigen::Index>(cfg.window_len) &&
                inputs.cols() == static_cast<Eigen::Index>(cfg.n_features),
            ErrorCode::ShapeMismatch, "inputs must be [window_len x n_features]");

    const Eigen::Index w = inputs.rows();
    const Eigen::Index dk = static_cast<Eigen::Index>(cfg.d_k());

    TransformerCache cache;
    cache.inputs = inputs;
    cache.embedded = embed(inputs, params.tensor("embed")) +
                     positional_encoding(cfg.window_len, cfg.d_model);

    Eigen::MatrixXd z = cache.embedded;
    cache.layers.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        auto& lc = cache.layers[l];
        const std::string pre = "l" + std::to_string(l) + ".";
        lc.z_in = z;
        lc.q = z * params.tensor(pre + "attn.wq");
        lc.k = z * params.tensor(pre + "attn.wk");
        lc.v = z * params.tensor(pre + "attn.wv");

        lc.heads_concat.resize(w, static_cast<Eigen::Index>(cfg.d_model));
        lc.attn_weights.resize(cfg.n_heads);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const Eigen::Index off = static_cast<Eigen::Index>(h) * dk;
            AttentionResult att = attention(lc.q.middleCols(off, dk), lc.k.middleCols(off, dk),
                                            lc.v.middleCols(off, dk), cfg.d_k());
            lc.attn_weights[h] = std::move(att.weights);
            lc.heads_concat.middleCols(off, dk) = att.output;
        }
        lc.mixed = lc.heads_concat * params.tensor(pre + "attn.wo");
        detail::apply_dropout(lc.mixed, lc.mixed_mask, cfg.dropout, dropout_rng);

        lc.norm1 = detail::layer_norm(lc.z_in + lc.mixed, params.tensor(pre + "ln1.gain"),
                                      params.tensor(pre + "ln1.bias"));

        lc.ffn_pre = (lc.norm1.out * params.tensor(pre + "ffn.w1")).rowwise() +
                     params.tensor(pre + "ffn.b1").row(0);
        lc.ffn_out = (lc.ffn_pre.cwiseMax(0.0) * params.tensor(pre + "ffn.w2")).rowwise() +
                     params.tensor(pre + "ffn.b2").row(0);
        detail::apply_dropout(lc.ffn_out, lc.ffn_mask, cfg.dropout, dropout_rng);

        lc.norm2 = detail::layer_norm(lc.norm1.out + lc.ffn_out, params.tensor(pre + "ln2.gain"),
                                      params.tensor(pre + "ln2.bias"));
        z = lc.norm2.out;
        require(z.allFinite(), ErrorCode::NonFiniteActivation,
                "non-finite activation after layer " + std::to_string(l));
    }

    cache.prediction = z.row(w - 1) * params.tensor("head.w") + params.tensor("head.b").row(0);
    require(cache.prediction.allFinite(), ErrorCode::NonFiniteActivation,
            "non-finite prediction");
    return cache;
}

/// Prediction only.
inline Eigen::RowVectorXd forward_transformer(const ParameterSet& params, const ModelConfig& cfg,
                                              const Eigen::MatrixXd& inputs) {
    return transformer_forward(params, cfg, inputs).prediction;
}

/// Reverse-mode gradients for one sample; accumulates into `grads` (which
/// must share the parameter layout). `d_pred` is dL/d(prediction).
inline void transformer_backward(const ParameterSet& params, const ModelConfig& cfg,
                                 const TransformerCache& cache, const Eigen::RowVectorXd& d_pred,
                                 ParameterSet& grads) {
    const Eigen::Index w = static_cast<Eigen::Index>(cfg.window_len);
    const Eigen::Index dk = static_cast<Eigen::Index>(cfg.d_k());
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_k()));

    const Eigen::MatrixXd& z_final =
        cfg.n_layers > 0 ? cache.layers.back().norm2.out : cache.embedded;

    // output head
    grads.tensor("head.w") += z_final.row(w - 1).transpose() * d_pred;
    grads.tensor("head.b").row(0) += d_pred;
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(w, static_cast<Eigen::Index>(cfg.d_model));
    dz.row(w - 1) = d_pred * params.tensor("head.w").transpose();

    for (std::size_t l = cfg.n_layers; l-- > 0;) {
        const auto& lc = cache.layers[l];
        const std::string pre = "l" + std::to_string(l) + ".";

        // second norm
        Eigen::MatrixXd d_res2 = detail::layer_norm_backward(
            lc.norm2, dz, params.tensor(pre + "ln2.gain"), grads.tensor(pre + "ln2.gain"),
            grads.tensor(pre + "ln2.bias"));

        // feedforward branch
        Eigen::MatrixXd d_ffn_out = d_res2;
        detail::apply_dropout_backward(d_ffn_out, lc.ffn_mask, cfg.dropout);
        const Eigen::MatrixXd hidden = lc.ffn_pre.cwiseMax(0.0);
        grads.tensor(pre + "ffn.w2") += hidden.transpose() * d_ffn_out;
        grads.tensor(pre + "ffn.b2").row(0) += d_ffn_out.colwise().sum();
        Eigen::MatrixXd d_hidden = d_ffn_out * params.tensor(pre + "ffn.w2").transpose();
        d_hidden = (lc.ffn_pre.array() > 0.0).select(d_hidden, 0.0);
        grads.tensor(pre + "ffn.w1") += lc.norm1.out.transpose() * d_hidden;
        grads.tensor(pre + "ffn.b1").row(0) += d_hidden.colwise().sum();

        // residual into first norm output
        Eigen::MatrixXd d_norm1_out = d_res2 + d_hidden * params.tensor(pre + "ffn.w1").transpose();

        Eigen::MatrixXd d_res1 = detail::layer_norm_backward(
            lc.norm1, d_norm1_out, params.tensor(pre + "ln1.gain"), grads.tensor(pre + "ln1.gain"),
            grads.tensor(pre + "ln1.bias"));

        // attention branch
        Eigen::MatrixXd d_mixed = d_res1;
        detail::apply_dropout_backward(d_mixed, lc.mixed_mask, cfg.dropout);
        grads.tensor(pre + "attn.wo") += lc.heads_concat.transpose() * d_mixed;
        Eigen::MatrixXd d_concat = d_mixed * params.tensor(pre + "attn.wo").transpose();

        Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(w, static_cast<Eigen::Index>(cfg.d_model));
        Eigen::MatrixXd dkt = Eigen::MatrixXd::Zero(w, static_cast<Eigen::Index>(cfg.d_model));
        Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(w, static_cast<Eigen::Index>(cfg.d_model));
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const Eigen::Index off = static_cast<Eigen::Index>(h) * dk;
            const auto& p = lc.attn_weights[h];
            const Eigen::MatrixXd d_out_h = d_concat.middleCols(off, dk);
            const Eigen::MatrixXd dp = d_out_h * lc.v.middleCols(off, dk).transpose();
            dv.middleCols(off, dk) = p.transpose() * d_out_h;
            // softmax rows: ds = p .* (dp - rowsum(dp .* p))
            Eigen::MatrixXd ds(p.rows(), p.cols());
            for (Eigen::Index r = 0; r < p.rows(); ++r) {
                const double dot = dp.row(r).dot(p.row(r));
                ds.row(r) = p.row(r).cwiseProduct((dp.row(r).array() - dot).matrix());
            }
            ds *= scale;
            dq.middleCols(off, dk) = ds * lc.k.middleCols(off, dk);
            dkt.middleCols(off, dk) = ds.transpose() * lc.q.middleCols(off, dk);
        }
        grads.tensor(pre + "attn.wq") += lc.z_in.transpose() * dq;
        grads.tensor(pre + "attn.wk") += lc.z_in.transpose() * dkt;
        grads.tensor(pre + "attn.wv") += lc.z_in.transpose() * dv;

        dz = d_res1 + dq * params.tensor(pre + "attn.wq").transpose() +
             dkt * params.tensor(pre + "attn.wk").transpose() +
             dv * params.tensor(pre + "attn.wv").transpose();
    }

    // embedding (the position table is constant)
    grads.tensor("embed") += cache.inputs.transpose() * dz;
}

}  // namespace levelcast::model
