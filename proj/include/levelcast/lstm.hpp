#pragma once

#include <Eigen/Dense>
#include <vector>

#include "levelcast/common.hpp"
#include "levelcast/model.hpp"

namespace levelcast::model {

// Single-layer LSTM over the input window; the final hidden state feeds a
// linear head that emits all horizon steps. Gates are packed [i | f | g | o]
// in blocks of the hidden width (= d_model).

inline ParameterSet lstm_layout(const ModelConfig& cfg) {
    cfg.validate();
    const auto f = static_cast<Eigen::Index>(cfg.n_features);
    const auto hn = static_cast<Eigen::Index>(cfg.d_model);
    const auto m = static_cast<Eigen::Index>(cfg.horizon);
    ParameterSet p;
    p.add("lstm.w_ih", f, 4 * hn);
    p.add("lstm.w_hh", hn, 4 * hn);
    p.add("lstm.b", 1, 4 * hn);
    p.add("head.w", hn, m);
    p.add("head.b", 1, m);
    return p;
}

inline ParameterSet lstm_init(const ModelConfig& cfg) {
    ParameterSet p = lstm_layout(cfg);
    detail::init_parameters(p, cfg.seed);
    return p;
}

struct LstmCache {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd gates;   ///< [T x 4H] post-activation (sigmoid/tanh applied)
    Eigen::MatrixXd cells;   ///< [T x H]
    Eigen::MatrixXd tanh_c;  ///< [T x H]
    Eigen::MatrixXd hidden;  ///< [T x H]
    Eigen::RowVectorXd prediction;
};

inline LstmCache lstm_forward(const ParameterSet& params, const ModelConfig& cfg,
                              const Eigen::MatrixXd& inputs) {
    cfg.validate();
    require(inputs.rows() == static_cast<Eigen::Index>(cfg.window_len) &&
                inputs.cols() == static_cast<Eigen::Index>(cfg.n_features),
            ErrorCode::ShapeMismatch, "inputs must be [window_len x n_features]");
    const Eigen::Index T = inputs.rows();
    const Eigen::Index H = static_cast<Eigen::Index>(cfg.d_model);

    const auto w_ih = params.tensor("lstm.w_ih");
    const auto w_hh = params.tensor("lstm.w_hh");
    const auto bias = params.tensor("lstm.b");

    LstmCache cache;
    cache.inputs = inputs;
    cache.gates.resize(T, 4 * H);
    cache.cells.resize(T, H);
    cache.tanh_c.resize(T, H);
    cache.hidden.resize(T, H);

    Eigen::RowVectorXd h_prev = Eigen::RowVectorXd::Zero(H);
    Eigen::RowVectorXd c_prev = Eigen::RowVectorXd::Zero(H);
    for (Eigen::Index t = 0; t < T; ++t) {
        Eigen::RowVectorXd z = inputs.row(t) * w_ih + h_prev * w_hh + bias.row(0);
        auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
        for (Eigen::Index j = 0; j < H; ++j) {
            z(j) = sigmoid(z(j));                  // input gate
            z(H + j) = sigmoid(z(H + j));          // forget gate
            z(2 * H + j) = std::tanh(z(2 * H + j));  // candidate
            z(3 * H + j) = sigmoid(z(3 * H + j));  // output gate
        }
        cache.gates.row(t) = z;
        const auto i_g = z.segment(0, H).array();
        const auto f_g = z.segment(H, H).array();
        const auto g_g = z.segment(2 * H, H).array();
        const auto o_g = z.segment(3 * H, H).array();
        Eigen::RowVectorXd c = (f_g * c_prev.array() + i_g * g_g).matrix();
        cache.cells.row(t) = c;
        cache.tanh_c.row(t) = c.array().tanh();
        cache.hidden.row(t) = (o_g * cache.tanh_c.row(t).array()).matrix();
        h_prev = cache.hidden.row(t);
        c_prev = c;
    }
    require(cache.hidden.allFinite(), ErrorCode::NonFiniteActivation, "non-finite LSTM state");
    cache.prediction = cache.hidden.row(T - 1) * params.tensor("head.w") +
                       params.tensor("head.b").row(0);
    require(cache.prediction.allFinite(), ErrorCode::NonFiniteActivation, "non-finite prediction");
    return cache;
}

inline Eigen::RowVectorXd forward_lstm(const ParameterSet& params, const ModelConfig& cfg,
                                       const Eigen::MatrixXd& inputs) {
    return lstm_forward(params, cfg, inputs).prediction;
}

/// Backpropagation through time for one sample; accumulates into `grads`.
inline void lstm_backward(const ParameterSet& params, const ModelConfig& cfg,
                          const LstmCache& cache, const Eigen::RowVectorXd& d_pred,
                          ParameterSet& grads) {
    const Eigen::Index T = static_cast<Eigen::Index>(cfg.window_len);
    const Eigen::Index H = static_cast<Eigen::Index>(cfg.d_model);

    grads.tensor("head.w") += cache.hidden.row(T - 1).transpose() * d_pred;
    grads.tensor("head.b").row(0) += d_pred;

    const auto w_hh = params.tensor("lstm.w_hh");
    auto g_w_ih = grads.tensor("lstm.w_ih");
    auto g_w_hh = grads.tensor("lstm.w_hh");
    auto g_b = grads.tensor("lstm.b");

    using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

    Eigen::RowVectorXd dh = d_pred * params.tensor("head.w").transpose();
    RowArray dc = RowArray::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const RowArray i_g = cache.gates.row(t).segment(0, H).array();
        const RowArray f_g = cache.gates.row(t).segment(H, H).array();
        const RowArray g_g = cache.gates.row(t).segment(2 * H, H).array();
        const RowArray o_g = cache.gates.row(t).segment(3 * H, H).array();
        const RowArray tc = cache.tanh_c.row(t).array();
        const RowArray c_prev =
            t > 0 ? RowArray(cache.cells.row(t - 1).array()) : RowArray::Zero(H);

        dc += dh.array() * o_g * (1.0 - tc * tc);

        Eigen::RowVectorXd dz(4 * H);
        dz.segment(0, H) = (dc * g_g * i_g * (1.0 - i_g)).matrix();
        dz.segment(H, H) = (dc * c_prev * f_g * (1.0 - f_g)).matrix();
        dz.segment(2 * H, H) = (dc * i_g * (1.0 - g_g * g_g)).matrix();
        dz.segment(3 * H, H) = (dh.array() * tc * o_g * (1.0 - o_g)).matrix();

        g_w_ih += cache.inputs.row(t).transpose() * dz;
        if (t > 0) g_w_hh += cache.hidden.row(t - 1).transpose() * dz;
        g_b.row(0) += dz;

        dh = dz * w_hh.transpose();
        dc *= f_g;
    }
}

}  // namespace levelcast::model
