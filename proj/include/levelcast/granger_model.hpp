#pragma once

// Model-backed one-step predictors for granger_test. Split out of causal.hpp
// only to keep the include order manageable; do not include this directly.

#include "levelcast/causal.hpp"
#include "levelcast/train.hpp"

namespace levelcast::causal::detail {

inline SeriesFrame sub_frame(const SeriesFrame& frame, const std::vector<std::string>& names) {
    SeriesFrame out;
    out.sample_period_s = frame.sample_period_s;
    out.timestamps = frame.timestamps;
    for (const auto& n : names) {
        out.names.push_back(n);
        out.columns.push_back(frame.column(n));
    }
    return out;
}

inline std::vector<double> one_step_abs_errors(model::ModelKind kind, const SeriesFrame& sub,
                                               const CausalTestSpec& spec, std::size_t t_eval_begin,
                                               std::uint64_t seed) {
    const std::size_t tau = spec.history_len;

    model::ModelConfig mcfg;
    mcfg.window_len = tau;
    mcfg.n_features = sub.n_vars();
    mcfg.d_model = 16;
    mcfg.n_heads = 2;
    mcfg.d_ff = 32;
    mcfg.n_layers = 1;
    mcfg.horizon = 1;
    mcfg.seed = seed;

    model::TrainConfig tcfg;
    tcfg.learning_rate = 1e-2;
    tcfg.batch_size = 32;
    tcfg.max_steps = 300;
    tcfg.eval_every = 25;
    tcfg.patience = 4;

    // fit region = everything before the evaluation rows; its tail (15%)
    // becomes the early-stopping validation slice
    SeriesFrame fit_frame;
    fit_frame.sample_period_s = sub.sample_period_s;
    fit_frame.names = sub.names;
    fit_frame.timestamps.assign(sub.timestamps.begin(),
                                sub.timestamps.begin() + static_cast<std::ptrdiff_t>(t_eval_begin));
    for (const auto& col : sub.columns)
        fit_frame.columns.emplace_back(col.begin(),
                                       col.begin() + static_cast<std::ptrdiff_t>(t_eval_begin));

    const std::size_t n_fit = fit_frame.n_rows();
    const std::size_t n_val = std::max<std::size_t>(tau + 1, n_fit * 15 / 100);
    require(n_fit > n_val + tau + 1, ErrorCode::TooFewPairs, "fit region too short for a model");

    SeriesFrame train_part, val_part;
    auto slice = [&](std::size_t b, std::size_t e) {
        SeriesFrame part;
        part.sample_period_s = sub.sample_period_s;
        part.names = sub.names;
        part.timestamps.assign(fit_frame.timestamps.begin() + static_cast<std::ptrdiff_t>(b),
                               fit_frame.timestamps.begin() + static_cast<std::ptrdiff_t>(e));
        for (const auto& col : fit_frame.columns)
            part.columns.emplace_back(col.begin() + static_cast<std::ptrdiff_t>(b),
                                      col.begin() + static_cast<std::ptrdiff_t>(e));
        return part;
    };
    train_part = slice(0, n_fit - n_val);
    val_part = slice(n_fit - n_val, n_fit);

    const model::TrainResult trained =
        model::train(kind, mcfg, tcfg, train_part, val_part, spec.target);

    const auto& y = sub.column(spec.target);
    std::vector<double> errs;
    errs.reserve(sub.n_rows() - t_eval_begin);
    Eigen::MatrixXd window(static_cast<Eigen::Index>(tau), static_cast<Eigen::Index>(sub.n_vars()));
    for (std::size_t t = t_eval_begin; t < sub.n_rows(); ++t) {
        for (std::size_t c = 0; c < sub.n_vars(); ++c)
            for (std::size_t r = 0; r < tau; ++r)
                window(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                    sub.columns[c][t - tau + r];
        const Eigen::RowVectorXd pred = model::forward(kind, trained.params, mcfg, window);
        errs.push_back(std::fabs(y[t] - pred(0)));
    }
    return errs;
}

inline PairedErrors model_errors(const SeriesFrame& frame, const CausalTestSpec& spec) {
    const std::size_t tau = spec.history_len;
    require(frame.n_rows() > tau + 10, ErrorCode::TooFewPairs, "series too short");
    const std::size_t rows = frame.n_rows() - tau;
    const std::size_t n_fit =
        static_cast<std::size_t>(std::floor(static_cast<double>(rows) * spec.fit_fraction));
    const std::size_t t_eval_begin = tau + n_fit;
    require(frame.n_rows() - t_eval_begin >= 5, ErrorCode::TooFewPairs,
            "not enough evaluation rows");

    std::vector<std::string> restricted_names{spec.target};
    for (const auto& z : spec.conditioning) restricted_names.push_back(z);
    std::vector<std::string> unrestricted_names = restricted_names;
    unrestricted_names.push_back(spec.candidate);

    const model::ModelKind kind = spec.predictor == PredictorKind::lstm
                                      ? model::ModelKind::lstm
                                      : model::ModelKind::transformer;

    PairedErrors err;
    err.without_candidate = one_step_abs_errors(kind, sub_frame(frame, restricted_names), spec,
                                                t_eval_begin, derive_seed(spec.seed, "restricted"));
    err.with_candidate = one_step_abs_errors(kind, sub_frame(frame, unrestricted_names), spec,
                                             t_eval_begin, derive_seed(spec.seed, "unrestricted"));
    return err;
}

}  // namespace levelcast::causal::detail
