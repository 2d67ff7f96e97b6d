#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "levelcast/common.hpp"
#include "levelcast/lstm.hpp"
#include "levelcast/model.hpp"
#include "levelcast/series.hpp"
#include "levelcast/transformer.hpp"

namespace levelcast::model {

/// Every future step is predicted as the last observed value.
inline std::vector<double> persistence_predict(const std::vector<double>& history,
                                               std::size_t horizon) {
    require(!history.empty(), ErrorCode::EmptyHistory, "persistence needs at least one sample");
    return std::vector<double>(horizon, history.back());
}

struct Sample {
    Eigen::MatrixXd inputs;       ///< [window_len x n_features]
    Eigen::RowVectorXd targets;   ///< [horizon]
};

/// Sliding windows over a frame: sample i covers input rows [i, i+w) and
/// target rows [i+w, i+w+horizon) of the target column.
class WindowDataset {
public:
    WindowDataset(const SeriesFrame& frame, const std::string& target, const ModelConfig& cfg)
        : frame_(&frame), cfg_(cfg), target_col_(frame.index_of(target)) {
        require(frame.n_vars() == cfg.n_features, ErrorCode::ShapeMismatch,
                "frame has " + std::to_string(frame.n_vars()) + " variables but the model expects " +
                    std::to_string(cfg.n_features));
        const std::size_t need = cfg.window_len + cfg.horizon;
        n_windows_ = frame.n_rows() >= need ? frame.n_rows() - need + 1 : 0;
    }

    std::size_t size() const { return n_windows_; }

    Sample sample(std::size_t i) const {
        Sample s;
        const std::size_t w = cfg_.window_len;
        s.inputs.resize(static_cast<Eigen::Index>(w), static_cast<Eigen::Index>(cfg_.n_features));
        for (std::size_t c = 0; c < frame_->n_vars(); ++c) {
            const auto& col = frame_->columns[c];
            for (std::size_t r = 0; r < w; ++r)
                s.inputs(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = col[i + r];
        }
        s.targets.resize(static_cast<Eigen::Index>(cfg_.horizon));
        const auto& y = frame_->columns[target_col_];
        for (std::size_t h = 0; h < cfg_.horizon; ++h)
            s.targets(static_cast<Eigen::Index>(h)) = y[i + w + h];
        return s;
    }

    /// Last input-window value of the target for sample i (persistence rule).
    double last_observed(std::size_t i) const {
        return frame_->columns[target_col_][i + cfg_.window_len - 1];
    }

private:
    const SeriesFrame* frame_;
    ModelConfig cfg_;
    std::size_t target_col_;
    std::size_t n_windows_ = 0;
};

inline Eigen::RowVectorXd forward(ModelKind kind, const ParameterSet& params,
                                  const ModelConfig& cfg, const Eigen::MatrixXd& inputs) {
    switch (kind) {
        case ModelKind::transformer: return forward_transformer(params, cfg, inputs);
        case ModelKind::lstm: return forward_lstm(params, cfg, inputs);
        case ModelKind::persistence: break;
    }
    fail(ErrorCode::UnknownModel, "persistence has no parametric forward pass");
}

inline ParameterSet init_parameters(ModelKind kind, const ModelConfig& cfg) {
    switch (kind) {
        case ModelKind::transformer: return transformer_init(cfg);
        case ModelKind::lstm: return lstm_init(cfg);
        case ModelKind::persistence: break;
    }
    fail(ErrorCode::UnknownModel, "persistence has no parameters");
}

struct GradientResult {
    double loss = 0.0;  ///< mean over samples of per-sample mean squared error
    ParameterSet grads;
};

/// Exact reverse-mode gradients of the batch-mean MSE. Per-sample
/// contributions are computed independently (possibly in parallel) and summed
/// in index order, so the result is bit-stable for any thread count.
inline GradientResult compute_gradients(ModelKind kind, const ParameterSet& params,
                                        const ModelConfig& cfg, const std::vector<Sample>& batch) {
    require(!batch.empty(), ErrorCode::EmptyInput, "empty batch");
    const double m = static_cast<double>(cfg.horizon);
    const double b = static_cast<double>(batch.size());

    std::vector<ParameterSet> per_sample(batch.size());
    std::vector<double> per_loss(batch.size(), 0.0);
    parallel_for(batch.size(), [&](std::size_t i) {
        ParameterSet g = ParameterSet::zeros_like(params);
        const Sample& s = batch[i];
        Eigen::RowVectorXd residual;
        if (kind == ModelKind::transformer) {
            TransformerCache cache = transformer_forward(params, cfg, s.inputs);
            residual = cache.prediction - s.targets;
            transformer_backward(params, cfg, cache, residual * (2.0 / (m * b)), g);
        } else {
            LstmCache cache = lstm_forward(params, cfg, s.inputs);
            residual = cache.prediction - s.targets;
            lstm_backward(params, cfg, cache, residual * (2.0 / (m * b)), g);
        }
        per_loss[i] = residual.squaredNorm() / m;
        per_sample[i] = std::move(g);
    });

    GradientResult res;
    res.grads = ParameterSet::zeros_like(params);
    auto& flat = res.grads.flat();
    for (std::size_t i = 0; i < per_sample.size(); ++i) {
        const auto& src = per_sample[i].flat();
        for (std::size_t k = 0; k < flat.size(); ++k) flat[k] += src[k];
        res.loss += per_loss[i];
    }
    res.loss /= b;
    require(res.grads.all_finite(), ErrorCode::NonFiniteGradient, "non-finite gradient");
    return res;
}

struct AdamState {
    std::vector<double> m, v;
    long step = 0;

    static AdamState zeros_like(const ParameterSet& params) {
        AdamState s;
        s.m.assign(params.size(), 0.0);
        s.v.assign(params.size(), 0.0);
        return s;
    }
};

/// One Adam update with bias correction; deterministic given its inputs.
inline void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state,
                      const TrainConfig& cfg) {
    require(params.size() == grads.size() && params.size() == state.m.size(),
            ErrorCode::ShapeMismatch, "parameter/gradient/state sizes differ");
    state.step += 1;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto& theta = params.flat();
    const auto& g = grads.flat();
    for (std::size_t i = 0; i < theta.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double mhat = state.m[i] / b1t;
        const double vhat = state.v[i] / b2t;
        theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/// Mean MSE over a deterministic strided subsample of the dataset (at most
/// `cap` windows), computed in index order.
inline double evaluate_mse(ModelKind kind, const ParameterSet& params, const ModelConfig& cfg,
                           const WindowDataset& data, std::size_t cap) {
    require(data.size() > 0, ErrorCode::InsufficientData, "no evaluation windows");
    const std::size_t stride = cap > 0 && data.size() > cap ? data.size() / cap : 1;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); i += stride) idx.push_back(i);
    std::vector<double> errs(idx.size(), 0.0);
    parallel_for(idx.size(), [&](std::size_t k) {
        const Sample s = data.sample(idx[k]);
        const Eigen::RowVectorXd pred = forward(kind, params, cfg, s.inputs);
        errs[k] = (pred - s.targets).squaredNorm() / static_cast<double>(cfg.horizon);
    });
    double sum = 0.0;
    for (double e : errs) sum += e;
    return sum / static_cast<double>(errs.size());
}

struct TrainLogEntry {
    long step = 0;
    double train_mse = 0.0;  ///< batch loss at this step
    double val_mse = 0.0;
    bool improved = false;
};

struct TrainResult {
    ParameterSet params;  ///< best-on-validation weights
    std::vector<TrainLogEntry> log;
    long best_step = 0;
    double best_val_mse = 0.0;
    long steps_run = 0;
};

/// Minibatch Adam on MSE with early stopping on validation loss. The batch
/// schedule is a seeded permutation, so identical (seed, config, data) give
/// bit-identical results.
inline TrainResult train(ModelKind kind, const ModelConfig& mcfg, const TrainConfig& tcfg,
                         const SeriesFrame& frame_train, const SeriesFrame& frame_val,
                         const std::string& target) {
    mcfg.validate();
    tcfg.validate();
    const WindowDataset train_data(frame_train, target, mcfg);
    const WindowDataset val_data(frame_val, target, mcfg);
    require(train_data.size() >= 1, ErrorCode::InsufficientData, "no training windows");
    require(val_data.size() >= 1, ErrorCode::InsufficientData, "no validation windows");

    ParameterSet params = init_parameters(kind, mcfg);
    AdamState state = AdamState::zeros_like(params);
    Rng schedule(derive_seed(mcfg.seed, "batch-schedule"));

    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    schedule.shuffle(order);
    std::size_t cursor = 0;

    TrainResult result;
    result.params = params;
    result.best_val_mse = std::numeric_limits<double>::infinity();
    long stale = 0;

    std::vector<Sample> batch;
    for (long step = 1; step <= tcfg.max_steps; ++step) {
        batch.clear();
        for (std::size_t k = 0; k < tcfg.batch_size; ++k) {
            if (cursor >= order.size()) {
                schedule.shuffle(order);
                cursor = 0;
            }
            batch.push_back(train_data.sample(order[cursor++]));
        }
        GradientResult g;
        try {
            g = compute_gradients(kind, params, mcfg, batch);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::NonFiniteActivation || e.code() == ErrorCode::NonFiniteGradient)
                fail(ErrorCode::Diverged,
                     "training diverged at step " + std::to_string(step) + " (" + e.what() + ")");
            throw;
        }
        adam_step(params, g.grads, state, tcfg);

        if (step % tcfg.eval_every == 0 || step == tcfg.max_steps) {
            double val;
            try {
                val = evaluate_mse(kind, params, mcfg, val_data, tcfg.max_val_windows);
            } catch (const Error& e) {
                if (e.code() == ErrorCode::NonFiniteActivation)
                    fail(ErrorCode::Diverged,
                         "validation diverged at step " + std::to_string(step));
                throw;
            }
            require(std::isfinite(val), ErrorCode::Diverged,
                    "validation loss is not finite at step " + std::to_string(step));
            TrainLogEntry entry{step, g.loss, val, val < result.best_val_mse};
            result.log.push_back(entry);
            if (entry.improved) {
                result.best_val_mse = val;
                result.best_step = step;
                result.params = params;
                stale = 0;
            } else {
                ++stale;
                if (stale > tcfg.patience) {
                    result.steps_run = step;
                    return result;
                }
            }
        }
        result.steps_run = step;
    }
    return result;
}

/// Sliding-window direct multi-horizon prediction over a standardized frame;
/// outputs are mapped back to physical target units.
inline ForecastResult predict_horizon(ModelKind kind, const ParameterSet& params,
                                      const ModelConfig& cfg, const SeriesFrame& frame_test,
                                      const StandardizationParams& std_params,
                                      const std::string& target) {
    const WindowDataset data(frame_test, target, cfg);
    require(data.size() >= 1, ErrorCode::InsufficientData,
            "test frame too short for window+horizon");
    const double mu = std_params.mean_of(target);
    const double sigma = std_params.scale_of(target);

    ForecastResult res;
    res.predictions.resize(data.size());
    res.targets.resize(data.size());
    res.horizons.resize(cfg.horizon);
    std::iota(res.horizons.begin(), res.horizons.end(), std::size_t{1});

    parallel_for(data.size(), [&](std::size_t i) {
        const Sample s = data.sample(i);
        Eigen::RowVectorXd pred;
        if (kind == ModelKind::persistence) {
            pred = Eigen::RowVectorXd::Constant(static_cast<Eigen::Index>(cfg.horizon),
                                                data.last_observed(i));
        } else {
            pred = forward(kind, params, cfg, s.inputs);
        }
        std::vector<double> p(cfg.horizon), t(cfg.horizon);
        for (std::size_t h = 0; h < cfg.horizon; ++h) {
            p[h] = pred(static_cast<Eigen::Index>(h)) * sigma + mu;
            t[h] = s.targets(static_cast<Eigen::Index>(h)) * sigma + mu;
        }
        res.predictions[i] = std::move(p);
        res.targets[i] = std::move(t);
    });
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned JSON container with the config, standardization,
// feature order, seed and all tensors (row-major). Doubles round-trip
// bit-exactly through the JSON layer, so a reloaded model reproduces its
// predictions bit for bit.
// ---------------------------------------------------------------------------

struct Checkpoint {
    ModelKind kind = ModelKind::transformer;
    ModelConfig config;
    std::string target;
    std::vector<std::string> feature_names;
    StandardizationParams standardization;
    ParameterSet params;
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return {{"window_len", c.window_len}, {"n_features", c.n_features}, {"d_model", c.d_model},
            {"n_heads", c.n_heads},       {"d_ff", c.d_ff},             {"n_layers", c.n_layers},
            {"horizon", c.horizon},       {"dropout", c.dropout},       {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.window_len = j.at("window_len").get<std::size_t>();
    c.n_features = j.at("n_features").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.horizon = j.at("horizon").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = model_kind_name(ck.kind);
    j["config"] = model_config_to_json(ck.config);
    j["target"] = ck.target;
    j["feature_names"] = ck.feature_names;
    j["standardization"] = {{"names", ck.standardization.names},
                            {"means", ck.standardization.means},
                            {"scales", ck.standardization.scales}};
    nlohmann::json tensors = nlohmann::json::array();
    for (std::size_t i = 0; i < ck.params.tensor_count(); ++i) {
        const auto& spec = ck.params.specs()[i];
        const auto view = ck.params.tensor(i);
        std::vector<double> data(view.data(), view.data() + view.size());
        tensors.push_back({{"name", spec.name}, {"rows", spec.rows}, {"cols", spec.cols},
                           {"data", data}});
    }
    j["tensors"] = std::move(tensors);
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot write checkpoint '" + path + "'");
    out << j.dump(2) << '\n';
    require(out.good(), ErrorCode::IoError, "checkpoint write failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::IoError, std::string("bad checkpoint json: ") + e.what());
    }
    require(j.at("format_version").get<int>() == 1, ErrorCode::IoError,
            "unsupported checkpoint version");
    Checkpoint ck;
    ck.kind = model_kind_from_name(j.at("kind").get<std::string>());
    ck.config = model_config_from_json(j.at("config"));
    ck.target = j.at("target").get<std::string>();
    ck.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    ck.standardization.names = j.at("standardization").at("names").get<std::vector<std::string>>();
    ck.standardization.means = j.at("standardization").at("means").get<std::vector<double>>();
    ck.standardization.scales = j.at("standardization").at("scales").get<std::vector<double>>();
    for (const auto& t : j.at("tensors")) {
        ck.params.add(t.at("name").get<std::string>(), t.at("rows").get<Eigen::Index>(),
                      t.at("cols").get<Eigen::Index>());
        const auto data = t.at("data").get<std::vector<double>>();
        auto view = ck.params.tensor(ck.params.tensor_count() - 1);
        require(static_cast<std::size_t>(view.size()) == data.size(), ErrorCode::IoError,
                "tensor size mismatch in checkpoint");
        std::copy(data.begin(), data.end(), view.data());
    }
    return ck;
}

}  // namespace levelcast::model
