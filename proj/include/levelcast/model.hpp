#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "levelcast/common.hpp"

namespace levelcast::model {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TensorView = Eigen::Map<RowMajorMatrix>;
using ConstTensorView = Eigen::Map<const RowMajorMatrix>;

enum class ModelKind { transformer, lstm, persistence };

inline const char* model_kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::transformer: return "transformer";
        case ModelKind::lstm: return "lstm";
        case ModelKind::persistence: return "persistence";
    }
    return "?";
}

inline ModelKind model_kind_from_name(const std::string& s) {
    if (s == "transformer") return ModelKind::transformer;
    if (s == "lstm") return ModelKind::lstm;
    if (s == "persistence") return ModelKind::persistence;
    fail(ErrorCode::UnknownModel, "unknown model kind '" + s + "'");
}

struct ModelConfig {
    std::size_t window_len = 60;  ///< input history length
    std::size_t n_features = 1;
    std::size_t d_model = 32;
    std::size_t n_heads = 2;
    std::size_t d_ff = 64;
    std::size_t n_layers = 2;
    std::size_t horizon = 1;  ///< steps predicted jointly by the output head
    double dropout = 0.0;
    std::uint64_t seed = 0;

    std::size_t d_k() const { return d_model / n_heads; }

    void validate() const {
        require(window_len >= 1 && n_features >= 1 && d_model >= 1 && n_heads >= 1 &&
                    d_ff >= 1 && n_layers >= 1 && horizon >= 1,
                ErrorCode::ConfigError, "all model dimensions must be >= 1");
        require(d_model % n_heads == 0, ErrorCode::ConfigError,
                "d_model must be divisible by n_heads");
        require(dropout >= 0.0 && dropout < 1.0, ErrorCode::ConfigError, "dropout must lie in [0,1)");
    }
};

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    long max_steps = 2000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long patience = 10;           ///< consecutive non-improving validations tolerated
    long eval_every = 50;         ///< steps between validation passes
    std::size_t max_val_windows = 512;  ///< validation subsample cap (strided, deterministic)

    void validate() const {
        require(learning_rate > 0.0, ErrorCode::ConfigError, "learning_rate must be positive");
        require(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorCode::ConfigError,
                "adam betas must lie in (0,1)");
        require(batch_size >= 1 && max_steps >= 1 && eval_every >= 1, ErrorCode::ConfigError,
                "batch_size, max_steps and eval_every must be >= 1");
        require(patience >= 0, ErrorCode::ConfigError, "patience must be >= 0");
    }
};

/// Named tensors in one flat 64-bit buffer. The flat layout gives Adam,
/// finite-difference checks and serialization one canonical ordering; views
/// are row-major so the on-disk layout matches what the name suggests.
class ParameterSet {
public:
    struct TensorSpec {
        std::string name;
        Eigen::Index rows = 0;
        Eigen::Index cols = 0;
        std::size_t offset = 0;
    };

    void add(std::string name, Eigen::Index rows, Eigen::Index cols) {
        TensorSpec spec;
        spec.name = std::move(name);
        spec.rows = rows;
        spec.cols = cols;
        spec.offset = data_.size();
        specs_.push_back(spec);
        data_.resize(data_.size() + static_cast<std::size_t>(rows * cols), 0.0);
    }

    std::size_t size() const { return data_.size(); }
    std::size_t tensor_count() const { return specs_.size(); }
    const std::vector<TensorSpec>& specs() const { return specs_; }
    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

    TensorView tensor(std::size_t i) {
        const auto& s = specs_[i];
        return TensorView(data_.data() + s.offset, s.rows, s.cols);
    }
    ConstTensorView tensor(std::size_t i) const {
        const auto& s = specs_[i];
        return ConstTensorView(data_.data() + s.offset, s.rows, s.cols);
    }
    TensorView tensor(std::string_view name) { return tensor(index_of(name)); }
    ConstTensorView tensor(std::string_view name) const { return tensor(index_of(name)); }

    std::size_t index_of(std::string_view name) const {
        for (std::size_t i = 0; i < specs_.size(); ++i)
            if (specs_[i].name == name) return i;
        fail(ErrorCode::InvalidArgument, "no tensor named '" + std::string(name) + "'");
    }

    bool same_layout(const ParameterSet& other) const {
        if (specs_.size() != other.specs_.size()) return false;
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            const auto& a = specs_[i];
            const auto& b = other.specs_[i];
            if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
        }
        return true;
    }

    static ParameterSet zeros_like(const ParameterSet& other) {
        ParameterSet p;
        p.specs_ = other.specs_;
        p.data_.assign(other.data_.size(), 0.0);
        return p;
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

private:
    std::vector<TensorSpec> specs_;
    std::vector<double> data_;
};

namespace detail {

/// Weight matrices: uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) drawn in tensor
/// order; biases start at zero, norm gains at one.
inline void init_tensor(TensorView t, Rng& rng, bool is_bias, bool is_gain) {
    if (is_gain) {
        t.setOnes();
        return;
    }
    if (is_bias) {
        t.setZero();
        return;
    }
    const double bound = std::sqrt(1.0 / static_cast<double>(t.rows()));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
        for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = rng.uniform(-bound, bound);
}

inline void init_parameters(ParameterSet& params, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "param-init"));
    for (std::size_t i = 0; i < params.tensor_count(); ++i) {
        const auto& name = params.specs()[i].name;
        const auto dot = name.rfind('.');
        const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
        const bool gain = leaf == "gain";
        const bool bias = !leaf.empty() && leaf[0] == 'b';
        init_tensor(params.tensor(i), rng, bias, gain);
    }
}

}  // namespace detail

struct ForecastResult {
    std::vector<std::vector<double>> predictions;  ///< [n_samples][horizon], physical units
    std::vector<std::vector<double>> targets;      ///< same shape
    std::vector<std::size_t> horizons;             ///< 1..horizon

    std::size_t n_samples() const { return predictions.size(); }
};

}  // namespace levelcast::model
