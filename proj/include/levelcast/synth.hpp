#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "levelcast/common.hpp"
#include "levelcast/series.hpp"

namespace levelcast::synth {

enum class ParentKind { step_pattern, ar_noise, sinusoid };

inline const char* parent_kind_name(ParentKind k) {
    switch (k) {
        case ParentKind::step_pattern: return "step-pattern";
        case ParentKind::ar_noise: return "AR-noise";
        case ParentKind::sinusoid: return "sinusoid";
    }
    return "?";
}

struct ParentSpec {
    std::string name;
    std::size_t delay = 1;  ///< samples before the effect reaches the target
    double gain = 1.0;
    ParentKind kind = ParentKind::ar_noise;
};

struct GeneratorSpec {
    std::size_t n_samples = 10000;
    std::uint64_t seed = 0;
    std::vector<ParentSpec> parents;
    std::size_t distractors = 0;  ///< extra non-causal noise variables
    /// target noise sigma as a fraction of the noiseless signal's sigma
    double target_noise_sigma = 0.1;
    double ar_coeff = 0.0;  ///< target autoregressive coefficient, |a| < 1
    std::string target_name = "drum_level";

    void validate() const {
        require(n_samples >= 8, ErrorCode::InvalidSpec, "n_samples too small");
        require(std::fabs(ar_coeff) < 1.0, ErrorCode::InvalidSpec,
                "|ar_coeff| must be < 1 for stationarity");
        require(target_noise_sigma >= 0.0, ErrorCode::InvalidSpec, "noise sigma must be >= 0");
        std::size_t max_delay = 0;
        for (const auto& p : parents) {
            require(p.delay >= 1, ErrorCode::InvalidSpec,
                    "parent '" + p.name + "' must have delay >= 1");
            require(!p.name.empty(), ErrorCode::InvalidSpec, "parent needs a name");
            max_delay = std::max(max_delay, p.delay);
        }
        require(n_samples > 2 * max_delay, ErrorCode::InvalidSpec,
                "n_samples must exceed 2 * max delay");
    }
};

struct GroundTruth {
    std::string target;
    std::vector<ParentSpec> parents;
    std::vector<std::string> distractor_names;
};

namespace detail {

inline std::vector<double> gen_ar_noise(std::size_t n, Rng& rng, double phi = 0.9) {
    std::vector<double> x(n);
    const double innov = std::sqrt(1.0 - phi * phi);  // unit marginal variance
    x[0] = rng.gaussian();
    for (std::size_t t = 1; t < n; ++t) x[t] = phi * x[t - 1] + innov * rng.gaussian();
    return x;
}

/// Random-duration plateaus with jumps; mimics operating-point steps.
inline std::vector<double> gen_step_pattern(std::size_t n, Rng& rng) {
    std::vector<double> x(n);
    std::size_t t = 0;
    while (t < n) {
        double u = rng.uniform();
        if (u <= 0.0) u = 0x1.0p-53;
        const std::size_t dur = 60 + static_cast<std::size_t>(-240.0 * std::log(u));
        const double level = rng.gaussian();
        const std::size_t end = std::min(n, t + dur);
        for (; t < end; ++t) x[t] = level;
    }
    return x;
}

inline std::vector<double> gen_sinusoid(std::size_t n, Rng& rng) {
    const double period = rng.uniform(120.0, 600.0);
    const double phase = rng.uniform(0.0, 6.283185307179586);
    const double amp = 1.4142135623730951;  // unit variance
    std::vector<double> x(n);
    for (std::size_t t = 0; t < n; ++t)
        x[t] = amp * std::sin(6.283185307179586 * static_cast<double>(t) / period + phase) +
               0.05 * rng.gaussian();
    return x;
}

inline std::vector<double> gen_parent(ParentKind kind, std::size_t n, Rng& rng) {
    switch (kind) {
        case ParentKind::ar_noise: return gen_ar_noise(n, rng);
        case ParentKind::step_pattern: return gen_step_pattern(n, rng);
        case ParentKind::sinusoid: return gen_sinusoid(n, rng);
    }
    fail(ErrorCode::InvalidSpec, "unknown parent kind");
}

}  // namespace detail

/// Seeded boiler-like generator: the target is an AR(1) process driven by
/// delayed parent signals plus Gaussian noise scaled relative to the
/// noiseless signal's sigma. Distractors are independent AR-noise variables.
/// The same seed reproduces the frame bit for bit; the returned ground truth
/// is the oracle for screening and delay tests.
inline std::pair<SeriesFrame, GroundTruth> generate(const GeneratorSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_samples;
    std::size_t lead = 0;
    for (const auto& p : spec.parents) lead = std::max(lead, p.delay);

    // parents are generated with `lead` extra samples of history so the
    // target's delayed taps are defined from t = 0
    std::vector<std::vector<double>> parent_full(spec.parents.size());
    for (std::size_t j = 0; j < spec.parents.size(); ++j) {
        Rng rng(derive_seed(spec.seed, spec.parents[j].name));
        parent_full[j] = detail::gen_parent(spec.parents[j].kind, n + lead, rng);
    }

    std::vector<double> drive(n, 0.0);
    for (std::size_t j = 0; j < spec.parents.size(); ++j) {
        const double g = spec.parents[j].gain;
        const std::size_t d = spec.parents[j].delay;
        for (std::size_t t = 0; t < n; ++t) drive[t] += g * parent_full[j][lead + t - d];
    }

    // noiseless pass fixes the signal scale the noise is relative to
    std::vector<double> clean(n, 0.0);
    double prev = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        clean[t] = spec.ar_coeff * prev + drive[t];
        prev = clean[t];
    }
    const double clean_mu = mean_of(clean);
    const double signal_sigma = std::sqrt(population_variance(clean, clean_mu));
    const double noise_scale = spec.target_noise_sigma * signal_sigma;

    Rng noise_rng(derive_seed(spec.seed, "target-noise"));
    std::vector<double> target(n, 0.0);
    prev = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        target[t] = spec.ar_coeff * prev + drive[t] + noise_scale * noise_rng.gaussian();
        prev = target[t];
    }

    SeriesFrame frame;
    frame.sample_period_s = 1;
    frame.timestamps.resize(n);
    for (std::size_t t = 0; t < n; ++t) frame.timestamps[t] = static_cast<std::int64_t>(t);
    frame.names.push_back(spec.target_name);
    frame.columns.push_back(std::move(target));
    for (std::size_t j = 0; j < spec.parents.size(); ++j) {
        frame.names.push_back(spec.parents[j].name);
        frame.columns.emplace_back(parent_full[j].begin() + static_cast<std::ptrdiff_t>(lead),
                                   parent_full[j].end());
    }

    GroundTruth truth;
    truth.target = spec.target_name;
    truth.parents = spec.parents;
    for (std::size_t k = 0; k < spec.distractors; ++k) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "distractor_%02zu", k + 1);
        Rng rng(derive_seed(spec.seed, buf));
        frame.names.emplace_back(buf);
        frame.columns.push_back(detail::gen_ar_noise(n, rng));
        truth.distractor_names.emplace_back(buf);
    }
    return {std::move(frame), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Linear VAR simulation with an explicit lag structure
// ---------------------------------------------------------------------------

struct VarEdge {
    std::size_t from = 0;
    std::size_t to = 0;
    std::size_t lag = 1;
    double coeff = 0.0;
};

/// Simulate x_i[t] = sum over edges(to=i) coeff * x_from[t-lag] + unit noise.
/// The companion-matrix spectral radius is checked numerically; the first
/// 10 * max_lag samples are burn-in and discarded.
inline std::pair<SeriesFrame, std::vector<VarEdge>> generate_var_system(
    std::size_t n_vars, const std::vector<VarEdge>& edges, std::size_t n_samples,
    std::uint64_t seed) {
    require(n_vars >= 1, ErrorCode::InvalidSpec, "need at least one variable");
    std::size_t p = 1;
    for (const auto& e : edges) {
        require(e.from < n_vars && e.to < n_vars, ErrorCode::InvalidSpec, "edge index out of range");
        require(e.lag >= 1, ErrorCode::InvalidSpec, "edge lags must be >= 1");
        p = std::max(p, e.lag);
    }

    // companion matrix [A1 A2 ... Ap; I 0]
    const Eigen::Index dim = static_cast<Eigen::Index>(n_vars * p);
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& e : edges)
        companion(static_cast<Eigen::Index>(e.to),
                  static_cast<Eigen::Index>((e.lag - 1) * n_vars + e.from)) += e.coeff;
    for (Eigen::Index i = 0; i < dim - static_cast<Eigen::Index>(n_vars); ++i)
        companion(static_cast<Eigen::Index>(n_vars) + i, i) = 1.0;
    const Eigen::VectorXcd eigenvalues = Eigen::EigenSolver<Eigen::MatrixXd>(companion, false).eigenvalues();
    double rho = 0.0;
    for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) rho = std::max(rho, std::abs(eigenvalues(i)));
    require(rho < 1.0 - 1e-9, ErrorCode::UnstableSystem,
            "companion spectral radius " + std::to_string(rho) + " >= 1");

    const std::size_t burn_in = 10 * p;
    const std::size_t total = n_samples + burn_in;
    std::vector<std::vector<double>> x(n_vars, std::vector<double>(total, 0.0));
    std::vector<Rng> rngs;
    rngs.reserve(n_vars);
    for (std::size_t i = 0; i < n_vars; ++i)
        rngs.emplace_back(derive_seed(seed, "var", i));

    for (std::size_t t = 0; t < total; ++t) {
        for (std::size_t i = 0; i < n_vars; ++i) x[i][t] = rngs[i].gaussian();
        for (const auto& e : edges)
            if (t >= e.lag) x[e.to][t] += e.coeff * x[e.from][t - e.lag];
    }

    SeriesFrame frame;
    frame.sample_period_s = 1;
    frame.timestamps.resize(n_samples);
    for (std::size_t t = 0; t < n_samples; ++t) frame.timestamps[t] = static_cast<std::int64_t>(t);
    for (std::size_t i = 0; i < n_vars; ++i) {
        frame.names.push_back("v" + std::to_string(i));
        frame.columns.emplace_back(x[i].begin() + static_cast<std::ptrdiff_t>(burn_in), x[i].end());
    }
    return {std::move(frame), edges};
}

// ---------------------------------------------------------------------------
// Presets used by the CLI and the verification experiments
// ---------------------------------------------------------------------------

/// Single feedwater-flow-like driver with a 212 s transport delay.
inline GeneratorSpec preset_fig5(std::size_t n = 20000, std::uint64_t seed = 7,
                                 double noise = 0.1) {
    GeneratorSpec spec;
    spec.n_samples = n;
    spec.seed = seed;
    spec.parents = {{"feedwater_flow", 212, 1.0, ParentKind::ar_noise}};
    spec.distractors = 1;
    spec.target_noise_sigma = noise;
    spec.ar_coeff = 0.0;
    return spec;
}

/// Three drivers with known delays {5, 50, 212}; the delay-recovery oracle.
inline GeneratorSpec preset_delays(std::size_t n = 100000, std::uint64_t seed = 1,
                                   double noise = 0.1) {
    GeneratorSpec spec;
    spec.n_samples = n;
    spec.seed = seed;
    spec.parents = {{"fuel_rate", 5, 0.8, ParentKind::ar_noise},
                    {"steam_flow", 50, 0.8, ParentKind::ar_noise},
                    {"feedwater_flow", 212, 1.0, ParentKind::ar_noise}};
    spec.distractors = 2;
    spec.target_noise_sigma = noise;
    spec.ar_coeff = 0.0;
    return spec;
}

/// Delayed-dynamics preset for forecasting trends: sluggish AR(1) target,
/// a slow step-pattern driver with a delay far beyond any reasonable model
/// window plus a fast-decorrelating driver whose lagged copy carries
/// information the target's own history cannot reveal.
inline GeneratorSpec preset_forecast(std::size_t n = 50000, std::uint64_t seed = 1) {
    GeneratorSpec spec;
    spec.n_samples = n;
    spec.seed = seed;
    spec.parents = {{"fuel_rate", 5, 0.5, ParentKind::ar_noise},
                    {"steam_flow", 50, 1.0, ParentKind::ar_noise},
                    {"feedwater_flow", 212, 1.2, ParentKind::step_pattern}};
    spec.distractors = 2;
    spec.target_noise_sigma = 0.25;
    spec.ar_coeff = 0.9;
    return spec;
}

/// Ten-variable VAR benchmark: v1, v2, v3 are the true parents of v0; the
/// rest are pure AR dynamics plus one reverse edge (v0 drives v8) and one
/// edge between distractors, which a conditional screen must reject.
inline std::pair<SeriesFrame, std::vector<VarEdge>> preset_var10(std::size_t n_samples,
                                                                 std::uint64_t seed) {
    std::vector<VarEdge> edges;
    for (std::size_t i = 0; i < 10; ++i) edges.push_back({i, i, 1, 0.5});
    edges.push_back({1, 0, 1, 0.40});
    edges.push_back({2, 0, 2, 0.40});
    edges.push_back({3, 0, 3, 0.35});
    edges.push_back({0, 8, 2, 0.30});
    edges.push_back({5, 6, 1, 0.30});
    return generate_var_system(10, edges, n_samples, seed);
}

inline nlohmann::json ground_truth_to_json(const GroundTruth& t) {
    nlohmann::json parents = nlohmann::json::array();
    for (const auto& p : t.parents)
        parents.push_back({{"name", p.name},
                           {"delay", p.delay},
                           {"gain", p.gain},
                           {"kind", parent_kind_name(p.kind)}});
    return {{"target", t.target}, {"parents", parents}, {"distractors", t.distractor_names}};
}

}  // namespace levelcast::synth
