#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "levelcast/common.hpp"
#include "levelcast/model.hpp"

namespace levelcast::eval {

struct Metrics {
    double mae = 0.0;
    double mse = 0.0;
    double mape = 0.0;  ///< percent
};

/// MAE / MSE / MAPE. The MAPE denominator is floored at
/// max(1e-3 * sigma(targets), 1e-12) so near-zero targets cannot blow it up;
/// pass `mape_floor` >= 0 to override.
inline Metrics compute_metrics(const std::vector<double>& targets,
                               const std::vector<double>& predictions, double mape_floor = -1.0) {
    require(!targets.empty(), ErrorCode::EmptyInput, "no samples");
    require(targets.size() == predictions.size(), ErrorCode::LengthMismatch,
            "targets and predictions differ in length");

    if (mape_floor < 0.0) {
        const double mu = mean_of(targets);
        mape_floor = std::max(1e-3 * std::sqrt(population_variance(targets, mu)), 1e-12);
    }

    Metrics m;
    double pct = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double e = predictions[i] - targets[i];
        m.mae += std::fabs(e);
        m.mse += e * e;
        pct += std::fabs(e) / std::max(std::fabs(targets[i]), mape_floor);
    }
    const double n = static_cast<double>(targets.size());
    m.mae /= n;
    m.mse /= n;
    m.mape = 100.0 * pct / n;
    return m;
}

struct HistogramBin {
    double left = 0.0, right = 0.0;
    std::size_t count = 0;
};

struct ErrorDistribution {
    double mean = 0.0;
    double sigma = 0.0;  ///< population
    double band_low = 0.0, band_high = 0.0;  ///< mean -/+ 2 sigma
    std::vector<HistogramBin> histogram;  ///< 50 bins over mean +/- 4 sigma
};

/// Signed error (prediction - target) statistics plus a fixed 50-bin
/// histogram for plotting. Out-of-range errors land in the edge bins.
inline ErrorDistribution error_distribution(const std::vector<double>& targets,
                                            const std::vector<double>& predictions) {
    require(!targets.empty(), ErrorCode::EmptyInput, "no samples");
    require(targets.size() == predictions.size(), ErrorCode::LengthMismatch,
            "targets and predictions differ in length");

    std::vector<double> errors(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) errors[i] = predictions[i] - targets[i];

    ErrorDistribution d;
    d.mean = mean_of(errors);
    d.sigma = std::sqrt(population_variance(errors, d.mean));
    d.band_low = d.mean - 2.0 * d.sigma;
    d.band_high = d.mean + 2.0 * d.sigma;

    constexpr std::size_t kBins = 50;
    const double half_span = d.sigma > 0.0 ? 4.0 * d.sigma : 1.0;
    const double lo = d.mean - half_span;
    const double width = 2.0 * half_span / static_cast<double>(kBins);
    d.histogram.resize(kBins);
    for (std::size_t b = 0; b < kBins; ++b) {
        d.histogram[b].left = lo + width * static_cast<double>(b);
        d.histogram[b].right = lo + width * static_cast<double>(b + 1);
    }
    for (double e : errors) {
        long b = static_cast<long>(std::floor((e - lo) / width));
        b = std::clamp(b, 0L, static_cast<long>(kBins) - 1L);
        d.histogram[static_cast<std::size_t>(b)].count += 1;
    }
    return d;
}

struct EvalRow {
    std::string model;
    std::size_t horizon = 0;
    double mae = 0.0, mse = 0.0, mape = 0.0;
    double error_mean = 0.0, error_sigma = 0.0;
    std::size_t n = 0;
};

struct EvalFailure {
    std::string model;
    std::size_t horizon = 0;
    std::string error;
};

struct EvalReport {
    std::vector<EvalRow> rows;       ///< (model, horizon) grid, assembly order fixed
    std::vector<EvalFailure> failures;

    const EvalRow& row(const std::string& model, std::size_t horizon) const {
        for (const auto& r : rows)
            if (r.model == model && r.horizon == horizon) return r;
        fail(ErrorCode::UnknownModel,
             "no row for model '" + model + "' at horizon " + std::to_string(horizon));
    }

    bool has_model(const std::string& model) const {
        return std::any_of(rows.begin(), rows.end(),
                           [&](const EvalRow& r) { return r.model == model; });
    }
};

/// Extract one horizon's column of a forecast result. `res.horizons` names
/// the horizon of each stored column, so sparse horizon sets work too.
inline void horizon_column(const model::ForecastResult& res, std::size_t horizon,
                           std::vector<double>& targets, std::vector<double>& predictions) {
    const auto it = std::find(res.horizons.begin(), res.horizons.end(), horizon);
    require(it != res.horizons.end(), ErrorCode::InvalidArgument,
            "horizon " + std::to_string(horizon) + " not predicted by this model");
    const std::size_t col = static_cast<std::size_t>(it - res.horizons.begin());
    targets.resize(res.n_samples());
    predictions.resize(res.n_samples());
    for (std::size_t i = 0; i < res.n_samples(); ++i) {
        targets[i] = res.targets[i][col];
        predictions[i] = res.predictions[i][col];
    }
}

/// Metrics per (model, horizon). Per-cell failures (e.g. a horizon beyond a
/// model's head) are recorded and the grid continues. Callers are expected to
/// include the persistence baseline among the results; run_pipeline always
/// does.
inline EvalReport evaluate_horizons(
    const std::vector<std::pair<std::string, const model::ForecastResult*>>& results,
    const std::vector<std::size_t>& horizons) {
    require(!results.empty(), ErrorCode::EmptyInput, "no models to evaluate");
    require(!horizons.empty(), ErrorCode::EmptyInput, "no horizons requested");

    EvalReport report;
    std::vector<double> t, p;
    for (const auto& [name, res] : results) {
        for (std::size_t h : horizons) {
            try {
                horizon_column(*res, h, t, p);
                const Metrics m = compute_metrics(t, p);
                const ErrorDistribution d = error_distribution(t, p);
                require(m.mae <= std::sqrt(m.mse) * (1.0 + 1e-9) + 1e-300, ErrorCode::InvalidArgument,
                        "metric identity mae <= sqrt(mse) violated");
                report.rows.push_back(
                    {name, h, m.mae, m.mse, m.mape, d.mean, d.sigma, res->n_samples()});
            } catch (const Error& e) {
                report.failures.push_back({name, h, e.what()});
            }
        }
    }
    return report;
}

struct ComparisonRow {
    std::size_t horizon = 0;
    double value_a = 0.0, value_b = 0.0;
    double difference = 0.0;   ///< a - b (negative means a beats b on error metrics)
    double improvement = 0.0;  ///< (b - a) / b, share of b's error removed by a
};

/// Per-horizon comparison of one metric between two models in a report.
inline std::vector<ComparisonRow> compare(const EvalReport& report, const std::string& model_a,
                                          const std::string& model_b, const std::string& metric) {
    require(report.has_model(model_a), ErrorCode::UnknownModel, "model '" + model_a + "' not in report");
    require(report.has_model(model_b), ErrorCode::UnknownModel, "model '" + model_b + "' not in report");

    auto pick = [&](const EvalRow& r) -> double {
        if (metric == "mae") return r.mae;
        if (metric == "mse") return r.mse;
        if (metric == "mape") return r.mape;
        fail(ErrorCode::InvalidArgument, "unknown metric '" + metric + "'");
    };

    std::vector<std::size_t> horizons;
    for (const auto& r : report.rows)
        if (r.model == model_a) horizons.push_back(r.horizon);

    std::vector<ComparisonRow> out;
    for (std::size_t h : horizons) {
        const EvalRow& ra = report.row(model_a, h);
        const EvalRow& rb = report.row(model_b, h);
        ComparisonRow row;
        row.horizon = h;
        row.value_a = pick(ra);
        row.value_b = pick(rb);
        row.difference = row.value_a - row.value_b;
        row.improvement = row.value_b != 0.0 ? (row.value_b - row.value_a) / row.value_b : 0.0;
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string eval_report_to_csv(const EvalReport& report) {
    std::string out = "model,horizon,mae,mse,mape,err_mean,err_sigma,n\n";
    char buf[256];
    for (const auto& r : report.rows) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n",
                      r.model.c_str(), r.horizon, r.mae, r.mse, r.mape, r.error_mean, r.error_sigma,
                      r.n);
        out += buf;
    }
    return out;
}

inline nlohmann::json eval_report_to_json(const EvalReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows)
        rows.push_back({{"model", r.model},
                        {"horizon", r.horizon},
                        {"mae", r.mae},
                        {"mse", r.mse},
                        {"mape", r.mape},
                        {"err_mean", r.error_mean},
                        {"err_sigma", r.error_sigma},
                        {"n", r.n}});
    nlohmann::json failures = nlohmann::json::array();
    for (const auto& f : report.failures)
        failures.push_back({{"model", f.model}, {"horizon", f.horizon}, {"error", f.error}});
    return {{"rows", rows}, {"failures", failures}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport report;
    for (const auto& r : j.at("rows"))
        report.rows.push_back({r.at("model").get<std::string>(), r.at("horizon").get<std::size_t>(),
                               r.at("mae").get<double>(), r.at("mse").get<double>(),
                               r.at("mape").get<double>(), r.at("err_mean").get<double>(),
                               r.at("err_sigma").get<double>(), r.at("n").get<std::size_t>()});
    for (const auto& f : j.at("failures"))
        report.failures.push_back({f.at("model").get<std::string>(),
                                   f.at("horizon").get<std::size_t>(),
                                   f.at("error").get<std::string>()});
    return report;
}

inline std::string histogram_to_csv(const ErrorDistribution& d) {
    std::string out = "bin_left,bin_right,count\n";
    char buf[128];
    for (const auto& b : d.histogram) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu\n", b.left, b.right, b.count);
        out += buf;
    }
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot write '" + path + "'");
    out << content;
    require(out.good(), ErrorCode::IoError, "write failed for '" + path + "'");
}

}  // namespace levelcast::eval
