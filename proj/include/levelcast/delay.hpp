#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "levelcast/common.hpp"
#include "levelcast/series.hpp"

namespace levelcast::delay {

/// Normalized cross-covariance (Pearson correlation) between x shifted back
/// by `lag` and y: corr(x[0..n-1-lag], y[lag..n-1]). Both windows are
/// demeaned over the overlap and normalized by their population sigma.
inline double cross_cov_at_lag(const std::vector<double>& x, const std::vector<double>& y,
                               std::size_t lag) {
    require(x.size() == y.size(), ErrorCode::LengthMismatch, "series differ in length");
    require(x.size() >= 3 && lag < x.size() - 2, ErrorCode::InvalidArgument,
            "lag must satisfy lag < length - 2");
    const std::size_t m = x.size() - lag;

    double sx = 0.0, sy = 0.0;
    double x_lo = x[0], x_hi = x[0], y_lo = y[lag], y_hi = y[lag];
    for (std::size_t i = 0; i < m; ++i) {
        sx += x[i];
        sy += y[i + lag];
        x_lo = std::min(x_lo, x[i]);
        x_hi = std::max(x_hi, x[i]);
        y_lo = std::min(y_lo, y[i + lag]);
        y_hi = std::max(y_hi, y[i + lag]);
    }
    require(x_hi > x_lo, ErrorCode::DegenerateWindow, "x window is constant");
    require(y_hi > y_lo, ErrorCode::DegenerateWindow, "y window is constant");

    const double mx = sx / static_cast<double>(m);
    const double my = sy / static_cast<double>(m);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i + lag] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    require(sxx > 0.0 && syy > 0.0, ErrorCode::DegenerateWindow, "zero variance in window");
    return sxy / std::sqrt(sxx * syy);
}

struct DelayEntry {
    std::string variable;
    std::size_t optimal_lag = 0;
    double peak_value = 0.0;
    int sign = 1;                 ///< sign of the profile at the optimal lag
    std::vector<double> profile;  ///< correlation per lag, 0..max_lag
    std::string error;            ///< nonempty when inference failed for this variable
};

struct DelayTable {
    std::string target;
    std::size_t max_lag = 0;
    std::vector<DelayEntry> entries;

    const DelayEntry& entry(const std::string& variable) const {
        for (const auto& e : entries)
            if (e.variable == variable) return e;
        fail(ErrorCode::UnknownVariable, "no delay entry for '" + variable + "'");
    }
};

/// Scan lags 0..max_lag and return the one maximizing the correlation
/// profile (ties break toward the smallest lag). Lags whose window is
/// degenerate contribute profile value 0. With `allow_negative` the scan
/// maximizes |correlation| and records the sign.
inline DelayEntry infer_delay(const std::vector<double>& x, const std::vector<double>& y,
                              std::size_t max_lag, bool allow_negative = false) {
    require(x.size() == y.size(), ErrorCode::LengthMismatch, "series differ in length");
    require(max_lag >= 1, ErrorCode::InvalidArgument, "max_lag must be >= 1");
    require(x.size() > 2 * max_lag, ErrorCode::SeriesTooShort,
            "series length " + std::to_string(x.size()) + " must exceed 2*max_lag");

    const std::size_t n = x.size();
    // prefix sums over x (windows are prefixes) and suffix sums over y
    std::vector<double> px(n + 1, 0.0), pxx(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        px[i + 1] = px[i] + x[i];
        pxx[i + 1] = pxx[i] + x[i] * x[i];
    }
    std::vector<double> sy(n + 1, 0.0), syy(n + 1, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        sy[i] = sy[i + 1] + y[i];
        syy[i] = syy[i + 1] + y[i] * y[i];
    }
    // running extrema for exact constant-window detection
    std::vector<double> x_max(n), x_min(n), y_maxs(n), y_mins(n);
    x_max[0] = x_min[0] = x[0];
    for (std::size_t i = 1; i < n; ++i) {
        x_max[i] = std::max(x_max[i - 1], x[i]);
        x_min[i] = std::min(x_min[i - 1], x[i]);
    }
    y_maxs[n - 1] = y_mins[n - 1] = y[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        y_maxs[i] = std::max(y_maxs[i + 1], y[i]);
        y_mins[i] = std::min(y_mins[i + 1], y[i]);
    }

    DelayEntry entry;
    entry.profile.assign(max_lag + 1, 0.0);
    for (std::size_t lag = 0; lag <= max_lag; ++lag) {
        const std::size_t m = n - lag;
        if (x_max[m - 1] <= x_min[m - 1] || y_maxs[lag] <= y_mins[lag]) continue;  // degenerate -> 0
        const double fm = static_cast<double>(m);
        const double mx = px[m] / fm;
        const double my = sy[lag] / fm;
        const double vxx = pxx[m] - fm * mx * mx;
        const double vyy = syy[lag] - fm * my * my;
        if (vxx <= 0.0 || vyy <= 0.0) continue;
        double dot = 0.0;
        const double* xp = x.data();
        const double* yp = y.data() + lag;
        for (std::size_t i = 0; i < m; ++i) dot += xp[i] * yp[i];
        entry.profile[lag] = (dot - fm * mx * my) / std::sqrt(vxx * vyy);
    }

    std::size_t best = 0;
    double best_score = allow_negative ? std::fabs(entry.profile[0]) : entry.profile[0];
    for (std::size_t lag = 1; lag <= max_lag; ++lag) {
        const double score = allow_negative ? std::fabs(entry.profile[lag]) : entry.profile[lag];
        if (score > best_score) {
            best_score = score;
            best = lag;
        }
    }
    entry.optimal_lag = best;
    entry.peak_value = entry.profile[best];
    entry.sign = entry.profile[best] < 0.0 ? -1 : 1;
    return entry;
}

/// Per-variable delay inference against the target. Failures (constant
/// variables and the like) are recorded on the entry; the batch continues.
inline DelayTable build_delay_table(const SeriesFrame& frame, const std::string& target,
                                    const std::vector<std::string>& variables, std::size_t max_lag,
                                    bool allow_negative = false) {
    frame.require_gap_free("build_delay_table");
    const auto& y = frame.column(target);
    DelayTable table;
    table.target = target;
    table.max_lag = max_lag;
    table.entries.resize(variables.size());
    parallel_for(variables.size(), [&](std::size_t i) {
        DelayEntry e;
        e.variable = variables[i];
        try {
            e = infer_delay(frame.column(variables[i]), y, max_lag, allow_negative);
            e.variable = variables[i];
        } catch (const Error& err) {
            e.error = err.what();
        }
        table.entries[i] = std::move(e);
    });
    return table;
}

struct AugmentSpec {
    bool keep_original = true;
    /// Explicit per-variable lag lists; variables absent here fall back to
    /// the delay table's optimal lag.
    std::map<std::string, std::vector<std::size_t>> lags;
};

/// Add `<name>__lag<k>` columns whose value at time t is the original value
/// at t-k, then drop the first max(lags) rows so no column carries undefined
/// values. Column order: originals (input order), then lagged columns in
/// (variable, ascending lag) order.
inline SeriesFrame augment_with_lags(const SeriesFrame& frame, const DelayTable& table,
                                     const AugmentSpec& spec = {}) {
    const std::size_t n = frame.n_rows();

    // resolve the lag list per augmented variable, in frame column order
    std::vector<std::pair<std::string, std::vector<std::size_t>>> plan;
    for (const auto& name : frame.names) {
        std::vector<std::size_t> lags;
        if (auto it = spec.lags.find(name); it != spec.lags.end()) {
            lags = it->second;
        } else {
            for (const auto& e : table.entries)
                if (e.variable == name && e.error.empty()) lags.push_back(e.optimal_lag);
        }
        if (!lags.empty()) {
            std::sort(lags.begin(), lags.end());
            lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
            plan.emplace_back(name, std::move(lags));
        }
    }

    std::size_t max_applied = 0;
    for (const auto& [name, lags] : plan)
        for (std::size_t k : lags) {
            require(k < n, ErrorCode::LagExceedsLength,
                    "lag " + std::to_string(k) + " on '" + name + "' exceeds frame length " +
                        std::to_string(n));
            max_applied = std::max(max_applied, k);
        }

    const std::size_t out_n = n - max_applied;
    SeriesFrame out;
    out.sample_period_s = frame.sample_period_s;
    out.timestamps.assign(frame.timestamps.begin() + static_cast<std::ptrdiff_t>(max_applied),
                          frame.timestamps.end());
    if (spec.keep_original) {
        for (std::size_t c = 0; c < frame.names.size(); ++c) {
            out.names.push_back(frame.names[c]);
            out.columns.emplace_back(frame.columns[c].begin() + static_cast<std::ptrdiff_t>(max_applied),
                                     frame.columns[c].end());
        }
    }
    for (const auto& [name, lags] : plan) {
        const auto& src = frame.column(name);
        for (std::size_t k : lags) {
            const std::string col_name = name + "__lag" + std::to_string(k);
            require(std::find(out.names.begin(), out.names.end(), col_name) == out.names.end(),
                    ErrorCode::InvalidArgument, "augmented column name collides: " + col_name);
            std::vector<double> col(out_n);
            for (std::size_t t = 0; t < out_n; ++t) col[t] = src[t + max_applied - k];
            out.names.push_back(col_name);
            out.columns.push_back(std::move(col));
        }
    }
    return out;
}

}  // namespace levelcast::delay
