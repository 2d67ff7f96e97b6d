#pragma once

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "levelcast/common.hpp"

namespace levelcast {

/// Timestamp-indexed multivariate series. Columns are stored in a fixed,
/// caller-visible order; missing observations are quiet NaN until
/// interpolate_missing() fills them.
struct SeriesFrame {
    std::vector<std::int64_t> timestamps;
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
    std::int64_t sample_period_s = 1;

    std::size_t n_rows() const { return timestamps.size(); }
    std::size_t n_vars() const { return names.size(); }

    bool has(const std::string& name) const {
        return std::find(names.begin(), names.end(), name) != names.end();
    }

    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        require(it != names.end(), ErrorCode::UnknownVariable, "no variable named '" + name + "'");
        return static_cast<std::size_t>(it - names.begin());
    }

    const std::vector<double>& column(const std::string& name) const {
        return columns[index_of(name)];
    }

    std::vector<double>& column(const std::string& name) {
        return columns[index_of(name)];
    }

    void add_column(const std::string& name, std::vector<double> values) {
        require(!has(name), ErrorCode::InvalidArgument, "column '" + name + "' already exists");
        require(values.size() == n_rows() || timestamps.empty(), ErrorCode::LengthMismatch,
                "column length does not match frame");
        names.push_back(name);
        columns.push_back(std::move(values));
    }

    bool has_gaps() const {
        for (const auto& col : columns)
            for (double v : col)
                if (std::isnan(v)) return true;
        return false;
    }

    void require_gap_free(const char* op) const {
        require(!has_gaps(), ErrorCode::GapPresent,
                std::string(op) + " requires a gap-free frame; run interpolate_missing first");
    }
};

/// Per-variable mean/scale fitted on the training range; scale is the
/// population standard deviation.
struct StandardizationParams {
    std::vector<std::string> names;
    std::vector<double> means;
    std::vector<double> scales;

    std::size_t index_of(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        require(it != names.end(), ErrorCode::UnknownVariable,
                "no standardization entry for '" + name + "'");
        return static_cast<std::size_t>(it - names.begin());
    }

    double mean_of(const std::string& name) const { return means[index_of(name)]; }
    double scale_of(const std::string& name) const { return scales[index_of(name)]; }
};

struct SplitSpec {
    double train_fraction = 0.7;
    double validation_fraction = 0.15;
    double test_fraction = 0.15;

    void validate() const {
        require(train_fraction > 0 && validation_fraction > 0 && test_fraction > 0,
                ErrorCode::InvalidArgument, "split fractions must be positive");
        const double sum = train_fraction + validation_fraction + test_fraction;
        require(std::fabs(sum - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
                "split fractions must sum to 1");
    }
};

struct SplitSizes {
    std::size_t train = 0, validation = 0, test = 0;
};

// ---------------------------------------------------------------------------
// CSV I/O
//
// Format: header row, first column `timestamp` (integer seconds), remaining
// columns decimal text. An empty cell is a gap. Output prints 17 significant
// digits so every double round-trips bit-exactly.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline bool parse_int64(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (errno != 0 || end != s.c_str() + s.size()) return false;
    out = static_cast<std::int64_t>(v);
    return true;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    errno = 0;
    out = std::strtod(s.c_str(), &end);
    return errno == 0 && end == s.c_str() + s.size();
}

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

/// Load a CSV series. `schema`, when nonempty, is the exact list of variable
/// names expected after the timestamp column. Rows missing from the uniform
/// timestamp grid are inserted as all-gap rows; the grid step is inferred as
/// the smallest observed timestamp difference unless `sample_period_s` > 0.
inline SeriesFrame load_csv(const std::string& path,
                            const std::vector<std::string>& schema = {},
                            std::int64_t sample_period_s = 0) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");

    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::MalformedHeader,
            "empty file '" + path + "'");
    auto header = detail::split_csv_line(line);
    require(!header.empty() && header[0] == "timestamp", ErrorCode::MalformedHeader,
            "first column must be named 'timestamp'");
    std::vector<std::string> names(header.begin() + 1, header.end());
    require(!names.empty(), ErrorCode::MalformedHeader, "no variable columns");
    if (!schema.empty())
        require(names == schema, ErrorCode::SchemaMismatch, "column names do not match expected schema");

    std::vector<std::int64_t> ts;
    std::vector<std::vector<double>> cols(names.size());
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        require(cells.size() == names.size() + 1, ErrorCode::MalformedRow,
                "line " + std::to_string(line_no) + ": expected " +
                    std::to_string(names.size() + 1) + " cells, got " + std::to_string(cells.size()));
        std::int64_t t;
        require(detail::parse_int64(cells[0], t), ErrorCode::MalformedRow,
                "line " + std::to_string(line_no) + ": bad timestamp '" + cells[0] + "'");
        if (!ts.empty()) {
            require(t != ts.back(), ErrorCode::DuplicateTimestamp,
                    "line " + std::to_string(line_no) + ": timestamp " + std::to_string(t) + " repeated");
            require(t > ts.back(), ErrorCode::NonMonotonicTimestamp,
                    "line " + std::to_string(line_no) + ": timestamp " + std::to_string(t) +
                        " not increasing");
        }
        ts.push_back(t);
        for (std::size_t c = 0; c < names.size(); ++c) {
            const std::string& cell = cells[c + 1];
            if (cell.empty()) {
                cols[c].push_back(kNan);
            } else {
                double v;
                require(detail::parse_double(cell, v), ErrorCode::MalformedRow,
                        "line " + std::to_string(line_no) + ": non-numeric cell '" + cell + "'");
                cols[c].push_back(v);
            }
        }
    }
    require(!ts.empty(), ErrorCode::MalformedRow, "no data rows in '" + path + "'");

    // establish the uniform grid
    std::int64_t period = sample_period_s;
    if (period <= 0) {
        period = 1;
        if (ts.size() >= 2) {
            std::int64_t best = ts[1] - ts[0];
            for (std::size_t i = 2; i < ts.size(); ++i) best = std::min(best, ts[i] - ts[i - 1]);
            period = best;
        }
    }
    SeriesFrame frame;
    frame.names = std::move(names);
    frame.sample_period_s = period;
    const std::int64_t t0 = ts.front();
    const std::size_t grid_n = static_cast<std::size_t>((ts.back() - t0) / period) + 1;
    frame.timestamps.reserve(grid_n);
    frame.columns.assign(frame.names.size(), {});
    for (auto& c : frame.columns) c.reserve(grid_n);

    std::size_t src = 0;
    for (std::size_t g = 0; g < grid_n; ++g) {
        const std::int64_t t = t0 + static_cast<std::int64_t>(g) * period;
        frame.timestamps.push_back(t);
        if (src < ts.size() && ts[src] == t) {
            for (std::size_t c = 0; c < frame.names.size(); ++c)
                frame.columns[c].push_back(cols[c][src]);
            ++src;
        } else {
            require(src >= ts.size() || ts[src] > t, ErrorCode::IrregularTimestamp,
                    "timestamp " + std::to_string(ts[src]) + " does not fall on the " +
                        std::to_string(period) + "s grid");
            for (auto& c : frame.columns) c.push_back(kNan);
        }
    }
    require(src == ts.size(), ErrorCode::IrregularTimestamp,
            "timestamps do not fall on a uniform grid");
    return frame;
}

inline void save_csv(const SeriesFrame& frame, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot write '" + path + "'");
    out << "timestamp";
    for (const auto& n : frame.names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < frame.n_rows(); ++i) {
        out << frame.timestamps[i];
        for (const auto& col : frame.columns) {
            out << ',';
            if (!std::isnan(col[i])) out << detail::format_double(col[i]);
        }
        out << '\n';
    }
    require(out.good(), ErrorCode::IoError, "write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Preprocessing. All operations are pure: the input frame is copied, never
// mutated, and the result is independent of any parallel schedule.
// ---------------------------------------------------------------------------

/// Fill gaps: interior runs of length <= max_gap by linear interpolation,
/// leading/trailing runs by the nearest observed value. Any longer run is an
/// error — the series needs operator review, not silent patching.
inline SeriesFrame interpolate_missing(const SeriesFrame& frame, std::size_t max_gap) {
    SeriesFrame out = frame;
    for (std::size_t c = 0; c < out.columns.size(); ++c) {
        auto& col = out.columns[c];
        const std::size_t n = col.size();
        std::size_t i = 0;
        while (i < n) {
            if (!std::isnan(col[i])) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < n && std::isnan(col[j])) ++j;
            const std::size_t run = j - i;
            require(run <= max_gap, ErrorCode::GapTooLong,
                    "variable '" + out.names[c] + "': gap of " + std::to_string(run) +
                        " samples exceeds max_gap=" + std::to_string(max_gap));
            const bool has_left = i > 0;
            const bool has_right = j < n;
            require(has_left || has_right, ErrorCode::GapTooLong,
                    "variable '" + out.names[c] + "' has no observed values");
            if (has_left && has_right) {
                const double a = col[i - 1], b = col[j];
                const double denom = static_cast<double>(run + 1);
                for (std::size_t k = 0; k < run; ++k)
                    col[i + k] = a + (b - a) * (static_cast<double>(k + 1) / denom);
            } else if (has_right) {
                for (std::size_t k = i; k < j; ++k) col[k] = col[j];
            } else {
                for (std::size_t k = i; k < j; ++k) col[k] = col[i - 1];
            }
            i = j;
        }
    }
    return out;
}

namespace detail {

inline double median_inplace(std::vector<double>& v) {
    const std::size_t n = v.size();
    auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    const double hi = *mid;
    const double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Hampel decision for a single index against the original data: deviation
/// from the window median beyond n_sigmas * 1.4826 * MAD. Windows are clamped
/// to the series bounds near the edges. Exposed so tests can compare the
/// filter against an independent per-index check.
inline bool hampel_flags_index(const std::vector<double>& x, std::size_t i,
                               std::size_t window, double n_sigmas, double* median_out = nullptr) {
    const std::size_t h = window / 2;
    const std::size_t lo = i >= h ? i - h : 0;
    const std::size_t hi = std::min(x.size() - 1, i + h);
    std::vector<double> w(x.begin() + static_cast<std::ptrdiff_t>(lo),
                          x.begin() + static_cast<std::ptrdiff_t>(hi) + 1);
    const double med = detail::median_inplace(w);
    for (auto& v : w) v = std::fabs(v - med);
    const double mad = detail::median_inplace(w);
    if (median_out) *median_out = med;
    return std::fabs(x[i] - med) > n_sigmas * 1.4826 * mad;
}

/// Replace outliers by their rolling-window median (Hampel rule). Decisions
/// are made against the input values, not sequentially against already
/// replaced ones.
inline SeriesFrame remove_outliers(const SeriesFrame& frame, std::size_t window, double n_sigmas) {
    require(window >= 3 && window % 2 == 1, ErrorCode::InvalidArgument,
            "window must be odd and >= 3");
    require(n_sigmas > 0, ErrorCode::InvalidArgument, "n_sigmas must be positive");
    require(window < frame.n_rows(), ErrorCode::WindowTooLarge,
            "window " + std::to_string(window) + " >= series length " + std::to_string(frame.n_rows()));
    frame.require_gap_free("remove_outliers");

    SeriesFrame out = frame;
    parallel_for(frame.columns.size(), [&](std::size_t c) {
        const auto& src = frame.columns[c];
        auto& dst = out.columns[c];
        for (std::size_t i = 0; i < src.size(); ++i) {
            double med;
            if (hampel_flags_index(src, i, window, n_sigmas, &med)) dst[i] = med;
        }
    });
    return out;
}

/// Centered moving average; the window is clamped to the series bounds near
/// the edges. window=1 is the identity.
inline SeriesFrame smooth(const SeriesFrame& frame, std::size_t window) {
    require(window >= 1 && window % 2 == 1, ErrorCode::InvalidArgument, "window must be odd and >= 1");
    frame.require_gap_free("smooth");
    if (window == 1) return frame;

    SeriesFrame out = frame;
    const std::size_t n = frame.n_rows();
    const std::size_t h = window / 2;
    parallel_for(frame.columns.size(), [&](std::size_t c) {
        const auto& src = frame.columns[c];
        auto& dst = out.columns[c];
        std::vector<double> prefix(n + 1, 0.0);
        for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + src[i];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t lo = i >= h ? i - h : 0;
            const std::size_t hi = std::min(n - 1, i + h);
            dst[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
        }
    });
    return out;
}

/// Z-score each variable using statistics from [fit_begin, fit_end) only —
/// the caller passes the training range so test data never leaks in.
inline std::pair<SeriesFrame, StandardizationParams> standardize(const SeriesFrame& frame,
                                                                 std::size_t fit_begin,
                                                                 std::size_t fit_end) {
    require(fit_begin < fit_end && fit_end <= frame.n_rows(), ErrorCode::InvalidArgument,
            "invalid fit range");
    frame.require_gap_free("standardize");

    SeriesFrame out = frame;
    StandardizationParams params;
    params.names = frame.names;
    params.means.resize(frame.n_vars());
    params.scales.resize(frame.n_vars());

    const double m = static_cast<double>(fit_end - fit_begin);
    for (std::size_t c = 0; c < frame.columns.size(); ++c) {
        const auto& col = frame.columns[c];
        double lo = col[fit_begin], hi = col[fit_begin], sum = 0.0;
        for (std::size_t i = fit_begin; i < fit_end; ++i) {
            sum += col[i];
            lo = std::min(lo, col[i]);
            hi = std::max(hi, col[i]);
        }
        require(hi > lo, ErrorCode::DegenerateVariance,
                "variable '" + frame.names[c] + "' is constant over the fit range");
        const double mu = sum / m;
        double ssq = 0.0;
        for (std::size_t i = fit_begin; i < fit_end; ++i) {
            const double d = col[i] - mu;
            ssq += d * d;
        }
        const double sigma = std::sqrt(ssq / m);
        require(sigma > 0, ErrorCode::DegenerateVariance,
                "variable '" + frame.names[c] + "' has zero variance over the fit range");
        params.means[c] = mu;
        params.scales[c] = sigma;
        auto& dst = out.columns[c];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (col[i] - mu) / sigma;
    }
    return {std::move(out), std::move(params)};
}

inline std::pair<SeriesFrame, StandardizationParams> standardize(const SeriesFrame& frame) {
    return standardize(frame, 0, frame.n_rows());
}

/// Transform with previously fitted params (no refit); the counterpart of
/// inverse_standardize.
inline SeriesFrame apply_standardization(const SeriesFrame& frame,
                                         const StandardizationParams& params) {
    frame.require_gap_free("apply_standardization");
    SeriesFrame out = frame;
    for (std::size_t c = 0; c < out.columns.size(); ++c) {
        const std::size_t p = params.index_of(out.names[c]);
        const double mu = params.means[p], sigma = params.scales[p];
        for (auto& v : out.columns[c]) v = (v - mu) / sigma;
    }
    return out;
}

inline SeriesFrame inverse_standardize(const SeriesFrame& frame, const StandardizationParams& params) {
    SeriesFrame out = frame;
    for (std::size_t c = 0; c < out.columns.size(); ++c) {
        const std::size_t p = params.index_of(out.names[c]);
        const double mu = params.means[p], sigma = params.scales[p];
        for (auto& v : out.columns[c]) v = v * sigma + mu;
    }
    return out;
}

/// Partition sizes for a chronological split: validation and test get
/// floor(n * fraction) rows each, train takes the remainder.
inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
    spec.validate();
    SplitSizes s;
    s.validation = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.validation_fraction));
    s.test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.test_fraction));
    require(s.validation + s.test <= n, ErrorCode::EmptySplit, "series shorter than requested splits");
    s.train = n - s.validation - s.test;
    return s;
}

struct SplitFrames {
    SeriesFrame train, validation, test;
};

/// Contiguous chronological train/validation/test partition; concatenating
/// the three reproduces the input exactly. `min_length` is the longest model
/// window the downstream stage needs from each partition.
inline SplitFrames split(const SeriesFrame& frame, const SplitSpec& spec, std::size_t min_length = 1) {
    const SplitSizes sizes = split_sizes(frame.n_rows(), spec);
    require(sizes.train >= min_length && sizes.validation >= min_length && sizes.test >= min_length,
            ErrorCode::EmptySplit,
            "split produces a partition shorter than " + std::to_string(min_length) + " samples");

    auto take = [&](std::size_t begin, std::size_t count) {
        SeriesFrame part;
        part.sample_period_s = frame.sample_period_s;
        part.names = frame.names;
        part.timestamps.assign(frame.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                               frame.timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
        part.columns.reserve(frame.columns.size());
        for (const auto& col : frame.columns)
            part.columns.emplace_back(col.begin() + static_cast<std::ptrdiff_t>(begin),
                                      col.begin() + static_cast<std::ptrdiff_t>(begin + count));
        return part;
    };

    SplitFrames out;
    out.train = take(0, sizes.train);
    out.validation = take(sizes.train, sizes.validation);
    out.test = take(sizes.train + sizes.validation, sizes.test);
    return out;
}

}  // namespace levelcast
