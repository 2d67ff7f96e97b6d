#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "levelcast/common.hpp"
#include "levelcast/series.hpp"

namespace levelcast::causal {

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank test
// ---------------------------------------------------------------------------

enum class Alternative {
    a_less,     ///< H1: values in `a` tend to be smaller than in `b`
    two_sided,  ///< H1: the paired distributions differ
};

enum class PValueMethod {
    automatic,  ///< exact when the effective n <= 20, normal approximation above
    exact,
    normal,
};

struct WilcoxonResult {
    double statistic = 0.0;  ///< W+: rank sum of positive differences a-b
    double p_value = 1.0;
    std::size_t n_effective = 0;  ///< pairs remaining after zero differences are dropped
    bool all_zero_differences = false;
};

namespace detail {

/// Average ranks of |d|, doubled so ties (x.5 ranks) stay integral.
inline std::vector<int> doubled_abs_ranks(const std::vector<double>& d) {
    const std::size_t n = d.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t i, std::size_t j) { return std::fabs(d[i]) < std::fabs(d[j]); });
    std::vector<int> ranks2(n, 0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && std::fabs(d[order[j + 1]]) == std::fabs(d[order[i]])) ++j;
        // ranks i+1 .. j+1 tie; average*2 = (i+1 + j+1)
        const int r2 = static_cast<int>(i + j + 2);
        for (std::size_t k = i; k <= j; ++k) ranks2[order[k]] = r2;
        i = j + 1;
    }
    return ranks2;
}

/// Distribution of the doubled positive-rank sum over all 2^n sign
/// assignments, by dynamic programming. Equivalent to full enumeration.
inline std::vector<std::uint64_t> rank_sum_counts(const std::vector<int>& ranks2) {
    int total = 0;
    for (int r : ranks2) total += r;
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(total) + 1, 0);
    counts[0] = 1;
    int reach = 0;
    for (int r : ranks2) {
        for (int s = reach; s >= 0; --s)
            if (counts[static_cast<std::size_t>(s)])
                counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
        reach += r;
    }
    return counts;
}

inline double exact_p(const std::vector<int>& ranks2, double w_plus_doubled, Alternative alt) {
    const auto counts = rank_sum_counts(ranks2);
    const double denom = std::ldexp(1.0, static_cast<int>(ranks2.size()));  // 2^n, exact
    // w_plus_doubled is integral (doubled average ranks are integers)
    const long long w = static_cast<long long>(std::llround(w_plus_doubled));
    std::uint64_t le = 0, ge = 0;
    for (long long s = 0; s < static_cast<long long>(counts.size()); ++s) {
        if (s <= w) le += counts[static_cast<std::size_t>(s)];
        if (s >= w) ge += counts[static_cast<std::size_t>(s)];
    }
    if (alt == Alternative::a_less) return static_cast<double>(le) / denom;
    const double tail = static_cast<double>(std::min(le, ge)) / denom;
    return std::min(1.0, 2.0 * tail);
}

inline double normal_p(const std::vector<int>& ranks2, double w_plus, Alternative alt) {
    const double n = static_cast<double>(ranks2.size());
    const double mu = n * (n + 1.0) / 4.0;
    double tie_term = 0.0;
    std::size_t i = 0;
    std::vector<int> sorted = ranks2;
    std::sort(sorted.begin(), sorted.end());
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        tie_term += (t * t * t - t);
        i = j + 1;
    }
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) return 1.0;
    const double sigma = std::sqrt(var);
    const double p_low = normal_cdf((w_plus - mu + 0.5) / sigma);
    if (alt == Alternative::a_less) return p_low;
    const double p_high = 1.0 - normal_cdf((w_plus - mu - 0.5) / sigma);
    return std::min(1.0, 2.0 * std::min(p_low, p_high));
}

}  // namespace detail

/// Paired signed-rank test on differences a - b. Zero differences are
/// dropped; if all of them vanish the predictors are indistinguishable and
/// the result is (statistic 0, p 1). Tied |d| receive average ranks. The
/// exact path enumerates the full sign-assignment distribution (n <= 20);
/// above that a normal approximation with tie and continuity correction is
/// used.
inline WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& a,
                                           const std::vector<double>& b,
                                           Alternative alternative,
                                           PValueMethod method = PValueMethod::automatic) {
    require(a.size() == b.size(), ErrorCode::LengthMismatch, "paired vectors differ in length");
    require(a.size() >= 5, ErrorCode::TooFewPairs,
            "need at least 5 pairs, got " + std::to_string(a.size()));

    std::vector<double> d;
    d.reserve(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        if (diff != 0.0) d.push_back(diff);
    }

    WilcoxonResult res;
    res.n_effective = d.size();
    if (d.empty()) {
        res.all_zero_differences = true;
        return res;  // statistic 0, p 1
    }

    const auto ranks2 = detail::doubled_abs_ranks(d);
    double w_plus2 = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        if (d[i] > 0.0) w_plus2 += ranks2[i];
    res.statistic = 0.5 * w_plus2;

    const bool use_exact = method == PValueMethod::exact ||
                           (method == PValueMethod::automatic && d.size() <= 20);
    res.p_value = use_exact ? detail::exact_p(ranks2, w_plus2, alternative)
                            : detail::normal_p(ranks2, res.statistic, alternative);
    return res;
}

// ---------------------------------------------------------------------------
// Granger screening
// ---------------------------------------------------------------------------

enum class PredictorKind { linear_ar, lstm, transformer };
enum class ConditioningPolicy { mutual, fixed };

struct CausalTestSpec {
    std::string target;
    std::string candidate;
    std::vector<std::string> conditioning;
    std::size_t history_len = 10;
    PredictorKind predictor = PredictorKind::linear_ar;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    double fit_fraction = 0.7;  ///< chronological fit/evaluate split inside the test

    void validate() const {
        require(!target.empty() && !candidate.empty(), ErrorCode::InvalidArgument,
                "target and candidate must be named");
        require(target != candidate, ErrorCode::InvalidArgument, "candidate equals target");
        for (const auto& z : conditioning) {
            require(z != candidate, ErrorCode::InvalidArgument,
                    "candidate '" + z + "' cannot appear in the conditioning set");
            require(z != target, ErrorCode::InvalidArgument,
                    "target '" + z + "' cannot appear in the conditioning set");
        }
        require(history_len >= 1, ErrorCode::InvalidArgument, "history_len must be >= 1");
        require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
        require(fit_fraction > 0.0 && fit_fraction < 1.0, ErrorCode::InvalidArgument,
                "fit_fraction must lie in (0,1)");
    }
};

struct CausalEntry {
    std::string candidate;
    double p_value = 1.0;
    double statistic = 0.0;
    bool retained = false;
    std::size_t n_pairs = 0;
    double mae_with = kNan;     ///< mean |error| of the predictor that sees the candidate
    double mae_without = kNan;  ///< mean |error| of the restricted predictor
    bool all_zero_differences = false;
    std::string error;  ///< nonempty when this candidate's test failed
};

struct CausalReport {
    std::string target;
    double alpha = 0.05;
    std::vector<CausalEntry> entries;  ///< ordered by ascending p-value, failures last
};

namespace detail {

struct LaggedDesign {
    Eigen::MatrixXd X;  ///< rows: usable timesteps; cols: [1, y lags, Z lags, x lags]
    Eigen::VectorXd y;
    Eigen::Index restricted_cols = 0;  ///< leading columns excluding the candidate lags
};

inline LaggedDesign build_design(const SeriesFrame& frame, const CausalTestSpec& spec) {
    const auto& y = frame.column(spec.target);
    const auto& x = frame.column(spec.candidate);
    std::vector<const std::vector<double>*> z;
    z.reserve(spec.conditioning.size());
    for (const auto& name : spec.conditioning) z.push_back(&frame.column(name));

    const std::size_t tau = spec.history_len;
    require(frame.n_rows() > tau, ErrorCode::TooFewPairs, "series shorter than history length");
    const std::size_t rows = frame.n_rows() - tau;
    const std::size_t d_r = 1 + tau * (1 + z.size());
    const std::size_t d_u = d_r + tau;

    LaggedDesign des;
    des.X.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d_u));
    des.y.resize(static_cast<Eigen::Index>(rows));
    des.restricted_cols = static_cast<Eigen::Index>(d_r);
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t t = r + tau;
        Eigen::Index c = 0;
        des.X(static_cast<Eigen::Index>(r), c++) = 1.0;
        for (std::size_t k = 1; k <= tau; ++k) des.X(static_cast<Eigen::Index>(r), c++) = y[t - k];
        for (const auto* zc : z)
            for (std::size_t k = 1; k <= tau; ++k) des.X(static_cast<Eigen::Index>(r), c++) = (*zc)[t - k];
        for (std::size_t k = 1; k <= tau; ++k) des.X(static_cast<Eigen::Index>(r), c++) = x[t - k];
        des.y(static_cast<Eigen::Index>(r)) = y[t];
    }
    return des;
}

/// Solve the normal equations G b = c by Cholesky; a rank-deficient Gram
/// matrix (collinear regressors) gets one retry with a ridge jitter of
/// 1e-8 scaled by the mean diagonal.
inline Eigen::VectorXd solve_normal_equations(Eigen::MatrixXd G, const Eigen::VectorXd& c) {
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() == Eigen::Success) {
        Eigen::VectorXd beta = llt.solve(c);
        if (beta.allFinite()) return beta;
    }
    const double jitter = 1e-8 * (G.trace() / static_cast<double>(G.rows()) + 1.0);
    G.diagonal().array() += jitter;
    llt.compute(G);
    require(llt.info() == Eigen::Success, ErrorCode::SingularDesign,
            "normal equations not solvable even with ridge jitter");
    Eigen::VectorXd beta = llt.solve(c);
    require(beta.allFinite(), ErrorCode::SingularDesign, "non-finite OLS solution");
    return beta;
}

struct PairedErrors {
    std::vector<double> with_candidate;
    std::vector<double> without_candidate;
};

inline PairedErrors linear_ar_errors(const SeriesFrame& frame, const CausalTestSpec& spec) {
    const LaggedDesign des = build_design(frame, spec);
    const Eigen::Index rows = des.X.rows();
    const Eigen::Index n_fit =
        static_cast<Eigen::Index>(std::floor(static_cast<double>(rows) * spec.fit_fraction));
    const Eigen::Index n_eval = rows - n_fit;
    require(n_fit >= des.X.cols() && n_eval >= 5, ErrorCode::TooFewPairs,
            "not enough rows for a fit/evaluate split");

    const auto Xfit = des.X.topRows(n_fit);
    const auto yfit = des.y.head(n_fit);
    const Eigen::MatrixXd G = Xfit.transpose() * Xfit;
    const Eigen::VectorXd c = Xfit.transpose() * yfit;

    const Eigen::Index d_r = des.restricted_cols;
    const Eigen::VectorXd beta_u = solve_normal_equations(G, c);
    const Eigen::VectorXd beta_r =
        solve_normal_equations(G.topLeftCorner(d_r, d_r), c.head(d_r));

    const auto Xeval = des.X.bottomRows(n_eval);
    const auto yeval = des.y.tail(n_eval);
    PairedErrors err;
    err.with_candidate.resize(static_cast<std::size_t>(n_eval));
    err.without_candidate.resize(static_cast<std::size_t>(n_eval));
    for (Eigen::Index i = 0; i < n_eval; ++i) {
        const double pred_u = Xeval.row(i).dot(beta_u);
        const double pred_r = Xeval.row(i).head(d_r).dot(beta_r);
        err.with_candidate[static_cast<std::size_t>(i)] = std::fabs(yeval(i) - pred_u);
        err.without_candidate[static_cast<std::size_t>(i)] = std::fabs(yeval(i) - pred_r);
    }
    return err;
}

// Implemented in granger_model.hpp, included at the end of this header.
inline PairedErrors model_errors(const SeriesFrame& frame, const CausalTestSpec& spec);

}  // namespace detail

/// One conditional Granger test: does the candidate's history reduce
/// out-of-sample one-step error on the target beyond the target's own history
/// and the conditioning set? Errors of the two predictors are compared with a
/// one-sided Wilcoxon signed-rank test.
inline CausalEntry granger_test(const SeriesFrame& frame, const CausalTestSpec& spec) {
    spec.validate();
    frame.require_gap_free("granger_test");

    detail::PairedErrors err = spec.predictor == PredictorKind::linear_ar
                                   ? detail::linear_ar_errors(frame, spec)
                                   : detail::model_errors(frame, spec);

    CausalEntry entry;
    entry.candidate = spec.candidate;
    entry.n_pairs = err.with_candidate.size();
    entry.mae_with = mean_of(err.with_candidate);
    entry.mae_without = mean_of(err.without_candidate);

    const WilcoxonResult w =
        wilcoxon_signed_rank(err.with_candidate, err.without_candidate, Alternative::a_less);
    entry.p_value = w.p_value;
    entry.statistic = w.statistic;
    entry.all_zero_differences = w.all_zero_differences;
    entry.retained = w.p_value < spec.alpha;
    return entry;
}

struct ScreenSpec {
    std::size_t history_len = 10;
    PredictorKind predictor = PredictorKind::linear_ar;
    double alpha = 0.05;
    std::uint64_t seed = 0;
    double fit_fraction = 0.7;
    ConditioningPolicy policy = ConditioningPolicy::mutual;
    std::vector<std::string> fixed_conditioning;  ///< used when policy == fixed
};

/// Screen every candidate against the target. Per-candidate failures are
/// recorded in the report instead of aborting the batch. Entries come back
/// sorted by ascending p-value (failures last).
inline CausalReport screen_all(const SeriesFrame& frame, const std::string& target,
                               const std::vector<std::string>& candidates, const ScreenSpec& spec) {
    require(!candidates.empty(), ErrorCode::EmptyCandidates, "no candidates to screen");
    CausalReport report;
    report.target = target;
    report.alpha = spec.alpha;
    report.entries.resize(candidates.size());

    parallel_for(candidates.size(), [&](std::size_t i) {
        const std::string& cand = candidates[i];
        CausalTestSpec test;
        test.target = target;
        test.candidate = cand;
        if (spec.policy == ConditioningPolicy::mutual) {
            for (const auto& other : candidates)
                if (other != cand && other != target) test.conditioning.push_back(other);
        } else {
            for (const auto& z : spec.fixed_conditioning)
                if (z != cand && z != target) test.conditioning.push_back(z);
        }
        test.history_len = spec.history_len;
        test.predictor = spec.predictor;
        test.alpha = spec.alpha;
        test.fit_fraction = spec.fit_fraction;
        test.seed = derive_seed(spec.seed, cand);
        try {
            report.entries[i] = granger_test(frame, test);
        } catch (const Error& e) {
            CausalEntry failed;
            failed.candidate = cand;
            failed.error = e.what();
            report.entries[i] = std::move(failed);
        }
    });

    std::stable_sort(report.entries.begin(), report.entries.end(),
                     [](const CausalEntry& a, const CausalEntry& b) {
                         if (a.error.empty() != b.error.empty()) return a.error.empty();
                         if (a.p_value != b.p_value) return a.p_value < b.p_value;
                         return a.candidate < b.candidate;
                     });
    return report;
}

}  // namespace levelcast::causal

// Model-backed predictors for granger_test (kept separate so the OLS path
// above stays readable; the include order matters).
#include "levelcast/granger_model.hpp"
