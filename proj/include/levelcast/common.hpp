#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace levelcast {

enum class ErrorCode {
    // csv / frame validation
    MalformedHeader,
    MalformedRow,
    DuplicateTimestamp,
    NonMonotonicTimestamp,
    IrregularTimestamp,
    SchemaMismatch,
    UnknownVariable,
    GapPresent,
    // preprocessing
    GapTooLong,
    WindowTooLarge,
    DegenerateVariance,
    EmptySplit,
    // causal screening
    TooFewPairs,
    SingularDesign,
    EmptyCandidates,
    // delay inference
    DegenerateWindow,
    SeriesTooShort,
    LagExceedsLength,
    // models
    ShapeMismatch,
    NonFiniteActivation,
    NonFiniteGradient,
    Diverged,
    InsufficientData,
    EmptyHistory,
    // evaluation
    LengthMismatch,
    EmptyInput,
    UnknownModel,
    // synthetic data
    InvalidSpec,
    UnstableSystem,
    // generic
    InvalidArgument,
    ConfigError,
    IoError,
    StageFailure,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::MalformedRow: return "MalformedRow";
        case ErrorCode::DuplicateTimestamp: return "DuplicateTimestamp";
        case ErrorCode::NonMonotonicTimestamp: return "NonMonotonicTimestamp";
        case ErrorCode::IrregularTimestamp: return "IrregularTimestamp";
        case ErrorCode::SchemaMismatch: return "SchemaMismatch";
        case ErrorCode::UnknownVariable: return "UnknownVariable";
        case ErrorCode::GapPresent: return "GapPresent";
        case ErrorCode::GapTooLong: return "GapTooLong";
        case ErrorCode::WindowTooLarge: return "WindowTooLarge";
        case ErrorCode::DegenerateVariance: return "DegenerateVariance";
        case ErrorCode::EmptySplit: return "EmptySplit";
        case ErrorCode::TooFewPairs: return "TooFewPairs";
        case ErrorCode::SingularDesign: return "SingularDesign";
        case ErrorCode::EmptyCandidates: return "EmptyCandidates";
        case ErrorCode::DegenerateWindow: return "DegenerateWindow";
        case ErrorCode::SeriesTooShort: return "SeriesTooShort";
        case ErrorCode::LagExceedsLength: return "LagExceedsLength";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::NonFiniteActivation: return "NonFiniteActivation";
        case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
        case ErrorCode::Diverged: return "Diverged";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::EmptyHistory: return "EmptyHistory";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyInput: return "EmptyInput";
        case ErrorCode::UnknownModel: return "UnknownModel";
        case ErrorCode::InvalidSpec: return "InvalidSpec";
        case ErrorCode::UnstableSystem: return "UnstableSystem";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::ConfigError: return "ConfigError";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::StageFailure: return "StageFailure";
    }
    return "Unknown";
}

/// Library-wide exception type. `code()` identifies the failure precisely so
/// callers (and tests) can react without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool ok, ErrorCode code, const std::string& message) {
    if (!ok) fail(code, message);
}

// ---------------------------------------------------------------------------
// Deterministic random numbers.
//
// std::<distribution> output is implementation-defined, so everything that
// must reproduce bit-identically across toolchains goes through this engine.
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; one spare value is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // keep log() finite
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift; bias is < 2^-64, irrelevant here
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// FNV-1a over arbitrary bytes; also used to derive stable per-item seeds.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index = 0) {
    std::uint64_t h = fnv1a(tag);
    h ^= base + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= index * 0xd6e8feb86659fd93ULL;
    // one splitmix round so nearby bases do not give nearby streams
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

// ---------------------------------------------------------------------------
// Small numeric helpers
// ---------------------------------------------------------------------------

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Population variance (divides by n).
inline double population_variance(const std::vector<double>& v, double mu) {
    double s = 0.0;
    for (double x : v) {
        const double d = x - mu;
        s += d * d;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline bool is_finite(double x) { return std::isfinite(x); }

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

/// Standard normal CDF.
inline double normal_cdf(double z) {
    return 0.5 * std::erfc(-z / 1.4142135623730950488016887242097);
}

// ---------------------------------------------------------------------------
// Deterministic parallelism.
//
// Work items are assigned to threads in fixed contiguous blocks and every
// reduction the library performs happens afterwards in index order, so the
// numeric result never depends on the schedule or the thread count.
// ---------------------------------------------------------------------------

inline int worker_count() {
    if (const char* env = std::getenv("LEVELCAST_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw > 8 ? 8 : hw);
}

template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
    const int workers = worker_count();
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t block = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        const std::size_t lo = static_cast<std::size_t>(w) * block;
        if (lo >= n) break;
        const std::size_t hi = lo + block < n ? lo + block : n;
        threads.emplace_back([lo, hi, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

}  // namespace levelcast
