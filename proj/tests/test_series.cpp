#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "levelcast/series.hpp"

using namespace levelcast;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path.string();
}

SeriesFrame frame_of(std::vector<double> values, const std::string& name = "a") {
    SeriesFrame f;
    f.timestamps.resize(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) f.timestamps[i] = static_cast<std::int64_t>(i);
    f.names = {name};
    f.columns = {std::move(values)};
    return f;
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("load_csv parses a plain file", "[series]") {
    const auto path = write_temp("lc_basic.csv", "timestamp,a\n0,1.0\n1,2.0\n2,3.0\n");
    const SeriesFrame f = load_csv(path);
    REQUIRE(f.n_rows() == 3);
    REQUIRE(f.names == std::vector<std::string>{"a"});
    REQUIRE(f.column("a") == std::vector<double>{1.0, 2.0, 3.0});
    REQUIRE(f.sample_period_s == 1);
}

TEST_CASE("load_csv rejects ordering violations", "[series]") {
    const auto non_mono = write_temp("lc_mono.csv", "timestamp,a\n5,1.0\n4,2.0\n");
    CHECK(code_of([&] { load_csv(non_mono); }) == ErrorCode::NonMonotonicTimestamp);
    const auto dup = write_temp("lc_dup.csv", "timestamp,a\n5,1.0\n5,2.0\n");
    CHECK(code_of([&] { load_csv(dup); }) == ErrorCode::DuplicateTimestamp);
    const auto bad_cell = write_temp("lc_cell.csv", "timestamp,a\n0,1.0\n1,oops\n");
    CHECK(code_of([&] { load_csv(bad_cell); }) == ErrorCode::MalformedRow);
    const auto bad_header = write_temp("lc_hdr.csv", "time,a\n0,1.0\n");
    CHECK(code_of([&] { load_csv(bad_header); }) == ErrorCode::MalformedHeader);
}

TEST_CASE("load_csv records empty cells as gaps", "[series]") {
    const auto path = write_temp("lc_gap.csv", "timestamp,a\n0,1.0\n1,2.0\n2,\n3,4.0\n");
    const SeriesFrame f = load_csv(path);
    REQUIRE(f.n_rows() == 4);
    CHECK(std::isnan(f.column("a")[2]));
    CHECK(f.column("a")[3] == 4.0);

    // round trip: gaps survive save/load and the bytes are stable
    const auto out1 = write_temp("lc_gap_out1.csv", "");
    save_csv(f, out1);
    const SeriesFrame f2 = load_csv(out1);
    const auto out2 = write_temp("lc_gap_out2.csv", "");
    save_csv(f2, out2);
    std::ifstream a(out1, std::ios::binary), b(out2, std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
    CHECK(std::isnan(f2.column("a")[2]));
}

TEST_CASE("load_csv inserts gap rows for missing grid points", "[series]") {
    const auto path = write_temp("lc_grid.csv", "timestamp,a\n0,1.0\n1,2.0\n3,4.0\n");
    const SeriesFrame f = load_csv(path);
    REQUIRE(f.n_rows() == 4);
    CHECK(f.timestamps == std::vector<std::int64_t>{0, 1, 2, 3});
    CHECK(std::isnan(f.column("a")[2]));

    const auto off_grid = write_temp("lc_offgrid.csv", "timestamp,a\n0,1.0\n2,2.0\n3,3.0\n5,4.0\n");
    // min diff is 1 so every timestamp lands on the grid; but with period 2 forced, 3 is off-grid
    CHECK_NOTHROW(load_csv(off_grid));
    CHECK(code_of([&] { load_csv(off_grid, {}, 2); }) == ErrorCode::IrregularTimestamp);
}

TEST_CASE("load_csv validates an expected schema", "[series]") {
    const auto path = write_temp("lc_schema.csv", "timestamp,a,b\n0,1.0,2.0\n");
    CHECK_NOTHROW(load_csv(path, {"a", "b"}));
    CHECK(code_of([&] { load_csv(path, {"a", "c"}); }) == ErrorCode::SchemaMismatch);
}

TEST_CASE("interpolate_missing fills interior and edge gaps", "[series]") {
    SeriesFrame f = frame_of({1.0, kNan, 3.0});
    CHECK(interpolate_missing(f, 1).column("a") == std::vector<double>{1.0, 2.0, 3.0});

    SeriesFrame lead = frame_of({kNan, 5.0, 6.0});
    CHECK(interpolate_missing(lead, 1).column("a") == std::vector<double>{5.0, 5.0, 6.0});

    SeriesFrame trail = frame_of({5.0, 6.0, kNan});
    CHECK(interpolate_missing(trail, 1).column("a") == std::vector<double>{5.0, 6.0, 6.0});

    SeriesFrame long_gap = frame_of({1.0, kNan, kNan, kNan, 9.0});
    CHECK(code_of([&] { interpolate_missing(long_gap, 2); }) == ErrorCode::GapTooLong);

    // gap-free input comes back unchanged
    Rng rng(7);
    std::vector<double> vals(257);
    for (auto& v : vals) v = rng.gaussian();
    SeriesFrame clean = frame_of(vals);
    CHECK(interpolate_missing(clean, 3).column("a") == vals);
}

TEST_CASE("remove_outliers applies the Hampel rule", "[series]") {
    SeriesFrame spike = frame_of({1, 1, 1, 100, 1, 1, 1});
    const SeriesFrame fixed = remove_outliers(spike, 7, 3.0);
    CHECK(fixed.column("a") == std::vector<double>{1, 1, 1, 1, 1, 1, 1});
    // purity: the input frame is untouched
    CHECK(spike.column("a")[3] == 100.0);

    // a strictly linear ramp passes untouched for any window
    std::vector<double> ramp(101);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = 0.25 * static_cast<double>(i) - 3.0;
    for (std::size_t w : {3u, 5u, 7u, 11u, 25u}) {
        CHECK(remove_outliers(frame_of(ramp), w, 3.0).column("a") == ramp);
    }

    CHECK(code_of([&] { remove_outliers(frame_of({1, 2, 3}), 5, 3.0); }) ==
          ErrorCode::WindowTooLarge);
    CHECK(code_of([&] { remove_outliers(frame_of({1, 2, 3, 4}), 4, 3.0); }) ==
          ErrorCode::InvalidArgument);
}

namespace {

/// Independent per-index Hampel oracle, written from the rule's definition.
bool oracle_hampel_flags(const std::vector<double>& x, std::size_t i, std::size_t window,
                         double n_sigmas) {
    const std::size_t h = window / 2;
    const std::size_t lo = i >= h ? i - h : 0;
    const std::size_t hi = std::min(x.size() - 1, i + h);
    std::vector<double> w(x.begin() + static_cast<std::ptrdiff_t>(lo),
                          x.begin() + static_cast<std::ptrdiff_t>(hi) + 1);
    std::sort(w.begin(), w.end());
    auto median_sorted = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    const double med = median_sorted(w);
    std::vector<double> dev;
    for (double v : w) dev.push_back(std::fabs(v - med));
    const double mad = median_sorted(dev);
    return std::fabs(x[i] - med) > n_sigmas * 1.4826 * mad;
}

}  // namespace

TEST_CASE("remove_outliers replaces exactly the oracle-flagged indices", "[series]") {
    Rng rng(21);
    std::vector<double> x(2000);
    for (auto& v : x) v = rng.gaussian();
    const std::vector<std::size_t> spikes{100, 407, 911, 1500, 1999};
    for (std::size_t i : spikes) x[i] += 10.0;

    const SeriesFrame in = frame_of(x);
    const SeriesFrame out = remove_outliers(in, 11, 3.0);

    std::size_t changed = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool flagged = oracle_hampel_flags(x, i, 11, 3.0);
        const bool replaced = out.column("a")[i] != x[i];
        INFO("index " << i);
        CHECK(replaced == flagged);
        changed += replaced;
    }
    // all five injected spikes flagged (plus possibly a few unlucky noise points)
    for (std::size_t i : spikes) CHECK(out.column("a")[i] != x[i]);
    CHECK(changed >= spikes.size());
}

TEST_CASE("smooth is a clamped centered moving average", "[series]") {
    const SeriesFrame f = frame_of({0.0, 3.0, 0.0});
    CHECK(smooth(f, 1).column("a") == f.column("a"));
    const auto s = smooth(f, 3).column("a");
    CHECK(s[0] == Catch::Approx(1.5).margin(1e-15));
    CHECK(s[1] == Catch::Approx(1.0).margin(1e-15));
    CHECK(s[2] == Catch::Approx(1.5).margin(1e-15));

    const SeriesFrame c = frame_of({2.5, 2.5, 2.5, 2.5, 2.5});
    CHECK(smooth(c, 5).column("a") == c.column("a"));

    // naive window-mean oracle on seeded data
    Rng rng(3);
    std::vector<double> vals(97);
    for (auto& v : vals) v = rng.uniform(-4, 4);
    const auto got = smooth(frame_of(vals), 7).column("a");
    for (std::size_t i = 0; i < vals.size(); ++i) {
        const std::size_t lo = i >= 3 ? i - 3 : 0;
        const std::size_t hi = std::min(vals.size() - 1, i + 3);
        double sum = 0;
        for (std::size_t k = lo; k <= hi; ++k) sum += vals[k];
        CHECK(got[i] == Catch::Approx(sum / static_cast<double>(hi - lo + 1)).epsilon(1e-12));
    }
}

TEST_CASE("standardize fits on the given range only", "[series]") {
    const SeriesFrame f = frame_of({1.0, 2.0, 3.0});
    const auto [out, params] = standardize(f, 0, 3);
    CHECK(params.means[0] == Catch::Approx(2.0).margin(1e-15));
    CHECK(params.scales[0] == Catch::Approx(0.816496580927726).margin(1e-12));
    CHECK(out.column("a")[0] == Catch::Approx(-1.224744871391589).margin(1e-12));
    CHECK(out.column("a")[1] == Catch::Approx(0.0).margin(1e-12));
    CHECK(out.column("a")[2] == Catch::Approx(1.224744871391589).margin(1e-12));

    CHECK(code_of([&] { standardize(frame_of({5, 5, 5, 5}), 0, 4); }) ==
          ErrorCode::DegenerateVariance);

    // statistics must come from the fit range, not the whole series
    const SeriesFrame g = frame_of({0.0, 1.0, 100.0, 200.0});
    const auto [out2, p2] = standardize(g, 0, 2);
    CHECK(p2.means[0] == 0.5);
    CHECK(p2.scales[0] == 0.5);
    CHECK(out2.column("a")[3] == Catch::Approx((200.0 - 0.5) / 0.5));
}

TEST_CASE("standardize round-trips through its inverse", "[series]") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        SeriesFrame f;
        f.timestamps.resize(64);
        for (std::size_t i = 0; i < 64; ++i) f.timestamps[i] = static_cast<std::int64_t>(i);
        for (const char* name : {"x", "y", "z"}) {
            std::vector<double> col(64);
            const double mu = rng.uniform(-100, 100), sd = rng.uniform(0.1, 50);
            for (auto& v : col) v = mu + sd * rng.gaussian();
            f.names.emplace_back(name);
            f.columns.push_back(std::move(col));
        }
        const auto [stdf, params] = standardize(f, 0, 48);
        const SeriesFrame back = inverse_standardize(stdf, params);
        for (std::size_t c = 0; c < f.n_vars(); ++c)
            for (std::size_t i = 0; i < f.n_rows(); ++i) {
                const double rel = std::fabs(back.columns[c][i] - f.columns[c][i]) /
                                   std::max(1.0, std::fabs(f.columns[c][i]));
                REQUIRE(rel <= 1e-12);
            }
    }
}

TEST_CASE("standardizing already-standardized data is the identity", "[series]") {
    Rng rng(5);
    std::vector<double> col(512);
    for (auto& v : col) v = rng.gaussian();
    const auto [once, p1] = standardize(frame_of(col), 0, 512);
    const auto [twice, p2] = standardize(once, 0, 512);
    CHECK(std::fabs(p2.means[0]) < 1e-12);
    CHECK(std::fabs(p2.scales[0] - 1.0) < 1e-12);
    for (std::size_t i = 0; i < col.size(); ++i)
        CHECK(std::fabs(twice.column("a")[i] - once.column("a")[i]) < 1e-12);
}

TEST_CASE("split is chronological with floor sizes and remainder to train", "[series]") {
    SplitSpec spec;
    spec.train_fraction = 0.8;
    spec.validation_fraction = 0.1;
    spec.test_fraction = 0.1;
    const auto s = split_sizes(100, spec);
    CHECK(s.train == 80);
    CHECK(s.validation == 10);
    CHECK(s.test == 10);

    SplitSpec paper;
    paper.train_fraction = 0.7;
    paper.validation_fraction = 0.15;
    paper.test_fraction = 0.15;
    const auto big = split_sizes(1048574, paper);
    CHECK(big.train == 734002);
    CHECK(big.validation == 157286);
    CHECK(big.test == 157286);

    Rng rng(9);
    std::vector<double> col(100);
    for (auto& v : col) v = rng.gaussian();
    const SeriesFrame f = frame_of(col);
    const SplitFrames parts = split(f, spec);
    CHECK(parts.train.n_rows() == 80);
    CHECK(parts.validation.n_rows() == 10);
    CHECK(parts.test.n_rows() == 10);

    // concatenation reproduces the input exactly
    std::vector<double> cat = parts.train.column("a");
    cat.insert(cat.end(), parts.validation.column("a").begin(), parts.validation.column("a").end());
    cat.insert(cat.end(), parts.test.column("a").begin(), parts.test.column("a").end());
    CHECK(cat == col);

    CHECK(code_of([&] {
              std::vector<double> ten(10, 1.0);
              SeriesFrame tiny = frame_of(ten);
              tiny.columns[0][3] = 2.0;  // avoid DegenerateVariance elsewhere
              split(tiny, spec, 5);
          }) == ErrorCode::EmptySplit);
}

TEST_CASE("preprocessing stages are idempotent on stage-clean data", "[series]") {
    Rng rng(31);
    std::vector<double> vals(400);
    for (auto& v : vals) v = std::sin(0.05 * static_cast<double>(&v - vals.data())) + 0.02 * rng.gaussian();
    const SeriesFrame base = frame_of(vals);

    // interpolate on gap-free data
    CHECK(interpolate_missing(base, 5).column("a") == vals);

    // hampel on data it has already cleaned
    const SeriesFrame once = remove_outliers(base, 11, 3.0);
    const SeriesFrame twice = remove_outliers(once, 11, 3.0);
    for (std::size_t i = 0; i < vals.size(); ++i)
        CHECK(twice.column("a")[i] == once.column("a")[i]);

    // smoothing fixes constants
    const SeriesFrame c = frame_of(std::vector<double>(64, 1.75));
    CHECK(smooth(smooth(c, 5), 5).column("a") == c.column("a"));
}
