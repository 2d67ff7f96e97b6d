#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <functional>

#include "levelcast/synth.hpp"
#include "levelcast/train.hpp"

using namespace levelcast;
using namespace levelcast::model;

namespace {

/// Smooth deterministic series that a tiny model can memorize.
SeriesFrame wave_frame(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    SeriesFrame f;
    f.timestamps.resize(n);
    std::vector<double> y(n), x(n);
    for (std::size_t t = 0; t < n; ++t) {
        f.timestamps[t] = static_cast<std::int64_t>(t);
        const double ft = static_cast<double>(t);
        y[t] = std::sin(0.19 * ft) + 0.5 * std::sin(0.043 * ft + 1.0);
        x[t] = std::cos(0.11 * ft) + 0.02 * rng.gaussian();
    }
    f.names = {"y", "x"};
    f.columns = {std::move(y), std::move(x)};
    return f;
}

ModelConfig tiny_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.window_len = 8;
    cfg.n_features = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.n_layers = 1;
    cfg.horizon = 1;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("training memorizes a small sample set", "[train]") {
    const SeriesFrame f = wave_frame(41, 1);  // 41 - 8 - 1 + 1 = 33 windows
    const ModelConfig cfg = tiny_config(3);
    TrainConfig tcfg;
    tcfg.learning_rate = 3e-3;
    tcfg.batch_size = 33;
    tcfg.max_steps = 2000;
    tcfg.eval_every = 100;
    tcfg.patience = 1000;  // never stop early; this is a capacity check

    const TrainResult r = train(ModelKind::transformer, cfg, tcfg, f, f, "y");
    double final_train_mse = r.log.back().train_mse;
    CHECK(final_train_mse < 1e-3);

    // best-so-far validation loss is non-increasing over the log
    double best = std::numeric_limits<double>::infinity();
    for (const auto& entry : r.log) {
        const double new_best = std::min(best, entry.val_mse);
        CHECK(new_best <= best);
        best = new_best;
    }
}

TEST_CASE("training is deterministic across runs and thread counts", "[train]") {
    const SeriesFrame f = wave_frame(300, 2);
    const SeriesFrame v = wave_frame(80, 3);
    const ModelConfig cfg = tiny_config(17);
    TrainConfig tcfg;
    tcfg.max_steps = 60;
    tcfg.eval_every = 20;
    tcfg.learning_rate = 1e-3;

    const TrainResult a = train(ModelKind::lstm, cfg, tcfg, f, v, "y");
    const TrainResult b = train(ModelKind::lstm, cfg, tcfg, f, v, "y");
    REQUIRE(a.params.flat() == b.params.flat());

    setenv("LEVELCAST_THREADS", "1", 1);
    const TrainResult c = train(ModelKind::lstm, cfg, tcfg, f, v, "y");
    setenv("LEVELCAST_THREADS", "3", 1);
    const TrainResult d = train(ModelKind::lstm, cfg, tcfg, f, v, "y");
    unsetenv("LEVELCAST_THREADS");
    CHECK(c.params.flat() == a.params.flat());
    CHECK(d.params.flat() == a.params.flat());
}

TEST_CASE("patience zero stops at the first non-improving validation", "[train]") {
    const SeriesFrame f = wave_frame(300, 4);
    const SeriesFrame v = wave_frame(80, 5);
    const ModelConfig cfg = tiny_config(23);
    TrainConfig tcfg;
    tcfg.max_steps = 5000;
    tcfg.eval_every = 10;
    tcfg.patience = 0;

    const TrainResult r = train(ModelKind::transformer, cfg, tcfg, f, v, "y");
    REQUIRE(r.log.size() >= 2);
    // every validation but the last improved; the last one did not
    for (std::size_t i = 0; i + 1 < r.log.size(); ++i) CHECK(r.log[i].improved);
    CHECK_FALSE(r.log.back().improved);
    CHECK(r.steps_run < tcfg.max_steps);
    CHECK(r.best_step == r.log[r.log.size() - 2].step);
}

TEST_CASE("divergence is reported as such", "[train]") {
    const SeriesFrame f = wave_frame(300, 6);
    const ModelConfig cfg = tiny_config(29);
    TrainConfig tcfg;
    tcfg.learning_rate = 1e6;  // guaranteed blow-up
    tcfg.max_steps = 200;
    tcfg.eval_every = 10;
    try {
        train(ModelKind::transformer, cfg, tcfg, f, f, "y");
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Diverged);
    }
}

TEST_CASE("insufficient data is rejected", "[train]") {
    const SeriesFrame f = wave_frame(6, 7);  // shorter than window+horizon
    const ModelConfig cfg = tiny_config(31);
    try {
        train(ModelKind::transformer, cfg, TrainConfig{}, f, f, "y");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
}

TEST_CASE("predict_horizon shape, units and persistence identity", "[train]") {
    // physical-unit frame with nontrivial standardization
    auto spec = synth::preset_delays(3000, 9, 0.1);
    auto [raw, truth] = synth::generate(spec);
    const auto [std_frame, params] = standardize(raw, 0, 2000);

    ModelConfig cfg = tiny_config(37);
    cfg.n_features = raw.n_vars();
    cfg.window_len = 12;
    cfg.horizon = 4;
    const ParameterSet weights = transformer_init(cfg);

    const ForecastResult res = predict_horizon(ModelKind::transformer, weights, cfg, std_frame,
                                               params, "drum_level");
    CHECK(res.n_samples() == std_frame.n_rows() - cfg.window_len - cfg.horizon + 1);
    CHECK(res.horizons == std::vector<std::size_t>{1, 2, 3, 4});

    // de-standardization round trip: standardizing the physical outputs
    // reproduces the raw model outputs
    const double mu = params.mean_of("drum_level");
    const double sigma = params.scale_of("drum_level");
    const WindowDataset data(std_frame, "drum_level", cfg);
    for (std::size_t i : {std::size_t{0}, std::size_t{7}}) {
        const Eigen::RowVectorXd direct = forward_transformer(weights, cfg, data.sample(i).inputs);
        for (std::size_t h = 0; h < cfg.horizon; ++h) {
            const double back = (res.predictions[i][h] - mu) / sigma;
            CHECK(std::fabs(back - direct(static_cast<Eigen::Index>(h))) <=
                  1e-10 * std::max(1.0, std::fabs(direct(static_cast<Eigen::Index>(h)))));
        }
    }

    // persistence path: with identity standardization the one-step rule is bit-exact
    StandardizationParams identity;
    identity.names = raw.names;
    identity.means.assign(raw.n_vars(), 0.0);
    identity.scales.assign(raw.n_vars(), 1.0);
    const ForecastResult pers =
        predict_horizon(ModelKind::persistence, ParameterSet{}, cfg, raw, identity, "drum_level");
    const auto& y = raw.column("drum_level");
    for (std::size_t i : {std::size_t{0}, std::size_t{100}}) {
        const double last = y[i + cfg.window_len - 1];
        for (std::size_t h = 0; h < cfg.horizon; ++h) {
            CHECK(pers.predictions[i][h] == last);
            CHECK(pers.targets[i][h] == y[i + cfg.window_len + h]);
        }
    }

    // too-short frame
    SeriesFrame stub;
    stub.timestamps = {0, 1, 2};
    stub.names = raw.names;
    for (std::size_t c = 0; c < raw.n_vars(); ++c)
        stub.columns.push_back({1.0, 2.0, 3.0});
    try {
        predict_horizon(ModelKind::transformer, weights, cfg, stub, params, "drum_level");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
}

TEST_CASE("checkpoints reload to bit-identical predictions", "[train]") {
    const SeriesFrame f = wave_frame(200, 10);
    ModelConfig cfg = tiny_config(41);
    TrainConfig tcfg;
    tcfg.max_steps = 40;
    tcfg.eval_every = 20;
    const TrainResult r = train(ModelKind::transformer, cfg, tcfg, f, f, "y");

    Checkpoint ck;
    ck.kind = ModelKind::transformer;
    ck.config = cfg;
    ck.target = "y";
    ck.feature_names = f.names;
    ck.standardization.names = f.names;
    ck.standardization.means = {0.0, 0.0};
    ck.standardization.scales = {1.0, 1.0};
    ck.params = r.params;

    const auto path = (std::filesystem::temp_directory_path() / "lc_ck.json").string();
    save_checkpoint(ck, path);
    const Checkpoint back = load_checkpoint(path);
    CHECK(back.kind == ModelKind::transformer);
    CHECK(back.feature_names == f.names);
    REQUIRE(back.params.flat() == r.params.flat());

    const WindowDataset data(f, "y", cfg);
    for (std::size_t i : {std::size_t{0}, std::size_t{5}, std::size_t{50}}) {
        const auto a = forward_transformer(r.params, cfg, data.sample(i).inputs);
        const auto b = forward_transformer(back.params, back.config, data.sample(i).inputs);
        REQUIRE((a - b).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("window dataset arithmetic", "[train]") {
    const SeriesFrame f = wave_frame(40, 11);
    ModelConfig cfg = tiny_config(43);
    cfg.window_len = 10;
    cfg.horizon = 3;
    const WindowDataset data(f, "y", cfg);
    CHECK(data.size() == 40 - 10 - 3 + 1);
    const Sample s = data.sample(4);
    for (std::size_t r = 0; r < 10; ++r) {
        CHECK(s.inputs(static_cast<Eigen::Index>(r), 0) == f.column("y")[4 + r]);
        CHECK(s.inputs(static_cast<Eigen::Index>(r), 1) == f.column("x")[4 + r]);
    }
    for (std::size_t h = 0; h < 3; ++h)
        CHECK(s.targets(static_cast<Eigen::Index>(h)) == f.column("y")[4 + 10 + h]);
    CHECK(data.last_observed(4) == f.column("y")[13]);
}
