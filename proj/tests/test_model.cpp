#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <vector>

#include "levelcast/lstm.hpp"
#include "levelcast/train.hpp"
#include "levelcast/transformer.hpp"

using namespace levelcast;
using namespace levelcast::model;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::InvalidArgument;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.gaussian();
    return m;
}

// ---------------------------------------------------------------------------
// Straight-line reimplementation of the whole transformer forward pass with
// plain loops over std::vector. Deliberately shares no code with the library.
// ---------------------------------------------------------------------------

using Grid = std::vector<std::vector<double>>;

Grid to_grid(const Eigen::MatrixXd& m) {
    Grid g(static_cast<std::size_t>(m.rows()),
           std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
    return g;
}

Grid grid_of(const ParameterSet& p, const std::string& name) {
    const auto view = p.tensor(name);
    Grid g(static_cast<std::size_t>(view.rows()),
           std::vector<double>(static_cast<std::size_t>(view.cols())));
    for (Eigen::Index i = 0; i < view.rows(); ++i)
        for (Eigen::Index j = 0; j < view.cols(); ++j)
            g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = view(i, j);
    return g;
}

Grid matmul(const Grid& a, const Grid& b) {
    Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t k = 0; k < b.size(); ++k)
            for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
    return out;
}

std::vector<double> naive_transformer(const ParameterSet& params, const ModelConfig& cfg,
                                      const Eigen::MatrixXd& inputs) {
    const std::size_t w = cfg.window_len, d = cfg.d_model, dk = cfg.d_k();
    Grid z = matmul(to_grid(inputs), grid_of(params, "embed"));
    for (std::size_t i = 0; i < w; ++i)
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t pair = c - (c % 2);
            const double freq = std::pow(10000.0, -static_cast<double>(pair) / static_cast<double>(d));
            const double angle = static_cast<double>(i) * freq;
            z[i][c] += (c % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }

    auto layer_norm = [&](const Grid& x, const Grid& gain, const Grid& bias) {
        Grid out = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double mu = 0;
            for (double v : x[i]) mu += v;
            mu /= static_cast<double>(x[i].size());
            double var = 0;
            for (double v : x[i]) var += (v - mu) * (v - mu);
            var /= static_cast<double>(x[i].size());
            const double inv = 1.0 / std::sqrt(var + 1e-9);
            for (std::size_t c = 0; c < x[i].size(); ++c)
                out[i][c] = (x[i][c] - mu) * inv * gain[0][c] + bias[0][c];
        }
        return out;
    };

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "l" + std::to_string(l) + ".";
        const Grid q = matmul(z, grid_of(params, pre + "attn.wq"));
        const Grid k = matmul(z, grid_of(params, pre + "attn.wk"));
        const Grid v = matmul(z, grid_of(params, pre + "attn.wv"));
        Grid concat(w, std::vector<double>(d, 0.0));
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const std::size_t off = h * dk;
            for (std::size_t i = 0; i < w; ++i) {
                std::vector<double> logits(w, 0.0);
                for (std::size_t j = 0; j < w; ++j) {
                    double s = 0;
                    for (std::size_t c = 0; c < dk; ++c) s += q[i][off + c] * k[j][off + c];
                    logits[j] = s / std::sqrt(static_cast<double>(dk));
                }
                double peak = logits[0];
                for (double lv : logits) peak = std::max(peak, lv);
                double denom = 0;
                for (auto& lv : logits) {
                    lv = std::exp(lv - peak);
                    denom += lv;
                }
                for (std::size_t j = 0; j < w; ++j)
                    for (std::size_t c = 0; c < dk; ++c)
                        concat[i][off + c] += logits[j] / denom * v[j][off + c];
            }
        }
        Grid mixed = matmul(concat, grid_of(params, pre + "attn.wo"));
        for (std::size_t i = 0; i < w; ++i)
            for (std::size_t c = 0; c < d; ++c) mixed[i][c] += z[i][c];
        const Grid n1 = layer_norm(mixed, grid_of(params, pre + "ln1.gain"),
                                   grid_of(params, pre + "ln1.bias"));

        Grid hidden = matmul(n1, grid_of(params, pre + "ffn.w1"));
        const Grid b1 = grid_of(params, pre + "ffn.b1");
        for (auto& row : hidden)
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = std::max(0.0, row[c] + b1[0][c]);
        Grid ffn = matmul(hidden, grid_of(params, pre + "ffn.w2"));
        const Grid b2 = grid_of(params, pre + "ffn.b2");
        for (std::size_t i = 0; i < w; ++i)
            for (std::size_t c = 0; c < d; ++c) ffn[i][c] += b2[0][c] + n1[i][c];
        z = layer_norm(ffn, grid_of(params, pre + "ln2.gain"), grid_of(params, pre + "ln2.bias"));
    }

    const Grid head_w = grid_of(params, "head.w");
    const Grid head_b = grid_of(params, "head.b");
    std::vector<double> pred(cfg.horizon, 0.0);
    for (std::size_t j = 0; j < cfg.horizon; ++j) {
        double s = head_b[0][j];
        for (std::size_t c = 0; c < cfg.d_model; ++c) s += z[w - 1][c] * head_w[c][j];
        pred[j] = s;
    }
    return pred;
}

}  // namespace

TEST_CASE("embed is a row-wise linear map", "[model]") {
    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd x = random_matrix(6, 4, 1);
    CHECK((embed(x, id) - x).cwiseAbs().maxCoeff() == 0.0);

    // one-hot rows select embedding rows
    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(3, 4);
    onehot(0, 2) = 1.0;
    onehot(1, 0) = 1.0;
    onehot(2, 3) = 1.0;
    const Eigen::MatrixXd e = random_matrix(4, 5, 2);
    const Eigen::MatrixXd sel = embed(onehot, e);
    CHECK((sel.row(0) - e.row(2)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sel.row(1) - e.row(0)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((sel.row(2) - e.row(3)).cwiseAbs().maxCoeff() == 0.0);

    // independent triple-loop oracle
    const Eigen::MatrixXd got = embed(x, e);
    for (Eigen::Index i = 0; i < 6; ++i)
        for (Eigen::Index j = 0; j < 5; ++j) {
            double s = 0;
            for (Eigen::Index k = 0; k < 4; ++k) s += x(i, k) * e(k, j);
            CHECK(got(i, j) == Catch::Approx(s).margin(1e-12));
        }

    CHECK(code_of([&] { embed(x, random_matrix(3, 5, 3)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("positional encoding follows the sinusoid table", "[model]") {
    const Eigen::MatrixXd pe = positional_encoding(8, 6);
    // position 0 alternates 0,1,0,1,...
    for (Eigen::Index c = 0; c < 6; ++c)
        CHECK(pe(0, c) == Catch::Approx(c % 2 == 0 ? 0.0 : 1.0).margin(1e-15));
    CHECK(pe.maxCoeff() <= 1.0);
    CHECK(pe.minCoeff() >= -1.0);

    // hand-evaluated row for position 2, d_model 4
    const Eigen::MatrixXd pe4 = positional_encoding(3, 4);
    CHECK(pe4(2, 0) == Catch::Approx(std::sin(2.0)).margin(1e-15));
    CHECK(pe4(2, 1) == Catch::Approx(std::cos(2.0)).margin(1e-15));
    CHECK(pe4(2, 2) == Catch::Approx(std::sin(2.0 / 100.0)).margin(1e-15));
    CHECK(pe4(2, 3) == Catch::Approx(std::cos(2.0 / 100.0)).margin(1e-15));

    // deterministic
    CHECK((positional_encoding(8, 6) - pe).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("attention normalizes rows and averages values", "[model]") {
    // singleton: weight matrix [[1]], output = the one value row
    const Eigen::MatrixXd v1 = random_matrix(1, 3, 4);
    const auto single = attention(random_matrix(1, 2, 5), random_matrix(1, 2, 6), v1, 2);
    CHECK(single.weights(0, 0) == Catch::Approx(1.0).margin(1e-12));
    CHECK((single.output - v1).cwiseAbs().maxCoeff() < 1e-12);

    // rows sum to one, weights nonnegative, across 100 seeded draws
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const auto r = attention(random_matrix(7, 4, seed), random_matrix(7, 4, seed + 1000),
                                 random_matrix(7, 5, seed + 2000), 4);
        CHECK(r.weights.minCoeff() >= 0.0);
        for (Eigen::Index i = 0; i < r.weights.rows(); ++i)
            CHECK(std::fabs(r.weights.row(i).sum() - 1.0) <= 1e-9);
    }

    // zero queries: uniform weights, output = column means of V
    const Eigen::MatrixXd v = random_matrix(5, 3, 9);
    const auto uniform = attention(Eigen::MatrixXd::Zero(5, 4), random_matrix(5, 4, 10), v, 4);
    for (Eigen::Index i = 0; i < 5; ++i)
        for (Eigen::Index j = 0; j < 5; ++j)
            CHECK(uniform.weights(i, j) == Catch::Approx(0.2).margin(1e-12));
    const Eigen::RowVectorXd mean = v.colwise().mean();
    for (Eigen::Index i = 0; i < 5; ++i)
        CHECK((uniform.output.row(i) - mean).cwiseAbs().maxCoeff() < 1e-12);

    CHECK(code_of([&] { attention(random_matrix(3, 4, 1), random_matrix(3, 5, 2), v, 4); }) ==
          ErrorCode::ShapeMismatch);
}

TEST_CASE("feedforward applies relu between the two linear maps", "[model]") {
    const Eigen::MatrixXd a = random_matrix(4, 3, 20);
    const Eigen::RowVectorXd b2 = random_matrix(1, 3, 21).row(0);

    // zero weights: the output is the broadcast second bias
    const Eigen::MatrixXd zero_w1 = Eigen::MatrixXd::Zero(3, 6);
    const Eigen::MatrixXd zero_w2 = Eigen::MatrixXd::Zero(6, 3);
    const Eigen::MatrixXd out = feedforward(a, zero_w1, Eigen::RowVectorXd::Zero(6), zero_w2, b2);
    for (Eigen::Index i = 0; i < 4; ++i)
        CHECK((out.row(i) - b2).cwiseAbs().maxCoeff() == 0.0);

    // a large negative first bias gates everything off
    const Eigen::MatrixXd w1 = random_matrix(3, 6, 22);
    const Eigen::MatrixXd w2 = random_matrix(6, 3, 23);
    const Eigen::RowVectorXd huge_neg = Eigen::RowVectorXd::Constant(6, -1e6);
    const Eigen::MatrixXd gated = feedforward(a, w1, huge_neg, w2, b2);
    for (Eigen::Index i = 0; i < 4; ++i)
        CHECK((gated.row(i) - b2).cwiseAbs().maxCoeff() == 0.0);

    // independent oracle
    const Eigen::RowVectorXd b1 = random_matrix(1, 6, 24).row(0);
    const Eigen::MatrixXd got = feedforward(a, w1, b1, w2, b2);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index j = 0; j < 3; ++j) {
            double s = b2(j);
            for (Eigen::Index k = 0; k < 6; ++k) {
                double pre = b1(k);
                for (Eigen::Index c = 0; c < 3; ++c) pre += a(i, c) * w1(c, k);
                s += std::max(0.0, pre) * w2(k, j);
            }
            CHECK(got(i, j) == Catch::Approx(s).margin(1e-12));
        }
}

TEST_CASE("transformer forward matches an independent reimplementation", "[model]") {
    ModelConfig cfg;
    cfg.window_len = 7;
    cfg.n_features = 3;
    cfg.d_model = 8;
    cfg.n_heads = 2;
    cfg.d_ff = 12;
    cfg.n_layers = 2;
    cfg.horizon = 4;
    cfg.seed = 42;
    const ParameterSet params = transformer_init(cfg);
    const Eigen::MatrixXd inputs = random_matrix(7, 3, 77);

    const Eigen::RowVectorXd got = forward_transformer(params, cfg, inputs);
    const std::vector<double> want = naive_transformer(params, cfg, inputs);
    REQUIRE(got.size() == 4);
    for (Eigen::Index j = 0; j < 4; ++j)
        CHECK(got(j) == Catch::Approx(want[static_cast<std::size_t>(j)]).margin(1e-10));
}

TEST_CASE("transformer forward contracts", "[model]") {
    // all-zero parameters (including norm gains) give a zero prediction
    ModelConfig cfg;
    cfg.window_len = 5;
    cfg.n_features = 2;
    cfg.d_model = 4;
    cfg.n_heads = 2;
    cfg.d_ff = 8;
    cfg.n_layers = 1;
    cfg.horizon = 3;
    ParameterSet zeros = transformer_layout(cfg);
    const Eigen::RowVectorXd pred = forward_transformer(zeros, cfg, random_matrix(5, 2, 31));
    CHECK(pred.cwiseAbs().maxCoeff() == 0.0);

    // output shape across a config sweep
    for (std::size_t horizon : {1u, 2u, 7u})
        for (std::size_t layers : {1u, 3u})
            for (std::size_t heads : {1u, 2u, 4u}) {
                ModelConfig c;
                c.window_len = 6;
                c.n_features = 3;
                c.d_model = 8;
                c.n_heads = heads;
                c.d_ff = 16;
                c.n_layers = layers;
                c.horizon = horizon;
                c.seed = horizon * 100 + layers * 10 + heads;
                const auto p = transformer_init(c);
                CHECK(forward_transformer(p, c, random_matrix(6, 3, c.seed)).size() ==
                      static_cast<Eigen::Index>(horizon));
            }

    // permuting time positions changes the output (positions are encoded)
    ModelConfig pc;
    pc.window_len = 6;
    pc.n_features = 3;
    pc.d_model = 8;
    pc.n_heads = 2;
    pc.d_ff = 16;
    pc.n_layers = 1;
    pc.horizon = 2;
    pc.seed = 9;
    const auto params = transformer_init(pc);
    const Eigen::MatrixXd x = random_matrix(6, 3, 55);
    Eigen::MatrixXd perm = x;
    perm.row(0).swap(perm.row(3));
    const auto base = forward_transformer(params, pc, x);
    const auto swapped = forward_transformer(params, pc, perm);
    CHECK((base - swapped).cwiseAbs().maxCoeff() > 1e-6);

    // non-finite parameters are reported, not propagated
    ParameterSet bad = transformer_init(pc);
    bad.flat()[3] = std::numeric_limits<double>::infinity();
    CHECK(code_of([&] { forward_transformer(bad, pc, x); }) == ErrorCode::NonFiniteActivation);
}

TEST_CASE("layer norm normalizes each position before gain and bias", "[model]") {
    ModelConfig cfg;
    cfg.window_len = 9;
    cfg.n_features = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.n_layers = 2;
    cfg.horizon = 1;
    cfg.seed = 13;
    const auto params = transformer_init(cfg);
    const auto cache = transformer_forward(params, cfg, random_matrix(9, 4, 66));
    for (const auto& layer : cache.layers) {
        for (const auto* norm : {&layer.norm1, &layer.norm2}) {
            for (Eigen::Index r = 0; r < norm->xhat.rows(); ++r) {
                CHECK(std::fabs(norm->xhat.row(r).mean()) <= 1e-9);
                const double var = norm->xhat.row(r).squaredNorm() /
                                   static_cast<double>(norm->xhat.cols());
                CHECK(std::fabs(var - 1.0) <= 1e-6);
            }
        }
    }
}

namespace {

std::vector<double> naive_lstm(const ParameterSet& params, const ModelConfig& cfg,
                               const Eigen::MatrixXd& inputs) {
    const std::size_t T = cfg.window_len, H = cfg.d_model, F = cfg.n_features;
    const Grid w_ih = grid_of(params, "lstm.w_ih");
    const Grid w_hh = grid_of(params, "lstm.w_hh");
    const Grid b = grid_of(params, "lstm.b");
    std::vector<double> h(H, 0.0), c(H, 0.0);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (std::size_t t = 0; t < T; ++t) {
        std::vector<double> z(4 * H, 0.0);
        for (std::size_t j = 0; j < 4 * H; ++j) {
            double s = b[0][j];
            for (std::size_t f = 0; f < F; ++f)
                s += inputs(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(f)) * w_ih[f][j];
            for (std::size_t k = 0; k < H; ++k) s += h[k] * w_hh[k][j];
            z[j] = s;
        }
        for (std::size_t k = 0; k < H; ++k) {
            const double i_g = sig(z[k]);
            const double f_g = sig(z[H + k]);
            const double g_g = std::tanh(z[2 * H + k]);
            const double o_g = sig(z[3 * H + k]);
            c[k] = f_g * c[k] + i_g * g_g;
            h[k] = o_g * std::tanh(c[k]);
        }
    }
    const Grid head_w = grid_of(params, "head.w");
    const Grid head_b = grid_of(params, "head.b");
    std::vector<double> pred(cfg.horizon);
    for (std::size_t j = 0; j < cfg.horizon; ++j) {
        double s = head_b[0][j];
        for (std::size_t k = 0; k < H; ++k) s += h[k] * head_w[k][j];
        pred[j] = s;
    }
    return pred;
}

}  // namespace

TEST_CASE("lstm forward matches an independent recurrence", "[model]") {
    ModelConfig cfg;
    cfg.window_len = 9;
    cfg.n_features = 3;
    cfg.d_model = 6;
    cfg.horizon = 2;
    cfg.seed = 8;
    const auto params = lstm_init(cfg);
    const Eigen::MatrixXd inputs = random_matrix(9, 3, 81);
    const auto got = forward_lstm(params, cfg, inputs);
    const auto want = naive_lstm(params, cfg, inputs);
    for (Eigen::Index j = 0; j < got.size(); ++j)
        CHECK(got(j) == Catch::Approx(want[static_cast<std::size_t>(j)]).margin(1e-12));
}

TEST_CASE("lstm gating identities", "[model]") {
    ModelConfig cfg;
    cfg.window_len = 6;
    cfg.n_features = 2;
    cfg.d_model = 4;
    cfg.horizon = 3;

    // zero weights: the prediction is the head bias
    ParameterSet zeros = lstm_layout(cfg);
    auto head_b = zeros.tensor("head.b");
    head_b(0, 0) = 1.5;
    head_b(0, 1) = -2.0;
    head_b(0, 2) = 0.25;
    const auto pred = forward_lstm(zeros, cfg, random_matrix(6, 2, 3));
    CHECK(pred(0) == 1.5);
    CHECK(pred(1) == -2.0);
    CHECK(pred(2) == 0.25);

    // saturated forget gate and closed input gate freeze the cell state
    ParameterSet frozen = lstm_init(cfg);
    auto b = frozen.tensor("lstm.b");
    for (Eigen::Index k = 0; k < 4; ++k) {
        b(0, k) = -40.0;      // input gate ~ 0
        b(0, 4 + k) = 40.0;   // forget gate ~ 1
    }
    const auto cache = lstm_forward(frozen, cfg, random_matrix(6, 2, 4));
    for (Eigen::Index t = 1; t < cache.cells.rows(); ++t)
        CHECK((cache.cells.row(t) - cache.cells.row(t - 1)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("persistence predicts the last observed value", "[model]") {
    const std::vector<double> hist{1.0, 3.0, 7.5};
    CHECK(persistence_predict(hist, 3) == std::vector<double>{7.5, 7.5, 7.5});
    CHECK(code_of([] { persistence_predict({}, 2); }) == ErrorCode::EmptyHistory);

    // constant series: zero error at every horizon
    const std::vector<double> constant(50, 4.2);
    for (std::size_t h = 1; h <= 5; ++h)
        CHECK(persistence_predict(constant, h).back() == 4.2);

    // ramp of slope s: horizon-h absolute error is exactly s*h
    const double s = 0.125;  // dyadic: products stay exact
    std::vector<double> ramp(100);
    for (std::size_t i = 0; i < ramp.size(); ++i) ramp[i] = s * static_cast<double>(i);
    for (std::size_t h = 1; h <= 8; ++h) {
        double mae = 0;
        std::size_t count = 0;
        for (std::size_t t = 9; t + h < ramp.size(); ++t) {
            std::vector<double> history(ramp.begin(), ramp.begin() + static_cast<std::ptrdiff_t>(t + 1));
            const auto p = persistence_predict(history, h);
            mae += std::fabs(p[h - 1] - ramp[t + h]);
            ++count;
        }
        mae /= static_cast<double>(count);
        CHECK(std::fabs(mae - s * static_cast<double>(h)) <= 1e-12);
    }
}
