// levelcast command line: the five-stage drum-level forecasting pipeline and
// its individual stages as subcommands. See README.md for a walkthrough.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "levelcast/pipeline.hpp"

namespace lc = levelcast;
namespace pl = levelcast::pipeline;

namespace {

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!cur.empty()) out.push_back(static_cast<std::size_t>(std::stoul(cur)));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    return out;
}

int guarded(const std::function<void()>& body) {
    try {
        body();
        return pl::kExitOk;
    } catch (const lc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pl::exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return pl::kExitStageFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"drum-level forecasting pipeline"};
    app.require_subcommand(1);

    // ---- run ---------------------------------------------------------------
    std::string config_path, output_dir;
    auto* run = app.add_subcommand("run", "run the full pipeline from a config file");
    run->add_option("--config", config_path, "pipeline config (json)")->required();
    run->add_option("--output-dir", output_dir, "override the config's output directory");

    // shared stage options
    std::string input_path, target, delays_path, checkpoint_path, out_path;
    std::string work_dir = ".";
    std::string candidates_csv, horizons_csv = "1,5,10,20,30,40,60";
    std::uint64_t seed = 0;

    // ---- preprocess ----------------------------------------------------------
    std::size_t max_gap = 10, outlier_window = 11, smooth_window = 5;
    double n_sigmas = 3.0;
    double f_train = 0.7, f_val = 0.15, f_test = 0.15;
    auto* prep = app.add_subcommand("preprocess", "clean, smooth and fit standardization");
    prep->add_option("--input", input_path, "raw csv")->required();
    prep->add_option("--output-dir", work_dir, "artifact directory");
    prep->add_option("--max-gap", max_gap, "longest fillable gap (samples)");
    prep->add_option("--outlier-window", outlier_window, "hampel window (odd)");
    prep->add_option("--outlier-n-sigmas", n_sigmas, "hampel threshold");
    prep->add_option("--smooth-window", smooth_window, "moving-average window (odd)");
    prep->add_option("--train-fraction", f_train, "training fraction");
    prep->add_option("--validation-fraction", f_val, "validation fraction");
    prep->add_option("--test-fraction", f_test, "test fraction");

    // ---- screen ---------------------------------------------------------------
    double alpha = 0.05;
    std::size_t history_len = 10;
    std::string predictor = "linear-ar", conditioning = "mutual";
    auto* screen = app.add_subcommand("screen", "Granger-screen candidate factors");
    screen->add_option("--input", input_path, "cleaned csv (from preprocess)");
    screen->add_option("--output-dir", work_dir, "artifact directory");
    screen->add_option("--target", target, "target variable")->required();
    screen->add_option("--candidates", candidates_csv, "comma list (default: all others)");
    screen->add_option("--alpha", alpha, "significance level");
    screen->add_option("--history-len", history_len, "lag depth tau");
    screen->add_option("--predictor", predictor, "linear-ar | lstm | transformer");
    screen->add_option("--conditioning", conditioning, "mutual | fixed");
    screen->add_option("--seed", seed, "seed for model-based predictors");

    // ---- delay ---------------------------------------------------------------
    std::size_t max_lag = 600;
    bool allow_negative = false, dump_profiles = false;
    auto* dly = app.add_subcommand("delay", "infer per-variable optimal lags");
    dly->add_option("--input", input_path, "cleaned csv (from preprocess)");
    dly->add_option("--output-dir", work_dir, "artifact directory");
    dly->add_option("--target", target, "target variable")->required();
    dly->add_option("--max-lag", max_lag, "largest lag scanned");
    dly->add_flag("--allow-negative", allow_negative, "maximize |correlation| and record sign");
    dly->add_flag("--dump-profiles", dump_profiles, "write per-variable profile csv");

    // ---- augment ---------------------------------------------------------------
    bool keep_original = true;
    auto* aug = app.add_subcommand("augment", "add lag-shifted feature columns");
    aug->add_option("--input", input_path, "cleaned csv (from preprocess)");
    aug->add_option("--output-dir", work_dir, "artifact directory");
    aug->add_option("--target", target, "target variable")->required();
    aug->add_option("--keep-original", keep_original, "keep unshifted columns");

    // ---- train ---------------------------------------------------------------
    std::string kind = "transformer";
    std::size_t window_len = 60, d_model = 32, n_heads = 2, d_ff = 64, n_layers = 2, horizon = 1;
    double learning_rate = 1e-3;
    std::size_t batch_size = 32;
    long max_steps = 2000, patience = 10, eval_every = 50;
    auto* trn = app.add_subcommand("train", "train a forecaster on the augmented series");
    trn->add_option("--output-dir", work_dir, "artifact directory");
    trn->add_option("--target", target, "target variable")->required();
    trn->add_option("--kind", kind, "transformer | lstm");
    trn->add_option("--window-len", window_len, "input history length");
    trn->add_option("--d-model", d_model, "embedding width / lstm hidden width");
    trn->add_option("--n-heads", n_heads, "attention heads");
    trn->add_option("--d-ff", d_ff, "feedforward width");
    trn->add_option("--n-layers", n_layers, "encoder layers");
    trn->add_option("--horizon", horizon, "steps predicted jointly");
    trn->add_option("--learning-rate", learning_rate, "adam learning rate");
    trn->add_option("--batch-size", batch_size, "minibatch size");
    trn->add_option("--max-steps", max_steps, "training step cap");
    trn->add_option("--patience", patience, "early-stop patience");
    trn->add_option("--eval-every", eval_every, "steps between validations");
    trn->add_option("--train-fraction", f_train, "training fraction");
    trn->add_option("--validation-fraction", f_val, "validation fraction");
    trn->add_option("--test-fraction", f_test, "test fraction");
    trn->add_option("--seed", seed, "pipeline seed");

    // ---- predict / evaluate -----------------------------------------------------
    auto* prd = app.add_subcommand("predict", "forecast the test split from checkpoints");
    prd->add_option("--output-dir", work_dir, "artifact directory");
    prd->add_option("--target", target, "target variable")->required();
    prd->add_option("--kinds", kind, "comma list of trained kinds");
    prd->add_option("--horizons", horizons_csv, "comma list of horizons");
    prd->add_option("--window-len", window_len, "persistence window length");
    prd->add_option("--train-fraction", f_train, "training fraction");
    prd->add_option("--validation-fraction", f_val, "validation fraction");
    prd->add_option("--test-fraction", f_test, "test fraction");

    auto* evl = app.add_subcommand("evaluate", "metrics tables and plots from predictions");
    evl->add_option("--output-dir", work_dir, "artifact directory");
    evl->add_option("--target", target, "target variable")->required();
    evl->add_option("--kinds", kind, "comma list of trained kinds");
    evl->add_option("--horizons", horizons_csv, "comma list of horizons");

    // ---- synth ---------------------------------------------------------------
    std::string preset = "fig5", truth_path;
    std::size_t n_samples = 0;
    double noise = 0.1;
    auto* syn = app.add_subcommand("synth", "generate a benchmark dataset with known structure");
    syn->add_option("--preset", preset, "fig5 | delays | forecast | var10");
    syn->add_option("--n", n_samples, "samples (0 = preset default)");
    syn->add_option("--seed", seed, "generator seed");
    syn->add_option("--noise", noise, "target noise as a fraction of signal sigma");
    syn->add_option("--out", out_path, "output csv")->required();
    syn->add_option("--truth", truth_path, "ground-truth json (optional)");

    // ---- report ---------------------------------------------------------------
    auto* rep = app.add_subcommand("report", "re-render tables and plots from stored results");
    rep->add_option("--output-dir", work_dir, "artifact directory");
    rep->add_option("--target", target, "target variable")->required();
    rep->add_option("--kinds", kind, "comma list of trained kinds");
    rep->add_option("--horizons", horizons_csv, "comma list of horizons");

    CLI11_PARSE(app, argc, argv);

    auto stage_config = [&]() {
        pl::PipelineConfig cfg;
        cfg.input_path = input_path;
        cfg.target = target;
        cfg.seed = seed;
        cfg.output_dir = work_dir;
        cfg.max_gap = max_gap;
        cfg.outlier_window = outlier_window;
        cfg.outlier_n_sigmas = n_sigmas;
        cfg.smooth_window = smooth_window;
        cfg.split.train_fraction = f_train;
        cfg.split.validation_fraction = f_val;
        cfg.split.test_fraction = f_test;
        cfg.screen.alpha = alpha;
        cfg.screen.history_len = history_len;
        if (predictor == "lstm")
            cfg.screen.predictor = lc::causal::PredictorKind::lstm;
        else if (predictor == "transformer")
            cfg.screen.predictor = lc::causal::PredictorKind::transformer;
        cfg.screen.policy = conditioning == "fixed" ? lc::causal::ConditioningPolicy::fixed
                                                    : lc::causal::ConditioningPolicy::mutual;
        if (!candidates_csv.empty()) {
            std::string cur;
            for (char ch : candidates_csv + ",") {
                if (ch == ',') {
                    if (!cur.empty()) cfg.candidates.push_back(cur);
                    cur.clear();
                } else {
                    cur.push_back(ch);
                }
            }
        }
        cfg.max_lag = max_lag;
        cfg.allow_negative = allow_negative;
        cfg.keep_original = keep_original;
        cfg.horizons = parse_size_list(horizons_csv);
        cfg.train.learning_rate = learning_rate;
        cfg.train.batch_size = batch_size;
        cfg.train.max_steps = max_steps;
        cfg.train.patience = patience;
        cfg.train.eval_every = eval_every;
        return cfg;
    };

    auto parse_kinds = [&]() {
        std::vector<pl::ModelEntry> entries;
        std::string cur;
        for (char ch : kind + ",") {
            if (ch == ',') {
                if (!cur.empty() && cur != "persistence") {
                    pl::ModelEntry e;
                    e.kind = lc::model::model_kind_from_name(cur);
                    e.config.window_len = window_len;
                    e.config.d_model = d_model;
                    e.config.n_heads = n_heads;
                    e.config.d_ff = d_ff;
                    e.config.n_layers = n_layers;
                    e.config.horizon = horizon;
                    entries.push_back(e);
                }
                cur.clear();
            } else {
                cur.push_back(ch);
            }
        }
        return entries;
    };

    if (*run) {
        return guarded([&] {
            pl::PipelineConfig cfg = pl::load_config(config_path);
            if (!output_dir.empty()) cfg.output_dir = output_dir;
            pl::run_pipeline(cfg);
            std::cout << "pipeline completed; artifacts in " << cfg.output_dir << '\n';
        });
    }
    if (*prep) {
        return guarded([&] {
            auto cfg = stage_config();
            std::filesystem::create_directories(work_dir);
            pl::stage_preprocess(cfg, work_dir);
        });
    }
    if (*screen) {
        return guarded([&] {
            auto cfg = stage_config();
            if (cfg.input_path.empty()) cfg.input_path = work_dir + "/cleaned.csv";
            pl::stage_screen(cfg, work_dir);
        });
    }
    if (*dly) {
        return guarded([&] {
            auto cfg = stage_config();
            pl::stage_delay(cfg, work_dir, dump_profiles);
        });
    }
    if (*aug) {
        return guarded([&] {
            auto cfg = stage_config();
            pl::stage_augment(cfg, work_dir);
        });
    }
    if (*trn) {
        return guarded([&] {
            auto cfg = stage_config();
            cfg.models = parse_kinds();
            lc::require(!cfg.models.empty(), lc::ErrorCode::ConfigError, "no trainable kind given");
            pl::stage_train(cfg, work_dir);
        });
    }
    if (*prd) {
        return guarded([&] {
            auto cfg = stage_config();
            cfg.models = parse_kinds();
            pl::stage_predict(cfg, work_dir);
        });
    }
    if (*evl || *rep) {
        return guarded([&] {
            auto cfg = stage_config();
            cfg.models = parse_kinds();
            pl::stage_evaluate(cfg, work_dir);
        });
    }
    if (*syn) {
        return guarded([&] {
            lc::SeriesFrame frame;
            nlohmann::json truth;
            if (preset == "var10") {
                auto [f, edges] = lc::synth::preset_var10(n_samples ? n_samples : 20000, seed);
                frame = std::move(f);
                nlohmann::json ej = nlohmann::json::array();
                for (const auto& e : edges)
                    ej.push_back({{"from", "v" + std::to_string(e.from)},
                                  {"to", "v" + std::to_string(e.to)},
                                  {"lag", e.lag},
                                  {"coeff", e.coeff}});
                truth = {{"target", "v0"}, {"edges", ej}};
            } else {
                lc::synth::GeneratorSpec spec;
                if (preset == "fig5")
                    spec = lc::synth::preset_fig5(n_samples ? n_samples : 20000, seed, noise);
                else if (preset == "delays")
                    spec = lc::synth::preset_delays(n_samples ? n_samples : 100000, seed, noise);
                else if (preset == "forecast")
                    spec = lc::synth::preset_forecast(n_samples ? n_samples : 50000, seed);
                else
                    lc::fail(lc::ErrorCode::ConfigError, "unknown preset '" + preset + "'");
                auto [f, t] = lc::synth::generate(spec);
                frame = std::move(f);
                truth = lc::synth::ground_truth_to_json(t);
            }
            lc::save_csv(frame, out_path);
            if (!truth_path.empty())
                lc::eval::write_text_file(truth_path, truth.dump(2) + "\n");
            std::cout << "wrote " << frame.n_rows() << " rows x " << frame.n_vars()
                      << " variables to " << out_path << '\n';
        });
    }
    return pl::kExitOk;
}
