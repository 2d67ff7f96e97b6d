#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "levelcast/causal.hpp"
#include "levelcast/delay.hpp"
#include "levelcast/eval.hpp"
#include "levelcast/plot.hpp"
#include "levelcast/series.hpp"
#include "levelcast/synth.hpp"
#include "levelcast/train.hpp"

namespace levelcast::pipeline {

constexpr const char* kCodeVersion = "levelcast 0.1.0";

// exit codes for the CLI
constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;
constexpr int kExitStageFailure = 4;

inline int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::ConfigError:
        case ErrorCode::InvalidArgument:
        case ErrorCode::InvalidSpec:
            return kExitConfigError;
        case ErrorCode::MalformedHeader:
        case ErrorCode::MalformedRow:
        case ErrorCode::DuplicateTimestamp:
        case ErrorCode::NonMonotonicTimestamp:
        case ErrorCode::IrregularTimestamp:
        case ErrorCode::SchemaMismatch:
        case ErrorCode::UnknownVariable:
        case ErrorCode::GapPresent:
        case ErrorCode::GapTooLong:
            return kExitDataError;
        default:
            return kExitStageFailure;
    }
}

// ---------------------------------------------------------------------------
// Logging (stderr, gated by LEVELCAST_LOG = quiet | info | debug)
// ---------------------------------------------------------------------------

inline int log_level() {
    static const int level = [] {
        const char* env = std::getenv("LEVELCAST_LOG");
        if (!env) return 1;
        const std::string v(env);
        if (v == "quiet") return 0;
        if (v == "debug") return 2;
        return 1;
    }();
    return level;
}

inline void log_info(const std::string& msg) {
    if (log_level() >= 1) std::cerr << "[levelcast] " << msg << '\n';
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= 2) std::cerr << "[levelcast:debug] " << msg << '\n';
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelEntry {
    model::ModelKind kind = model::ModelKind::transformer;
    model::ModelConfig config;
};

struct PipelineConfig {
    std::string input_path;
    std::string target;
    std::vector<std::string> candidates;  ///< empty means "all other variables"
    std::uint64_t seed = 0;
    std::string output_dir = ".";

    // preprocess
    std::size_t max_gap = 10;
    std::size_t outlier_window = 11;
    double outlier_n_sigmas = 3.0;
    std::size_t smooth_window = 5;
    SplitSpec split;

    causal::ScreenSpec screen;

    // delay
    std::size_t max_lag = 600;
    bool allow_negative = false;

    // augmentation
    bool keep_original = true;

    std::vector<ModelEntry> models;
    model::TrainConfig train;
    std::vector<std::size_t> horizons{1, 5, 10, 20, 30, 40, 60};
};

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["input"] = c.input_path;
    j["target"] = c.target;
    if (c.candidates.empty())
        j["candidates"] = "all";
    else
        j["candidates"] = c.candidates;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["preprocess"] = {{"max_gap", c.max_gap},
                       {"outlier_window", c.outlier_window},
                       {"outlier_n_sigmas", c.outlier_n_sigmas},
                       {"smooth_window", c.smooth_window}};
    j["split"] = {{"train", c.split.train_fraction},
                  {"validation", c.split.validation_fraction},
                  {"test", c.split.test_fraction}};
    j["screen"] = {{"alpha", c.screen.alpha},
                   {"history_len", c.screen.history_len},
                   {"predictor", c.screen.predictor == causal::PredictorKind::linear_ar
                                     ? "linear-ar"
                                     : (c.screen.predictor == causal::PredictorKind::lstm
                                            ? "lstm"
                                            : "transformer")},
                   {"conditioning",
                    c.screen.policy == causal::ConditioningPolicy::mutual ? "mutual" : "fixed"},
                   {"fixed_conditioning", c.screen.fixed_conditioning}};
    j["delay"] = {{"max_lag", c.max_lag}, {"allow_negative", c.allow_negative}};
    j["augment"] = {{"keep_original", c.keep_original}};
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : c.models) {
        nlohmann::json mj = model::model_config_to_json(m.config);
        mj["kind"] = model::model_kind_name(m.kind);
        mj.erase("n_features");  // derived from the augmented frame
        mj.erase("seed");        // derived from the pipeline seed
        models.push_back(mj);
    }
    j["models"] = models;
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"max_steps", c.train.max_steps},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"eps", c.train.eps},
                  {"patience", c.train.patience},
                  {"eval_every", c.train.eval_every}};
    j["horizons"] = c.horizons;
    return j;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        c.input_path = j.at("input").get<std::string>();
        c.target = j.at("target").get<std::string>();
        if (j.contains("candidates") && j["candidates"].is_array())
            c.candidates = j["candidates"].get<std::vector<std::string>>();
        c.seed = j.value("seed", std::uint64_t{0});
        c.output_dir = j.value("output_dir", std::string("."));
        if (j.contains("preprocess")) {
            const auto& p = j["preprocess"];
            c.max_gap = p.value("max_gap", c.max_gap);
            c.outlier_window = p.value("outlier_window", c.outlier_window);
            c.outlier_n_sigmas = p.value("outlier_n_sigmas", c.outlier_n_sigmas);
            c.smooth_window = p.value("smooth_window", c.smooth_window);
        }
        if (j.contains("split")) {
            const auto& s = j["split"];
            c.split.train_fraction = s.value("train", c.split.train_fraction);
            c.split.validation_fraction = s.value("validation", c.split.validation_fraction);
            c.split.test_fraction = s.value("test", c.split.test_fraction);
        }
        if (j.contains("screen")) {
            const auto& s = j["screen"];
            c.screen.alpha = s.value("alpha", c.screen.alpha);
            c.screen.history_len = s.value("history_len", c.screen.history_len);
            const std::string pred = s.value("predictor", std::string("linear-ar"));
            if (pred == "linear-ar")
                c.screen.predictor = causal::PredictorKind::linear_ar;
            else if (pred == "lstm")
                c.screen.predictor = causal::PredictorKind::lstm;
            else if (pred == "transformer")
                c.screen.predictor = causal::PredictorKind::transformer;
            else
                fail(ErrorCode::ConfigError, "unknown screen predictor '" + pred + "'");
            const std::string pol = s.value("conditioning", std::string("mutual"));
            if (pol == "mutual")
                c.screen.policy = causal::ConditioningPolicy::mutual;
            else if (pol == "fixed")
                c.screen.policy = causal::ConditioningPolicy::fixed;
            else
                fail(ErrorCode::ConfigError, "unknown conditioning policy '" + pol + "'");
            if (s.contains("fixed_conditioning"))
                c.screen.fixed_conditioning = s["fixed_conditioning"].get<std::vector<std::string>>();
        }
        if (j.contains("delay")) {
            c.max_lag = j["delay"].value("max_lag", c.max_lag);
            c.allow_negative = j["delay"].value("allow_negative", c.allow_negative);
        }
        if (j.contains("augment")) c.keep_original = j["augment"].value("keep_original", true);
        if (j.contains("models")) {
            for (const auto& mj : j["models"]) {
                ModelEntry e;
                e.kind = model::model_kind_from_name(mj.at("kind").get<std::string>());
                e.config.window_len = mj.value("window_len", std::size_t{60});
                e.config.d_model = mj.value("d_model", std::size_t{32});
                e.config.n_heads = mj.value("n_heads", std::size_t{2});
                e.config.d_ff = mj.value("d_ff", std::size_t{64});
                e.config.n_layers = mj.value("n_layers", std::size_t{2});
                e.config.horizon = mj.value("horizon", std::size_t{1});
                e.config.dropout = mj.value("dropout", 0.0);
                c.models.push_back(e);
            }
        }
        if (j.contains("train")) {
            const auto& t = j["train"];
            c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
            c.train.batch_size = t.value("batch_size", c.train.batch_size);
            c.train.max_steps = t.value("max_steps", c.train.max_steps);
            c.train.beta1 = t.value("beta1", c.train.beta1);
            c.train.beta2 = t.value("beta2", c.train.beta2);
            c.train.eps = t.value("eps", c.train.eps);
            c.train.patience = t.value("patience", c.train.patience);
            c.train.eval_every = t.value("eval_every", c.train.eval_every);
        }
        if (j.contains("horizons")) c.horizons = j["horizons"].get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("bad config: ") + e.what());
    }
    return c;
}

inline PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::ConfigError, "cannot open config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ConfigError, std::string("config is not valid json: ") + e.what());
    }
    return config_from_json(j);
}

/// Full validation before any compute: structural checks plus existence of
/// every referenced variable in the input file.
inline void validate_config(const PipelineConfig& c) {
    require(!c.input_path.empty(), ErrorCode::ConfigError, "input path missing");
    require(!c.target.empty(), ErrorCode::ConfigError, "target variable missing");
    c.split.validate();
    require(c.screen.alpha > 0 && c.screen.alpha < 1, ErrorCode::ConfigError,
            "alpha must lie in (0,1)");
    require(c.max_lag >= 1, ErrorCode::ConfigError, "max_lag must be >= 1");
    require(!c.horizons.empty(), ErrorCode::ConfigError, "horizons list is empty");
    c.train.validate();
    require(c.outlier_window >= 3 && c.outlier_window % 2 == 1, ErrorCode::ConfigError,
            "outlier_window must be odd and >= 3");
    require(c.smooth_window >= 1 && c.smooth_window % 2 == 1, ErrorCode::ConfigError,
            "smooth_window must be odd and >= 1");

    const SeriesFrame frame = load_csv(c.input_path);
    require(frame.has(c.target), ErrorCode::ConfigError,
            "target '" + c.target + "' not present in input");
    for (const auto& cand : c.candidates)
        require(frame.has(cand), ErrorCode::ConfigError,
                "candidate '" + cand + "' not present in input");
    for (const auto& z : c.screen.fixed_conditioning)
        require(frame.has(z), ErrorCode::ConfigError,
                "conditioning variable '" + z + "' not present in input");
}

// ---------------------------------------------------------------------------
// Hashing and the run manifest
// ---------------------------------------------------------------------------

inline std::string hash_bytes(std::string_view bytes) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "fnv1a:%016llx",
                  static_cast<unsigned long long>(fnv1a(bytes)));
    return buf;
}

inline std::string hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot hash '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return hash_bytes(ss.str());
}

/// Config serialization with the output directory removed, so the same run
/// into two different directories hashes identically.
inline std::string canonical_config(const PipelineConfig& c) {
    nlohmann::json j = config_to_json(c);
    j.erase("output_dir");
    return j.dump();
}

struct StageRecord {
    std::string name;
    std::string status;  ///< "completed" or "failed"
    std::string error;
    std::vector<std::pair<std::string, std::string>> outputs;  ///< (file, hash)
};

struct Manifest {
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string input_hash;
    std::string run_hash;
    std::vector<StageRecord> stages;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : m.stages) {
        nlohmann::json outputs;
        for (const auto& [file, hash] : s.outputs) outputs[file] = hash;
        nlohmann::json rec = {{"name", s.name}, {"status", s.status}, {"outputs", outputs}};
        if (!s.error.empty()) rec["error"] = s.error;
        stages.push_back(rec);
    }
    return {{"format_version", 1},   {"code_version", kCodeVersion}, {"seed", m.seed},
            {"config_hash", m.config_hash}, {"input_hash", m.input_hash}, {"run_hash", m.run_hash},
            {"stages", stages}};
}

inline void write_manifest(const Manifest& m, const std::string& dir) {
    eval::write_text_file(dir + "/manifest.json", manifest_to_json(m).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stage implementations. Every stage reads its inputs from disk and persists
// its outputs, so individual stages reproduce exactly what run_pipeline does.
// ---------------------------------------------------------------------------

namespace detail {

inline SeriesFrame take_rows(const SeriesFrame& frame, std::size_t begin, std::size_t count) {
    SeriesFrame part;
    part.sample_period_s = frame.sample_period_s;
    part.names = frame.names;
    part.timestamps.assign(frame.timestamps.begin() + static_cast<std::ptrdiff_t>(begin),
                           frame.timestamps.begin() + static_cast<std::ptrdiff_t>(begin + count));
    for (const auto& col : frame.columns)
        part.columns.emplace_back(col.begin() + static_cast<std::ptrdiff_t>(begin),
                                  col.begin() + static_cast<std::ptrdiff_t>(begin + count));
    return part;
}

inline SeriesFrame select_columns(const SeriesFrame& frame, const std::vector<std::string>& names) {
    SeriesFrame out;
    out.sample_period_s = frame.sample_period_s;
    out.timestamps = frame.timestamps;
    for (const auto& n : names) {
        out.names.push_back(n);
        out.columns.push_back(frame.column(n));
    }
    return out;
}

inline void save_standardization(const StandardizationParams& p, std::size_t fit_rows,
                                 const std::string& path) {
    nlohmann::json j = {{"names", p.names}, {"means", p.means}, {"scales", p.scales},
                        {"fit_rows", fit_rows}};
    eval::write_text_file(path, j.dump(2) + "\n");
}

inline StandardizationParams load_standardization(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    StandardizationParams p;
    p.names = j.at("names").get<std::vector<std::string>>();
    p.means = j.at("means").get<std::vector<double>>();
    p.scales = j.at("scales").get<std::vector<double>>();
    return p;
}

inline nlohmann::json causal_report_to_json(const causal::CausalReport& r) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : r.entries) {
        nlohmann::json ej = {{"candidate", e.candidate}, {"p_value", e.p_value},
                             {"statistic", e.statistic}, {"retained", e.retained},
                             {"n_pairs", e.n_pairs},     {"mae_with", e.mae_with},
                             {"mae_without", e.mae_without}};
        if (e.all_zero_differences) ej["all_zero_differences"] = true;
        if (!e.error.empty()) ej["error"] = e.error;
        entries.push_back(ej);
    }
    return {{"target", r.target}, {"alpha", r.alpha}, {"entries", entries}};
}

inline causal::CausalReport causal_report_from_json(const nlohmann::json& j) {
    causal::CausalReport r;
    r.target = j.at("target").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    for (const auto& ej : j.at("entries")) {
        causal::CausalEntry e;
        e.candidate = ej.at("candidate").get<std::string>();
        e.p_value = ej.at("p_value").get<double>();
        e.statistic = ej.at("statistic").get<double>();
        e.retained = ej.at("retained").get<bool>();
        e.n_pairs = ej.at("n_pairs").get<std::size_t>();
        e.mae_with = ej.at("mae_with").get<double>();
        e.mae_without = ej.at("mae_without").get<double>();
        e.all_zero_differences = ej.value("all_zero_differences", false);
        e.error = ej.value("error", std::string());
        r.entries.push_back(e);
    }
    return r;
}

inline nlohmann::json delay_table_to_json(const delay::DelayTable& t) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : t.entries) {
        nlohmann::json ej = {{"variable", e.variable}, {"optimal_lag", e.optimal_lag},
                             {"peak_value", e.peak_value}, {"sign", e.sign}};
        if (!e.error.empty()) ej["error"] = e.error;
        entries.push_back(ej);
    }
    return {{"target", t.target}, {"max_lag", t.max_lag}, {"entries", entries}};
}

inline delay::DelayTable delay_table_from_json(const nlohmann::json& j) {
    delay::DelayTable t;
    t.target = j.at("target").get<std::string>();
    t.max_lag = j.at("max_lag").get<std::size_t>();
    for (const auto& ej : j.at("entries")) {
        delay::DelayEntry e;
        e.variable = ej.at("variable").get<std::string>();
        e.optimal_lag = ej.at("optimal_lag").get<std::size_t>();
        e.peak_value = ej.at("peak_value").get<double>();
        e.sign = ej.at("sign").get<int>();
        e.error = ej.value("error", std::string());
        t.entries.push_back(e);
    }
    return t;
}

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::IoError, "bad json in '" + path + "': " + e.what());
    }
    return j;
}

/// Variables the model stages use: the retained candidates when a screening
/// report is present in the working directory, otherwise every non-target
/// variable.
inline std::vector<std::string> screened_variables(const PipelineConfig& cfg,
                                                   const SeriesFrame& frame,
                                                   const std::string& dir) {
    const std::string causal_path = dir + "/causal.json";
    if (std::filesystem::exists(causal_path)) {
        const causal::CausalReport report = causal_report_from_json(load_json(causal_path));
        std::vector<std::string> retained;
        for (const auto& e : report.entries)
            if (e.retained) retained.push_back(e.candidate);
        return retained;
    }
    std::vector<std::string> all;
    for (const auto& n : frame.names)
        if (n != cfg.target) all.push_back(n);
    return all;
}

inline std::vector<std::string> candidate_list(const PipelineConfig& cfg, const SeriesFrame& frame) {
    if (!cfg.candidates.empty()) return cfg.candidates;
    std::vector<std::string> all;
    for (const auto& n : frame.names)
        if (n != cfg.target) all.push_back(n);
    return all;
}

inline std::string checkpoint_name(model::ModelKind kind) {
    return std::string("model_") + model::model_kind_name(kind) + ".json";
}

inline std::string predictions_name(const std::string& model_name) {
    return "predictions_" + model_name + ".csv";
}

inline std::size_t longest_window_need(const PipelineConfig& cfg) {
    std::size_t need = 1;
    std::size_t max_h = 1;
    for (std::size_t h : cfg.horizons) max_h = std::max(max_h, h);
    for (const auto& m : cfg.models)
        need = std::max(need, m.config.window_len + std::max(m.config.horizon, max_h));
    if (cfg.models.empty()) need = 60 + max_h;
    return need;
}

inline std::size_t persistence_window(const PipelineConfig& cfg) {
    std::size_t w = 0;
    for (const auto& m : cfg.models) w = std::max(w, m.config.window_len);
    return w == 0 ? 60 : w;
}

}  // namespace detail

/// preprocess: load -> interpolate -> outlier removal -> smoothing; persists
/// the cleaned physical-unit series plus standardization parameters fitted on
/// the training fraction.
inline std::vector<std::string> stage_preprocess(const PipelineConfig& cfg, const std::string& dir) {
    SeriesFrame frame = load_csv(cfg.input_path);
    log_debug("loaded " + std::to_string(frame.n_rows()) + " rows, " +
              std::to_string(frame.n_vars()) + " variables");
    frame = interpolate_missing(frame, cfg.max_gap);
    frame = remove_outliers(frame, cfg.outlier_window, cfg.outlier_n_sigmas);
    frame = smooth(frame, cfg.smooth_window);

    const SplitSizes sizes = split_sizes(frame.n_rows(), cfg.split);
    const auto [std_frame, params] = standardize(frame, 0, sizes.train);
    (void)std_frame;  // screening/delay stages re-apply the params on load

    save_csv(frame, dir + "/cleaned.csv");
    detail::save_standardization(params, sizes.train, dir + "/standardization.json");
    return {"cleaned.csv", "standardization.json"};
}

/// screen: Granger-screen every candidate on the standardized cleaned series.
inline std::vector<std::string> stage_screen(const PipelineConfig& cfg, const std::string& dir) {
    const SeriesFrame cleaned = load_csv(dir + "/cleaned.csv");
    const StandardizationParams params = detail::load_standardization(dir + "/standardization.json");
    const SeriesFrame std_frame = apply_standardization(cleaned, params);

    causal::ScreenSpec spec = cfg.screen;
    spec.seed = derive_seed(cfg.seed, "screen");
    const causal::CausalReport report =
        causal::screen_all(std_frame, cfg.target, detail::candidate_list(cfg, std_frame), spec);
    std::size_t kept = 0;
    for (const auto& e : report.entries) kept += e.retained ? 1 : 0;
    log_info("screen: retained " + std::to_string(kept) + "/" +
             std::to_string(report.entries.size()) + " candidates");
    eval::write_text_file(dir + "/causal.json",
                          detail::causal_report_to_json(report).dump(2) + "\n");
    return {"causal.json"};
}

/// delay: per-variable optimal lag against the target on standardized data.
inline std::vector<std::string> stage_delay(const PipelineConfig& cfg, const std::string& dir,
                                            bool dump_profiles = false) {
    const SeriesFrame cleaned = load_csv(dir + "/cleaned.csv");
    const StandardizationParams params = detail::load_standardization(dir + "/standardization.json");
    const SeriesFrame std_frame = apply_standardization(cleaned, params);

    const std::vector<std::string> variables = detail::screened_variables(cfg, std_frame, dir);
    const delay::DelayTable table =
        delay::build_delay_table(std_frame, cfg.target, variables, cfg.max_lag, cfg.allow_negative);
    for (const auto& e : table.entries)
        log_debug("delay '" + e.variable + "': lag " + std::to_string(e.optimal_lag) + " peak " +
                  std::to_string(e.peak_value));
    eval::write_text_file(dir + "/delays.json", detail::delay_table_to_json(table).dump(2) + "\n");

    std::vector<std::string> outputs{"delays.json"};
    if (dump_profiles) {
        for (const auto& e : table.entries) {
            if (!e.error.empty()) continue;
            std::string csv = "lag,correlation\n";
            char buf[64];
            for (std::size_t l = 0; l < e.profile.size(); ++l) {
                std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", l, e.profile[l]);
                csv += buf;
            }
            const std::string name = "profile_" + e.variable + ".csv";
            eval::write_text_file(dir + "/" + name, csv);
            outputs.push_back(name);
        }
    }
    return outputs;
}

/// augment: restrict to target + screened variables and add the lagged
/// copies named by the delay table.
inline std::vector<std::string> stage_augment(const PipelineConfig& cfg, const std::string& dir) {
    const SeriesFrame cleaned = load_csv(dir + "/cleaned.csv");
    const delay::DelayTable table = detail::delay_table_from_json(detail::load_json(dir + "/delays.json"));

    std::vector<std::string> keep{cfg.target};
    for (const auto& e : table.entries)
        if (e.error.empty() && cleaned.has(e.variable) && e.variable != cfg.target)
            keep.push_back(e.variable);
    const SeriesFrame selected = detail::select_columns(cleaned, keep);

    delay::AugmentSpec spec;
    spec.keep_original = cfg.keep_original;
    const SeriesFrame augmented = delay::augment_with_lags(selected, table, spec);
    log_info("augment: " + std::to_string(augmented.n_vars()) + " columns, " +
             std::to_string(augmented.n_rows()) + " rows");
    save_csv(augmented, dir + "/augmented.csv");
    return {"augmented.csv"};
}

/// train: fit every configured model on the augmented series and persist
/// checkpoints (config, standardization, tensors, seed derivation).
inline std::vector<std::string> stage_train(const PipelineConfig& cfg, const std::string& dir) {
    const SeriesFrame augmented = load_csv(dir + "/augmented.csv");
    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < cfg.models.size(); ++i) {
        const ModelEntry& entry = cfg.models[i];
        model::ModelConfig mcfg = entry.config;
        mcfg.n_features = augmented.n_vars();
        mcfg.seed = derive_seed(cfg.seed, "train", i);

        const SplitFrames parts =
            split(augmented, cfg.split, mcfg.window_len + mcfg.horizon);
        const auto [std_train, params] = standardize(parts.train, 0, parts.train.n_rows());
        const SeriesFrame std_val = apply_standardization(parts.validation, params);

        log_info(std::string("train: ") + model::model_kind_name(entry.kind) + " (" +
                 std::to_string(mcfg.n_features) + " features)");
        const model::TrainResult result =
            model::train(entry.kind, mcfg, cfg.train, std_train, std_val, cfg.target);
        log_info(std::string("train: ") + model::model_kind_name(entry.kind) + " best val mse " +
                 std::to_string(result.best_val_mse) + " at step " +
                 std::to_string(result.best_step));

        model::Checkpoint ck;
        ck.kind = entry.kind;
        ck.config = mcfg;
        ck.target = cfg.target;
        ck.feature_names = augmented.names;
        ck.standardization = params;
        ck.params = result.params;
        const std::string name = detail::checkpoint_name(entry.kind);
        model::save_checkpoint(ck, dir + "/" + name);
        outputs.push_back(name);
    }
    return outputs;
}

namespace detail {

inline void write_predictions_csv(const model::ForecastResult& res,
                                  const std::vector<std::size_t>& horizons,
                                  const std::string& path) {
    std::vector<std::size_t> cols;
    for (std::size_t h : horizons)
        if (std::find(res.horizons.begin(), res.horizons.end(), h) != res.horizons.end())
            cols.push_back(h);
    require(!cols.empty(), ErrorCode::InvalidArgument, "no requested horizon is available");

    std::string out = "row";
    for (std::size_t h : cols)
        out += ",target_h" + std::to_string(h) + ",pred_h" + std::to_string(h);
    out += "\n";
    char buf[64];
    std::vector<double> t, p;
    std::vector<std::pair<std::vector<double>, std::vector<double>>> columns;
    for (std::size_t h : cols) {
        eval::horizon_column(res, h, t, p);
        columns.emplace_back(t, p);
    }
    for (std::size_t i = 0; i < res.n_samples(); ++i) {
        out += std::to_string(i);
        for (auto& [tc, pc] : columns) {
            std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", tc[i], pc[i]);
            out += buf;
        }
        out += "\n";
    }
    eval::write_text_file(path, out);
}

inline model::ForecastResult read_predictions_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open '" + path + "'");
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::MalformedHeader,
            "empty predictions file");
    const auto header = levelcast::detail::split_csv_line(line);
    require(header.size() >= 3 && header[0] == "row" && header.size() % 2 == 1,
            ErrorCode::MalformedHeader, "bad predictions header");

    model::ForecastResult res;
    for (std::size_t c = 1; c < header.size(); c += 2) {
        const std::string& th = header[c];
        require(th.rfind("target_h", 0) == 0, ErrorCode::MalformedHeader,
                "bad predictions column '" + th + "'");
        res.horizons.push_back(static_cast<std::size_t>(std::stoul(th.substr(8))));
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = levelcast::detail::split_csv_line(line);
        require(cells.size() == header.size(), ErrorCode::MalformedRow,
                "ragged predictions row");
        std::vector<double> t(res.horizons.size()), p(res.horizons.size());
        for (std::size_t k = 0; k < res.horizons.size(); ++k) {
            double tv, pv;
            require(levelcast::detail::parse_double(cells[1 + 2 * k], tv) &&
                        levelcast::detail::parse_double(cells[2 + 2 * k], pv),
                    ErrorCode::MalformedRow, "non-numeric prediction cell");
            t[k] = tv;
            p[k] = pv;
        }
        res.targets.push_back(std::move(t));
        res.predictions.push_back(std::move(p));
    }
    return res;
}

inline std::vector<std::string> model_names(const PipelineConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& m : cfg.models) names.push_back(model::model_kind_name(m.kind));
    names.push_back("persistence");
    return names;
}

}  // namespace detail

/// predict: sliding-window forecasts on the test split for every trained
/// model plus the persistence baseline; persisted per model.
inline std::vector<std::string> stage_predict(const PipelineConfig& cfg, const std::string& dir) {
    const SeriesFrame augmented = load_csv(dir + "/augmented.csv");
    std::vector<std::string> outputs;

    std::size_t max_horizon = 1;
    for (std::size_t h : cfg.horizons) max_horizon = std::max(max_horizon, h);

    for (const auto& entry : cfg.models) {
        const model::Checkpoint ck =
            model::load_checkpoint(dir + "/" + detail::checkpoint_name(entry.kind));
        require(ck.feature_names == augmented.names, ErrorCode::SchemaMismatch,
                "augmented columns changed since training");
        const SplitFrames parts = split(augmented, cfg.split, ck.config.window_len + ck.config.horizon);
        const SeriesFrame std_test = apply_standardization(parts.test, ck.standardization);
        const model::ForecastResult res = model::predict_horizon(
            entry.kind, ck.params, ck.config, std_test, ck.standardization, ck.target);
        const std::string name = detail::predictions_name(model::model_kind_name(entry.kind));
        detail::write_predictions_csv(res, cfg.horizons, dir + "/" + name);
        outputs.push_back(name);
    }

    // persistence baseline on the same split
    {
        model::ModelConfig pcfg;
        pcfg.window_len = detail::persistence_window(cfg);
        pcfg.n_features = augmented.n_vars();
        pcfg.horizon = max_horizon;
        const SplitFrames parts = split(augmented, cfg.split, pcfg.window_len + pcfg.horizon);
        const auto [std_train, params] = standardize(parts.train, 0, parts.train.n_rows());
        (void)std_train;
        const SeriesFrame std_test = apply_standardization(parts.test, params);
        const model::ForecastResult res = model::predict_horizon(
            model::ModelKind::persistence, model::ParameterSet{}, pcfg, std_test, params, cfg.target);
        const std::string name = detail::predictions_name("persistence");
        detail::write_predictions_csv(res, cfg.horizons, dir + "/" + name);
        outputs.push_back(name);
    }
    return outputs;
}

/// evaluate: metrics per (model, horizon) from the persisted predictions,
/// comparison tables against the baseline, plots.
inline std::vector<std::string> stage_evaluate(const PipelineConfig& cfg, const std::string& dir) {
    std::vector<std::string> outputs;
    std::vector<std::pair<std::string, model::ForecastResult>> loaded;
    for (const auto& name : detail::model_names(cfg))
        loaded.emplace_back(name,
                            detail::read_predictions_csv(dir + "/" + detail::predictions_name(name)));

    std::vector<std::pair<std::string, const model::ForecastResult*>> results;
    for (auto& [name, res] : loaded) results.emplace_back(name, &res);
    const eval::EvalReport report = eval::evaluate_horizons(results, cfg.horizons);

    eval::write_text_file(dir + "/eval.csv", eval::eval_report_to_csv(report));
    outputs.push_back("eval.csv");
    eval::write_text_file(dir + "/eval.json", eval::eval_report_to_json(report).dump(2) + "\n");
    outputs.push_back("eval.json");

    // baseline comparisons
    std::string cmp = "model,baseline,metric,horizon,model_value,baseline_value,difference,improvement\n";
    char buf[256];
    for (const auto& [name, res] : loaded) {
        if (name == "persistence" || !report.has_model(name)) continue;
        for (const std::string metric : {"mae", "mse", "mape"}) {
            for (const auto& row : eval::compare(report, name, "persistence", metric)) {
                std::snprintf(buf, sizeof(buf), "%s,persistence,%s,%zu,%.17g,%.17g,%.17g,%.17g\n",
                              name.c_str(), metric.c_str(), row.horizon, row.value_a, row.value_b,
                              row.difference, row.improvement);
                cmp += buf;
            }
        }
    }
    eval::write_text_file(dir + "/comparisons.csv", cmp);
    outputs.push_back("comparisons.csv");

    // plots at the largest requested horizon each model provides
    for (const auto& [name, res] : loaded) {
        std::size_t h_plot = 0;
        for (std::size_t h : cfg.horizons)
            if (std::find(res.horizons.begin(), res.horizons.end(), h) != res.horizons.end())
                h_plot = std::max(h_plot, h);
        if (h_plot == 0) continue;
        std::vector<double> t, p;
        eval::horizon_column(res, h_plot, t, p);
        const std::size_t n_plot = std::min<std::size_t>(t.size(), 2000);
        std::vector<double> t_head(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n_plot));
        std::vector<double> p_head(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(n_plot));

        const std::string overlay = "prediction_overlay_" + name + ".svg";
        eval::write_text_file(
            dir + "/" + overlay,
            plot::line_chart_svg({{"truth", "black", &t_head}, {name, "crimson", &p_head}},
                                 name + " vs truth, horizon " + std::to_string(h_plot),
                                 cfg.target));
        outputs.push_back(overlay);

        const eval::ErrorDistribution d = eval::error_distribution(t, p);
        const std::string hist_svg = "error_histogram_" + name + ".svg";
        eval::write_text_file(dir + "/" + hist_svg,
                              plot::histogram_svg(d, name + " error, horizon " +
                                                         std::to_string(h_plot)));
        outputs.push_back(hist_svg);
        const std::string hist_csv = "error_histogram_" + name + ".csv";
        eval::write_text_file(dir + "/" + hist_csv, eval::histogram_to_csv(d));
        outputs.push_back(hist_csv);
    }
    return outputs;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

/// Run the five-stage pipeline end to end (predict folds into evaluate).
/// Every stage consumes only persisted artifacts, the manifest records one
/// hash per output file, and a failing stage aborts with partial artifacts
/// retained.
inline Manifest run_pipeline(const PipelineConfig& cfg) {
    validate_config(cfg);
    const std::string dir = cfg.output_dir;
    std::filesystem::create_directories(dir);

    Manifest manifest;
    manifest.seed = cfg.seed;
    manifest.config_hash = hash_bytes(canonical_config(cfg));
    manifest.input_hash = hash_file(cfg.input_path);
    manifest.run_hash =
        hash_bytes(canonical_config(cfg) + manifest.input_hash + kCodeVersion);

    struct Stage {
        const char* name;
        std::function<std::vector<std::string>()> run;
    };
    const std::vector<Stage> stages = {
        {"preprocess", [&] { return stage_preprocess(cfg, dir); }},
        {"screen", [&] { return stage_screen(cfg, dir); }},
        {"delay", [&] { return stage_delay(cfg, dir); }},
        {"augment", [&] { return stage_augment(cfg, dir); }},
        {"train", [&] { return stage_train(cfg, dir); }},
        {"evaluate",
         [&] {
             auto files = stage_predict(cfg, dir);
             auto more = stage_evaluate(cfg, dir);
             files.insert(files.end(), more.begin(), more.end());
             return files;
         }},
    };

    for (const auto& stage : stages) {
        log_info(std::string("stage ") + stage.name);
        StageRecord rec;
        rec.name = stage.name;
        try {
            const auto files = stage.run();
            rec.status = "completed";
            for (const auto& f : files) rec.outputs.emplace_back(f, hash_file(dir + "/" + f));
            manifest.stages.push_back(rec);
        } catch (const Error& e) {
            rec.status = "failed";
            rec.error = e.what();
            manifest.stages.push_back(rec);
            write_manifest(manifest, dir);
            throw;
        }
    }
    write_manifest(manifest, dir);
    return manifest;
}

}  // namespace levelcast::pipeline
