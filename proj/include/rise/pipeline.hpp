#pragma once

// End-to-end run: detect -> confusion -> train -> rerank -> evaluate. Every
// stage reads only the bundle and files written by earlier stages, so a run
// directory can be partially deleted and regenerated.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rise/confusion.hpp"
#include "rise/dataset_io.hpp"
#include "rise/embedder.hpp"
#include "rise/error.hpp"
#include "rise/hardness.hpp"
#include "rise/metrics.hpp"
#include "rise/rerank.hpp"

namespace rise {

struct EvalOptions {
    std::vector<std::size_t> topk{1, 3, 5};
    bool all_classes = false;

    MacroAverage average() const { return all_classes ? MacroAverage::AllClasses : MacroAverage::PresentClasses; }
};

struct RunConfig {
    fs::path manifest;
    fs::path output_dir;
    std::uint64_t seed = 0;
    HardnessOptions hardness;
    double neg_smoothing = kDefaultNegSmoothing;
    TrainConfig train;
    RerankOptions rerank;
    EvalOptions eval;
};

// A stage error: carries the stage name alongside the underlying cause.
class StageFailure : public std::runtime_error {
public:
    StageFailure(std::string stage, const std::string& cause)
        : std::runtime_error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

namespace detail {

template <typename T>
T json_get(const nlohmann::json& obj, const char* key, T fallback) {
    if (!obj.contains(key) || obj[key].is_null()) return fallback;
    try {
        return obj[key].get<T>();
    } catch (const nlohmann::json::exception&) {
        fail(ErrorCode::BadConfig, std::string("config field '") + key + "' has the wrong type");
    }
}

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingFile, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& cfg) {
    return {{"manifest", cfg.manifest.string()},
            {"output_dir", cfg.output_dir.string()},
            {"seed", cfg.seed},
            {"hardness",
             {{"threshold", cfg.hardness.threshold ? nlohmann::json(*cfg.hardness.threshold) : nlohmann::json(nullptr)},
              {"variance", to_string(cfg.hardness.variance)}}},
            {"confusion", {{"neg_smoothing", cfg.neg_smoothing}}},
            {"train",
             {{"lr", cfg.train.learning_rate},
              {"epochs", cfg.train.epochs},
              {"batch", cfg.train.batch_size},
              {"weighting", to_string(cfg.train.weighting)},
              {"tau", cfg.train.tau},
              {"mode", to_string(cfg.train.mode)},
              {"dim", cfg.train.embedding_dim}}},
            {"rerank", {{"sim_clamp", cfg.rerank.sim_clamp}}},
            {"eval", {{"topk", cfg.eval.topk}, {"all_classes", cfg.eval.all_classes}}}};
}

// Relative paths resolve against `base` (the config file's directory).
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base = {}) {
    if (!j.is_object()) fail(ErrorCode::BadConfig, "run config must be a JSON object");
    RunConfig cfg;
    const auto manifest = detail::json_get<std::string>(j, "manifest", "");
    if (manifest.empty()) fail(ErrorCode::BadConfig, "run config needs 'manifest'");
    cfg.manifest = fs::path(manifest).is_absolute() ? fs::path(manifest) : base / manifest;
    const auto out = detail::json_get<std::string>(j, "output_dir", "run");
    cfg.output_dir = fs::path(out).is_absolute() ? fs::path(out) : base / out;
    cfg.seed = detail::json_get<std::uint64_t>(j, "seed", 0);

    const auto h = j.value("hardness", nlohmann::json::object());
    if (h.contains("threshold") && !h["threshold"].is_null()) cfg.hardness.threshold = detail::json_get<double>(h, "threshold", 0.0);
    cfg.hardness.variance = parse_variance_kind(detail::json_get<std::string>(h, "variance", "population"));
    if (cfg.hardness.threshold) check_threshold(*cfg.hardness.threshold);

    const auto c = j.value("confusion", nlohmann::json::object());
    cfg.neg_smoothing = detail::json_get<double>(c, "neg_smoothing", kDefaultNegSmoothing);

    const auto t = j.value("train", nlohmann::json::object());
    cfg.train.learning_rate = detail::json_get<double>(t, "lr", cfg.train.learning_rate);
    cfg.train.epochs = detail::json_get<std::size_t>(t, "epochs", cfg.train.epochs);
    cfg.train.batch_size = detail::json_get<std::size_t>(t, "batch", cfg.train.batch_size);
    cfg.train.weighting = parse_weighting(detail::json_get<std::string>(t, "weighting", "confusion"));
    cfg.train.tau = detail::json_get<double>(t, "tau", cfg.train.tau);
    cfg.train.mode = parse_embedder_mode(detail::json_get<std::string>(t, "mode", "linear"));
    cfg.train.embedding_dim = detail::json_get<std::size_t>(t, "dim", 0);

    const auto r = j.value("rerank", nlohmann::json::object());
    cfg.rerank.sim_clamp = detail::json_get<bool>(r, "sim_clamp", false);

    const auto e = j.value("eval", nlohmann::json::object());
    cfg.eval.topk = detail::json_get<std::vector<std::size_t>>(e, "topk", cfg.eval.topk);
    cfg.eval.all_classes = detail::json_get<bool>(e, "all_classes", false);
    return cfg;
}

inline RunConfig load_run_config(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::slurp(path));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::BadConfig, "run config is not valid JSON: " + std::string(e.what()));
    }
    return run_config_from_json(j, path.parent_path());
}

// Seed and negative smoothing flow from the run config into training.
inline TrainConfig effective_train_config(const RunConfig& cfg) {
    TrainConfig t = cfg.train;
    t.seed = cfg.seed;
    t.neg_smoothing = cfg.neg_smoothing;
    return t;
}

inline void validate(const RunConfig& cfg) {
    if (!fs::exists(cfg.manifest)) fail(ErrorCode::MissingFile, "manifest not found: " + cfg.manifest.string());
    if (cfg.output_dir.empty()) fail(ErrorCode::BadConfig, "output_dir must be set");
    if (!(cfg.neg_smoothing >= 0.0)) fail(ErrorCode::BadConfig, "neg_smoothing must be >= 0");
    if (cfg.eval.topk.empty()) fail(ErrorCode::BadConfig, "eval.topk must list at least one k");
    validate(effective_train_config(cfg));
}

inline nlohmann::json summary_json(const MetricsReport& m) {
    return {{"macro_f1", m.macro_f1}, {"weighted_f1", m.weighted_f1}, {"n", m.n}};
}

inline nlohmann::json per_class_json(const MetricsReport& m, const LabelSet& labels) {
    auto out = nlohmann::json::array();
    for (const auto& c : m.per_class) {
        out.push_back({{"label", labels.name(c.label)},
                       {"precision", c.precision},
                       {"recall", c.recall},
                       {"f1", c.f1},
                       {"support", c.support}});
    }
    return out;
}

struct SubsetEval {
    MetricsReport baseline;
    MetricsReport reranked;
};

// Baseline = argmax of the original logits, reranked = stored prediction.
inline SubsetEval evaluate_subset(std::span<const RerankResult> results, std::span<const std::size_t> gold,
                                  std::size_t num_classes, MacroAverage average, bool hard_only) {
    if (results.size() != gold.size()) fail(ErrorCode::LengthMismatch, "results and gold differ in length");
    std::vector<std::size_t> g, base, rer;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (hard_only && !results[i].applied) continue;
        g.push_back(gold[i]);
        base.push_back(argmax(results[i].original_logits));
        rer.push_back(results[i].prediction);
    }
    return {f1_report(g, base, num_classes, average), f1_report(g, rer, num_classes, average)};
}

inline nlohmann::json topk_json(std::span<const TopKPoint> curve) {
    auto out = nlohmann::json::array();
    for (const auto& p : curve) out.push_back({{"k", p.k}, {"accuracy", p.accuracy}, {"macro_f1", p.macro_f1}});
    return out;
}

inline Matrix original_logits(std::span<const RerankResult> results) {
    if (results.empty()) return {};
    Matrix m(results.size(), results.front().original_logits.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (results[i].original_logits.size() != m.cols()) fail(ErrorCode::DimensionMismatch, "ragged logits in results");
        std::copy(results[i].original_logits.begin(), results[i].original_logits.end(), m.row(i).begin());
    }
    return m;
}

namespace stage {

inline const char* kHardness = "hardness.jsonl";
inline const char* kConfusion = "confusion.csv";
inline const char* kParams = "params.json";
inline const char* kResults = "results.jsonl";
inline const char* kReport = "report.json";
inline const char* kConfig = "config.json";

inline std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
    return out;
}

inline std::ifstream open_in(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingFile, "missing stage input " + path.string());
    return in;
}

inline void detect(const DatasetBundle& bundle, const RunConfig& cfg, const fs::path& dir) {
    auto out = open_out(dir / kHardness);
    write_hardness_jsonl(out, build_hardness_report(bundle, cfg.hardness));
}

inline void confusion(const DatasetBundle& bundle, const RunConfig& cfg, const fs::path& dir) {
    const auto dev = bundle.indices_of(Split::Dev);
    auto out = open_out(dir / kConfusion);
    write_confusion_csv(out, fit_confusion(bundle.logits(dev), bundle.gold(dev)), bundle.labels, cfg.neg_smoothing);
}

inline void train(const DatasetBundle& bundle, const RunConfig& cfg, const fs::path& dir) {
    auto in = open_in(dir / kConfusion);
    const auto loaded = read_confusion_csv(in, bundle.labels);
    TrainConfig t = effective_train_config(cfg);
    t.neg_smoothing = loaded.neg_smoothing;
    const auto result = train_embedder(bundle, loaded.profile, t);
    auto out = open_out(dir / kParams);
    out << params_to_json(result.params, result.loss_trace).dump(2) << '\n';
}

inline void rerank(const DatasetBundle& bundle, const RunConfig& cfg, const fs::path& dir) {
    auto hin = open_in(dir / kHardness);
    const auto hardness = read_hardness_jsonl(hin);
    auto pin = open_in(dir / kParams);
    const auto params = params_from_json(nlohmann::json::parse(pin));
    const auto results = predict_selective(bundle, hardness, params, cfg.rerank);
    auto out = open_out(dir / kResults);
    write_results_jsonl(out, results);
}

inline void evaluate(const DatasetBundle& bundle, const RunConfig& cfg, const fs::path& dir) {
    auto rin = open_in(dir / kResults);
    const auto results = read_results_jsonl(rin);
    auto hin = open_in(dir / kHardness);
    const auto hardness = read_hardness_jsonl(hin);
    auto pin = open_in(dir / kParams);
    const auto params_json = nlohmann::json::parse(pin);

    std::unordered_map<std::string, std::size_t> gold_by_id;
    for (const auto& ex : bundle.examples) gold_by_id.emplace(ex.id, ex.gold);
    std::vector<std::size_t> gold;
    for (const auto& r : results) gold.push_back(gold_by_id.at(r.id));

    const std::size_t C = bundle.num_classes();
    const auto avg = cfg.eval.average();
    const auto overall = evaluate_subset(results, gold, C, avg, false);
    const auto hard = evaluate_subset(results, gold, C, avg, true);
    // Cut-offs beyond the label count are dropped rather than failing the run.
    std::vector<std::size_t> ks;
    for (std::size_t k : cfg.eval.topk) {
        if (k <= C && !results.empty()) ks.push_back(k);
    }
    const auto curve = topk_oracle(original_logits(results), gold, ks, avg);
    const auto& trace = params_json.at("loss_trace");

    nlohmann::json report = {
        {"labels", bundle.labels.names()},
        {"threshold", hardness.threshold},
        {"dev_misclassified_count", hardness.dev_misclassified_count},
        {"test_n", results.size()},
        {"hard_count", hard.baseline.n},
        {"overall",
         {{"baseline", summary_json(overall.baseline)},
          {"reranked", summary_json(overall.reranked)},
          {"baseline_per_class", per_class_json(overall.baseline, bundle.labels)},
          {"reranked_per_class", per_class_json(overall.reranked, bundle.labels)}}},
        {"hard_subset", {{"baseline", summary_json(hard.baseline)}, {"reranked", summary_json(hard.reranked)}}},
        {"topk_oracle", topk_json(curve)},
        {"embedder",
         {{"mode", params_json.at("mode")},
          {"weighting", to_string(cfg.train.weighting)},
          {"initial_loss", trace.empty() ? nlohmann::json(nullptr) : trace.front()},
          {"final_loss", trace.empty() ? nlohmann::json(nullptr) : trace.back()}}}};
    auto out = open_out(dir / kReport);
    out << report.dump(2) << '\n';
}

}  // namespace stage

// Runs every stage into cfg.output_dir and returns that directory. Stage
// errors are rethrown as StageFailure; files from finished stages remain.
inline fs::path run_pipeline(const RunConfig& cfg) {
    validate(cfg);
    const DatasetBundle bundle = load_bundle(cfg.manifest);
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) fail(ErrorCode::IoFailure, "cannot create " + cfg.output_dir.string() + ": " + ec.message());
    {
        auto out = stage::open_out(cfg.output_dir / stage::kConfig);
        out << to_json(cfg).dump(2) << '\n';
    }
    using StageFn = void (*)(const DatasetBundle&, const RunConfig&, const fs::path&);
    const std::pair<const char*, StageFn> stages[] = {{"detect", stage::detect},
                                                      {"confusion", stage::confusion},
                                                      {"train", stage::train},
                                                      {"rerank", stage::rerank},
                                                      {"evaluate", stage::evaluate}};
    for (const auto& [name, fn] : stages) {
        try {
            fn(bundle, cfg, cfg.output_dir);
        } catch (const std::exception& e) {
            throw StageFailure(name, e.what());
        }
    }
    return cfg.output_dir;
}

enum class AblationMode { Full, UniformWeights, IdentityEmbedder };

inline std::string_view to_string(AblationMode m) noexcept {
    switch (m) {
        case AblationMode::Full: return "full";
        case AblationMode::UniformWeights: return "uniform_weights";
        case AblationMode::IdentityEmbedder: return "identity_embedder";
    }
    return "?";
}

inline AblationMode parse_ablation_mode(std::string_view s) {
    if (s == "full") return AblationMode::Full;
    if (s == "uniform_weights") return AblationMode::UniformWeights;
    if (s == "identity_embedder") return AblationMode::IdentityEmbedder;
    fail(ErrorCode::BadArgument, "unknown ablation mode '" + std::string(s) + "'");
}

struct AblationRow {
    AblationMode mode = AblationMode::Full;
    double weighted_f1 = 0.0;
    double macro_f1 = 0.0;
    double hard_weighted_f1 = 0.0;
    double hard_macro_f1 = 0.0;
};

struct AblationReport {
    double baseline_weighted_f1 = 0.0;
    double baseline_macro_f1 = 0.0;
    double baseline_hard_weighted_f1 = 0.0;
    double baseline_hard_macro_f1 = 0.0;
    std::vector<AblationRow> rows;
};

inline RunConfig config_for_mode(RunConfig cfg, AblationMode mode) {
    switch (mode) {
        case AblationMode::Full: break;
        case AblationMode::UniformWeights: cfg.train.weighting = Weighting::Uniform; break;
        case AblationMode::IdentityEmbedder: cfg.train.mode = EmbedderMode::Identity; break;
    }
    cfg.output_dir = cfg.output_dir / std::string(to_string(mode));
    return cfg;
}

inline nlohmann::json read_report(const fs::path& run_dir) {
    return nlohmann::json::parse(detail::slurp(run_dir / stage::kReport));
}

// One pipeline run per mode on the same bundle and seed.
inline AblationReport ablation_matrix(const RunConfig& cfg, std::span<const AblationMode> modes) {
    if (modes.empty()) fail(ErrorCode::BadArgument, "ablation needs at least one mode");
    AblationReport report;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        const auto dir = run_pipeline(config_for_mode(cfg, modes[i]));
        const auto r = read_report(dir);
        if (i == 0) {
            report.baseline_weighted_f1 = r["overall"]["baseline"]["weighted_f1"].get<double>();
            report.baseline_macro_f1 = r["overall"]["baseline"]["macro_f1"].get<double>();
            report.baseline_hard_weighted_f1 = r["hard_subset"]["baseline"]["weighted_f1"].get<double>();
            report.baseline_hard_macro_f1 = r["hard_subset"]["baseline"]["macro_f1"].get<double>();
        }
        report.rows.push_back({modes[i], r["overall"]["reranked"]["weighted_f1"].get<double>(),
                               r["overall"]["reranked"]["macro_f1"].get<double>(),
                               r["hard_subset"]["reranked"]["weighted_f1"].get<double>(),
                               r["hard_subset"]["reranked"]["macro_f1"].get<double>()});
    }
    return report;
}

inline nlohmann::json to_json(const AblationReport& r) {
    auto rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"mode", to_string(row.mode)},
                        {"weighted_f1", row.weighted_f1},
                        {"macro_f1", row.macro_f1},
                        {"hard_weighted_f1", row.hard_weighted_f1},
                        {"hard_macro_f1", row.hard_macro_f1}});
    }
    return {{"baseline",
             {{"weighted_f1", r.baseline_weighted_f1},
              {"macro_f1", r.baseline_macro_f1},
              {"hard_weighted_f1", r.baseline_hard_weighted_f1},
              {"hard_macro_f1", r.baseline_hard_macro_f1}}},
            {"rows", rows}};
}

// Plain-text table: one row per mode, percentages, shared baseline row first.
inline std::string format_ablation_table(const AblationReport& r) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-20s %10s %10s %10s %10s\n", "mode", "wF1", "mF1", "hard wF1", "hard mF1");
    out << line;
    std::snprintf(line, sizeof(line), "%-20s %10.2f %10.2f %10.2f %10.2f\n", "baseline", 100 * r.baseline_weighted_f1,
                  100 * r.baseline_macro_f1, 100 * r.baseline_hard_weighted_f1, 100 * r.baseline_hard_macro_f1);
    out << line;
    for (const auto& row : r.rows) {
        std::snprintf(line, sizeof(line), "%-20s %10.2f %10.2f %10.2f %10.2f\n", std::string(to_string(row.mode)).c_str(),
                      100 * row.weighted_f1, 100 * row.macro_f1, 100 * row.hard_weighted_f1, 100 * row.hard_macro_f1);
        out << line;
    }
    return out.str();
}

// Threshold sweep on the test split using the embedder of a finished run.
inline std::vector<SweepPoint> sweep_run(const RunConfig& cfg, std::span<const double> grid) {
    const DatasetBundle bundle = load_bundle(cfg.manifest);
    auto pin = stage::open_in(cfg.output_dir / stage::kParams);
    const auto params = params_from_json(nlohmann::json::parse(pin));
    if (!bundle.label_features) fail(ErrorCode::MissingFeatures, "bundle has no label features");
    const auto test = bundle.indices_of(Split::Test);
    const Matrix logits = bundle.logits(test);
    const Matrix features = bundle.features(test);
    const Matrix label_embs = embed_rows(params, *bundle.label_features);
    const RerankFn fn = [&](std::size_t row, std::span<const double> z) {
        auto s = similarity_vector(embed(params, features.row(row)), label_embs);
        if (cfg.rerank.sim_clamp) clamp_similarity(s);
        return rerank_logits(z, s);
    };
    return threshold_sweep(logits, bundle.gold(test), fn, grid, cfg.hardness.variance);
}

}  // namespace rise
