// rise: command-line front end for hard-example detection, confusion-aware
// embedding training, selective reranking and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "rise/rise.hpp"

namespace {

using namespace rise;

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

// Input and configuration problems are validation errors; anything raised
// while computing is a stage failure.
int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::MissingFile:
        case ErrorCode::DimensionMismatch:
        case ErrorCode::BadLabel:
        case ErrorCode::DuplicateId:
        case ErrorCode::ParseError:
        case ErrorCode::BadArgument:
        case ErrorCode::BadConfig:
        case ErrorCode::LengthMismatch:
        case ErrorCode::BadK:
        case ErrorCode::MissingFeatures:
        case ErrorCode::EmptyModelSet:
            return kExitValidation;
        default:
            return kExitStage;
    }
}

// Writes to `path`, or stdout when path is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) fail(ErrorCode::IoFailure, "cannot write " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

private:
    std::ofstream file_;
};

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::MissingFile, "cannot open " + path);
    return in;
}

std::vector<std::size_t> parse_index_list(const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            std::size_t pos = 0;
            const long v = std::stol(tok, &pos);
            if (pos != tok.size() || v < 1) throw std::invalid_argument(tok);
            out.push_back(static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            fail(ErrorCode::BadArgument, "expected a comma-separated list of positive integers, got '" + text + "'");
        }
    }
    return out;
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(parse_double(tok));
    return out;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_pairs(const std::string& text) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (text.empty()) return out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto colon = tok.find(':');
        if (colon == std::string::npos) fail(ErrorCode::BadArgument, "confusable pair '" + tok + "' must look like a:b");
        try {
            out.emplace_back(std::stoul(tok.substr(0, colon)), std::stoul(tok.substr(colon + 1)));
        } catch (const std::exception&) {
            fail(ErrorCode::BadArgument, "confusable pair '" + tok + "' must hold two label indices");
        }
    }
    return out;
}

// ---- subcommands ---------------------------------------------------------

int cmd_validate(const std::string& manifest) {
    try {
        const auto b = load_bundle(manifest);
        std::cout << "ok: " << b.num_classes() << " labels, " << b.examples.size() << " examples (train "
                  << b.indices_of(Split::Train).size() << ", dev " << b.indices_of(Split::Dev).size() << ", test "
                  << b.indices_of(Split::Test).size() << ")";
        if (b.dim) std::cout << ", feature dim " << *b.dim;
        std::cout << (b.label_features ? ", label features present" : ", no label features") << '\n';
        return 0;
    } catch (const Error& e) {
        std::cout << "invalid: " << e.what() << '\n';
        return kExitValidation;
    }
}

struct DetectArgs {
    std::string manifest, out, variance = "population";
    std::optional<double> threshold;
};

int cmd_detect(const DetectArgs& a) {
    const auto b = load_bundle(a.manifest);
    HardnessOptions opts;
    opts.variance = parse_variance_kind(a.variance);
    opts.threshold = a.threshold;
    const auto report = build_hardness_report(b, opts);
    Output out(a.out);
    write_hardness_jsonl(out.stream(), report);
    return 0;
}

int cmd_fit_confusion(const std::string& manifest, double eps, const std::string& out_path) {
    if (!(eps >= 0.0)) fail(ErrorCode::BadArgument, "--neg-smoothing must be >= 0");
    const auto b = load_bundle(manifest);
    const auto dev = b.indices_of(Split::Dev);
    const auto profile = fit_confusion(b.logits(dev), b.gold(dev));
    Output out(out_path);
    write_confusion_csv(out.stream(), profile, b.labels, eps);
    return 0;
}

struct TrainArgs {
    std::string manifest, confusion, out, weighting = "confusion", mode = "linear";
    TrainConfig cfg;
    std::optional<double> neg_smoothing;
};

int cmd_train(TrainArgs a) {
    const auto b = load_bundle(a.manifest);
    auto in = open_in(a.confusion);
    const auto loaded = read_confusion_csv(in, b.labels);
    a.cfg.weighting = parse_weighting(a.weighting);
    a.cfg.mode = parse_embedder_mode(a.mode);
    a.cfg.neg_smoothing = a.neg_smoothing.value_or(loaded.neg_smoothing);
    const auto result = train_embedder(b, loaded.profile, a.cfg);
    Output out(a.out);
    out.stream() << params_to_json(result.params, result.loss_trace).dump(2) << '\n';
    std::cerr << "loss " << result.loss_trace.front() << " -> " << result.loss_trace.back() << '\n';
    return 0;
}

struct RerankArgs {
    std::string manifest, hardness, params, out;
    bool sim_clamp = false;
};

int cmd_rerank(const RerankArgs& a) {
    const auto b = load_bundle(a.manifest);
    auto hin = open_in(a.hardness);
    const auto hardness = read_hardness_jsonl(hin);
    auto pin = open_in(a.params);
    nlohmann::json pj;
    try {
        pj = nlohmann::json::parse(pin);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, "params file is not valid JSON: " + std::string(e.what()));
    }
    RerankOptions opts;
    opts.sim_clamp = a.sim_clamp;
    const auto results = predict_selective(b, hardness, params_from_json(pj), opts);
    Output out(a.out);
    write_results_jsonl(out.stream(), results);
    return 0;
}

struct EvaluateArgs {
    std::string gold, pred, hardness, out, topk = "1,3,5";
    bool hard_only = false;
    bool all_classes = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
    auto rin = open_in(a.pred);
    const auto results = read_results_jsonl(rin);
    if (results.empty()) fail(ErrorCode::BadArgument, "no predictions in " + a.pred);
    const std::size_t C = results.front().original_logits.size();

    // Gold comes from a bundle manifest (matched by id) or a plain file with
    // one label index per line, aligned with the predictions.
    std::vector<std::size_t> gold;
    std::optional<LabelSet> labels;
    if (fs::path(a.gold).extension() == ".json") {
        const auto b = load_bundle(a.gold);
        labels = b.labels;
        std::unordered_map<std::string, std::size_t> by_id;
        for (const auto& ex : b.examples) by_id.emplace(ex.id, ex.gold);
        for (const auto& r : results) {
            auto it = by_id.find(r.id);
            if (it == by_id.end()) fail(ErrorCode::BadArgument, "prediction id '" + r.id + "' is not in the bundle");
            gold.push_back(it->second);
        }
    } else {
        auto in = open_in(a.gold);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const double v = parse_double(line);
            if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v))) {
                fail(ErrorCode::BadLabel, "gold entry '" + line + "' is not a label index");
            }
            gold.push_back(static_cast<std::size_t>(v));
        }
        if (gold.size() != results.size()) {
            fail(ErrorCode::LengthMismatch, "gold has " + std::to_string(gold.size()) + " entries, predictions " +
                                                std::to_string(results.size()));
        }
    }

    // Restrict to the hard subset when asked: from a hardness report if given,
    // otherwise from the applied flags recorded with each prediction.
    std::vector<RerankResult> subset;
    std::vector<std::size_t> subset_gold;
    std::optional<HardnessReport> hardness;
    if (!a.hardness.empty()) {
        auto hin = open_in(a.hardness);
        hardness = read_hardness_jsonl(hin);
    } else if (a.hard_only) {
        std::cerr << "note: --hard-only without --hardness uses the recorded applied flags\n";
    }
    for (std::size_t i = 0; i < results.size(); ++i) {
        bool keep = true;
        if (a.hard_only) {
            if (hardness) {
                const auto* h = hardness->find(results[i].id);
                if (!h) fail(ErrorCode::BadArgument, "hardness report has no entry for '" + results[i].id + "'");
                keep = h->is_hard;
            } else {
                keep = results[i].applied;
            }
        }
        if (keep) {
            subset.push_back(results[i]);
            subset_gold.push_back(gold[i]);
        }
    }

    const auto avg = a.all_classes ? MacroAverage::AllClasses : MacroAverage::PresentClasses;
    const auto ev = evaluate_subset(subset, subset_gold, C, avg, false);
    auto ks = parse_index_list(a.topk);
    nlohmann::json report = {{"n", subset.size()},
                             {"subset", a.hard_only ? "hard" : "all"},
                             {"baseline", summary_json(ev.baseline)},
                             {"reranked", summary_json(ev.reranked)}};
    if (labels) report["reranked_per_class"] = per_class_json(ev.reranked, *labels);
    if (!subset.empty()) {
        report["topk_oracle"] = topk_json(topk_oracle(original_logits(subset), subset_gold, ks, avg));
    }
    Output out(a.out);
    out.stream() << report.dump(2) << '\n';
    return 0;
}

struct SynthArgs {
    SynthConfig cfg;
    std::string confusable = "0:1,2:3";
    std::string out;
};

int cmd_synth(SynthArgs a) {
    a.cfg.confusable_pairs = parse_pairs(a.confusable);
    const auto manifest = save_bundle(generate(a.cfg), a.out);
    std::cout << manifest.string() << '\n';
    return 0;
}

struct RunArgs {
    std::string config, out, modes = "full,uniform_weights,identity_embedder", grid;
    std::optional<std::uint64_t> seed;
    std::optional<double> threshold;
    bool sim_clamp = false;
};

RunConfig resolve_config(const RunArgs& a) {
    auto cfg = load_run_config(a.config);
    if (!a.out.empty()) cfg.output_dir = a.out;
    if (a.seed) cfg.seed = *a.seed;
    if (a.threshold) cfg.hardness.threshold = *a.threshold;
    if (a.sim_clamp) cfg.rerank.sim_clamp = true;
    validate(cfg);
    return cfg;
}

void print_summary(const nlohmann::json& r) {
    auto pct = [](const nlohmann::json& v) { return 100.0 * v.get<double>(); };
    std::printf("threshold %.6g, hard %zu of %zu test examples\n", r["threshold"].get<double>(),
                r["hard_count"].get<std::size_t>(), r["test_n"].get<std::size_t>());
    std::printf("%-10s %10s %10s %10s %10s\n", "", "mF1", "wF1", "hard mF1", "hard wF1");
    for (const char* k : {"baseline", "reranked"}) {
        std::printf("%-10s %10.2f %10.2f %10.2f %10.2f\n", k, pct(r["overall"][k]["macro_f1"]),
                    pct(r["overall"][k]["weighted_f1"]), pct(r["hard_subset"][k]["macro_f1"]),
                    pct(r["hard_subset"][k]["weighted_f1"]));
    }
}

int cmd_pipeline(const RunArgs& a) {
    const auto cfg = resolve_config(a);
    const auto dir = run_pipeline(cfg);
    print_summary(read_report(dir));
    std::cout << "run directory: " << dir.string() << '\n';
    return 0;
}

int cmd_ablate(const RunArgs& a) {
    const auto cfg = resolve_config(a);
    std::vector<AblationMode> modes;
    std::stringstream ss(a.modes);
    std::string tok;
    while (std::getline(ss, tok, ',')) modes.push_back(parse_ablation_mode(tok));
    const auto report = ablation_matrix(cfg, modes);
    std::cout << format_ablation_table(report);
    auto out = stage::open_out(cfg.output_dir / "ablation.json");
    out << to_json(report).dump(2) << '\n';
    return 0;
}

int cmd_sweep(const RunArgs& a) {
    const auto cfg = resolve_config(a);
    const auto grid = parse_double_list(a.grid);
    for (const auto& p : sweep_run(cfg, grid)) {
        std::cout << nlohmann::json{{"threshold", p.threshold}, {"hard_count", p.hard_count}, {"weighted_f1", p.weighted_f1}}
                         .dump()
                  << '\n';
    }
    return 0;
}

int cmd_levels(const std::vector<std::string>& reports, const std::string& out_path) {
    std::vector<std::vector<bool>> flags;
    std::vector<std::string> ids;
    for (const auto& path : reports) {
        auto in = open_in(path);
        const auto r = read_hardness_jsonl(in);
        std::vector<std::string> these;
        std::vector<bool> row;
        for (const auto& e : r.per_example) {
            these.push_back(e.id);
            row.push_back(e.is_hard);
        }
        if (ids.empty()) {
            ids = these;
        } else if (these != ids) {
            fail(ErrorCode::BadArgument, path + " covers different examples than " + reports.front());
        }
        flags.push_back(std::move(row));
    }
    const auto levels = cross_model_levels(flags, ids);
    Output out(out_path);
    for (const auto& e : levels.per_example) {
        out.stream() << nlohmann::json{{"id", e.id}, {"k", e.k}, {"level", to_string(e.level)}}.dump() << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Selective reranking of hard examples with confusion-aware label embeddings"};
    app.require_subcommand(1);
    int rc = 0;

    std::string validate_manifest;
    auto* validate_cmd = app.add_subcommand("validate", "Load and check a bundle manifest");
    validate_cmd->add_option("manifest", validate_manifest)->required();
    validate_cmd->callback([&] { rc = cmd_validate(validate_manifest); });

    DetectArgs detect;
    auto* detect_cmd = app.add_subcommand("detect-hard", "Flag low-variance examples as hard (JSON lines)");
    detect_cmd->add_option("manifest", detect.manifest)->required();
    detect_cmd->add_option("--threshold", detect.threshold, "Use this threshold instead of the dev estimate");
    detect_cmd->add_option("--variance", detect.variance, "population or sample")->capture_default_str();
    detect_cmd->add_option("--out", detect.out, "Output file (default stdout)");
    detect_cmd->callback([&] { rc = cmd_detect(detect); });

    std::string conf_manifest, conf_out;
    double conf_eps = kDefaultNegSmoothing;
    auto* conf_cmd = app.add_subcommand("fit-confusion", "Dev-set confusion table as CSV");
    conf_cmd->add_option("manifest", conf_manifest)->required();
    conf_cmd->add_option("--neg-smoothing", conf_eps, "Added to every negative weight")->capture_default_str();
    conf_cmd->add_option("--out", conf_out, "Output file (default stdout)");
    conf_cmd->callback([&] { rc = cmd_fit_confusion(conf_manifest, conf_eps, conf_out); });

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train-embedder", "Fit the shared projection with the weighted contrastive loss");
    train_cmd->add_option("manifest", train.manifest)->required();
    train_cmd->add_option("--confusion", train.confusion, "CSV from fit-confusion")->required();
    train_cmd->add_option("--out", train.out, "params.json path")->required();
    train_cmd->add_option("--lr", train.cfg.learning_rate)->capture_default_str();
    train_cmd->add_option("--epochs", train.cfg.epochs)->capture_default_str();
    train_cmd->add_option("--batch", train.cfg.batch_size)->capture_default_str();
    train_cmd->add_option("--seed", train.cfg.seed)->capture_default_str();
    train_cmd->add_option("--weighting", train.weighting, "confusion or uniform")->capture_default_str();
    train_cmd->add_option("--tau", train.cfg.tau, "Similarity temperature")->capture_default_str();
    train_cmd->add_option("--mode", train.mode, "linear or identity")->capture_default_str();
    train_cmd->add_option("--dim", train.cfg.embedding_dim, "Embedding size (0: feature size)")->capture_default_str();
    train_cmd->add_option("--neg-smoothing", train.neg_smoothing, "Override the value stored in the confusion CSV");
    train_cmd->callback([&] { rc = cmd_train(train); });

    RerankArgs rerank;
    auto* rerank_cmd = app.add_subcommand("rerank", "Rerank hard test examples by label similarity");
    rerank_cmd->add_option("manifest", rerank.manifest)->required();
    rerank_cmd->add_option("--hardness", rerank.hardness)->required();
    rerank_cmd->add_option("--params", rerank.params)->required();
    rerank_cmd->add_flag("--sim-clamp", rerank.sim_clamp, "Map similarities from [-1,1] to [0,1] first");
    rerank_cmd->add_option("--out", rerank.out, "Output file (default stdout)");
    rerank_cmd->callback([&] { rc = cmd_rerank(rerank); });

    EvaluateArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Baseline vs reranked F1 and the top-k oracle curve");
    eval_cmd->add_option("--gold", eval.gold, "Bundle manifest (.json) or one gold index per line")->required();
    eval_cmd->add_option("--pred", eval.pred, "results.jsonl from rerank")->required();
    eval_cmd->add_option("--topk", eval.topk, "Comma-separated cut-offs")->capture_default_str();
    eval_cmd->add_flag("--hard-only", eval.hard_only, "Score only hard examples");
    eval_cmd->add_option("--hardness", eval.hardness, "Hardness report defining the hard subset");
    eval_cmd->add_flag("--all-classes", eval.all_classes, "Macro-average over every label");
    eval_cmd->add_option("--out", eval.out, "Output file (default stdout)");
    eval_cmd->callback([&] { rc = cmd_evaluate(eval); });

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic bundle");
    synth_cmd->add_option("--classes", synth.cfg.classes)->capture_default_str();
    synth_cmd->add_option("--dim", synth.cfg.dim)->capture_default_str();
    synth_cmd->add_option("--n", synth.cfg.n_per_class, "Examples per class and split")->capture_default_str();
    synth_cmd->add_option("--overlap", synth.cfg.overlap)->capture_default_str();
    synth_cmd->add_option("--noise", synth.cfg.noise)->capture_default_str();
    synth_cmd->add_option("--confusable", synth.confusable, "Pairs like 0:1,2:3")->capture_default_str();
    synth_cmd->add_option("--seed", synth.cfg.seed)->capture_default_str();
    synth_cmd->add_option("--radius", synth.cfg.radius, "Centroid spread (0: sqrt(dim))")->capture_default_str();
    synth_cmd->add_option("--anchor", synth.cfg.anchor, "Shared centroid offset (0: sqrt(dim))")->capture_default_str();
    synth_cmd->add_option("--label-noise", synth.cfg.label_noise)->capture_default_str();
    synth_cmd->add_option("--classifier-noise", synth.cfg.classifier_noise)->capture_default_str();
    synth_cmd->add_option("--baseline-epochs", synth.cfg.baseline.epochs)->capture_default_str();
    synth_cmd->add_option("--out", synth.out, "Bundle directory")->required();
    synth_cmd->callback([&] { rc = cmd_synth(synth); });

    RunArgs run;
    auto add_run_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", run.config, "Run config JSON")->required();
        cmd->add_option("--out", run.out, "Override output_dir");
        cmd->add_option("--seed", run.seed, "Override seed");
        cmd->add_option("--threshold", run.threshold, "Override the hardness threshold");
        cmd->add_flag("--sim-clamp", run.sim_clamp, "Map similarities to [0,1] before reranking");
    };
    auto* pipeline_cmd = app.add_subcommand("pipeline", "detect, confusion, train, rerank and evaluate in one run");
    add_run_options(pipeline_cmd);
    pipeline_cmd->callback([&] { rc = cmd_pipeline(run); });

    auto* ablate_cmd = app.add_subcommand("ablate", "One pipeline run per ablation mode");
    add_run_options(ablate_cmd);
    ablate_cmd->add_option("--modes", run.modes)->capture_default_str();
    ablate_cmd->callback([&] { rc = cmd_ablate(run); });

    auto* sweep_cmd = app.add_subcommand("sweep", "Weighted-F1 across hardness thresholds for a finished run");
    add_run_options(sweep_cmd);
    sweep_cmd->add_option("--grid", run.grid, "Ascending thresholds, comma-separated")->required();
    sweep_cmd->callback([&] { rc = cmd_sweep(run); });

    std::vector<std::string> level_inputs;
    std::string levels_out;
    auto* levels_cmd = app.add_subcommand("levels", "Cross-model hardness levels from several hardness reports");
    levels_cmd->add_option("reports", level_inputs, "One hardness.jsonl per model")->required();
    levels_cmd->add_option("--out", levels_out, "Output file (default stdout)");
    levels_cmd->callback([&] { rc = cmd_levels(level_inputs, levels_out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    } catch (const StageFailure& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    }
    return rc;
}
