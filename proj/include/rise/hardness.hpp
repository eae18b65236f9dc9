#pragma once

// Hard-example detection from logit dispersion. An example is hard when the
// variance of its logit vector falls strictly below a threshold; the default
// threshold is the mean variance over dev examples the classifier gets wrong.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rise/dataset_io.hpp"
#include "rise/error.hpp"
#include "rise/matrix.hpp"
#include "rise/metrics.hpp"
#include "rise/parallel.hpp"

namespace rise {

enum class VarianceKind { Population, Sample };

inline std::string_view to_string(VarianceKind k) noexcept {
    return k == VarianceKind::Population ? "population" : "sample";
}

inline VarianceKind parse_variance_kind(std::string_view s) {
    if (s == "population") return VarianceKind::Population;
    if (s == "sample") return VarianceKind::Sample;
    fail(ErrorCode::BadArgument, "variance must be 'population' or 'sample', got '" + std::string(s) + "'");
}

inline double logit_variance(std::span<const double> z, VarianceKind kind = VarianceKind::Population) {
    if (z.size() < 2) fail(ErrorCode::DegenerateVector, "variance needs at least 2 logits");
    double mean = 0.0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(z.size());
    double ss = 0.0;
    for (double v : z) ss += (v - mean) * (v - mean);
    const double divisor = kind == VarianceKind::Population ? static_cast<double>(z.size())
                                                            : static_cast<double>(z.size() - 1);
    return ss / divisor;
}

inline std::size_t count_misclassified(const Matrix& logits, std::span<const std::size_t> gold) {
    if (logits.rows() != gold.size()) fail(ErrorCode::LengthMismatch, "logits rows do not match gold count");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) wrong += argmax(logits.row(i)) != gold[i];
    return wrong;
}

// Mean logit variance over misclassified dev examples.
inline double estimate_threshold(const Matrix& dev_logits, std::span<const std::size_t> dev_gold,
                                 VarianceKind kind = VarianceKind::Population) {
    if (dev_logits.rows() != dev_gold.size()) fail(ErrorCode::LengthMismatch, "dev logits rows do not match gold count");
    if (dev_gold.empty()) fail(ErrorCode::BadArgument, "threshold estimation needs a non-empty dev split");
    double sum = 0.0;
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < dev_gold.size(); ++i) {
        if (argmax(dev_logits.row(i)) != dev_gold[i]) {
            sum += logit_variance(dev_logits.row(i), kind);
            ++wrong;
        }
    }
    if (wrong == 0) {
        fail(ErrorCode::NoMisclassifications, "every dev example is classified correctly; pass an explicit threshold");
    }
    return sum / static_cast<double>(wrong);
}

inline void check_threshold(double threshold) {
    if (!(threshold >= 0.0)) fail(ErrorCode::BadArgument, "threshold must be a non-negative number");
}

inline std::vector<bool> detect_hard(const Matrix& logits, double threshold,
                                     VarianceKind kind = VarianceKind::Population) {
    check_threshold(threshold);
    std::vector<bool> hard(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) hard[i] = logit_variance(logits.row(i), kind) < threshold;
    return hard;
}

struct HardnessEntry {
    std::string id;
    double variance = 0.0;
    bool is_hard = false;
};

struct HardnessReport {
    double threshold = 0.0;
    std::vector<HardnessEntry> per_example;
    std::size_t dev_misclassified_count = 0;

    double hard_fraction() const {
        if (per_example.empty()) return 0.0;
        const auto hard = std::count_if(per_example.begin(), per_example.end(), [](const auto& e) { return e.is_hard; });
        return static_cast<double>(hard) / static_cast<double>(per_example.size());
    }

    const HardnessEntry* find(std::string_view id) const {
        for (const auto& e : per_example) {
            if (e.id == id) return &e;
        }
        return nullptr;
    }
};

struct HardnessOptions {
    std::optional<double> threshold;  // overrides the dev estimate
    VarianceKind variance = VarianceKind::Population;
};

// Scores every example in the bundle against the dev-estimated (or given) threshold.
inline HardnessReport build_hardness_report(const DatasetBundle& bundle, const HardnessOptions& opts = {}) {
    const auto dev = bundle.indices_of(Split::Dev);
    HardnessReport report;
    if (!dev.empty()) report.dev_misclassified_count = count_misclassified(bundle.logits(dev), bundle.gold(dev));
    if (opts.threshold) {
        check_threshold(*opts.threshold);
        report.threshold = *opts.threshold;
    } else {
        report.threshold = estimate_threshold(bundle.logits(dev), bundle.gold(dev), opts.variance);
    }
    report.per_example.reserve(bundle.examples.size());
    for (const auto& ex : bundle.examples) {
        const double v = logit_variance(ex.logits, opts.variance);
        report.per_example.push_back({ex.id, v, v < report.threshold});
    }
    return report;
}

// JSON lines: one {id, variance, is_hard} per example, then a summary object.
inline void write_hardness_jsonl(std::ostream& out, const HardnessReport& report) {
    for (const auto& e : report.per_example) {
        out << nlohmann::json{{"id", e.id}, {"variance", e.variance}, {"is_hard", e.is_hard}}.dump() << '\n';
    }
    out << nlohmann::json{{"threshold", report.threshold},
                          {"hard_fraction", report.hard_fraction()},
                          {"dev_misclassified_count", report.dev_misclassified_count}}
               .dump()
        << '\n';
}

inline HardnessReport read_hardness_jsonl(std::istream& in) {
    HardnessReport report;
    bool have_summary = false;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
            if (obj.contains("id")) {
                report.per_example.push_back(
                    {obj.at("id").get<std::string>(), obj.at("variance").get<double>(), obj.at("is_hard").get<bool>()});
            } else {
                report.threshold = obj.at("threshold").get<double>();
                report.dev_misclassified_count = obj.value("dev_misclassified_count", std::size_t{0});
                have_summary = true;
            }
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, "hardness line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!have_summary) fail(ErrorCode::ParseError, "hardness report has no summary line");
    return report;
}

enum class HardnessLevel { Easy, RatherEasy, RatherDifficult, Difficult };

inline std::string_view to_string(HardnessLevel l) noexcept {
    switch (l) {
        case HardnessLevel::Easy: return "Easy";
        case HardnessLevel::RatherEasy: return "RatherEasy";
        case HardnessLevel::RatherDifficult: return "RatherDifficult";
        case HardnessLevel::Difficult: return "Difficult";
    }
    return "?";
}

// Bucket for k uncertain models out of `models`. With 7 models this is
// {0}, {1,2}, {3,4}, {5,6,7}; other model counts scale the cut points by M/7.
inline HardnessLevel hardness_level(std::size_t k, std::size_t models) {
    if (models == 0) fail(ErrorCode::EmptyModelSet, "no models");
    if (k > models) fail(ErrorCode::BadArgument, "k exceeds the number of models");
    const auto cut = [models](std::size_t num) {
        return static_cast<std::size_t>(std::floor(static_cast<double>(num * models) / 7.0 + 0.5));
    };
    const std::size_t easy_hi = std::max<std::size_t>(1, cut(2));
    const std::size_t rather_difficult_hi = std::max(easy_hi, cut(4));
    if (k == 0) return HardnessLevel::Easy;
    if (k <= easy_hi) return HardnessLevel::RatherEasy;
    if (k <= rather_difficult_hi) return HardnessLevel::RatherDifficult;
    return HardnessLevel::Difficult;
}

struct CrossModelEntry {
    std::string id;
    std::size_t k = 0;
    HardnessLevel level = HardnessLevel::Easy;
};

struct CrossModelHardness {
    std::size_t models = 0;
    std::vector<CrossModelEntry> per_example;
};

// flags[m][j]: model m is uncertain on example j.
inline CrossModelHardness cross_model_levels(const std::vector<std::vector<bool>>& flags,
                                             std::span<const std::string> ids = {}) {
    if (flags.empty()) fail(ErrorCode::EmptyModelSet, "cross-model hardness needs at least one model");
    const std::size_t n = flags.front().size();
    for (const auto& row : flags) {
        if (row.size() != n) fail(ErrorCode::DimensionMismatch, "models disagree on the number of examples");
    }
    if (!ids.empty() && ids.size() != n) fail(ErrorCode::LengthMismatch, "ids do not match the number of examples");
    CrossModelHardness out;
    out.models = flags.size();
    out.per_example.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        std::size_t k = 0;
        for (const auto& row : flags) k += row[j];
        out.per_example[j] = {ids.empty() ? std::to_string(j) : ids[j], k, hardness_level(k, out.models)};
    }
    return out;
}

struct SweepPoint {
    double threshold = 0.0;
    std::size_t hard_count = 0;
    double weighted_f1 = 0.0;
};

// Returns reranked logits for row `row` of the swept matrix.
using RerankFn = std::function<std::vector<double>(std::size_t row, std::span<const double> logits)>;

// Weighted-F1 of the selectively reranked predictions at each threshold.
inline std::vector<SweepPoint> threshold_sweep(const Matrix& logits, std::span<const std::size_t> gold,
                                               const RerankFn& rerank_fn, std::span<const double> grid,
                                               VarianceKind kind = VarianceKind::Population) {
    if (grid.empty()) fail(ErrorCode::BadArgument, "threshold grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end())) fail(ErrorCode::BadArgument, "threshold grid must be ascending");
    for (double t : grid) check_threshold(t);
    if (logits.rows() != gold.size()) fail(ErrorCode::LengthMismatch, "logits rows do not match gold count");

    const std::size_t n = logits.rows();
    std::vector<double> variance(n);
    std::vector<std::size_t> base_pred(n), reranked_pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        variance[i] = logit_variance(logits.row(i), kind);
        base_pred[i] = argmax(logits.row(i));
        reranked_pred[i] = base_pred[i];
        if (variance[i] < grid.back()) reranked_pred[i] = argmax(rerank_fn(i, logits.row(i)));
    }

    std::vector<SweepPoint> points(grid.size());
    parallel_for(grid.size(), [&](std::size_t g) {
        std::vector<std::size_t> pred(n);
        std::size_t hard = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool is_hard = variance[i] < grid[g];
            hard += is_hard;
            pred[i] = is_hard ? reranked_pred[i] : base_pred[i];
        }
        points[g] = {grid[g], hard, f1_report(gold, pred, logits.cols()).weighted_f1};
    });
    return points;
}

}  // namespace rise
