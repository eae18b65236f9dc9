#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "rise/error.hpp"
#include "rise/matrix.hpp"

namespace rise {

struct ClassScore {
    std::size_t label = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
    std::size_t predicted = 0;
};

struct MetricsReport {
    double macro_f1 = 0.0;
    double weighted_f1 = 0.0;
    std::vector<ClassScore> per_class;  // one entry per label, in label order
    std::size_t n = 0;
};

enum class MacroAverage {
    PresentClasses,  // classes seen in gold or pred
    AllClasses,
};

// Per-class precision/recall/F1 with 0/0 taken as 0.
inline MetricsReport f1_report(std::span<const std::size_t> gold, std::span<const std::size_t> pred,
                               std::size_t num_classes, MacroAverage average = MacroAverage::PresentClasses) {
    if (gold.size() != pred.size()) {
        fail(ErrorCode::LengthMismatch, "gold has " + std::to_string(gold.size()) + " entries, pred has " +
                                            std::to_string(pred.size()));
    }
    std::vector<std::size_t> tp(num_classes, 0), gold_count(num_classes, 0), pred_count(num_classes, 0);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] >= num_classes || pred[i] >= num_classes) {
            fail(ErrorCode::BadLabel, "label index out of range at position " + std::to_string(i));
        }
        ++gold_count[gold[i]];
        ++pred_count[pred[i]];
        if (gold[i] == pred[i]) ++tp[gold[i]];
    }

    MetricsReport report;
    report.n = gold.size();
    report.per_class.resize(num_classes);
    double macro_sum = 0.0, weighted_sum = 0.0;
    std::size_t macro_count = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& s = report.per_class[c];
        s.label = c;
        s.support = gold_count[c];
        s.predicted = pred_count[c];
        s.precision = pred_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(pred_count[c]) : 0.0;
        s.recall = gold_count[c] ? static_cast<double>(tp[c]) / static_cast<double>(gold_count[c]) : 0.0;
        s.f1 = (s.precision + s.recall) > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        if (average == MacroAverage::AllClasses || gold_count[c] > 0 || pred_count[c] > 0) {
            macro_sum += s.f1;
            ++macro_count;
        }
        weighted_sum += s.f1 * static_cast<double>(gold_count[c]);
    }
    report.macro_f1 = macro_count ? macro_sum / static_cast<double>(macro_count) : 0.0;
    report.weighted_f1 = report.n ? weighted_sum / static_cast<double>(report.n) : 0.0;
    return report;
}

struct TopKPoint {
    std::size_t k = 0;
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

// Position of `label` in the descending ranking of `z` (0 = top), with ties
// ranked by lowest index first.
inline std::size_t rank_of(std::span<const double> z, std::size_t label) {
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        if (z[j] > z[label] || (z[j] == z[label] && j < label)) ++ahead;
    }
    return ahead;
}

// Accuracy/macro-F1 if the gold label were picked whenever it sits in the top k.
inline std::vector<TopKPoint> topk_oracle(const Matrix& logits, std::span<const std::size_t> gold,
                                          std::span<const std::size_t> ks,
                                          MacroAverage average = MacroAverage::PresentClasses) {
    if (logits.rows() != gold.size()) fail(ErrorCode::LengthMismatch, "logits rows do not match gold count");
    const std::size_t C = logits.cols();
    std::vector<std::size_t> ranks(gold.size()), top1(gold.size());
    for (std::size_t i = 0; i < gold.size(); ++i) {
        if (gold[i] >= C) fail(ErrorCode::BadLabel, "gold index out of range");
        ranks[i] = rank_of(logits.row(i), gold[i]);
        top1[i] = argmax(logits.row(i));
    }
    std::vector<TopKPoint> curve;
    for (std::size_t k : ks) {
        if (k < 1 || k > C) fail(ErrorCode::BadK, "k=" + std::to_string(k) + " outside [1, " + std::to_string(C) + "]");
        std::vector<std::size_t> oracle(gold.size());
        std::size_t hits = 0;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            const bool in_top = ranks[i] < k;
            hits += in_top;
            oracle[i] = in_top ? gold[i] : top1[i];
        }
        TopKPoint p;
        p.k = k;
        p.accuracy = gold.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gold.size());
        p.macro_f1 = f1_report(gold, oracle, C, average).macro_f1;
        curve.push_back(p);
    }
    return curve;
}

// Ordinal difficulty level on the four-point scale, 0 = easy ... 3 = difficult.
struct RatingPair {
    int human = 0;
    int model = 0;
};

inline constexpr int kRatingLevels = 4;

// Unweighted Cohen's kappa.
inline double cohens_kappa(std::span<const RatingPair> pairs) {
    if (pairs.empty()) fail(ErrorCode::BadArgument, "cohens_kappa needs at least one pair");
    std::vector<double> human(kRatingLevels, 0.0), model(kRatingLevels, 0.0);
    double agree = 0.0;
    for (const auto& p : pairs) {
        if (p.human < 0 || p.human >= kRatingLevels || p.model < 0 || p.model >= kRatingLevels) {
            fail(ErrorCode::BadArgument, "rating outside 0..3");
        }
        human[static_cast<std::size_t>(p.human)] += 1.0;
        model[static_cast<std::size_t>(p.model)] += 1.0;
        if (p.human == p.model) agree += 1.0;
    }
    const double n = static_cast<double>(pairs.size());
    const double p_o = agree / n;
    double p_e = 0.0;
    for (int c = 0; c < kRatingLevels; ++c) {
        p_e += (human[static_cast<std::size_t>(c)] / n) * (model[static_cast<std::size_t>(c)] / n);
    }
    if (p_e >= 1.0) fail(ErrorCode::DegenerateMarginals, "chance agreement is 1; kappa undefined");
    return (p_o - p_e) / (1.0 - p_e);
}

// 1-based ranks; tied values share the mean of the ranks they span.
inline std::vector<double> fractional_ranks(std::span<const double> xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(xs.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::ZeroVariance, "correlation undefined for constant input");
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman_rho(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) fail(ErrorCode::LengthMismatch, "spearman_rho inputs differ in length");
    if (xs.size() < 2) fail(ErrorCode::BadArgument, "spearman_rho needs at least 2 points");
    const auto rx = fractional_ranks(xs);
    const auto ry = fractional_ranks(ys);
    return pearson(rx, ry);
}

}  // namespace rise
