#pragma once

// Selective reranking: hard examples get their logits multiplied element-wise
// by the input/label cosine similarities; easy examples pass through as-is.

#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "rise/dataset_io.hpp"
#include "rise/embedder.hpp"
#include "rise/error.hpp"
#include "rise/hardness.hpp"
#include "rise/matrix.hpp"
#include "rise/parallel.hpp"

namespace rise {

inline std::vector<double> rerank_logits(std::span<const double> z, std::span<const double> s) {
    if (z.size() != s.size()) {
        fail(ErrorCode::DimensionMismatch, "logits have " + std::to_string(z.size()) + " entries, similarities " +
                                               std::to_string(s.size()));
    }
    std::vector<double> out(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = s[i] * z[i];
    return out;
}

// Maps cosines from [-1, 1] to [0, 1] so signed logits cannot flip sign.
inline void clamp_similarity(std::span<double> s) {
    for (double& v : s) v = (v + 1.0) / 2.0;
}

struct RerankOptions {
    bool sim_clamp = false;
    Split split = Split::Test;
};

struct RerankResult {
    std::string id;
    std::vector<double> original_logits;
    std::vector<double> similarity;
    std::vector<double> reranked_logits;
    bool applied = false;
    std::size_t prediction = 0;

    friend bool operator==(const RerankResult&, const RerankResult&) = default;
};

inline RerankResult rerank_example(std::string id, std::span<const double> z, std::vector<double> s, bool hard) {
    RerankResult r;
    r.id = std::move(id);
    r.original_logits.assign(z.begin(), z.end());
    r.similarity = std::move(s);
    r.applied = hard;
    r.reranked_logits = hard ? rerank_logits(z, r.similarity) : r.original_logits;
    r.prediction = argmax(r.reranked_logits);
    return r;
}

// One result per example of the requested split, in bundle order.
inline std::vector<RerankResult> predict_selective(const DatasetBundle& bundle, const HardnessReport& hardness,
                                                   const EmbedderParams& params, const RerankOptions& opts = {}) {
    if (!bundle.has_features() || !bundle.label_features) {
        fail(ErrorCode::MissingFeatures, "reranking needs sentence features and label features");
    }
    const auto indices = bundle.indices_of(opts.split);
    std::vector<const HardnessEntry*> verdicts(indices.size());
    {
        std::unordered_map<std::string_view, const HardnessEntry*> by_id;
        for (const auto& e : hardness.per_example) by_id.emplace(e.id, &e);
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const auto& id = bundle.examples[indices[r]].id;
            auto it = by_id.find(id);
            if (it == by_id.end()) fail(ErrorCode::BadArgument, "hardness report has no entry for example '" + id + "'");
            verdicts[r] = it->second;
        }
    }
    const Matrix label_embs = embed_rows(params, *bundle.label_features);
    std::vector<RerankResult> results(indices.size());
    parallel_for(indices.size(), [&](std::size_t r) {
        const auto& ex = bundle.examples[indices[r]];
        auto s = similarity_vector(embed(params, ex.features), label_embs);
        if (opts.sim_clamp) clamp_similarity(s);
        results[r] = rerank_example(ex.id, ex.logits, std::move(s), verdicts[r]->is_hard);
    });
    return results;
}

inline nlohmann::json to_json(const RerankResult& r) {
    return {{"id", r.id},
            {"original_logits", r.original_logits},
            {"similarity", r.similarity},
            {"reranked_logits", r.reranked_logits},
            {"applied", r.applied},
            {"prediction", r.prediction}};
}

inline void write_results_jsonl(std::ostream& out, std::span<const RerankResult> results) {
    for (const auto& r : results) out << to_json(r).dump() << '\n';
}

inline std::vector<RerankResult> read_results_jsonl(std::istream& in) {
    std::vector<RerankResult> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            RerankResult r;
            r.id = j.at("id").get<std::string>();
            r.original_logits = j.at("original_logits").get<std::vector<double>>();
            r.similarity = j.at("similarity").get<std::vector<double>>();
            r.reranked_logits = j.at("reranked_logits").get<std::vector<double>>();
            r.applied = j.at("applied").get<bool>();
            r.prediction = j.at("prediction").get<std::size_t>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorCode::ParseError, "results line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace rise
