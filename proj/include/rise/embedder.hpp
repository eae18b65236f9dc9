#pragma once

// Shared text-label embedding head trained with a confusion-weighted InfoNCE
// objective. Sentence and label-name features come precomputed from upstream;
// the head maps both through the same affine map e = W f + b.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rise/confusion.hpp"
#include "rise/dataset_io.hpp"
#include "rise/error.hpp"
#include "rise/matrix.hpp"

namespace rise {

enum class EmbedderMode { Identity, Linear };

inline std::string_view to_string(EmbedderMode m) noexcept { return m == EmbedderMode::Identity ? "identity" : "linear"; }

inline EmbedderMode parse_embedder_mode(std::string_view s) {
    if (s == "identity") return EmbedderMode::Identity;
    if (s == "linear") return EmbedderMode::Linear;
    fail(ErrorCode::BadArgument, "embedder mode must be 'identity' or 'linear', got '" + std::string(s) + "'");
}

struct EmbedderParams {
    EmbedderMode mode = EmbedderMode::Identity;
    std::size_t input_dim = 0;      // D
    std::size_t embedding_dim = 0;  // K
    Matrix weight;                  // K x D, linear mode only
    std::vector<double> bias;       // K, linear mode only

    static EmbedderParams identity(std::size_t dim) { return {EmbedderMode::Identity, dim, dim, {}, {}}; }

    static EmbedderParams linear(Matrix weight, std::vector<double> bias) {
        if (bias.size() != weight.rows()) fail(ErrorCode::DimensionMismatch, "bias length must equal weight rows");
        const std::size_t D = weight.cols(), K = weight.rows();
        return {EmbedderMode::Linear, D, K, std::move(weight), std::move(bias)};
    }

    friend bool operator==(const EmbedderParams&, const EmbedderParams&) = default;
};

inline std::vector<double> embed(const EmbedderParams& params, std::span<const double> f) {
    if (f.size() != params.input_dim) {
        fail(ErrorCode::DimensionMismatch, "feature vector has dimension " + std::to_string(f.size()) + ", expected " +
                                               std::to_string(params.input_dim));
    }
    if (params.mode == EmbedderMode::Identity) return {f.begin(), f.end()};
    std::vector<double> e(params.bias);
    for (std::size_t k = 0; k < params.embedding_dim; ++k) {
        const auto w = params.weight.row(k);
        double acc = 0.0;
        for (std::size_t d = 0; d < f.size(); ++d) acc += w[d] * f[d];
        e[k] += acc;
    }
    return e;
}

inline Matrix embed_rows(const EmbedderParams& params, const Matrix& features) {
    Matrix out(features.rows(), params.embedding_dim);
    for (std::size_t r = 0; r < features.rows(); ++r) {
        const auto e = embed(params, features.row(r));
        std::copy(e.begin(), e.end(), out.row(r).begin());
    }
    return out;
}

namespace detail {

inline double dot(std::span<const double> u, std::span<const double> v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
    return acc;
}

inline double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

}  // namespace detail

inline double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) fail(ErrorCode::DimensionMismatch, "cosine of vectors with different lengths");
    const double nu = detail::norm(u), nv = detail::norm(v);
    if (nu == 0.0 || nv == 0.0) fail(ErrorCode::ZeroVector, "cosine undefined for a zero vector");
    return std::clamp(detail::dot(u, v) / (nu * nv), -1.0, 1.0);
}

namespace detail {

inline void check_weights(const NegativeWeights& weights, std::size_t num_classes, std::size_t gold) {
    if (gold >= num_classes) fail(ErrorCode::BadLabel, "gold index out of range");
    if (weights.size() != num_classes - 1 || weights.contains(gold)) {
        fail(ErrorCode::BadArgument, "negative weights must cover exactly the labels other than gold");
    }
    for (const auto& [label, w] : weights) {
        if (label >= num_classes) fail(ErrorCode::BadLabel, "negative weight for unknown label");
        if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorCode::BadArgument, "negative weights must be finite and >= 0");
    }
}

// Loss from the similarity vector, plus dL/ds when `dsim` is non-empty.
// Computed as log(1 + sum_y' w exp((s_y' - s_g)/tau)), shifted for overflow,
// which is exactly 0 when every weight is 0.
inline double cw_loss_from_sims(std::span<const double> sims, std::size_t gold, const NegativeWeights& weights,
                                double tau, std::span<double> dsim) {
    if (!(tau > 0.0)) fail(ErrorCode::BadArgument, "temperature must be positive");
    const double ag = sims[gold] / tau;
    double shift = 0.0;
    for (const auto& [y, w] : weights) {
        if (w > 0.0) shift = std::max(shift, sims[y] / tau - ag);
    }
    std::fill(dsim.begin(), dsim.end(), 0.0);
    double r = 0.0;
    for (const auto& [y, w] : weights) {
        if (w > 0.0) r += w * std::exp(sims[y] / tau - ag - shift);
    }
    const double base = std::exp(-shift);  // 1 in shifted units
    const double loss = shift == 0.0 ? std::log1p(r) : shift + std::log(base + r);
    if (!dsim.empty()) {
        const double denom = base + r;
        for (const auto& [y, w] : weights) {
            if (w > 0.0) dsim[y] = w * std::exp(sims[y] / tau - ag - shift) / denom / tau;
        }
        dsim[gold] = -(r / denom) / tau;
    }
    return loss;
}

// Backward pass through the cosines: fills dL/de_x and dL/de_y for every label.
inline double cw_backward(std::span<const double> e_x, const Matrix& label_embs, std::size_t gold,
                          const NegativeWeights& weights, double tau, std::span<double> grad_ex, Matrix& grad_labels) {
    const std::size_t C = label_embs.rows();
    const std::size_t K = e_x.size();
    std::vector<double> sims(C), dsim(C);
    for (std::size_t y = 0; y < C; ++y) sims[y] = cosine(e_x, label_embs.row(y));
    const double loss = cw_loss_from_sims(sims, gold, weights, tau, dsim);

    const double nx = norm(e_x);
    std::fill(grad_ex.begin(), grad_ex.end(), 0.0);
    for (std::size_t y = 0; y < C; ++y) {
        if (dsim[y] == 0.0) continue;
        const auto e_y = label_embs.row(y);
        const double ny = norm(e_y);
        const double c = dot(e_x, e_y) / (nx * ny);
        auto gy = grad_labels.row(y);
        for (std::size_t k = 0; k < K; ++k) {
            grad_ex[k] += dsim[y] * (e_y[k] / (nx * ny) - c * e_x[k] / (nx * nx));
            gy[k] += dsim[y] * (e_x[k] / (nx * ny) - c * e_y[k] / (ny * ny));
        }
    }
    return loss;
}

}  // namespace detail

// -log( exp(s_g/tau) / (exp(s_g/tau) + sum_{y'!=g} w_{y'} exp(s_{y'}/tau)) ), s = cosine similarities.
inline double cw_loss(std::span<const double> e_x, const Matrix& label_embs, std::size_t gold,
                      const NegativeWeights& weights, double tau = 1.0) {
    if (label_embs.cols() != e_x.size()) fail(ErrorCode::DimensionMismatch, "label embeddings differ in dimension from e_x");
    detail::check_weights(weights, label_embs.rows(), gold);
    std::vector<double> sims(label_embs.rows());
    for (std::size_t y = 0; y < sims.size(); ++y) sims[y] = cosine(e_x, label_embs.row(y));
    return detail::cw_loss_from_sims(sims, gold, weights, tau, {});
}

// Same loss evaluated through the embedding head, from raw features.
inline double cw_loss(const EmbedderParams& params, std::span<const double> f_x, const Matrix& label_feats,
                      std::size_t gold, const NegativeWeights& weights, double tau = 1.0) {
    return cw_loss(embed(params, f_x), embed_rows(params, label_feats), gold, weights, tau);
}

struct LossGradient {
    double loss = 0.0;
    Matrix weight;  // dL/dW, K x D
    std::vector<double> bias;
};

// Exact gradient of cw_loss with respect to (W, b); the head is shared, so
// the sentence embedding and every label embedding contribute.
inline LossGradient cw_loss_grad(const EmbedderParams& params, std::span<const double> f_x, const Matrix& label_feats,
                                 std::size_t gold, const NegativeWeights& weights, double tau = 1.0) {
    if (params.mode != EmbedderMode::Linear) fail(ErrorCode::BadArgument, "gradient requires a linear embedder");
    if (label_feats.cols() != params.input_dim) fail(ErrorCode::DimensionMismatch, "label features have wrong dimension");
    detail::check_weights(weights, label_feats.rows(), gold);
    const std::size_t K = params.embedding_dim, D = params.input_dim;
    const auto e_x = embed(params, f_x);
    const Matrix label_embs = embed_rows(params, label_feats);

    std::vector<double> grad_ex(K);
    Matrix grad_labels(label_feats.rows(), K);
    LossGradient g{detail::cw_backward(e_x, label_embs, gold, weights, tau, grad_ex, grad_labels), Matrix(K, D),
                   std::vector<double>(K, 0.0)};
    for (std::size_t k = 0; k < K; ++k) {
        g.bias[k] += grad_ex[k];
        for (std::size_t d = 0; d < D; ++d) g.weight(k, d) += grad_ex[k] * f_x[d];
        for (std::size_t y = 0; y < label_feats.rows(); ++y) {
            const double gy = grad_labels(y, k);
            if (gy == 0.0) continue;
            g.bias[k] += gy;
            for (std::size_t d = 0; d < D; ++d) g.weight(k, d) += gy * label_feats(y, d);
        }
    }
    return g;
}

inline std::vector<double> similarity_vector(const EmbedderParams& params, std::span<const double> f_x,
                                             const Matrix& label_feats) {
    const auto e_x = embed(params, f_x);
    std::vector<double> s(label_feats.rows());
    for (std::size_t y = 0; y < s.size(); ++y) s[y] = cosine(e_x, embed(params, label_feats.row(y)));
    return s;
}

// Against label embeddings computed once up front.
inline std::vector<double> similarity_vector(std::span<const double> e_x, const Matrix& label_embs) {
    std::vector<double> s(label_embs.rows());
    for (std::size_t y = 0; y < s.size(); ++y) s[y] = cosine(e_x, label_embs.row(y));
    return s;
}

enum class Weighting { Confusion, Uniform };

inline std::string_view to_string(Weighting w) noexcept { return w == Weighting::Confusion ? "confusion" : "uniform"; }

inline Weighting parse_weighting(std::string_view s) {
    if (s == "confusion") return Weighting::Confusion;
    if (s == "uniform") return Weighting::Uniform;
    fail(ErrorCode::BadArgument, "weighting must be 'confusion' or 'uniform', got '" + std::string(s) + "'");
}

struct TrainConfig {
    double learning_rate = 0.05;
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    Weighting weighting = Weighting::Confusion;
    double tau = 1.0;
    double neg_smoothing = kDefaultNegSmoothing;
    EmbedderMode mode = EmbedderMode::Linear;
    std::size_t embedding_dim = 0;  // 0: same as the feature dimension
};

inline void validate(const TrainConfig& cfg) {
    if (!(cfg.learning_rate > 0.0)) fail(ErrorCode::BadConfig, "learning rate must be positive");
    if (cfg.batch_size == 0) fail(ErrorCode::BadConfig, "batch size must be positive");
    if (!(cfg.tau > 0.0)) fail(ErrorCode::BadConfig, "temperature must be positive");
    if (!(cfg.neg_smoothing >= 0.0)) fail(ErrorCode::BadConfig, "negative smoothing must be >= 0");
}

struct TrainResult {
    EmbedderParams params;
    std::vector<double> loss_trace;  // [0] before training, [e] after epoch e
};

inline EmbedderParams init_linear(std::size_t input_dim, std::size_t embedding_dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    std::uniform_real_distribution<double> uni(-bound, bound);
    Matrix w(embedding_dim, input_dim);
    for (double& v : w.flat()) v = uni(rng);
    return EmbedderParams::linear(std::move(w), std::vector<double>(embedding_dim, 0.0));
}

// Per-gold-class negative weights for the configured weighting scheme.
inline std::vector<NegativeWeights> weights_by_class(const ConfusionProfile& profile, std::size_t num_classes,
                                                     const TrainConfig& cfg) {
    std::vector<NegativeWeights> out(num_classes);
    for (std::size_t y = 0; y < num_classes; ++y) {
        out[y] = cfg.weighting == Weighting::Uniform ? uniform_negative_weights(num_classes, y)
                                                     : negative_weights(profile, y, cfg.neg_smoothing);
    }
    return out;
}

inline double mean_loss(const EmbedderParams& params, const Matrix& features, std::span<const std::size_t> gold,
                        const Matrix& label_feats, const std::vector<NegativeWeights>& weights, double tau) {
    const Matrix label_embs = embed_rows(params, label_feats);
    double total = 0.0;
    for (std::size_t i = 0; i < features.rows(); ++i) {
        total += cw_loss(embed(params, features.row(i)), label_embs, gold[i], weights[gold[i]], tau);
    }
    return total / static_cast<double>(features.rows());
}

// Minibatch gradient descent on the mean loss over train pairs.
inline TrainResult train_embedder(const DatasetBundle& bundle, const ConfusionProfile& profile, const TrainConfig& cfg) {
    validate(cfg);
    if (!bundle.has_features() || !bundle.label_features) {
        fail(ErrorCode::MissingFeatures, "training needs sentence features and label features");
    }
    const std::size_t C = bundle.num_classes();
    if (profile.num_classes() != C) fail(ErrorCode::DimensionMismatch, "confusion profile does not match label count");
    const auto train = bundle.indices_of(Split::Train);
    if (train.empty()) fail(ErrorCode::BadArgument, "train split is empty");

    const Matrix features = bundle.features(train);
    const auto gold = bundle.gold(train);
    const Matrix& label_feats = *bundle.label_features;
    const auto weights = weights_by_class(profile, C, cfg);
    const std::size_t D = *bundle.dim;

    TrainResult result;
    if (cfg.mode == EmbedderMode::Identity) {
        result.params = EmbedderParams::identity(D);
        result.loss_trace.push_back(mean_loss(result.params, features, gold, label_feats, weights, cfg.tau));
        return result;
    }

    const std::size_t K = cfg.embedding_dim ? cfg.embedding_dim : D;
    EmbedderParams params = init_linear(D, K, cfg.seed);
    std::mt19937_64 shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    auto checked_mean = [&](const EmbedderParams& p, std::size_t epoch) {
        const double loss = mean_loss(p, features, gold, label_feats, weights, cfg.tau);
        if (!std::isfinite(loss)) {
            fail(ErrorCode::NonFiniteLoss, "mean loss is not finite after epoch " + std::to_string(epoch) +
                                               "; lower the learning rate");
        }
        return loss;
    };
    result.loss_trace.push_back(checked_mean(params, 0));

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Matrix grad_w(K, D), grad_labels(C, K);
    std::vector<double> grad_b(K), grad_ex(K);
    Matrix ex_label_grad(C, K);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            const Matrix label_embs = embed_rows(params, label_feats);
            std::fill(grad_w.flat().begin(), grad_w.flat().end(), 0.0);
            std::fill(grad_labels.flat().begin(), grad_labels.flat().end(), 0.0);
            std::fill(grad_b.begin(), grad_b.end(), 0.0);

            for (std::size_t t = start; t < stop; ++t) {
                const std::size_t i = order[t];
                const auto f = features.row(i);
                const auto e_x = embed(params, f);
                std::fill(ex_label_grad.flat().begin(), ex_label_grad.flat().end(), 0.0);
                const double loss =
                    detail::cw_backward(e_x, label_embs, gold[i], weights[gold[i]], cfg.tau, grad_ex, ex_label_grad);
                if (!std::isfinite(loss)) fail(ErrorCode::NonFiniteLoss, "loss diverged in epoch " + std::to_string(epoch));
                for (std::size_t k = 0; k < K; ++k) {
                    grad_b[k] += grad_ex[k];
                    auto gw = grad_w.row(k);
                    for (std::size_t d = 0; d < D; ++d) gw[d] += grad_ex[k] * f[d];
                }
                for (std::size_t v = 0; v < grad_labels.flat().size(); ++v) grad_labels.flat()[v] += ex_label_grad.flat()[v];
            }
            // Label embeddings share the head: chain their accumulated gradients once per batch.
            for (std::size_t y = 0; y < C; ++y) {
                const auto l = label_feats.row(y);
                for (std::size_t k = 0; k < K; ++k) {
                    const double gy = grad_labels(y, k);
                    if (gy == 0.0) continue;
                    grad_b[k] += gy;
                    auto gw = grad_w.row(k);
                    for (std::size_t d = 0; d < D; ++d) gw[d] += gy * l[d];
                }
            }
            const double scale = cfg.learning_rate / static_cast<double>(stop - start);
            for (std::size_t v = 0; v < grad_w.flat().size(); ++v) params.weight.flat()[v] -= scale * grad_w.flat()[v];
            for (std::size_t k = 0; k < K; ++k) params.bias[k] -= scale * grad_b[k];
        }
        result.loss_trace.push_back(checked_mean(params, epoch));
    }
    result.params = std::move(params);
    return result;
}

inline nlohmann::json params_to_json(const EmbedderParams& params, std::span<const double> loss_trace = {}) {
    return {{"mode", to_string(params.mode)},
            {"K", params.embedding_dim},
            {"D", params.input_dim},
            {"W", std::vector<double>(params.weight.flat().begin(), params.weight.flat().end())},
            {"b", params.bias},
            {"loss_trace", std::vector<double>(loss_trace.begin(), loss_trace.end())}};
}

inline EmbedderParams params_from_json(const nlohmann::json& j) {
    try {
        const auto mode = parse_embedder_mode(j.at("mode").get<std::string>());
        const auto K = j.at("K").get<std::size_t>();
        const auto D = j.at("D").get<std::size_t>();
        if (mode == EmbedderMode::Identity) {
            if (K != D) fail(ErrorCode::DimensionMismatch, "identity embedder requires K == D");
            return EmbedderParams::identity(D);
        }
        return EmbedderParams::linear(Matrix(K, D, j.at("W").get<std::vector<double>>()),
                                      j.at("b").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ParseError, std::string("malformed embedder params: ") + e.what());
    }
}

}  // namespace rise
