#pragma once

// Seeded synthetic bundles: Gaussian clusters around class centroids with
// chosen pairs pulled together, scored by a multinomial logistic baseline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rise/dataset_io.hpp"
#include "rise/error.hpp"
#include "rise/matrix.hpp"

namespace rise {

struct BaselineConfig {
    std::size_t epochs = 300;
    double learning_rate = 0.5;
    double l2 = 0.0;
};

struct SynthConfig {
    std::size_t classes = 6;
    std::size_t dim = 16;
    std::size_t n_per_class = 200;  // per class, per split
    double overlap = 0.1;           // confusable pairs keep this fraction of their distance
    double noise = 0.5;             // per-coordinate Gaussian std of sentence features
    std::vector<std::pair<std::size_t, std::size_t>> confusable_pairs;
    std::uint64_t seed = 7;
    double radius = 0.0;            // centroid distance from the anchor; 0 means sqrt(dim)
    double anchor = 0.0;            // norm of the offset shared by all centroids; 0 means sqrt(dim)
    double label_noise = 0.0;       // std of noise added to label features
    // The baseline classifier scores its own independent noisy view of each
    // example with this per-coordinate std; 0 makes it score the stored features.
    double classifier_noise = 0.5;
    BaselineConfig baseline;
};

inline void validate(const SynthConfig& cfg) {
    if (cfg.classes < 2) fail(ErrorCode::BadConfig, "need at least 2 classes");
    if (cfg.dim == 0) fail(ErrorCode::BadConfig, "dim must be positive");
    if (cfg.n_per_class == 0) fail(ErrorCode::BadConfig, "n_per_class must be positive");
    if (!(cfg.overlap >= 0.0)) fail(ErrorCode::BadConfig, "overlap must be >= 0");
    if (!(cfg.noise > 0.0)) fail(ErrorCode::BadConfig, "noise must be > 0");
    if (!(cfg.radius >= 0.0) || !(cfg.anchor >= 0.0) || !(cfg.label_noise >= 0.0) || !(cfg.classifier_noise >= 0.0)) {
        fail(ErrorCode::BadConfig, "radius, anchor, label_noise and classifier_noise must be >= 0");
    }
    if (cfg.baseline.epochs == 0 || !(cfg.baseline.learning_rate > 0.0) || !(cfg.baseline.l2 >= 0.0)) {
        fail(ErrorCode::BadConfig, "baseline needs epochs > 0, learning_rate > 0, l2 >= 0");
    }
    for (const auto& [a, b] : cfg.confusable_pairs) {
        if (a >= cfg.classes || b >= cfg.classes || a == b) {
            fail(ErrorCode::BadConfig, "confusable pair (" + std::to_string(a) + "," + std::to_string(b) + ") is invalid");
        }
    }
}

// Multinomial logistic regression: logits = W f + b.
struct LogisticModel {
    Matrix weight;  // C x D
    std::vector<double> bias;

    std::vector<double> logits(std::span<const double> f) const {
        std::vector<double> z(bias);
        for (std::size_t c = 0; c < z.size(); ++c) {
            const auto w = weight.row(c);
            for (std::size_t d = 0; d < f.size(); ++d) z[c] += w[d] * f[d];
        }
        return z;
    }
};

// Full-batch gradient descent on mean cross-entropy from a zero start, so the
// fit is a deterministic function of the data.
inline LogisticModel fit_baseline(const Matrix& features, std::span<const std::size_t> gold, std::size_t num_classes,
                                  const BaselineConfig& cfg = {}) {
    if (features.rows() == 0) fail(ErrorCode::BadArgument, "baseline needs a non-empty train split");
    if (features.rows() != gold.size()) fail(ErrorCode::LengthMismatch, "features rows do not match gold count");
    const std::size_t N = features.rows(), D = features.cols(), C = num_classes;
    LogisticModel model{Matrix(C, D), std::vector<double>(C, 0.0)};
    Matrix grad_w(C, D);
    std::vector<double> grad_b(C), p(C);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad_w.flat().begin(), grad_w.flat().end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        double loss = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const auto f = features.row(i);
            const auto z = model.logits(f);
            double m = z[0];
            for (double v : z) m = std::max(m, v);
            double sum = 0.0;
            for (std::size_t c = 0; c < C; ++c) sum += (p[c] = std::exp(z[c] - m));
            for (std::size_t c = 0; c < C; ++c) p[c] /= sum;
            loss += -(z[gold[i]] - m - std::log(sum));
            for (std::size_t c = 0; c < C; ++c) {
                const double g = p[c] - (c == gold[i] ? 1.0 : 0.0);
                grad_b[c] += g;
                auto gw = grad_w.row(c);
                for (std::size_t d = 0; d < D; ++d) gw[d] += g * f[d];
            }
        }
        if (!std::isfinite(loss)) fail(ErrorCode::NonFiniteLoss, "baseline loss diverged at epoch " + std::to_string(epoch));
        const double scale = cfg.learning_rate / static_cast<double>(N);
        for (std::size_t c = 0; c < C; ++c) {
            model.bias[c] -= scale * grad_b[c];
            for (std::size_t d = 0; d < D; ++d) {
                model.weight(c, d) -= scale * grad_w(c, d) + cfg.learning_rate * cfg.l2 * model.weight(c, d);
            }
        }
    }
    return model;
}

// Class centroids: points at `radius` from a shared anchor, with confusable
// pairs shrunk toward their midpoint.
inline Matrix synth_centroids(const SynthConfig& cfg, std::mt19937_64& rng) {
    const std::size_t C = cfg.classes, D = cfg.dim;
    const double radius = cfg.radius > 0.0 ? cfg.radius : std::sqrt(static_cast<double>(D));
    const double anchor_norm = cfg.anchor > 0.0 ? cfg.anchor : std::sqrt(static_cast<double>(D));
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto unit = [&] {
        std::vector<double> v(D);
        double n2 = 0.0;
        do {
            n2 = 0.0;
            for (double& x : v) {
                x = gauss(rng);
                n2 += x * x;
            }
        } while (n2 == 0.0);
        const double n = std::sqrt(n2);
        for (double& x : v) x /= n;
        return v;
    };

    const auto anchor = unit();
    Matrix centroids(C, D);
    for (std::size_t c = 0; c < C; ++c) {
        const auto dir = unit();
        for (std::size_t d = 0; d < D; ++d) centroids(c, d) = anchor_norm * anchor[d] + radius * dir[d];
    }
    for (const auto& [a, b] : cfg.confusable_pairs) {
        for (std::size_t d = 0; d < D; ++d) {
            const double mid = 0.5 * (centroids(a, d) + centroids(b, d));
            centroids(a, d) = mid + cfg.overlap * (centroids(a, d) - mid);
            centroids(b, d) = mid + cfg.overlap * (centroids(b, d) - mid);
        }
    }
    return centroids;
}

inline DatasetBundle generate(const SynthConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(cfg.seed);
    const std::size_t C = cfg.classes, D = cfg.dim;
    const Matrix centroids = synth_centroids(cfg, rng);
    std::normal_distribution<double> noise(0.0, cfg.noise);

    std::vector<std::string> names;
    for (std::size_t c = 0; c < C; ++c) names.push_back("class_" + std::to_string(c));

    DatasetBundle b;
    b.labels = LabelSet(std::move(names));
    b.dim = D;
    Matrix views;  // classifier inputs, one row per example
    std::vector<std::vector<double>> view_rows;
    std::normal_distribution<double> view_noise(0.0, cfg.classifier_noise > 0.0 ? cfg.classifier_noise : 1.0);
    for (Split split : {Split::Train, Split::Dev, Split::Test}) {
        std::size_t serial = 0;
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < cfg.n_per_class; ++i) {
                ExampleRecord ex;
                ex.id = std::string(to_string(split)) + "-" + std::to_string(serial++);
                ex.split = split;
                ex.gold = c;
                ex.features.resize(D);
                for (std::size_t d = 0; d < D; ++d) ex.features[d] = centroids(c, d) + noise(rng);
                if (cfg.classifier_noise > 0.0) {
                    std::vector<double> view(D);
                    for (std::size_t d = 0; d < D; ++d) view[d] = centroids(c, d) + view_noise(rng);
                    view_rows.push_back(std::move(view));
                } else {
                    view_rows.push_back(ex.features);
                }
                b.examples.push_back(std::move(ex));
            }
        }
    }

    Matrix label_features = centroids;
    if (cfg.label_noise > 0.0) {
        std::normal_distribution<double> lnoise(0.0, cfg.label_noise);
        for (double& v : label_features.flat()) v += lnoise(rng);
    }
    b.label_features = std::move(label_features);

    views = Matrix::from_rows(view_rows);
    const auto train = b.indices_of(Split::Train);
    const auto model = fit_baseline(views.select_rows(train), b.gold(train), C, cfg.baseline);
    for (std::size_t i = 0; i < b.examples.size(); ++i) {
        // Logits are only defined up to a per-row constant (softmax, argmax and
        // variance ignore it); pin the row minimum at 0 so a multiplicative
        // rerank never meets a negative logit.
        auto z = model.logits(views.row(i));
        const double lo = *std::min_element(z.begin(), z.end());
        for (double& v : z) v -= lo;
        b.examples[i].logits = std::move(z);
    }

    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [a, c] : cfg.confusable_pairs) pairs.push_back({a, c});
    b.meta = {{"source", "synth"},
              {"model", "logistic-baseline"},
              {"seed", cfg.seed},
              {"classes", C},
              {"dim", D},
              {"n_per_class", cfg.n_per_class},
              {"overlap", cfg.overlap},
              {"noise", cfg.noise},
              {"confusable_pairs", pairs}};
    return b;
}

}  // namespace rise
