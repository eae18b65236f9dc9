#pragma once

// Independent reference implementations and fixtures shared by the unit tests
// and the acceptance binary. The oracles deliberately use different formulas
// from the library code they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rise/rise.hpp"

namespace rise::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("rise-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

inline double rel_err(double got, double want) {
    const double scale = std::max(1.0, std::abs(want));
    return std::abs(got - want) / scale;
}

// ---- oracles -------------------------------------------------------------

namespace oracle {

// First index holding the maximum, found by a plain scan.
inline std::size_t first_max(const std::vector<double>& z) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < z.size(); ++j) {
        if (z[j] > z[best]) best = j;
    }
    return best;
}

// Population variance as the mean squared pairwise difference over two.
inline double pairwise_variance(const std::vector<double>& z) {
    const double C = static_cast<double>(z.size());
    double s = 0.0;
    for (double a : z) {
        for (double b : z) s += (a - b) * (a - b);
    }
    return s / (2.0 * C * C);
}

inline double threshold(const std::vector<std::vector<double>>& logits, const std::vector<std::size_t>& gold) {
    std::vector<double> wrong;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (first_max(logits[i]) != gold[i]) wrong.push_back(pairwise_variance(logits[i]));
    }
    double s = 0.0;
    for (double v : wrong) s += v;
    return wrong.empty() ? std::nan("") : s / static_cast<double>(wrong.size());
}

// Standard InfoNCE: cross-entropy of softmax(sims / tau) at gold.
inline double infonce(const std::vector<double>& sims, std::size_t gold, double tau = 1.0) {
    double z = 0.0;
    for (double s : sims) z += std::exp(s / tau);
    return std::log(z) - sims[gold] / tau;
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    double uv = 0.0, uu = 0.0, vv = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        uv += u[k] * v[k];
        uu += u[k] * u[k];
        vv += v[k] * v[k];
    }
    return uv / std::sqrt(uu * vv);
}

// Weighted InfoNCE written directly as -log(numerator / denominator).
inline double weighted_infonce(const std::vector<double>& sims, std::size_t gold, const std::map<std::size_t, double>& w,
                               double tau) {
    const double num = std::exp(sims[gold] / tau);
    double den = num;
    for (const auto& [y, wy] : w) den += wy * std::exp(sims[y] / tau);
    return -std::log(num / den);
}

struct F1 {
    double macro = 0.0;
    double weighted = 0.0;
    std::vector<double> per_class;
};

// F1 = 2TP / (2TP + FP + FN) per class, from an explicit contingency table.
inline F1 f1(const std::vector<std::size_t>& gold, const std::vector<std::size_t>& pred, std::size_t C, bool all_classes) {
    std::vector<std::vector<double>> table(C, std::vector<double>(C, 0.0));
    for (std::size_t i = 0; i < gold.size(); ++i) table[gold[i]][pred[i]] += 1.0;
    F1 out;
    double macro = 0.0, weighted = 0.0, counted = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        double tp = table[c][c], fp = 0.0, fn = 0.0;
        for (std::size_t o = 0; o < C; ++o) {
            if (o == c) continue;
            fp += table[o][c];
            fn += table[c][o];
        }
        const double denom = 2.0 * tp + fp + fn;
        const double f = denom > 0.0 ? 2.0 * tp / denom : 0.0;
        out.per_class.push_back(f);
        const double support = tp + fn;
        if (all_classes || denom > 0.0) {
            macro += f;
            counted += 1.0;
        }
        weighted += f * support;
    }
    out.macro = counted > 0.0 ? macro / counted : 0.0;
    out.weighted = gold.empty() ? 0.0 : weighted / static_cast<double>(gold.size());
    return out;
}

inline double kappa(const std::vector<int>& a, const std::vector<int>& b) {
    double table[4][4] = {};
    for (std::size_t i = 0; i < a.size(); ++i) table[a[i]][b[i]] += 1.0;
    const double n = static_cast<double>(a.size());
    double po = 0.0, pe = 0.0;
    for (int c = 0; c < 4; ++c) {
        po += table[c][c];
        double row = 0.0, col = 0.0;
        for (int o = 0; o < 4; ++o) {
            row += table[c][o];
            col += table[o][c];
        }
        pe += row * col;
    }
    po /= n;
    pe /= n * n;
    return (po - pe) / (1.0 - pe);
}

// Average rank by counting: (#smaller) + (#equal + 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& xs) {
    std::vector<double> r(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double less = 0.0, equal = 0.0;
        for (double x : xs) {
            less += x < xs[i];
            equal += x == xs[i];
        }
        r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
}

inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    const auto rx = ranks(xs), ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sx += rx[i];
        sy += ry[i];
        sxx += rx[i] * rx[i];
        syy += ry[i] * ry[i];
        sxy += rx[i] * ry[i];
    }
    return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

}  // namespace oracle

// ---- random instances ----------------------------------------------------

inline std::vector<std::vector<double>> random_logits(std::mt19937_64& rng, std::size_t n, std::size_t C, double scale = 3.0) {
    std::normal_distribution<double> g(0.0, scale);
    std::vector<std::vector<double>> rows(n, std::vector<double>(C));
    for (auto& r : rows) {
        for (double& v : r) v = g(rng);
    }
    return rows;
}

inline std::vector<std::size_t> random_labels(std::mt19937_64& rng, std::size_t n, std::size_t C) {
    std::uniform_int_distribution<std::size_t> u(0, C - 1);
    std::vector<std::size_t> out(n);
    for (auto& v : out) v = u(rng);
    return out;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(rows, cols);
    for (double& v : m.flat()) v = g(rng);
    return m;
}

// ---- gradient check ------------------------------------------------------

struct GradInstance {
    EmbedderParams params;
    std::vector<double> f_x;
    Matrix label_feats;
    std::size_t gold = 0;
    NegativeWeights weights;
    double tau = 1.0;
};

inline GradInstance random_grad_instance(std::mt19937_64& rng) {
    GradInstance g;
    const std::size_t D = 2 + rng() % 5, K = 2 + rng() % 4, C = 2 + rng() % 5;
    g.params = EmbedderParams::linear(random_matrix(rng, K, D), [&] {
        std::vector<double> b(K);
        std::normal_distribution<double> n(0.0, 0.5);
        for (double& v : b) v = n(rng);
        return b;
    }());
    const Matrix f = random_matrix(rng, 1, D);
    g.f_x.assign(f.row(0).begin(), f.row(0).end());
    g.label_feats = random_matrix(rng, C, D);
    g.gold = rng() % C;
    std::uniform_real_distribution<double> w(0.0, 1.5), t(0.3, 2.0);
    for (std::size_t y = 0; y < C; ++y) {
        if (y != g.gold) g.weights[y] = w(rng);
    }
    g.tau = t(rng);
    return g;
}

// Max abs difference between analytic and central-difference gradients,
// divided by the largest gradient entry.
inline double gradient_relative_error(const GradInstance& g, double step = 1e-6) {
    const auto analytic = cw_loss_grad(g.params, g.f_x, g.label_feats, g.gold, g.weights, g.tau);
    auto loss_at = [&](const EmbedderParams& p) { return cw_loss(p, g.f_x, g.label_feats, g.gold, g.weights, g.tau); };
    double max_diff = 0.0, max_grad = 0.0;
    auto probe = [&](double analytic_value, auto&& perturb) {
        EmbedderParams plus = g.params, minus = g.params;
        perturb(plus, step);
        perturb(minus, -step);
        const double numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * step);
        max_diff = std::max(max_diff, std::abs(numeric - analytic_value));
        max_grad = std::max({max_grad, std::abs(numeric), std::abs(analytic_value)});
    };
    const std::size_t K = g.params.embedding_dim, D = g.params.input_dim;
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t d = 0; d < D; ++d) {
            probe(analytic.weight(k, d), [&](EmbedderParams& p, double h) { p.weight(k, d) += h; });
        }
        probe(analytic.bias[k], [&](EmbedderParams& p, double h) { p.bias[k] += h; });
    }
    return max_grad > 0.0 ? max_diff / max_grad : max_diff;
}

// Small bundle with features, label features and all three splits.
inline DatasetBundle tiny_bundle(std::uint64_t seed = 1, std::size_t per_split = 12, std::size_t C = 3, std::size_t D = 4) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> names;
    for (std::size_t c = 0; c < C; ++c) names.push_back("label " + std::to_string(c));
    DatasetBundle b;
    b.labels = LabelSet(names);
    b.dim = D;
    b.label_features = random_matrix(rng, C, D);
    std::normal_distribution<double> g(0.0, 1.0);
    std::size_t serial = 0;
    for (Split s : {Split::Train, Split::Dev, Split::Test}) {
        for (std::size_t i = 0; i < per_split; ++i) {
            ExampleRecord ex;
            ex.id = "ex" + std::to_string(serial++);
            ex.split = s;
            ex.gold = i % C;
            ex.logits.resize(C);
            for (double& v : ex.logits) v = g(rng);
            ex.features.resize(D);
            for (std::size_t d = 0; d < D; ++d) ex.features[d] = (*b.label_features)(ex.gold, d) + 0.5 * g(rng);
            b.examples.push_back(std::move(ex));
        }
    }
    return b;
}

// The confusable synthetic bundle used by the end-to-end checks.
inline SynthConfig confusable_config(std::uint64_t seed = 7) {
    SynthConfig cfg;
    cfg.classes = 6;
    cfg.dim = 16;
    cfg.n_per_class = 200;
    cfg.overlap = 0.1;
    cfg.noise = 0.5;
    cfg.confusable_pairs = {{0, 1}, {2, 3}};
    cfg.seed = seed;
    return cfg;
}

// Run settings used for the end-to-end experiment.
inline RunConfig experiment_run_config(const fs::path& manifest, const fs::path& out, std::uint64_t seed = 0) {
    RunConfig rc;
    rc.manifest = manifest;
    rc.output_dir = out;
    rc.seed = seed;
    rc.train.learning_rate = 0.5;
    rc.train.epochs = 100;
    rc.train.tau = 0.2;
    return rc;
}

}  // namespace rise::testing
