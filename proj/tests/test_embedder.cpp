#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace rise;
namespace oracle = rise::testing::oracle;

TEST(Embed, IdentityAndLinear) {
    const double f[] = {1.0, 2.0};
    EXPECT_EQ(embed(EmbedderParams::identity(2), f), (std::vector<double>{1.0, 2.0}));
    const auto p = EmbedderParams::linear(Matrix::from_rows({{2, 0}, {0, 2}}), {1, 1});
    const double ones[] = {1.0, 1.0};
    EXPECT_EQ(embed(p, ones), (std::vector<double>{3.0, 3.0}));
    const auto eye = EmbedderParams::linear(Matrix::from_rows({{1, 0}, {0, 1}}), {0, 0});
    EXPECT_EQ(embed(eye, f), (std::vector<double>{1.0, 2.0}));
    const double wrong[] = {1.0, 2.0, 3.0};
    EXPECT_THROW(embed(p, wrong), Error);
}

TEST(Cosine, Examples) {
    const double u[] = {1.0, 0.0}, v[] = {1.0, 1.0}, w[] = {0.0, 3.0}, zero[] = {0.0, 0.0};
    EXPECT_NEAR(cosine(u, v), 1.0 / std::sqrt(2.0), 1e-15);
    EXPECT_DOUBLE_EQ(cosine(v, v), 1.0);
    EXPECT_EQ(cosine(u, w), 0.0);
    try {
        cosine(u, zero);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ZeroVector);
    }
}

TEST(Cosine, ScaleInvariantAndBounded) {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int t = 0; t < 500; ++t) {
        const auto m = rise::testing::random_matrix(rng, 2, 1 + t % 8);
        std::vector<double> a(m.row(0).begin(), m.row(0).end()), b(m.row(1).begin(), m.row(1).end());
        const double c = cosine(a, b);
        EXPECT_LE(std::abs(c), 1.0);
        EXPECT_NEAR(c, oracle::cosine(a, b), 1e-12);
        const double sa = scale(rng), sb = scale(rng);
        for (double& x : a) x *= sa;
        for (double& x : b) x *= sb;
        EXPECT_NEAR(cosine(a, b), c, 1e-9);
    }
}

TEST(CwLoss, ZeroWeightsGiveExactlyZero) {
    const auto labels = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
    const double e[] = {0.3, 0.9};
    EXPECT_EQ(cw_loss(e, labels, 1, {{0, 0.0}, {2, 0.0}}), 0.0);
}

TEST(CwLoss, ClosedFormTwoLabels) {
    const auto labels = Matrix::from_rows({{1, 0}, {0, 1}});
    const double e[] = {2.0, 0.0};  // s_gold = 1, s_neg = 0
    EXPECT_NEAR(cw_loss(e, labels, 0, {{1, 1.0}}), std::log1p(std::exp(-1.0)), 1e-15);
    EXPECT_NEAR(cw_loss(e, labels, 0, {{1, 1.0}}), 0.313262, 1e-6);
}

TEST(CwLoss, MatchesDirectFormulaAndInfoNce) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> w(0.0, 2.0), t(0.2, 3.0);
    for (int i = 0; i < 300; ++i) {
        const std::size_t C = 2 + rng() % 7, K = 2 + rng() % 5;
        const auto labels = rise::testing::random_matrix(rng, C, K);
        const auto ex = rise::testing::random_matrix(rng, 1, K);
        const std::vector<double> e(ex.row(0).begin(), ex.row(0).end());
        const std::size_t gold = rng() % C;
        std::vector<double> sims(C);
        for (std::size_t y = 0; y < C; ++y) {
            sims[y] = oracle::cosine(e, std::vector<double>(labels.row(y).begin(), labels.row(y).end()));
        }
        NegativeWeights weights, ones;
        for (std::size_t y = 0; y < C; ++y) {
            if (y == gold) continue;
            weights[y] = w(rng);
            ones[y] = 1.0;
        }
        const double tau = t(rng);
        EXPECT_LE(rise::testing::rel_err(cw_loss(e, labels, gold, weights, tau),
                                         oracle::weighted_infonce(sims, gold, weights, tau)),
                  1e-12);
        EXPECT_LE(rise::testing::rel_err(cw_loss(e, labels, gold, ones, 1.0), oracle::infonce(sims, gold)), 1e-12);
        EXPECT_GE(cw_loss(e, labels, gold, weights, tau), 0.0);
    }
}

TEST(CwLoss, DoublingWeightsIncreasesLoss) {
    std::mt19937_64 rng(78);
    for (int i = 0; i < 200; ++i) {
        const std::size_t C = 3, K = 3;
        const auto labels = rise::testing::random_matrix(rng, C, K);
        const auto ex = rise::testing::random_matrix(rng, 1, K);
        const std::size_t gold = rng() % C;
        NegativeWeights w, w2;
        for (std::size_t y = 0; y < C; ++y) {
            if (y == gold) continue;
            w[y] = 0.1 + 0.1 * static_cast<double>(y);
            w2[y] = 2.0 * w[y];
        }
        EXPECT_GT(cw_loss(ex.row(0), labels, gold, w2), cw_loss(ex.row(0), labels, gold, w));
    }
}

TEST(CwLoss, StableForTinyTemperature) {
    const auto labels = Matrix::from_rows({{1, 0}, {0, 1}});
    const double e[] = {0.0, 1.0};  // gold 0 has s=0, negative has s=1
    const double loss = cw_loss(e, labels, 0, {{1, 1.0}}, 1e-4);
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, 1e4, 1e-6);
}

TEST(CwLoss, RejectsBadWeights) {
    const auto labels = Matrix::from_rows({{1, 0}, {0, 1}, {1, 1}});
    const double e[] = {1.0, 0.5};
    EXPECT_THROW(cw_loss(e, labels, 0, {{1, 1.0}}), Error);                 // missing label 2
    EXPECT_THROW(cw_loss(e, labels, 0, {{0, 1.0}, {1, 1.0}, {2, 1.0}}), Error);  // includes gold
    EXPECT_THROW(cw_loss(e, labels, 0, {{1, -1.0}, {2, 1.0}}), Error);
    EXPECT_THROW(cw_loss(e, labels, 0, {{1, 1.0}, {2, 1.0}}, 0.0), Error);
}

TEST(CwLossGrad, MatchesFiniteDifferences) {
    std::mt19937_64 rng(1234);
    for (int i = 0; i < 100; ++i) {
        const auto g = rise::testing::random_grad_instance(rng);
        EXPECT_LT(rise::testing::gradient_relative_error(g), 1e-5) << "instance " << i;
    }
}

TEST(CwLossGrad, FixedSmallInstance) {
    std::mt19937_64 rng(3);
    rise::testing::GradInstance g;
    g.params = EmbedderParams::linear(rise::testing::random_matrix(rng, 2, 3), {0.1, -0.2});
    g.f_x = {0.5, -1.0, 2.0};
    g.label_feats = rise::testing::random_matrix(rng, 4, 3);
    g.gold = 2;
    g.weights = {{0, 0.3}, {1, 1.0}, {3, 0.01}};
    EXPECT_LT(rise::testing::gradient_relative_error(g), 1e-5);
}

TEST(CwLossGrad, ZeroWeightsGiveZeroGradient) {
    std::mt19937_64 rng(4);
    auto g = rise::testing::random_grad_instance(rng);
    for (auto& [y, w] : g.weights) w = 0.0;
    const auto grad = cw_loss_grad(g.params, g.f_x, g.label_feats, g.gold, g.weights, g.tau);
    EXPECT_EQ(grad.loss, 0.0);
    for (double v : grad.weight.flat()) EXPECT_EQ(v, 0.0);
    for (double v : grad.bias) EXPECT_EQ(v, 0.0);
}

TEST(CwLossGrad, DescentStepLowersLoss) {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto g = rise::testing::random_grad_instance(rng);
        const auto grad = cw_loss_grad(g.params, g.f_x, g.label_feats, g.gold, g.weights, g.tau);
        double norm2 = 0.0;
        for (double v : grad.weight.flat()) norm2 += v * v;
        for (double v : grad.bias) norm2 += v * v;
        if (norm2 < 1e-12) continue;
        auto p = g.params;
        const double step = 1e-4;
        for (std::size_t k = 0; k < p.weight.flat().size(); ++k) p.weight.flat()[k] -= step * grad.weight.flat()[k];
        for (std::size_t k = 0; k < p.bias.size(); ++k) p.bias[k] -= step * grad.bias[k];
        EXPECT_LT(cw_loss(p, g.f_x, g.label_feats, g.gold, g.weights, g.tau), grad.loss);
    }
}

TEST(SimilarityVector, Examples) {
    const auto lf = Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    const double f[] = {1, 0, 0};
    const auto s = similarity_vector(EmbedderParams::identity(3), f, lf);
    EXPECT_EQ(s, (std::vector<double>{1.0, 0.0, 0.0}));

    std::mt19937_64 rng(6);
    const auto p = EmbedderParams::linear(rise::testing::random_matrix(rng, 3, 4), {0.1, 0.2, 0.3});
    const auto labels = rise::testing::random_matrix(rng, 5, 4);
    const auto x = rise::testing::random_matrix(rng, 1, 4);
    const auto sim = similarity_vector(p, x.row(0), labels);
    const auto ex = embed(p, x.row(0));
    for (std::size_t y = 0; y < 5; ++y) {
        EXPECT_NEAR(sim[y], oracle::cosine(ex, embed(p, labels.row(y))), 1e-12);
    }
}

TEST(TrainEmbedder, ZeroEpochsReturnsInitialization) {
    const auto b = rise::testing::tiny_bundle(2);
    const auto dev = b.indices_of(Split::Dev);
    const auto profile = fit_confusion(b.logits(dev), b.gold(dev));
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 99;
    const auto r = train_embedder(b, profile, cfg);
    EXPECT_EQ(r.params, init_linear(*b.dim, *b.dim, 99));
    EXPECT_EQ(r.loss_trace.size(), 1u);
}

TEST(TrainEmbedder, LossDecreasesOnSeparableData) {
    SynthConfig sc;
    sc.classes = 2;
    sc.dim = 4;
    sc.n_per_class = 50;
    sc.noise = 0.3;
    sc.anchor = 1e-9;
    sc.seed = 12;
    const auto b = generate(sc);
    const auto dev = b.indices_of(Split::Dev);
    const auto profile = fit_confusion(b.logits(dev), b.gold(dev));
    TrainConfig cfg;
    cfg.epochs = 64;  // 4 batches per epoch: 256 steps
    cfg.learning_rate = 0.1;
    const auto r = train_embedder(b, profile, cfg);
    ASSERT_EQ(r.loss_trace.size(), 65u);
    EXPECT_LT(r.loss_trace.back(), r.loss_trace.front());
}

TEST(TrainEmbedder, DeterministicGivenSeed) {
    const auto b = rise::testing::tiny_bundle(5, 20);
    const auto dev = b.indices_of(Split::Dev);
    const auto profile = fit_confusion(b.logits(dev), b.gold(dev));
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch_size = 7;
    cfg.seed = 3;
    const auto a = train_embedder(b, profile, cfg);
    const auto c = train_embedder(b, profile, cfg);
    EXPECT_EQ(a.params, c.params);
    EXPECT_EQ(a.loss_trace, c.loss_trace);
    cfg.seed = 4;
    EXPECT_NE(train_embedder(b, profile, cfg).params, a.params);
}

TEST(TrainEmbedder, NeedsFeatures) {
    auto b = rise::testing::tiny_bundle(6);
    const auto dev = b.indices_of(Split::Dev);
    const auto profile = fit_confusion(b.logits(dev), b.gold(dev));
    b.label_features.reset();
    try {
        train_embedder(b, profile, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingFeatures);
    }
}

TEST(TrainEmbedder, DivergenceIsReported) {
    const auto b = rise::testing::tiny_bundle(7, 20);
    const auto dev = b.indices_of(Split::Dev);
    const auto profile = fit_confusion(b.logits(dev), b.gold(dev));
    TrainConfig cfg;
    cfg.learning_rate = 1e300;
    cfg.epochs = 50;
    try {
        train_embedder(b, profile, cfg);
        FAIL() << "expected divergence";
    } catch (const Error& e) {
        EXPECT_TRUE(e.code() == ErrorCode::NonFiniteLoss || e.code() == ErrorCode::ZeroVector) << e.what();
    }
}

TEST(Params, JsonRoundTrip) {
    std::mt19937_64 rng(8);
    const auto p = EmbedderParams::linear(rise::testing::random_matrix(rng, 3, 5), {0.1, 1e-17, -3.25});
    const std::vector<double> trace{1.5, 1.25};
    const auto j = nlohmann::json::parse(params_to_json(p, trace).dump());
    EXPECT_EQ(params_from_json(j), p);
    EXPECT_EQ(j["loss_trace"].get<std::vector<double>>(), trace);
    EXPECT_EQ(params_from_json(params_to_json(EmbedderParams::identity(4))), EmbedderParams::identity(4));
}
