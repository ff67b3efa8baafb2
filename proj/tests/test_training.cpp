#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mfn/patches.hpp"
#include "mfn/synth.hpp"
#include "mfn/training.hpp"

using namespace mfn;

namespace {

Tensor4 random_scores(Shape s, std::uint64_t seed, double scale = 2.0) {
    Tensor4 t(s);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.values()) v = static_cast<Real>(d(rng));
    return t;
}

LabelMap random_labels(int n, int h, int w, int k, std::uint64_t seed) {
    LabelMap m(n, h, w);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, k - 1);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(d(rng));
    return m;
}

LossConfig uniform(int k) { return LossConfig{std::vector<float>(k, 1.0f)}; }

ModelConfig tiny_segnet() {
    ModelConfig c;
    c.widths = {4, 8, 8, 8, 8};
    c.k = 6;
    return c;
}

} // namespace

TEST(ClassWeights, HandCases) {
    const std::vector<std::uint64_t> even = {50, 50};
    const auto a = class_weights(even);
    EXPECT_FLOAT_EQ(a[0], 1.0f);
    EXPECT_FLOAT_EQ(a[1], 1.0f);
    const std::vector<std::uint64_t> h = {50, 25, 25};
    const auto b = class_weights(h);
    EXPECT_NEAR(b[0], 0.6, 1e-6);
    EXPECT_NEAR(b[1], 1.2, 1e-6);
    EXPECT_NEAR(b[2], 1.2, 1e-6);
}

TEST(ClutterWeight, EqualsMinimumNonClutterWeight) {
    const std::vector<std::uint64_t> h = {60, 38, 2};
    const auto w = class_weights(h, 2);
    EXPECT_FLOAT_EQ(w[2], w[0]);
    EXPECT_LT(w[0], w[1]);
    // Non-clutter weights have mean 1 and are inversely proportional to frequency.
    EXPECT_NEAR((w[0] + w[1]) / 2.0, 1.0, 1e-6);
    EXPECT_NEAR(w[0] / w[1], 38.0 / 60.0, 1e-6);
}

TEST(ClassWeightsEdges, AbsentClassesAndErrors) {
    const std::vector<std::uint64_t> h = {10, 0, 30};
    const auto w = class_weights(h);
    EXPECT_FLOAT_EQ(w[1], std::max(w[0], w[2]));
    const std::vector<std::uint64_t> zero = {0, 0};
    EXPECT_THROW(class_weights(zero), ArgumentError);
    EXPECT_THROW(class_weights(h, 3), ArgumentError);
}

TEST(CrossEntropy, UniformScoresGiveLnK) {
    const Tensor4 z(Shape{1, 2, 1, 1});
    LabelMap t(1, 1, 1, 0);
    const LossResult r = cross_entropy_loss(z, t, uniform(2));
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-6);
    EXPECT_EQ(r.valid, 1u);
    EXPECT_NEAR(r.grad(0, 0, 0, 0), -0.5, 1e-6);
    EXPECT_NEAR(r.grad(0, 1, 0, 0), 0.5, 1e-6);
}

TEST(CrossEntropy, SaturatedCorrectPrediction) {
    Tensor4 z(Shape{1, 2, 1, 1});
    z(0, 0, 0, 0) = 100;
    LabelMap t(1, 1, 1, 0);
    const LossResult r = cross_entropy_loss(z, t, uniform(2));
    EXPECT_LT(r.loss, 1e-4);
    EXPECT_GE(r.loss, 0.0);
    for (Real g : r.grad.values()) EXPECT_LT(std::abs(g), 1e-6);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
    const Tensor4 z = random_scores(Shape{1, 3, 2, 2}, 4);
    const LabelMap t = random_labels(1, 2, 2, 3, 5);
    LossConfig cfg{{0.5f, 1.5f, 1.0f}};
    const LossResult r = cross_entropy_loss(z, t, cfg);
    const double h = 1e-2;
    for (std::size_t i = 0; i < z.values().size(); ++i) {
        Tensor4 p = z, m = z;
        p.values()[i] += static_cast<Real>(h);
        m.values()[i] -= static_cast<Real>(h);
        const double num = (cross_entropy_loss(p, t, cfg).loss - cross_entropy_loss(m, t, cfg).loss) / (2 * h);
        const double ana = r.grad.values()[i];
        EXPECT_LT(std::abs(num - ana) / std::max(1e-4, std::max(std::abs(num), std::abs(ana))), 1e-3) << i;
    }
}

TEST(CrossEntropy, WeightScalingIsExact) {
    const Tensor4 z = random_scores(Shape{2, 4, 3, 3}, 6);
    const LabelMap t = random_labels(2, 3, 3, 4, 7);
    LossConfig a{{1.0f, 0.5f, 2.0f, 1.0f}}, b = a;
    for (float& w : b.class_weights) w *= 4.0f; // power of two keeps the scaling exact
    const LossResult ra = cross_entropy_loss(z, t, a), rb = cross_entropy_loss(z, t, b);
    EXPECT_DOUBLE_EQ(rb.loss, 4.0 * ra.loss);
    for (std::size_t i = 0; i < ra.grad.values().size(); ++i)
        EXPECT_EQ(rb.grad.values()[i], 4.0f * ra.grad.values()[i]);
}

TEST(CrossEntropy, IgnoreAndErrors) {
    const Tensor4 z = random_scores(Shape{1, 3, 2, 2}, 8);
    LabelMap t(1, 2, 2, LabelMap::kIgnore);
    const LossResult r = cross_entropy_loss(z, t, uniform(3));
    EXPECT_TRUE(r.all_ignored);
    EXPECT_EQ(r.loss, 0.0);
    for (Real g : r.grad.values()) EXPECT_EQ(g, 0.0f);
    t.at(0, 0, 0) = 1;
    const LossResult one = cross_entropy_loss(z, t, uniform(3));
    EXPECT_EQ(one.valid, 1u);
    EXPECT_FALSE(one.all_ignored);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(one.grad(0, c, 1, 1), 0.0f);
    t.at(0, 0, 1) = 3;
    EXPECT_THROW(cross_entropy_loss(z, t, uniform(3)), DataError);
    EXPECT_THROW(cross_entropy_loss(z, LabelMap(1, 3, 2), uniform(3)), ShapeError);
    EXPECT_THROW(cross_entropy_loss(z, LabelMap(1, 2, 2), uniform(2)), ArgumentError);
}

TEST(CrossEntropy, NonNegativeOnRandomInputs) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Tensor4 z = random_scores(Shape{1, 5, 4, 4}, s, 10.0);
        const LossResult r = cross_entropy_loss(z, random_labels(1, 4, 4, 5, s + 100), uniform(5));
        EXPECT_GE(r.loss, 0.0);
    }
}

TEST(DownsampleLabels, MajorityWithIgnore) {
    LabelMap t(1, 4, 4, 0);
    // Top-left block: 3×label 2, 1×label 1.
    t.at(0, 0, 0) = 2, t.at(0, 0, 1) = 2, t.at(0, 1, 0) = 2, t.at(0, 1, 1) = 1;
    // Top-right block: all ignore.
    for (int y = 0; y < 2; ++y)
        for (int x = 2; x < 4; ++x) t.at(0, y, x) = LabelMap::kIgnore;
    // Bottom-left block: tie between 3 and 4 goes to the smaller label.
    t.at(0, 2, 0) = 4, t.at(0, 2, 1) = 3, t.at(0, 3, 0) = 3, t.at(0, 3, 1) = 4;
    const LabelMap d = downsample_labels(t, 2);
    EXPECT_EQ(d.at(0, 0, 0), 2);
    EXPECT_EQ(d.at(0, 0, 1), LabelMap::kIgnore);
    EXPECT_EQ(d.at(0, 1, 0), 3);
    EXPECT_EQ(d.at(0, 1, 1), 0);
    EXPECT_THROW(downsample_labels(t, 3), ShapeError);
}

TEST(MultiScaleLoss, SumsFullAndBranchTerms) {
    ModelOutput out;
    out.scores = Tensor4(Shape{1, 6, 16, 16});
    for (int f : {2, 4, 8}) {
        out.branches.emplace_back(Shape{1, 6, 16 / f, 16 / f});
        out.branch_factors.push_back(f);
    }
    const LabelMap t = random_labels(1, 16, 16, 6, 3);
    const MultiScaleLoss l = multiscale_loss(out, t, uniform(6));
    EXPECT_NEAR(l.total, 4.0 * std::log(6.0), 1e-5);
    ASSERT_EQ(l.grad_branches.size(), 3u);
    EXPECT_EQ(l.grad_branches[2].shape(), (Shape{1, 6, 2, 2}));
    out.branch_factors.pop_back();
    EXPECT_THROW(multiscale_loss(out, t, uniform(6)), ShapeError);
}

TEST(Schedule, StepsByTen) {
    const SGDConfig c;
    EXPECT_DOUBLE_EQ(lr_at_epoch(0, c), 0.01);
    EXPECT_DOUBLE_EQ(lr_at_epoch(4, c), 0.01);
    EXPECT_NEAR(lr_at_epoch(5, c), 0.001, 1e-15);
    EXPECT_NEAR(lr_at_epoch(10, c), 1e-4, 1e-16);
    EXPECT_NEAR(lr_at_epoch(16, c), 1e-5, 1e-17);
    for (int e = 0; e < 30; ++e) EXPECT_LE(lr_at_epoch(e + 1, c), lr_at_epoch(e, c));
}

TEST(Sgd, HandIterations) {
    Parameter p("w", Shape{1, 1, 1, 1});
    SGDConfig c;
    c.momentum = 0;
    c.weight_decay = 0;
    p.value.values()[0] = 1;
    p.grad.values()[0] = 1;
    Parameter* ps[] = {&p};
    sgd_step(ps, 0.1, c);
    EXPECT_NEAR(p.value.values()[0], 0.9, 1e-7);
    EXPECT_EQ(p.grad.values()[0], 0.0f);

    Parameter q("q", Shape{1, 1, 1, 1});
    c.momentum = 0.9;
    Parameter* qs[] = {&q};
    q.grad.values()[0] = 1;
    sgd_step(qs, 0.1, c);
    EXPECT_NEAR(q.velocity.values()[0], 1.0, 1e-7);
    EXPECT_NEAR(q.value.values()[0], -0.1, 1e-7);
    q.grad.values()[0] = 1;
    sgd_step(qs, 0.1, c);
    EXPECT_NEAR(q.velocity.values()[0], 1.9, 1e-6);
    EXPECT_NEAR(q.value.values()[0], -0.29, 1e-6);
}

TEST(Sgd, LrMultiplierHalvesStep) {
    SGDConfig c;
    Parameter a("a", Shape{1, 1, 1, 1}), b("b", Shape{1, 1, 1, 1});
    b.lr_multiplier = 0.5f;
    a.grad.values()[0] = b.grad.values()[0] = 0.75f;
    Parameter* ps[] = {&a, &b};
    sgd_step(ps, 0.25, c);
    EXPECT_EQ(b.value.values()[0] * 2.0f, a.value.values()[0]);
}

TEST(Sgd, WeightDecayOnlyWhereEnabled) {
    SGDConfig c;
    c.momentum = 0;
    c.weight_decay = 0.5;
    Parameter a("a", Shape{1, 1, 1, 1}, true), b("b", Shape{1, 1, 1, 1}, false);
    a.value.values()[0] = b.value.values()[0] = 2.0f;
    Parameter* ps[] = {&a, &b};
    sgd_step(ps, 0.1, c);
    EXPECT_NEAR(a.value.values()[0], 1.9, 1e-6);
    EXPECT_EQ(b.value.values()[0], 2.0f);
}

TEST(Sgd, QuadraticMovesTowardMinimum) {
    SGDConfig c;
    c.momentum = 0;
    c.weight_decay = 0;
    const double a = 3.0;
    for (double lr : {0.1, 0.5, 1.0, 1.5, 1.99}) {
        Parameter p("w", Shape{1, 1, 1, 1});
        p.grad.values()[0] = static_cast<Real>(p.value.values()[0] - a);
        Parameter* ps[] = {&p};
        sgd_step(ps, lr, c);
        EXPECT_LT(std::abs(p.value.values()[0] - a), a) << lr;
    }
}

TEST(Sgd, NonFiniteGradientNamesParameter) {
    Parameter p("decoder.classifier.weight", Shape{1, 1, 1, 2});
    p.grad.values()[1] = std::numeric_limits<Real>::quiet_NaN();
    Parameter* ps[] = {&p};
    try {
        sgd_step(ps, 0.1, SGDConfig{});
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("decoder.classifier.weight"), std::string::npos);
    }
}

class TrainEpoch : public ::testing::Test {
protected:
    void SetUp() override {
        tiles.push_back(to_tileset(synth_scene(21, 64), "t0"));
        tiles.push_back(to_tileset(synth_scene(22, 64), "t1"));
    }
    std::vector<TileSet> tiles;
};

TEST_F(TrainEpoch, DeterministicAndLossDecreases) {
    PatchSampler sampler(tiles, 32, 16);
    SGDConfig sgd;
    sgd.batch_size = 6;
    sgd.milestones = {};
    const LossConfig loss = uniform(6);
    auto run = [&](int epochs) {
        std::mt19937_64 rng(3);
        SegNet net(tiny_segnet(), rng);
        std::vector<EpochStats> out;
        for (int e = 0; e < epochs; ++e) out.push_back(train_epoch(net, sampler, sgd, loss, e, 77));
        return out;
    };
    const auto a = run(5);
    const auto b = run(1);
    EXPECT_EQ(a[0].mean_loss, b[0].mean_loss);
    EXPECT_EQ(a[0].pixel_accuracy, b[0].pixel_accuracy);
    EXPECT_LT(a[4].mean_loss, a[0].mean_loss);
    EXPECT_EQ(a[0].batches, 3u); // 18 patches in batches of 6
    EXPECT_EQ(a[0].lr, 0.01);
}

TEST_F(TrainEpoch, OversizedBatchIsSinglePartialBatch) {
    PatchSampler sampler(tiles, 32, 32);
    SGDConfig sgd;
    sgd.batch_size = 100;
    std::mt19937_64 rng(3);
    SegNet net(tiny_segnet(), rng);
    const EpochStats s = train_epoch(net, sampler, sgd, uniform(6), 0, 1);
    EXPECT_EQ(s.batches, 1u);
    EXPECT_TRUE(std::isfinite(s.mean_loss));
}

TEST_F(TrainEpoch, EmptyDatasetAndLogLine) {
    std::vector<TileSet> none;
    PatchSampler empty(none, 32, 32);
    std::mt19937_64 rng(3);
    SegNet net(tiny_segnet(), rng);
    EXPECT_THROW(train_epoch(net, empty, SGDConfig{}, uniform(6), 0, 1), ArgumentError);
    EpochStats s;
    s.epoch = 3;
    s.lr = 0.001;
    s.mean_loss = 0.5;
    s.pixel_accuracy = 0.75;
    const std::string line = format_log_line(s);
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 3);
    EXPECT_EQ(line.rfind("3\t", 0), 0u);
}
