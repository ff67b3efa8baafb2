#include <gtest/gtest.h>

#include <random>

#include "mfn/models.hpp"
#include "mfn/training.hpp"

using namespace mfn;

namespace {

ModelConfig small(Architecture arch, int branches = 0) {
    ModelConfig c;
    c.arch = arch;
    c.widths = {4, 8, 8, 8, 8};
    c.branches = branches;
    return c;
}

Tensor4 random_input(int n, int h, int w, std::uint64_t seed) {
    Tensor4 t(Shape{n, 3, h, w});
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& v : t.values()) v = static_cast<Real>(u(rng));
    return t;
}

void expect_equal(const Tensor4& a, const Tensor4& b, double tol = 0.0) {
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        if (tol == 0.0)
            ASSERT_EQ(a.values()[i], b.values()[i]) << i;
        else
            ASSERT_NEAR(a.values()[i], b.values()[i], tol) << i;
    }
}

std::uint64_t checksum(SegmentationModel& m) { return state_checksum(m.state()); }

} // namespace

TEST(Models, VggWidthsAndScaling) {
    EXPECT_EQ(ModelConfig{}.widths, (std::array<int, 5>{64, 128, 256, 512, 512}));
    EXPECT_EQ(scaled_widths(1.0), (std::array<int, 5>{64, 128, 256, 512, 512}));
    EXPECT_EQ(scaled_widths(0.25), (std::array<int, 5>{16, 32, 64, 128, 128}));
    EXPECT_EQ(Encoder::kUnits, (std::array<int, 5>{2, 2, 3, 3, 3}));
}

TEST(Models, ShapeContractAcrossSizes) {
    std::mt19937_64 rng(1);
    for (Architecture a : {Architecture::segnet, Architecture::segnet_ms, Architecture::fusenet_sum,
                           Architecture::fusenet_virtual}) {
        auto m = make_model(small(a, a == Architecture::segnet_ms ? 3 : 0), rng);
        for (int h : {32, 64, 96})
            for (int w : {32, 64}) {
                std::vector<Tensor4> in;
                for (std::size_t i = 0; i < m->modalities().size(); ++i) in.push_back(random_input(1, h, w, i));
                const ModelOutput o = m->forward(in);
                EXPECT_EQ(o.scores.shape(), (Shape{1, 6, h, w})) << to_string(a);
            }
    }
}

TEST(Models, IndivisibleAndMismatchedInputs) {
    std::mt19937_64 rng(1);
    SegNet s(small(Architecture::segnet), rng);
    const Tensor4 bad = random_input(1, 48, 32, 0);
    EXPECT_THROW(s.forward(std::span(&bad, 1)), ShapeError);
    FuseNet f(small(Architecture::fusenet_sum), rng);
    const std::vector<Tensor4> mismatched = {random_input(1, 32, 32, 0), random_input(1, 64, 32, 1)};
    EXPECT_THROW(f.forward(mismatched), ShapeError);
    EXPECT_THROW(f.forward(std::span(&bad, 1)), ArgumentError);
}

TEST(Models, ZeroClassifierGivesUniformSoftmax) {
    std::mt19937_64 rng(2);
    SegNet s(small(Architecture::segnet), rng);
    s.decoder().classifier().zero_init();
    const Tensor4 x = random_input(2, 32, 32, 3);
    const Tensor4 p = softmax_channels(s.forward(std::span(&x, 1)).scores);
    for (Real v : p.values()) ASSERT_NEAR(v, 1.0 / 6.0, 1e-7);
}

TEST(MultiScale, Eq2SummationIsBitExact) {
    std::mt19937_64 rng(3);
    SegNet s(small(Architecture::segnet_ms, 3), rng);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor4 x = random_input(1, 64, 64, seed);
        const ModelOutput o = s.forward(std::span(&x, 1));
        ASSERT_EQ(o.branches.size(), 3u);
        EXPECT_EQ(o.branch_factors, (std::vector<int>{2, 4, 8}));
        Tensor4 sum = o.head;
        for (std::size_t i = 0; i < o.branches.size(); ++i) {
            EXPECT_EQ(o.branches[i].h(), 64 / o.branch_factors[i]);
            sum = add(sum, bilinear_upsample(o.branches[i], o.branch_factors[i]));
        }
        expect_equal(o.scores, sum);
    }
}

TEST(MultiScale, ZeroBranchesLeaveHeadAlone) {
    std::mt19937_64 rng(4);
    SegNet s(small(Architecture::segnet_ms, 3), rng);
    for (int i = 0; i < 3; ++i) s.decoder().branch_head(i).zero_init();
    const Tensor4 x = random_input(1, 32, 32, 1);
    const ModelOutput o = s.forward(std::span(&x, 1));
    expect_equal(o.scores, o.head);
}

TEST(MultiScale, BranchPlacementAndCount) {
    std::mt19937_64 rng(4);
    SegNet one(small(Architecture::segnet_ms, 1), rng);
    EXPECT_EQ(one.decoder().branch_count(), 1);
    EXPECT_EQ(branch_factor(0), 2);
    EXPECT_EQ(branch_factor(2), 8);
    const Tensor4 x = random_input(1, 32, 32, 1);
    const ModelOutput o = one.forward(std::span(&x, 1));
    ASSERT_EQ(o.branches.size(), 1u);
    EXPECT_EQ(o.branches[0].shape(), (Shape{1, 6, 16, 16}));
    EXPECT_THROW(SegNet(small(Architecture::segnet_ms, 4), rng), ConfigError);
}

TEST(MultiScale, BranchLossReachesBranchWeights) {
    std::mt19937_64 rng(5);
    SegNet s(small(Architecture::segnet_ms, 3), rng);
    const Tensor4 x = random_input(2, 32, 32, 1);
    LabelMap t(2, 32, 32);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<std::uint8_t>(i % 6);
    const ModelOutput o = s.forward(std::span(&x, 1));
    const MultiScaleLoss l = multiscale_loss(o, t, LossConfig{std::vector<float>(6, 1.0f)});
    s.backward(l.grad_scores, l.grad_branches);
    for (int i = 0; i < 3; ++i) {
        double mag = 0;
        for (Real g : s.decoder().branch_head(i).weight().grad.values()) mag += std::abs(g);
        EXPECT_GT(mag, 0.0) << i;
    }
}

TEST(FuseNetSum, ZeroAuxiliaryInputActsLikeMainOnly) {
    // The oracle replays the fusion with the model's own blocks.
    std::mt19937_64 rng(6);
    FuseNet f(small(Architecture::fusenet_sum), rng);
    f.set_training(false);
    const std::vector<Tensor4> in = {random_input(1, 64, 64, 1), random_input(1, 64, 64, 2)};
    const Tensor4 out = f.forward(in).scores;

    Tensor4 m = in[0], a = in[1];
    std::array<PoolIndices, 5> idx;
    std::vector<MaxPool2> pools(5);
    std::vector<MaxPool2> aux_pools(5);
    for (int s = 0; s < 5; ++s) {
        const Tensor4 mb = f.main_encoder().block(s).forward(m);
        const Tensor4 ab = f.aux_encoder().block(s).forward(a);
        m = pools[s].forward(add(mb, ab));
        a = aux_pools[s].forward(ab);
        idx[s] = pools[s].indices();
    }
    expect_equal(f.decoder().forward(m, idx).scores, out);
}

TEST(FuseNetSum, AuxiliaryIndicesAreNotUsed) {
    std::mt19937_64 rng(7);
    FuseNet f(small(Architecture::fusenet_sum), rng);
    f.set_training(false);
    const std::vector<Tensor4> in = {random_input(1, 64, 64, 1), random_input(1, 64, 64, 2)};
    const Tensor4 clean = f.forward(in).scores;
    f.aux_index_hook = [](int, PoolIndices& p) {
        for (auto& i : p.index) i = 0;
    };
    expect_equal(f.forward(in).scores, clean);
}

TEST(FuseNetVirtual, ZeroVirtualBlocksAverageTheStreams) {
    std::mt19937_64 rng(8);
    FuseNet f(small(Architecture::fusenet_virtual), rng);
    f.zero_virtual_units();
    f.set_training(false);
    const std::vector<Tensor4> in = {random_input(1, 64, 64, 3), random_input(1, 64, 64, 4)};
    const Tensor4 out = f.forward(in).scores;

    Tensor4 m = in[0], a = in[1], v;
    std::array<PoolIndices, 5> idx;
    std::vector<MaxPool2> mp(5), ap(5), vp(5);
    for (int s = 0; s < 5; ++s) {
        const Tensor4 mb = f.main_encoder().block(s).forward(m);
        const Tensor4 ab = f.aux_encoder().block(s).forward(a);
        Tensor4 mean(mb.shape());
        for (std::size_t i = 0; i < mean.values().size(); ++i)
            mean.values()[i] = (mb.values()[i] + ab.values()[i]) * Real(0.5);
        v = vp[s].forward(mean);
        m = mp[s].forward(mb);
        a = ap[s].forward(ab);
        idx[s] = mp[s].indices();
    }
    expect_equal(f.decoder().forward(v, idx).scores, out, 1e-6);
}

TEST(ResidualCorrection, ZeroCorrectionIsSoftmaxAverage) {
    std::mt19937_64 rng(9);
    std::vector<std::unique_ptr<SegNet>> bases;
    ModelConfig comp = small(Architecture::segnet);
    comp.modality = Modality::composite;
    bases.push_back(std::make_unique<SegNet>(small(Architecture::segnet), rng));
    bases.push_back(std::make_unique<SegNet>(comp, rng));
    ModelConfig rc = small(Architecture::residual_correction);
    ResidualCorrection e(rc, std::move(bases), rng);
    EXPECT_EQ(e.modalities(), (std::vector<Modality>{Modality::optical, Modality::composite}));
    const std::vector<Tensor4> in = {random_input(1, 32, 32, 1), random_input(1, 32, 32, 2)};
    const Tensor4 out = e.forward(in).scores;
    const Tensor4 p0 = softmax_channels(e.base(0).forward(std::span(&in[0], 1)).scores);
    const Tensor4 p1 = softmax_channels(e.base(1).forward(std::span(&in[1], 1)).scores);
    Tensor4 avg(p0.shape());
    for (std::size_t i = 0; i < avg.values().size(); ++i)
        avg.values()[i] = (p0.values()[i] + p1.values()[i]) / 2;
    expect_equal(out, avg, 1e-6);
}

TEST(ResidualCorrection, SingleBaseIsIdentity) {
    std::mt19937_64 rng(10);
    std::vector<std::unique_ptr<SegNet>> bases;
    bases.push_back(std::make_unique<SegNet>(small(Architecture::segnet), rng));
    ResidualCorrection e(small(Architecture::residual_correction), std::move(bases), rng);
    const Tensor4 x = random_input(1, 32, 32, 1);
    const Tensor4 out = e.forward(std::span(&x, 1)).scores;
    expect_equal(out, softmax_channels(e.base(0).forward(std::span(&x, 1)).scores), 1e-7);
}

TEST(ResidualCorrection, TrainingLeavesBasesFrozen) {
    std::mt19937_64 rng(11);
    std::vector<std::unique_ptr<SegNet>> bases;
    bases.push_back(std::make_unique<SegNet>(small(Architecture::segnet), rng));
    bases.push_back(std::make_unique<SegNet>(small(Architecture::segnet), rng));
    ResidualCorrection e(small(Architecture::residual_correction), std::move(bases), rng);
    const std::uint64_t before0 = checksum(e.base(0));
    const std::uint64_t before1 = checksum(e.base(1));
    const std::uint64_t head_before = state_checksum([&] {
        std::vector<StateRef> s;
        e.correction().collect_state(s);
        return s;
    }());
    e.set_training(true);
    const std::vector<Tensor4> in = {random_input(2, 32, 32, 1), random_input(2, 32, 32, 2)};
    LabelMap t(2, 32, 32, 1);
    for (int step = 0; step < 3; ++step) {
        const ModelOutput o = e.forward(in);
        const MultiScaleLoss l = multiscale_loss(o, t, LossConfig{std::vector<float>(6, 1.0f)});
        e.backward(l.grad_scores, l.grad_branches);
        const auto params = e.parameters();
        for (Parameter* p : params) EXPECT_EQ(p->name.rfind("correction.", 0), 0u) << p->name;
        sgd_step(params, 0.01, SGDConfig{});
    }
    EXPECT_EQ(checksum(e.base(0)), before0);
    EXPECT_EQ(checksum(e.base(1)), before1);
    EXPECT_NE(state_checksum([&] {
                  std::vector<StateRef> s;
                  e.correction().collect_state(s);
                  return s;
              }()),
              head_before);
}

TEST(ResidualCorrection, RejectsNonSegNetBasesAndDisagreeingK) {
    std::mt19937_64 rng(12);
    ModelConfig rc = small(Architecture::residual_correction);
    rc.bases = {small(Architecture::fusenet_sum)};
    EXPECT_THROW(ResidualCorrection(rc, rng), ConfigError);
    rc.bases = {};
    EXPECT_THROW(ResidualCorrection(rc, rng), ConfigError);
    ModelConfig k5 = small(Architecture::segnet);
    k5.k = 5;
    rc.bases = {small(Architecture::segnet), k5};
    EXPECT_THROW(ResidualCorrection(rc, rng), ConfigError);
}

TEST(Models, ManifestRoundTrip) {
    ModelConfig c = small(Architecture::residual_correction);
    c.width_scale = 0.25;
    c.bases = {small(Architecture::segnet), small(Architecture::segnet_ms, 2)};
    c.bases[0].modality = Modality::composite;
    c.block_order = BlockOrder::conv_relu_bn;
    const ModelConfig back = parse_manifest(to_manifest(c));
    EXPECT_EQ(to_manifest(back), to_manifest(c));
    EXPECT_EQ(back.bases.size(), 2u);
    EXPECT_EQ(back.bases[1].branches, 2);
    EXPECT_EQ(back.bases[0].modality, Modality::composite);
    EXPECT_EQ(parse_architecture("fusenet_virtual"), Architecture::fusenet_virtual);
    EXPECT_THROW(parse_architecture("resnet"), ConfigError);
    EXPECT_THROW(parse_modality("lidar"), ConfigError);
}

TEST(Models, SameSeedSameWeights) {
    std::mt19937_64 a(42), b(42), c(43);
    auto m1 = make_model(small(Architecture::fusenet_virtual), a);
    auto m2 = make_model(small(Architecture::fusenet_virtual), b);
    auto m3 = make_model(small(Architecture::fusenet_virtual), c);
    EXPECT_EQ(checksum(*m1), checksum(*m2));
    EXPECT_NE(checksum(*m1), checksum(*m3));
}
