#include <gtest/gtest.h>

#include <cmath>

#include "layertap/eval.hpp"
#include "layertap/trainer.hpp"
#include "test_util.hpp"

using namespace layertap;

namespace {

ParamStore scalar_store(double w) {
    ParamStore p;
    p.layers["d"] = LayerParams{LayerKind::dense, Matrix{{w}}, {}, {}, {}};
    return p;
}

Gradients scalar_grad(double g) {
    Gradients gr;
    gr.layers["d"] = LayerGrads{Matrix{{g}}, {}};
    return gr;
}

Hyper quick_hyper(std::size_t iterations) {
    Hyper h;
    h.iterations = iterations;
    h.p = 4;
    h.k = 3;
    h.seed = 21;
    return h;
}

}  // namespace

TEST(SgdStep, HandEvaluatedMomentumSteps) {
    Hyper h;
    h.momentum = 0.9;
    h.weight_decay = 0.0;
    ParamStore p = scalar_store(1.0);
    MomentumBuffers v;
    sgd_step(p, scalar_grad(0.5), v, h, 0.1);
    EXPECT_DOUBLE_EQ(v.at("d").weight(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(p.at("d").weight(0, 0), 0.95);
    sgd_step(p, scalar_grad(0.5), v, h, 0.1);
    EXPECT_DOUBLE_EQ(v.at("d").weight(0, 0), 0.95);
    EXPECT_DOUBLE_EQ(p.at("d").weight(0, 0), 0.855);
}

TEST(SgdStep, ZeroLearningRateLeavesParams) {
    ParamStore p = scalar_store(1.0);
    MomentumBuffers v;
    sgd_step(p, scalar_grad(3.0), v, Hyper{}, 0.0);
    EXPECT_EQ(p.at("d").weight(0, 0), 1.0);
}

TEST(SgdStep, ShapeMismatchThrows) {
    ParamStore p = scalar_store(1.0);
    Gradients g;
    g.layers["d"] = LayerGrads{Matrix(2, 1), {}};
    MomentumBuffers v;
    EXPECT_THROW(sgd_step(p, g, v, Hyper{}, 0.1), ShapeError);
}

TEST(SgdStep, PlainGradientDescentFindsQuadraticMinimum) {
    // f(w) = sum_i a_i (w_i - c_i)^2 / 2
    const std::vector<double> a{1.0, 3.0, 0.5}, c{2.0, -1.0, 0.25};
    Hyper h;
    h.momentum = 0.0;
    h.weight_decay = 0.0;
    ParamStore p;
    p.layers["d"] = LayerParams{LayerKind::dense, Matrix(1, 3), {}, {}, {}};
    MomentumBuffers v;
    for (int it = 0; it < 2000; ++it) {
        Gradients g;
        g.layers["d"].weight = Matrix(1, 3);
        for (int i = 0; i < 3; ++i) g.layers["d"].weight(0, i) = a[i] * (p.at("d").weight(0, i) - c[i]);
        sgd_step(p, g, v, h, 0.1);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.at("d").weight(0, i), c[i], 1e-6);
}

TEST(SgdStep, BatchnormIsExemptFromWeightDecay) {
    auto run = [](double wd) {
        ParamStore p;
        p.layers["bn"] = LayerParams{LayerKind::batchnorm, Matrix{{1.3, 0.7}}, Matrix{{0.2, -0.1}},
                                     Matrix(1, 2), Matrix(1, 2, 1.0)};
        p.layers["d"] = LayerParams{LayerKind::dense, Matrix{{1.0, 2.0}}, {}, {}, {}};
        Gradients g;
        g.layers["bn"] = LayerGrads{Matrix(1, 2), Matrix(1, 2)};
        g.layers["d"] = LayerGrads{Matrix(1, 2), {}};
        Hyper h;
        h.weight_decay = wd;
        MomentumBuffers v;
        for (int i = 0; i < 10; ++i) sgd_step(p, g, v, h, 0.01);
        return p;
    };
    const ParamStore a = run(0.0), b = run(5e-4);
    EXPECT_EQ(a.at("bn").weight, b.at("bn").weight);
    EXPECT_EQ(a.at("bn").bias, b.at("bn").bias);
    EXPECT_FALSE(a.at("d").weight == b.at("d").weight);
}

TEST(LrSchedule, DefaultMilestones) {
    const Hyper h;
    EXPECT_EQ(lr_at(0, h), 0.01);
    EXPECT_EQ(lr_at(1799, h), 0.01);
    EXPECT_NEAR(lr_at(1801, h), 0.001, 1e-18);
    EXPECT_NEAR(lr_at(2401, h), 0.0001, 1e-18);
}

TEST(LrSchedule, NoMilestonesIsConstant) {
    Hyper h;
    h.milestones.clear();
    for (std::size_t it : {0u, 1000u, 2999u}) EXPECT_EQ(lr_at(it, h), 0.01);
}

TEST(HyperValidate, RejectsBadValues) {
    Hyper h;
    h.milestones = {0.8, 0.6};
    EXPECT_THROW(h.validate(), ConfigError);
    h = Hyper{};
    h.p = 1;
    EXPECT_THROW(h.validate(), ConfigError);
    h = Hyper{};
    h.momentum = 1.0;
    EXPECT_THROW(h.validate(), ConfigError);
}

TEST(Train, ZeroIterationsReturnsInputUnchanged) {
    const Dataset ds = gen_synthetic(testutil::tiny_gen());
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    const NetSpec net = build_variant(Variant::C, base);
    Rng rng(1);
    const ParamStore p = init_params(net, rng);
    const TrainResult r = train(net, p, ds, quick_hyper(0), TrainOptions{});
    EXPECT_TRUE(r.params == p);
    EXPECT_TRUE(r.history.entries.empty());
}

TEST(Train, DeterministicAndLossDecreases) {
    const Dataset ds = gen_synthetic(testutil::tiny_gen());
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    const NetSpec net = build_variant(Variant::C, base);
    Rng rng(1);
    const ParamStore p = init_params(net, rng);
    TrainOptions opt;
    opt.log_every = 1;
    const Hyper h = quick_hyper(300);
    const TrainResult a = train(net, p, ds, h, opt);
    const TrainResult b = train(net, p, ds, h, opt);
    EXPECT_TRUE(a.params == b.params);
    ASSERT_EQ(a.history.entries.size(), 300u);
    for (std::size_t i = 0; i < 300; ++i) EXPECT_EQ(a.history.entries[i].loss, b.history.entries[i].loss);

    // start near the ln 2 scale of unit-gap-free embeddings; mean of the last 20 below mean of the first 20
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
        first += a.history.entries[i].loss / 20;
        last += a.history.entries[280 + i].loss / 20;
    }
    EXPECT_GT(first, 0.1);
    EXPECT_LT(first, 5.0);
    EXPECT_LT(last, first);
}

TEST(Train, SnapshotHookRunsAtRequestedIterations) {
    const Dataset ds = gen_synthetic(testutil::tiny_gen());
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    const NetSpec net = build_variant(Variant::C, base);
    Rng rng(1);
    TrainOptions opt;
    opt.log_every = 1000;
    opt.snapshot_at = evenly_spaced(30, 3);
    std::vector<std::size_t> seen;
    opt.hook = [&](std::size_t it, const ParamStore&) {
        seen.push_back(it);
        return std::map<std::string, double>{{"x", 1.0}};
    };
    const TrainResult r = train(net, init_params(net, rng), ds, quick_hyper(30), opt);
    EXPECT_EQ(seen, (std::vector<std::size_t>{10, 20, 30}));
    ASSERT_EQ(r.history.entries.size(), 3u);
    EXPECT_EQ(r.history.entries[0].snapshot.at("x"), 1.0);
}

TEST(Train, ClassificationNeedsClassLogitOutput) {
    const Dataset ds = gen_synthetic(testutil::tiny_gen());
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    const NetSpec net = build_variant(Variant::C, base);
    Rng rng(1);
    TrainOptions opt;
    opt.loss = LossKind::classification;
    EXPECT_THROW(train(net, init_params(net, rng), ds, quick_hyper(5), opt), SpecError);
}

TEST(Train, EveryLossRunsOnItsNet) {
    const Dataset ds = gen_synthetic(testutil::tiny_gen());
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    const NetSpec emb = build_variant(Variant::C, base);
    base.class_head = ds.class_count(Split::train);
    NetSpec cls = build_backbone(base, Init::scratch);
    attach_output(cls, base);
    Rng rng(1);
    for (LossKind k : {LossKind::triplet, LossKind::contrastive, LossKind::classification}) {
        const NetSpec& net = k == LossKind::classification ? cls : emb;
        TrainOptions opt;
        opt.loss = k;
        const TrainResult r = train(net, init_params(net, rng), ds, quick_hyper(20), opt);
        ASSERT_FALSE(r.history.entries.empty());
        EXPECT_TRUE(std::isfinite(r.history.entries.back().loss)) << to_string(k);
    }
}

TEST(Pretrain, ZeroIterationsReturnsInitialBackbone) {
    const Dataset ds = gen_synthetic(testutil::tiny_gen());
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    const Hyper h = quick_hyper(0);
    const ParamStore p = pretrain_classification(base, ds, h, 0.05);
    Rng rng(h.seed);
    ParamStore init = init_params(build_backbone_classifier(base, ds.class_count(Split::source)), rng);
    init.layers.erase(kClassifierId);
    EXPECT_TRUE(p == init);
    EXPECT_FALSE(p.contains(kClassifierId));
}

TEST(Pretrain, DeterministicAndProbeBeatsChance) {
    const Dataset ds = gen_synthetic(GenConfig{});
    VariantBase base;
    base.backbone_widths = {32, 32, 32};
    Hyper h = quick_hyper(300);
    h.p = 8;
    h.k = 4;
    const ParamStore a = pretrain_classification(base, ds, h, 0.05);
    EXPECT_TRUE(a == pretrain_classification(base, ds, h, 0.05));

    // Nearest-class-mean probe on backbone features: even items build the
    // means, odd items are classified.
    const NetSpec net = build_backbone(base, Init::scratch);
    const auto idx = ds.indices(Split::source);
    const Matrix feats = forward(net, a, ds.features.gather_rows(idx), Mode::eval).tap("block3");
    std::map<Label, std::vector<double>> mean;
    std::map<Label, int> count;
    for (std::size_t i = 0; i < idx.size(); i += 2) {
        auto& m = mean[ds.labels[idx[i]]];
        m.resize(feats.cols(), 0.0);
        for (std::size_t c = 0; c < feats.cols(); ++c) m[c] += feats(i, c);
        ++count[ds.labels[idx[i]]];
    }
    for (auto& [l, m] : mean)
        for (double& v : m) v /= count[l];
    std::size_t right = 0, total = 0;
    for (std::size_t i = 1; i < idx.size(); i += 2, ++total) {
        Label best = -1;
        double bd = 1e300;
        for (const auto& [l, m] : mean) {
            double d = 0.0;
            for (std::size_t c = 0; c < feats.cols(); ++c) d += (feats(i, c) - m[c]) * (feats(i, c) - m[c]);
            if (d < bd) bd = d, best = l;
        }
        right += best == ds.labels[idx[i]];
    }
    const double chance = 1.0 / 20.0;
    EXPECT_GT(static_cast<double>(right) / total, 5 * chance);
}

TEST(Pretrain, EmptySourceSplitThrows) {
    GenConfig g = testutil::tiny_gen();
    Dataset ds = gen_synthetic(g);
    for (auto& s : ds.splits)
        if (s == Split::source) s = Split::train;
    VariantBase base = testutil::small_base(8);
    base.input_dim = 8;
    EXPECT_THROW(pretrain_classification(base, ds, quick_hyper(1), 0.0), DataError);
}

TEST(EvenlySpaced, Basics) {
    EXPECT_EQ(evenly_spaced(100, 4), (std::vector<std::size_t>{25, 50, 75, 100}));
    EXPECT_EQ(evenly_spaced(3, 10), (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_TRUE(evenly_spaced(0, 5).empty());
}
