#include <gtest/gtest.h>

#include <cmath>

#include "layertap/grad_check.hpp"
#include "layertap/nn.hpp"
#include "layertap/param_io.hpp"
#include "test_util.hpp"

using namespace layertap;
using testutil::any_params;
using testutil::random_batch;
using testutil::small_base;

namespace {

NetSpec single_dense(std::size_t in, std::size_t out, bool bias) {
    NetSpec net;
    net.input_dim = in;
    net.layers.push_back(dense_layer("d", in, out, bias));
    net.provenance["d"] = Init::scratch;
    net.loss_attach = "d";
    net.taps = {"d"};
    return net;
}

std::size_t count_dense(const NetSpec& net) {
    std::size_t n = 0;
    for (const auto& l : net.layers) n += l.kind == LayerKind::dense;
    return n;
}

// Sum of squares / 2; gradient is the embedding itself.
LossOutput half_square(const Matrix& e, std::span<const Label>) {
    LossOutput o;
    for (double v : e.flat()) o.value += 0.5 * v * v;
    o.grad = e;
    return o;
}

}  // namespace

TEST(BuildVariant, DHasNoHeadAndAttachesToBackboneOutput) {
    const NetSpec d = build_variant(Variant::D, VariantBase{});
    EXPECT_EQ(count_dense(d), 3u);
    EXPECT_FALSE(d.find("fc6").has_value());
    EXPECT_EQ(d.loss_attach, "block3");
    ASSERT_TRUE(d.head.has_value());
    EXPECT_EQ(d.head->kind, LayerKind::normalize_scale);
    EXPECT_EQ(d.head->scale, 4.0);
}

TEST(BuildVariant, FHasThreeHeadDenseLayers) {
    const NetSpec f = build_variant(Variant::F, VariantBase{});
    for (const char* id : {"fc6", "fc7", "fc8"}) {
        ASSERT_TRUE(f.find(id).has_value()) << id;
        EXPECT_EQ(f.layer(id).kind, LayerKind::dense);
        EXPECT_EQ(f.provenance.at(id), Init::scratch);
    }
    EXPECT_EQ(count_dense(f), 6u);
    EXPECT_EQ(f.loss_attach, "fc8");
    EXPECT_EQ(f.layer("fc6.relu").kind, LayerKind::relu);
    EXPECT_EQ(f.layer("fc7.relu").kind, LayerKind::relu);
}

TEST(BuildVariant, AAndEDifferByOneDenseReluPair) {
    const NetSpec a = build_variant(Variant::A, VariantBase{});
    const NetSpec e = build_variant(Variant::E, VariantBase{});
    ASSERT_EQ(e.layers.size(), a.layers.size() + 2);
    for (std::size_t i = 0; i < a.layers.size(); ++i) EXPECT_EQ(e.layers[i].id, a.layers[i].id);
    EXPECT_EQ(e.layers[a.layers.size()].kind, LayerKind::relu);
    EXPECT_EQ(e.layers[a.layers.size() + 1].kind, LayerKind::dense);
}

TEST(BuildVariant, PrefixAndNestingProperties) {
    for (const auto& base : {VariantBase{}, small_base(8), small_base(32)}) {
        const NetSpec a = build_variant(Variant::A, base);
        const NetSpec d = build_variant(Variant::D, base);
        const NetSpec e = build_variant(Variant::E, base);
        const NetSpec f = build_variant(Variant::F, base);
        ASSERT_LT(d.layers.size(), a.layers.size());
        for (std::size_t i = 0; i < d.layers.size(); ++i) EXPECT_EQ(d.layers[i].id, a.layers[i].id);
        EXPECT_LT(a.layers.size(), e.layers.size());
        EXPECT_LT(e.layers.size(), f.layers.size());
    }
}

TEST(BuildVariant, Provenance) {
    const VariantBase base;
    const NetSpec a = build_variant(Variant::A, base);
    const NetSpec b = build_variant(Variant::B, base);
    const NetSpec c = build_variant(Variant::C, base);
    EXPECT_EQ(a.provenance.at("block3.fc"), Init::pretrained);
    EXPECT_EQ(a.provenance.at("fc6"), Init::scratch);
    EXPECT_EQ(b.provenance.at("block2.fc"), Init::pretrained);
    EXPECT_EQ(b.provenance.at("block3.fc"), Init::scratch);
    EXPECT_EQ(b.provenance.at("block3.bn"), Init::scratch);
    for (const auto& [id, init] : c.provenance) EXPECT_EQ(init, Init::scratch) << id;
}

TEST(BuildVariant, UnknownVariantIdThrows) {
    EXPECT_THROW(variant_from_string("G"), SpecError);
    EXPECT_EQ(variant_from_string("NetE"), Variant::E);
    EXPECT_EQ(variant_from_string("B"), Variant::B);
}

TEST(NetSpecValidate, RejectsBrokenNets) {
    NetSpec net = single_dense(2, 2, true);
    net.loss_attach = "nope";
    EXPECT_THROW(net.validate(), SpecError);
    net = single_dense(2, 2, true);
    net.taps.push_back("missing");
    EXPECT_THROW(net.validate(), SpecError);
    net = single_dense(2, 2, true);
    net.layers.push_back(dense_layer("d", 2, 2));
    net.loss_attach = "d";
    EXPECT_THROW(net.validate(), SpecError);
    net = single_dense(2, 2, true);
    net.provenance.clear();
    EXPECT_THROW(net.validate(), SpecError);
}

TEST(InitParams, CNeedsNoPretrainedStore) {
    Rng rng(1);
    const NetSpec c = build_variant(Variant::C, small_base());
    const ParamStore p = init_params(c, rng);
    EXPECT_EQ(p.layers.size(), 7u);  // 3 x (fc, bn) + fc6
    const auto& bn = p.at("block1.bn");
    for (std::size_t i = 0; i < 12; ++i) {
        EXPECT_EQ(bn.weight(0, i), 1.0);
        EXPECT_EQ(bn.bias(0, i), 0.0);
        EXPECT_EQ(bn.running_mean(0, i), 0.0);
        EXPECT_EQ(bn.running_var(0, i), 1.0);
    }
    EXPECT_TRUE(p.at("block1.fc").bias.empty());
    for (double v : p.at("fc6").bias.flat()) EXPECT_EQ(v, 0.0);
}

TEST(InitParams, AWithoutPretrainedStoreThrows) {
    Rng rng(1);
    EXPECT_THROW(init_params(build_variant(Variant::A, small_base()), rng), SpecError);
}

TEST(InitParams, ACopiesPretrainedBackboneVerbatim) {
    Rng rng(1);
    const VariantBase base = small_base();
    const ParamStore pre = any_params(build_backbone(base, Init::scratch), rng);
    const ParamStore p = init_params(build_variant(Variant::A, base), rng, &pre);
    for (const auto& [id, lp] : pre.layers) {
        EXPECT_EQ(p.at(id).weight, lp.weight) << id;
        EXPECT_EQ(p.at(id).bias, lp.bias) << id;
    }
    EXPECT_TRUE(p.contains("fc6"));
}

TEST(InitParams, BDrawsLastBlockFresh) {
    Rng rng(1);
    const VariantBase base = small_base();
    const ParamStore pre = any_params(build_backbone(base, Init::scratch), rng);
    const ParamStore p = init_params(build_variant(Variant::B, base), rng, &pre);
    EXPECT_EQ(p.at("block2.fc").weight, pre.at("block2.fc").weight);
    EXPECT_FALSE(p.at("block3.fc").weight == pre.at("block3.fc").weight);
}

TEST(InitParams, ShapeMismatchWithPretrainedStoreThrows) {
    Rng rng(1);
    const ParamStore pre = any_params(build_backbone(small_base(8), Init::scratch), rng);
    EXPECT_THROW(init_params(build_variant(Variant::A, small_base(12)), rng, &pre), ShapeError);
}

TEST(InitParams, ScratchStdIsSqrtTwoOverFanIn) {
    Rng rng(8);
    NetSpec net = single_dense(200, 200, true);
    const ParamStore p = init_params(net, rng);
    double ss = 0.0;
    for (double v : p.at("d").weight.flat()) ss += v * v;
    const double sd = std::sqrt(ss / 40000.0);
    EXPECT_NEAR(sd, std::sqrt(2.0 / 200.0), 0.002);
}

TEST(Forward, IdentityDenseReturnsInput) {
    NetSpec net = single_dense(3, 3, true);
    ParamStore p;
    p.layers["d"] = LayerParams{LayerKind::dense, Matrix::identity(3), Matrix(1, 3), {}, {}};
    const Matrix x{{1, -2, 3}, {0.5, 0, 7}};
    EXPECT_EQ(forward(net, p, x, Mode::eval).embedding, x);
}

TEST(Forward, ScalarAffine) {
    NetSpec net = single_dense(1, 1, true);
    ParamStore p;
    p.layers["d"] = LayerParams{LayerKind::dense, Matrix{{2}}, Matrix{{1}}, {}, {}};
    EXPECT_EQ(forward(net, p, Matrix{{3}}, Mode::eval).embedding, (Matrix{{7}}));
}

TEST(Forward, ShapeMismatchThrows) {
    NetSpec net = single_dense(3, 2, true);
    Rng rng(1);
    const ParamStore p = init_params(net, rng);
    EXPECT_THROW(forward(net, p, Matrix(2, 4), Mode::eval), ShapeError);
}

TEST(Forward, DegenerateRowAtHeadThrows) {
    NetSpec net = single_dense(2, 2, false);
    net.head = normalize_scale_layer("embed");
    ParamStore p;
    p.layers["d"] = LayerParams{LayerKind::dense, Matrix::identity(2), {}, {}, {}};
    EXPECT_THROW(forward(net, p, Matrix{{1, 1}, {0, 0}}, Mode::eval), DegenerateVectorError);
}

TEST(Forward, TrainModeBatchnormStandardizesColumns) {
    Rng rng(4);
    const NetSpec net = build_variant(Variant::C, small_base());
    const ParamStore p = init_params(net, rng);
    Matrix x = random_batch(32, 6, rng);
    for (double& v : x.flat()) v = 3.0 * v + 5.0;
    const ForwardTrace t = forward(net, p, x, Mode::train);
    const Matrix& y = t.tap("block1.bn");  // gain 1, shift 0 at init
    for (std::size_t c = 0; c < y.cols(); ++c) {
        double mean = 0.0, var = 0.0;
        for (std::size_t r = 0; r < y.rows(); ++r) mean += y(r, c);
        mean /= static_cast<double>(y.rows());
        for (std::size_t r = 0; r < y.rows(); ++r) var += (y(r, c) - mean) * (y(r, c) - mean);
        var /= static_cast<double>(y.rows());
        EXPECT_LT(std::abs(mean), 1e-9);
        // eps in the denominator shifts the variance by about eps / var_in
        EXPECT_NEAR(var, 1.0, 1e-3);
        EXPECT_NEAR(var, 1.0 - kBatchNormEps * t.batchnorm[1].inv_std[c] * t.batchnorm[1].inv_std[c], 1e-9);
    }
    EXPECT_EQ(t.embedding.rows(), 32u);
    for (std::size_t r = 0; r < 32; ++r) EXPECT_NEAR(norm2(t.embedding.row(r)), 4.0, 1e-12);
}

TEST(Forward, EvalModeIsPureAndLeavesRunningStats) {
    Rng rng(5);
    const NetSpec net = build_variant(Variant::C, small_base());
    ParamStore p = init_params(net, rng);
    const Matrix x = random_batch(10, 6, rng);
    forward_train(net, p, x);  // move running stats away from (0, 1)
    const ParamStore before = p;
    const ForwardTrace a = forward(net, p, x, Mode::eval);
    const ForwardTrace b = forward(net, p, x, Mode::eval);
    EXPECT_TRUE(a == b);
    for (const auto& [id, lp] : before.layers) {
        EXPECT_EQ(p.at(id).running_mean, lp.running_mean);
        EXPECT_EQ(p.at(id).running_var, lp.running_var);
    }
}

TEST(Forward, TrainModeUpdatesRunningStatsWithMomentum) {
    NetSpec net;
    net.input_dim = 1;
    net.layers.push_back(batchnorm_layer("bn", 1));
    net.provenance["bn"] = Init::scratch;
    net.loss_attach = "bn";
    Rng rng(1);
    ParamStore p = init_params(net, rng);
    forward_train(net, p, Matrix{{1}, {3}});  // mean 2, unbiased var 2
    EXPECT_NEAR(p.at("bn").running_mean(0, 0), 0.2, 1e-15);
    EXPECT_NEAR(p.at("bn").running_var(0, 0), 0.9 + 0.2, 1e-15);
}

TEST(Backward, ZeroGradOutGivesZeroParameterGradients) {
    Rng rng(6);
    const NetSpec net = build_variant(Variant::F, small_base());
    const ParamStore p = any_params(net, rng);
    const ForwardTrace t = forward(net, p, random_batch(8, 6, rng), Mode::train);
    const Gradients g = backward(net, p, t, Matrix(t.embedding.rows(), t.embedding.cols()));
    for (const auto& [id, lg] : g.layers) {
        for (double v : lg.weight.flat()) EXPECT_EQ(v, 0.0) << id;
        for (double v : lg.bias.flat()) EXPECT_EQ(v, 0.0) << id;
    }
}

TEST(Backward, ScalarSquaredErrorHandFormula) {
    // y = w x + b, L = (y - t)^2 / 2: dL/dw = (y - t) x, dL/db = y - t, dL/dx = (y - t) w
    NetSpec net = single_dense(1, 1, true);
    ParamStore p;
    p.layers["d"] = LayerParams{LayerKind::dense, Matrix{{1.5}}, Matrix{{-0.5}}, {}, {}};
    const ForwardTrace t = forward(net, p, Matrix{{2}}, Mode::train);
    const double y = 1.5 * 2 - 0.5, target = 1.0;
    const Gradients g = backward(net, p, t, Matrix{{y - target}});
    EXPECT_DOUBLE_EQ(g.layers.at("d").weight(0, 0), (y - target) * 2);
    EXPECT_DOUBLE_EQ(g.layers.at("d").bias(0, 0), y - target);
    EXPECT_DOUBLE_EQ(g.input(0, 0), (y - target) * 1.5);
}

TEST(Backward, TraceFromAnotherNetThrows) {
    Rng rng(6);
    const NetSpec a = build_variant(Variant::C, small_base());
    const NetSpec e = build_variant(Variant::E, small_base());
    const ParamStore pa = any_params(a, rng);
    const ForwardTrace t = forward(a, pa, random_batch(4, 6, rng), Mode::train);
    EXPECT_THROW(backward(e, any_params(e, rng), t, t.embedding), SpecError);
}

TEST(ResetLayers, EmptyListIsIdentity) {
    Rng rng(2);
    const NetSpec net = build_variant(Variant::C, small_base());
    const ParamStore p = init_params(net, rng);
    const ParamStore q = reset_layers(p, net, {}, rng);
    for (const auto& [id, lp] : p.layers) EXPECT_EQ(q.at(id).weight, lp.weight);
}

TEST(ResetLayers, OnlyListedLayerChangesAndSeedReproduces) {
    Rng rng(2);
    const NetSpec net = build_variant(Variant::C, small_base());
    const ParamStore p = init_params(net, rng);
    Rng r1(99), r2(99);
    const ParamStore q = reset_layers(p, net, {"block3.fc"}, r1);
    const ParamStore q2 = reset_layers(p, net, {"block3.fc"}, r2);
    for (const auto& [id, lp] : p.layers) {
        if (id == "block3.fc")
            EXPECT_FALSE(q.at(id).weight == lp.weight);
        else
            EXPECT_EQ(q.at(id).weight, lp.weight) << id;
        EXPECT_EQ(q.at(id).weight, q2.at(id).weight);
    }
}

TEST(ResetLayers, UnknownIdThrows) {
    Rng rng(2);
    const NetSpec net = build_variant(Variant::C, small_base());
    const ParamStore p = init_params(net, rng);
    EXPECT_THROW(reset_layers(p, net, {"fc9"}, rng), SpecError);
    EXPECT_THROW(reset_layers(p, net, {"block1"}, rng), SpecError);
}

TEST(GradCheck, LinearNetLinearProbeIsExact) {
    NetSpec net = single_dense(4, 3, true);
    Rng rng(3);
    const ParamStore p = init_params(net, rng);
    const Matrix probe = random_batch(5, 3, rng);
    const LossFn linear = [&](const Matrix& e, std::span<const Label>) {
        LossOutput o;
        for (std::size_t i = 0; i < e.size(); ++i) o.value += probe.flat()[i] * e.flat()[i];
        o.grad = probe;
        return o;
    };
    const std::vector<Label> labels(5, 0);
    GradCheckOptions opt;
    opt.samples_per_tensor = 0;
    const auto res = grad_check(net, p, linear, random_batch(5, 4, rng), labels, opt);
    EXPECT_LT(res.max_rel_error, 1e-9);
    EXPECT_EQ(res.checked, 15u);
}

TEST(GradCheck, NetETripletLoss) {
    Rng rng(10);
    const NetSpec net = build_variant(Variant::E, small_base());
    const ParamStore p = any_params(net, rng);
    const auto labels = testutil::pk_labels(3, 3);
    const auto res = grad_check(net, p, make_loss(LossKind::triplet), random_batch(9, 6, rng), labels);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
    EXPECT_GT(res.checked, 20u);
}

TEST(GradCheck, NetAClassificationLoss) {
    Rng rng(11);
    VariantBase base = small_base();
    NetSpec net = build_backbone(base, Init::scratch);
    net.layers.push_back(dense_layer("fc6", 12, 12));
    net.provenance["fc6"] = Init::scratch;
    base.class_head = 4;
    attach_output(net, base);
    net.validate();
    const ParamStore p = any_params(net, rng);
    const auto labels = testutil::pk_labels(4, 2);
    const auto res = grad_check(net, p, make_loss(LossKind::classification), random_batch(8, 6, rng), labels);
    EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(GradCheck, BackwardMatchesFiniteDifferencesOnInputToo) {
    // Input gradients are not covered by grad_check; compare them directly.
    Rng rng(12);
    const NetSpec net = build_variant(Variant::F, small_base(8));
    const ParamStore p = any_params(net, rng);
    const Matrix x = random_batch(6, 6, rng);
    const ForwardTrace t = forward(net, p, x, Mode::train);
    const Gradients g = backward(net, p, t, half_square(t.embedding, {}).grad);
    const double h = 1e-5;
    for (std::size_t i = 0; i < x.size(); i += 5) {
        Matrix xp = x, xm = x;
        xp.flat()[i] += h;
        xm.flat()[i] -= h;
        const double num = (half_square(forward(net, p, xp, Mode::train).embedding, {}).value -
                            half_square(forward(net, p, xm, Mode::train).embedding, {}).value) /
                           (2 * h);
        EXPECT_NEAR(g.input.flat()[i], num, 1e-6);
    }
}

TEST(GradCheck, EvalModeBatchnormBackward) {
    Rng rng(13);
    NetSpec net;
    net.input_dim = 3;
    net.layers.push_back(batchnorm_layer("bn", 3));
    net.provenance["bn"] = Init::scratch;
    net.loss_attach = "bn";
    ParamStore p = init_params(net, rng);
    p.at("bn").weight = Matrix{{1.5, -0.5, 2}};
    p.at("bn").running_mean = Matrix{{0.1, 0.2, -0.3}};
    p.at("bn").running_var = Matrix{{0.5, 2, 1}};
    const Matrix x = random_batch(4, 3, rng);
    const ForwardTrace t = forward(net, p, x, Mode::eval);
    const Gradients g = backward(net, p, t, Matrix(4, 3, std::vector<double>(12, 1.0)));
    for (std::size_t c = 0; c < 3; ++c)
        EXPECT_NEAR(g.input(0, c), p.at("bn").weight(0, c) / std::sqrt(p.at("bn").running_var(0, c) + kBatchNormEps),
                    1e-12);
}

TEST(ParamIo, RoundTripIsExact) {
    Rng rng(14);
    const NetSpec net = build_variant(Variant::F, small_base());
    ParamStore p = any_params(net, rng);
    forward_train(net, p, random_batch(6, 6, rng));
    const ParamStore q = params_from_json(nlohmann::json::parse(params_to_json(p).dump()));
    ASSERT_EQ(q.layers.size(), p.layers.size());
    for (const auto& [id, lp] : p.layers) {
        EXPECT_EQ(q.at(id).weight, lp.weight);
        EXPECT_EQ(q.at(id).bias, lp.bias);
        EXPECT_EQ(q.at(id).running_mean, lp.running_mean);
        EXPECT_EQ(q.at(id).running_var, lp.running_var);
    }
}

TEST(ParamIo, RejectsWrongFormat) {
    EXPECT_THROW(params_from_json(nlohmann::json{{"format", "other"}, {"version", 1}}), IoError);
    EXPECT_THROW(params_from_json(nlohmann::json{{"format", "layertap-params"}, {"version", 99}}), IoError);
}
