#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "layertap/data.hpp"
#include "layertap/grad_check.hpp"
#include "layertap/losses.hpp"
#include "layertap/nn.hpp"

namespace layertap {

struct Hyper {
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::size_t iterations = 3000;
    std::vector<double> milestones{0.6, 0.8};  // fractions of `iterations`; lr /= 10 at each
    std::size_t p = 8;
    std::size_t k = 4;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
        double prev = 0.0;
        for (double m : milestones) {
            if (!(m > prev && m < 1.0)) throw ConfigError("milestones must be ascending inside (0, 1)");
            prev = m;
        }
        if (p < 2 || k < 2) throw ConfigError("batch needs p > 1 and k > 1");
    }
};

// Base lr divided by 10 for every milestone already reached.
inline double lr_at(std::size_t iter, const Hyper& h) {
    double lr = h.lr;
    for (double m : h.milestones) {
        const auto at = static_cast<std::size_t>(std::floor(m * static_cast<double>(h.iterations)));
        if (iter >= at) lr /= 10.0;
    }
    return lr;
}

using MomentumBuffers = std::map<std::string, LayerGrads>;

// Classic momentum: g' = g + wd * w; v = mu * v + g'; w -= lr * v.
// Batchnorm gain/shift get no weight decay.
inline void sgd_step(ParamStore& params, const Gradients& grads, MomentumBuffers& buffers, const Hyper& h,
                     double lr) {
    for (const auto& [id, g] : grads.layers) {
        LayerParams& p = params.at(id);
        const double decay = p.kind == LayerKind::batchnorm ? 0.0 : h.weight_decay;
        LayerGrads& v = buffers[id];
        auto update = [&](Matrix& w, const Matrix& grad, Matrix& vel) {
            if (grad.empty() && w.empty()) return;
            if (!grad.same_shape(w)) throw ShapeError("sgd_step: gradient shape mismatch for '" + id + "'");
            if (vel.empty()) vel = Matrix(w.rows(), w.cols());
            if (!vel.same_shape(w)) throw ShapeError("sgd_step: momentum buffer shape mismatch for '" + id + "'");
            auto wf = w.flat();
            auto gf = grad.flat();
            auto vf = vel.flat();
            for (std::size_t i = 0; i < wf.size(); ++i) {
                vf[i] = h.momentum * vf[i] + gf[i] + decay * wf[i];
                wf[i] -= lr * vf[i];
            }
        };
        update(p.weight, g.weight, v.weight);
        update(p.bias, g.bias, v.bias);
    }
}

struct HistoryEntry {
    std::size_t iteration = 0;  // updates completed
    double loss = 0.0;
    double lr = 0.0;
    std::map<std::string, double> snapshot;  // column name -> score, only on snapshot iterations
};

struct TrainHistory {
    std::vector<HistoryEntry> entries;
};

using SnapshotHook = std::function<std::map<std::string, double>(std::size_t iteration, const ParamStore&)>;

struct TrainOptions {
    LossKind loss = LossKind::triplet;
    Split split = Split::train;
    double jitter_std = 0.05;
    double margin = 1.0;
    Distance distance = Distance::sq_euclidean;
    std::size_t log_every = 50;
    std::vector<std::size_t> snapshot_at;  // iteration counts after which `hook` runs
    SnapshotHook hook;
};

struct TrainResult {
    ParamStore params;
    TrainHistory history;
};

inline LossFn make_loss(LossKind kind, double margin = 1.0, Distance distance = Distance::sq_euclidean) {
    switch (kind) {
        case LossKind::triplet:
            return [distance](const Matrix& e, std::span<const Label> l) { return batch_all_triplet_loss(e, l, distance); };
        case LossKind::classification:
            return [](const Matrix& e, std::span<const Label> l) { return softmax_cross_entropy(e, l); };
        case LossKind::contrastive:
            return [margin](const Matrix& e, std::span<const Label> l) { return contrastive_loss(e, l, margin); };
    }
    throw ConfigError("unknown loss kind");
}

inline std::vector<std::size_t> evenly_spaced(std::size_t iterations, std::size_t count) {
    std::vector<std::size_t> out;
    for (std::size_t s = 1; s <= count && iterations > 0; ++s) {
        const std::size_t it = iterations * s / count;
        if (it > 0 && (out.empty() || out.back() != it)) out.push_back(it);
    }
    return out;
}

// sample_batch -> augment -> forward(train) -> loss -> backward -> sgd_step.
// Classification trains on the split's class ids remapped to 0..C-1.
inline TrainResult train(const NetSpec& net, ParamStore params, const Dataset& ds, const Hyper& h,
                         const TrainOptions& opt) {
    h.validate();
    net.validate();
    TrainResult res;
    std::map<Label, Label> class_index;
    if (opt.loss == LossKind::classification) {
        for (Label c : ds.classes(opt.split)) class_index.emplace(c, static_cast<Label>(class_index.size()));
        if (net.head || net.output_dim() != class_index.size())
            throw SpecError("classification needs a class-logit output of width " +
                            std::to_string(class_index.size()));
    }
    const LossFn loss = make_loss(opt.loss, opt.margin, opt.distance);
    Rng rng(h.seed);
    MomentumBuffers buffers;
    std::size_t next_snapshot = 0;

    for (std::size_t it = 0; it < h.iterations; ++it) {
        const BatchPlan plan = sample_batch(ds, opt.split, h.p, h.k, rng);
        std::vector<Label> labels = plan.labels;
        if (opt.loss == LossKind::classification)
            for (auto& l : labels) l = class_index.at(l);
        const Matrix batch = augment(ds.features.gather_rows(plan.indices), opt.jitter_std, rng);
        const ForwardTrace trace = forward_train(net, params, batch);
        const LossOutput lo = loss(trace.embedding, labels);
        const Gradients grads = backward(net, params, trace, lo.grad);
        const double lr = lr_at(it, h);
        sgd_step(params, grads, buffers, h, lr);

        const std::size_t done = it + 1;
        const bool snap = next_snapshot < opt.snapshot_at.size() && opt.snapshot_at[next_snapshot] == done;
        if (snap || done % std::max<std::size_t>(opt.log_every, 1) == 0 || done == h.iterations) {
            HistoryEntry e{done, lo.value, lr, {}};
            if (snap) {
                ++next_snapshot;
                if (opt.hook) e.snapshot = opt.hook(done, params);
            }
            res.history.entries.push_back(std::move(e));
        }
    }
    res.params = std::move(params);
    return res;
}

// Backbone + temporary class-logit layer trained with softmax cross-entropy on
// the source split; returns the backbone parameters only.
inline ParamStore pretrain_classification(const VariantBase& base, const Dataset& ds, const Hyper& h,
                                          double jitter_std) {
    const std::size_t classes = ds.class_count(Split::source);
    if (classes == 0) throw DataError("pretraining needs a non-empty source split");
    const NetSpec net = build_backbone_classifier(base, classes);
    Rng rng(h.seed);
    ParamStore init = init_params(net, rng);
    TrainOptions opt;
    opt.loss = LossKind::classification;
    opt.split = Split::source;
    opt.jitter_std = jitter_std;
    ParamStore trained = train(net, std::move(init), ds, h, opt).params;
    trained.layers.erase(kClassifierId);
    return trained;
}

}  // namespace layertap
