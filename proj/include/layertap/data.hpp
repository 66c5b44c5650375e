#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "layertap/error.hpp"
#include "layertap/losses.hpp"
#include "layertap/matrix.hpp"
#include "layertap/rng.hpp"

namespace layertap {

// source: pretraining classes; train: metric-learning classes; test: unseen
// classes for zero-shot retrieval.
enum class Split { source, train, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::source: return "source";
        case Split::train: return "train";
        case Split::test: return "test";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "source") return Split::source;
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw DataError("unknown split '" + s + "'");
}

struct GenConfig {
    std::size_t ambient_dim = 32;
    std::size_t source_classes = 20;
    std::size_t train_classes = 16;
    std::size_t test_classes = 16;
    std::size_t items_per_class = 20;
    double prototype_scale = 1.0;
    double noise_std = 0.15;
    std::size_t nuisance_dim = 4;
    double nuisance_std = 0.5;
    double jitter_std = 0.05;
    std::uint64_t seed = 1;

    void validate() const {
        if (ambient_dim == 0 || source_classes == 0 || train_classes == 0 || test_classes == 0)
            throw ConfigError("dimensions and class counts must be positive");
        if (items_per_class < 2) throw ConfigError("items_per_class must be at least 2");
        if (nuisance_dim > ambient_dim) throw ConfigError("nuisance_dim exceeds ambient_dim");
        if (!(noise_std >= 0.0) || !(nuisance_std >= 0.0) || !(jitter_std >= 0.0) || !(prototype_scale > 0.0))
            throw ConfigError("noise levels must be >= 0 and prototype_scale > 0");
    }
};

// One row per item; the item id is the row index.
struct Dataset {
    Matrix features;
    std::vector<Label> labels;
    std::vector<Split> splits;

    std::size_t size() const noexcept { return labels.size(); }

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) out.push_back(i);
        return out;
    }

    std::vector<Label> classes(Split s) const {
        std::set<Label> c;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) c.insert(labels[i]);
        return {c.begin(), c.end()};
    }

    std::size_t class_count(Split s) const { return classes(s).size(); }

    std::map<Label, std::vector<std::size_t>> members(Split s) const {
        std::map<Label, std::vector<std::size_t>> m;
        for (std::size_t i = 0; i < splits.size(); ++i)
            if (splits[i] == s) m[labels[i]].push_back(i);
        return m;
    }

    void validate() const {
        if (features.rows() != labels.size() || labels.size() != splits.size())
            throw DataError("dataset features/labels/splits lengths disagree");
        std::map<Label, Split> owner;
        std::map<Label, std::size_t> count;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto [it, fresh] = owner.emplace(labels[i], splits[i]);
            if (!fresh && it->second != splits[i])
                throw DataError("class " + std::to_string(labels[i]) + " appears in two splits");
            ++count[labels[i]];
        }
        for (const auto& [label, c] : count)
            if (c < 2) throw DataError("class " + std::to_string(label) + " has fewer than 2 items");
        if (!features.all_finite()) throw DataError("dataset has non-finite features");
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Per class: a random direction scaled to prototype_scale. Per item: the
// prototype, plus a perturbation inside a nuisance subspace shared by every
// class, plus isotropic Gaussian noise. Class ids run source, train, test.
inline Dataset gen_synthetic(const GenConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const std::size_t dim = cfg.ambient_dim;

    std::vector<std::vector<double>> basis;
    while (basis.size() < cfg.nuisance_dim) {
        auto v = rng_gaussian(rng, dim, 0.0, 1.0);
        for (const auto& b : basis) {
            const double proj = dot(v, b);
            for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * b[i];
        }
        const double n = norm2(v);
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        basis.push_back(std::move(v));
    }

    const std::size_t counts[3] = {cfg.source_classes, cfg.train_classes, cfg.test_classes};
    const Split order[3] = {Split::source, Split::train, Split::test};
    const std::size_t total_classes = counts[0] + counts[1] + counts[2];

    Dataset ds;
    ds.features = Matrix(total_classes * cfg.items_per_class, dim);
    Label label = 0;
    std::size_t row = 0;
    for (int s = 0; s < 3; ++s) {
        for (std::size_t c = 0; c < counts[s]; ++c, ++label) {
            auto proto = rng_gaussian(rng, dim, 0.0, 1.0);
            const double n = norm2(proto);
            for (auto& x : proto) x *= cfg.prototype_scale / n;
            for (std::size_t item = 0; item < cfg.items_per_class; ++item, ++row) {
                auto out = ds.features.row(row);
                std::copy(proto.begin(), proto.end(), out.begin());
                for (const auto& b : basis) {
                    const double coef = cfg.nuisance_std * rng.normal();
                    for (std::size_t i = 0; i < dim; ++i) out[i] += coef * b[i];
                }
                for (std::size_t i = 0; i < dim; ++i) out[i] += cfg.noise_std * rng.normal();
                ds.labels.push_back(label);
                ds.splits.push_back(order[s]);
            }
        }
    }
    return ds;
}

struct BatchPlan {
    std::vector<std::size_t> indices;
    std::vector<Label> labels;
    std::size_t p = 0;
    std::size_t k = 0;
};

// p classes uniformly without replacement, then k items per class: without
// replacement when the class has at least k items, with replacement otherwise.
inline BatchPlan sample_batch(const Dataset& ds, Split split, std::size_t p, std::size_t k, Rng& rng) {
    if (p < 2 || k < 2) throw DataError("sample_batch needs p > 1 and k > 1");
    auto members = ds.members(split);
    if (members.size() < p)
        throw DataError("split '" + std::string(to_string(split)) + "' has " + std::to_string(members.size()) +
                        " classes, fewer than p = " + std::to_string(p));
    std::vector<Label> classes;
    for (const auto& [label, _] : members) classes.push_back(label);
    for (std::size_t i = 0; i < p; ++i) std::swap(classes[i], classes[i + rng.below(classes.size() - i)]);

    BatchPlan plan;
    plan.p = p;
    plan.k = k;
    for (std::size_t i = 0; i < p; ++i) {
        auto items = members[classes[i]];
        if (items.size() >= k) {
            for (std::size_t j = 0; j < k; ++j) std::swap(items[j], items[j + rng.below(items.size() - j)]);
            items.resize(k);
        } else {
            std::vector<std::size_t> drawn(k);
            for (auto& d : drawn) d = items[rng.below(items.size())];
            items = std::move(drawn);
        }
        for (std::size_t idx : items) {
            plan.indices.push_back(idx);
            plan.labels.push_back(classes[i]);
        }
    }
    return plan;
}

// Feature-space stand-in for image augmentation: additive N(0, jitter^2) noise.
inline Matrix augment(const Matrix& batch, double jitter_std, Rng& rng) {
    if (!(jitter_std >= 0.0)) throw DataError("augment: jitter_std must be >= 0");
    Matrix out = batch;
    if (jitter_std == 0.0) return out;
    for (double& v : out.flat()) v += jitter_std * rng.normal();
    return out;
}

}  // namespace layertap
