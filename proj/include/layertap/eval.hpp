#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "layertap/data.hpp"
#include "layertap/geometry.hpp"
#include "layertap/metrics.hpp"
#include "layertap/nn.hpp"

namespace layertap {

// (layer, split, metric) -> score in [0, 1].
struct MetricReport {
    std::map<std::string, std::map<std::string, std::map<std::string, double>>> scores;

    void set(const std::string& layer, const std::string& split, const std::string& metric, double v) {
        if (!(v >= 0.0 && v <= 1.0))
            throw MetricError("score " + layer + "/" + split + "/" + metric + " outside [0, 1]");
        scores[layer][split][metric] = v;
    }

    double get(const std::string& layer, const std::string& split, const std::string& metric) const {
        auto l = scores.find(layer);
        if (l == scores.end()) throw MetricError("report has no layer '" + layer + "'");
        auto s = l->second.find(split);
        if (s == l->second.end()) throw MetricError("report has no split '" + split + "' for " + layer);
        auto m = s->second.find(metric);
        if (m == s->second.end()) throw MetricError("report has no metric '" + metric + "'");
        return m->second;
    }

    std::size_t entry_count() const {
        std::size_t n = 0;
        for (const auto& [_, splits] : scores)
            for (const auto& [__, metrics] : splits) n += metrics.size();
        return n;
    }

    void merge(const MetricReport& o) {
        for (const auto& [l, splits] : o.scores)
            for (const auto& [s, metrics] : splits)
                for (const auto& [m, v] : metrics) scores[l][s][m] = v;
    }
};

inline std::string recall_name(std::size_t k) { return "R@" + std::to_string(k); }

// Group-max down to target_dim when the activation is wider, then unit-normalize rows.
inline Matrix reduce_and_normalize(const Matrix& act, std::size_t target_dim) {
    Matrix reduced = act;
    if (act.cols() > target_dim) {
        if (act.cols() % target_dim != 0)
            throw ShapeError("layer width " + std::to_string(act.cols()) + " not divisible by target_dim " +
                             std::to_string(target_dim));
        reduced = Matrix(act.rows(), target_dim);
        for (std::size_t r = 0; r < act.rows(); ++r) {
            auto v = group_max_reduce(act.row(r), target_dim);
            std::copy(v.begin(), v.end(), reduced.row(r).begin());
        }
    }
    return l2_normalize_scale_rows(reduced, 1.0);
}

inline void check_tap(const NetSpec& net, const std::string& layer_id) {
    if (layer_id == kInputTap) return;
    if (std::find(net.taps.begin(), net.taps.end(), layer_id) == net.taps.end())
        throw SpecError("'" + layer_id + "' is not a tap of this net");
}

// Eval-mode forward, tapped activation, group-max reduction, unit norm.
inline EmbeddingSet extract_features(const NetSpec& net, const ParamStore& params, const Matrix& items,
                                     const std::string& layer_id, std::size_t target_dim) {
    check_tap(net, layer_id);
    const ForwardTrace t = forward(net, params, items, Mode::eval);
    EmbeddingSet es;
    es.layer_id = layer_id;
    es.features = reduce_and_normalize(t.tap(layer_id), target_dim);
    es.item_ids.resize(items.rows());
    for (std::size_t i = 0; i < items.rows(); ++i) es.item_ids[i] = i;
    es.labels.assign(items.rows(), 0);
    return es;
}

// Same, over one split of a dataset (item ids and labels filled in).
inline EmbeddingSet extract_features(const NetSpec& net, const ParamStore& params, const Dataset& ds,
                                     Split split, const std::string& layer_id, std::size_t target_dim) {
    const auto idx = ds.indices(split);
    EmbeddingSet es = extract_features(net, params, ds.features.gather_rows(idx), layer_id, target_dim);
    es.item_ids = idx;
    es.labels.clear();
    for (auto i : idx) es.labels.push_back(ds.labels[i]);
    es.split = split;
    return es;
}

// R@k for every tap on each requested split; one eval forward per split.
inline MetricReport layer_sweep(const NetSpec& net, const ParamStore& params, const Dataset& ds,
                                const std::vector<std::string>& taps, std::size_t target_dim,
                                const std::vector<std::size_t>& ks,
                                const std::vector<Split>& splits = {Split::train, Split::test}) {
    if (taps.empty()) throw MetricError("layer_sweep needs at least one tap");
    for (const auto& tap : taps) check_tap(net, tap);
    MetricReport report;
    for (Split split : splits) {
        const auto idx = ds.indices(split);
        const ForwardTrace t = forward(net, params, ds.features.gather_rows(idx), Mode::eval);
        EmbeddingSet es;
        es.item_ids = idx;
        es.split = split;
        for (auto i : idx) es.labels.push_back(ds.labels[i]);
        for (const auto& tap : taps) {
            es.layer_id = tap;
            es.features = reduce_and_normalize(t.tap(tap), target_dim);
            const auto r = recall_at_ks(es, ks);
            for (std::size_t i = 0; i < ks.size(); ++i) report.set(tap, to_string(split), recall_name(ks[i]), r[i]);
        }
    }
    return report;
}

// Synthetic analogue of the easy/hard/junk retrieval annotation. The database
// is one split plus injected near-duplicate "junk" copies of some items. For a
// query, the nearest third (by raw-feature distance) of its same-class items
// are easy, the rest hard, and the junk copies of its class are junk.
struct RevisitedProtocol {
    Matrix features;  // raw database features; originals first, junk copies after
    std::vector<ItemId> item_ids;
    std::vector<Label> labels;
    std::vector<std::size_t> queries;  // database rows used as queries (originals only)
    std::vector<RawJudgment> raw;      // one per query
};

inline RevisitedProtocol make_revisited_protocol(const Dataset& ds, Split split, std::size_t junk_per_class,
                                                 double junk_noise, Rng& rng) {
    RevisitedProtocol pr;
    const auto idx = ds.indices(split);
    const auto members = ds.members(split);
    std::vector<double> data;
    for (auto i : idx) {
        auto r = ds.features.row(i);
        data.insert(data.end(), r.begin(), r.end());
        pr.labels.push_back(ds.labels[i]);
    }
    std::map<Label, std::vector<ItemId>> junk_of;
    ItemId next_id = idx.size();
    for (const auto& [label, items] : members) {
        for (std::size_t j = 0; j < std::min(junk_per_class, items.size()); ++j) {
            const auto src = ds.features.row(items[rng.below(items.size())]);
            for (double v : src) data.push_back(v + junk_noise * rng.normal());
            pr.labels.push_back(label);
            junk_of[label].push_back(next_id++);
        }
    }
    pr.features = Matrix(pr.labels.size(), ds.features.cols(), std::move(data));
    pr.item_ids.resize(pr.labels.size());
    for (std::size_t i = 0; i < pr.item_ids.size(); ++i) pr.item_ids[i] = i;

    const Matrix d = pairwise_sq_euclidean(pr.features);
    for (std::size_t q = 0; q < idx.size(); ++q) {
        pr.queries.push_back(q);
        std::vector<std::size_t> same;
        for (std::size_t j = 0; j < idx.size(); ++j)
            if (j != q && pr.labels[j] == pr.labels[q]) same.push_back(j);
        std::sort(same.begin(), same.end(), [&](std::size_t a, std::size_t b) {
            return d(q, a) != d(q, b) ? d(q, a) < d(q, b) : a < b;
        });
        const std::size_t easy = (same.size() + 2) / 3;
        RawJudgment rj;
        for (std::size_t r = 0; r < same.size(); ++r) (r < easy ? rj.easy : rj.hard).insert(same[r]);
        for (ItemId j : junk_of[pr.labels[q]]) rj.junk.insert(j);
        pr.raw.push_back(std::move(rj));
    }
    return pr;
}

inline std::vector<std::vector<ItemId>> rank_queries(const Matrix& features, std::span<const ItemId> ids,
                                                     std::span<const std::size_t> queries) {
    std::vector<std::vector<ItemId>> out;
    out.reserve(queries.size());
    const Matrix d = pairwise_sq_euclidean(features.gather_rows(queries), features);
    for (std::size_t qi = 0; qi < queries.size(); ++qi) {
        const auto order = rank_rows(features, ids, queries[qi], d.row(qi));
        std::vector<ItemId> ranked;
        ranked.reserve(order.size());
        for (auto r : order) ranked.push_back(ids[r]);
        out.push_back(std::move(ranked));
    }
    return out;
}

// mP@1/5/10 and mAP under each of the E/M/H setups, per tap. Splits are named
// "E", "M", "H" in the report.
inline MetricReport revisited_eval(const NetSpec& net, const ParamStore& params, const RevisitedProtocol& pr,
                                   const std::vector<std::string>& taps, std::size_t target_dim) {
    MetricReport report;
    const ForwardTrace t = forward(net, params, pr.features, Mode::eval);
    for (const auto& tap : taps) {
        check_tap(net, tap);
        const Matrix feats = reduce_and_normalize(t.tap(tap), target_dim);
        const auto rankings = rank_queries(feats, pr.item_ids, pr.queries);
        for (Setup s : {Setup::E, Setup::M, Setup::H}) {
            const auto judg = build_emh(pr.raw, s);
            for (std::size_t k : {1, 5, 10})
                report.set(tap, to_string(s), "mP@" + std::to_string(k), mean_precision_at_k(rankings, judg, k));
            report.set(tap, to_string(s), "mAP", mean_average_precision(rankings, judg));
        }
    }
    return report;
}

}  // namespace layertap
