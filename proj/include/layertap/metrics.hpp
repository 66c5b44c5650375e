#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "layertap/data.hpp"
#include "layertap/error.hpp"
#include "layertap/geometry.hpp"
#include "layertap/matrix.hpp"

namespace layertap {

using ItemId = std::size_t;

struct EmbeddingSet {
    std::string layer_id;
    Matrix features;  // one unit-norm row per item
    std::vector<ItemId> item_ids;
    std::vector<Label> labels;
    Split split = Split::test;
};

// All other rows of `features`, nearest first by squared Euclidean distance;
// equal distances are ordered by item id. At most `limit` entries (0 = all).
inline std::vector<std::size_t> rank_rows(const Matrix& features, std::span<const ItemId> ids,
                                          std::size_t query, std::span<const double> dist_row,
                                          std::size_t limit = 0) {
    std::vector<std::size_t> order;
    order.reserve(features.rows());
    for (std::size_t j = 0; j < features.rows(); ++j)
        if (j != query) order.push_back(j);
    auto less = [&](std::size_t a, std::size_t b) {
        if (dist_row[a] != dist_row[b]) return dist_row[a] < dist_row[b];
        return ids[a] < ids[b];
    };
    if (limit > 0 && limit < order.size()) {
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(limit), order.end(), less);
        order.resize(limit);
    } else {
        std::sort(order.begin(), order.end(), less);
    }
    return order;
}

// R@k for every k in ks: fraction of items whose k nearest other items
// contain one of the same class.
inline std::vector<double> recall_at_ks(const EmbeddingSet& db, std::span<const std::size_t> ks) {
    const std::size_t n = db.features.rows();
    if (n < 2) throw MetricError("recall_at_k needs at least two items");
    if (db.labels.size() != n || db.item_ids.size() != n) throw ShapeError("embedding set is inconsistent");
    std::size_t max_k = 0;
    for (std::size_t k : ks) {
        if (k == 0) throw MetricError("recall_at_k needs k >= 1");
        max_k = std::max(max_k, k);
    }
    const Matrix d = pairwise_sq_euclidean(db.features);
    std::vector<std::size_t> hits(ks.size(), 0);
    for (std::size_t q = 0; q < n; ++q) {
        const auto order = rank_rows(db.features, db.item_ids, q, d.row(q), max_k);
        std::size_t first_hit = order.size();
        for (std::size_t r = 0; r < order.size(); ++r)
            if (db.labels[order[r]] == db.labels[q]) {
                first_hit = r;
                break;
            }
        for (std::size_t i = 0; i < ks.size(); ++i)
            if (first_hit < ks[i]) ++hits[i];
    }
    std::vector<double> out(ks.size());
    for (std::size_t i = 0; i < ks.size(); ++i) out[i] = static_cast<double>(hits[i]) / static_cast<double>(n);
    return out;
}

inline double recall_at_k(const EmbeddingSet& db, std::size_t k) {
    const std::size_t ks[] = {k};
    return recall_at_ks(db, ks)[0];
}

// Positive and ignored ("junk") items for one query.
struct Judgment {
    std::set<ItemId> positive;
    std::set<ItemId> ignore;
};
using QueryJudgments = std::vector<Judgment>;

inline std::vector<ItemId> drop_ignored(std::span<const ItemId> ranked, const Judgment& j) {
    std::vector<ItemId> out;
    out.reserve(ranked.size());
    for (ItemId id : ranked)
        if (!j.ignore.contains(id)) out.push_back(id);
    return out;
}

// Mean over positives of precision at their (ignore-filtered) rank; positives
// that never appear count as zero. nullopt when the query has no positive and
// must be excluded from averages.
inline std::optional<double> average_precision(std::span<const ItemId> ranked, const Judgment& j) {
    std::size_t positives = 0;
    for (ItemId id : j.positive)
        if (!j.ignore.contains(id)) ++positives;
    if (positives == 0) return std::nullopt;
    const auto filtered = drop_ignored(ranked, j);
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < filtered.size(); ++r) {
        if (j.positive.contains(filtered[r])) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(positives);
}

inline std::optional<double> precision_at_k(std::span<const ItemId> ranked, const Judgment& j, std::size_t k) {
    if (k == 0) throw MetricError("precision_at_k needs k >= 1");
    bool any = false;
    for (ItemId id : j.positive)
        if (!j.ignore.contains(id)) any = true;
    if (!any) return std::nullopt;
    const auto filtered = drop_ignored(ranked, j);
    std::size_t hits = 0;
    for (std::size_t r = 0; r < std::min(k, filtered.size()); ++r)
        if (j.positive.contains(filtered[r])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(k);
}

inline double mean_precision_at_k(const std::vector<std::vector<ItemId>>& rankings, const QueryJudgments& judg,
                                  std::size_t k) {
    if (rankings.size() != judg.size()) throw ShapeError("rankings and judgments differ in length");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q)
        if (auto p = precision_at_k(rankings[q], judg[q], k)) {
            sum += *p;
            ++used;
        }
    if (used == 0) throw MetricError("every query was excluded (no positives)");
    return sum / static_cast<double>(used);
}

inline double mean_average_precision(const std::vector<std::vector<ItemId>>& rankings, const QueryJudgments& judg) {
    if (rankings.size() != judg.size()) throw ShapeError("rankings and judgments differ in length");
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q)
        if (auto ap = average_precision(rankings[q], judg[q])) {
            sum += *ap;
            ++used;
        }
    if (used == 0) throw MetricError("every query was excluded (no positives)");
    return sum / static_cast<double>(used);
}

// Raw per-query annotation before choosing an evaluation setup.
struct RawJudgment {
    std::set<ItemId> easy;
    std::set<ItemId> hard;
    std::set<ItemId> junk;
};

enum class Setup { E, M, H };

inline const char* to_string(Setup s) {
    switch (s) {
        case Setup::E: return "E";
        case Setup::M: return "M";
        case Setup::H: return "H";
    }
    return "?";
}

// E: easy positive, hard + junk ignored. M: easy + hard positive, junk
// ignored. H: hard positive, easy + junk ignored.
inline QueryJudgments build_emh(const std::vector<RawJudgment>& raw, Setup setup) {
    QueryJudgments out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        for (ItemId id : r.easy)
            if (r.hard.contains(id) || r.junk.contains(id)) throw MetricError("raw judgment sets overlap");
        for (ItemId id : r.hard)
            if (r.junk.contains(id)) throw MetricError("raw judgment sets overlap");
        Judgment j;
        switch (setup) {
            case Setup::E:
                j.positive = r.easy;
                j.ignore = r.hard;
                j.ignore.insert(r.junk.begin(), r.junk.end());
                break;
            case Setup::M:
                j.positive = r.easy;
                j.positive.insert(r.hard.begin(), r.hard.end());
                j.ignore = r.junk;
                break;
            case Setup::H:
                j.positive = r.hard;
                j.ignore = r.easy;
                j.ignore.insert(r.junk.begin(), r.junk.end());
                break;
        }
        out.push_back(std::move(j));
    }
    return out;
}

}  // namespace layertap
