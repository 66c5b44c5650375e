#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "layertap/error.hpp"
#include "layertap/geometry.hpp"
#include "layertap/matrix.hpp"

namespace layertap {

using Label = int;

enum class LossKind { triplet, classification, contrastive };
enum class Distance { sq_euclidean, neg_dot };

inline const char* to_string(LossKind k) {
    switch (k) {
        case LossKind::triplet: return "triplet";
        case LossKind::classification: return "classification";
        case LossKind::contrastive: return "contrastive";
    }
    return "?";
}

inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "triplet") return LossKind::triplet;
    if (s == "classification") return LossKind::classification;
    if (s == "contrastive") return LossKind::contrastive;
    throw ConfigError("unknown loss kind '" + s + "'");
}

inline const char* to_string(Distance d) { return d == Distance::sq_euclidean ? "sq_euclidean" : "neg_dot"; }

inline Distance distance_from_string(const std::string& s) {
    if (s == "sq_euclidean") return Distance::sq_euclidean;
    if (s == "neg_dot") return Distance::neg_dot;
    throw ConfigError("unknown distance '" + s + "'");
}

struct LossOutput {
    double value = 0.0;
    Matrix grad;                    // dL/d(embeddings), same shape as the input
    std::size_t triplet_count = 0;  // triplet losses only
};

// ln(1 + e^g) without overflow.
inline double softplus(double g) {
    if (g > 30.0) return g + std::log1p(std::exp(-g));
    return std::log1p(std::exp(g));
}

inline double sigmoid(double g) {
    if (g >= 0.0) return 1.0 / (1.0 + std::exp(-g));
    const double e = std::exp(g);
    return e / (1.0 + e);
}

// Soft triplet term ln(1 + exp(d_ap - d_an)): small when the positive is
// closer to the anchor than the negative.
inline double smooth_triplet(double d_ap, double d_an) { return softplus(d_ap - d_an); }

// Number of (a, p, n) with label(a) = label(p), a != p, label(n) != label(a).
inline std::size_t count_valid_triplets(std::span<const Label> labels) {
    std::map<Label, std::size_t> counts;
    for (Label l : labels) ++counts[l];
    const std::size_t m = labels.size();
    std::size_t total = 0;
    for (Label l : labels) {
        const std::size_t c = counts[l];
        total += (c - 1) * (m - c);
    }
    return total;
}

namespace detail {

inline Matrix pair_distances(const Matrix& emb, Distance dist) {
    if (dist == Distance::sq_euclidean) return pairwise_sq_euclidean(emb);
    Matrix d = matmul_nt(emb, emb);
    for (double& v : d.flat()) v = -v;
    return d;
}

// Turns coef(i, j) = dL/dD(i, j) into dL/d(emb).
inline Matrix distance_grad(const Matrix& emb, const Matrix& coef, Distance dist) {
    const std::size_t m = emb.rows();
    const std::size_t dim = emb.cols();
    Matrix grad(m, dim);
    for (std::size_t i = 0; i < m; ++i) {
        auto gi = grad.row(i);
        auto xi = emb.row(i);
        for (std::size_t j = 0; j < m; ++j) {
            const double c = coef(i, j) + coef(j, i);
            if (c == 0.0 || i == j) continue;
            auto xj = emb.row(j);
            if (dist == Distance::sq_euclidean) {
                for (std::size_t k = 0; k < dim; ++k) gi[k] += 2.0 * c * (xi[k] - xj[k]);
            } else {
                for (std::size_t k = 0; k < dim; ++k) gi[k] -= c * xj[k];
            }
        }
    }
    return grad;
}

inline void check_labels(const Matrix& emb, std::span<const Label> labels) {
    if (emb.rows() != labels.size())
        throw ShapeError("loss: " + std::to_string(emb.rows()) + " rows but " + std::to_string(labels.size()) +
                         " labels");
}

}  // namespace detail

// Mean soft triplet loss over every valid triplet in the batch. The gradient
// is accumulated as per-pair coefficients dL/dD(i, j), so memory stays O(m^2).
inline LossOutput batch_all_triplet_loss(const Matrix& emb, std::span<const Label> labels,
                                         Distance dist = Distance::sq_euclidean) {
    detail::check_labels(emb, labels);
    const std::size_t count = count_valid_triplets(labels);
    if (count == 0) throw NoValidTripletError("batch has no valid (anchor, positive, negative) triplet");

    const std::size_t m = emb.rows();
    const Matrix d = detail::pair_distances(emb, dist);
    const double inv_m = 1.0 / static_cast<double>(count);
    Matrix coef(m, m);
    double sum = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t p = 0; p < m; ++p) {
            if (p == a || labels[p] != labels[a]) continue;
            for (std::size_t n = 0; n < m; ++n) {
                if (labels[n] == labels[a]) continue;
                const double gap = d(a, p) - d(a, n);
                sum += softplus(gap);
                const double s = sigmoid(gap) * inv_m;
                coef(a, p) += s;
                coef(a, n) -= s;
            }
        }
    }
    return {sum / static_cast<double>(count), detail::distance_grad(emb, coef, dist), count};
}

// Mean over rows of -log softmax(logits)[label]; log-sum-exp kept stable by
// factoring out the row maximum.
inline LossOutput softmax_cross_entropy(const Matrix& logits, std::span<const Label> labels) {
    detail::check_labels(logits, labels);
    const std::size_t n = logits.rows();
    const std::size_t classes = logits.cols();
    if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
    LossOutput out;
    out.grad = Matrix(n, classes);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const Label y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
        auto row = logits.row(r);
        std::size_t arg = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (row[c] > row[arg]) arg = c;
        const double mx = row[arg];
        double rest = 0.0;
        for (std::size_t c = 0; c < classes; ++c)
            if (c != arg) rest += std::exp(row[c] - mx);
        const double lse = mx + std::log1p(rest);
        total += lse - row[static_cast<std::size_t>(y)];
        const double denom = 1.0 + rest;
        auto g = out.grad.row(r);
        for (std::size_t c = 0; c < classes; ++c) {
            const double pr = (c == arg ? 1.0 : std::exp(row[c] - mx)) / denom;
            g[c] = (pr - (c == static_cast<std::size_t>(y) ? 1.0 : 0.0)) / static_cast<double>(n);
        }
    }
    out.value = total / static_cast<double>(n);
    return out;
}

// Mean over unordered pairs of d(i, j) for same-class pairs and
// max(0, margin - sqrt(d(i, j)))^2 for different-class pairs; d is squared Euclidean.
inline LossOutput contrastive_loss(const Matrix& emb, std::span<const Label> labels, double margin = 1.0) {
    detail::check_labels(emb, labels);
    const std::size_t m = emb.rows();
    if (m < 2) throw NoValidPairError("contrastive_loss needs at least two items");
    const Matrix d = pairwise_sq_euclidean(emb);
    const double pairs = static_cast<double>(m * (m - 1) / 2);
    Matrix coef(m, m);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            if (labels[i] == labels[j]) {
                sum += d(i, j);
                coef(i, j) = 1.0 / pairs;
            } else {
                const double dist = std::sqrt(d(i, j));
                const double slack = margin - dist;
                if (slack > 0.0) {
                    sum += slack * slack;
                    // d/dD of (margin - sqrt(D))^2; undefined at D = 0, where it is left at zero.
                    if (dist > 0.0) coef(i, j) = -slack / dist / pairs;
                }
            }
        }
    }
    return {sum / pairs, detail::distance_grad(emb, coef, Distance::sq_euclidean), 0};
}

}  // namespace layertap
