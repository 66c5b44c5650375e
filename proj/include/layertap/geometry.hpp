#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "layertap/error.hpp"
#include "layertap/matrix.hpp"

namespace layertap {

inline constexpr double kDegenerateNorm = 1e-12;

// s * x / ||x||.
inline std::vector<double> l2_normalize_scale(std::span<const double> x, double scale) {
    const double n = norm2(x);
    if (!(n > kDegenerateNorm)) throw DegenerateVectorError("l2_normalize_scale: near-zero norm");
    std::vector<double> out(x.size());
    const double f = scale / n;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f * x[i];
    return out;
}

inline Matrix l2_normalize_scale_rows(const Matrix& x, double scale) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto v = l2_normalize_scale(x.row(r), scale);
        std::copy(v.begin(), v.end(), out.row(r).begin());
    }
    return out;
}

// out(i, j) = ||x_i - y_j||^2, computed by explicit differences so the
// diagonal of a self-distance matrix is exactly zero.
inline Matrix pairwise_sq_euclidean(const Matrix& x, const Matrix& y) {
    if (x.cols() != y.cols()) {
        throw ShapeError("pairwise_sq_euclidean: " + x.shape_str() + " vs " + y.shape_str());
    }
    Matrix out(x.rows(), y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto xi = x.row(i);
        for (std::size_t j = 0; j < y.rows(); ++j) {
            auto yj = y.row(j);
            double s = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const double d = xi[c] - yj[c];
                s += d * d;
            }
            out(i, j) = s;
        }
    }
    return out;
}

inline Matrix pairwise_sq_euclidean(const Matrix& x) {
    Matrix out(x.rows(), x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        auto xi = x.row(i);
        for (std::size_t j = i + 1; j < x.rows(); ++j) {
            auto xj = x.row(j);
            double s = 0.0;
            for (std::size_t c = 0; c < x.cols(); ++c) {
                const double d = xi[c] - xj[c];
                s += d * d;
            }
            out(i, j) = s;
            out(j, i) = s;
        }
    }
    return out;
}

// Max over contiguous equal-length groups: out[i] = max(x[i*g .. (i+1)*g)).
inline std::vector<double> group_max_reduce(std::span<const double> x, std::size_t target_dim) {
    if (target_dim == 0 || x.size() % target_dim != 0) {
        throw ShapeError("group_max_reduce: length " + std::to_string(x.size()) +
                         " not divisible by " + std::to_string(target_dim));
    }
    const std::size_t g = x.size() / target_dim;
    std::vector<double> out(target_dim);
    for (std::size_t i = 0; i < target_dim; ++i) {
        out[i] = *std::max_element(x.begin() + i * g, x.begin() + (i + 1) * g);
    }
    return out;
}

}  // namespace layertap
