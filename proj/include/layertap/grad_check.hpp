#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layertap/losses.hpp"
#include "layertap/nn.hpp"
#include "layertap/rng.hpp"

namespace layertap {

using LossFn = std::function<LossOutput(const Matrix& embeddings, std::span<const Label> labels)>;

struct GradCheckOptions {
    double step = 1e-4;
    std::size_t samples_per_tensor = 6;  // 0 checks every entry
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Coordinates whose +-step perturbation flipped a ReLU; central differences
    // are meaningless across the kink, so they are left out.
    std::size_t skipped_kinks = 0;
    std::string worst;
};

namespace detail {

inline std::vector<bool> relu_pattern(const NetSpec& net, const ForwardTrace& t) {
    std::vector<bool> bits;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (net.layers[i].kind != LayerKind::relu) continue;
        for (double v : t.pre_activation(i).flat()) bits.push_back(v > 0.0);
    }
    return bits;
}

inline std::vector<std::size_t> sample_entries(std::size_t size, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
    if (count == 0 || count >= size) return idx;
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(size - i)]);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace detail

// Max over a sampled parameter subset of
// |analytic - central difference| / max(|analytic|, |numeric|, 1e-8),
// with the network run in train mode (batch statistics) throughout.
inline GradCheckResult grad_check(const NetSpec& net, const ParamStore& params, const LossFn& loss,
                                  const Matrix& batch, std::span<const Label> labels,
                                  const GradCheckOptions& opt = {}) {
    const ForwardTrace base = forward(net, params, batch, Mode::train);
    const LossOutput lo = loss(base.embedding, labels);
    const Gradients grads = backward(net, params, base, lo.grad);
    const std::vector<bool> pattern = detail::relu_pattern(net, base);

    Rng rng(opt.seed);
    GradCheckResult res;
    ParamStore probe = params;

    auto eval_at = [&](std::vector<bool>& pat) {
        const ForwardTrace t = forward(net, probe, batch, Mode::train);
        pat = detail::relu_pattern(net, t);
        return loss(t.embedding, labels).value;
    };

    for (const auto& [id, lp] : params.layers) {
        const LayerGrads& lg = grads.layers.at(id);
        for (int which = 0; which < 2; ++which) {
            const Matrix& analytic = which == 0 ? lg.weight : lg.bias;
            if (analytic.empty()) continue;
            Matrix& target = which == 0 ? probe.at(id).weight : probe.at(id).bias;
            for (std::size_t e : detail::sample_entries(analytic.size(), opt.samples_per_tensor, rng)) {
                const double orig = target.flat()[e];
                std::vector<bool> pat_plus, pat_minus;
                target.flat()[e] = orig + opt.step;
                const double lp_plus = eval_at(pat_plus);
                target.flat()[e] = orig - opt.step;
                const double lp_minus = eval_at(pat_minus);
                target.flat()[e] = orig;
                if (pat_plus != pattern || pat_minus != pattern) {
                    ++res.skipped_kinks;
                    continue;
                }
                const double numeric = (lp_plus - lp_minus) / (2.0 * opt.step);
                const double a = analytic.flat()[e];
                const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
                ++res.checked;
                if (rel > res.max_rel_error) {
                    res.max_rel_error = rel;
                    res.worst = id + (which == 0 ? ".weight[" : ".bias[") + std::to_string(e) + "]";
                }
            }
        }
    }
    return res;
}

}  // namespace layertap
