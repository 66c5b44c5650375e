#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "layertap/error.hpp"
#include "layertap/geometry.hpp"
#include "layertap/matrix.hpp"
#include "layertap/rng.hpp"

namespace layertap {

enum class LayerKind { dense, relu, batchnorm, normalize_scale };
enum class Init { pretrained, scratch };
enum class Mode { train, eval };
enum class Variant { A, B, C, D, E, F };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kDefaultEmbedScale = 4.0;

// Pseudo tap id for the raw network input.
inline constexpr const char* kInputTap = "input";

inline const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::relu: return "relu";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::normalize_scale: return "normalize_scale";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "relu") return LayerKind::relu;
    if (s == "batchnorm") return LayerKind::batchnorm;
    if (s == "normalize_scale") return LayerKind::normalize_scale;
    throw SpecError("unknown layer kind '" + s + "'");
}

inline char to_char(Variant v) { return static_cast<char>('A' + static_cast<int>(v)); }

inline Variant variant_from_string(const std::string& s) {
    std::string t = s;
    if (t.rfind("Net", 0) == 0) t = t.substr(3);
    if (t.size() == 1 && t[0] >= 'A' && t[0] <= 'F') return static_cast<Variant>(t[0] - 'A');
    throw SpecError("unknown variant id '" + s + "'");
}

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::dense;
    std::size_t in_dim = 0;   // dense: input width; batchnorm: feature width
    std::size_t out_dim = 0;  // dense: output width; batchnorm: feature width
    bool bias = true;         // dense only
    double scale = kDefaultEmbedScale;  // normalize_scale only

    bool parameterized() const noexcept {
        return kind == LayerKind::dense || kind == LayerKind::batchnorm;
    }
    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec dense_layer(std::string id, std::size_t in, std::size_t out, bool bias = true) {
    return {std::move(id), LayerKind::dense, in, out, bias, kDefaultEmbedScale};
}
inline LayerSpec relu_layer(std::string id) { return {std::move(id), LayerKind::relu}; }
inline LayerSpec batchnorm_layer(std::string id, std::size_t dim) {
    return {std::move(id), LayerKind::batchnorm, dim, dim, false, kDefaultEmbedScale};
}
inline LayerSpec normalize_scale_layer(std::string id, double scale = kDefaultEmbedScale) {
    return {std::move(id), LayerKind::normalize_scale, 0, 0, false, scale};
}

// Ordered layer list. `loss_attach` is the last layer of `layers`; the optional
// `head` (a normalize_scale layer) is applied to its output to form the
// training embedding and carries no parameters.
struct NetSpec {
    std::size_t input_dim = 0;
    std::vector<LayerSpec> layers;
    std::optional<LayerSpec> head;
    std::string loss_attach;
    std::vector<std::string> taps;
    std::map<std::string, Init> provenance;

    std::optional<std::size_t> find(const std::string& id) const {
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (layers[i].id == id) return i;
        return std::nullopt;
    }

    std::size_t index_of(const std::string& id) const {
        if (auto i = find(id)) return *i;
        throw SpecError("unknown layer id '" + id + "'");
    }

    const LayerSpec& layer(const std::string& id) const { return layers[index_of(id)]; }

    // Output width of a layer (or of the raw input for the "input" tap).
    std::size_t width_of(const std::string& id) const {
        if (id == kInputTap) return input_dim;
        const std::size_t idx = index_of(id);
        std::size_t w = input_dim;
        for (std::size_t i = 0; i <= idx; ++i)
            if (layers[i].kind == LayerKind::dense) w = layers[i].out_dim;
        return w;
    }

    std::size_t output_dim() const { return layers.empty() ? input_dim : width_of(layers.back().id); }

    bool has_batchnorm() const {
        return std::any_of(layers.begin(), layers.end(),
                           [](const LayerSpec& l) { return l.kind == LayerKind::batchnorm; });
    }

    void validate() const {
        if (layers.empty()) throw SpecError("net has no layers");
        if (input_dim == 0) throw SpecError("net input_dim must be positive");
        std::set<std::string> seen;
        std::size_t width = input_dim;
        for (const auto& l : layers) {
            if (l.id.empty() || l.id == kInputTap) throw SpecError("invalid layer id '" + l.id + "'");
            if (!seen.insert(l.id).second) throw SpecError("duplicate layer id '" + l.id + "'");
            switch (l.kind) {
                case LayerKind::dense:
                    if (l.in_dim == 0 || l.out_dim == 0)
                        throw SpecError("dense layer '" + l.id + "' needs positive dims");
                    if (l.in_dim != width)
                        throw SpecError("dense layer '" + l.id + "' in_dim " + std::to_string(l.in_dim) +
                                        " != incoming width " + std::to_string(width));
                    width = l.out_dim;
                    break;
                case LayerKind::batchnorm:
                    if (l.in_dim != width || l.out_dim != width)
                        throw SpecError("batchnorm layer '" + l.id + "' width mismatch");
                    break;
                case LayerKind::normalize_scale:
                    if (!(l.scale > 0.0)) throw SpecError("normalize_scale needs a positive scale");
                    break;
                case LayerKind::relu: break;
            }
            if (l.parameterized() && !provenance.contains(l.id))
                throw SpecError("no init provenance for layer '" + l.id + "'");
        }
        if (loss_attach != layers.back().id)
            throw SpecError("loss_attach '" + loss_attach + "' is not the final layer");
        if (head) {
            if (head->kind != LayerKind::normalize_scale || !(head->scale > 0.0))
                throw SpecError("head must be a normalize_scale layer with positive scale");
            if (seen.contains(head->id)) throw SpecError("head id collides with a layer id");
        }
        for (const auto& t : taps)
            if (t != kInputTap && !seen.contains(t)) throw SpecError("tap '" + t + "' is not a layer");
    }
};

// Desk-scale stand-in for the pretrained backbone plus the new embedding head.
struct VariantBase {
    std::size_t input_dim = 32;
    std::vector<std::size_t> backbone_widths{64, 64, 64};
    std::size_t head_width = 64;
    double embed_scale = kDefaultEmbedScale;
    // > 0 replaces the normalize_scale head by ReLU + a class-logit dense layer.
    std::size_t class_head = 0;
};

inline std::string block_id(std::size_t i) { return "block" + std::to_string(i); }
inline std::string head_dense_id(std::size_t i) { return "fc" + std::to_string(5 + i); }
inline const std::string kClassifierId = "cls";
inline const std::string kEmbedHeadId = "embed";

inline std::string backbone_output_id(const VariantBase& base) {
    return block_id(base.backbone_widths.size());
}

// Backbone block i: dense (no bias; batchnorm shift subsumes it) -> batchnorm -> relu.
// The relu output carries the block name and is the tappable feature.
inline NetSpec build_backbone(const VariantBase& base, Init init) {
    if (base.backbone_widths.empty()) throw SpecError("backbone needs at least one block");
    NetSpec net;
    net.input_dim = base.input_dim;
    std::size_t width = base.input_dim;
    for (std::size_t i = 1; i <= base.backbone_widths.size(); ++i) {
        const std::size_t w = base.backbone_widths[i - 1];
        const std::string b = block_id(i);
        net.layers.push_back(dense_layer(b + ".fc", width, w, false));
        net.layers.push_back(batchnorm_layer(b + ".bn", w));
        net.layers.push_back(relu_layer(b));
        net.provenance[b + ".fc"] = init;
        net.provenance[b + ".bn"] = init;
        net.taps.push_back(b);
        width = w;
    }
    net.loss_attach = net.layers.back().id;
    return net;
}

inline void attach_output(NetSpec& net, const VariantBase& base) {
    if (base.class_head > 0) {
        const std::size_t w = net.output_dim();
        if (net.layers.back().kind == LayerKind::dense)
            net.layers.push_back(relu_layer(net.layers.back().id + ".relu"));
        net.layers.push_back(dense_layer(kClassifierId, w, base.class_head));
        net.provenance[kClassifierId] = Init::scratch;
        net.head.reset();
    } else {
        net.head = normalize_scale_layer(kEmbedHeadId, base.embed_scale);
    }
    net.loss_attach = net.layers.back().id;
}

// NetA..NetF. A: pretrained backbone + scratch fc6. B: A with the last backbone
// block scratch too. C: everything scratch. D: A without fc6. E: A + fc7.
// F: A + fc7 + fc8. Consecutive head dense layers are separated by ReLU.
inline NetSpec build_variant(Variant variant, const VariantBase& base) {
    const Init backbone_init = variant == Variant::C ? Init::scratch : Init::pretrained;
    NetSpec net = build_backbone(base, backbone_init);
    if (variant == Variant::B) {
        const std::string last = backbone_output_id(base);
        net.provenance[last + ".fc"] = Init::scratch;
        net.provenance[last + ".bn"] = Init::scratch;
    }
    std::size_t head_layers = 1;
    switch (variant) {
        case Variant::D: head_layers = 0; break;
        case Variant::E: head_layers = 2; break;
        case Variant::F: head_layers = 3; break;
        default: break;
    }
    std::size_t width = net.output_dim();
    for (std::size_t i = 1; i <= head_layers; ++i) {
        if (i > 1) net.layers.push_back(relu_layer(head_dense_id(i - 1) + ".relu"));
        const std::string id = head_dense_id(i);
        net.layers.push_back(dense_layer(id, width, base.head_width));
        net.provenance[id] = Init::scratch;
        net.taps.push_back(id);
        width = base.head_width;
    }
    net.loss_attach = net.layers.back().id;
    attach_output(net, base);
    net.validate();
    return net;
}

// Backbone plus a temporary class-logit layer, used for source-class pretraining.
inline NetSpec build_backbone_classifier(const VariantBase& base, std::size_t classes) {
    NetSpec net = build_backbone(base, Init::scratch);
    VariantBase b = base;
    b.class_head = classes;
    attach_output(net, b);
    net.validate();
    return net;
}

// Learnable state of one layer. Dense: weight (in x out), bias (1 x out, or
// empty when the layer has no bias). Batchnorm: weight = gain, bias = shift
// (both 1 x d) plus running mean/variance.
struct LayerParams {
    LayerKind kind = LayerKind::dense;
    Matrix weight;
    Matrix bias;
    Matrix running_mean;
    Matrix running_var;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ParamStore {
    std::map<std::string, LayerParams> layers;

    bool contains(const std::string& id) const { return layers.contains(id); }

    const LayerParams& at(const std::string& id) const {
        auto it = layers.find(id);
        if (it == layers.end()) throw SpecError("no parameters for layer '" + id + "'");
        return it->second;
    }
    LayerParams& at(const std::string& id) {
        auto it = layers.find(id);
        if (it == layers.end()) throw SpecError("no parameters for layer '" + id + "'");
        return it->second;
    }

    friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

// Gaussian with std sqrt(2 / in_dim), zero bias; batchnorm gain 1, shift 0,
// running stats (0, 1).
inline LayerParams scratch_params(const LayerSpec& spec, Rng& rng) {
    LayerParams p;
    p.kind = spec.kind;
    if (spec.kind == LayerKind::dense) {
        const double sd = std::sqrt(2.0 / static_cast<double>(spec.in_dim));
        p.weight = Matrix(spec.in_dim, spec.out_dim, rng_gaussian(rng, spec.in_dim * spec.out_dim, 0.0, sd));
        if (spec.bias) p.bias = Matrix(1, spec.out_dim);
    } else if (spec.kind == LayerKind::batchnorm) {
        p.weight = Matrix(1, spec.out_dim, 1.0);
        p.bias = Matrix(1, spec.out_dim, 0.0);
        p.running_mean = Matrix(1, spec.out_dim, 0.0);
        p.running_var = Matrix(1, spec.out_dim, 1.0);
    }
    return p;
}

inline void check_param_shapes(const LayerSpec& spec, const LayerParams& p) {
    bool ok = p.kind == spec.kind;
    if (ok && spec.kind == LayerKind::dense) {
        ok = p.weight.rows() == spec.in_dim && p.weight.cols() == spec.out_dim &&
             (spec.bias ? (p.bias.rows() == 1 && p.bias.cols() == spec.out_dim) : p.bias.empty());
    } else if (ok && spec.kind == LayerKind::batchnorm) {
        const Matrix shape(1, spec.out_dim);
        ok = p.weight.same_shape(shape) && p.bias.same_shape(shape) &&
             p.running_mean.same_shape(shape) && p.running_var.same_shape(shape);
        if (ok) {
            for (double v : p.running_var.flat())
                if (v < 0.0) throw SpecError("negative running variance in '" + spec.id + "'");
        }
    }
    if (!ok) throw ShapeError("parameter shapes for layer '" + spec.id + "' do not match the net");
}

inline ParamStore init_params(const NetSpec& net, Rng& rng, const ParamStore* pretrained = nullptr) {
    net.validate();
    ParamStore store;
    for (const auto& l : net.layers) {
        if (!l.parameterized()) continue;
        if (net.provenance.at(l.id) == Init::pretrained) {
            if (pretrained == nullptr)
                throw SpecError("layer '" + l.id + "' is pretrained but no pretrained store was given");
            if (!pretrained->contains(l.id))
                throw SpecError("pretrained store lacks layer '" + l.id + "'");
            const LayerParams& src = pretrained->at(l.id);
            check_param_shapes(l, src);
            store.layers[l.id] = src;
        } else {
            store.layers[l.id] = scratch_params(l, rng);
        }
    }
    return store;
}

// Re-draws the listed layers from the scratch scheme, in net order.
inline ParamStore reset_layers(const ParamStore& params, const NetSpec& net,
                               const std::vector<std::string>& ids, Rng& rng) {
    std::set<std::string> wanted;
    for (const auto& id : ids) {
        const LayerSpec& l = net.layer(id);
        if (!l.parameterized()) throw SpecError("layer '" + id + "' has no parameters to reset");
        wanted.insert(id);
    }
    ParamStore out = params;
    for (const auto& l : net.layers)
        if (wanted.contains(l.id)) out.layers[l.id] = scratch_params(l, rng);
    return out;
}

struct BatchNormCache {
    Matrix xhat;
    std::vector<double> mean;
    std::vector<double> var;  // biased batch variance (train) or running variance (eval)
    std::vector<double> inv_std;
};

// Every layer's output for one batch. outputs[i] is the post-activation of
// layers[i]; its pre-activation is outputs[i-1] (or the input for i = 0).
struct ForwardTrace {
    Mode mode = Mode::eval;
    Matrix input;
    std::vector<std::string> layer_ids;
    std::vector<Matrix> outputs;
    std::vector<BatchNormCache> batchnorm;  // indexed like outputs; empty for non-batchnorm layers
    std::vector<double> head_norms;
    Matrix embedding;  // head output, or the final layer output when there is no head

    const Matrix& pre_activation(std::size_t i) const { return i == 0 ? input : outputs[i - 1]; }

    const Matrix& tap(const std::string& id) const {
        if (id == kInputTap) return input;
        for (std::size_t i = 0; i < layer_ids.size(); ++i)
            if (layer_ids[i] == id) return outputs[i];
        throw SpecError("trace has no layer '" + id + "'");
    }

    friend bool operator==(const ForwardTrace& a, const ForwardTrace& b) {
        if (a.mode != b.mode || !(a.input == b.input) || a.layer_ids != b.layer_ids ||
            a.outputs != b.outputs || a.head_norms != b.head_norms || !(a.embedding == b.embedding))
            return false;
        for (std::size_t i = 0; i < a.batchnorm.size(); ++i) {
            const auto& x = a.batchnorm[i];
            const auto& y = b.batchnorm[i];
            if (!(x.xhat == y.xhat) || x.mean != y.mean || x.var != y.var || x.inv_std != y.inv_std)
                return false;
        }
        return true;
    }
};

namespace detail {

inline Matrix normalize_rows(const Matrix& x, double scale, std::vector<double>& norms) {
    Matrix out(x.rows(), x.cols());
    norms.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double n = norm2(x.row(r));
        if (!(n > kDegenerateNorm))
            throw DegenerateVectorError("normalize_scale: row " + std::to_string(r) + " has near-zero norm");
        norms[r] = n;
        auto in = x.row(r);
        auto o = out.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) o[c] = scale * in[c] / n;
    }
    return out;
}

// y = s x / |x|  =>  dx = (s / |x|) (dy - u (u . dy)), u = x / |x|.
inline Matrix normalize_rows_backward(const Matrix& x, const std::vector<double>& norms, double scale,
                                      const Matrix& dy) {
    Matrix dx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double n = norms[r];
        auto xr = x.row(r);
        auto g = dy.row(r);
        double ug = 0.0;
        for (std::size_t c = 0; c < x.cols(); ++c) ug += xr[c] / n * g[c];
        auto o = dx.row(r);
        for (std::size_t c = 0; c < x.cols(); ++c) o[c] = scale / n * (g[c] - xr[c] / n * ug);
    }
    return dx;
}

}  // namespace detail

// Pure: running statistics are not touched (see commit_running_stats).
inline ForwardTrace forward(const NetSpec& net, const ParamStore& params, const Matrix& batch, Mode mode) {
    if (batch.cols() != net.input_dim)
        throw ShapeError("forward: batch has " + std::to_string(batch.cols()) + " columns, net expects " +
                         std::to_string(net.input_dim));
    if (mode == Mode::train && batch.rows() < 2 && net.has_batchnorm())
        throw ShapeError("forward: train-mode batchnorm needs a batch of at least 2");

    ForwardTrace t;
    t.mode = mode;
    t.input = batch;
    t.outputs.reserve(net.layers.size());
    t.batchnorm.resize(net.layers.size());
    const std::size_t n = batch.rows();

    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        const Matrix& x = li == 0 ? t.input : t.outputs.back();
        t.layer_ids.push_back(l.id);
        switch (l.kind) {
            case LayerKind::dense: {
                const LayerParams& p = params.at(l.id);
                check_param_shapes(l, p);
                Matrix y = matmul(x, p.weight);
                if (!p.bias.empty())
                    for (std::size_t r = 0; r < n; ++r) {
                        auto yr = y.row(r);
                        for (std::size_t c = 0; c < y.cols(); ++c) yr[c] += p.bias(0, c);
                    }
                t.outputs.push_back(std::move(y));
                break;
            }
            case LayerKind::relu: {
                Matrix y = x;
                for (double& v : y.flat()) v = v > 0.0 ? v : 0.0;
                t.outputs.push_back(std::move(y));
                break;
            }
            case LayerKind::batchnorm: {
                const LayerParams& p = params.at(l.id);
                check_param_shapes(l, p);
                const std::size_t d = x.cols();
                BatchNormCache& bn = t.batchnorm[li];
                bn.mean.assign(d, 0.0);
                bn.var.assign(d, 0.0);
                bn.inv_std.assign(d, 0.0);
                if (mode == Mode::train) {
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) bn.mean[c] += x(r, c);
                    for (auto& m : bn.mean) m /= static_cast<double>(n);
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) {
                            const double z = x(r, c) - bn.mean[c];
                            bn.var[c] += z * z;
                        }
                    for (auto& v : bn.var) v /= static_cast<double>(n);
                } else {
                    for (std::size_t c = 0; c < d; ++c) {
                        bn.mean[c] = p.running_mean(0, c);
                        bn.var[c] = p.running_var(0, c);
                    }
                }
                for (std::size_t c = 0; c < d; ++c) bn.inv_std[c] = 1.0 / std::sqrt(bn.var[c] + kBatchNormEps);
                bn.xhat = Matrix(n, d);
                Matrix y(n, d);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) {
                        const double xh = (x(r, c) - bn.mean[c]) * bn.inv_std[c];
                        bn.xhat(r, c) = xh;
                        y(r, c) = p.weight(0, c) * xh + p.bias(0, c);
                    }
                t.outputs.push_back(std::move(y));
                break;
            }
            case LayerKind::normalize_scale: {
                std::vector<double> norms;
                t.outputs.push_back(detail::normalize_rows(x, l.scale, norms));
                break;
            }
        }
    }
    if (net.head) {
        t.embedding = detail::normalize_rows(t.outputs.back(), net.head->scale, t.head_norms);
    } else {
        t.embedding = t.outputs.back();
    }
    return t;
}

// Folds a train-mode trace's batch statistics into the running statistics
// (momentum kBatchNormMomentum, unbiased variance). Eval traces are ignored.
inline void commit_running_stats(const NetSpec& net, ParamStore& params, const ForwardTrace& trace) {
    if (trace.mode != Mode::train) return;
    const double n = static_cast<double>(trace.input.rows());
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        if (net.layers[li].kind != LayerKind::batchnorm) continue;
        LayerParams& p = params.at(net.layers[li].id);
        const BatchNormCache& bn = trace.batchnorm[li];
        for (std::size_t c = 0; c < bn.mean.size(); ++c) {
            const double unbiased = n > 1.0 ? bn.var[c] * n / (n - 1.0) : bn.var[c];
            p.running_mean(0, c) = (1.0 - kBatchNormMomentum) * p.running_mean(0, c) + kBatchNormMomentum * bn.mean[c];
            p.running_var(0, c) = (1.0 - kBatchNormMomentum) * p.running_var(0, c) + kBatchNormMomentum * unbiased;
        }
    }
}

inline ForwardTrace forward_train(const NetSpec& net, ParamStore& params, const Matrix& batch) {
    ForwardTrace t = forward(net, params, batch, Mode::train);
    commit_running_stats(net, params, t);
    return t;
}

struct LayerGrads {
    Matrix weight;
    Matrix bias;
};

struct Gradients {
    std::map<std::string, LayerGrads> layers;
    Matrix input;
};

// Reverse-mode pass. grad_out is dL/d(trace.embedding).
inline Gradients backward(const NetSpec& net, const ParamStore& params, const ForwardTrace& trace,
                          const Matrix& grad_out) {
    if (trace.layer_ids.size() != net.layers.size())
        throw SpecError("backward: trace does not belong to this net");
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (trace.layer_ids[i] != net.layers[i].id) throw SpecError("backward: trace does not belong to this net");
    if (!grad_out.same_shape(trace.embedding))
        throw ShapeError("backward: grad_out " + grad_out.shape_str() + " vs embedding " +
                         trace.embedding.shape_str());

    Gradients grads;
    Matrix g = net.head ? detail::normalize_rows_backward(trace.outputs.back(), trace.head_norms,
                                                          net.head->scale, grad_out)
                        : grad_out;
    const std::size_t n = trace.input.rows();

    for (std::size_t li = net.layers.size(); li-- > 0;) {
        const LayerSpec& l = net.layers[li];
        const Matrix& x = trace.pre_activation(li);
        switch (l.kind) {
            case LayerKind::dense: {
                const LayerParams& p = params.at(l.id);
                LayerGrads lg;
                lg.weight = matmul_tn(x, g);
                if (!p.bias.empty()) {
                    lg.bias = Matrix(1, g.cols());
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < g.cols(); ++c) lg.bias(0, c) += g(r, c);
                }
                grads.layers[l.id] = std::move(lg);
                g = matmul_nt(g, p.weight);
                break;
            }
            case LayerKind::relu: {
                auto gx = g.flat();
                auto xin = x.flat();
                for (std::size_t i = 0; i < gx.size(); ++i)
                    if (!(xin[i] > 0.0)) gx[i] = 0.0;
                break;
            }
            case LayerKind::batchnorm: {
                const LayerParams& p = params.at(l.id);
                const BatchNormCache& bn = trace.batchnorm[li];
                const std::size_t d = g.cols();
                LayerGrads lg{Matrix(1, d), Matrix(1, d)};
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < d; ++c) {
                        lg.weight(0, c) += g(r, c) * bn.xhat(r, c);
                        lg.bias(0, c) += g(r, c);
                    }
                Matrix dx(n, d);
                if (trace.mode == Mode::train) {
                    // dx = inv_std/N * (N dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                    const double nn = static_cast<double>(n);
                    for (std::size_t c = 0; c < d; ++c) {
                        const double gain = p.weight(0, c);
                        const double sum_dxhat = gain * lg.bias(0, c);
                        const double sum_dxhat_xhat = gain * lg.weight(0, c);
                        for (std::size_t r = 0; r < n; ++r) {
                            const double dxhat = g(r, c) * gain;
                            dx(r, c) = bn.inv_std[c] / nn * (nn * dxhat - sum_dxhat - bn.xhat(r, c) * sum_dxhat_xhat);
                        }
                    }
                } else {
                    for (std::size_t r = 0; r < n; ++r)
                        for (std::size_t c = 0; c < d; ++c) dx(r, c) = g(r, c) * p.weight(0, c) * bn.inv_std[c];
                }
                grads.layers[l.id] = std::move(lg);
                g = std::move(dx);
                break;
            }
            case LayerKind::normalize_scale: {
                std::vector<double> norms(x.rows());
                for (std::size_t r = 0; r < x.rows(); ++r) norms[r] = norm2(x.row(r));
                g = detail::normalize_rows_backward(x, norms, l.scale, g);
                break;
            }
        }
    }
    grads.input = std::move(g);
    return grads;
}

}  // namespace layertap
