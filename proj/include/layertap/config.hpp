#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layertap/data.hpp"
#include "layertap/format.hpp"
#include "layertap/losses.hpp"
#include "layertap/nn.hpp"
#include "layertap/trainer.hpp"

namespace layertap {

inline constexpr int kConfigVersion = 1;
inline constexpr const char* kToolVersion = "0.3.0";

// Flat JSON experiment configuration. Unknown keys are rejected; numbers are
// coerced to the type of their default so equal values hash equally.
class ExperimentConfig {
public:
    ExperimentConfig() : j_(defaults()) {}

    static nlohmann::json defaults() {
        return {
            {"version", kConfigVersion},
            {"experiment", "fig2-sweep"},
            {"seed", 7u},
            {"dataset", ""},
            // data
            {"ambient_dim", 32u},
            {"source_classes", 20u},
            {"train_classes", 16u},
            {"test_classes", 16u},
            {"items_per_class", 20u},
            {"prototype_scale", 1.0},
            {"noise_std", 0.15},
            {"nuisance_dim", 4u},
            {"nuisance_std", 0.5},
            {"jitter_std", 0.05},
            {"scale_factor", 4u},
            // network
            {"backbone_widths", {64u, 64u, 64u}},
            {"head_width", 64u},
            {"embed_scale", 4.0},
            {"variants", nlohmann::json::array()},
            // optimization
            {"lr", 0.01},
            {"momentum", 0.9},
            {"weight_decay", 5e-4},
            {"iterations", 3000u},
            {"pretrain_iterations", 2000u},
            {"milestones", {0.6, 0.8}},
            {"p", 8u},
            {"k", 4u},
            {"loss", "triplet"},
            {"margin", 1.0},
            {"distance", "sq_euclidean"},
            // evaluation
            {"taps", nlohmann::json::array()},
            {"target_dim", 64u},
            {"ks", {1u, 2u, 4u, 8u}},
            {"snapshots", 10u},
            {"junk_per_class", 2u},
            {"junk_noise", 0.02},
            // output (not part of the config hash)
            {"out", "out"},
        };
    }

    static ExperimentConfig parse(const std::string& text) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            std::size_t line = 1;
            for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i)
                if (text[i] == '\n') ++line;
            throw ConfigError("config parse error at line " + std::to_string(line) + ": " + e.what());
        }
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        ExperimentConfig c;
        if (j.contains("version") && j["version"] != kConfigVersion)
            throw ConfigError("unsupported config version " + j["version"].dump());
        for (auto it = j.begin(); it != j.end(); ++it) c.set(it.key(), it.value());
        return c;
    }

    static ExperimentConfig load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw ConfigError("cannot open config '" + path + "'");
        std::stringstream ss;
        ss << is.rdbuf();
        return parse(ss.str());
    }

    // Sets one field, coercing to the default's type.
    void set(const std::string& key, const nlohmann::json& value) {
        const nlohmann::json def = defaults();
        if (!def.contains(key)) throw ConfigError("unknown config field '" + key + "'");
        j_[key] = coerce(key, def[key], value);
    }

    // "key=value" where value is a JSON literal or a bare string.
    void set_from_string(const std::string& assignment) {
        const auto eq = assignment.find('=');
        if (eq == std::string::npos) throw ConfigError("expected field=value, got '" + assignment + "'");
        set(assignment.substr(0, eq), parse_literal(assignment.substr(eq + 1)));
    }

    static nlohmann::json parse_literal(const std::string& s) {
        try {
            return nlohmann::json::parse(s);
        } catch (const nlohmann::json::parse_error&) {
            return s;
        }
    }

    const nlohmann::json& json() const { return j_; }

    // Canonical form: sorted keys, output directory removed.
    std::string canonical() const {
        nlohmann::json c = j_;
        c.erase("out");
        return c.dump();
    }

    std::string hash() const { return hex64(fnv1a64(canonical())); }

    std::string experiment() const { return j_["experiment"].get<std::string>(); }
    std::uint64_t seed() const { return j_["seed"].get<std::uint64_t>(); }
    std::string out_dir() const { return j_["out"].get<std::string>(); }
    std::string dataset_path() const { return j_["dataset"].get<std::string>(); }

    template <class T>
    T get(const std::string& key) const {
        return j_.at(key).get<T>();
    }

    GenConfig gen_config() const {
        GenConfig g;
        g.ambient_dim = get<std::size_t>("ambient_dim");
        g.source_classes = get<std::size_t>("source_classes");
        g.train_classes = get<std::size_t>("train_classes");
        g.test_classes = get<std::size_t>("test_classes");
        g.items_per_class = get<std::size_t>("items_per_class");
        g.prototype_scale = get<double>("prototype_scale");
        g.noise_std = get<double>("noise_std");
        g.nuisance_dim = get<std::size_t>("nuisance_dim");
        g.nuisance_std = get<double>("nuisance_std");
        g.jitter_std = get<double>("jitter_std");
        g.seed = seed();
        return g;
    }

    VariantBase variant_base() const {
        VariantBase b;
        b.input_dim = get<std::size_t>("ambient_dim");
        b.backbone_widths = get<std::vector<std::size_t>>("backbone_widths");
        b.head_width = get<std::size_t>("head_width");
        b.embed_scale = get<double>("embed_scale");
        return b;
    }

    Hyper hyper(bool pretraining) const {
        Hyper h;
        h.lr = get<double>("lr");
        h.momentum = get<double>("momentum");
        h.weight_decay = get<double>("weight_decay");
        h.iterations = get<std::size_t>(pretraining ? "pretrain_iterations" : "iterations");
        h.milestones = get<std::vector<double>>("milestones");
        h.p = get<std::size_t>("p");
        h.k = get<std::size_t>("k");
        h.validate();
        return h;
    }

    LossKind loss() const { return loss_kind_from_string(get<std::string>("loss")); }
    Distance distance() const { return distance_from_string(get<std::string>("distance")); }

private:
    static nlohmann::json coerce(const std::string& key, const nlohmann::json& def, const nlohmann::json& v) {
        auto fail = [&] { throw ConfigError("config field '" + key + "' has the wrong type: " + v.dump()); };
        if (def.is_number_unsigned()) {
            if (v.is_number_unsigned()) return v;
            if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
            if (v.is_number_float() && v.get<double>() >= 0 && std::floor(v.get<double>()) == v.get<double>())
                return static_cast<std::uint64_t>(v.get<double>());
            fail();
        }
        if (def.is_number_integer()) {
            if (!v.is_number_integer()) fail();
            return v;
        }
        if (def.is_number_float()) {
            if (!v.is_number()) fail();
            return v.get<double>();
        }
        if (def.is_string()) {
            if (!v.is_string()) fail();
            return v;
        }
        if (def.is_array()) {
            if (!v.is_array()) fail();
            nlohmann::json out = nlohmann::json::array();
            if (def.empty()) {
                for (const auto& x : v) {
                    if (!x.is_string()) fail();
                    out.push_back(x);
                }
                return out;
            }
            for (const auto& x : v) out.push_back(coerce(key, def[0], x));
            return out;
        }
        return v;
    }

    nlohmann::json j_;
};

}  // namespace layertap
