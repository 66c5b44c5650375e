#pragma once

#include <fstream>
#include <string>

#include "json.hpp"
#include "layertap/nn.hpp"

namespace layertap {

// ParamStore file, version 1:
//   {"format": "layertap-params", "version": 1,
//    "layers": [{"id": ..., "kind": ..., "tensors": {name: {"rows", "cols", "data"}}}]}
// Tensor names: weight, bias, running_mean, running_var; empty tensors are omitted.
inline constexpr const char* kParamsFormat = "layertap-params";
inline constexpr int kParamsVersion = 1;

inline nlohmann::json params_to_json(const ParamStore& store) {
    using nlohmann::json;
    json layers = json::array();
    for (const auto& [id, p] : store.layers) {
        json tensors = json::object();
        auto put = [&](const char* name, const Matrix& m) {
            if (m.empty()) return;
            tensors[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
        };
        put("weight", p.weight);
        put("bias", p.bias);
        put("running_mean", p.running_mean);
        put("running_var", p.running_var);
        layers.push_back({{"id", id}, {"kind", to_string(p.kind)}, {"tensors", tensors}});
    }
    return {{"format", kParamsFormat}, {"version", kParamsVersion}, {"layers", layers}};
}

inline ParamStore params_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != kParamsFormat)
        throw IoError("not a layertap parameter file");
    if (j.value("version", 0) != kParamsVersion)
        throw IoError("unsupported parameter file version " + std::to_string(j.value("version", 0)));
    ParamStore store;
    try {
        for (const auto& l : j.at("layers")) {
            LayerParams p;
            p.kind = layer_kind_from_string(l.at("kind").get<std::string>());
            const auto& t = l.at("tensors");
            auto get = [&](const char* name) {
                if (!t.contains(name)) return Matrix();
                const auto& m = t.at(name);
                return Matrix(m.at("rows").get<std::size_t>(), m.at("cols").get<std::size_t>(),
                              m.at("data").get<std::vector<double>>());
            };
            p.weight = get("weight");
            p.bias = get("bias");
            p.running_mean = get("running_mean");
            p.running_var = get("running_var");
            store.layers[l.at("id").get<std::string>()] = std::move(p);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed parameter file: ") + e.what());
    }
    return store;
}

inline void save_params(const std::string& path, const ParamStore& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << params_to_json(store).dump() << '\n';
}

inline ParamStore load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    try {
        return params_from_json(nlohmann::json::parse(is));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(std::string("malformed parameter file: ") + e.what());
    }
}

}  // namespace layertap
