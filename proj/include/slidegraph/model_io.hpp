#pragma once

// Model file: a JSON document tagged with the magic string, holding the
// spec, every tensor (trainable and running statistics) with its shape, the
// batch-norm settings and a hash of the training configuration.

#include "slidegraph/error.hpp"
#include "slidegraph/gnn.hpp"
#include "slidegraph/graph_io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace slidegraph {

inline constexpr const char* kModelMagic = "SLIDEGRAPH-MODEL-v1";

inline json spec_to_json(const ModelSpec& s) {
    return json{{"input_dim", s.input_dim},       {"base_dims", s.base_dims},
                {"layer_dims", s.layer_dims},     {"use_batch_norm", s.use_batch_norm},
                {"base_net", s.base_net},         {"head_bias", s.head_bias},
                {"seed", s.seed}};
}

inline ModelSpec spec_from_json(const json& j) {
    ModelSpec s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.base_dims = j.at("base_dims").get<std::vector<std::size_t>>();
    s.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
    s.use_batch_norm = j.at("use_batch_norm").get<bool>();
    s.base_net = j.at("base_net").get<bool>();
    s.head_bias = j.at("head_bias").get<bool>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

namespace detail {

template <class Params>
std::map<std::string, std::span<std::conditional_t<std::is_const_v<Params>, const double, double>>> tensor_table(
    Params& p) {
    std::map<std::string, std::span<std::conditional_t<std::is_const_v<Params>, const double, double>>> out;
    const auto add = [&](const std::string& name, auto s) { out.emplace(name, s); };
    for_each_param(p, add);
    for_each_buffer(p, add);
    return out;
}

// Row/column shape of each named tensor, derived from the spec.
inline std::vector<std::size_t> tensor_shape(const ModelParams& p, const std::string& name, std::size_t size) {
    const auto rows_of = [&](const MlpBlock& b) {
        return std::vector<std::size_t>{static_cast<std::size_t>(b.weight.rows()),
                                        static_cast<std::size_t>(b.weight.cols())};
    };
    if (name.ends_with(".weight") && !name.starts_with("head.")) {
        const auto dot = name.find('.');
        const std::size_t idx = std::stoul(name.substr(dot + 1));
        return name.starts_with("base.") ? rows_of(p.base[idx]) : rows_of(p.conv[idx - 1]);
    }
    return {size};
}

} // namespace detail

inline json model_to_json(const ModelParams& p, const std::string& config_hash = "") {
    json tensors = json::array();
    const auto add = [&](const std::string& name, std::span<const double> s) {
        tensors.push_back({{"name", name},
                           {"shape", detail::tensor_shape(p, name, s.size())},
                           {"data", std::vector<double>(s.begin(), s.end())}});
    };
    for_each_param(p, add);
    for_each_buffer(p, add);
    return json{{"magic", kModelMagic},
                {"spec", spec_to_json(p.spec)},
                {"batch_norm",
                 {{"over", "nodes (base net) / messages (edgeconv) of all graphs in a training batch"},
                  {"momentum", kBatchNormMomentum},
                  {"epsilon", kBatchNormEpsilon}}},
                {"config_hash", config_hash},
                {"tensors", std::move(tensors)}};
}

inline ModelParams model_from_json(const json& j) {
    try {
        if (j.at("magic").get<std::string>() != kModelMagic) {
            throw InputError("not a model file (bad magic)");
        }
        ModelParams p = init_params(spec_from_json(j.at("spec")));
        auto table = detail::tensor_table(p);
        std::size_t seen = 0;
        for (const auto& t : j.at("tensors")) {
            const std::string name = t.at("name").get<std::string>();
            const auto it = table.find(name);
            if (it == table.end()) {
                throw InputError("model file has unexpected tensor '" + name + "'");
            }
            const auto data = t.at("data").get<std::vector<double>>();
            const auto shape = t.at("shape").get<std::vector<std::size_t>>();
            std::size_t count = 1;
            for (auto s : shape) count *= s;
            if (data.size() != it->second.size() || count != data.size()) {
                throw InputError("model tensor '" + name + "' has the wrong size");
            }
            std::copy(data.begin(), data.end(), it->second.begin());
            ++seen;
        }
        if (seen != table.size()) {
            throw InputError("model file is missing tensors");
        }
        return p;
    } catch (const json::exception& e) {
        throw InputError(std::string("model JSON: ") + e.what());
    }
}

inline void write_model(const std::filesystem::path& path, const ModelParams& p, const std::string& config_hash = "") {
    detail::write_file(path, model_to_json(p, config_hash).dump(1) + "\n");
}

inline ModelParams read_model(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid model JSON: ") + e.what(), 1, e.byte);
    }
    return model_from_json(j);
}

} // namespace slidegraph
