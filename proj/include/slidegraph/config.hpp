#pragma once

// Run configuration: an INI file with [kernel], [graph], [model], [training],
// [synth] and [baseline] sections. Every key is optional; unknown keys are
// rejected so typos do not silently fall back to defaults.

#include "slidegraph/baselines.hpp"
#include "slidegraph/clustering.hpp"
#include "slidegraph/error.hpp"
#include "slidegraph/gnn.hpp"
#include "slidegraph/graph_io.hpp"
#include "slidegraph/synth.hpp"
#include "slidegraph/training.hpp"

#include <boost/crc.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace slidegraph {

struct RunConfig {
    // [kernel]
    std::optional<double> lambda_h;  ///< unset: median heuristic over the input patches
    double lambda_g = 1.0 / 4000.0;
    double s_min = 0.8;
    std::size_t median_pairs = 1000;
    std::uint64_t kernel_seed = 0;
    // [graph]
    double d_max = 4000.0;
    double mpp = kBaseMpp;
    bool standardize = false;
    // [model]
    ModelSpec model;
    // [training]
    TrainConfig training;
    std::size_t folds = 5;
    // [synth]
    SynthConfig synth;
    // [baseline]
    std::size_t baseline_channel = 0;
    double baseline_floor = 0.1;

    KernelParams kernel(double resolved_lambda_h) const {
        KernelParams k;
        k.lambda_h = lambda_h.value_or(resolved_lambda_h);
        k.lambda_g = lambda_g;
        k.s_min = s_min;
        return k;
    }
};

namespace detail {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

inline std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) continue;
        item = item.substr(b, e - b + 1);
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw InputError("config: " + key + " expects comma-separated integers");
        out.push_back(v);
    }
    return out;
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

} // namespace detail

/// Parses INI text into a RunConfig, starting from the defaults.
inline RunConfig parse_config(const std::string& text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError("config: " + e.message(), e.line(), 0);
    }

    static const std::map<std::string, std::set<std::string>> known{
        {"kernel", {"lambda_h", "lambda_g", "s_min", "median_pairs", "seed"}},
        {"graph", {"d_max", "mpp", "standardize"}},
        {"model", {"base_dims", "layer_dims", "batch_norm", "base_net", "head_bias", "seed"}},
        {"training",
         {"learning_rate", "weight_decay", "pos_per_batch", "neg_per_batch", "max_epochs", "patience", "seed",
          "validation_fraction", "mean_pairs", "stop_at_zero_loss", "folds"}},
        {"synth",
         {"n_slides", "patches_per_slide", "feature_dim", "signal_strength", "positive_fraction", "seed", "decoys"}},
        {"baseline", {"channel", "floor"}}};
    for (const auto& [section, body] : tree) {
        const auto it = known.find(section);
        if (it == known.end() || body.data() != "") {
            throw InputError("config: unknown section [" + section + "]");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.count(key)) throw InputError("config: unknown key '" + key + "' in [" + section + "]");
        }
    }

    RunConfig c;
    const auto get = [&](const std::string& path, auto& target) {
        using T = std::remove_reference_t<decltype(target)>;
        if (auto v = tree.get_optional<std::string>(path)) {
            if (auto parsed = tree.get_optional<T>(path)) {
                target = *parsed;
            } else {
                throw InputError("config: bad value '" + *v + "' for " + path);
            }
        }
    };
    if (auto v = tree.get_optional<std::string>("kernel.lambda_h")) {
        if (*v != "auto") {
            double x = 0.0;
            get("kernel.lambda_h", x);
            c.lambda_h = x;
        }
    }
    get("kernel.lambda_g", c.lambda_g);
    get("kernel.s_min", c.s_min);
    get("kernel.median_pairs", c.median_pairs);
    get("kernel.seed", c.kernel_seed);
    get("graph.d_max", c.d_max);
    get("graph.mpp", c.mpp);
    get("graph.standardize", c.standardize);
    if (auto v = tree.get_optional<std::string>("model.base_dims")) c.model.base_dims = detail::parse_sizes("base_dims", *v);
    if (auto v = tree.get_optional<std::string>("model.layer_dims")) {
        c.model.layer_dims = detail::parse_sizes("layer_dims", *v);
    }
    get("model.batch_norm", c.model.use_batch_norm);
    get("model.base_net", c.model.base_net);
    get("model.head_bias", c.model.head_bias);
    get("model.seed", c.model.seed);
    auto& t = c.training;
    get("training.learning_rate", t.learning_rate);
    get("training.weight_decay", t.weight_decay);
    get("training.pos_per_batch", t.pos_per_batch);
    get("training.neg_per_batch", t.neg_per_batch);
    get("training.max_epochs", t.max_epochs);
    get("training.patience", t.patience);
    get("training.seed", t.seed);
    get("training.validation_fraction", t.validation_fraction);
    get("training.mean_pairs", t.mean_pairs);
    get("training.stop_at_zero_loss", t.stop_at_zero_loss);
    get("training.folds", c.folds);
    auto& s = c.synth;
    get("synth.n_slides", s.n_slides);
    get("synth.patches_per_slide", s.patches_per_slide);
    get("synth.feature_dim", s.feature_dim);
    get("synth.signal_strength", s.signal_strength);
    get("synth.positive_fraction", s.positive_fraction);
    get("synth.seed", s.seed);
    get("synth.decoys", s.decoys);
    get("baseline.channel", c.baseline_channel);
    get("baseline.floor", c.baseline_floor);

    if (c.lambda_h && !(*c.lambda_h > 0.0)) throw InputError("config: lambda_h must be > 0");
    c.kernel(1.0).check();
    if (!(c.d_max > 0.0)) throw InputError("config: d_max must be > 0");
    if (!(c.mpp > 0.0)) throw InputError("config: mpp must be > 0");
    if (c.folds < 2) throw InputError("config: folds must be >= 2");
    if (c.model.layer_dims.empty()) throw InputError("config: layer_dims must not be empty");
    t.check();
    s.check();
    return c;
}

inline RunConfig read_config(const std::filesystem::path& path) {
    return parse_config(detail::read_file(path));
}

/// Canonical INI text with every key spelled out.
inline std::string format_config(const RunConfig& c) {
    const auto d = [](double v) { return format_double(v); };
    std::string o;
    o += "[kernel]\n";
    o += "lambda_h = " + (c.lambda_h ? d(*c.lambda_h) : std::string("auto")) + "\n";
    o += "lambda_g = " + d(c.lambda_g) + "\n";
    o += "s_min = " + d(c.s_min) + "\n";
    o += "median_pairs = " + std::to_string(c.median_pairs) + "\n";
    o += "seed = " + std::to_string(c.kernel_seed) + "\n\n";
    o += "[graph]\n";
    o += "d_max = " + d(c.d_max) + "\n";
    o += "mpp = " + d(c.mpp) + "\n";
    o += "standardize = " + detail::fmt_bool(c.standardize) + "\n\n";
    o += "[model]\n";
    o += "base_dims = " + detail::join_sizes(c.model.base_dims) + "\n";
    o += "layer_dims = " + detail::join_sizes(c.model.layer_dims) + "\n";
    o += "batch_norm = " + detail::fmt_bool(c.model.use_batch_norm) + "\n";
    o += "base_net = " + detail::fmt_bool(c.model.base_net) + "\n";
    o += "head_bias = " + detail::fmt_bool(c.model.head_bias) + "\n";
    o += "seed = " + std::to_string(c.model.seed) + "\n\n";
    const auto& t = c.training;
    o += "[training]\n";
    o += "learning_rate = " + d(t.learning_rate) + "\n";
    o += "weight_decay = " + d(t.weight_decay) + "\n";
    o += "pos_per_batch = " + std::to_string(t.pos_per_batch) + "\n";
    o += "neg_per_batch = " + std::to_string(t.neg_per_batch) + "\n";
    o += "max_epochs = " + std::to_string(t.max_epochs) + "\n";
    o += "patience = " + std::to_string(t.patience) + "\n";
    o += "seed = " + std::to_string(t.seed) + "\n";
    o += "validation_fraction = " + d(t.validation_fraction) + "\n";
    o += "mean_pairs = " + detail::fmt_bool(t.mean_pairs) + "\n";
    o += "stop_at_zero_loss = " + detail::fmt_bool(t.stop_at_zero_loss) + "\n";
    o += "folds = " + std::to_string(c.folds) + "\n\n";
    const auto& s = c.synth;
    o += "[synth]\n";
    o += "n_slides = " + std::to_string(s.n_slides) + "\n";
    o += "patches_per_slide = " + std::to_string(s.patches_per_slide) + "\n";
    o += "feature_dim = " + std::to_string(s.feature_dim) + "\n";
    o += "signal_strength = " + d(s.signal_strength) + "\n";
    o += "positive_fraction = " + d(s.positive_fraction) + "\n";
    o += "seed = " + std::to_string(s.seed) + "\n";
    o += "decoys = " + detail::fmt_bool(s.decoys) + "\n\n";
    o += "[baseline]\n";
    o += "channel = " + std::to_string(c.baseline_channel) + "\n";
    o += "floor = " + d(c.baseline_floor) + "\n";
    return o;
}

/// CRC-32 of the canonical text, as 8 hex digits.
inline std::string config_hash(const RunConfig& c) {
    const std::string text = format_config(c);
    boost::crc_32_type crc;
    crc.process_bytes(text.data(), text.size());
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
    return buf;
}

} // namespace slidegraph
