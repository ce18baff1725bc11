#pragma once

// File formats for patches, graphs and labels.
//
//   patch CSV      slide_id,x,y,f0,...,f{d-1}
//   patch JSONL    {"slide_id":..,"x":..,"y":..,"features":[..]} (or f0.. keys)
//   metadata       {"mpp":0.25,"feature_dim":d,"feature_names":[..]}
//   graph JSON     {"slide_id","label","mpp","nodes":[{x,y,count,features,members}],"edges":[[i,j],..]}
//   labels CSV     slide_id,label

#include "slidegraph/error.hpp"
#include "slidegraph/graph_model.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace slidegraph {

using json = nlohmann::json;

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    for (auto& f : out) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    }
    return out;
}

inline double parse_real(std::string_view field, std::size_t line, std::size_t offset) {
    double v = 0.0;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw ParseError("invalid number '" + std::string(field) + "'", line, offset);
    }
    if (!std::isfinite(v)) {
        throw ParseError("non-finite number '" + std::string(field) + "'", line, offset);
    }
    return v;
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
    out << text;
}

// Groups patch rows by slide and returns slides sorted by id.
inline std::vector<SlidePatches> group_by_slide(std::map<std::string, SlidePatches>&& by_id) {
    std::vector<SlidePatches> out;
    out.reserve(by_id.size());
    for (auto& [id, slide] : by_id) {
        out.push_back(std::move(slide));
    }
    return out;
}

} // namespace detail

/// Parses patch-level CSV text. The header must be `slide_id,x,y,f0,...`.
inline std::vector<SlidePatches> parse_patch_csv(std::string_view text) {
    std::map<std::string, SlidePatches> by_id;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    std::size_t dim = 0;
    bool have_header = false;

    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(offset, end - offset);
        ++line_no;
        const std::size_t line_offset = offset;
        offset = end + 1;
        if (line.empty() || line == "\r") continue;

        const auto fields = detail::split_csv_line(line);
        if (!have_header) {
            if (fields.size() < 3 || fields[0] != "slide_id" || fields[1] != "x" || fields[2] != "y") {
                throw ParseError("patch CSV header must start with slide_id,x,y", line_no, line_offset);
            }
            dim = fields.size() - 3;
            have_header = true;
            continue;
        }
        if (fields.size() != dim + 3) {
            throw ParseError("expected " + std::to_string(dim + 3) + " fields, found " + std::to_string(fields.size()),
                             line_no, line_offset);
        }
        if (fields[0].empty()) {
            throw ParseError("empty slide_id", line_no, line_offset);
        }
        PatchRecord rec;
        rec.coords.x = detail::parse_real(fields[1], line_no, line_offset);
        rec.coords.y = detail::parse_real(fields[2], line_no, line_offset);
        rec.features.reserve(dim);
        for (std::size_t f = 0; f < dim; ++f) {
            rec.features.push_back(detail::parse_real(fields[3 + f], line_no, line_offset));
        }
        auto& slide = by_id[std::string(fields[0])];
        slide.slide_id = std::string(fields[0]);
        slide.patches.push_back(std::move(rec));
    }
    if (!have_header) {
        throw ParseError("patch CSV is empty", 1, 0);
    }
    return detail::group_by_slide(std::move(by_id));
}

/// Parses JSON-lines patch records (one object per line).
inline std::vector<SlidePatches> parse_patch_jsonl(std::string_view text) {
    std::map<std::string, SlidePatches> by_id;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    std::optional<std::size_t> dim;
    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(offset, end - offset);
        ++line_no;
        const std::size_t line_offset = offset;
        offset = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line_no, line_offset + e.byte);
        }
        try {
            PatchRecord rec;
            const std::string id = obj.at("slide_id").get<std::string>();
            rec.coords = {obj.at("x").get<double>(), obj.at("y").get<double>()};
            if (obj.contains("features")) {
                rec.features = obj.at("features").get<std::vector<double>>();
            } else {
                for (std::size_t f = 0; obj.contains("f" + std::to_string(f)); ++f) {
                    rec.features.push_back(obj.at("f" + std::to_string(f)).get<double>());
                }
            }
            if (dim && *dim != rec.features.size()) {
                throw ParseError("feature length " + std::to_string(rec.features.size()) + " differs from " +
                                     std::to_string(*dim),
                                 line_no, line_offset);
            }
            dim = rec.features.size();
            auto& slide = by_id[id];
            slide.slide_id = id;
            slide.patches.push_back(std::move(rec));
        } catch (const json::exception& e) {
            throw ParseError(std::string("bad patch record: ") + e.what(), line_no, line_offset);
        }
    }
    return detail::group_by_slide(std::move(by_id));
}

/// Reads a patch file, choosing the parser by extension (.jsonl / .csv).
inline std::vector<SlidePatches> read_patches(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    const auto ext = path.extension().string();
    if (ext == ".jsonl" || ext == ".ndjson") {
        return parse_patch_jsonl(text);
    }
    return parse_patch_csv(text);
}

inline std::string format_patch_csv(const std::vector<SlidePatches>& slides) {
    std::string out = "slide_id,x,y";
    const std::size_t dim =
        slides.empty() || slides.front().patches.empty() ? 0 : slides.front().patches.front().features.size();
    for (std::size_t f = 0; f < dim; ++f) {
        out += ",f" + std::to_string(f);
    }
    out += '\n';
    for (const auto& s : slides) {
        for (const auto& p : s.patches) {
            out += s.slide_id;
            out += ',' + format_double(p.coords.x) + ',' + format_double(p.coords.y);
            for (const double v : p.features) {
                out += ',' + format_double(v);
            }
            out += '\n';
        }
    }
    return out;
}

/// Sidecar metadata that accompanies a patch file.
struct PatchMetadata {
    double mpp = kBaseMpp;
    std::size_t feature_dim = 0;
    std::vector<std::string> feature_names;
};

inline std::filesystem::path metadata_path_for(const std::filesystem::path& features) {
    auto p = features;
    p += ".meta.json";
    return p;
}

inline PatchMetadata parse_metadata(std::string_view text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid metadata JSON: ") + e.what(), 1, e.byte);
    }
    PatchMetadata meta;
    try {
        meta.mpp = obj.at("mpp").get<double>();
        meta.feature_dim = obj.at("feature_dim").get<std::size_t>();
        if (obj.contains("feature_names")) {
            meta.feature_names = obj.at("feature_names").get<std::vector<std::string>>();
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("metadata: ") + e.what());
    }
    if (!meta.feature_names.empty() && meta.feature_names.size() != meta.feature_dim) {
        throw InputError("metadata: feature_names length does not match feature_dim");
    }
    return meta;
}

inline std::string format_metadata(const PatchMetadata& meta) {
    json obj;
    obj["mpp"] = meta.mpp;
    obj["feature_dim"] = meta.feature_dim;
    if (!meta.feature_names.empty()) {
        obj["feature_names"] = meta.feature_names;
    }
    return obj.dump(2) + "\n";
}

/// Checks the patch files against their metadata: dimensions agree, values
/// are finite, and the resolution matches the expected one.
inline void check_patches(const std::vector<SlidePatches>& slides, const PatchMetadata& meta, double expected_mpp) {
    if (std::abs(meta.mpp - expected_mpp) > 1e-12) {
        throw InputError("patch coordinates are at " + format_double(meta.mpp) + " mpp, expected " +
                         format_double(expected_mpp));
    }
    for (const auto& s : slides) {
        for (std::size_t i = 0; i < s.patches.size(); ++i) {
            const auto& p = s.patches[i];
            if (p.features.size() != meta.feature_dim) {
                throw InputError("slide '" + s.slide_id + "' patch " + std::to_string(i) + ": feature length " +
                                 std::to_string(p.features.size()) + " != feature_dim " +
                                 std::to_string(meta.feature_dim));
            }
        }
    }
}

// ---- labels ---------------------------------------------------------------

inline std::map<std::string, int> parse_labels_csv(std::string_view text) {
    std::map<std::string, int> out;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    bool have_header = false;
    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(offset, end - offset);
        ++line_no;
        const std::size_t line_offset = offset;
        offset = end + 1;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        if (!have_header) {
            if (fields.size() != 2 || fields[0] != "slide_id" || fields[1] != "label") {
                throw ParseError("labels CSV header must be slide_id,label", line_no, line_offset);
            }
            have_header = true;
            continue;
        }
        if (fields.size() != 2 || (fields[1] != "0" && fields[1] != "1")) {
            throw ParseError("expected slide_id,{0|1}", line_no, line_offset);
        }
        if (!out.emplace(std::string(fields[0]), fields[1] == "1" ? 1 : 0).second) {
            throw ParseError("duplicate slide_id '" + std::string(fields[0]) + "'", line_no, line_offset);
        }
    }
    return out;
}

inline std::string format_labels_csv(const std::map<std::string, int>& labels) {
    std::string out = "slide_id,label\n";
    for (const auto& [id, y] : labels) {
        out += id + "," + std::to_string(y) + "\n";
    }
    return out;
}

// ---- graphs ---------------------------------------------------------------

inline json graph_to_json(const SlideGraph& g) {
    if (g.nodes.empty()) {
        throw InputError("graph must have >= 1 node");
    }
    json nodes = json::array();
    for (const auto& n : g.nodes) {
        json node;
        node["x"] = n.centroid.x;
        node["y"] = n.centroid.y;
        node["count"] = n.member_count;
        node["features"] = n.features;
        if (!n.member_indices.empty()) {
            node["members"] = n.member_indices;
        }
        nodes.push_back(std::move(node));
    }
    json edges = json::array();
    for (const auto& [a, b] : g.edges) {
        edges.push_back(json::array({a, b}));
    }
    json obj;
    obj["slide_id"] = g.slide_id;
    obj["label"] = g.label ? json(*g.label) : json(nullptr);
    obj["mpp"] = g.mpp;
    obj["nodes"] = std::move(nodes);
    obj["edges"] = std::move(edges);
    return obj;
}

inline SlideGraph graph_from_json(const json& obj) {
    SlideGraph g;
    try {
        g.slide_id = obj.at("slide_id").get<std::string>();
        if (obj.contains("label") && !obj.at("label").is_null()) {
            const int y = obj.at("label").get<int>();
            if (y != 0 && y != 1) {
                throw InputError("graph '" + g.slide_id + "': label must be 0 or 1");
            }
            g.label = y;
        }
        g.mpp = obj.at("mpp").get<double>();
        for (const auto& node : obj.at("nodes")) {
            ClusterNode n;
            n.centroid = {node.at("x").get<double>(), node.at("y").get<double>()};
            n.member_count = node.at("count").get<std::size_t>();
            n.features = node.at("features").get<std::vector<double>>();
            if (node.contains("members")) {
                n.member_indices = node.at("members").get<std::vector<std::size_t>>();
            }
            g.nodes.push_back(std::move(n));
        }
        for (const auto& e : obj.at("edges")) {
            if (!e.is_array() || e.size() != 2) {
                throw InputError("graph '" + g.slide_id + "': edges must be [i,j] pairs");
            }
            g.edges.emplace_back(e[0].get<std::size_t>(), e[1].get<std::size_t>());
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("graph JSON: ") + e.what());
    }
    if (g.nodes.empty()) {
        throw InputError("graph must have >= 1 node");
    }
    return g;
}

/// Serializes a graph to JSON text. Reals are written in shortest
/// round-trip form, so deserialization restores them bit for bit.
inline std::string serialize_graph(const SlideGraph& g) {
    return graph_to_json(g).dump() + "\n";
}

inline SlideGraph deserialize_graph(std::string_view bytes) {
    json obj;
    try {
        obj = json::parse(bytes);
    } catch (const json::parse_error& e) {
        std::size_t line = 1;
        const std::size_t upto = std::min<std::size_t>(e.byte, bytes.size());
        for (std::size_t i = 0; i < upto; ++i) {
            if (bytes[i] == '\n') ++line;
        }
        throw ParseError(std::string("invalid graph JSON: ") + e.what(), line, e.byte);
    }
    return graph_from_json(obj);
}

inline SlideGraph read_graph(const std::filesystem::path& path) {
    return deserialize_graph(detail::read_file(path));
}

inline void write_graph(const std::filesystem::path& path, const SlideGraph& g) {
    detail::write_file(path, serialize_graph(g));
}

/// Loads every `*.json` graph in a directory, sorted by slide id, and
/// attaches labels from the map when given.
inline Dataset read_graph_dir(const std::filesystem::path& dir, const std::map<std::string, int>* labels = nullptr) {
    if (!std::filesystem::is_directory(dir)) {
        throw InputError("'" + dir.string() + "' is not a directory");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    Dataset ds;
    for (const auto& f : files) {
        SlideGraph g = read_graph(f);
        if (labels) {
            const auto it = labels->find(g.slide_id);
            if (it != labels->end()) g.label = it->second;
        }
        if (ds.graphs.empty()) {
            ds.feature_dim = g.feature_dim();
        } else if (g.feature_dim() != ds.feature_dim) {
            throw InputError("graph '" + g.slide_id + "' has feature_dim " + std::to_string(g.feature_dim()) +
                             ", expected " + std::to_string(ds.feature_dim));
        }
        ds.graphs.push_back(std::move(g));
    }
    if (ds.graphs.empty()) {
        throw InputError("no graph files in '" + dir.string() + "'");
    }
    std::sort(ds.graphs.begin(), ds.graphs.end(),
              [](const SlideGraph& a, const SlideGraph& b) { return a.slide_id < b.slide_id; });
    for (std::size_t i = 1; i < ds.graphs.size(); ++i) {
        if (ds.graphs[i].slide_id == ds.graphs[i - 1].slide_id) {
            throw InputError("duplicate slide id '" + ds.graphs[i].slide_id + "'");
        }
    }
    return ds;
}

} // namespace slidegraph
