#pragma once

#include "slidegraph/error.hpp"
#include "slidegraph/predicates.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace slidegraph {

/// Microns per pixel of the base resolution all coordinates refer to.
inline constexpr double kBaseMpp = 0.25;

/// One patch: base-resolution pixel coordinates and a feature vector.
struct PatchRecord {
    Point coords;
    std::vector<double> features;

    friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

/// All patches of one slide, with the slide label when known.
struct SlidePatches {
    std::string slide_id;
    std::vector<PatchRecord> patches;
    std::optional<int> label;
};

/// A graph vertex: the mean position and mean features of a patch cluster.
struct ClusterNode {
    Point centroid;
    std::vector<double> features;
    std::size_t member_count = 0;
    std::vector<std::size_t> member_indices;

    friend bool operator==(const ClusterNode&, const ClusterNode&) = default;
};

using Edge = std::pair<std::size_t, std::size_t>;

/// Normalized undirected edge (smaller index first).
inline Edge make_edge(std::size_t a, std::size_t b) {
    return a < b ? Edge{a, b} : Edge{b, a};
}

struct SlideGraph {
    std::string slide_id;
    std::vector<ClusterNode> nodes;
    std::vector<Edge> edges;
    std::optional<int> label;
    double mpp = kBaseMpp;

    std::size_t feature_dim() const { return nodes.empty() ? 0 : nodes.front().features.size(); }

    friend bool operator==(const SlideGraph&, const SlideGraph&) = default;
};

struct Dataset {
    std::vector<SlideGraph> graphs;
    std::size_t feature_dim = 0;
    std::vector<std::string> feature_names;
};

struct FoldSplit {
    std::size_t fold_count = 0;
    std::map<std::string, std::size_t> assignments;

    /// Slide indices (into the dataset the split was made from) of one fold.
    std::vector<std::size_t> members(const Dataset& ds, std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
            if (assignments.at(ds.graphs[i].slide_id) == fold) {
                out.push_back(i);
            }
        }
        return out;
    }
};

/// Checks every SlideGraph invariant and reports each violation by index.
/// Planarity is checked on centroid positions: two edges may only meet at a
/// point that is an endpoint of both.
inline std::vector<std::string> validate_graph(const SlideGraph& g, double d_max) {
    std::vector<std::string> out;
    const std::size_t n = g.nodes.size();
    if (n == 0) {
        out.emplace_back("graph has no nodes");
    }

    const std::size_t dim = g.feature_dim();
    for (std::size_t k = 0; k < n; ++k) {
        const ClusterNode& node = g.nodes[k];
        const std::string where = "node " + std::to_string(k);
        if (node.features.size() != dim) {
            out.push_back(where + ": feature length " + std::to_string(node.features.size()) + " != " +
                          std::to_string(dim));
        }
        if (!std::isfinite(node.centroid.x) || !std::isfinite(node.centroid.y)) {
            out.push_back(where + ": non-finite centroid");
        }
        if (std::any_of(node.features.begin(), node.features.end(), [](double v) { return !std::isfinite(v); })) {
            out.push_back(where + ": non-finite feature");
        }
        if (node.member_count < 1) {
            out.push_back(where + ": member_count must be >= 1");
        }
        if (!node.member_indices.empty() && node.member_indices.size() != node.member_count) {
            out.push_back(where + ": member_count does not match member list");
        }
    }

    std::set<Edge> seen;
    std::vector<std::size_t> checkable;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        const auto [a, b] = g.edges[e];
        const std::string where = "edge " + std::to_string(e);
        if (a >= n || b >= n) {
            out.push_back(where + ": endpoint out of range");
            continue;
        }
        if (a == b) {
            out.push_back("self-loop at " + where);
            continue;
        }
        if (!seen.insert(make_edge(a, b)).second) {
            out.push_back("duplicate " + where);
            continue;
        }
        const auto finite = [](const Point& q) { return std::isfinite(q.x) && std::isfinite(q.y); };
        if (!finite(g.nodes[a].centroid) || !finite(g.nodes[b].centroid)) {
            out.push_back(where + ": endpoint has non-finite centroid");
            continue;
        }
        const double len = distance(g.nodes[a].centroid, g.nodes[b].centroid);
        if (!(len <= d_max)) {
            out.push_back(where + ": length " + std::to_string(len) + " exceeds d_max " + std::to_string(d_max));
        }
        checkable.push_back(e);
    }

    // Sweep over x-extents so only overlapping edges are compared.
    struct Span {
        double lo, hi;
        std::size_t e;
    };
    std::vector<Span> spans;
    spans.reserve(checkable.size());
    for (const std::size_t e : checkable) {
        const Point& p = g.nodes[g.edges[e].first].centroid;
        const Point& q = g.nodes[g.edges[e].second].centroid;
        spans.push_back({std::min(p.x, q.x), std::max(p.x, q.x), e});
    }
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
        return a.lo < b.lo || (a.lo == b.lo && a.e < b.e);
    });
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const auto [a1, b1] = g.edges[spans[i].e];
        for (std::size_t j = i + 1; j < spans.size() && spans[j].lo <= spans[i].hi; ++j) {
            const auto [a2, b2] = g.edges[spans[j].e];
            if (segments_conflict(g.nodes[a1].centroid, g.nodes[b1].centroid, g.nodes[a2].centroid,
                                  g.nodes[b2].centroid)) {
                const std::size_t lo = std::min(spans[i].e, spans[j].e);
                const std::size_t hi = std::max(spans[i].e, spans[j].e);
                out.push_back("edges " + std::to_string(lo) + " and " + std::to_string(hi) + " intersect");
            }
        }
    }
    return out;
}

/// Assigns slides to k folds, stratified by label. Slides are ordered by id,
/// shuffled per class with the seed, then dealt round-robin; the negative
/// class continues dealing where the positive class stopped so fold sizes
/// differ by at most one.
inline FoldSplit stratified_folds(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    if (k < 2) {
        throw InputError("stratified_folds: k must be >= 2");
    }
    std::vector<std::size_t> order(ds.graphs.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return ds.graphs[a].slide_id < ds.graphs[b].slide_id; });

    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (const std::size_t i : order) {
        const auto& label = ds.graphs[i].label;
        if (!label) {
            throw InputError("stratified_folds: slide '" + ds.graphs[i].slide_id + "' has no label");
        }
        (*label == 1 ? pos : neg).push_back(i);
    }
    if (pos.size() < k || neg.size() < k) {
        throw InputError("stratified_folds: need at least " + std::to_string(k) + " slides of each class (have " +
                         std::to_string(pos.size()) + " positive, " + std::to_string(neg.size()) + " negative)");
    }

    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    FoldSplit split;
    split.fold_count = k;
    std::size_t next = 0;
    for (const auto* cls : {&pos, &neg}) {
        for (const std::size_t i : *cls) {
            if (!split.assignments.emplace(ds.graphs[i].slide_id, next).second) {
                throw InputError("stratified_folds: duplicate slide id '" + ds.graphs[i].slide_id + "'");
            }
            next = (next + 1) % k;
        }
    }
    return split;
}

} // namespace slidegraph
