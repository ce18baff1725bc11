#pragma once

#include "slidegraph/clustering.hpp"
#include "slidegraph/graph_model.hpp"
#include "slidegraph/predicates.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

namespace slidegraph {

using EdgeSet = std::vector<Edge>;

struct Triangulation {
    std::vector<std::array<std::size_t, 3>> triangles;  ///< counter-clockwise, original indices
    EdgeSet edges;  ///< sorted, each pair (min, max)
};

namespace detail {

// Incremental sweep triangulation: points are inserted in lexicographic
// order, so every new point lies outside the current hull. Visible hull
// edges are fanned to the new point, then edges are legalized by flipping.
class SweepTriangulator {
public:
    explicit SweepTriangulator(std::span<const Point> pts) : pts_(pts), next_(pts.size()), prev_(pts.size()) {}

    // Requires pts sorted lexicographically, distinct, not all collinear.
    std::vector<std::array<std::size_t, 3>> run() {
        const std::size_t m = pts_.size();
        std::size_t t = 2;
        while (orient2d(pts_[0], pts_[1], pts_[t]) == 0) ++t;

        const int side = orient2d(pts_[0], pts_[1], pts_[t]);
        for (std::size_t i = 0; i + 1 < t; ++i) {
            if (side > 0) {
                add_triangle(i, i + 1, t);
            } else {
                add_triangle(i + 1, i, t);
            }
        }
        // Hull cycle in counter-clockwise order.
        std::vector<std::size_t> hull;
        if (side > 0) {
            for (std::size_t i = 0; i <= t; ++i) hull.push_back(i);
        } else {
            hull.push_back(0);
            hull.push_back(t);
            for (std::size_t i = t - 1; i >= 1; --i) hull.push_back(i);
        }
        for (std::size_t i = 0; i < hull.size(); ++i) {
            next_[hull[i]] = hull[(i + 1) % hull.size()];
            prev_[hull[(i + 1) % hull.size()]] = hull[i];
        }

        for (std::size_t p = t + 1; p < m; ++p) {
            insert(p, p - 1);
        }

        std::vector<std::array<std::size_t, 3>> out;
        for (std::size_t i = 0; i < tris_.size(); ++i) {
            if (alive_[i]) out.push_back(tris_[i]);
        }
        return out;
    }

private:
    static std::uint64_t key(std::size_t a, std::size_t b) {
        return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
    }

    void add_triangle(std::size_t a, std::size_t b, std::size_t c) {
        const std::size_t id = tris_.size();
        tris_.push_back({a, b, c});
        alive_.push_back(1);
        owner_[key(a, b)] = id;
        owner_[key(b, c)] = id;
        owner_[key(c, a)] = id;
    }

    void remove_triangle(std::size_t id) {
        const auto& t = tris_[id];
        owner_.erase(key(t[0], t[1]));
        owner_.erase(key(t[1], t[2]));
        owner_.erase(key(t[2], t[0]));
        alive_[id] = 0;
    }

    std::size_t third_vertex(std::size_t id, std::size_t a, std::size_t b) const {
        for (const std::size_t v : tris_[id]) {
            if (v != a && v != b) return v;
        }
        return a;
    }

    // The triangle owning directed edge (a, b) has apex p. Flip (a, b) while
    // the vertex across it lies inside the circumcircle of (a, b, p).
    void legalize(std::size_t a, std::size_t b, std::size_t p) {
        std::vector<std::pair<std::size_t, std::size_t>> stack{{a, b}};
        while (!stack.empty()) {
            const auto [u, v] = stack.back();
            stack.pop_back();
            const auto mine = owner_.find(key(u, v));
            const auto other = owner_.find(key(v, u));
            if (mine == owner_.end() || other == owner_.end()) continue;
            const std::size_t d = third_vertex(other->second, v, u);
            if (incircle(pts_[u], pts_[v], pts_[p], pts_[d]) <= 0) continue;
            const std::size_t t1 = mine->second;
            const std::size_t t2 = other->second;
            remove_triangle(t1);
            remove_triangle(t2);
            add_triangle(u, d, p);
            add_triangle(d, v, p);
            stack.push_back({u, d});
            stack.push_back({d, v});
        }
    }

    void insert(std::size_t p, std::size_t start) {
        const Point& pt = pts_[p];
        std::size_t last_fwd = start;
        while (orient2d(pts_[last_fwd], pts_[next_[last_fwd]], pt) < 0) {
            const std::size_t nxt = next_[last_fwd];
            add_triangle(nxt, last_fwd, p);
            legalize(nxt, last_fwd, p);
            last_fwd = nxt;
        }
        std::size_t last_bwd = start;
        while (orient2d(pts_[prev_[last_bwd]], pts_[last_bwd], pt) < 0) {
            const std::size_t prv = prev_[last_bwd];
            add_triangle(last_bwd, prv, p);
            legalize(last_bwd, prv, p);
            last_bwd = prv;
        }
        next_[last_bwd] = p;
        prev_[p] = last_bwd;
        next_[p] = last_fwd;
        prev_[last_fwd] = p;
    }

    std::span<const Point> pts_;
    std::vector<std::size_t> next_;
    std::vector<std::size_t> prev_;
    std::vector<std::array<std::size_t, 3>> tris_;
    std::vector<char> alive_;
    std::unordered_map<std::uint64_t, std::size_t> owner_;
};

} // namespace detail

/// Delaunay triangulation of a point set.
///
/// Coincident points are collapsed onto the one with the smallest index;
/// each duplicate is joined to that representative by a zero-length edge.
/// All-collinear input yields the path through consecutive points. Exactly
/// cocircular configurations keep the diagonal produced by lexicographic
/// insertion order.
inline Triangulation delaunay_triangulate(std::span<const Point> points) {
    for (const auto& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw InputError("delaunay: non-finite point");
        }
    }
    const std::size_t n = points.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (points[a] == points[b]) return a < b;
        return lex_less(points[a], points[b]);
    });

    std::vector<Point> unique;
    std::vector<std::size_t> original;  // unique slot -> original index
    Triangulation out;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = order[k];
        if (!unique.empty() && unique.back() == points[idx]) {
            out.edges.push_back(make_edge(original.back(), idx));
            continue;
        }
        unique.push_back(points[idx]);
        original.push_back(idx);
    }

    const std::size_t m = unique.size();
    bool collinear = true;
    for (std::size_t k = 2; k < m && collinear; ++k) {
        collinear = orient2d(unique[0], unique[1], unique[k]) == 0;
    }
    if (collinear) {
        for (std::size_t k = 0; k + 1 < m; ++k) {
            out.edges.push_back(make_edge(original[k], original[k + 1]));
        }
    } else {
        auto tris = detail::SweepTriangulator(unique).run();
        for (auto& t : tris) {
            for (std::size_t e = 0; e < 3; ++e) {
                const std::size_t a = t[e];
                const std::size_t b = t[(e + 1) % 3];
                out.edges.push_back(make_edge(original[a], original[b]));
            }
            out.triangles.push_back({original[t[0]], original[t[1]], original[t[2]]});
        }
    }
    std::sort(out.edges.begin(), out.edges.end());
    out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
    return out;
}

inline EdgeSet delaunay_edges(std::span<const Point> points) {
    return delaunay_triangulate(points).edges;
}

/// Keeps the edges whose endpoint distance is <= d_max.
inline EdgeSet filter_edges(const EdgeSet& edges, std::span<const Point> points, double d_max) {
    EdgeSet out;
    for (const auto& e : edges) {
        if (distance(points[e.first], points[e.second]) <= d_max) {
            out.push_back(e);
        }
    }
    return out;
}

/// Whole-slide graph construction: cluster the patches, aggregate each
/// cluster into a node, triangulate the node centroids and drop edges
/// longer than d_max.
inline SlideGraph build_slide_graph(const SlidePatches& slide, const KernelParams& p, double d_max) {
    if (slide.patches.empty()) {
        throw InputError("slide '" + slide.slide_id + "' has no patches");
    }
    const std::size_t dim = slide.patches.front().features.size();
    for (std::size_t i = 0; i < slide.patches.size(); ++i) {
        if (slide.patches[i].features.size() != dim) {
            throw InputError("slide '" + slide.slide_id + "' patch " + std::to_string(i) +
                             " has inconsistent feature length");
        }
    }
    const auto assignment = agglomerate(slide.patches, p);

    SlideGraph g;
    g.slide_id = slide.slide_id;
    g.label = slide.label;
    g.nodes = aggregate_clusters(slide.patches, assignment);

    std::vector<Point> centroids;
    centroids.reserve(g.nodes.size());
    for (const auto& node : g.nodes) centroids.push_back(node.centroid);
    g.edges = filter_edges(delaunay_edges(centroids), centroids, d_max);
    return g;
}

} // namespace slidegraph
