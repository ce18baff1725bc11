#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run.

#include "slidegraph/clustering.hpp"
#include "slidegraph/geometry.hpp"
#include "slidegraph/gnn.hpp"
#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace slidegraph::oracles {

// Brute-force average linkage: every step recomputes every inter-cluster
// mean from scratch, O(n^3) per step.
inline std::vector<std::vector<std::size_t>> oracle_agglomerate(const std::vector<PatchRecord>& patches,
                                                                double lambda_h, double lambda_g, double s_min) {
    const std::size_t n = patches.size();
    std::vector<std::vector<double>> sim(n, std::vector<double>(n));
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) {
            double fh = 0.0;
            for (std::size_t f = 0; f < patches[a].features.size(); ++f) {
                fh += std::pow(patches[a].features[f] - patches[b].features[f], 2);
            }
            const double dx = patches[a].coords.x - patches[b].coords.x;
            const double dy = patches[a].coords.y - patches[b].coords.y;
            sim[a][b] = std::exp(-lambda_h * std::sqrt(fh)) * std::exp(-lambda_g * std::sqrt(dx * dx + dy * dy));
        }
    }
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
    while (clusters.size() > 1) {
        double best = -1.0;
        std::size_t bi = 0, bj = 0;
        // Clusters are kept sorted by smallest member, so (i, j) order is the
        // lexicographic (min id, max id) order.
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                double s = 0.0;
                for (auto a : clusters[i]) {
                    for (auto b : clusters[j]) s += sim[a][b];
                }
                s /= static_cast<double>(clusters[i].size() * clusters[j].size());
                if (s > best) {
                    best = s;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (best < s_min) break;
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(clusters[bi].begin(), clusters[bi].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }
    return clusters;
}

inline std::vector<std::vector<std::size_t>> partition_of(const ClusterAssignment& a) {
    std::vector<std::vector<std::size_t>> out(a.cluster_count);
    for (std::size_t i = 0; i < a.labels.size(); ++i) out[a.labels[i]].push_back(i);
    return out;
}

// Independent circumcircle test in long double.
inline bool strictly_inside_circumcircle(const Point& a, const Point& b, const Point& c, const Point& d) {
    using R = long double;
    const R ax = a.x, ay = a.y, bx = b.x, by = b.y, cx = c.x, cy = c.y;
    const R den = 2 * (ax * (by - cy) + bx * (cy - ay) + cx * (ay - by));
    const R ux = ((ax * ax + ay * ay) * (by - cy) + (bx * bx + by * by) * (cy - ay) + (cx * cx + cy * cy) * (ay - by)) / den;
    const R uy = ((ax * ax + ay * ay) * (cx - bx) + (bx * bx + by * by) * (ax - cx) + (cx * cx + cy * cy) * (bx - ax)) / den;
    const R r2 = (ax - ux) * (ax - ux) + (ay - uy) * (ay - uy);
    const R d2 = (d.x - ux) * (d.x - ux) + (d.y - uy) * (d.y - uy);
    return d2 < r2 * (1 - 1e-12L);
}

inline long double cross(const Point& o, const Point& a, const Point& b) {
    return static_cast<long double>(a.x - o.x) * (b.y - o.y) - static_cast<long double>(a.y - o.y) * (b.x - o.x);
}

// Segments properly cross (interiors intersect at a single point).
inline bool properly_cross(const Point& p1, const Point& p2, const Point& q1, const Point& q2) {
    const auto d1 = cross(p1, p2, q1), d2 = cross(p1, p2, q2);
    const auto d3 = cross(q1, q2, p1), d4 = cross(q1, q2, p2);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

// Monotone chain hull area, computed independently of the triangulation.
inline long double hull_area(std::vector<Point> pts, std::size_t* hull_size) {
    std::sort(pts.begin(), pts.end(), lex_less);
    std::vector<Point> h(2 * pts.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], pts[i]) <= 0) --k;
        h[k++] = pts[i];
    }
    h.resize(k - 1);
    *hull_size = h.size();
    long double area = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& a = h[i];
        const auto& b = h[(i + 1) % h.size()];
        area += static_cast<long double>(a.x) * b.y - static_cast<long double>(b.x) * a.y;
    }
    return area / 2;
}

// Exhaustive check of a triangulation of points in general position: every
// triangle counter-clockwise with an empty circumcircle, triangles tile the
// hull, edge count 3n-3-h within [n-1, 3n-6], no two edges cross. Returns
// the first problem found, or an empty string.
inline std::string delaunay_problem(const std::vector<Point>& pts) {
    const auto tri = delaunay_triangulate(pts);
    const std::size_t n = pts.size();
    long double covered = 0;
    for (const auto& t : tri.triangles) {
        if (!(cross(pts[t[0]], pts[t[1]], pts[t[2]]) > 0)) return "triangle not counter-clockwise";
        covered += cross(pts[t[0]], pts[t[1]], pts[t[2]]) / 2;
        for (std::size_t q = 0; q < n; ++q) {
            if (q == t[0] || q == t[1] || q == t[2]) continue;
            if (strictly_inside_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[q])) {
                return "point " + std::to_string(q) + " inside a circumcircle";
            }
        }
    }
    std::size_t h = 0;
    const long double area = hull_area(pts, &h);
    if (std::abs(static_cast<double>(covered - area)) > 1e-9 * static_cast<double>(area)) {
        return "triangles do not tile the hull";
    }
    if (tri.edges.size() != 3 * n - 3 - h) return "edge count differs from 3n-3-h";
    if (tri.edges.size() < n - 1 || tri.edges.size() > 3 * n - 6) return "edge count outside [n-1, 3n-6]";
    for (std::size_t i = 0; i < tri.edges.size(); ++i) {
        for (std::size_t j = i + 1; j < tri.edges.size(); ++j) {
            const auto [a, b] = tri.edges[i];
            const auto [c, d] = tri.edges[j];
            if (properly_cross(pts[a], pts[b], pts[c], pts[d])) return "crossing edges";
        }
    }
    return "";
}

inline SlideGraph seeded_graph(std::uint64_t seed, std::size_t n, std::size_t dim) {
    std::mt19937_64 rng(seed);
    SlideGraph g;
    g.slide_id = "g" + std::to_string(seed);
    const auto pts = fixtures::random_points(rng, n, 5000.0);
    std::normal_distribution<double> feat(0.0, 1.0);
    for (const auto& p : pts) {
        ClusterNode node;
        node.centroid = p;
        node.member_count = 1;
        node.features.resize(dim);
        for (double& v : node.features) v = feat(rng);
        g.nodes.push_back(node);
    }
    g.edges = delaunay_edges(pts);
    return g;
}

// Moves biases, BN shifts and running statistics off their initial values
// so no term is trivially zero.
inline void randomize_buffers(ModelParams& p, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(0.2, 1.5);
    for_each_buffer(p, [&](const std::string& name, std::span<double> s) {
        for (double& v : s) v = name.ends_with("running_var") ? d(rng) : d(rng) - 0.8;
    });
    for_each_param(p, [&](const std::string& name, std::span<double> s) {
        if (name.ends_with("bias") || name.ends_with("beta")) {
            for (double& v : s) v = d(rng) - 0.8;
        }
    });
}

// Largest relative residual of the pooling identities: node scores sum to
// layer scores, layer scores sum to the total.
inline double sum_identity_error(const PredictionBundle& b) {
    double worst = 0.0, total = 0.0;
    for (Eigen::Index l = 0; l < b.node_scores.cols(); ++l) {
        const double layer = b.node_scores.col(l).sum();
        const double ref = b.layer_scores[static_cast<std::size_t>(l)];
        worst = std::max(worst, std::abs(layer - ref) / std::max(1.0, std::abs(layer)));
        total += ref;
    }
    return std::max(worst, std::abs(total - b.total) / std::max(1.0, std::abs(total)));
}

inline double objective(const SlideGraph& g, const ModelParams& p, const Matrix& weights) {
    const auto b = forward(g, p, Mode::Train);
    return b.total + (b.node_scores.array() * weights.array()).sum();
}

// Denominator floor for relative error: pre-normalization biases have an
// exactly zero gradient in training mode, where only absolute error is meaningful.
constexpr double kRelFloor = 1e-2;

struct GradCheck {
    double max_rel = 0.0;
    std::size_t checked = 0;
};

// Central differences on the selected flat parameter positions.
inline GradCheck finite_difference_check(const SlideGraph& g, ModelParams p, const Matrix& weights,
                                         const std::vector<std::size_t>& positions, double h) {
    const auto fp = forward_pass(g, p, Mode::Train);
    const auto grad = backward(fp, p, 1.0, &weights);
    std::vector<double> analytic;
    for_each_param(grad, [&](const std::string&, std::span<const double> s) { analytic.insert(analytic.end(), s.begin(), s.end()); });
    std::vector<double*> slots;
    for_each_param(p, [&](const std::string&, std::span<double> s) {
        for (double& v : s) slots.push_back(&v);
    });
    GradCheck out;
    for (const auto pos : positions) {
        const double saved = *slots[pos];
        *slots[pos] = saved + h;
        const double up = objective(g, p, weights);
        *slots[pos] = saved - h;
        const double down = objective(g, p, weights);
        *slots[pos] = saved;
        const double numeric = (up - down) / (2 * h);
        const double denom = std::max({std::abs(numeric), std::abs(analytic[pos]), kRelFloor});
        out.max_rel = std::max(out.max_rel, std::abs(numeric - analytic[pos]) / denom);
        ++out.checked;
    }
    return out;
}

} // namespace slidegraph::oracles
