#pragma once

#include "slidegraph/error.hpp"
#include "slidegraph/graph_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace slidegraph {

struct KernelParams {
    double lambda_h = 1.0;  ///< feature-space decay
    double lambda_g = 1.0 / 4000.0;  ///< geometric decay, 1/d_max by default
    double s_min = 0.8;  ///< stop merging below this average similarity

    void check() const {
        if (!(lambda_h > 0.0) || !std::isfinite(lambda_h)) throw InputError("lambda_h must be positive");
        if (!(lambda_g > 0.0) || !std::isfinite(lambda_g)) throw InputError("lambda_g must be positive");
        if (!(s_min > 0.0 && s_min <= 1.0)) throw InputError("s_min must lie in (0, 1]");
    }
};

struct ClusterAssignment {
    std::vector<std::size_t> labels;  ///< patch index -> cluster id
    std::size_t cluster_count = 0;
};

/// One merge of the agglomeration, in the order performed. `kept` and
/// `absorbed` are the smallest member indices of the two clusters.
struct MergeStep {
    std::size_t kept;
    std::size_t absorbed;
    double similarity;
};

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw InputError("dimension mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// exp(-lambda_h * ||h_a - h_b||)
inline double feature_kernel(std::span<const double> h_a, std::span<const double> h_b, double lambda_h) {
    return std::exp(-lambda_h * euclidean(h_a, h_b));
}

/// exp(-lambda_g * ||g_a - g_b||)
inline double geometric_kernel(const Point& g_a, const Point& g_b, double lambda_g) {
    return std::exp(-lambda_g * distance(g_a, g_b));
}

inline double joint_kernel(const PatchRecord& a, const PatchRecord& b, const KernelParams& p) {
    return feature_kernel(a.features, b.features, p.lambda_h) * geometric_kernel(a.coords, b.coords, p.lambda_g);
}

/// Dense symmetric similarity matrix, row-major.
class SimilarityMatrix {
public:
    explicit SimilarityMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

    std::size_t size() const noexcept { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }

private:
    std::size_t n_;
    std::vector<double> data_;
};

/// All pairwise joint-kernel values, filled in fixed tile order.
inline SimilarityMatrix pairwise_similarity(std::span<const PatchRecord> patches, const KernelParams& p) {
    constexpr std::size_t kTile = 64;
    const std::size_t n = patches.size();
    SimilarityMatrix s(n);
    for (std::size_t bi = 0; bi < n; bi += kTile) {
        for (std::size_t bj = bi; bj < n; bj += kTile) {
            for (std::size_t i = bi; i < std::min(n, bi + kTile); ++i) {
                for (std::size_t j = std::max(i + 1, bj); j < std::min(n, bj + kTile); ++j) {
                    const double k = joint_kernel(patches[i], patches[j], p);
                    s(i, j) = k;
                    s(j, i) = k;
                }
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        s(i, i) = 1.0;
    }
    return s;
}

namespace detail {

// Upper-triangle storage for inter-cluster similarity sums.
class Condensed {
public:
    explicit Condensed(std::size_t n) : n_(n), data_(n < 2 ? 0 : n * (n - 1) / 2, 0.0) {}

    double& at(std::size_t i, std::size_t j) {
        if (i > j) std::swap(i, j);
        return data_[index(i, j)];
    }

private:
    std::size_t index(std::size_t i, std::size_t j) const { return i * n_ - i * (i + 1) / 2 + (j - i - 1); }

    std::size_t n_;
    std::vector<double> data_;
};

} // namespace detail

/// Average-linkage agglomeration on the joint similarity.
///
/// Repeatedly merges the pair of clusters with the highest mean pairwise
/// similarity while that mean is >= s_min. Ties go to the lexicographically
/// smallest (min id, max id) pair, where a cluster's id is its smallest
/// member index. Output cluster ids are numbered by smallest member index.
inline ClusterAssignment agglomerate(std::span<const PatchRecord> patches, const KernelParams& p,
                                     std::vector<MergeStep>* history = nullptr) {
    p.check();
    const std::size_t n = patches.size();
    ClusterAssignment out;
    if (n == 0) {
        return out;
    }

    detail::Condensed sums(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            sums.at(i, j) = joint_kernel(patches[i], patches[j], p);
        }
    }

    std::vector<std::size_t> size(n, 1);
    std::vector<char> active(n, 1);
    std::vector<std::size_t> parent(n);
    for (std::size_t i = 0; i < n; ++i) parent[i] = i;

    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::vector<std::size_t> best(n, kNone);
    std::vector<double> best_val(n, -1.0);

    const auto linkage = [&](std::size_t i, std::size_t k) {
        return sums.at(i, k) / (static_cast<double>(size[i]) * static_cast<double>(size[k]));
    };
    // Best partner of row i among active clusters with a larger id.
    const auto refresh = [&](std::size_t i) {
        best[i] = kNone;
        best_val[i] = -1.0;
        for (std::size_t k = i + 1; k < n; ++k) {
            if (!active[k]) continue;
            const double v = linkage(i, k);
            if (v > best_val[i]) {
                best_val[i] = v;
                best[i] = k;
            }
        }
    };
    for (std::size_t i = 0; i < n; ++i) refresh(i);

    while (true) {
        std::size_t i = kNone;
        for (std::size_t r = 0; r < n; ++r) {
            if (active[r] && best[r] != kNone && (i == kNone || best_val[r] > best_val[i])) {
                i = r;
            }
        }
        if (i == kNone || best_val[i] < p.s_min) {
            break;
        }
        const std::size_t j = best[i];
        if (history) {
            history->push_back({i, j, best_val[i]});
        }

        for (std::size_t k = 0; k < n; ++k) {
            if (active[k] && k != i && k != j) {
                sums.at(i, k) += sums.at(j, k);
            }
        }
        size[i] += size[j];
        active[j] = 0;
        parent[j] = i;

        refresh(i);
        for (std::size_t k = 0; k < j; ++k) {
            if (!active[k] || k == i) continue;
            if (best[k] == i || best[k] == j) {
                refresh(k);
            } else if (k < i) {
                const double v = linkage(k, i);
                if (v > best_val[k] || (v == best_val[k] && i < best[k])) {
                    best_val[k] = v;
                    best[k] = i;
                }
            }
        }
    }

    // Resolve each patch to its root cluster, then number roots in order.
    std::vector<std::size_t> root_label(n, kNone);
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = i;
        while (parent[r] != r) r = parent[r];
        if (root_label[r] == kNone) {
            root_label[r] = out.cluster_count++;
        }
        out.labels[i] = root_label[r];
    }
    return out;
}

/// Turns a cluster assignment into graph vertices: mean coordinates and mean
/// features of each cluster's patches, in cluster-id order.
inline std::vector<ClusterNode> aggregate_clusters(std::span<const PatchRecord> patches,
                                                   const ClusterAssignment& assignment) {
    if (assignment.labels.size() != patches.size()) {
        throw InputError("assignment does not cover all patches");
    }
    const std::size_t dim = patches.empty() ? 0 : patches.front().features.size();
    std::vector<ClusterNode> nodes(assignment.cluster_count);
    for (auto& node : nodes) {
        node.features.assign(dim, 0.0);
    }
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const std::size_t c = assignment.labels[i];
        if (c >= nodes.size()) {
            throw InputError("cluster id out of range");
        }
        if (patches[i].features.size() != dim) {
            throw InputError("patch " + std::to_string(i) + " has inconsistent feature length");
        }
        ClusterNode& node = nodes[c];
        node.centroid.x += patches[i].coords.x;
        node.centroid.y += patches[i].coords.y;
        for (std::size_t f = 0; f < dim; ++f) {
            node.features[f] += patches[i].features[f];
        }
        node.member_indices.push_back(i);
    }
    for (auto& node : nodes) {
        node.member_count = node.member_indices.size();
        if (node.member_count == 0) {
            throw InputError("empty cluster in assignment");
        }
        const double inv = 1.0 / static_cast<double>(node.member_count);
        node.centroid.x *= inv;
        node.centroid.y *= inv;
        for (double& v : node.features) v *= inv;
    }
    return nodes;
}

/// Median Euclidean feature distance over randomly sampled patch pairs,
/// drawn across all slides.
inline double median_feature_distance(const std::vector<SlidePatches>& slides, std::size_t sample_pairs,
                                      std::uint64_t seed) {
    std::vector<const PatchRecord*> all;
    for (const auto& s : slides) {
        for (const auto& p : s.patches) all.push_back(&p);
    }
    if (all.size() < 2) {
        return 0.0;
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
    std::vector<double> d;
    d.reserve(sample_pairs);
    while (d.size() < sample_pairs) {
        const std::size_t a = pick(rng);
        const std::size_t b = pick(rng);
        if (a == b) continue;
        d.push_back(euclidean(all[a]->features, all[b]->features));
    }
    const auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
    std::nth_element(d.begin(), mid, d.end());
    return *mid;
}

/// lambda_h = 1 / median pair distance; falls back to 1 when the sampled
/// features are all identical.
inline double median_heuristic_lambda_h(const std::vector<SlidePatches>& slides, std::uint64_t seed,
                                        std::size_t sample_pairs = 1000) {
    const double med = median_feature_distance(slides, sample_pairs, seed);
    return med > 0.0 ? 1.0 / med : 1.0;
}

/// Per-channel z-scoring across every patch of the dataset, in place.
inline void standardize_features(std::vector<SlidePatches>& slides) {
    std::size_t dim = 0;
    std::size_t count = 0;
    std::vector<double> mean;
    std::vector<double> sq;
    for (const auto& s : slides) {
        for (const auto& p : s.patches) {
            if (mean.empty()) {
                dim = p.features.size();
                mean.assign(dim, 0.0);
                sq.assign(dim, 0.0);
            }
            for (std::size_t f = 0; f < dim; ++f) mean[f] += p.features[f];
            ++count;
        }
    }
    if (count == 0) return;
    for (double& m : mean) m /= static_cast<double>(count);
    for (const auto& s : slides) {
        for (const auto& p : s.patches) {
            for (std::size_t f = 0; f < dim; ++f) {
                const double d = p.features[f] - mean[f];
                sq[f] += d * d;
            }
        }
    }
    for (auto& s : slides) {
        for (auto& p : s.patches) {
            for (std::size_t f = 0; f < dim; ++f) {
                const double sd = std::sqrt(sq[f] / static_cast<double>(count));
                p.features[f] = sd > 0.0 ? (p.features[f] - mean[f]) / sd : 0.0;
            }
        }
    }
}

} // namespace slidegraph
