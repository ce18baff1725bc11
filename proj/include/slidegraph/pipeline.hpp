#pragma once

// Dataset-level orchestration shared by the command-line tool and the
// acceptance runs: parallel graph construction and batch prediction.

#include "slidegraph/clustering.hpp"
#include "slidegraph/config.hpp"
#include "slidegraph/error.hpp"
#include "slidegraph/geometry.hpp"
#include "slidegraph/gnn.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace slidegraph {

/// Worker count: SLIDEGRAPH_THREADS when set to a positive integer,
/// otherwise the hardware concurrency.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("SLIDEGRAPH_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first exception
/// (by index) is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

struct BuildSummaryRow {
    std::string slide_id;
    std::size_t n_patches = 0, n_nodes = 0, n_edges = 0;
    std::string status;  ///< "ok" or "skipped: ..."
};

struct BuildResult {
    std::vector<SlideGraph> graphs;  ///< sorted by slide id, empty slides left out
    std::vector<BuildSummaryRow> summary;  ///< one row per input slide, sorted by slide id
    double lambda_h = 1.0;  ///< the value actually used
};

/// Clusters and triangulates every slide. Slides without patches are
/// skipped and reported in the summary. Every graph is validated.
inline BuildResult build_graphs(std::vector<SlidePatches> slides, const RunConfig& cfg, std::size_t threads = 1) {
    std::sort(slides.begin(), slides.end(), [](const auto& a, const auto& b) { return a.slide_id < b.slide_id; });
    for (std::size_t i = 1; i < slides.size(); ++i) {
        if (slides[i].slide_id == slides[i - 1].slide_id) {
            throw InputError("duplicate slide id '" + slides[i].slide_id + "'");
        }
    }
    std::size_t dim = 0;
    bool have_dim = false;
    for (const auto& s : slides) {
        for (const auto& p : s.patches) {
            if (!have_dim) {
                dim = p.features.size();
                have_dim = true;
            } else if (p.features.size() != dim) {
                throw InputError("slide '" + s.slide_id + "' has feature_dim " + std::to_string(p.features.size()) +
                                 ", expected " + std::to_string(dim));
            }
        }
    }
    if (cfg.standardize) standardize_features(slides);

    BuildResult out;
    out.lambda_h = cfg.lambda_h ? *cfg.lambda_h : median_heuristic_lambda_h(slides, cfg.kernel_seed, cfg.median_pairs);
    const KernelParams kp = cfg.kernel(out.lambda_h);
    kp.check();

    std::vector<std::optional<SlideGraph>> built(slides.size());
    parallel_for(slides.size(), threads, [&](std::size_t i) {
        if (slides[i].patches.empty()) return;
        SlideGraph g = build_slide_graph(slides[i], kp, cfg.d_max);
        g.mpp = cfg.mpp;
        const auto problems = validate_graph(g, cfg.d_max);
        if (!problems.empty()) {
            throw InputError("graph for slide '" + g.slide_id + "' failed validation: " + problems.front());
        }
        built[i] = std::move(g);
    });
    for (std::size_t i = 0; i < slides.size(); ++i) {
        BuildSummaryRow row;
        row.slide_id = slides[i].slide_id;
        row.n_patches = slides[i].patches.size();
        if (built[i]) {
            row.n_nodes = built[i]->nodes.size();
            row.n_edges = built[i]->edges.size();
            row.status = "ok";
            out.graphs.push_back(std::move(*built[i]));
        } else {
            row.status = "skipped: no patches";
        }
        out.summary.push_back(row);
    }
    return out;
}

inline std::string format_build_summary(const std::vector<BuildSummaryRow>& rows) {
    std::string out = "slide_id,n_patches,n_nodes,n_edges,status\n";
    for (const auto& r : rows) {
        out += r.slide_id + "," + std::to_string(r.n_patches) + "," + std::to_string(r.n_nodes) + "," +
               std::to_string(r.n_edges) + "," + r.status + "\n";
    }
    return out;
}

/// Eval-mode predictions for every graph, in input order.
inline std::vector<PredictionBundle> predict_all(std::span<const SlideGraph> graphs, const ModelParams& params,
                                                 std::size_t threads = 1) {
    std::vector<PredictionBundle> out(graphs.size());
    parallel_for(graphs.size(), threads, [&](std::size_t i) { out[i] = forward(graphs[i], params, Mode::Eval); });
    return out;
}

/// Heatmap rows: node_id,x,y,score_total,score_l0,...,score_lL.
inline std::string format_heatmap_csv(const SlideGraph& g, const PredictionBundle& b) {
    const auto layers = b.node_scores.cols();
    std::string out = "node_id,x,y,score_total";
    for (Eigen::Index l = 0; l < layers; ++l) out += ",score_l" + std::to_string(l);
    out += "\n";
    const Vector totals = b.node_totals();
    for (std::size_t k = 0; k < g.nodes.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        out += std::to_string(k) + "," + format_double(g.nodes[k].centroid.x) + "," +
               format_double(g.nodes[k].centroid.y) + "," + format_double(totals[r]);
        for (Eigen::Index l = 0; l < layers; ++l) out += "," + format_double(b.node_scores(r, l));
        out += "\n";
    }
    return out;
}

} // namespace slidegraph
