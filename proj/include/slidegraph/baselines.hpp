#pragma once

// Slide-level pooling of one patch feature channel and a univariate linear
// scorer on the pooled value.

#include "slidegraph/error.hpp"
#include "slidegraph/graph_io.hpp"
#include "slidegraph/graph_model.hpp"
#include "slidegraph/metrics.hpp"
#include "slidegraph/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace slidegraph {

enum class PoolMode { Max, Average, Majority };

inline PoolMode parse_pool_mode(const std::string& s) {
    if (s == "max") return PoolMode::Max;
    if (s == "average") return PoolMode::Average;
    if (s == "majority") return PoolMode::Majority;
    throw InputError("unknown pooling mode '" + s + "' (expected max, average or majority)");
}

inline std::string to_string(PoolMode m) {
    switch (m) {
    case PoolMode::Max: return "max";
    case PoolMode::Average: return "average";
    case PoolMode::Majority: return "majority";
    }
    return "?";
}

inline constexpr std::size_t kMajorityBins = 10;

/// Bin of v among kMajorityBins equal bins over (floor, 1]; values above 1
/// land in the last bin.
inline std::size_t majority_bin(double v, double floor) {
    const double width = (1.0 - floor) / static_cast<double>(kMajorityBins);
    const double pos = std::ceil((v - floor) / width);
    return static_cast<std::size_t>(std::clamp(pos, 1.0, static_cast<double>(kMajorityBins))) - 1;
}

/// Value reported for a majority bin: its upper edge.
inline double majority_bin_value(std::size_t bin, double floor) {
    const double width = (1.0 - floor) / static_cast<double>(kMajorityBins);
    return floor + static_cast<double>(bin + 1) * width;
}

/// Pools one channel over the patches of a slide. Average and majority only
/// look at patches above `floor`; with none they give 0.
inline double pool_slide(const SlidePatches& slide, std::size_t channel, PoolMode mode, double floor = 0.1) {
    if (slide.patches.empty()) throw InputError("slide '" + slide.slide_id + "' has no patches");
    if (!(floor < 1.0)) throw InputError("pooling floor must be < 1");
    std::vector<double> values;
    values.reserve(slide.patches.size());
    for (const auto& p : slide.patches) {
        if (channel >= p.features.size()) {
            throw InputError("channel " + std::to_string(channel) + " out of range (feature_dim " +
                             std::to_string(p.features.size()) + ")");
        }
        values.push_back(p.features[channel]);
    }
    if (mode == PoolMode::Max) return *std::max_element(values.begin(), values.end());

    std::vector<double> above;
    for (double v : values) {
        if (v > floor) above.push_back(v);
    }
    if (above.empty()) return 0.0;
    if (mode == PoolMode::Average) {
        double sum = 0.0;
        for (double v : above) sum += v;
        return sum / static_cast<double>(above.size());
    }
    std::array<std::size_t, kMajorityBins> counts{};
    for (double v : above) ++counts[majority_bin(v, floor)];
    // First (lowest) bin wins ties.
    const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
    return majority_bin_value(static_cast<std::size_t>(best), floor);
}

struct PooledValue {
    std::string slide_id;
    double value = 0.0;
    std::optional<int> label;
};

/// Pooled value per slide, sorted by slide id.
inline std::vector<PooledValue> pool_feature(const std::vector<SlidePatches>& slides, std::size_t channel,
                                             PoolMode mode, double floor = 0.1) {
    std::vector<PooledValue> out;
    for (const auto& s : slides) out.push_back({s.slide_id, pool_slide(s, channel, mode, floor), s.label});
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.slide_id < b.slide_id; });
    return out;
}

inline std::string format_pooled_csv(const std::vector<PooledValue>& pooled) {
    std::string out = "slide_id,pooled_value,label\n";
    for (const auto& p : pooled) {
        out += p.slide_id + "," + format_double(p.value) + "," + (p.label ? std::to_string(*p.label) : "") + "\n";
    }
    return out;
}

/// Least-squares line label ~ intercept + slope * x.
struct LinearScorer {
    double intercept = 0.0;
    double slope = 0.0;

    double operator()(double x) const { return intercept + slope * x; }
};

inline LinearScorer fit_univariate(std::span<const double> x, std::span<const int> labels) {
    if (x.size() != labels.size()) throw InputError("values and labels differ in length");
    std::size_t pos = 0, neg = 0;
    detail::count_classes(labels, pos, neg);
    if (pos == 0 || neg == 0) throw InputError("univariate fit needs both classes");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += labels[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (labels[i] - my);
    }
    if (!(sxx > 0.0)) throw InputError("univariate fit: pooled values have zero variance");
    LinearScorer s;
    s.slope = sxy / sxx;
    s.intercept = my - s.slope * mx;
    return s;
}

struct BaselineReport {
    std::vector<EvalReport> folds;
    double mean_auroc = 0.0, std_auroc = 0.0;
    double mean_aupr = 0.0, std_aupr = 0.0;
};

/// Cross-validated evaluation of the linear scorer: fit on k-1 folds, score
/// the held-out fold. Uses the same stratified fold assignment as
/// cross_validate for the same slides and seed.
inline BaselineReport evaluate_baseline(const std::vector<PooledValue>& pooled, std::size_t k, std::uint64_t seed) {
    Dataset ids;
    for (const auto& p : pooled) {
        if (!p.label) throw InputError("slide '" + p.slide_id + "' has no label");
        SlideGraph g;
        g.slide_id = p.slide_id;
        g.label = p.label;
        ids.graphs.push_back(std::move(g));
    }
    const FoldSplit split = stratified_folds(ids, k, seed);
    BaselineReport rep;
    std::vector<double> au, ap;
    for (std::size_t fold = 0; fold < k; ++fold) {
        std::vector<double> tx, sx;
        std::vector<int> ty, sy;
        for (const auto& p : pooled) {
            const bool test = split.assignments.at(p.slide_id) == fold;
            (test ? sx : tx).push_back(p.value);
            (test ? sy : ty).push_back(*p.label);
        }
        const LinearScorer scorer = fit_univariate(tx, ty);
        std::vector<double> scores;
        for (double v : sx) scores.push_back(scorer(v));
        rep.folds.push_back(evaluate(scores, sy));
        au.push_back(rep.folds.back().auroc);
        ap.push_back(rep.folds.back().aupr);
    }
    std::tie(rep.mean_auroc, rep.std_auroc) = mean_std(au);
    std::tie(rep.mean_aupr, rep.std_aupr) = mean_std(ap);
    return rep;
}

} // namespace slidegraph
