#pragma once

#include "slidegraph/error.hpp"
#include "slidegraph/gnn.hpp"
#include "slidegraph/graph_io.hpp"
#include "slidegraph/graph_model.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace slidegraph {

struct RocPoint {
    double fpr, tpr, threshold;
};

struct PrPoint {
    double recall, precision, threshold;
};

struct EvalReport {
    std::vector<RocPoint> roc_points;
    std::vector<PrPoint> pr_points;
    double auroc = 0.0;
    double aupr = 0.0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
};

namespace detail {

// True/false positive counts at each distinct score, highest first.
struct ThresholdStep {
    double threshold;
    std::uint64_t tp, fp;
};

inline std::vector<ThresholdStep> threshold_steps(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw InputError("scores and labels differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (double s : scores) {
        if (std::isnan(s)) throw InputError("score is NaN");
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::vector<ThresholdStep> steps;
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const int y = labels[order[i]];
        if (y != 0 && y != 1) throw InputError("labels must be 0 or 1");
        (y == 1 ? tp : fp) += 1;
        if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]]) {
            steps.push_back({scores[order[i]], tp, fp});
        }
    }
    return steps;
}

inline void count_classes(std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
    pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    neg = labels.size() - pos;
}

} // namespace detail

/// ROC curve with tied scores grouped into one step; starts at (0, 0).
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0, neg = 0;
    detail::count_classes(labels, pos, neg);
    if (pos == 0 || neg == 0) {
        throw InputError("ROC needs both classes");
    }
    std::vector<RocPoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
    for (const auto& s : detail::threshold_steps(scores, labels)) {
        out.push_back({static_cast<double>(s.fp) / static_cast<double>(neg),
                       static_cast<double>(s.tp) / static_cast<double>(pos), s.threshold});
    }
    return out;
}

/// Area under the ROC curve by the trapezoid rule over grouped thresholds,
/// accumulated in integer counts so it equals the Mann-Whitney statistic
/// (ties count one half).
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0, neg = 0;
    detail::count_classes(labels, pos, neg);
    if (pos == 0 || neg == 0) {
        throw InputError("AUROC needs both classes");
    }
    std::uint64_t twice_area = 0;
    std::uint64_t prev_tp = 0, prev_fp = 0;
    for (const auto& s : detail::threshold_steps(scores, labels)) {
        twice_area += (s.fp - prev_fp) * (s.tp + prev_tp);
        prev_tp = s.tp;
        prev_fp = s.fp;
    }
    return static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

/// Precision-recall points, one per distinct threshold.
inline std::vector<PrPoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
    std::size_t pos = 0, neg = 0;
    detail::count_classes(labels, pos, neg);
    if (pos == 0) {
        throw InputError("precision-recall needs at least one positive");
    }
    std::vector<PrPoint> out;
    for (const auto& s : detail::threshold_steps(scores, labels)) {
        out.push_back({static_cast<double>(s.tp) / static_cast<double>(pos),
                       static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp), s.threshold});
    }
    return out;
}

/// Non-interpolated area under the PR curve: sum of (R_i - R_{i-1}) * P_i.
inline double aupr(std::span<const double> scores, std::span<const int> labels) {
    double area = 0.0;
    double prev_recall = 0.0;
    for (const auto& p : pr_curve(scores, labels)) {
        area += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    return area;
}

inline EvalReport evaluate(std::span<const double> scores, std::span<const int> labels) {
    EvalReport r;
    detail::count_classes(labels, r.n_pos, r.n_neg);
    r.roc_points = roc_curve(scores, labels);
    r.pr_points = pr_curve(scores, labels);
    r.auroc = auroc(scores, labels);
    r.aupr = aupr(scores, labels);
    return r;
}

inline std::string format_roc_csv(const EvalReport& r) {
    std::string out = "threshold,fpr,tpr\n";
    for (const auto& p : r.roc_points) {
        out += format_double(p.threshold) + "," + format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
    }
    return out;
}

inline std::string format_pr_csv(const EvalReport& r) {
    std::string out = "threshold,recall,precision\n";
    for (const auto& p : r.pr_points) {
        out += format_double(p.threshold) + "," + format_double(p.recall) + "," + format_double(p.precision) + "\n";
    }
    return out;
}

inline json report_to_json(const EvalReport& r) {
    return json{{"auroc", r.auroc}, {"aupr", r.aupr}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}};
}

/// Slide scores file: `slide_id,score`.
inline std::vector<std::pair<std::string, double>> parse_scores_csv(std::string_view text) {
    std::vector<std::pair<std::string, double>> out;
    std::size_t line_no = 0, offset = 0;
    bool have_header = false;
    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(offset, end - offset);
        const std::size_t line_offset = offset;
        ++line_no;
        offset = end + 1;
        if (line.empty() || line == "\r") continue;
        const auto fields = detail::split_csv_line(line);
        if (!have_header) {
            if (fields.size() != 2 || fields[0] != "slide_id" || fields[1] != "score") {
                throw ParseError("scores CSV header must be slide_id,score", line_no, line_offset);
            }
            have_header = true;
            continue;
        }
        if (fields.size() != 2) throw ParseError("expected slide_id,score", line_no, line_offset);
        out.emplace_back(std::string(fields[0]), detail::parse_real(fields[1], line_no, line_offset));
    }
    return out;
}

inline std::string format_scores_csv(const std::vector<std::pair<std::string, double>>& scores) {
    std::string out = "slide_id,score\n";
    for (const auto& [id, s] : scores) out += id + "," + format_double(s) + "\n";
    return out;
}

struct Correlation {
    double r = 0.0;
    double p_value = 1.0;
};

/// Two-sided p-value of a sample correlation under the t distribution with
/// n - 2 degrees of freedom.
inline double correlation_p_value(double r, std::size_t n) {
    if (n < 3) return 1.0;
    if (std::abs(r) >= 1.0) return 0.0;
    const double df = static_cast<double>(n - 2);
    const double t = std::abs(r) * std::sqrt(df / (1.0 - r * r));
    const boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

/// Sample Pearson correlation coefficient with its two-sided p-value.
inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw InputError("pearson: length mismatch");
    if (x.size() < 3) throw InputError("pearson: need at least 3 samples");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) throw InputError("pearson: zero variance");
    Correlation c;
    c.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    c.p_value = correlation_p_value(c.r, x.size());
    return c;
}

struct FeatureCorrelation {
    std::size_t feature = 0;
    double r = 0.0;  ///< pooled over all nodes of the selected slides
    double p_value = 1.0;
    double mean_r = 0.0;  ///< bootstrap mean
    double ci_low = 0.0;
    double ci_high = 0.0;
};

/// Correlation between node total scores and each requested node feature,
/// pooled over slides. The 95% interval comes from a slide-level bootstrap.
inline std::vector<FeatureCorrelation> node_feature_correlations(std::span<const SlideGraph> graphs,
                                                                 std::span<const PredictionBundle> bundles,
                                                                 std::span<const std::size_t> features,
                                                                 std::uint64_t seed, std::size_t resamples = 1000) {
    if (graphs.size() != bundles.size()) throw InputError("one prediction per graph is required");
    if (graphs.size() < 2) throw InputError("node_feature_correlations needs at least 2 slides");

    // Per-slide sums: n, sx, sy, sxx, syy, sxy for each feature.
    struct Sums {
        double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        void add(const Sums& o) {
            n += o.n; sx += o.sx; sy += o.sy; sxx += o.sxx; syy += o.syy; sxy += o.sxy;
        }
        double r() const {
            const double vx = sxx - sx * sx / n;
            const double vy = syy - sy * sy / n;
            if (!(vx > 0.0) || !(vy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
            return (sxy - sx * sy / n) / std::sqrt(vx * vy);
        }
    };

    std::vector<FeatureCorrelation> out;
    std::mt19937_64 rng(seed);
    for (const std::size_t f : features) {
        std::vector<double> xs, ys;
        std::vector<Sums> per_slide(graphs.size());
        for (std::size_t s = 0; s < graphs.size(); ++s) {
            const Vector totals = bundles[s].node_totals();
            if (static_cast<std::size_t>(totals.size()) != graphs[s].nodes.size()) {
                throw InputError("prediction does not match graph '" + graphs[s].slide_id + "'");
            }
            for (std::size_t k = 0; k < graphs[s].nodes.size(); ++k) {
                if (f >= graphs[s].nodes[k].features.size()) throw InputError("feature index out of range");
                const double x = graphs[s].nodes[k].features[f];
                const double y = totals[static_cast<Eigen::Index>(k)];
                xs.push_back(x);
                ys.push_back(y);
                auto& acc = per_slide[s];
                acc.n += 1; acc.sx += x; acc.sy += y; acc.sxx += x * x; acc.syy += y * y; acc.sxy += x * y;
            }
        }
        FeatureCorrelation fc;
        fc.feature = f;
        const auto c = pearson(xs, ys);
        fc.r = c.r;
        fc.p_value = c.p_value;

        std::uniform_int_distribution<std::size_t> pick(0, graphs.size() - 1);
        std::vector<double> boot;
        boot.reserve(resamples);
        for (std::size_t b = 0; b < resamples; ++b) {
            Sums total;
            for (std::size_t s = 0; s < graphs.size(); ++s) total.add(per_slide[pick(rng)]);
            const double r = total.r();
            if (std::isfinite(r)) boot.push_back(r);
        }
        if (!boot.empty()) {
            std::sort(boot.begin(), boot.end());
            fc.mean_r = std::accumulate(boot.begin(), boot.end(), 0.0) / static_cast<double>(boot.size());
            const auto at = [&](double q) {
                const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(boot.size() - 1)));
                return boot[idx];
            };
            fc.ci_low = at(0.025);
            fc.ci_high = at(0.975);
        } else {
            fc.mean_r = fc.ci_low = fc.ci_high = fc.r;
        }
        out.push_back(fc);
    }
    return out;
}

} // namespace slidegraph
