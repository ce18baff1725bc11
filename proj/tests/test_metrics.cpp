#include "slidegraph/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace slidegraph;

namespace {

// Pair-counting oracle: P(pos > neg) + 0.5 P(pos == neg).
double mann_whitney(const std::vector<double>& s, const std::vector<int>& y) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (y[i] != 1) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j] != 0) continue;
            pairs += 1.0;
            wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return wins / pairs;
}

// Trapezoid area over the float ROC points.
double trapezoid(const std::vector<RocPoint>& pts) {
    double a = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        a += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2.0;
    }
    return a;
}

struct Instance {
    std::vector<double> scores;
    std::vector<int> labels;
};

Instance random_instance(std::mt19937_64& rng, bool coarse) {
    std::uniform_int_distribution<std::size_t> size(2, 60);
    const std::size_t n = size(rng);
    Instance in;
    std::uniform_int_distribution<int> coin(0, 1);
    std::uniform_int_distribution<int> level(0, 5);
    std::normal_distribution<double> score(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        in.labels.push_back(coin(rng));
        in.scores.push_back(coarse ? level(rng) * 0.25 : score(rng));
    }
    in.labels[0] = 1;
    in.labels[1] = 0;
    return in;
}

} // namespace

TEST(Auroc, Examples) {
    const std::vector<double> s{0.9, 0.4, 0.6, 0.1};
    EXPECT_DOUBLE_EQ(auroc(s, std::vector<int>{1, 0, 1, 0}), 1.0);
    EXPECT_DOUBLE_EQ(auroc(s, std::vector<int>{1, 1, 0, 0}), 0.75);
    EXPECT_DOUBLE_EQ(auroc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{1, 0, 0}), 0.5);
    EXPECT_DOUBLE_EQ(auroc(std::vector<double>{3, 2, 1}, std::vector<int>{1, 1, 0}), 1.0);
}

TEST(Auroc, OneClassIsAnError) {
    EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), InputError);
    EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), InputError);
    EXPECT_THROW(auroc(std::vector<double>{1}, std::vector<int>{0, 1}), InputError);
    EXPECT_THROW(auroc(std::vector<double>{1, 2}, std::vector<int>{0, 2}), InputError);
}

TEST(Auroc, MatchesPairCountingAndTrapezoid) {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 1000; ++t) {
        const auto in = random_instance(rng, t % 2 == 0);
        const double a = auroc(in.scores, in.labels);
        EXPECT_NEAR(a, mann_whitney(in.scores, in.labels), 1e-12);
        EXPECT_NEAR(a, trapezoid(roc_curve(in.scores, in.labels)), 1e-12);
        EXPECT_GE(a, 0.0);
        EXPECT_LE(a, 1.0);
    }
}

TEST(Auroc, MonotoneTransformInvariance) {
    std::mt19937_64 rng(12);
    for (int t = 0; t < 200; ++t) {
        const auto in = random_instance(rng, t % 2 == 0);
        std::vector<double> moved;
        for (double s : in.scores) moved.push_back(std::exp(3.0 * s) + 7.0);
        EXPECT_EQ(auroc(in.scores, in.labels), auroc(moved, in.labels));
    }
}

TEST(Auroc, NegatedScoresComplementWithoutTies) {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 200; ++t) {
        const auto in = random_instance(rng, false);
        std::vector<double> neg;
        for (double s : in.scores) neg.push_back(-s);
        EXPECT_NEAR(auroc(in.scores, in.labels) + auroc(neg, in.labels), 1.0, 1e-12);
    }
}

TEST(RocCurve, StartsAtOriginEndsAtOneAndGroupsTies) {
    const std::vector<double> s{0.5, 0.5, 0.2, 0.9};
    const std::vector<int> y{1, 0, 0, 1};
    const auto pts = roc_curve(s, y);
    ASSERT_EQ(pts.size(), 4u);  // origin + three distinct thresholds
    EXPECT_EQ(pts.front().fpr, 0.0);
    EXPECT_EQ(pts.front().tpr, 0.0);
    EXPECT_EQ(pts.back().fpr, 1.0);
    EXPECT_EQ(pts.back().tpr, 1.0);
    EXPECT_EQ(pts[2].threshold, 0.5);
    EXPECT_DOUBLE_EQ(pts[2].fpr, 0.5);
    EXPECT_DOUBLE_EQ(pts[2].tpr, 1.0);
}

TEST(Aupr, Examples) {
    EXPECT_NEAR(aupr(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<int>{1, 0, 1, 0}), 1.0 * 0.5 + (2.0 / 3.0) * 0.5,
                1e-15);
    EXPECT_DOUBLE_EQ(aupr(std::vector<double>{4, 3, 2, 1}, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(aupr(std::vector<double>{1, 1, 1, 1}, std::vector<int>{1, 0, 0, 0}), 0.25);
    EXPECT_THROW(aupr(std::vector<double>{1, 2}, std::vector<int>{0, 0}), InputError);
}

TEST(Aupr, MatchesHandEnumeratedSteps) {
    // Descending: 1(+) 2(-) 3(+) 4(+) 5(-) -> recall steps at ranks 1, 3, 4.
    const std::vector<double> s{0.95, 0.85, 0.75, 0.65, 0.55};
    const std::vector<int> y{1, 0, 1, 1, 0};
    const double expected = (1.0 / 3.0) * 1.0 + (1.0 / 3.0) * (2.0 / 3.0) + (1.0 / 3.0) * (3.0 / 4.0);
    EXPECT_NEAR(aupr(s, y), expected, 1e-15);
}

TEST(Evaluate, ReportAndCsv) {
    const auto r = evaluate(std::vector<double>{0.9, 0.4, 0.6, 0.1}, std::vector<int>{1, 1, 0, 0});
    EXPECT_EQ(r.n_pos, 2u);
    EXPECT_EQ(r.n_neg, 2u);
    EXPECT_DOUBLE_EQ(r.auroc, 0.75);
    const auto roc = format_roc_csv(r);
    EXPECT_EQ(roc.substr(0, roc.find('\n')), "threshold,fpr,tpr");
    EXPECT_EQ(std::count(roc.begin(), roc.end(), '\n'), 6);
    const auto pr = format_pr_csv(r);
    EXPECT_EQ(pr.substr(0, pr.find('\n')), "threshold,recall,precision");
}

TEST(Pearson, Examples) {
    std::vector<double> x{1, 2, 3, 4, 5}, y, z;
    for (double v : x) {
        y.push_back(2 * v + 1);
        z.push_back(-v);
    }
    EXPECT_NEAR(pearson(x, y).r, 1.0, 1e-15);
    EXPECT_EQ(pearson(x, y).p_value, 0.0);
    EXPECT_NEAR(pearson(x, z).r, -1.0, 1e-15);
    EXPECT_THROW(pearson(x, std::vector<double>{1, 1, 1, 1, 1}), InputError);
    EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InputError);
}

TEST(Pearson, SeededKnownCorrelation) {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> x, y;
    for (int i = 0; i < 1000; ++i) {
        const double a = n01(rng), b = n01(rng);
        x.push_back(a);
        y.push_back(0.6 * a + 0.8 * b);
    }
    const auto c = pearson(x, y);
    EXPECT_NEAR(c.r, 0.6, 0.05);
    EXPECT_LT(c.p_value, 1e-10);
}

TEST(Pearson, AffineInvariance) {
    std::mt19937_64 rng(22);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> x, y;
    for (int i = 0; i < 50; ++i) {
        x.push_back(n01(rng));
        y.push_back(x.back() + n01(rng));
    }
    const double r = pearson(x, y).r;
    std::vector<double> x2, y2;
    for (double v : x) x2.push_back(3.0 * v - 2.0);
    for (double v : y) y2.push_back(-0.5 * v + 9.0);
    EXPECT_NEAR(pearson(x2, y).r, r, 1e-12);
    EXPECT_NEAR(pearson(x2, y2).r, -r, 1e-12);
}

TEST(Pearson, PValueMatchesKnownValue) {
    // r = 0.5 with n = 12: t = 0.5 * sqrt(10 / 0.75) = 1.8257, two-sided p = 0.09785.
    EXPECT_NEAR(correlation_p_value(0.5, 12), 0.097847, 1e-5);
    EXPECT_NEAR(correlation_p_value(0.0, 12), 1.0, 1e-12);
}

namespace {

SlideGraph line_graph(const std::string& id, const std::vector<std::vector<double>>& feats) {
    SlideGraph g;
    g.slide_id = id;
    for (std::size_t k = 0; k < feats.size(); ++k) {
        ClusterNode n;
        n.centroid = {static_cast<double>(k), 0.0};
        n.member_count = 1;
        n.features = feats[k];
        g.nodes.push_back(n);
    }
    return g;
}

// A prediction whose node totals equal the given values (one layer).
PredictionBundle bundle_with_totals(const std::vector<double>& totals) {
    PredictionBundle b;
    b.node_scores = Matrix(static_cast<Eigen::Index>(totals.size()), 1);
    for (std::size_t k = 0; k < totals.size(); ++k) b.node_scores(static_cast<Eigen::Index>(k), 0) = totals[k];
    return b;
}

} // namespace

TEST(NodeFeatureCorrelations, ScoreEqualToFeatureAndIndependentFeature) {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<SlideGraph> graphs;
    std::vector<PredictionBundle> bundles;
    for (int s = 0; s < 50; ++s) {
        std::vector<std::vector<double>> feats;
        std::vector<double> totals;
        for (int k = 0; k < 100; ++k) {
            const double a = n01(rng), b = n01(rng);
            feats.push_back({a, b});
            totals.push_back(a);
        }
        graphs.push_back(line_graph("s" + std::to_string(s), feats));
        bundles.push_back(bundle_with_totals(totals));
    }
    const std::vector<std::size_t> which{0, 1};
    const auto table = node_feature_correlations(graphs, bundles, which, 5, 200);
    ASSERT_EQ(table.size(), 2u);
    EXPECT_NEAR(table[0].r, 1.0, 1e-12);
    EXPECT_NEAR(table[0].ci_low, 1.0, 1e-9);
    EXPECT_LT(std::abs(table[1].r), 0.1);
    EXPECT_LE(table[1].ci_low, table[1].r);
    EXPECT_GE(table[1].ci_high, table[1].r);

    const auto again = node_feature_correlations(graphs, bundles, which, 5, 200);
    EXPECT_EQ(again[1].ci_low, table[1].ci_low);
    EXPECT_EQ(again[1].mean_r, table[1].mean_r);
}

TEST(NodeFeatureCorrelations, Preconditions) {
    std::vector<SlideGraph> one{line_graph("a", {{1.0}, {2.0}, {3.0}})};
    std::vector<PredictionBundle> b{bundle_with_totals({1, 2, 3})};
    const std::vector<std::size_t> f{0};
    EXPECT_THROW(node_feature_correlations(one, b, f, 1), InputError);
    std::vector<SlideGraph> two{one[0], one[0]};
    std::vector<PredictionBundle> b2{b[0], b[0]};
    const std::vector<std::size_t> bad{3};
    EXPECT_THROW(node_feature_correlations(two, b2, bad, 1), InputError);
}
