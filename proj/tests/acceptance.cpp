// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails.

#include "slidegraph/baselines.hpp"
#include "slidegraph/config.hpp"
#include "slidegraph/metrics.hpp"
#include "slidegraph/model_io.hpp"
#include "slidegraph/pipeline.hpp"
#include "slidegraph/synth.hpp"
#include "slidegraph/training.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace slidegraph;
using namespace slidegraph::oracles;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Result {
    bool pass = false;
    std::string detail;
};

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

// Largest relative residual over every forward pass the acceptance run makes.
double g_identity_error = 0.0;
std::size_t g_forward_passes = 0;

PredictionBundle checked_forward(const SlideGraph& g, const ModelParams& p, Mode mode) {
    auto b = forward(g, p, mode);
    g_identity_error = std::max(g_identity_error, sum_identity_error(b));
    ++g_forward_passes;
    return b;
}

// ---------------------------------------------------------------- 1

Result clustering_oracle() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    std::size_t same = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t n = 1 + rng() % 12;
        const double s_min = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        const double lambda_h = std::uniform_real_distribution<double>(0.2, 2.0)(rng);
        const KernelParams p{lambda_h, 1.0 / 4000.0, s_min};
        const auto pts = fixtures::random_patches(rng, n, 4, 3000.0, 0.6);
        same += partition_of(agglomerate(pts, p)) == oracle_agglomerate(pts, p.lambda_h, p.lambda_g, s_min);
    }
    const double t = seconds_since(t0);
    return {same == 200 && t < 10.0, fmt("%zu/200 partitions identical to the brute-force oracle, %.2f s", same, t)};
}

// ---------------------------------------------------------------- 2

Result delaunay_correctness() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2002);
    std::size_t ok = 0;
    std::string first;
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 3 + rng() % 48;
        const auto problem = delaunay_problem(fixtures::random_points(rng, n));
        if (problem.empty()) {
            ++ok;
        } else if (first.empty()) {
            first = " (first problem: " + problem + ")";
        }
    }
    const double t = seconds_since(t0);
    return {ok == 100 && t < 30.0,
            fmt("%zu/100 point sets pass empty-circumcircle, planarity and edge-count checks, %.2f s", ok, t) + first};
}

// ---------------------------------------------------------------- 3

Result gradient_fidelity() {
    const auto t0 = Clock::now();
    ModelSpec full;
    full.input_dim = 4;
    full.seed = 3003;
    auto p = init_params(full);
    randomize_buffers(p, 3004);
    const auto g = seeded_graph(3005, 10, 4);
    std::mt19937_64 rng(3006);
    std::normal_distribution<double> nd(0.0, 1.0);
    Matrix w(10, static_cast<Eigen::Index>(full.layer_dims.size() + 1));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
    std::vector<std::size_t> sample(parameter_count(p));
    std::iota(sample.begin(), sample.end(), std::size_t{0});
    std::shuffle(sample.begin(), sample.end(), rng);
    sample.resize(100);
    const auto big = finite_difference_check(g, p, w, sample, 1e-5);

    ModelSpec tiny;
    tiny.input_dim = 2;
    tiny.base_dims = {3};
    tiny.layer_dims = {3};
    tiny.seed = 3007;
    auto q = init_params(tiny);
    randomize_buffers(q, 3008);
    const auto gt = seeded_graph(3009, 8, 2);
    Matrix wt(8, 2);
    for (Eigen::Index i = 0; i < wt.size(); ++i) wt.data()[i] = nd(rng);
    std::vector<std::size_t> all(parameter_count(q));
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto small = finite_difference_check(gt, q, wt, all, 1e-5);
    const double t = seconds_since(t0);
    return {big.max_rel < 1e-4 && small.max_rel < 1e-6 && t < 20.0,
            fmt("default model max rel err %.2e over %zu params, tiny model %.2e over %zu params, %.2f s", big.max_rel,
                big.checked, small.max_rel, small.checked, t)};
}

// ---------------------------------------------------------------- 4

Result architecture_identities_random() {
    std::mt19937_64 rng(4004);
    double perm_err = 0.0;
    for (int rep = 0; rep < 60; ++rep) {
        ModelSpec spec;
        spec.input_dim = 1 + rng() % 6;
        spec.seed = rng();
        if (rep % 3 == 1) spec.layer_dims = {5, 3};
        if (rep % 5 == 2) spec.use_batch_norm = false;
        auto p = init_params(spec);
        randomize_buffers(p, rng());
        const std::size_t n = 1 + rng() % 40;
        const auto g = seeded_graph(rng(), n, spec.input_dim);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        SlideGraph h = g;
        for (std::size_t k = 0; k < n; ++k) h.nodes[perm[k]] = g.nodes[k];
        h.edges.clear();
        for (const auto& [a, b] : g.edges) h.edges.push_back(make_edge(perm[a], perm[b]));
        std::sort(h.edges.begin(), h.edges.end());
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            if (mode == Mode::Train && n < 2) continue;
            const double a = checked_forward(g, p, mode).total;
            const double b = checked_forward(h, p, mode).total;
            perm_err = std::max(perm_err, std::abs(a - b) / std::max(1.0, std::abs(a)));
        }
    }
    return {perm_err <= 1e-9, fmt("permutation error %.1e", perm_err)};
}

// ---------------------------------------------------------------- 5

Result loss_semantics() {
    bool ok = true;
    std::string why;
    const auto expect = [&](bool c, const std::string& what) {
        if (!c && ok) why = " (" + what + ")";
        ok = ok && c;
    };
    const std::vector<double> p1{2.0}, n1{0.5}, p2{0.0}, n2{0.0}, p3{1.0, 0.2}, n3{0.5, -0.3};
    expect(ranking_loss(p1, n1) == 0.0, "satisfied margin");
    expect(ranking_loss(p2, n2) == 1.0, "zero margin");
    expect(ranking_loss(p3, n3) == 2.3, "four-pair example");

    std::mt19937_64 rng(5005);
    std::uniform_int_distribution<std::size_t> len(1, 8);
    std::uniform_int_distribution<int> quarter(-12, 12);
    std::bernoulli_distribution separate(0.4);
    std::size_t zero_cases = 0;
    for (int t = 0; t < 1000; ++t) {
        // Quarter-grid scores make margins of exactly 1 common.
        std::vector<double> pos(len(rng)), neg(len(rng));
        const double shift = separate(rng) ? 4.0 : 0.0;
        for (double& v : pos) v = quarter(rng) / 4.0 + shift;
        for (double& v : neg) v = quarter(rng) / 4.0;
        bool all_margins = true;
        for (double a : pos) {
            for (double b : neg) all_margins = all_margins && a - b >= 1.0;
        }
        const double loss = ranking_loss(pos, neg);
        zero_cases += loss == 0.0;
        expect(loss >= 0.0 && (loss == 0.0) == all_margins, "zero iff all margins >= 1");
        const auto g = ranking_loss_grad(pos, neg);
        const double sum = std::accumulate(g.pos.begin(), g.pos.end(), 0.0) + std::accumulate(g.neg.begin(), g.neg.end(), 0.0);
        expect(sum == 0.0, "gradient sums to zero");
    }
    return {ok, fmt("examples exact; 1000 random score sets (%zu with zero loss)", zero_cases) + why};
}

// ---------------------------------------------------------------- 6

Result metric_oracles() {
    bool ok = true;
    std::string why;
    const auto expect = [&](bool c, const std::string& what) {
        if (!c && ok) why = " (" + what + ")";
        ok = ok && c;
    };
    std::mt19937_64 rng(6006);
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 2 + rng() % 60;
        std::vector<double> s(n);
        std::vector<int> y(n);
        std::uniform_int_distribution<int> coarse(0, 9);
        std::normal_distribution<double> fine(0.0, 1.0);
        const bool ties = t % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = ties ? coarse(rng) : fine(rng);
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 1;
        y[1] = 0;
        double wins = 0.0, pairs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (y[i] != 1 || y[j] != 0) continue;
                pairs += 1.0;
                wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
        }
        const double a = auroc(s, y);
        worst = std::max(worst, std::abs(a - wins / pairs));
        std::vector<double> m(n);
        for (std::size_t i = 0; i < n; ++i) m[i] = std::exp(0.5 * s[i]) * 3.0 - 7.0;
        expect(auroc(m, y) == a, "monotone invariance");
    }
    expect(worst <= 1e-12, "Mann-Whitney agreement");

    expect(auroc(std::vector<double>{0.9, 0.4, 0.6, 0.1}, std::vector<int>{1, 0, 1, 0}) == 1.0, "auroc example");
    expect(auroc(std::vector<double>{0.9, 0.4, 0.6, 0.1}, std::vector<int>{1, 1, 0, 0}) == 0.75, "auroc example");
    expect(std::abs(aupr(std::vector<double>{0.9, 0.8, 0.7, 0.6}, std::vector<int>{1, 0, 1, 0}) - (0.5 + 0.5 * 2.0 / 3.0)) <
               1e-15,
           "aupr step example");
    expect(aupr(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0, "aupr perfect");
    expect(aupr(std::vector<double>(8, 0.3), std::vector<int>{1, 0, 0, 0, 1, 0, 0, 0}) == 0.25, "aupr all ties");
    // Hand enumeration: ranks 1..5 labels 0,1,1,0,1 -> recalls 1/3,2/3,1 at precisions 1/2,2/3,3/5.
    const double hand = (1.0 / 3) * 0.5 + (1.0 / 3) * (2.0 / 3) + (1.0 / 3) * 0.6;
    expect(std::abs(aupr(std::vector<double>{5, 4, 3, 2, 1}, std::vector<int>{0, 1, 1, 0, 1}) - hand) < 1e-15,
           "aupr hand enumeration");
    return {ok, fmt("max |auroc - Mann-Whitney| %.1e over 1000 instances; step-area and invariance checks", worst) + why};
}

// ---------------------------------------------------------------- 7-10

struct SynthRun {
    std::vector<SynthSlide> slides;
    Dataset ds;
    CvResult cv;
    double seconds = 0.0;
};

RunConfig acceptance_config(double signal) {
    RunConfig cfg;
    cfg.synth.n_slides = 200;
    cfg.synth.patches_per_slide = 300;
    cfg.synth.feature_dim = 4;
    cfg.synth.signal_strength = signal;
    cfg.synth.seed = 42;
    return cfg;
}

Dataset build_dataset(const std::vector<SynthSlide>& slides, const RunConfig& cfg, std::size_t threads) {
    const BuildResult built = build_graphs(patches_of(slides), cfg, threads);
    Dataset ds;
    ds.graphs = built.graphs;
    ds.feature_dim = cfg.synth.feature_dim;
    return ds;
}

SynthRun synth_cv(const RunConfig& cfg, std::size_t threads) {
    const auto t0 = Clock::now();
    SynthRun r;
    r.slides = generate_dataset(cfg.synth);
    r.ds = build_dataset(r.slides, cfg, threads);
    r.cv = cross_validate(r.ds, cfg.model, cfg.training, cfg.folds, threads);
    r.seconds = seconds_since(t0);
    return r;
}

Result localization(const SynthRun& run) {
    // Out-of-fold node scores: each slide is scored by the model of the fold
    // that held it out.
    std::map<std::string, std::size_t> fold_of;
    for (const auto& f : run.cv.folds) {
        for (const auto& p : f.predictions) fold_of[p.slide_id] = f.fold;
    }
    std::map<std::string, const SynthSlide*> truth;
    for (const auto& s : run.slides) truth[s.patches.slide_id] = &s;

    std::vector<PredictionBundle> bundles;
    std::size_t positives = 0, localized = 0;
    for (const auto& g : run.ds.graphs) {
        const auto& params = run.cv.models.at(fold_of.at(g.slide_id));
        bundles.push_back(checked_forward(g, params, Mode::Eval));
        if (g.label != 1) continue;
        const Vector totals = bundles.back().node_totals();
        const auto& hot = truth.at(g.slide_id)->hot;
        double in = 0.0, out = 0.0;
        std::size_t n_in = 0, n_out = 0;
        for (std::size_t k = 0; k < g.nodes.size(); ++k) {
            std::size_t h = 0;
            for (auto m : g.nodes[k].member_indices) h += static_cast<std::size_t>(hot.at(m));
            const double v = totals[static_cast<Eigen::Index>(k)];
            if (2 * h > g.nodes[k].member_indices.size()) {
                in += v;
                ++n_in;
            } else {
                out += v;
                ++n_out;
            }
        }
        ++positives;
        localized += n_in && n_out && in / static_cast<double>(n_in) > out / static_cast<double>(n_out);
    }
    std::vector<std::size_t> features(run.ds.feature_dim);
    std::iota(features.begin(), features.end(), std::size_t{0});
    const auto corr = node_feature_correlations(run.ds.graphs, bundles, features, 8008, 200);
    std::size_t top = 0;
    for (std::size_t f = 1; f < corr.size(); ++f) {
        if (corr[f].r > corr[top].r) top = f;
    }
    const double frac = static_cast<double>(localized) / static_cast<double>(positives);
    std::string rs;
    for (const auto& c : corr) rs += fmt("%s%.3f", rs.empty() ? "" : ", ", c.r);
    return {frac >= 0.9 && corr[top].feature == 0,
            fmt("hot-region mean above rest in %zu/%zu positives (%.1f%%); node score r per channel [", localized,
                positives, 100.0 * frac) +
                rs + fmt("], top channel %zu", corr[top].feature)};
}

std::string cv_bytes(const CvResult& r) {
    std::string out;
    for (std::size_t f = 0; f < r.folds.size(); ++f) {
        out += fold_report_to_json(r.folds[f]).dump(1) + "\n" + model_to_json(r.models[f]).dump() + "\n";
    }
    return out;
}

Result determinism(std::size_t threads) {
    RunConfig cfg = acceptance_config(6.0);
    cfg.synth.n_slides = 60;
    cfg.synth.patches_per_slide = 150;
    cfg.synth.seed = 9009;
    const auto a = synth_cv(cfg, 1);
    const auto b = synth_cv(cfg, std::max<std::size_t>(threads, 2));
    const std::string x = cv_bytes(a.cv), y = cv_bytes(b.cv);
    std::size_t graphs_same = 0;
    for (std::size_t i = 0; i < a.ds.graphs.size(); ++i) {
        graphs_same += serialize_graph(a.ds.graphs[i]) == serialize_graph(b.ds.graphs[i]);
    }
    return {x == y && graphs_same == a.ds.graphs.size(),
            fmt("two cv runs (1 and %zu workers): fold reports and models %s (%zu bytes), %zu/%zu graphs identical",
                std::max<std::size_t>(threads, 2), x == y ? "byte-identical" : "DIFFER", x.size(), graphs_same,
                a.ds.graphs.size())};
}

Result baseline_gap(const SynthRun& run, const RunConfig& cfg) {
    const auto slides = patches_of(run.slides);
    double worst = 0.0;
    std::string parts;
    for (auto mode : {PoolMode::Max, PoolMode::Average, PoolMode::Majority}) {
        const auto pooled = pool_feature(slides, cfg.baseline_channel, mode, cfg.baseline_floor);
        std::vector<double> v;
        std::vector<int> y;
        for (const auto& p : pooled) {
            v.push_back(p.value);
            y.push_back(*p.label);
        }
        const double raw = auroc(v, y);
        const double cvd = evaluate_baseline(pooled, cfg.folds, cfg.training.seed).mean_auroc;
        // Either orientation of the raw pooled value counts as the baseline.
        const double best = std::max({cvd, raw, 1.0 - raw});
        worst = std::max(worst, best);
        parts += fmt("%s%s %.3f", parts.empty() ? "" : ", ", to_string(mode).c_str(), best);
    }
    const double gap = run.cv.mean_auroc - worst;
    return {gap >= 0.05, fmt("GNN %.3f vs baselines [", run.cv.mean_auroc) + parts + fmt("], gap %.3f", gap)};
}

} // namespace

int main() {
    const std::size_t threads = worker_count();
    std::vector<std::pair<std::string, Result>> results(10);
    const auto record = [&](std::size_t i, const std::string& name, Result r) {
        results[i - 1] = {name, std::move(r)};
        std::cerr << (results[i - 1].second.pass ? "  ok " : "  FAIL ") << i << " " << name << std::endl;
    };

    record(1, "clustering oracle equivalence", clustering_oracle());
    record(2, "Delaunay correctness", delaunay_correctness());
    record(3, "gradient fidelity", gradient_fidelity());
    Result ident = architecture_identities_random();
    record(5, "loss semantics", loss_semantics());
    record(6, "metric oracles", metric_oracles());

    progress("strong-signal synthetic run (200 slides x 300 patches), " + std::to_string(threads) + " worker(s)");
    const RunConfig strong_cfg = acceptance_config(6.0);
    const SynthRun strong = synth_cv(strong_cfg, threads);
    progress(fmt("strong AUROC %.4f, %.1f s", strong.cv.mean_auroc, strong.seconds));
    progress("null-signal synthetic run");
    const SynthRun null = synth_cv(acceptance_config(0.0), threads);
    progress(fmt("null AUROC %.4f, %.1f s", null.cv.mean_auroc, null.seconds));
    const double total = strong.seconds + null.seconds;
    record(7, "end-to-end synthetic learning",
           {strong.cv.mean_auroc >= 0.95 && null.cv.mean_auroc >= 0.35 && null.cv.mean_auroc <= 0.65 && total < 600.0,
            fmt("strong-signal cv AUROC %s, null-signal cv AUROC %s, %.0f s total",
                format_mean_std(strong.cv.mean_auroc, strong.cv.std_auroc, 4).c_str(),
                format_mean_std(null.cv.mean_auroc, null.cv.std_auroc, 4).c_str(), total)});
    record(8, "node-level localization", localization(strong));
    progress("determinism reruns");
    record(9, "determinism", determinism(threads));
    record(10, "baseline ordering", baseline_gap(strong, strong_cfg));

    ident.pass = ident.pass && g_identity_error <= 1e-9;
    ident.detail = fmt("max identity residual %.1e over %zu forward passes; ", g_identity_error, g_forward_passes) +
                   ident.detail;
    record(4, "architecture identities", ident);

    bool all = true;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& [name, r] = results[i];
        std::printf("%s criterion %zu: %s: %s\n", r.pass ? "PASS" : "FAIL", i + 1, name.c_str(), r.detail.c_str());
        all = all && r.pass;
    }
    return all ? 0 : 1;
}
