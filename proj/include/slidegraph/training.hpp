#pragma once

#include "slidegraph/error.hpp"
#include "slidegraph/gnn.hpp"
#include "slidegraph/graph_model.hpp"
#include "slidegraph/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace slidegraph {

struct TrainConfig {
    double learning_rate = 0.001;
    double weight_decay = 0.0001;
    std::size_t pos_per_batch = 8;
    std::size_t neg_per_batch = 8;
    std::size_t max_epochs = 300;
    std::size_t patience = 30;
    std::uint64_t seed = 0;
    double validation_fraction = 0.2;
    bool mean_pairs = false;  ///< divide the batch loss by |B+| |B-|
    bool stop_at_zero_loss = false;  ///< end training once a whole epoch has zero loss
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void check() const {
        if (!(learning_rate > 0.0)) throw InputError("learning_rate must be > 0");
        if (!(weight_decay >= 0.0)) throw InputError("weight_decay must be >= 0");
        if (pos_per_batch < 1 || neg_per_batch < 1) throw InputError("batch counts must be >= 1");
        if (max_epochs < 1) throw InputError("max_epochs must be >= 1");
        if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
            throw InputError("validation_fraction must be in [0, 1)");
        }
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0)) {
            throw InputError("invalid optimizer constants");
        }
    }
};

// ---------------------------------------------------------------- loss

/// Pairwise ranking hinge loss: sum over (i, j) of max(0, 1 - (p_i - n_j)).
inline double ranking_loss(std::span<const double> pos, std::span<const double> neg, bool mean_pairs = false) {
    if (pos.empty() || neg.empty()) throw InputError("ranking_loss needs positive and negative scores");
    double loss = 0.0;
    for (const double p : pos) {
        for (const double n : neg) loss += std::max(0.0, 1.0 - (p - n));
    }
    return mean_pairs ? loss / static_cast<double>(pos.size() * neg.size()) : loss;
}

struct LossGradient {
    std::vector<double> pos, neg;
};

/// Subgradient of ranking_loss. A pair is active only when its margin is
/// strictly violated.
inline LossGradient ranking_loss_grad(std::span<const double> pos, std::span<const double> neg,
                                      bool mean_pairs = false) {
    if (pos.empty() || neg.empty()) throw InputError("ranking_loss_grad needs positive and negative scores");
    LossGradient g{std::vector<double>(pos.size(), 0.0), std::vector<double>(neg.size(), 0.0)};
    const double unit = mean_pairs ? 1.0 / static_cast<double>(pos.size() * neg.size()) : 1.0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
        for (std::size_t j = 0; j < neg.size(); ++j) {
            if (1.0 - (pos[i] - neg[j]) > 0.0) {
                g.pos[i] -= unit;
                g.neg[j] += unit;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------- sampling

struct Batch {
    std::vector<std::size_t> pos, neg;  ///< indices into the sampler's slide list
};

/// Stratified batches. Each epoch visits every slide once; when one class runs
/// out before the other, it is drawn again with replacement.
class BatchSampler {
public:
    BatchSampler(std::span<const int> labels, std::size_t pos_per_batch, std::size_t neg_per_batch)
        : pos_per_(pos_per_batch), neg_per_(neg_per_batch) {
        if (pos_per_ < 1 || neg_per_ < 1) throw InputError("batch counts must be >= 1");
        for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == 1 ? pos_ : neg_).push_back(i);
        if (pos_.empty() || neg_.empty()) throw InputError("training data must contain both classes");
    }

    std::vector<Batch> epoch(std::mt19937_64& rng) const {
        std::vector<std::size_t> pos = pos_, neg = neg_;
        std::shuffle(pos.begin(), pos.end(), rng);
        std::shuffle(neg.begin(), neg.end(), rng);
        const auto ceil_div = [](std::size_t a, std::size_t b) { return (a + b - 1) / b; };
        const std::size_t batches = std::max(ceil_div(pos.size(), pos_per_), ceil_div(neg.size(), neg_per_));
        std::vector<Batch> out(batches);
        std::size_t pc = 0, nc = 0;
        const auto draw = [&](const std::vector<std::size_t>& cls, std::size_t& cursor, std::size_t per,
                              std::vector<std::size_t>& dst) {
            if (cursor < cls.size()) {
                const std::size_t take = std::min(per, cls.size() - cursor);
                dst.assign(cls.begin() + static_cast<std::ptrdiff_t>(cursor),
                           cls.begin() + static_cast<std::ptrdiff_t>(cursor + take));
                cursor += take;
                return;
            }
            std::uniform_int_distribution<std::size_t> pick(0, cls.size() - 1);
            for (std::size_t k = 0; k < per; ++k) dst.push_back(cls[pick(rng)]);
        };
        for (auto& b : out) {
            draw(pos, pc, pos_per_, b.pos);
            draw(neg, nc, neg_per_, b.neg);
        }
        return out;
    }

private:
    std::size_t pos_per_, neg_per_;
    std::vector<std::size_t> pos_, neg_;
};

// ---------------------------------------------------------------- optimizer

struct OptimizerState {
    ModelParams m, v;
    std::uint64_t step = 0;
};

inline OptimizerState init_optimizer(const ModelParams& params) {
    return OptimizerState{zeros_like(params), zeros_like(params), 0};
}

/// One bias-corrected adaptive-moment update of a single tensor. `step` is the
/// 1-based step number. Weight decay enters the gradient as an L2 term.
inline void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                        std::span<double> v, std::uint64_t step, const TrainConfig& cfg,
                        const std::string& name = "param") {
    if (param.size() != grad.size() || m.size() != param.size() || v.size() != param.size()) {
        throw InputError("optimizer shape mismatch in '" + name + "'");
    }
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        if (!std::isfinite(grad[i])) throw NumericError("non-finite gradient in '" + name + "'");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i] + cfg.weight_decay * param[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        param[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
}

namespace detail {

template <class P>
std::vector<std::pair<std::string, std::span<std::conditional_t<std::is_const_v<P>, const double, double>>>>
param_list(P& p) {
    std::vector<std::pair<std::string, std::span<std::conditional_t<std::is_const_v<P>, const double, double>>>> out;
    for_each_param(p, [&](const std::string& name, auto s) { out.emplace_back(name, s); });
    return out;
}

inline void accumulate(ModelParams& acc, const ModelParams& g) {
    auto a = param_list(acc);
    const auto b = param_list(g);
    for (std::size_t t = 0; t < a.size(); ++t) {
        for (std::size_t i = 0; i < a[t].second.size(); ++i) a[t].second[i] += b[t].second[i];
    }
}

} // namespace detail

inline void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state, const TrainConfig& cfg) {
    auto p = detail::param_list(params);
    const auto g = detail::param_list(grads);
    auto m = detail::param_list(state.m);
    auto v = detail::param_list(state.v);
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
        throw InputError("optimizer state does not match the model");
    }
    ++state.step;
    for (std::size_t t = 0; t < p.size(); ++t) {
        adam_update(p[t].second, g[t].second, m[t].second, v[t].second, state.step, cfg, p[t].first);
    }
}

// ---------------------------------------------------------------- fit

/// Disjoint union of graphs, node blocks in the given order. offsets[g] is the
/// first node of graph g; offsets has one extra trailing entry.
inline SlideGraph disjoint_union(std::span<const SlideGraph* const> graphs, std::vector<std::size_t>& offsets) {
    SlideGraph out;
    offsets.assign(1, 0);
    for (const auto* g : graphs) {
        const std::size_t base = out.nodes.size();
        out.nodes.insert(out.nodes.end(), g->nodes.begin(), g->nodes.end());
        for (const auto& [a, b] : g->edges) out.edges.emplace_back(a + base, b + base);
        offsets.push_back(out.nodes.size());
    }
    return out;
}

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    std::optional<double> val_auroc;
    double lr = 0.0;
    std::string timestamp;
};

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline json epoch_to_json(const EpochRecord& r, bool with_timestamp = true) {
    json j{{"epoch", r.epoch},
           {"train_loss", r.train_loss},
           {"val_auroc", r.val_auroc ? json(*r.val_auroc) : json(nullptr)},
           {"lr", r.lr}};
    if (with_timestamp) j["timestamp"] = r.timestamp;
    return j;
}

inline std::string format_log(std::span<const EpochRecord> log, bool with_timestamp = true) {
    std::string out;
    for (const auto& r : log) out += epoch_to_json(r, with_timestamp).dump() + "\n";
    return out;
}

struct FitResult {
    ModelParams params;  ///< best by validation AUROC
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    std::optional<double> best_val_auroc;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Per-class seeded split of `labels` into training and validation indices.
/// Each class keeps at least one training slide and, when it has two or more
/// slides and the fraction is positive, gives at least one to validation.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> validation_split(std::span<const int> labels,
                                                                                      double fraction,
                                                                                      std::mt19937_64& rng) {
    std::vector<std::size_t> train, val;
    for (const int cls : {1, 0}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) idx.push_back(i);
        }
        std::shuffle(idx.begin(), idx.end(), rng);
        std::size_t n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
        if (fraction > 0.0 && idx.size() >= 2) n_val = std::max<std::size_t>(n_val, 1);
        if (!idx.empty()) n_val = std::min(n_val, idx.size() - 1);
        val.insert(val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

inline std::vector<int> labels_of(std::span<const SlideGraph* const> graphs) {
    std::vector<int> out;
    for (const auto* g : graphs) {
        if (!g->label) throw InputError("slide '" + g->slide_id + "' has no label");
        out.push_back(*g->label);
    }
    return out;
}

inline std::vector<double> predict_totals(std::span<const SlideGraph* const> graphs, const ModelParams& params) {
    std::vector<double> out;
    out.reserve(graphs.size());
    for (const auto* g : graphs) out.push_back(forward(*g, params, Mode::Eval).total);
    return out;
}

/// Trains on `train` and selects the epoch with the best AUROC on `val`.
/// When `val` lacks a class, the epoch with the lowest training loss is kept.
inline FitResult fit(std::span<const SlideGraph* const> train, std::span<const SlideGraph* const> val,
                     ModelSpec spec, const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                     const std::function<std::string()>& clock = utc_timestamp) {
    cfg.check();
    if (train.empty()) throw InputError("no training slides");
    if (spec.input_dim == 0) spec.input_dim = train.front()->feature_dim();
    const std::vector<int> train_labels = labels_of(train);
    const std::vector<int> val_labels = labels_of(val);
    const BatchSampler sampler(train_labels, cfg.pos_per_batch, cfg.neg_per_batch);
    const bool use_val = std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
                         std::count(val_labels.begin(), val_labels.end(), 0) > 0;

    std::mt19937_64 rng(cfg.seed);
    ModelParams params = init_params(spec);
    OptimizerState opt = init_optimizer(params);
    FitResult result;
    result.params = params;
    double best_loss = std::numeric_limits<double>::infinity();

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        double loss_sum = 0.0;
        const auto batches = sampler.epoch(rng);
        for (const auto& batch : batches) {
            std::vector<const SlideGraph*> members;
            for (const auto i : batch.pos) members.push_back(train[i]);
            for (const auto i : batch.neg) members.push_back(train[i]);
            std::vector<std::size_t> offsets;
            const SlideGraph joined = disjoint_union(members, offsets);
            const ForwardPass fp = forward_pass(joined, params, Mode::Train);
            update_running_stats(params, fp);
            const Vector node_totals = fp.out.node_totals();
            std::vector<double> scores(members.size(), 0.0);
            for (std::size_t g = 0; g < members.size(); ++g) {
                for (std::size_t k = offsets[g]; k < offsets[g + 1]; ++k) scores[g] += node_totals[static_cast<Eigen::Index>(k)];
            }
            const std::span<const double> pos_scores(scores.data(), batch.pos.size());
            const std::span<const double> neg_scores(scores.data() + batch.pos.size(), batch.neg.size());
            loss_sum += ranking_loss(pos_scores, neg_scores, cfg.mean_pairs);
            const auto lg = ranking_loss_grad(pos_scores, neg_scores, cfg.mean_pairs);
            Matrix d_nodes(fp.out.node_scores.rows(), fp.out.node_scores.cols());
            for (std::size_t g = 0; g < members.size(); ++g) {
                const double d = g < batch.pos.size() ? lg.pos[g] : lg.neg[g - batch.pos.size()];
                for (std::size_t k = offsets[g]; k < offsets[g + 1]; ++k) d_nodes.row(static_cast<Eigen::Index>(k)).setConstant(d);
            }
            adam_step(params, backward(fp, params, 0.0, &d_nodes), opt, cfg);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches.size());
        rec.lr = cfg.learning_rate;
        if (use_val) rec.val_auroc = auroc(predict_totals(val, params), val_labels);
        rec.timestamp = clock ? clock() : std::string{};
        result.log.push_back(rec);
        if (on_epoch) on_epoch(rec);

        const bool improved = use_val ? (!result.best_val_auroc || *rec.val_auroc > *result.best_val_auroc)
                                      : rec.train_loss < best_loss;
        if (improved) {
            result.params = params;
            result.best_epoch = epoch;
            result.best_val_auroc = rec.val_auroc;
            best_loss = rec.train_loss;
        }
        if (cfg.stop_at_zero_loss && rec.train_loss == 0.0) break;
        if (epoch - result.best_epoch >= cfg.patience) break;
    }
    return result;
}

/// Trains on every slide of `ds`, holding out a stratified validation subset.
inline FitResult fit(const Dataset& ds, const ModelSpec& spec, const TrainConfig& cfg,
                     const EpochCallback& on_epoch = {},
                     const std::function<std::string()>& clock = utc_timestamp) {
    std::vector<const SlideGraph*> all;
    for (const auto& g : ds.graphs) all.push_back(&g);
    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
    const auto labels = labels_of(all);
    const auto [tr, va] = validation_split(labels, cfg.validation_fraction, rng);
    std::vector<const SlideGraph*> train, val;
    for (auto i : tr) train.push_back(all[i]);
    for (auto i : va) val.push_back(all[i]);
    ModelSpec s = spec;
    if (s.input_dim == 0) s.input_dim = ds.feature_dim;
    return fit(train, val, s, cfg, on_epoch, clock);
}

// ---------------------------------------------------------------- cross-validation

struct SlidePrediction {
    std::string slide_id;
    double score = 0.0;
    int label = 0;
};

struct FoldReport {
    std::size_t fold = 0;
    std::size_t n_train = 0, n_val = 0;
    std::size_t best_epoch = 0, epochs_run = 0;
    std::vector<SlidePrediction> predictions;  ///< held-out slides, sorted by id
    EvalReport eval;
};

struct CvResult {
    std::vector<FoldReport> folds;
    std::vector<ModelParams> models;
    std::vector<std::vector<EpochRecord>> logs;
    double mean_auroc = 0.0, std_auroc = 0.0;
    double mean_aupr = 0.0, std_aupr = 0.0;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
inline std::pair<double, double> mean_std(std::span<const double> v) {
    if (v.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline json fold_report_to_json(const FoldReport& f) {
    json preds = json::array();
    for (const auto& p : f.predictions) preds.push_back({{"slide_id", p.slide_id}, {"score", p.score}, {"label", p.label}});
    return json{{"fold", f.fold},
                {"n_train", f.n_train},
                {"n_val", f.n_val},
                {"n_test", f.predictions.size()},
                {"best_epoch", f.best_epoch},
                {"epochs_run", f.epochs_run},
                {"auroc", f.eval.auroc},
                {"aupr", f.eval.aupr},
                {"predictions", std::move(preds)}};
}

/// "0.75±0.02"-style summary.
inline std::string format_mean_std(double mean, double sd, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f±%.*f", digits, mean, digits, sd);
    return buf;
}

/// k-fold stratified cross-validation. Folds are independent and may run on
/// up to `threads` workers; results do not depend on the thread count.
inline CvResult cross_validate(const Dataset& ds, const ModelSpec& spec, const TrainConfig& cfg, std::size_t k = 5,
                               std::size_t threads = 1, const EpochCallback& on_epoch = {}) {
    cfg.check();
    const FoldSplit split = stratified_folds(ds, k, cfg.seed);
    CvResult result;
    result.folds.resize(k);
    result.models.resize(k);
    result.logs.resize(k);

    const auto run_fold = [&](std::size_t fold) {
        std::vector<const SlideGraph*> pool, test;
        for (const auto& g : ds.graphs) (split.assignments.at(g.slide_id) == fold ? test : pool).push_back(&g);
        const auto by_id = [](const SlideGraph* a, const SlideGraph* b) { return a->slide_id < b->slide_id; };
        std::sort(pool.begin(), pool.end(), by_id);
        std::sort(test.begin(), test.end(), by_id);

        std::mt19937_64 rng(derive_seed(cfg.seed, 2 * fold));
        const auto [tr, va] = validation_split(labels_of(pool), cfg.validation_fraction, rng);
        std::vector<const SlideGraph*> train, val;
        for (auto i : tr) train.push_back(pool[i]);
        for (auto i : va) val.push_back(pool[i]);

        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, 2 * fold + 1);
        ModelSpec fold_spec = spec;
        if (fold_spec.input_dim == 0) fold_spec.input_dim = ds.feature_dim;
        fold_spec.seed = spec.seed + fold;
        FitResult fr = fit(train, val, fold_spec, fold_cfg, threads <= 1 ? on_epoch : EpochCallback{});

        FoldReport rep;
        rep.fold = fold;
        rep.n_train = train.size();
        rep.n_val = val.size();
        rep.best_epoch = fr.best_epoch;
        rep.epochs_run = fr.log.size();
        const auto scores = predict_totals(test, fr.params);
        const auto labels = labels_of(test);
        for (std::size_t i = 0; i < test.size(); ++i) rep.predictions.push_back({test[i]->slide_id, scores[i], labels[i]});
        rep.eval = evaluate(scores, labels);
        result.folds[fold] = std::move(rep);
        result.models[fold] = std::move(fr.params);
        result.logs[fold] = std::move(fr.log);
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, k);
    if (workers == 1) {
        for (std::size_t f = 0; f < k; ++f) run_fold(f);
    } else {
        std::vector<std::exception_ptr> errors(k);
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t f; (f = next.fetch_add(1)) < k;) {
                    try {
                        run_fold(f);
                    } catch (...) {
                        errors[f] = std::current_exception();
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    std::vector<double> au, ap;
    for (const auto& f : result.folds) {
        au.push_back(f.eval.auroc);
        ap.push_back(f.eval.aupr);
    }
    std::tie(result.mean_auroc, result.std_auroc) = mean_std(au);
    std::tie(result.mean_aupr, result.std_aupr) = mean_std(ap);
    return result;
}

} // namespace slidegraph
