// slidegraph: command-line front end for graph construction, training,
// cross-validation, prediction and the pooling baselines.

#include "slidegraph/baselines.hpp"
#include "slidegraph/config.hpp"
#include "slidegraph/graph_io.hpp"
#include "slidegraph/metrics.hpp"
#include "slidegraph/model_io.hpp"
#include "slidegraph/pipeline.hpp"
#include "slidegraph/synth.hpp"
#include "slidegraph/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace slidegraph;

namespace {

RunConfig load_config(const std::string& path) {
    return path.empty() ? RunConfig{} : read_config(path);
}

std::map<std::string, int> load_labels(const std::string& path) {
    return parse_labels_csv(detail::read_file(path));
}

// A single feature file, or a directory holding one file per slide. In the
// directory form a file without patch rows stands for an empty slide named
// after the file.
std::vector<SlidePatches> load_patches(const fs::path& path, double expected_mpp) {
    if (!fs::exists(path)) throw InputError("'" + path.string() + "' does not exist");
    std::vector<fs::path> files;
    if (fs::is_directory(path)) {
        for (const auto& e : fs::directory_iterator(path)) {
            const auto ext = e.path().extension();
            if (e.is_regular_file() && (ext == ".csv" || ext == ".jsonl" || ext == ".ndjson")) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw InputError("no feature files in '" + path.string() + "'");
    } else {
        files.push_back(path);
    }

    std::vector<SlidePatches> out;
    std::optional<std::size_t> dim;
    for (const auto& f : files) {
        std::vector<SlidePatches> slides;
        try {
            slides = read_patches(f);
        } catch (const ParseError& e) {
            throw InputError(f.string() + ": " + e.what());
        }
        const auto meta_path = metadata_path_for(f);
        if (fs::exists(meta_path)) {
            check_patches(slides, parse_metadata(detail::read_file(meta_path)), expected_mpp);
        }
        if (slides.empty() && files.size() > 1) {
            SlidePatches empty;
            empty.slide_id = f.stem().string();
            slides.push_back(empty);
        }
        for (auto& s : slides) {
            for (const auto& p : s.patches) {
                if (!dim) dim = p.features.size();
                if (p.features.size() != *dim) {
                    throw InputError(f.string() + ": slide '" + s.slide_id + "' has feature_dim " +
                                     std::to_string(p.features.size()) + ", expected " + std::to_string(*dim));
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

void attach_labels(std::vector<SlidePatches>& slides, const std::map<std::string, int>& labels) {
    for (auto& s : slides) {
        const auto it = labels.find(s.slide_id);
        if (it != labels.end()) s.label = it->second;
    }
}

Dataset load_labeled_graphs(const std::string& dir, const std::string& labels_path) {
    const auto labels = load_labels(labels_path);
    Dataset ds = read_graph_dir(dir, &labels);
    for (const auto& g : ds.graphs) {
        if (!g.label) throw InputError("no label for slide '" + g.slide_id + "' in " + labels_path);
    }
    return ds;
}

Dataset load_graphs(const fs::path& path) {
    if (fs::is_directory(path)) return read_graph_dir(path);
    Dataset ds;
    ds.graphs.push_back(read_graph(path));
    ds.feature_dim = ds.graphs.front().feature_dim();
    return ds;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    detail::write_file(path, text);
}

std::string fixed(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------- subcommands

int run_build_graph(const std::string& features, const std::string& config_path, const std::string& labels_path,
                    const std::string& out_dir) {
    const RunConfig cfg = load_config(config_path);
    auto slides = load_patches(features, cfg.mpp);
    if (!labels_path.empty()) attach_labels(slides, load_labels(labels_path));
    const BuildResult built = build_graphs(slides, cfg, worker_count());

    fs::create_directories(out_dir);
    for (const auto& g : built.graphs) write_graph(fs::path(out_dir) / (g.slide_id + ".json"), g);
    RunConfig resolved = cfg;
    resolved.lambda_h = built.lambda_h;
    write_text(fs::path(out_dir) / "config.ini", format_config(resolved));
    write_text(fs::path(out_dir) / "build_summary.csv", format_build_summary(built.summary));

    std::printf("%-24s %10s %8s %8s  %s\n", "slide_id", "n_patches", "n_nodes", "n_edges", "status");
    for (const auto& r : built.summary) {
        if (r.status != "ok") std::cerr << "warning: slide '" << r.slide_id << "' " << r.status << "\n";
        std::printf("%-24s %10zu %8zu %8zu  %s\n", r.slide_id.c_str(), r.n_patches, r.n_nodes, r.n_edges,
                    r.status.c_str());
    }
    std::printf("%zu graphs written to %s (lambda_h = %s)\n", built.graphs.size(), out_dir.c_str(),
                format_double(built.lambda_h).c_str());
    return 0;
}

int run_train(const std::string& graphs, const std::string& labels, const std::string& config_path,
              const std::string& out, std::string log_path) {
    const RunConfig cfg = load_config(config_path);
    const Dataset ds = load_labeled_graphs(graphs, labels);
    if (log_path.empty()) log_path = out + ".log.jsonl";
    std::string log;
    const FitResult r = fit(ds, cfg.model, cfg.training, [&](const EpochRecord& e) {
        log += epoch_to_json(e).dump() + "\n";
    });
    write_model(out, r.params, config_hash(cfg));
    write_text(log_path, log);
    if (r.best_val_auroc) {
        std::printf("best epoch %zu of %zu, validation AUROC %s\n", r.best_epoch, r.log.size(),
                    fixed(*r.best_val_auroc).c_str());
    } else {
        std::printf("best epoch %zu of %zu, validation AUROC n/a (validation split lacks a class)\n", r.best_epoch,
                    r.log.size());
    }
    return 0;
}

int run_cv(const std::string& graphs, const std::string& labels, const std::string& config_path,
           std::size_t folds_flag, const std::string& out_dir) {
    RunConfig cfg = load_config(config_path);
    if (folds_flag) cfg.folds = folds_flag;
    const Dataset ds = load_labeled_graphs(graphs, labels);
    const CvResult r = cross_validate(ds, cfg.model, cfg.training, cfg.folds, worker_count());
    for (const auto& f : r.folds) {
        json j = fold_report_to_json(f);
        j.erase("predictions");
        std::cout << j.dump() << "\n";
    }
    std::printf("AUROC %s  AUPR %s  (%zu folds)\n", format_mean_std(r.mean_auroc, r.std_auroc).c_str(),
                format_mean_std(r.mean_aupr, r.std_aupr).c_str(), cfg.folds);
    if (!out_dir.empty()) {
        const fs::path dir(out_dir);
        fs::create_directories(dir);
        const std::string hash = config_hash(cfg);
        for (std::size_t f = 0; f < r.folds.size(); ++f) {
            write_text(dir / ("fold_" + std::to_string(f) + ".json"), fold_report_to_json(r.folds[f]).dump(1) + "\n");
            write_model(dir / ("model_fold_" + std::to_string(f) + ".json"), r.models[f], hash);
            write_text(dir / ("train_fold_" + std::to_string(f) + ".log.jsonl"), format_log(r.logs[f]));
        }
        const json summary{{"folds", cfg.folds},
                           {"mean_auroc", r.mean_auroc},
                           {"std_auroc", r.std_auroc},
                           {"mean_aupr", r.mean_aupr},
                           {"std_aupr", r.std_aupr},
                           {"config_hash", hash}};
        write_text(dir / "cv_summary.json", summary.dump(1) + "\n");
        write_text(dir / "config.ini", format_config(cfg));
    }
    return 0;
}

int run_predict(const std::string& model_path, const std::string& graphs, const std::string& out,
                const std::string& node_out) {
    const ModelParams params = read_model(model_path);
    const Dataset ds = load_graphs(graphs);
    const auto bundles = predict_all(ds.graphs, params, worker_count());
    std::vector<std::pair<std::string, double>> scores;
    std::string nodes = "slide_id,node_id,x,y,score_total\n";
    for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
        const auto& g = ds.graphs[i];
        scores.emplace_back(g.slide_id, bundles[i].total);
        const Vector totals = bundles[i].node_totals();
        for (std::size_t k = 0; k < g.nodes.size(); ++k) {
            nodes += g.slide_id + "," + std::to_string(k) + "," + format_double(g.nodes[k].centroid.x) + "," +
                     format_double(g.nodes[k].centroid.y) + "," +
                     format_double(totals[static_cast<Eigen::Index>(k)]) + "\n";
        }
    }
    write_text(out, format_scores_csv(scores));
    if (!node_out.empty()) write_text(node_out, nodes);
    std::printf("%zu slide scores written to %s\n", scores.size(), out.c_str());
    return 0;
}

int run_export_heatmap(const std::string& model_path, const std::string& graph_path, const std::string& out) {
    const ModelParams params = read_model(model_path);
    const SlideGraph g = read_graph(graph_path);
    write_text(out, format_heatmap_csv(g, forward(g, params, Mode::Eval)));
    std::printf("%zu nodes written to %s\n", g.nodes.size(), out.c_str());
    return 0;
}

int run_evaluate(const std::string& predictions, const std::string& labels_path, std::string prefix) {
    const auto scores = parse_scores_csv(detail::read_file(predictions));
    const auto labels = load_labels(labels_path);
    std::vector<double> s;
    std::vector<int> y;
    for (const auto& [id, v] : scores) {
        const auto it = labels.find(id);
        if (it == labels.end()) throw InputError("no label for slide '" + id + "'");
        s.push_back(v);
        y.push_back(it->second);
    }
    const EvalReport r = evaluate(s, y);
    if (prefix.empty()) prefix = (fs::path(predictions).parent_path() / fs::path(predictions).stem()).string() + "_";
    write_text(prefix + "roc.csv", format_roc_csv(r));
    write_text(prefix + "pr.csv", format_pr_csv(r));
    std::printf("AUROC %s  AUPR %s  (%zu positive, %zu negative)\n", fixed(r.auroc).c_str(), fixed(r.aupr).c_str(),
                r.n_pos, r.n_neg);
    return 0;
}

int run_synth(const std::string& config_path, const std::string& out_dir) {
    const RunConfig cfg = load_config(config_path);
    const auto slides = generate_dataset(cfg.synth);
    write_synth_dataset(out_dir, cfg.synth, slides);
    write_text(fs::path(out_dir) / "config.ini", format_config(cfg));
    std::size_t pos = 0;
    for (const auto& s : slides) pos += static_cast<std::size_t>(*s.patches.label);
    std::printf("%zu slides (%zu positive) written to %s\n", slides.size(), pos, out_dir.c_str());
    return 0;
}

int run_baseline(const std::string& features, const std::string& labels_path, const std::string& config_path,
                 std::optional<std::size_t> channel_flag, const std::string& mode_name, std::optional<double> floor_flag,
                 std::string out) {
    const RunConfig cfg = load_config(config_path);
    const std::size_t channel = channel_flag.value_or(cfg.baseline_channel);
    const double floor = floor_flag.value_or(cfg.baseline_floor);
    const PoolMode mode = parse_pool_mode(mode_name);
    auto slides = load_patches(features, cfg.mpp);
    attach_labels(slides, load_labels(labels_path));
    std::erase_if(slides, [](const SlidePatches& s) {
        if (s.patches.empty()) std::cerr << "warning: slide '" << s.slide_id << "' has no patches, skipped\n";
        return s.patches.empty();
    });
    const auto pooled = pool_feature(slides, channel, mode, floor);
    if (out.empty()) out = "pooled_" + mode_name + ".csv";
    write_text(out, format_pooled_csv(pooled));

    std::vector<double> v;
    std::vector<int> y;
    for (const auto& p : pooled) {
        if (!p.label) throw InputError("no label for slide '" + p.slide_id + "'");
        v.push_back(p.value);
        y.push_back(*p.label);
    }
    const EvalReport raw = evaluate(v, y);
    const BaselineReport cvr = evaluate_baseline(pooled, cfg.folds, cfg.training.seed);
    std::printf("%s pooling of channel %zu (floor %s): pooled-value AUROC %s AUPR %s\n", mode_name.c_str(), channel,
                format_double(floor).c_str(), fixed(raw.auroc).c_str(), fixed(raw.aupr).c_str());
    std::printf("linear fit, %zu-fold cv: AUROC %s  AUPR %s\n", cfg.folds,
                format_mean_std(cvr.mean_auroc, cvr.std_auroc).c_str(),
                format_mean_std(cvr.mean_aupr, cvr.std_aupr).c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Slide-level graph neural network pipeline: patch clustering, Delaunay graphs, EdgeConv scoring."};
    app.require_subcommand(1);
    app.footer("Environment: SLIDEGRAPH_THREADS caps the worker pool (default: hardware threads).\n"
               "Exit codes: 0 success, 1 internal error, 2 input or validation error.");

    std::string features, config, labels, out, graphs, model, graph, predictions, log, node_out, mode = "average";
    std::size_t folds = 0;
    std::optional<std::size_t> channel;
    std::optional<double> floor;

    auto* build = app.add_subcommand("build-graph", "Cluster patches and write one graph JSON per slide");
    build->add_option("--features", features, "Patch feature file (.csv/.jsonl) or directory of per-slide files")
        ->required();
    build->add_option("--config", config, "Run configuration (INI)");
    build->add_option("--labels", labels, "Optional labels CSV (slide_id,label) stored in the graphs");
    build->add_option("--out", out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train a model on labeled graphs");
    train->add_option("--graphs", graphs, "Directory of graph JSON files")->required();
    train->add_option("--labels", labels, "Labels CSV (slide_id,label)")->required();
    train->add_option("--config", config, "Run configuration (INI)");
    train->add_option("--out", out, "Output model file")->required();
    train->add_option("--log", log, "Training log (JSON lines; default <out>.log.jsonl)");

    auto* cv = app.add_subcommand("cv", "Stratified k-fold cross-validation");
    cv->add_option("--graphs", graphs, "Directory of graph JSON files")->required();
    cv->add_option("--labels", labels, "Labels CSV (slide_id,label)")->required();
    cv->add_option("--config", config, "Run configuration (INI)");
    cv->add_option("--folds", folds, "Number of folds (default: config, 5)");
    cv->add_option("--out", out, "Directory for fold reports, fold models and logs");

    auto* predict = app.add_subcommand("predict", "Score slides with a trained model");
    predict->add_option("--model", model, "Model file")->required();
    predict->add_option("--graphs", graphs, "Graph JSON file or directory")->required();
    predict->add_option("--out", out, "Output CSV (slide_id,score)")->required();
    predict->add_option("--node-scores", node_out, "Optional per-node CSV (slide_id,node_id,x,y,score_total)");

    auto* heat = app.add_subcommand("export-heatmap", "Per-node scores of one slide for false-colour plots");
    heat->add_option("--model", model, "Model file")->required();
    heat->add_option("--graph", graph, "Graph JSON file")->required();
    heat->add_option("--out", out, "Output CSV (node_id,x,y,score_total,score_l0,...)")->required();

    auto* eval = app.add_subcommand("evaluate", "AUROC/AUPR of slide scores; writes ROC and PR point files");
    eval->add_option("--predictions", predictions, "Scores CSV (slide_id,score)")->required();
    eval->add_option("--labels", labels, "Labels CSV (slide_id,label)")->required();
    eval->add_option("--out-prefix", out, "Prefix for <prefix>roc.csv and <prefix>pr.csv");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled patch dataset");
    synth->add_option("--config", config, "Run configuration (INI); the [synth] section applies");
    synth->add_option("--out", out, "Output directory")->required();

    auto* base = app.add_subcommand("baseline", "Pool one feature channel per slide and score it linearly");
    base->add_option("--features", features, "Patch feature file or directory")->required();
    base->add_option("--labels", labels, "Labels CSV (slide_id,label)")->required();
    base->add_option("--config", config, "Run configuration (INI)");
    base->add_option("--channel", channel, "Feature channel (default: config, 0)");
    base->add_option("--mode", mode, "max, average or majority")
        ->check(CLI::IsMember({"max", "average", "majority"}));
    base->add_option("--floor", floor, "Values at or below this are ignored by average/majority (default 0.1)");
    base->add_option("--out", out, "Pooled values CSV (default pooled_<mode>.csv)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*build) return run_build_graph(features, config, labels, out);
        if (*train) return run_train(graphs, labels, config, out, log);
        if (*cv) return run_cv(graphs, labels, config, folds, out);
        if (*predict) return run_predict(model, graphs, out, node_out);
        if (*heat) return run_export_heatmap(model, graph, out);
        if (*eval) return run_evaluate(predictions, labels, out);
        if (*synth) return run_synth(config, out);
        if (*base) return run_baseline(features, labels, config, channel, mode, floor, out);
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
