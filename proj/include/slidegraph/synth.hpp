#pragma once

// Seeded synthetic patch datasets. Patches sit on a jittered 224 px lattice
// covering a rectangular tissue region. Positive slides carry 1-3 contiguous
// hot regions with channel 0 raised by signal_strength base deviations;
// negative slides (with decoys on) carry the same fraction of hot patches
// scattered on one checkerboard colour, so no two decoys share a side.

#include "slidegraph/error.hpp"
#include "slidegraph/graph_io.hpp"
#include "slidegraph/graph_model.hpp"
#include "slidegraph/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace slidegraph {

struct SynthConfig {
    std::size_t n_slides = 200;
    std::size_t patches_per_slide = 300;
    std::size_t feature_dim = 4;
    double signal_strength = 6.0;  ///< in units of base_std
    double positive_fraction = 0.5;
    std::uint64_t seed = 0;
    bool decoys = true;
    double base_mean = 0.2;
    double base_std = 0.05;
    double patch_size = 224.0;
    double jitter = 0.2;  ///< fraction of patch_size
    double hot_min = 0.1;
    double hot_max = 0.4;

    void check() const {
        if (n_slides < 1 || patches_per_slide < 1 || feature_dim < 1) throw InputError("synth counts must be >= 1");
        if (!(signal_strength >= 0.0)) throw InputError("signal_strength must be >= 0");
        if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
            throw InputError("positive_fraction must be in [0, 1]");
        }
        if (!(base_std > 0.0) || !(patch_size > 0.0)) throw InputError("base_std and patch_size must be > 0");
        if (!(0.0 <= hot_min && hot_min <= hot_max && hot_max <= 1.0)) throw InputError("invalid hot fraction range");
    }
};

struct SynthSlide {
    SlidePatches patches;
    std::vector<int> hot;  ///< 1 for patches carrying the raised channel
};

inline std::string synth_slide_id(std::size_t i, std::size_t n) {
    const int width = static_cast<int>(std::to_string(n - 1).size());
    char buf[32];
    std::snprintf(buf, sizeof buf, "slide_%0*zu", width, i);
    return buf;
}

namespace detail {

// Grows `target` 4-connected cells from random seeds in 1-3 blobs.
inline void grow_regions(std::size_t cols, std::size_t n, std::size_t target, std::mt19937_64& rng,
                         std::vector<int>& hot) {
    std::uniform_int_distribution<std::size_t> regions_dist(1, 3);
    const std::size_t regions = std::min(regions_dist(rng), std::max<std::size_t>(target, 1));
    std::size_t placed = 0;
    // A blob that gets boxed in leaves its remainder to an extra seed.
    for (std::size_t r = 0; placed < target; ++r) {
        const std::size_t quota = r + 1 >= regions ? target - placed : (target - placed) / (regions - r);
        std::vector<std::size_t> free_cells;
        for (std::size_t c = 0; c < n; ++c) {
            if (!hot[c]) free_cells.push_back(c);
        }
        std::uniform_int_distribution<std::size_t> pick(0, free_cells.size() - 1);
        std::vector<std::size_t> frontier{free_cells[pick(rng)]};
        std::size_t grown = 0;
        while (grown < quota && !frontier.empty()) {
            std::uniform_int_distribution<std::size_t> fp(0, frontier.size() - 1);
            const std::size_t at = fp(rng);
            const std::size_t cell = frontier[at];
            frontier[at] = frontier.back();
            frontier.pop_back();
            if (hot[cell]) continue;
            hot[cell] = 1;
            ++grown;
            const std::size_t row = cell / cols, col = cell % cols;
            if (col > 0) frontier.push_back(cell - 1);
            if (col + 1 < cols && cell + 1 < n) frontier.push_back(cell + 1);
            if (row > 0) frontier.push_back(cell - cols);
            if (cell + cols < n) frontier.push_back(cell + cols);
        }
        placed += grown;
    }
}

} // namespace detail

/// Generates one slide deterministically from its own seed.
inline SynthSlide generate_slide(const SynthConfig& cfg, const std::string& slide_id, int label, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::size_t n = cfg.patches_per_slide;
    std::uniform_real_distribution<double> aspect_dist(0.5, 2.0);
    const double aspect = aspect_dist(rng);
    const std::size_t cols =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n) * aspect))), 1, n);

    SynthSlide s;
    s.patches.slide_id = slide_id;
    s.patches.label = label;
    s.hot.assign(n, 0);

    std::uniform_real_distribution<double> frac_dist(cfg.hot_min, cfg.hot_max);
    const auto target = static_cast<std::size_t>(std::llround(frac_dist(rng) * static_cast<double>(n)));
    if (label == 1) {
        detail::grow_regions(cols, n, target, rng, s.hot);
    } else if (cfg.decoys) {
        std::uniform_int_distribution<int> parity_dist(0, 1);
        const int parity = parity_dist(rng);
        std::vector<std::size_t> cells;
        for (std::size_t c = 0; c < n; ++c) {
            if (static_cast<int>((c / cols + c % cols) % 2) == parity) cells.push_back(c);
        }
        std::shuffle(cells.begin(), cells.end(), rng);
        for (std::size_t i = 0; i < std::min(target, cells.size()); ++i) s.hot[cells[i]] = 1;
    }

    std::uniform_real_distribution<double> jit(-cfg.jitter, cfg.jitter);
    std::normal_distribution<double> base(cfg.base_mean, cfg.base_std);
    const double offset_x = cfg.patch_size * static_cast<double>(4 + rng() % 64);
    const double offset_y = cfg.patch_size * static_cast<double>(4 + rng() % 64);
    for (std::size_t c = 0; c < n; ++c) {
        PatchRecord p;
        const double gx = static_cast<double>(c % cols) + 0.5 + jit(rng);
        const double gy = static_cast<double>(c / cols) + 0.5 + jit(rng);
        p.coords = {offset_x + gx * cfg.patch_size, offset_y + gy * cfg.patch_size};
        p.features.resize(cfg.feature_dim);
        for (double& v : p.features) v = base(rng);
        if (s.hot[c]) p.features[0] += cfg.signal_strength * cfg.base_std;
        s.patches.patches.push_back(std::move(p));
    }
    return s;
}

/// The whole dataset; slide i is positive when it is among the first
/// round(positive_fraction * n) entries of a seeded permutation.
inline std::vector<SynthSlide> generate_dataset(const SynthConfig& cfg) {
    cfg.check();
    const auto n_pos =
        static_cast<std::size_t>(std::llround(cfg.positive_fraction * static_cast<double>(cfg.n_slides)));
    std::vector<std::size_t> order(cfg.n_slides);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> labels(cfg.n_slides, 0);
    for (std::size_t i = 0; i < n_pos; ++i) labels[order[i]] = 1;

    std::vector<SynthSlide> out;
    out.reserve(cfg.n_slides);
    for (std::size_t i = 0; i < cfg.n_slides; ++i) {
        out.push_back(generate_slide(cfg, synth_slide_id(i, cfg.n_slides), labels[i], derive_seed(cfg.seed, 1000 + i)));
    }
    return out;
}

inline std::vector<SlidePatches> patches_of(const std::vector<SynthSlide>& slides) {
    std::vector<SlidePatches> out;
    for (const auto& s : slides) out.push_back(s.patches);
    return out;
}

inline std::string format_hot_csv(const std::vector<SynthSlide>& slides) {
    std::string out = "slide_id,patch_index,hot\n";
    for (const auto& s : slides) {
        for (std::size_t i = 0; i < s.hot.size(); ++i) {
            out += s.patches.slide_id + "," + std::to_string(i) + "," + std::to_string(s.hot[i]) + "\n";
        }
    }
    return out;
}

/// Writes features.csv (+ .meta.json), labels.csv and hot_patches.csv.
inline void write_synth_dataset(const std::filesystem::path& dir, const SynthConfig& cfg,
                                const std::vector<SynthSlide>& slides) {
    std::filesystem::create_directories(dir);
    const auto patches = patches_of(slides);
    const auto features = dir / "features.csv";
    detail::write_file(features, format_patch_csv(patches));
    PatchMetadata meta;
    meta.mpp = kBaseMpp;
    meta.feature_dim = cfg.feature_dim;
    for (std::size_t f = 0; f < cfg.feature_dim; ++f) meta.feature_names.push_back("f" + std::to_string(f));
    detail::write_file(metadata_path_for(features), format_metadata(meta));
    std::map<std::string, int> labels;
    for (const auto& s : slides) labels[s.patches.slide_id] = *s.patches.label;
    detail::write_file(dir / "labels.csv", format_labels_csv(labels));
    detail::write_file(dir / "hot_patches.csv", format_hot_csv(slides));
}

} // namespace slidegraph
