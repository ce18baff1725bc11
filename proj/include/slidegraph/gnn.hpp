#pragma once

// Graph network over slide graphs.
//
//   u0   = BaseNet(node features)            (or raw features with base_net off)
//   u_l  = sum_{j in N(k)} H_l(u_k, u_j - u_k)   for l = 1..L, H_l = linear -> BN -> ReLU
//   f_l  = w_l . u_l + b_l                   per node, l = 0..L
//   F_l  = sum over nodes of f_l;  F = sum_l F_l
//
// Gradients are computed by an explicit reverse pass over a forward cache.

#include "slidegraph/error.hpp"
#include "slidegraph/graph_model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace slidegraph {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEpsilon = 1e-5;

struct ModelSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> base_dims{16};
    std::vector<std::size_t> layer_dims{16, 16, 8};
    bool use_batch_norm = true;
    bool base_net = true;  ///< off: u0 is the raw node features
    bool head_bias = true;
    std::uint64_t seed = 0;

    std::size_t layer_count() const { return layer_dims.size(); }

    /// Width of u_l for l = 0..L.
    std::size_t embedding_dim(std::size_t l) const {
        if (l == 0) {
            return base_net && !base_dims.empty() ? base_dims.back() : input_dim;
        }
        return layer_dims[l - 1];
    }

    void check() const {
        if (input_dim < 1) throw InputError("model input_dim must be >= 1");
        if (layer_dims.empty()) throw InputError("model needs at least one EdgeConv layer");
        for (auto w : layer_dims) {
            if (w < 1) throw InputError("layer widths must be >= 1");
        }
        for (auto w : base_dims) {
            if (w < 1) throw InputError("base widths must be >= 1");
        }
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct BatchNormParams {
    Vector gamma, beta;
    Vector running_mean, running_var;
};

/// linear -> (batch norm) -> ReLU
struct MlpBlock {
    Matrix weight;  ///< out x in
    Vector bias;
    BatchNormParams bn;  ///< empty vectors when batch norm is off
};

struct NodeHead {
    Vector weight;
    Vector bias;  ///< size 1
};

struct ModelParams {
    ModelSpec spec;
    std::vector<MlpBlock> base;
    std::vector<MlpBlock> conv;  ///< input width 2c, split as [self | neighbor - self]
    std::vector<NodeHead> heads;  ///< L + 1 heads
};

/// Calls fn(name, span) for every trainable tensor, in a fixed order.
/// Works on const and mutable params alike.
template <class Params, class Fn>
void for_each_param(Params& p, Fn&& fn) {
    using Elem = std::conditional_t<std::is_const_v<Params>, const double, double>;
    const auto visit = [&](const std::string& name, auto& tensor) {
        if (tensor.size() > 0) fn(name, std::span<Elem>(tensor.data(), static_cast<std::size_t>(tensor.size())));
    };
    const auto visit_block = [&](const std::string& prefix, auto& block) {
        visit(prefix + ".weight", block.weight);
        visit(prefix + ".bias", block.bias);
        visit(prefix + ".bn.gamma", block.bn.gamma);
        visit(prefix + ".bn.beta", block.bn.beta);
    };
    for (std::size_t i = 0; i < p.base.size(); ++i) visit_block("base." + std::to_string(i), p.base[i]);
    for (std::size_t i = 0; i < p.conv.size(); ++i) visit_block("conv." + std::to_string(i + 1), p.conv[i]);
    for (std::size_t i = 0; i < p.heads.size(); ++i) {
        visit("head." + std::to_string(i) + ".weight", p.heads[i].weight);
        if (p.spec.head_bias) visit("head." + std::to_string(i) + ".bias", p.heads[i].bias);
    }
}

/// Calls fn(name, span) for every batch-norm running statistic.
template <class Params, class Fn>
void for_each_buffer(Params& p, Fn&& fn) {
    using Elem = std::conditional_t<std::is_const_v<Params>, const double, double>;
    const auto visit = [&](const std::string& name, auto& tensor) {
        if (tensor.size() > 0) fn(name, std::span<Elem>(tensor.data(), static_cast<std::size_t>(tensor.size())));
    };
    for (std::size_t i = 0; i < p.base.size(); ++i) {
        visit("base." + std::to_string(i) + ".bn.running_mean", p.base[i].bn.running_mean);
        visit("base." + std::to_string(i) + ".bn.running_var", p.base[i].bn.running_var);
    }
    for (std::size_t i = 0; i < p.conv.size(); ++i) {
        visit("conv." + std::to_string(i + 1) + ".bn.running_mean", p.conv[i].bn.running_mean);
        visit("conv." + std::to_string(i + 1) + ".bn.running_var", p.conv[i].bn.running_var);
    }
}

inline std::size_t parameter_count(const ModelParams& p) {
    std::size_t n = 0;
    for_each_param(p, [&](const std::string&, std::span<const double> s) { n += s.size(); });
    return n;
}

namespace detail {

inline MlpBlock make_block(std::size_t in, std::size_t out, bool bn, std::mt19937_64& rng) {
    MlpBlock b;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    b.weight.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
    for (Eigen::Index i = 0; i < b.weight.size(); ++i) b.weight.data()[i] = dist(rng);
    b.bias = Vector::Zero(static_cast<Eigen::Index>(out));
    if (bn) {
        b.bn.gamma = Vector::Ones(static_cast<Eigen::Index>(out));
        b.bn.beta = Vector::Zero(static_cast<Eigen::Index>(out));
        b.bn.running_mean = Vector::Zero(static_cast<Eigen::Index>(out));
        b.bn.running_var = Vector::Ones(static_cast<Eigen::Index>(out));
    }
    return b;
}

} // namespace detail

/// Deterministic initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero, batch-norm scale one and shift zero.
inline ModelParams init_params(const ModelSpec& spec) {
    spec.check();
    std::mt19937_64 rng(spec.seed);
    ModelParams p;
    p.spec = spec;
    std::size_t width = spec.input_dim;
    if (spec.base_net) {
        for (const auto w : spec.base_dims) {
            p.base.push_back(detail::make_block(width, w, spec.use_batch_norm, rng));
            width = w;
        }
    }
    for (const auto w : spec.layer_dims) {
        p.conv.push_back(detail::make_block(2 * width, w, spec.use_batch_norm, rng));
        width = w;
    }
    for (std::size_t l = 0; l <= spec.layer_count(); ++l) {
        const std::size_t dim = spec.embedding_dim(l);
        const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
        std::uniform_real_distribution<double> dist(-bound, bound);
        NodeHead h;
        h.weight.resize(static_cast<Eigen::Index>(dim));
        for (Eigen::Index i = 0; i < h.weight.size(); ++i) h.weight[i] = dist(rng);
        h.bias = Vector::Zero(1);
        p.heads.push_back(std::move(h));
    }
    return p;
}

/// Same shapes as `p`, every value zero (used for gradients and moments).
inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for_each_param(z, [](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    for_each_buffer(z, [](const std::string&, std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
    return z;
}

enum class Mode { Train, Eval };

struct PredictionBundle {
    std::vector<Matrix> node_embeddings;  ///< u_l, l = 0..L, each n x dim_l
    Matrix node_scores;  ///< n x (L + 1), f_l(v_k)
    std::vector<double> layer_scores;  ///< F_l
    double total = 0.0;  ///< F

    /// Per-node sum over layers.
    Vector node_totals() const { return node_scores.rowwise().sum(); }
};

namespace detail {

struct BlockCache {
    Matrix pre;  ///< linear output
    Matrix xhat;  ///< normalized (batch norm only)
    RowVector inv_std;
    RowVector batch_mean, batch_var;
    Matrix out;  ///< after ReLU
    bool normalized = false;
};

// Linear output `pre` is already filled; applies batch norm and ReLU.
inline void finish_block(const MlpBlock& block, Mode mode, BlockCache& c) {
    const Eigen::Index rows = c.pre.rows();
    if (block.bn.gamma.size() > 0 && rows > 0) {
        c.normalized = true;
        if (mode == Mode::Train) {
            c.batch_mean = c.pre.colwise().mean();
            const Matrix centered = c.pre.rowwise() - c.batch_mean;
            c.batch_var = centered.array().square().colwise().mean();
            c.inv_std = (c.batch_var.array() + kBatchNormEpsilon).rsqrt();
            c.xhat = centered.array().rowwise() * c.inv_std.array();
        } else {
            c.inv_std = (block.bn.running_var.transpose().array() + kBatchNormEpsilon).rsqrt();
            c.xhat = (c.pre.rowwise() - block.bn.running_mean.transpose()).array().rowwise() * c.inv_std.array();
        }
        c.out = (c.xhat.array().rowwise() * block.bn.gamma.transpose().array()).rowwise() +
                block.bn.beta.transpose().array();
    } else {
        c.out = c.pre;
    }
    c.out = c.out.cwiseMax(0.0);
}

// Reverse of finish_block: d(out) -> d(pre); accumulates gamma/beta grads.
inline Matrix finish_block_backward(const MlpBlock& block, Mode mode, const BlockCache& c, const Matrix& d_out,
                                    MlpBlock& grad) {
    Matrix d = (c.out.array() > 0.0).select(d_out, 0.0);
    if (!c.normalized) {
        return d;
    }
    grad.bn.gamma += (d.array() * c.xhat.array()).colwise().sum().transpose().matrix();
    grad.bn.beta += d.colwise().sum().transpose();
    const Matrix d_xhat = d.array().rowwise() * block.bn.gamma.transpose().array();
    if (mode == Mode::Eval) {
        return d_xhat.array().rowwise() * c.inv_std.array();
    }
    const double n = static_cast<double>(d.rows());
    const RowVector sum_d = d_xhat.colwise().sum();
    const RowVector sum_dx = (d_xhat.array() * c.xhat.array()).colwise().sum();
    Matrix d_pre = (d_xhat * n).rowwise() - sum_d;
    d_pre -= (c.xhat.array().rowwise() * sum_dx.array()).matrix();
    d_pre = (d_pre.array().rowwise() * (c.inv_std.array() / n)).matrix();
    return d_pre;
}

struct ConvCache {
    std::size_t in_dim = 0;
    BlockCache block;
};

} // namespace detail

/// A forward pass together with everything the reverse pass needs.
struct ForwardPass {
    PredictionBundle out;
    Mode mode = Mode::Eval;
    Matrix input;
    std::vector<std::size_t> targets, sources;  ///< directed messages, two per edge
    std::vector<detail::BlockCache> base;
    std::vector<detail::ConvCache> conv;
};

namespace detail {

inline Matrix node_feature_matrix(const SlideGraph& g, std::size_t dim) {
    Matrix x(static_cast<Eigen::Index>(g.nodes.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t k = 0; k < g.nodes.size(); ++k) {
        if (g.nodes[k].features.size() != dim) {
            throw InputError("graph '" + g.slide_id + "' node " + std::to_string(k) + " has " +
                             std::to_string(g.nodes[k].features.size()) + " features, model expects " +
                             std::to_string(dim));
        }
        for (std::size_t f = 0; f < dim; ++f) x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(f)) = g.nodes[k].features[f];
    }
    return x;
}

} // namespace detail

/// One EdgeConv layer: for each node, the sum over its neighbors of
/// block(u_k, u_j - u_k). Nodes without neighbors get the zero vector.
/// The linear part is evaluated per node as (W_self - W_diff) u_k + W_diff u_j.
inline Matrix edgeconv_forward(const Matrix& u, std::span<const std::size_t> targets,
                               std::span<const std::size_t> sources, const MlpBlock& block, Mode mode,
                               detail::BlockCache* cache = nullptr) {
    const Eigen::Index c = u.cols();
    const Eigen::Index w = block.weight.rows();
    if (block.weight.cols() != 2 * c) {
        throw InputError("EdgeConv weight expects input width " + std::to_string(block.weight.cols() / 2) +
                         ", got " + std::to_string(c));
    }
    const auto w_self = block.weight.leftCols(c);
    const auto w_diff = block.weight.rightCols(c);
    const Matrix a = u * (w_self - w_diff).transpose();
    const Matrix b = u * w_diff.transpose();

    detail::BlockCache local;
    detail::BlockCache& bc = cache ? *cache : local;
    const auto m = static_cast<Eigen::Index>(targets.size());
    bc.pre.resize(m, w);
    for (Eigen::Index r = 0; r < m; ++r) {
        bc.pre.row(r) = a.row(static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)])) +
                        b.row(static_cast<Eigen::Index>(sources[static_cast<std::size_t>(r)])) +
                        block.bias.transpose();
    }
    detail::finish_block(block, mode, bc);

    Matrix next = Matrix::Zero(u.rows(), w);
    for (Eigen::Index r = 0; r < m; ++r) {
        next.row(static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)])) += bc.out.row(r);
    }
    return next;
}

/// Runs the network on one graph and keeps the cache for backward().
inline ForwardPass forward_pass(const SlideGraph& g, const ModelParams& params, Mode mode) {
    const ModelSpec& spec = params.spec;
    ForwardPass fp;
    fp.mode = mode;
    fp.input = detail::node_feature_matrix(g, spec.input_dim);
    const std::size_t n = g.nodes.size();
    for (const auto& [a, b] : g.edges) {
        if (a >= n || b >= n || a == b) {
            throw InputError("graph '" + g.slide_id + "' has an invalid edge");
        }
        fp.targets.push_back(a);
        fp.sources.push_back(b);
        fp.targets.push_back(b);
        fp.sources.push_back(a);
    }

    Matrix u = fp.input;
    for (const auto& block : params.base) {
        detail::BlockCache c;
        c.pre = (u * block.weight.transpose()).rowwise() + block.bias.transpose();
        detail::finish_block(block, mode, c);
        u = c.out;
        fp.base.push_back(std::move(c));
    }
    fp.out.node_embeddings.push_back(u);
    for (const auto& block : params.conv) {
        detail::ConvCache c;
        c.in_dim = static_cast<std::size_t>(u.cols());
        u = edgeconv_forward(u, fp.targets, fp.sources, block, mode, &c.block);
        fp.conv.push_back(std::move(c));
        fp.out.node_embeddings.push_back(u);
    }

    const std::size_t layers = params.heads.size();
    fp.out.node_scores.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(layers));
    fp.out.layer_scores.assign(layers, 0.0);
    fp.out.total = 0.0;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto& head = params.heads[l];
        const double bias = spec.head_bias ? head.bias[0] : 0.0;
        fp.out.node_scores.col(static_cast<Eigen::Index>(l)) =
            (fp.out.node_embeddings[l] * head.weight).array() + bias;
        double layer = 0.0;
        for (std::size_t k = 0; k < n; ++k) layer += fp.out.node_scores(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
        fp.out.layer_scores[l] = layer;
        fp.out.total += layer;
    }
    return fp;
}

inline PredictionBundle forward(const SlideGraph& g, const ModelParams& params, Mode mode = Mode::Eval) {
    return forward_pass(g, params, mode).out;
}

/// Reverse pass. The scalar objective's derivative arrives as `d_total`
/// (on F) plus optional per-node derivatives on the node scores; returns
/// gradients shaped like `params`.
inline ModelParams backward(const ForwardPass& fp, const ModelParams& params, double d_total,
                            const Matrix* d_node_scores = nullptr) {
    ModelParams grad = zeros_like(params);
    const auto n = fp.out.node_scores.rows();
    const std::size_t layers = params.heads.size();
    Matrix d_scores = Matrix::Constant(n, static_cast<Eigen::Index>(layers), d_total);
    if (d_node_scores) {
        if (d_node_scores->rows() != n || d_node_scores->cols() != static_cast<Eigen::Index>(layers)) {
            throw InputError("node score gradient has the wrong shape");
        }
        d_scores += *d_node_scores;
    }

    std::vector<Matrix> d_u(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        const auto col = d_scores.col(static_cast<Eigen::Index>(l));
        grad.heads[l].weight = fp.out.node_embeddings[l].transpose() * col;
        if (params.spec.head_bias) grad.heads[l].bias[0] = col.sum();
        d_u[l] = col * params.heads[l].weight.transpose();
    }

    for (std::size_t l = layers - 1; l >= 1; --l) {
        const auto& block = params.conv[l - 1];
        const auto& cache = fp.conv[l - 1].block;
        auto& g = grad.conv[l - 1];
        const Matrix& u_in = fp.out.node_embeddings[l - 1];
        const Eigen::Index c = u_in.cols();
        const auto m = static_cast<Eigen::Index>(fp.targets.size());
        if (m == 0) continue;

        Matrix d_out(m, block.weight.rows());
        for (Eigen::Index r = 0; r < m; ++r) {
            d_out.row(r) = d_u[l].row(static_cast<Eigen::Index>(fp.targets[static_cast<std::size_t>(r)]));
        }
        const Matrix d_pre = detail::finish_block_backward(block, fp.mode, cache, d_out, g);
        g.bias += d_pre.colwise().sum().transpose();

        // Scatter message gradients onto their target and source nodes.
        Matrix by_target = Matrix::Zero(u_in.rows(), d_pre.cols());
        Matrix by_source = Matrix::Zero(u_in.rows(), d_pre.cols());
        for (Eigen::Index r = 0; r < m; ++r) {
            by_target.row(static_cast<Eigen::Index>(fp.targets[static_cast<std::size_t>(r)])) += d_pre.row(r);
            by_source.row(static_cast<Eigen::Index>(fp.sources[static_cast<std::size_t>(r)])) += d_pre.row(r);
        }
        const auto w_self = block.weight.leftCols(c);
        const auto w_diff = block.weight.rightCols(c);
        g.weight.leftCols(c) += by_target.transpose() * u_in;
        g.weight.rightCols(c) += (by_source - by_target).transpose() * u_in;
        d_u[l - 1] += by_target * (w_self - w_diff) + by_source * w_diff;
    }

    Matrix d = d_u[0];
    for (std::size_t i = params.base.size(); i-- > 0;) {
        const auto& block = params.base[i];
        const auto& cache = fp.base[i];
        auto& g = grad.base[i];
        const Matrix d_pre = detail::finish_block_backward(block, fp.mode, cache, d, g);
        const Matrix& x = i == 0 ? fp.input : fp.base[i - 1].out;
        g.weight += d_pre.transpose() * x;
        g.bias += d_pre.colwise().sum().transpose();
        d = d_pre * block.weight;
    }
    return grad;
}

/// Folds the batch statistics of a training-mode pass into the running
/// estimates (momentum 0.1, unbiased variance). Blocks that saw fewer than
/// two rows are left unchanged.
inline void update_running_stats(ModelParams& params, const ForwardPass& fp) {
    if (fp.mode != Mode::Train) return;
    const auto update = [](MlpBlock& block, const detail::BlockCache& c) {
        if (!c.normalized || c.pre.rows() < 2) return;
        const double n = static_cast<double>(c.pre.rows());
        block.bn.running_mean =
            (1.0 - kBatchNormMomentum) * block.bn.running_mean + kBatchNormMomentum * c.batch_mean.transpose();
        block.bn.running_var = (1.0 - kBatchNormMomentum) * block.bn.running_var +
                               kBatchNormMomentum * (n / (n - 1.0)) * c.batch_var.transpose();
    };
    for (std::size_t i = 0; i < params.base.size(); ++i) update(params.base[i], fp.base[i]);
    for (std::size_t i = 0; i < params.conv.size(); ++i) update(params.conv[i], fp.conv[i].block);
}

} // namespace slidegraph
