#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "nrsc/errors.hpp"
#include "nrsc/geometry.hpp"

// Learning core: Siamese point encoder, pointwise generator, loss,
// hand-written reverse-mode gradients and Adam. Everything is templated
// on the scalar so the float production path has an exact 64-bit shadow
// for finite-difference gradient checks.
//
// Forward passes use a k-ascending single-accumulator kernel instead of a
// blocked GEMM: each output column is then a fixed function of its input
// column alone, which makes encoder permutation invariance and the
// generator's pointwise property hold bit-exactly. Backward passes only
// need run-to-run determinism and use Eigen products.

namespace nrsc {

template <class S> using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S> using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <class S>
struct DenseLayerT {
    MatX<S> weight;  // out x in
    VecX<S> bias;    // out

    int fan_in() const { return static_cast<int>(weight.cols()); }
    int fan_out() const { return static_cast<int>(weight.rows()); }
};

template <class S>
struct EncoderWeightsT {
    std::vector<DenseLayerT<S>> shared_mlp;  // per-point MLP, ReLU after each layer
    DenseLayerT<S> post_pool;                // applied to the pooled vector, then ReLU

    int code_size() const { return post_pool.fan_out(); }
    int input_dim() const { return shared_mlp.front().fan_in(); }
};

template <class S>
struct GeneratorWeightsT {
    std::vector<DenseLayerT<S>> layers;  // ReLU between hidden layers, tanh at the end
    int point_dim = 6;                   // leading layer-0 inputs taken per point

    int theta_dim() const { return layers.front().fan_in() - point_dim; }
    int output_dim() const { return layers.back().fan_out(); }
};

template <class S>
struct NetworkWeightsT {
    EncoderWeightsT<S> encoder;
    GeneratorWeightsT<S> generator;
};

using DenseLayer = DenseLayerT<float>;
using EncoderWeights = EncoderWeightsT<float>;
using GeneratorWeights = GeneratorWeightsT<float>;
using NetworkWeights = NetworkWeightsT<float>;

/// Widths of the full-scale architecture.
inline const std::vector<int>& encoder_widths() {
    static const std::vector<int> w = {6, 64, 128, 1024};
    return w;
}
inline int post_pool_width() { return 1024; }
inline const std::vector<int>& generator_widths() {
    static const std::vector<int> w = {2054, 1024, 512, 256, 128, 128, 128, 128, 3};
    return w;
}

// ---------------------------------------------------------------------------
// Forward kernels

/// Y = W*X + y0 with y0 broadcast over columns. Column p of Y depends only
/// on column p of X: every output element accumulates over k in ascending
/// order into a single accumulator, so results are independent of the
/// column's position in the batch.
template <class S>
void dense_forward_from(const MatX<S>& W, const VecX<S>& y0, const MatX<S>& X, MatX<S>& Y) {
    const int n = static_cast<int>(X.cols());
    const int in = static_cast<int>(W.cols());
    Y.resize(W.rows(), n);
    for (int p = 0; p < n; ++p) Y.col(p) = y0;
    constexpr int G = 8;  // column group; W.col(k) stays hot across the group
    int p0 = 0;
    for (; p0 + G <= n; p0 += G) {
        for (int k = 0; k < in; ++k) {
            const auto wk = W.col(k);
            for (int g = 0; g < G; ++g) Y.col(p0 + g) += X(k, p0 + g) * wk;
        }
    }
    for (; p0 < n; ++p0)
        for (int k = 0; k < in; ++k) Y.col(p0) += X(k, p0) * W.col(k);
}

template <class S>
void dense_forward(const DenseLayerT<S>& l, const MatX<S>& X, MatX<S>& Y) {
    dense_forward_from(l.weight, l.bias, X, Y);
}

template <class S>
void relu_inplace(MatX<S>& m) {
    m = m.cwiseMax(S(0));
}

// ---------------------------------------------------------------------------
// Encoder

template <class S>
struct EncoderCache {
    std::vector<MatX<S>> acts;  // acts[0] = input, acts[l+1] = post-ReLU of layer l
    VecX<S> pooled;             // channel-wise max over points
    std::vector<int> argmax;    // pooling source per channel, lowest index on ties
    VecX<S> code;               // post-ReLU output of post_pool
};

namespace detail {

template <class S>
void maxpool_columns(const MatX<S>& feat, VecX<S>& pooled, std::vector<int>& argmax) {
    const int c = static_cast<int>(feat.rows());
    const int n = static_cast<int>(feat.cols());
    pooled = feat.col(0);
    argmax.assign(c, 0);
    for (int p = 1; p < n; ++p)
        for (int ch = 0; ch < c; ++ch)
            if (feat(ch, p) > pooled[ch]) {  // strict: ties keep the lowest index
                pooled[ch] = feat(ch, p);
                argmax[ch] = p;
            }
}

template <class S>
void shared_mlp_forward(const EncoderWeightsT<S>& w, const MatX<S>& X,
                        std::vector<MatX<S>>* acts, MatX<S>& features) {
    MatX<S> cur = X, next;
    if (acts) acts->push_back(cur);
    for (const auto& layer : w.shared_mlp) {
        dense_forward(layer, cur, next);
        relu_inplace(next);
        cur.swap(next);
        if (acts) acts->push_back(cur);
    }
    features = std::move(cur);
}

}  // namespace detail

/// Shared per-point MLP, channel-wise max pool, post-pool layer, final
/// ReLU. `threads > 1` splits the per-point work into column blocks and
/// is only valid without a cache (inference); the result is bit-identical
/// to the single-threaded pass.
template <class S>
VecX<S> encode_shape_t(const MatX<S>& X, const EncoderWeightsT<S>& w,
                       EncoderCache<S>* cache = nullptr, int threads = 1) {
    if (X.rows() != w.shared_mlp.front().fan_in())
        throw InvalidInput("encode_shape: input feature dimension mismatch");
    if (X.cols() < 1) throw InvalidInput("encode_shape: need at least one point");

    const int n = static_cast<int>(X.cols());
    VecX<S> pooled;
    std::vector<int> argmax;

    if (threads > 1 && !cache && n >= 4 * threads) {
        const int nt = threads;
        std::vector<VecX<S>> part_pool(nt);
        std::vector<std::vector<int>> part_arg(nt);
        std::vector<std::thread> pool;
        for (int t = 0; t < nt; ++t) {
            pool.emplace_back([&, t] {
                const int lo = static_cast<int>(static_cast<std::int64_t>(n) * t / nt);
                const int hi = static_cast<int>(static_cast<std::int64_t>(n) * (t + 1) / nt);
                MatX<S> block = X.middleCols(lo, hi - lo);
                MatX<S> feat;
                detail::shared_mlp_forward(w, block, static_cast<std::vector<MatX<S>>*>(nullptr),
                                           feat);
                detail::maxpool_columns(feat, part_pool[t], part_arg[t]);
                for (int& a : part_arg[t]) a += lo;
            });
        }
        for (auto& th : pool) th.join();
        pooled = part_pool[0];
        argmax = part_arg[0];
        for (int t = 1; t < nt; ++t)
            for (int ch = 0; ch < static_cast<int>(pooled.size()); ++ch)
                if (part_pool[t][ch] > pooled[ch]) {
                    pooled[ch] = part_pool[t][ch];
                    argmax[ch] = part_arg[t][ch];
                }
    } else {
        MatX<S> feat;
        std::vector<MatX<S>> acts;
        detail::shared_mlp_forward(w, X, cache ? &acts : nullptr, feat);
        detail::maxpool_columns(feat, pooled, argmax);
        if (cache) cache->acts = std::move(acts);
    }

    MatX<S> pooled_mat = pooled, code_mat;
    dense_forward(w.post_pool, pooled_mat, code_mat);
    relu_inplace(code_mat);
    VecX<S> code = code_mat.col(0);

    if (cache) {
        cache->pooled = std::move(pooled);
        cache->argmax = std::move(argmax);
        cache->code = code;
    }
    return code;
}

/// Accumulates d(loss)/d(encoder weights) for one encoder evaluation into
/// `grads`. Max pooling routes gradient to the argmax point per channel.
template <class S>
void encode_shape_backward(const EncoderWeightsT<S>& w, const EncoderCache<S>& cache,
                           const VecX<S>& dcode, EncoderWeightsT<S>& grads) {
    VecX<S> delta = dcode;
    for (int i = 0; i < static_cast<int>(delta.size()); ++i)
        if (!(cache.code[i] > S(0))) delta[i] = S(0);

    grads.post_pool.weight.noalias() += delta * cache.pooled.transpose();
    grads.post_pool.bias += delta;
    VecX<S> dpooled = w.post_pool.weight.transpose() * delta;

    // gather the points that won the pool; only they receive gradient
    std::vector<int> cols = cache.argmax;
    std::sort(cols.begin(), cols.end());
    cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
    const int m = static_cast<int>(cols.size());
    std::vector<int> col_slot(static_cast<std::size_t>(cache.acts.back().cols()), -1);
    for (int i = 0; i < m; ++i) col_slot[cols[i]] = i;

    const int feat_dim = static_cast<int>(cache.acts.back().rows());
    MatX<S> d = MatX<S>::Zero(feat_dim, m);
    for (int ch = 0; ch < feat_dim; ++ch)
        d(ch, col_slot[cache.argmax[ch]]) += dpooled[ch];

    const int L = static_cast<int>(w.shared_mlp.size());
    std::vector<MatX<S>> sub(L + 1);
    for (int l = 0; l <= L; ++l) {
        sub[l].resize(cache.acts[l].rows(), m);
        for (int i = 0; i < m; ++i) sub[l].col(i) = cache.acts[l].col(cols[i]);
    }

    for (int l = L - 1; l >= 0; --l) {
        d = ((sub[l + 1].array() > S(0)).template cast<S>() * d.array()).matrix();
        grads.shared_mlp[l].weight.noalias() += d * sub[l].transpose();
        grads.shared_mlp[l].bias += d.rowwise().sum();
        if (l > 0) d = (w.shared_mlp[l].weight.transpose() * d).eval();
    }
}

// ---------------------------------------------------------------------------
// Generator

template <class S>
struct GeneratorCache {
    std::vector<MatX<S>> acts;  // acts[0] = per-point input, then hidden post-ReLU
    VecX<S> theta;              // the latent code the pass ran with
    MatX<S> out;                // post-tanh output, out_dim x n
};

/// Pointwise MLP on (q_i, theta) with theta fixed: ReLU on hidden layers,
/// tanh on the 3 outputs. Column p of the result depends only on column p
/// of Q plus theta. `threads > 1` is inference-only (no cache).
template <class S>
MatX<S> generate_t(const MatX<S>& Q, const VecX<S>& theta, const GeneratorWeightsT<S>& w,
                   GeneratorCache<S>* cache = nullptr, int threads = 1) {
    if (Q.rows() != w.point_dim) throw InvalidInput("generate: point feature dimension mismatch");
    if (static_cast<int>(theta.size()) != w.theta_dim())
        throw InvalidInput("generate: latent code size mismatch");
    if (!theta.allFinite()) throw InvalidInput("generate: latent code is not finite");

    const auto& l0 = w.layers.front();
    // The theta share of layer 0 is identical for every point: fold it
    // into the bias once, then run only the per-point slice of W0.
    VecX<S> theta_base = l0.bias;
    theta_base.noalias() += l0.weight.rightCols(w.theta_dim()) * theta;
    const MatX<S> W0q = l0.weight.leftCols(w.point_dim);

    const int L = static_cast<int>(w.layers.size());
    auto run_block = [&](const MatX<S>& block, std::vector<MatX<S>>* acts, MatX<S>& out) {
        MatX<S> cur, next;
        dense_forward_from(W0q, theta_base, block, cur);
        for (int l = 1; l < L; ++l) {
            relu_inplace(cur);
            if (acts) acts->push_back(cur);
            dense_forward(w.layers[l], cur, next);
            cur.swap(next);
        }
        out = cur.array().tanh().matrix();
    };

    MatX<S> out;
    if (threads > 1 && !cache && Q.cols() >= 4 * threads) {
        const int n = static_cast<int>(Q.cols());
        out.resize(w.output_dim(), n);
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                const int lo = static_cast<int>(static_cast<std::int64_t>(n) * t / threads);
                const int hi = static_cast<int>(static_cast<std::int64_t>(n) * (t + 1) / threads);
                MatX<S> block = Q.middleCols(lo, hi - lo);
                MatX<S> block_out;
                run_block(block, nullptr, block_out);
                out.middleCols(lo, hi - lo) = block_out;
            });
        }
        for (auto& th : pool) th.join();
    } else {
        std::vector<MatX<S>> acts;
        if (cache) acts.push_back(Q);
        run_block(Q, cache ? &acts : nullptr, out);
        if (cache) {
            cache->acts = std::move(acts);
            cache->theta = theta;
            cache->out = out;
        }
    }
    return out;
}

/// Reverse pass of generate_t. Accumulates weight gradients into `grads`
/// and returns the gradient w.r.t. theta.
template <class S>
VecX<S> generate_backward(const GeneratorWeightsT<S>& w, const GeneratorCache<S>& cache,
                          const MatX<S>& dout, GeneratorWeightsT<S>& grads) {
    const int L = static_cast<int>(w.layers.size());
    // tanh'(z) = 1 - tanh(z)^2
    MatX<S> delta = (dout.array() * (S(1) - cache.out.array().square())).matrix();
    for (int l = L - 1; l >= 1; --l) {
        grads.layers[l].weight.noalias() += delta * cache.acts[l].transpose();
        grads.layers[l].bias += delta.rowwise().sum();
        MatX<S> dprev = w.layers[l].weight.transpose() * delta;
        delta = ((cache.acts[l].array() > S(0)).template cast<S>() * dprev.array()).matrix();
    }
    // layer 0: per-point input block plus the shared theta block
    VecX<S> delta_sum = delta.rowwise().sum();
    grads.layers[0].weight.leftCols(w.point_dim).noalias() += delta * cache.acts[0].transpose();
    grads.layers[0].weight.rightCols(w.theta_dim()).noalias() +=
        delta_sum * cache.theta.transpose();
    grads.layers[0].bias += delta_sum;
    return w.layers[0].weight.rightCols(w.theta_dim()).transpose() * delta_sum;
}

// ---------------------------------------------------------------------------
// Loss

/// Squared-distance sum of the 6D prediction (coordinates, alpha-scaled
/// unit normal) against the ground truth:
///   sum_i ||x_i - x*_i||^2 + alpha^2 * ||n_i - n*_i||^2.
/// alpha == 0 gives the pure position form; normal arguments may then be
/// empty.
template <class S>
S loss_6d(const MatX<S>& pred_pos, const MatX<S>& pred_n,
          const MatX<S>& gt_pos, const MatX<S>& gt_n, S alpha) {
    if (pred_pos.cols() != gt_pos.cols() || pred_pos.rows() != gt_pos.rows())
        throw InvalidInput("loss: prediction/ground-truth shape mismatch");
    S value = (pred_pos - gt_pos).squaredNorm();
    if (alpha != S(0)) {
        if (pred_n.cols() != pred_pos.cols() || gt_n.cols() != pred_pos.cols())
            throw InvalidInput("loss: normal arrays must match the position count");
        value += alpha * alpha * (pred_n - gt_n).squaredNorm();
    }
    return value;
}

// ---------------------------------------------------------------------------
// Differentiable vertex normals of the deformed mesh

template <class S>
struct NormalCache {
    MatX<S> sums;     // per-vertex accumulated face cross products
    VecX<S> inv_len;  // 1/||sum||, or 0 where the fallback kicked in
    MatX<S> normals;  // unit normals (fallback (0,0,1))
};

template <class S>
void mesh_normals_forward(const MatX<S>& pos, const std::vector<std::array<int, 3>>& faces,
                          NormalCache<S>& nc) {
    const int n = static_cast<int>(pos.cols());
    using V3 = Eigen::Matrix<S, 3, 1>;
    nc.sums = MatX<S>::Zero(3, n);
    for (const auto& f : faces) {
        V3 a = pos.col(f[1]) - pos.col(f[0]);
        V3 b = pos.col(f[2]) - pos.col(f[0]);
        V3 c = a.cross(b);
        nc.sums.col(f[0]) += c;
        nc.sums.col(f[1]) += c;
        nc.sums.col(f[2]) += c;
    }
    nc.inv_len.resize(n);
    nc.normals.resize(3, n);
    for (int i = 0; i < n; ++i) {
        const S len = nc.sums.col(i).norm();
        if (len > S(1e-20)) {
            nc.inv_len[i] = S(1) / len;
            nc.normals.col(i) = nc.sums.col(i) * nc.inv_len[i];
        } else {
            nc.inv_len[i] = S(0);
            nc.normals.col(i) = V3(S(0), S(0), S(1));
        }
    }
}

/// Chain rule through normalize and the face cross products. Adds into
/// `dpos`. Fallback vertices pass no gradient.
template <class S>
void mesh_normals_backward(const MatX<S>& pos, const std::vector<std::array<int, 3>>& faces,
                           const NormalCache<S>& nc, const MatX<S>& dnormals, MatX<S>& dpos) {
    const int n = static_cast<int>(pos.cols());
    using V3 = Eigen::Matrix<S, 3, 1>;
    MatX<S> dsums(3, n);
    for (int i = 0; i < n; ++i) {
        if (nc.inv_len[i] == S(0)) {
            dsums.col(i).setZero();
            continue;
        }
        V3 nrm = nc.normals.col(i);
        V3 g = dnormals.col(i);
        dsums.col(i) = (g - nrm * nrm.dot(g)) * nc.inv_len[i];
    }
    for (const auto& f : faces) {
        V3 g = dsums.col(f[0]) + dsums.col(f[1]) + dsums.col(f[2]);
        V3 a = pos.col(f[1]) - pos.col(f[0]);
        V3 b = pos.col(f[2]) - pos.col(f[0]);
        V3 da = b.cross(g);  // d/da of g . (a x b)
        V3 db = g.cross(a);
        dpos.col(f[1]) += da;
        dpos.col(f[2]) += db;
        dpos.col(f[0]) -= da + db;
    }
}

// ---------------------------------------------------------------------------
// Full-triplet forward/backward

template <class S>
struct TripletInputs {
    MatX<S> P6;  // 6 x n_p: partial-shape coordinates and unit normals
    MatX<S> Q6;  // 6 x n_q
    const std::vector<std::array<int, 3>>* faces = nullptr;  // Q connectivity
    MatX<S> gt_pos;  // 3 x n_q, column i = pi*(q_i)
    MatX<S> gt_n;    // 3 x n_q unit normals of the ground truth
    S alpha = S(0.1);
    bool differentiate_normals = true;
};

template <class S>
struct TripletTrace {
    EncoderCache<S> enc_p, enc_q;
    VecX<S> theta;
    GeneratorCache<S> gen;
    NormalCache<S> normals;
    S loss = S(0);
};

/// Loss of one triplet. Pass a trace to keep the intermediates needed by
/// triplet_backward; without one this is a lean inference-style pass.
template <class S>
S triplet_forward(const TripletInputs<S>& in, const NetworkWeightsT<S>& w,
                  TripletTrace<S>* trace = nullptr) {
    TripletTrace<S> local;
    TripletTrace<S>& tr = trace ? *trace : local;
    VecX<S> theta_part = encode_shape_t(in.P6, w.encoder, trace ? &tr.enc_p : nullptr);
    VecX<S> theta_whole = encode_shape_t(in.Q6, w.encoder, trace ? &tr.enc_q : nullptr);
    tr.theta.resize(theta_part.size() + theta_whole.size());
    tr.theta << theta_part, theta_whole;

    MatX<S> pred = generate_t(in.Q6, tr.theta, w.generator, trace ? &tr.gen : nullptr);
    if (in.alpha != S(0)) {
        mesh_normals_forward(pred, *in.faces, tr.normals);
        tr.loss = loss_6d(pred, tr.normals.normals, in.gt_pos, in.gt_n, in.alpha);
    } else {
        tr.loss = loss_6d(pred, MatX<S>(), in.gt_pos, MatX<S>(), in.alpha);
    }
    return tr.loss;
}

/// Exact reverse-mode gradients of triplet_forward's loss w.r.t. every
/// weight. Accumulates into `grads`. With differentiate_normals off the
/// predicted normals are treated as constants (stop-gradient).
template <class S>
void triplet_backward(const TripletInputs<S>& in, const NetworkWeightsT<S>& w,
                      const TripletTrace<S>& trace, NetworkWeightsT<S>& grads) {
    const MatX<S>& pred = trace.gen.out;
    MatX<S> dpred = S(2) * (pred - in.gt_pos);
    if (in.alpha != S(0) && in.differentiate_normals) {
        MatX<S> dn = (S(2) * in.alpha * in.alpha) * (trace.normals.normals - in.gt_n);
        mesh_normals_backward(pred, *in.faces, trace.normals, dn, dpred);
    }
    VecX<S> dtheta = generate_backward(w.generator, trace.gen, dpred, grads.generator);
    const int half = static_cast<int>(dtheta.size()) / 2;
    encode_shape_backward(w.encoder, trace.enc_p, VecX<S>(dtheta.head(half)), grads.encoder);
    encode_shape_backward(w.encoder, trace.enc_q, VecX<S>(dtheta.tail(half)), grads.encoder);
}

// ---------------------------------------------------------------------------
// Parameter plumbing: construction, visitation, Adam

template <class S, class Fn>
void visit_tensors(NetworkWeightsT<S>& w, Fn&& fn) {
    auto layer = [&](const std::string& name, DenseLayerT<S>& l) {
        fn(name + ".weight", l.weight.data(), std::vector<int>{l.fan_out(), l.fan_in()});
        fn(name + ".bias", l.bias.data(), std::vector<int>{l.fan_out()});
    };
    for (std::size_t i = 0; i < w.encoder.shared_mlp.size(); ++i)
        layer("encoder.mlp." + std::to_string(i), w.encoder.shared_mlp[i]);
    layer("encoder.post_pool", w.encoder.post_pool);
    for (std::size_t i = 0; i < w.generator.layers.size(); ++i)
        layer("generator." + std::to_string(i), w.generator.layers[i]);
}

template <class S>
std::int64_t parameter_count(const NetworkWeightsT<S>& w) {
    std::int64_t n = 0;
    visit_tensors(const_cast<NetworkWeightsT<S>&>(w),
                  [&](const std::string&, S*, const std::vector<int>& dims) {
                      std::int64_t c = 1;
                      for (int d : dims) c *= d;
                      n += c;
                  });
    return n;
}

/// Network of the given widths with uniform(-sqrt(1/fan_in),
/// +sqrt(1/fan_in)) weights and biases. Deterministic per seed.
template <class S>
NetworkWeightsT<S> make_network(const std::vector<int>& enc_widths, int post_width,
                                const std::vector<int>& gen_widths, int point_dim,
                                std::uint64_t seed);

/// Full-scale architecture (float production path).
NetworkWeights init_weights(std::uint64_t seed);

template <class S>
NetworkWeightsT<S> make_zero_like(const NetworkWeightsT<S>& w) {
    NetworkWeightsT<S> z;
    auto zero = [](const DenseLayerT<S>& l) {
        DenseLayerT<S> o;
        o.weight = MatX<S>::Zero(l.weight.rows(), l.weight.cols());
        o.bias = VecX<S>::Zero(l.bias.size());
        return o;
    };
    for (const auto& l : w.encoder.shared_mlp) z.encoder.shared_mlp.push_back(zero(l));
    z.encoder.post_pool = zero(w.encoder.post_pool);
    for (const auto& l : w.generator.layers) z.generator.layers.push_back(zero(l));
    z.generator.point_dim = w.generator.point_dim;
    return z;
}

template <class To, class From>
NetworkWeightsT<To> cast_network(const NetworkWeightsT<From>& w) {
    NetworkWeightsT<To> out;
    auto conv = [](const DenseLayerT<From>& l) {
        DenseLayerT<To> o;
        o.weight = l.weight.template cast<To>();
        o.bias = l.bias.template cast<To>();
        return o;
    };
    for (const auto& l : w.encoder.shared_mlp) out.encoder.shared_mlp.push_back(conv(l));
    out.encoder.post_pool = conv(w.encoder.post_pool);
    for (const auto& l : w.generator.layers) out.generator.layers.push_back(conv(l));
    out.generator.point_dim = w.generator.point_dim;
    return out;
}

template <class S>
struct AdamStateT {
    std::vector<VecX<S>> m, v;  // one flat pair per tensor, visit order
    std::int64_t t = 0;
};

using AdamState = AdamStateT<float>;

template <class S>
AdamStateT<S> make_adam_state(const NetworkWeightsT<S>& w) {
    AdamStateT<S> st;
    visit_tensors(const_cast<NetworkWeightsT<S>&>(w),
                  [&](const std::string&, S*, const std::vector<int>& dims) {
                      std::int64_t c = 1;
                      for (int d : dims) c *= d;
                      st.m.push_back(VecX<S>::Zero(c));
                      st.v.push_back(VecX<S>::Zero(c));
                  });
    return st;
}

/// One Adam update with bias correction:
///   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2,
///   w <- w - lr * m_hat / (sqrt(v_hat) + eps),  t <- t + 1.
template <class S>
void adam_step(NetworkWeightsT<S>& w, const NetworkWeightsT<S>& grads, AdamStateT<S>& st,
               S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8)) {
    std::vector<std::pair<S*, std::int64_t>> params, gs;
    auto collect = [](std::vector<std::pair<S*, std::int64_t>>& out) {
        return [&out](const std::string&, S* d, const std::vector<int>& dims) {
            std::int64_t c = 1;
            for (int x : dims) c *= x;
            out.push_back({d, c});
        };
    };
    visit_tensors(w, collect(params));
    visit_tensors(const_cast<NetworkWeightsT<S>&>(grads), collect(gs));
    if (params.size() != gs.size() || params.size() != st.m.size())
        throw InvalidInput("adam_step: weight/gradient/state tensor mismatch");

    st.t += 1;
    const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), static_cast<double>(st.t)));
    const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), static_cast<double>(st.t)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto [pw, n] = params[i];
        auto [pg, ng] = gs[i];
        if (n != ng || n != static_cast<std::int64_t>(st.m[i].size()))
            throw InvalidInput("adam_step: tensor size mismatch");
        S* m = st.m[i].data();
        S* v = st.v[i].data();
        for (std::int64_t j = 0; j < n; ++j) {
            const S g = pg[j];
            m[j] = beta1 * m[j] + (S(1) - beta1) * g;
            v[j] = beta2 * v[j] + (S(1) - beta2) * g * g;
            pw[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
    }
}

// ---------------------------------------------------------------------------
// PointCloud-facing convenience API (float production path)

struct LatentCode {
    Eigen::VectorXf theta_part;
    Eigen::VectorXf theta_whole;
    Eigen::VectorXf theta;  // [theta_part, theta_whole]
};

/// 6 x n network input (positions and unit normals) from a cloud.
/// Missing normals are an error: the architecture is 6D end to end.
MatX<float> to_net_input(const PointCloud& cloud);

/// Row-per-point wrappers around the templated core.
Eigen::VectorXf encode_shape(const Eigen::MatrixXf& points6, const EncoderWeights& w);
LatentCode encode_pair(const PointCloud& P, const PointCloud& Q, const EncoderWeights& w);
Eigen::MatrixXf generate(const Eigen::MatrixXf& q6, const Eigen::VectorXf& theta,
                         const GeneratorWeights& w);
float loss(const Eigen::MatrixXf& pred_positions, const Eigen::MatrixXf& pred_normals,
           const Eigen::MatrixXf& gt6, float alpha);

}  // namespace nrsc
