#include "nrsc/net.hpp"

#include <random>

#include "nrsc/rng.hpp"

namespace nrsc {

namespace {

template <class S>
DenseLayerT<S> init_layer(int out, int in, std::mt19937_64& rng) {
    const double bound = std::sqrt(1.0 / in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayerT<S> l;
    l.weight.resize(out, in);
    l.bias.resize(out);
    // fill in logical row-major order so the layout stays an implementation detail
    for (int r = 0; r < out; ++r)
        for (int c = 0; c < in; ++c) l.weight(r, c) = static_cast<S>(dist(rng));
    for (int r = 0; r < out; ++r) l.bias[r] = static_cast<S>(dist(rng));
    return l;
}

}  // namespace

template <class S>
NetworkWeightsT<S> make_network(const std::vector<int>& enc_widths, int post_width,
                                const std::vector<int>& gen_widths, int point_dim,
                                std::uint64_t seed) {
    if (enc_widths.size() < 2 || gen_widths.size() < 2)
        throw InvalidInput("make_network: need at least one layer per stack");
    if (gen_widths.front() != point_dim + 2 * post_width)
        throw InvalidInput("make_network: generator input must be point_dim + 2*code size");

    std::mt19937_64 rng(splitmix64(seed));
    NetworkWeightsT<S> w;
    for (std::size_t i = 0; i + 1 < enc_widths.size(); ++i)
        w.encoder.shared_mlp.push_back(init_layer<S>(enc_widths[i + 1], enc_widths[i], rng));
    w.encoder.post_pool = init_layer<S>(post_width, enc_widths.back(), rng);
    for (std::size_t i = 0; i + 1 < gen_widths.size(); ++i)
        w.generator.layers.push_back(init_layer<S>(gen_widths[i + 1], gen_widths[i], rng));
    w.generator.point_dim = point_dim;
    return w;
}

template NetworkWeightsT<float> make_network<float>(const std::vector<int>&, int,
                                                    const std::vector<int>&, int, std::uint64_t);
template NetworkWeightsT<double> make_network<double>(const std::vector<int>&, int,
                                                      const std::vector<int>&, int, std::uint64_t);

NetworkWeights init_weights(std::uint64_t seed) {
    return make_network<float>(encoder_widths(), post_pool_width(), generator_widths(), 6, seed);
}

MatX<float> to_net_input(const PointCloud& cloud) {
    if (cloud.empty()) throw InvalidInput("to_net_input: empty cloud");
    if (!cloud.has_normals()) throw InvalidInput("to_net_input: cloud is missing normals");
    MatX<float> x(6, cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        x.col(i).head<3>() = cloud.positions[i].cast<float>();
        x.col(i).tail<3>() = cloud.normals[i].cast<float>();
    }
    return x;
}

Eigen::VectorXf encode_shape(const Eigen::MatrixXf& points6, const EncoderWeights& w) {
    if (points6.cols() != w.input_dim())
        throw InvalidInput("encode_shape: expected one row per point with "
                           + std::to_string(w.input_dim()) + " features");
    MatX<float> x = points6.transpose();
    return encode_shape_t<float>(x, w);
}

LatentCode encode_pair(const PointCloud& P, const PointCloud& Q, const EncoderWeights& w) {
    LatentCode code;
    code.theta_part = encode_shape_t<float>(to_net_input(P), w);
    code.theta_whole = encode_shape_t<float>(to_net_input(Q), w);
    code.theta.resize(code.theta_part.size() + code.theta_whole.size());
    code.theta << code.theta_part, code.theta_whole;
    return code;
}

Eigen::MatrixXf generate(const Eigen::MatrixXf& q6, const Eigen::VectorXf& theta,
                         const GeneratorWeights& w) {
    if (q6.cols() != w.point_dim)
        throw InvalidInput("generate: expected one row per point with "
                           + std::to_string(w.point_dim) + " features");
    MatX<float> x = q6.transpose();
    MatX<float> out = generate_t<float>(x, theta, w);
    return out.transpose();
}

float loss(const Eigen::MatrixXf& pred_positions, const Eigen::MatrixXf& pred_normals,
           const Eigen::MatrixXf& gt6, float alpha) {
    if (gt6.cols() != 6 || pred_positions.cols() != 3)
        throw InvalidInput("loss: expected n x 3 predictions and n x 6 ground truth");
    if (gt6.rows() != pred_positions.rows())
        throw InvalidInput("loss: prediction/ground-truth row count mismatch");
    MatX<float> pred_pos = pred_positions.transpose();
    MatX<float> gt_pos = gt6.leftCols(3).transpose();
    if (alpha == 0.0f) return loss_6d<float>(pred_pos, MatX<float>(), gt_pos, MatX<float>(), 0.0f);
    if (pred_normals.rows() != pred_positions.rows() || pred_normals.cols() != 3)
        throw InvalidInput("loss: predicted normals must be n x 3");
    MatX<float> pred_n = pred_normals.transpose();
    MatX<float> gt_n = gt6.rightCols(3).transpose();
    return loss_6d<float>(pred_pos, pred_n, gt_pos, gt_n, alpha);
}

}  // namespace nrsc
