#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "nrsc/net.hpp"
#include "nrsc/rng.hpp"

using namespace nrsc;

namespace {

// Straightforward per-point matrix arithmetic in double, independent of
// the production kernels.
template <class S>
VecX<double> oracle_encode(const MatX<S>& X, const EncoderWeightsT<S>& w) {
    const int n = static_cast<int>(X.cols());
    std::vector<VecX<double>> feats(n);
    for (int p = 0; p < n; ++p) {
        VecX<double> h = X.col(p).template cast<double>();
        for (const auto& layer : w.shared_mlp) {
            VecX<double> z = layer.weight.template cast<double>() * h
                             + layer.bias.template cast<double>();
            h = z.cwiseMax(0.0);
        }
        feats[p] = h;
    }
    VecX<double> pooled = feats[0];
    for (int p = 1; p < n; ++p) pooled = pooled.cwiseMax(feats[p]);
    VecX<double> code = w.post_pool.weight.template cast<double>() * pooled
                        + w.post_pool.bias.template cast<double>();
    return code.cwiseMax(0.0);
}

template <class S>
MatX<double> oracle_generate(const MatX<S>& Q, const VecX<S>& theta,
                             const GeneratorWeightsT<S>& w) {
    const int n = static_cast<int>(Q.cols());
    MatX<double> out(w.output_dim(), n);
    for (int p = 0; p < n; ++p) {
        VecX<double> h(Q.rows() + theta.size());
        h << Q.col(p).template cast<double>(), theta.template cast<double>();
        for (std::size_t l = 0; l < w.layers.size(); ++l) {
            VecX<double> z = w.layers[l].weight.template cast<double>() * h
                             + w.layers[l].bias.template cast<double>();
            h = (l + 1 < w.layers.size()) ? VecX<double>(z.cwiseMax(0.0))
                                          : VecX<double>(z.array().tanh().matrix());
        }
        out.col(p) = h;
    }
    return out;
}

MatX<float> random_points6(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    std::normal_distribution<double> g(0, 1);
    MatX<float> x(6, n);
    for (int p = 0; p < n; ++p) {
        for (int r = 0; r < 3; ++r) x(r, p) = static_cast<float>(u(rng));
        Eigen::Vector3d nrm(g(rng), g(rng), g(rng));
        nrm.normalize();
        x.col(p).tail<3>() = nrm.cast<float>();
    }
    return x;
}

NetworkWeightsT<double> toy_network(std::uint64_t seed) {
    return make_network<double>({6, 8, 12, 16}, 16, {38, 20, 12, 3}, 6, seed);
}

TripletInputs<double> toy_inputs(std::uint64_t seed, double alpha, bool diff_normals,
                                 const std::vector<std::array<int, 3>>* faces) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.7, 0.7);
    std::normal_distribution<double> g(0, 1);
    TripletInputs<double> in;
    in.P6 = random_points6(5, seed * 3 + 1).cast<double>();
    in.Q6 = random_points6(4, seed * 3 + 2).cast<double>();
    in.faces = faces;
    in.gt_pos.resize(3, 4);
    in.gt_n.resize(3, 4);
    for (int i = 0; i < 4; ++i) {
        in.gt_pos.col(i) = Eigen::Vector3d(u(rng), u(rng), u(rng));
        Eigen::Vector3d nrm(g(rng), g(rng), g(rng));
        in.gt_n.col(i) = nrm.normalized();
    }
    in.alpha = alpha;
    in.differentiate_normals = diff_normals;
    return in;
}

// closed tetrahedron over Q's 4 points
const std::vector<std::array<int, 3>> kTetFaces = {{0, 1, 2}, {0, 2, 3}, {0, 3, 1}, {1, 3, 2}};

}  // namespace

TEST_CASE("encode_shape single point pools to its own features") {
    NetworkWeights w = make_network<float>({6, 8, 12, 16}, 16, {38, 20, 12, 3}, 6, 3);
    MatX<float> x = random_points6(1, 9);
    EncoderCache<float> cache;
    VecX<float> code = encode_shape_t<float>(x, w.encoder, &cache);
    for (int ch = 0; ch < cache.pooled.size(); ++ch) {
        CHECK(cache.argmax[ch] == 0);
        CHECK(cache.pooled[ch] == cache.acts.back()(ch, 0));
    }
    CHECK(code.size() == 16);
    for (int i = 0; i < code.size(); ++i) CHECK(code[i] >= 0.0f);  // final ReLU
}

TEST_CASE("encode_shape is bit-exactly permutation invariant") {
    NetworkWeights w = init_weights(0);
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 3 + static_cast<int>(rng() % 60);
        MatX<float> x = random_points6(n, rng());
        VecX<float> a = encode_shape_t<float>(x, w.encoder);

        std::vector<int> perm(n);
        for (int i = 0; i < n; ++i) perm[i] = i;
        std::shuffle(perm.begin(), perm.end(), rng);
        MatX<float> xs(6, n);
        for (int i = 0; i < n; ++i) xs.col(i) = x.col(perm[i]);
        VecX<float> b = encode_shape_t<float>(xs, w.encoder);

        REQUIRE(a.size() == b.size());
        CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
    }
}

TEST_CASE("encode_shape matches the plain matrix-arithmetic oracle") {
    NetworkWeights w = init_weights(0);
    MatX<float> x = random_points6(3, 0);
    VecX<float> got = encode_shape_t<float>(x, w.encoder);
    VecX<double> want = oracle_encode(x, w.encoder);
    REQUIRE(got.size() == want.size());
    for (int i = 0; i < got.size(); ++i)
        CHECK(std::abs(static_cast<double>(got[i]) - want[i])
              <= 1e-6 * std::max(1.0, std::abs(want[i])));
}

TEST_CASE("encode_shape threaded result is bit-identical") {
    NetworkWeights w = init_weights(4);
    MatX<float> x = random_points6(257, 5);
    VecX<float> a = encode_shape_t<float>(x, w.encoder, nullptr, 1);
    VecX<float> b = encode_shape_t<float>(x, w.encoder, nullptr, 2);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
}

TEST_CASE("encode_pair: weight sharing, halves, and the swap") {
    NetworkWeights w = init_weights(1);
    PointCloud p;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < 20; ++i) {
        p.positions.emplace_back(u(rng), u(rng), u(rng));
        p.normals.push_back(Vec3(u(rng), u(rng), u(rng) + 1.5).normalized());
    }
    PointCloud q = p;

    LatentCode same = encode_pair(p, q, w.encoder);
    CHECK(same.theta_part == same.theta_whole);  // identical weights, identical input
    CHECK(same.theta.head(same.theta_part.size()) == same.theta_part);
    CHECK(same.theta.tail(same.theta_whole.size()) == same.theta_whole);

    q.positions[3] += Vec3(0.2, 0, 0);
    LatentCode ab = encode_pair(p, q, w.encoder);
    LatentCode ba = encode_pair(q, p, w.encoder);
    CHECK(ab.theta_part == ba.theta_whole);
    CHECK(ab.theta_whole == ba.theta_part);

    VecX<double> oracle_p = oracle_encode(to_net_input(p), w.encoder);
    for (int i = 0; i < ab.theta_part.size(); ++i)
        CHECK(std::abs(ab.theta_part[i] - oracle_p[i]) <= 1e-6 * std::max(1.0, oracle_p[i]));

    PointCloud no_normals;
    no_normals.positions = p.positions;
    CHECK_THROWS_AS(encode_pair(no_normals, q, w.encoder), InvalidInput);
}

TEST_CASE("generate: pointwise, bounded, duplicate rows bit-exact") {
    NetworkWeights w = init_weights(2);
    std::mt19937_64 rng(8);
    const int n = 40;
    MatX<float> q = random_points6(n, 11);
    q.col(17) = q.col(3);  // duplicated input point
    VecX<float> theta = VecX<float>::Zero(2048);
    for (int i = 0; i < theta.size(); ++i)
        theta[i] = static_cast<float>((rng() % 1000) / 1000.0 * 0.2);

    MatX<float> out = generate_t<float>(q, theta, w.generator);
    CHECK(out.rows() == 3);
    CHECK(out.cols() == n);
    CHECK(std::memcmp(out.col(17).data(), out.col(3).data(), sizeof(float) * 3) == 0);
    for (int i = 0; i < out.size(); ++i) {
        CHECK(out.data()[i] > -1.0f);
        CHECK(out.data()[i] < 1.0f);
    }

    // output row i depends only on input row i and theta
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    MatX<float> qs(6, n);
    for (int i = 0; i < n; ++i) qs.col(i) = q.col(perm[i]);
    MatX<float> out_s = generate_t<float>(qs, theta, w.generator);
    for (int i = 0; i < n; ++i)
        CHECK(std::memcmp(out_s.col(i).data(), out.col(perm[i]).data(), sizeof(float) * 3) == 0);

    // threaded inference is bit-identical
    MatX<float> out_t = generate_t<float>(q, theta, w.generator, nullptr, 2);
    CHECK(std::memcmp(out_t.data(), out.data(), sizeof(float) * out.size()) == 0);
}

TEST_CASE("generate matches hand arithmetic at tiny widths") {
    NetworkWeightsT<float> w = make_network<float>({6, 4, 8}, 8, {22, 5, 3}, 6, 0);
    MatX<float> q = random_points6(2, 21);
    VecX<float> theta = VecX<float>::LinSpaced(16, -0.3f, 0.4f);
    MatX<float> got = generate_t<float>(q, theta, w.generator);
    MatX<double> want = oracle_generate(q, theta, w.generator);
    for (int p = 0; p < 2; ++p)
        for (int r = 0; r < 3; ++r)
            CHECK(std::abs(static_cast<double>(got(r, p)) - want(r, p)) <= 1e-6);
}

TEST_CASE("loss values and errors") {
    MatX<float> pos(3, 1), nrm(3, 1), gt_pos(3, 1), gt_n(3, 1);
    pos.col(0) << 0.1f, 0.2f, 0.3f;
    gt_pos = pos;
    nrm.col(0) << 0, 0, 1;
    gt_n = nrm;
    CHECK(loss_6d<float>(pos, nrm, gt_pos, gt_n, 0.1f) == 0.0f);

    MatX<float> off = gt_pos;
    off(0, 0) += 1.0f;
    CHECK(loss_6d<float>(off, MatX<float>(), gt_pos, MatX<float>(), 0.0f)
          == doctest::Approx(1.0));

    // equal positions, flipped normal: alpha^2 * ||(0,0,1)-(0,0,-1)||^2 = 0.01*4
    MatX<float> flipped = gt_n;
    flipped(2, 0) = -1.0f;
    CHECK(loss_6d<float>(pos, flipped, gt_pos, gt_n, 0.1f) == doctest::Approx(0.04));

    MatX<float> wrong(3, 2);
    wrong.setZero();
    CHECK_THROWS_AS(loss_6d<float>(wrong, MatX<float>(), gt_pos, MatX<float>(), 0.0f),
                    InvalidInput);

    // row-major public wrapper
    Eigen::MatrixXf pred(1, 3), predn(1, 3), gt6(1, 6);
    pred << 0, 0, 0;
    predn << 0, 0, 1;
    gt6 << 0, 0, 0, 0, 0, 1;
    CHECK(loss(pred, predn, gt6, 0.1f) == 0.0f);
}

TEST_CASE("backward at a zero-loss configuration gives zero gradients") {
    NetworkWeightsT<double> w = toy_network(5);
    TripletInputs<double> in = toy_inputs(6, 0.1, true, &kTetFaces);

    // make the ground truth equal the current prediction: exact minimum
    TripletTrace<double> trace;
    triplet_forward(in, w, &trace);
    in.gt_pos = trace.gen.out;
    in.gt_n = trace.normals.normals;

    TripletTrace<double> trace2;
    double l = triplet_forward(in, w, &trace2);
    CHECK(l == 0.0);
    NetworkWeightsT<double> grads = make_zero_like(w);
    triplet_backward(in, w, trace2, grads);
    visit_tensors(grads, [&](const std::string&, double* d, const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int x : dims) n *= x;
        for (std::int64_t i = 0; i < n; ++i) CHECK(std::abs(d[i]) < 1e-7);
    });
}

TEST_CASE("analytic gradients match central finite differences") {
    for (bool diff_normals : {true, false}) {
        for (double alpha : {0.1, 0.0}) {
            NetworkWeightsT<double> w = toy_network(7);
            TripletInputs<double> in = toy_inputs(8, alpha, diff_normals, &kTetFaces);

            TripletTrace<double> trace;
            triplet_forward(in, w, &trace);
            NetworkWeightsT<double> grads = make_zero_like(w);
            triplet_backward(in, w, trace, grads);

            std::vector<std::pair<double*, std::int64_t>> params, gs;
            visit_tensors(w, [&](const std::string&, double* d, const std::vector<int>& dims) {
                std::int64_t n = 1;
                for (int x : dims) n *= x;
                params.push_back({d, n});
            });
            visit_tensors(grads, [&](const std::string&, double* d, const std::vector<int>& dims) {
                std::int64_t n = 1;
                for (int x : dims) n *= x;
                gs.push_back({d, n});
            });

            const double h = 1e-3;
            double worst = 0.0;
            for (std::size_t t = 0; t < params.size(); ++t) {
                double scale = 0.0;
                for (std::int64_t i = 0; i < gs[t].second; ++i)
                    scale = std::max(scale, std::abs(gs[t].first[i]));
                for (std::int64_t i = 0; i < params[t].second; ++i) {
                    double* p = params[t].first + i;
                    const double saved = *p;
                    *p = saved + h;
                    double lp = triplet_forward(in, w, static_cast<TripletTrace<double>*>(nullptr));
                    *p = saved - h;
                    double lm = triplet_forward(in, w, static_cast<TripletTrace<double>*>(nullptr));
                    *p = saved;
                    const double fd = (lp - lm) / (2 * h);
                    const double an = gs[t].first[i];
                    const double rel =
                        std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6 * scale, 1e-12});
                    worst = std::max(worst, rel);
                }
            }
            INFO("alpha=" << alpha << " diff_normals=" << diff_normals << " worst rel=" << worst);
            CHECK(worst < 1e-4);
        }
    }
}

TEST_CASE("duplicating a point doubles its gradient contribution") {
    NetworkWeightsT<double> w = toy_network(9);

    auto grads_for = [&](const MatX<double>& q6, const MatX<double>& gt_pos) {
        TripletInputs<double> in;
        in.P6 = random_points6(5, 31).cast<double>();
        in.Q6 = q6;
        in.faces = nullptr;
        in.gt_pos = gt_pos;
        in.alpha = 0.0;  // position-only form so Q rows stay independent
        TripletTrace<double> trace;
        triplet_forward(in, w, &trace);
        NetworkWeightsT<double> g = make_zero_like(w);
        triplet_backward(in, w, trace, g);
        return g;
    };

    MatX<double> q2 = random_points6(2, 32).cast<double>();
    MatX<double> gt2 = MatX<double>::Zero(3, 2);
    MatX<double> q3(6, 3);
    q3 << q2, q2.col(1);  // duplicate the second point
    MatX<double> gt3 = MatX<double>::Zero(3, 3);
    MatX<double> q1 = q2.leftCols(1);
    MatX<double> gt1 = MatX<double>::Zero(3, 1);

    NetworkWeightsT<double> a = grads_for(q2, gt2);   // {x, y}
    NetworkWeightsT<double> b = grads_for(q3, gt3);   // {x, y, y}
    NetworkWeightsT<double> d = grads_for(q1, gt1);   // {x}

    // sum-form loss: grad({x,y,y}) - grad({x,y}) == grad({x,y}) - grad({x})
    // for the generator weights (theta is unchanged by the duplication)
    std::vector<std::pair<double*, std::int64_t>> pa, pb, pd;
    auto collect = [](NetworkWeightsT<double>& w_, std::vector<std::pair<double*, std::int64_t>>& out) {
        visit_tensors(w_, [&](const std::string& name, double* p, const std::vector<int>& dims) {
            if (name.rfind("generator.", 0) != 0) return;
            std::int64_t n = 1;
            for (int x : dims) n *= x;
            out.push_back({p, n});
        });
    };
    collect(a, pa);
    collect(b, pb);
    collect(d, pd);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t t = 0; t < pa.size(); ++t)
        for (std::int64_t i = 0; i < pa[t].second; ++i) {
            double lhs = pb[t].first[i] - pa[t].first[i];
            double rhs = pa[t].first[i] - pd[t].first[i];
            CHECK(std::abs(lhs - rhs) < 1e-10);
        }
}

TEST_CASE("maxpool duplication keeps theta bit-identical (ties to lowest index)") {
    NetworkWeights w = init_weights(3);
    MatX<float> x = random_points6(10, 41);
    MatX<float> xdup(6, 11);
    xdup << x, x.col(4);
    VecX<float> a = encode_shape_t<float>(x, w.encoder);
    VecX<float> b = encode_shape_t<float>(xdup, w.encoder);
    CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);

    EncoderCache<float> cache;
    encode_shape_t<float>(xdup, w.encoder, &cache);
    for (int ch = 0; ch < static_cast<int>(cache.argmax.size()); ++ch)
        CHECK(cache.argmax[ch] != 10);  // the duplicate never wins a tie
}

TEST_CASE("adam_step hand-checked cases") {
    // single 1x1 layer network
    NetworkWeightsT<float> w;
    w.encoder.shared_mlp.push_back({MatX<float>::Constant(1, 1, 2.0f),
                                    VecX<float>::Zero(1)});
    w.encoder.post_pool = {MatX<float>::Constant(1, 1, 1.0f), VecX<float>::Zero(1)};
    w.generator.layers.push_back({MatX<float>::Constant(1, 3, 1.0f), VecX<float>::Zero(1)});
    w.generator.point_dim = 1;
    AdamStateT<float> st = make_adam_state(w);

    NetworkWeightsT<float> zero_g = make_zero_like(w);
    NetworkWeightsT<float> before = w;
    adam_step(w, zero_g, st, 0.001f, 0.9f);
    CHECK(st.t == 1);
    CHECK(w.encoder.shared_mlp[0].weight(0, 0) == before.encoder.shared_mlp[0].weight(0, 0));

    // lr = 0: weights unchanged, state still updated
    NetworkWeightsT<float> g = make_zero_like(w);
    g.encoder.shared_mlp[0].weight(0, 0) = 0.5f;
    adam_step(w, g, st, 0.0f, 0.9f);
    CHECK(st.t == 2);
    CHECK(w.encoder.shared_mlp[0].weight(0, 0) == before.encoder.shared_mlp[0].weight(0, 0));
    CHECK(st.m[0][0] != 0.0f);

    // fresh state, g = 0.5 at t = 1: m_hat = 0.5, v_hat = 0.25,
    // step = lr * 0.5 / (0.5 + eps) ~= lr
    NetworkWeightsT<float> w2 = before;
    AdamStateT<float> st2 = make_adam_state(w2);
    const float lr = 0.001f;
    adam_step(w2, g, st2, lr, 0.9f);
    const float dw = before.encoder.shared_mlp[0].weight(0, 0)
                     - w2.encoder.shared_mlp[0].weight(0, 0);
    CHECK(dw == doctest::Approx(lr).epsilon(1e-4));
}

TEST_CASE("init_weights determinism, bounds, and mean") {
    NetworkWeights a = init_weights(123);
    NetworkWeights b = init_weights(123);
    bool identical = true;
    std::vector<std::pair<float*, std::int64_t>> ta, tb;
    visit_tensors(a, [&](const std::string&, float* d, const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int x : dims) n *= x;
        ta.push_back({d, n});
    });
    visit_tensors(b, [&](const std::string&, float* d, const std::vector<int>& dims) {
        std::int64_t n = 1;
        for (int x : dims) n *= x;
        tb.push_back({d, n});
    });
    for (std::size_t t = 0; t < ta.size(); ++t)
        if (std::memcmp(ta[t].first, tb[t].first, sizeof(float) * ta[t].second) != 0)
            identical = false;
    CHECK(identical);

    NetworkWeights c = init_weights(124);
    CHECK(c.encoder.shared_mlp[0].weight(0, 0) != a.encoder.shared_mlp[0].weight(0, 0));

    // post_pool has fan_in 1024: all entries within 1/32
    const auto& pp = a.encoder.post_pool.weight;
    double mean = 0.0;
    for (int i = 0; i < pp.size(); ++i) {
        CHECK(std::abs(pp.data()[i]) <= 1.0f / 32.0f);
        mean += pp.data()[i];
    }
    mean /= pp.size();
    const double sigma = (1.0 / 32.0) / std::sqrt(3.0);  // std of U(-b, b)
    CHECK(std::abs(mean) < 3.0 * sigma / std::sqrt(static_cast<double>(pp.size())));
}

TEST_CASE("mutating encoder weights moves both code halves identically") {
    NetworkWeights w = init_weights(6);
    PointCloud p;
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int i = 0; i < 15; ++i) {
        p.positions.emplace_back(u(rng), u(rng), u(rng));
        p.normals.push_back(Vec3(0, 0, 1));
    }
    LatentCode before = encode_pair(p, p, w.encoder);
    w.encoder.shared_mlp[1].weight(3, 5) += 0.25f;
    LatentCode after = encode_pair(p, p, w.encoder);
    CHECK(after.theta_part == after.theta_whole);
    CHECK(before.theta_part != after.theta_part);
}
