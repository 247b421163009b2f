#include "nrsc/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace nrsc {

namespace {

int resolve_threads(int threads) {
    if (threads > 0) return threads;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 2 : static_cast<int>(hw);
}

}  // namespace

TriMesh complete(const PointCloud& P, const TriMesh& Q, const NetworkWeights& weights,
                 int threads) {
    if (!P.has_normals()) throw InvalidInput("complete: P must carry normals");
    if (!Q.vertices.has_normals()) throw InvalidInput("complete: Q must carry vertex normals");
    const int nt = resolve_threads(threads);

    MatX<float> p6 = to_net_input(P);
    MatX<float> q6 = to_net_input(Q.vertices);
    VecX<float> theta_part = encode_shape_t<float>(p6, weights.encoder, nullptr, nt);
    VecX<float> theta_whole = encode_shape_t<float>(q6, weights.encoder, nullptr, nt);
    VecX<float> theta(theta_part.size() + theta_whole.size());
    theta << theta_part, theta_whole;

    MatX<float> out = generate_t<float>(q6, theta, weights.generator, nullptr, nt);

    TriMesh rec;
    rec.faces = Q.faces;
    rec.vertices.positions.resize(out.cols());
    for (int i = 0; i < out.cols(); ++i) rec.vertices.positions[i] = out.col(i).cast<double>();
    rec.vertices.normals = vertex_normals(rec);
    return rec;
}

TriMesh complete(const PointCloud& P, const TriMesh& Q, const Checkpoint& ck,
                 TrainMode invocation_mode, int threads) {
    if (ck.config.mode != invocation_mode)
        throw InvalidInput("complete: checkpoint was trained in '" + to_string(ck.config.mode)
                           + "' mode but was invoked in '" + to_string(invocation_mode) + "' mode");
    return complete(P, Q, ck.weights, threads);
}

namespace {

struct TrimmedMatch {
    std::vector<int> kept;            // P indices, ascending
    std::vector<int> rec_index;       // matched reconstruction index per kept point
    double rms = 0.0;
};

// Match every P point against the moving reconstruction T(rec) by querying
// the fixed tree with T^-1(p) (rigid maps preserve distances), then keep
// the best `keep` matches.
TrimmedMatch match_and_trim(const KdTree& tree, const std::vector<Vec3>& pts,
                            const RigidTransform& t, std::size_t keep) {
    const std::size_t n = pts.size();
    const RigidTransform inv = t.inverse();
    std::vector<std::pair<double, int>> match(n);
    for (std::size_t i = 0; i < n; ++i) {
        double d2 = 0;
        int j = tree.nearest(inv.apply(pts[i]), &d2);
        match[i] = {d2, j};
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + (keep - 1), order.end(), [&](int a, int b) {
        if (match[a].first != match[b].first) return match[a].first < match[b].first;
        return a < b;
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());

    TrimmedMatch out;
    out.kept = std::move(order);
    out.rec_index.reserve(keep);
    double ss = 0.0;
    for (int i : out.kept) {
        out.rec_index.push_back(match[i].second);
        ss += match[i].first;
    }
    out.rms = std::sqrt(ss / static_cast<double>(keep));
    return out;
}

// One trimmed-ICP descent from the given start. Asserts the monotone
// trimmed objective every accepted iteration.
RigidTransform icp_descend(const KdTree& tree, const std::vector<Vec3>& rec,
                           const std::vector<Vec3>& pts, RigidTransform t, int iters,
                           std::size_t keep, double* final_rms) {
    double prev_rms = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < iters; ++iter) {
        TrimmedMatch m = match_and_trim(tree, pts, t, keep);

        Vec3 c_src = Vec3::Zero(), c_dst = Vec3::Zero();
        for (std::size_t k = 0; k < m.kept.size(); ++k) {
            c_src += t.apply(rec[m.rec_index[k]]);
            c_dst += pts[m.kept[k]];
        }
        c_src /= static_cast<double>(m.kept.size());
        c_dst /= static_cast<double>(m.kept.size());

        Mat3 h = Mat3::Zero();
        for (std::size_t k = 0; k < m.kept.size(); ++k) {
            Vec3 s = t.apply(rec[m.rec_index[k]]) - c_src;
            Vec3 d = pts[m.kept[k]] - c_dst;
            h += s * d.transpose();
        }

        Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const Vec3 sv = svd.singularValues();
        if (sv[1] < 1e-12 * std::max(sv[0], 1e-300))
            throw DegenerateGeometry("icp_align: matched points are (near) collinear");
        Mat3 u = svd.matrixU(), v = svd.matrixV();
        Mat3 d = Mat3::Identity();
        if ((v * u.transpose()).determinant() < 0) d(2, 2) = -1.0;  // no reflections
        RigidTransform step;
        step.rotation = v * d * u.transpose();
        step.translation = c_dst - step.rotation * c_src;

        if ((step.rotation.transpose() * step.rotation - Mat3::Identity()).norm() > 1e-9
            || std::abs(step.rotation.determinant() - 1.0) > 1e-9)
            throw std::logic_error("icp_align: solve returned a non-rotation");

        RigidTransform next = step.compose(t);
        double rms_after = 0.0;
        for (std::size_t k = 0; k < m.kept.size(); ++k)
            rms_after += (next.apply(rec[m.rec_index[k]]) - pts[m.kept[k]]).squaredNorm();
        rms_after = std::sqrt(rms_after / static_cast<double>(m.kept.size()));

        // least squares can only improve the trimmed objective
        if (rms_after > m.rms + 1e-9 * (1.0 + m.rms))
            throw std::logic_error("icp_align: trimmed RMS increased");
        t = next;

        if (std::abs(prev_rms - rms_after) < 1e-9) {
            prev_rms = rms_after;
            break;
        }
        prev_rms = rms_after;
    }
    if (final_rms)
        *final_rms = match_and_trim(tree, pts, t, keep).rms;
    return t;
}

// Start candidates: identity first, then rotations about evenly spread
// axes, all with centroids pre-aligned. A plain descent only converges
// from ~15-20 degrees away, so the start set has to blanket the rotations
// the callers may face.
const std::vector<Mat3>& candidate_rotations() {
    static const std::vector<Mat3> rots = [] {
        std::vector<Mat3> out;
        out.push_back(Mat3::Identity());
        // icosahedron vertices plus once-subdivided midpoints: 42 axes
        const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
        std::vector<Vec3> axes = {{-1, phi, 0}, {1, phi, 0},  {-1, -phi, 0}, {1, -phi, 0},
                                  {0, -1, phi}, {0, 1, phi},  {0, -1, -phi}, {0, 1, -phi},
                                  {phi, 0, -1}, {phi, 0, 1},  {-phi, 0, -1}, {-phi, 0, 1}};
        const int ico_faces[20][3] = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10},
                                      {0, 10, 11}, {1, 5, 9},  {5, 11, 4},  {11, 10, 2},
                                      {10, 7, 6},  {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
                                      {3, 2, 6},   {3, 6, 8},  {3, 8, 9},   {4, 9, 5},
                                      {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
        std::vector<Vec3> mids;
        for (const auto& f : ico_faces)
            for (int e = 0; e < 3; ++e) {
                Vec3 m = (axes[f[e]] + axes[f[(e + 1) % 3]]).normalized();
                bool dup = false;
                for (const Vec3& x : mids)
                    if ((x - m).norm() < 1e-9) dup = true;
                if (!dup) mids.push_back(m);
            }
        for (Vec3& a : axes) a.normalize();
        axes.insert(axes.end(), mids.begin(), mids.end());
        for (const Vec3& axis : axes)
            for (double deg : {15.0, 30.0, 45.0, 60.0})
                out.push_back(Eigen::AngleAxisd(deg * M_PI / 180.0, axis).toRotationMatrix());
        return out;
    }();
    return rots;
}

}  // namespace

RigidTransform icp_align(const PointCloud& reconstruction, const PointCloud& P, int max_iters,
                         double trim_fraction) {
    if (reconstruction.empty() || P.empty()) throw InvalidInput("icp_align: empty cloud");
    if (!(trim_fraction >= 0.0 && trim_fraction < 1.0))
        throw InvalidInput("icp_align: trim_fraction must be in [0, 1)");
    if (max_iters <= 0) return {};

    const std::vector<Vec3>& rec = reconstruction.positions;
    const std::vector<Vec3>& pts = P.positions;
    const KdTree tree(rec);

    auto keep_of = [&](std::size_t n) {
        return std::max<std::size_t>(
            3, std::min(n, static_cast<std::size_t>(std::llround((1.0 - trim_fraction) * n))));
    };

    // deterministic subsample of P for screening and the coarse stage
    std::vector<Vec3> sub;
    const std::size_t sub_target = 160;
    if (pts.size() <= sub_target) {
        sub = pts;
    } else {
        sub.reserve(sub_target);
        for (std::size_t i = 0; i < sub_target; ++i)
            sub.push_back(pts[i * pts.size() / sub_target]);
    }
    const std::size_t keep_sub = keep_of(sub.size());

    Vec3 mu_rec = Vec3::Zero(), mu_p = Vec3::Zero();
    for (const Vec3& x : rec) mu_rec += x;
    mu_rec /= static_cast<double>(rec.size());
    for (const Vec3& x : pts) mu_p += x;
    mu_p /= static_cast<double>(pts.size());

    // screen all starts by trimmed RMS, descend briefly from the best few
    const auto& rotations = candidate_rotations();
    std::vector<std::pair<double, int>> screened;
    screened.reserve(rotations.size());
    for (std::size_t c = 0; c < rotations.size(); ++c) {
        RigidTransform t;
        t.rotation = rotations[c];
        t.translation = mu_p - t.rotation * mu_rec;
        screened.push_back({match_and_trim(tree, sub, t, keep_sub).rms, static_cast<int>(c)});
    }
    std::sort(screened.begin(), screened.end());

    const int coarse_starts = std::min<int>(6, static_cast<int>(screened.size()));
    RigidTransform best;
    double best_rms = std::numeric_limits<double>::infinity();
    bool any_ok = false;
    std::exception_ptr first_error;
    for (int k = 0; k < coarse_starts; ++k) {
        RigidTransform t;
        t.rotation = rotations[screened[k].second];
        t.translation = mu_p - t.rotation * mu_rec;
        try {
            double rms = 0.0;
            RigidTransform out = icp_descend(tree, rec, sub, t, 15, keep_sub, &rms);
            if (rms < best_rms) {
                best_rms = rms;
                best = out;
            }
            any_ok = true;
        } catch (const DegenerateGeometry&) {
            if (!first_error) first_error = std::current_exception();
        }
    }
    if (!any_ok) std::rethrow_exception(first_error);

    return icp_descend(tree, rec, pts, best, max_iters, keep_of(pts.size()), nullptr);
}

Correspondence recover_correspondence(const PointCloud& P,
                                      const PointCloud& aligned_reconstruction,
                                      const TriMesh& Q) {
    if (aligned_reconstruction.size() != Q.vertex_count())
        throw InvalidInput("recover_correspondence: reconstruction must carry Q's indexing");
    return nearest_neighbors(P, aligned_reconstruction);
}

}  // namespace nrsc
