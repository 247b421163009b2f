#include "nrsc/partiality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace nrsc {

ViewSpec make_view_for(const TriMesh& mesh, double azimuth, int image_resolution) {
    ViewSpec v;
    v.azimuth = azimuth;
    v.image_resolution = image_resolution;
    // The tolerance must cover the depth variation across one pixel
    // (pixel footprint times surface slope), else steep front-facing
    // regions self-occlude. 6/res budgets slopes up to ~80 degrees.
    v.depth_epsilon =
        bounding_box_diagonal(mesh.vertices) * (1e-3 + 6.0 / image_resolution);
    if (v.depth_epsilon <= 0) v.depth_epsilon = 1e-9;
    return v;
}

std::vector<ViewSpec> equally_spaced_views(int count) {
    if (count < 1) throw InvalidInput("equally_spaced_views: count must be >= 1");
    std::vector<ViewSpec> views(count);
    for (int k = 0; k < count; ++k)
        views[k].azimuth = 2.0 * M_PI * k / count;
    return views;
}

Vec3 view_direction(const ViewSpec& view) {
    double ca = std::cos(view.azimuth), sa = std::sin(view.azimuth);
    double ce = std::cos(view.elevation), se = std::sin(view.elevation);
    return Vec3(-ce * ca, -ce * sa, -se);
}

Projection project_visible(const TriMesh& mesh, const ViewSpec& view) {
    if (mesh.vertex_count() == 0) throw InvalidInput("project_visible: empty mesh");
    if (view.image_resolution < 16) throw InvalidInput("project_visible: resolution must be >= 16");
    if (!(view.depth_epsilon > 0)) throw InvalidInput("project_visible: depth_epsilon must be > 0");

    const int res = view.image_resolution;
    const Vec3 fwd = view_direction(view);
    Vec3 right = fwd.cross(Vec3(0, 0, 1));
    if (right.norm() < 1e-12) right = fwd.cross(Vec3(0, 1, 0));  // looking straight up/down
    right.normalize();
    const Vec3 up = right.cross(fwd);

    const std::size_t n = mesh.vertex_count();
    std::vector<double> u(n), v(n), depth(n);
    double u_lo = std::numeric_limits<double>::infinity(), u_hi = -u_lo;
    double v_lo = u_lo, v_hi = -u_lo;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = mesh.vertices.positions[i];
        u[i] = p.dot(right);
        v[i] = p.dot(up);
        depth[i] = p.dot(fwd);
        u_lo = std::min(u_lo, u[i]);
        u_hi = std::max(u_hi, u[i]);
        v_lo = std::min(v_lo, v[i]);
        v_hi = std::max(v_hi, v[i]);
    }

    // square window around the projected bounding box with a 2-pixel margin
    double side = std::max(u_hi - u_lo, v_hi - v_lo);
    if (side <= 0) side = 1.0;
    side *= 1.0 + 4.0 / res;
    const double cu = 0.5 * (u_lo + u_hi), cv = 0.5 * (v_lo + v_hi);
    const double origin_u = cu - 0.5 * side, origin_v = cv - 0.5 * side;
    const double px = side / res;  // pixel pitch

    auto pixel_of = [&](double uu, double vv) -> std::pair<int, int> {
        int ix = static_cast<int>(std::floor((uu - origin_u) / px));
        int iy = static_cast<int>(std::floor((vv - origin_v) / px));
        return {std::clamp(ix, 0, res - 1), std::clamp(iy, 0, res - 1)};
    };

    std::vector<double> zbuf(static_cast<std::size_t>(res) * res,
                             std::numeric_limits<double>::infinity());

    for (const auto& f : mesh.faces) {
        const double ua = u[f[0]], va = v[f[0]], da = depth[f[0]];
        const double ub = u[f[1]], vb = v[f[1]], db = depth[f[1]];
        const double uc = u[f[2]], vc = v[f[2]], dc = depth[f[2]];
        const double area2 = (ub - ua) * (vc - va) - (uc - ua) * (vb - va);
        if (std::abs(area2) < 1e-18) continue;  // edge-on, covers no pixel center

        const double bu_lo = std::min({ua, ub, uc}), bu_hi = std::max({ua, ub, uc});
        const double bv_lo = std::min({va, vb, vc}), bv_hi = std::max({va, vb, vc});
        int ix0 = std::clamp(static_cast<int>(std::floor((bu_lo - origin_u) / px)), 0, res - 1);
        int ix1 = std::clamp(static_cast<int>(std::floor((bu_hi - origin_u) / px)), 0, res - 1);
        int iy0 = std::clamp(static_cast<int>(std::floor((bv_lo - origin_v) / px)), 0, res - 1);
        int iy1 = std::clamp(static_cast<int>(std::floor((bv_hi - origin_v) / px)), 0, res - 1);

        const double inv_area2 = 1.0 / area2;
        for (int iy = iy0; iy <= iy1; ++iy) {
            const double pv = origin_v + (iy + 0.5) * px;
            for (int ix = ix0; ix <= ix1; ++ix) {
                const double pu = origin_u + (ix + 0.5) * px;
                double w0 = ((ub - pu) * (vc - pv) - (uc - pu) * (vb - pv)) * inv_area2;
                double w1 = ((uc - pu) * (va - pv) - (ua - pu) * (vc - pv)) * inv_area2;
                double w2 = 1.0 - w0 - w1;
                if (w0 < 0 || w1 < 0 || w2 < 0) continue;
                double d = w0 * da + w1 * db + w2 * dc;
                double& z = zbuf[static_cast<std::size_t>(iy) * res + ix];
                if (d < z) z = d;
            }
        }
    }

    std::vector<Vec3> normals = mesh.vertices.has_normals()
                                    ? mesh.vertices.normals
                                    : vertex_normals(mesh);

    Projection proj;
    for (std::size_t i = 0; i < n; ++i) {
        auto [ix, iy] = pixel_of(u[i], v[i]);
        double z = zbuf[static_cast<std::size_t>(iy) * res + ix];
        if (depth[i] <= z + view.depth_epsilon) {
            proj.cloud.positions.push_back(mesh.vertices.positions[i]);
            proj.cloud.normals.push_back(normals[i]);
            proj.part_to_full.target_indices.push_back(static_cast<int>(i));
        }
    }
    proj.part_to_full.source_size = static_cast<int>(proj.cloud.size());
    if (proj.cloud.empty()) throw EmptyProjection("project_visible: no vertex visible");
    return proj;
}

PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, std::uint64_t seed) {
    if (sigma < 0) throw InvalidInput("add_gaussian_noise: sigma must be >= 0");
    PointCloud out = cloud;
    if (sigma == 0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (Vec3& p : out.positions) {
        p.x() += gauss(rng);
        p.y() += gauss(rng);
        p.z() += gauss(rng);
    }
    return out;
}

std::pair<PointCloud, Correspondence> downsample_random(const PointCloud& cloud,
                                                        double keep_fraction,
                                                        std::uint64_t seed) {
    if (!(keep_fraction > 0) || keep_fraction > 1.0)
        throw InvalidInput("downsample_random: keep_fraction must be in (0, 1]");
    const std::size_t n = cloud.size();
    const std::size_t keep = static_cast<std::size_t>(std::llround(keep_fraction * n));
    if (keep == 0) throw InvalidInput("downsample_random: nothing left to keep");

    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(i);
    std::mt19937_64 rng(seed);
    // Fisher-Yates prefix of length `keep`
    for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());  // preserve original ordering

    PointCloud out;
    Correspondence kept;
    kept.source_size = static_cast<int>(keep);
    for (int i : idx) {
        out.positions.push_back(cloud.positions[i]);
        if (cloud.has_normals()) out.normals.push_back(cloud.normals[i]);
        kept.target_indices.push_back(i);
    }
    return {std::move(out), std::move(kept)};
}

}  // namespace nrsc
