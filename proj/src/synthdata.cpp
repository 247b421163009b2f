#include "nrsc/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "nrsc/rng.hpp"

namespace nrsc {

namespace {

constexpr std::uint64_t kSubjectSalt = 0x5b1e6e9d2c3a41ULL;
constexpr std::uint64_t kPoseSalt = 0x9d31f0ab7742e5ULL;

// Base humanoid proportions in construction units (before per-subject
// scaling). Limb order: head, arm L, arm R, leg L, leg R.
constexpr double kTorsoW = 0.36, kTorsoD = 0.22, kTorsoH = 0.52;
constexpr std::array<double, 5> kBaseLimbLength = {0.26, 0.55, 0.55, 0.72, 0.72};
constexpr std::array<double, 5> kBaseLimbRadius = {0.10, 0.055, 0.055, 0.075, 0.075};

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// --- quad-surface builder ---------------------------------------------------

struct QuadSurface {
    std::vector<Vec3> verts;
    std::vector<VertexSkin> skin;
    std::vector<std::array<int, 4>> quads;

    int add_vertex(const Vec3& p, const VertexSkin& s) {
        verts.push_back(p);
        skin.push_back(s);
        return static_cast<int>(verts.size()) - 1;
    }
};

VertexSkin single_bone(int bone) {
    VertexSkin s;
    s.bone[0] = bone;
    s.weight[0] = 1.0;
    return s;
}

VertexSkin half_blend(int bone_a, int bone_b) {
    VertexSkin s;
    s.bone[0] = bone_a;
    s.bone[1] = bone_b;
    s.weight[0] = s.weight[1] = 0.5;
    return s;
}

// Extrudes a limb tube from a base quad loop (CCW seen from outside).
// rings[k] = (distance along dir, cross-section radius). Ring skins come
// from ring_skin(k). Consumes the base quad: caller must not emit it.
void extrude_limb(QuadSurface& surf, const std::array<int, 4>& base, const Vec3& dir,
                  const std::vector<std::pair<double, double>>& rings,
                  const std::vector<VertexSkin>& ring_skin) {
    Vec3 c0 = Vec3::Zero();
    for (int v : base) c0 += surf.verts[v];
    c0 /= 4.0;
    std::array<Vec3, 4> offs;
    double r_base = 0.0;
    for (int j = 0; j < 4; ++j) {
        Vec3 o = surf.verts[base[j]] - c0;
        o -= o.dot(dir) * dir;
        offs[j] = o;
        r_base += o.norm();
    }
    r_base /= 4.0;

    std::array<int, 4> prev = base;
    for (std::size_t k = 0; k < rings.size(); ++k) {
        auto [t, radius] = rings[k];
        double scale = radius / r_base;
        std::array<int, 4> ring;
        for (int j = 0; j < 4; ++j)
            ring[j] = surf.add_vertex(c0 + t * dir + scale * offs[j], ring_skin[k]);
        for (int j = 0; j < 4; ++j) {
            int jn = (j + 1) & 3;
            surf.quads.push_back({prev[j], prev[jn], ring[jn], ring[j]});
        }
        prev = ring;
    }
    surf.quads.push_back(prev);  // end cap, same winding as the base loop
}

struct TriSoup {
    std::vector<Vec3> verts;
    std::vector<VertexSkin> skin;
    std::vector<std::array<int, 3>> faces;
};

TriSoup triangulate(const QuadSurface& surf) {
    TriSoup out;
    out.verts = surf.verts;
    out.skin = surf.skin;
    out.faces.reserve(surf.quads.size() * 2);
    for (const auto& q : surf.quads) {
        out.faces.push_back({q[0], q[1], q[2]});
        out.faces.push_back({q[0], q[2], q[3]});
    }
    return out;
}

VertexSkin merge_skin(const VertexSkin& a, const VertexSkin& b) {
    // midpoint weights; the ring layout guarantees at most two distinct bones
    std::map<int, double> w;
    for (int i = 0; i < 2; ++i) {
        if (a.bone[i] >= 0) w[a.bone[i]] += 0.5 * a.weight[i];
        if (b.bone[i] >= 0) w[b.bone[i]] += 0.5 * b.weight[i];
    }
    if (w.size() > 2) throw std::logic_error("merge_skin: more than two bones on an edge");
    VertexSkin out;
    int slot = 0;
    for (const auto& [bone, weight] : w) {
        out.bone[slot] = bone;
        out.weight[slot] = weight;
        ++slot;
    }
    if (slot == 1) {
        out.bone[1] = -1;
        out.weight[1] = 0.0;
    }
    return out;
}

// One round of 4-to-1 midpoint subdivision.
TriSoup subdivide(const TriSoup& in) {
    TriSoup out;
    out.verts = in.verts;
    out.skin = in.skin;
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
        auto key = std::minmax(a, b);
        auto it = mid.find(key);
        if (it != mid.end()) return it->second;
        int idx = static_cast<int>(out.verts.size());
        out.verts.push_back(0.5 * (in.verts[a] + in.verts[b]));
        out.skin.push_back(merge_skin(in.skin[a], in.skin[b]));
        mid.emplace(key, idx);
        return idx;
    };
    for (const auto& f : in.faces) {
        int ab = midpoint(f[0], f[1]);
        int bc = midpoint(f[1], f[2]);
        int ca = midpoint(f[2], f[0]);
        out.faces.push_back({f[0], ab, ca});
        out.faces.push_back({ab, f[1], bc});
        out.faces.push_back({ca, bc, f[2]});
        out.faces.push_back({ab, bc, ca});
    }
    return out;
}

}  // namespace

SubjectParams SubjectParams::from_id(int subject_id) {
    std::mt19937_64 rng(splitmix64(static_cast<std::uint64_t>(subject_id) ^ kSubjectSalt));
    SubjectParams p;
    p.subject_id = subject_id;
    for (int i = 0; i < 5; ++i) p.limb_lengths[i] = kBaseLimbLength[i] * uniform(rng, 0.85, 1.15);
    for (int i = 0; i < 5; ++i) p.limb_radii[i] = kBaseLimbRadius[i] * uniform(rng, 0.85, 1.15);
    p.torso_scale = Vec3(uniform(rng, 0.9, 1.1), uniform(rng, 0.9, 1.1), uniform(rng, 0.9, 1.1));
    return p;
}

PoseParams PoseParams::from_id(int pose_id) {
    PoseParams p;
    p.pose_id = pose_id;
    p.joint_angles.assign(9, Vec3::Zero());
    if (pose_id == 0) return p;  // rest pose

    std::mt19937_64 rng(splitmix64(static_cast<std::uint64_t>(pose_id) ^ kPoseSalt));
    auto draw = [&](double lo, double hi) { return uniform(rng, lo, hi); };
    // indices into joint_angles: bone id - 1
    p.joint_angles[kHead - 1] = Vec3(draw(-0.3, 0.3), draw(-0.3, 0.3), draw(-0.3, 0.3));
    p.joint_angles[kArmLUpper - 1] = Vec3(draw(-0.4, 0.4), draw(-0.5, 0.5), draw(-0.7, 0.7));
    p.joint_angles[kArmLFore - 1] = Vec3(draw(-0.15, 0.15), draw(-0.15, 0.15), draw(-1.3, -0.1));
    p.joint_angles[kArmRUpper - 1] = Vec3(draw(-0.4, 0.4), draw(-0.5, 0.5), draw(-0.7, 0.7));
    p.joint_angles[kArmRFore - 1] = Vec3(draw(-0.15, 0.15), draw(-0.15, 0.15), draw(0.1, 1.3));
    p.joint_angles[kLegLThigh - 1] = Vec3(draw(-0.5, 0.5), draw(-0.2, 0.2), draw(-0.25, 0.25));
    p.joint_angles[kLegLShin - 1] = Vec3(draw(0.1, 1.2), draw(-0.1, 0.1), draw(-0.1, 0.1));
    p.joint_angles[kLegRThigh - 1] = Vec3(draw(-0.5, 0.5), draw(-0.2, 0.2), draw(-0.25, 0.25));
    p.joint_angles[kLegRShin - 1] = Vec3(draw(0.1, 1.2), draw(-0.1, 0.1), draw(-0.1, 0.1));
    p.global_rotation = Vec3(draw(-0.15, 0.15), draw(-0.15, 0.15), draw(-M_PI / 3, M_PI / 3));

    for (const Vec3& a : p.joint_angles)
        for (int i = 0; i < 3; ++i)
            if (std::abs(a[i]) > kJointLimit) throw std::logic_error("pose generator out of limits");
    return p;
}

SkinnedTemplate build_subject(const SubjectParams& params) {
    const double W = kTorsoW * params.torso_scale.x();
    const double D = kTorsoD * params.torso_scale.y();
    const double H = kTorsoH * params.torso_scale.z();
    const std::array<double, 4> xs = {-W / 2, -W / 6, W / 6, W / 2};
    const std::array<double, 2> ys = {-D / 2, D / 2};
    const std::array<double, 4> zs = {0, H / 3, 2 * H / 3, H};

    QuadSurface surf;
    std::map<std::array<int, 3>, int> lattice;
    auto vert = [&](int i, int j, int k) {
        std::array<int, 3> key = {i, j, k};
        auto it = lattice.find(key);
        if (it != lattice.end()) return it->second;
        int idx = surf.add_vertex(Vec3(xs[i], ys[j], zs[k]), single_bone(kRoot));
        lattice.emplace(key, idx);
        return idx;
    };

    // Box faces, CCW seen from outside. Five cells are limb bases.
    std::array<std::array<int, 4>, 5> base{};  // head, armL, armR, legL, legR
    for (int i = 0; i < 3; ++i) {  // top (+z) and bottom (-z)
        std::array<int, 4> top = {vert(i, 0, 3), vert(i + 1, 0, 3), vert(i + 1, 1, 3), vert(i, 1, 3)};
        std::array<int, 4> bot = {vert(i, 0, 0), vert(i, 1, 0), vert(i + 1, 1, 0), vert(i + 1, 0, 0)};
        if (i == 1) base[0] = top; else surf.quads.push_back(top);
        if (i == 0) base[3] = bot;
        else if (i == 2) base[4] = bot;
        else surf.quads.push_back(bot);
    }
    for (int k = 0; k < 3; ++k) {  // left (-x) and right (+x)
        std::array<int, 4> left = {vert(0, 0, k), vert(0, 0, k + 1), vert(0, 1, k + 1), vert(0, 1, k)};
        std::array<int, 4> right = {vert(3, 0, k), vert(3, 1, k), vert(3, 1, k + 1), vert(3, 0, k + 1)};
        if (k == 2) { base[1] = left; base[2] = right; }
        else { surf.quads.push_back(left); surf.quads.push_back(right); }
    }
    for (int i = 0; i < 3; ++i)  // front (-y) and back (+y)
        for (int k = 0; k < 3; ++k) {
            surf.quads.push_back({vert(i, 0, k), vert(i + 1, 0, k), vert(i + 1, 0, k + 1), vert(i, 0, k + 1)});
            surf.quads.push_back({vert(i, 1, k), vert(i, 1, k + 1), vert(i + 1, 1, k + 1), vert(i + 1, 1, k)});
        }

    std::vector<Bone> bones(kBoneCount);
    bones[kRoot] = {-1, Vec3::Zero(), Vec3(0, 0, H)};

    auto base_center = [&](const std::array<int, 4>& q) {
        Vec3 c = Vec3::Zero();
        for (int v : q) c += surf.verts[v];
        return Vec3(c / 4.0);
    };

    struct LimbDef {
        int limb;        // index into limb_lengths / limb_radii
        int base_quad;   // index into `base`
        Vec3 dir;
        int bone_a, bone_b;  // bone_b = -1 for the single-bone head
    };
    const std::array<LimbDef, 5> limbs = {{
        {0, 0, Vec3(0, 0, 1), kHead, -1},
        {1, 1, Vec3(-1, 0, 0), kArmLUpper, kArmLFore},
        {2, 2, Vec3(1, 0, 0), kArmRUpper, kArmRFore},
        {3, 3, Vec3(0, 0, -1), kLegLThigh, kLegLShin},
        {4, 4, Vec3(0, 0, -1), kLegRThigh, kLegRShin},
    }};

    for (const auto& limb : limbs) {
        const double L = params.limb_lengths[limb.limb];
        const double r = params.limb_radii[limb.limb];
        const Vec3 c0 = base_center(base[limb.base_quad]);
        std::vector<std::pair<double, double>> rings;
        std::vector<VertexSkin> skins;
        if (limb.bone_b < 0) {
            // head: neck pinch then skull bulge, 5 rings
            const std::array<double, 5> profile = {0.6, 0.65, 1.05, 1.1, 0.95};
            for (int k = 1; k <= 5; ++k) {
                rings.push_back({L * k / 5.0, r * profile[k - 1]});
                skins.push_back(k == 1 ? half_blend(kRoot, limb.bone_a) : single_bone(limb.bone_a));
            }
            bones[limb.bone_a] = {kRoot, c0, c0 + L * limb.dir};
        } else {
            // two-bone limb, 10 rings, joint at ring 5
            for (int k = 1; k <= 10; ++k) {
                rings.push_back({L * k / 10.0, r * (1.05 - 0.35 * k / 10.0)});
                if (k == 1) skins.push_back(half_blend(kRoot, limb.bone_a));
                else if (k < 5) skins.push_back(single_bone(limb.bone_a));
                else if (k == 5) skins.push_back(half_blend(limb.bone_a, limb.bone_b));
                else skins.push_back(single_bone(limb.bone_b));
            }
            Vec3 mid = c0 + 0.5 * L * limb.dir;
            bones[limb.bone_a] = {kRoot, c0, mid};
            bones[limb.bone_b] = {limb.bone_a, mid, c0 + L * limb.dir};
        }
        extrude_limb(surf, base[limb.base_quad], limb.dir, rings, skins);
    }

    TriSoup soup = subdivide(triangulate(surf));

    // center on the vertex mean and scale into a ball of radius 0.8
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& v : soup.verts) centroid += v;
    centroid /= static_cast<double>(soup.verts.size());
    double max_dist = 0.0;
    for (const Vec3& v : soup.verts) max_dist = std::max(max_dist, (v - centroid).norm());
    const double scale = 0.8 / max_dist;

    SkinnedTemplate out;
    out.params = params;
    out.mesh.vertices.positions.reserve(soup.verts.size());
    for (const Vec3& v : soup.verts) out.mesh.vertices.positions.push_back(scale * (v - centroid));
    out.mesh.faces = std::move(soup.faces);
    out.skin = std::move(soup.skin);
    out.bones = std::move(bones);
    for (Bone& b : out.bones) {
        b.pivot = scale * (b.pivot - centroid);
        b.tip = scale * (b.tip - centroid);
    }
    out.bones[kRoot].pivot = Vec3::Zero();  // global rotation acts about the origin
    return out;
}

namespace {

struct Affine {
    Mat3 linear = Mat3::Identity();
    Vec3 offset = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return linear * p + offset; }
    Affine compose(const Affine& inner) const {
        return {linear * inner.linear, linear * inner.offset + offset};
    }
    bool same_as(const Affine& o) const {
        return linear == o.linear && offset == o.offset;
    }
};

Mat3 euler_rotation(const Vec3& xyz) {
    return (Eigen::AngleAxisd(xyz.z(), Vec3::UnitZ()) *
            Eigen::AngleAxisd(xyz.y(), Vec3::UnitY()) *
            Eigen::AngleAxisd(xyz.x(), Vec3::UnitX()))
        .toRotationMatrix();
}

std::vector<Affine> bone_globals(const SkinnedTemplate& tmpl, const PoseParams& pose) {
    if (pose.joint_angles.size() != kBoneCount - 1)
        throw InvalidInput("pose_shape: expected 9 joint angle triples");
    std::vector<Affine> globals(tmpl.bones.size());
    for (std::size_t j = 0; j < tmpl.bones.size(); ++j) {
        const Bone& bone = tmpl.bones[j];
        Mat3 rot = (j == 0) ? euler_rotation(pose.global_rotation)
                            : euler_rotation(pose.joint_angles[j - 1]);
        Affine local{rot, bone.pivot - rot * bone.pivot};  // rotation about the pivot
        globals[j] = (bone.parent < 0) ? local : globals[bone.parent].compose(local);
    }
    return globals;
}

}  // namespace

TriMesh pose_shape(const SkinnedTemplate& tmpl, const PoseParams& pose) {
    const std::vector<Affine> globals = bone_globals(tmpl, pose);
    TriMesh out;
    out.faces = tmpl.mesh.faces;
    out.vertices.positions.resize(tmpl.mesh.vertex_count());
    for (std::size_t i = 0; i < tmpl.mesh.vertex_count(); ++i) {
        const Vec3& x = tmpl.mesh.vertices.positions[i];
        const VertexSkin& s = tmpl.skin[i];
        const Affine& a0 = globals[s.bone[0]];
        if (s.bone[1] < 0 || a0.same_as(globals[s.bone[1]])) {
            out.vertices.positions[i] = a0.apply(x);  // exact for rigid poses
        } else {
            const Affine& a1 = globals[s.bone[1]];
            out.vertices.positions[i] =
                s.weight[0] * a0.apply(x) + s.weight[1] * a1.apply(x);
        }
    }
    return out;
}

std::vector<std::pair<Vec3, Vec3>> posed_bone_segments(const SkinnedTemplate& tmpl,
                                                       const PoseParams& pose) {
    const std::vector<Affine> globals = bone_globals(tmpl, pose);
    std::vector<std::pair<Vec3, Vec3>> segs(tmpl.bones.size());
    for (std::size_t j = 0; j < tmpl.bones.size(); ++j)
        segs[j] = {globals[j].apply(tmpl.bones[j].pivot), globals[j].apply(tmpl.bones[j].tip)};
    return segs;
}

std::vector<int> DatasetSpec::subjects_for(Split split) const {
    int lo = 0, n = 0;
    switch (split) {
        case Split::train: lo = 0; n = train_subjects; break;
        case Split::val: lo = train_subjects; n = val_subjects; break;
        case Split::test: lo = train_subjects + val_subjects; n = test_subjects; break;
    }
    std::vector<int> ids(n);
    for (int i = 0; i < n; ++i) ids[i] = lo + i;
    return ids;
}

const SkinnedTemplate& TemplateCache::get(int subject_id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(subject_id);
    if (it == map_.end())
        it = map_.emplace(subject_id, build_subject(SubjectParams::from_id(subject_id))).first;
    return it->second;
}

namespace {

Triplet assemble_triplet(const SkinnedTemplate& tmpl, int subject_id, int pose_q, int pose_r,
                         double azimuth, bool fixed_view) {
    Triplet t;
    t.subject_id = subject_id;
    t.pose_id_q = pose_q;
    t.pose_id_r = pose_r;
    t.azimuth = azimuth;
    t.Q = pose_shape(tmpl, PoseParams::from_id(pose_q));
    t.R = pose_shape(tmpl, PoseParams::from_id(pose_r));
    t.Q.vertices.normals = vertex_normals(t.Q);
    t.R.vertices.normals = vertex_normals(t.R);

    ViewSpec view = make_view_for(t.R, azimuth);
    Projection proj = project_visible(t.R, view);  // EmptyProjection propagates
    t.P = std::move(proj.cloud);
    t.part_to_R = std::move(proj.part_to_full);

    const int nq = static_cast<int>(t.Q.vertex_count());
    t.gt_map.source_size = nq;
    t.gt_map.target_indices.resize(nq);
    for (int i = 0; i < nq; ++i) t.gt_map.target_indices[i] = i;
    (void)fixed_view;
    return t;
}

}  // namespace

Triplet sample_triplet(const DatasetSpec& spec, std::uint64_t seed, Split split,
                       TemplateCache* cache) {
    std::vector<int> pool = spec.subjects_for(split);
    if (pool.empty()) throw InvalidInput("sample_triplet: empty subject pool for split");
    if (spec.poses_per_subject < 2) throw InvalidInput("sample_triplet: need at least 2 poses");

    std::mt19937_64 rng(seed);
    auto pick = [&](int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); };
    const int subject = pool[pick(static_cast<int>(pool.size()))];
    const int pose_q = pick(spec.poses_per_subject);
    int pose_r = pick(spec.poses_per_subject);
    while (pose_r == pose_q) pose_r = pick(spec.poses_per_subject);

    TemplateCache local;
    const SkinnedTemplate& tmpl = (cache ? *cache : local).get(subject);

    for (int attempt = 0; attempt < 8; ++attempt) {
        double azimuth = uniform(rng, 0.0, 2.0 * M_PI);
        try {
            return assemble_triplet(tmpl, subject, pose_q, pose_r, azimuth, false);
        } catch (const EmptyProjection&) {
            if (attempt == 7) throw;
        }
    }
    throw EmptyProjection("sample_triplet: unreachable");
}

Triplet make_eval_triplet(const DatasetSpec& spec, int subject_id, int pose_q, int pose_r,
                          int view_index, TemplateCache* cache) {
    if (view_index < 0 || view_index >= spec.eval_views)
        throw InvalidInput("make_eval_triplet: view index out of range");
    TemplateCache local;
    const SkinnedTemplate& tmpl = (cache ? *cache : local).get(subject_id);
    const double azimuth = 2.0 * M_PI * view_index / spec.eval_views;
    return assemble_triplet(tmpl, subject_id, pose_q, pose_r, azimuth, true);
}

}  // namespace nrsc
