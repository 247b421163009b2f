#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "nrsc/geometry.hpp"
#include "nrsc/partiality.hpp"

namespace nrsc {

/// Body-shape parameters for one synthetic subject. Limb order is
/// head, left arm, right arm, left leg, right leg.
struct SubjectParams {
    std::array<double, 5> limb_lengths;
    std::array<double, 5> limb_radii;
    Vec3 torso_scale;
    int subject_id = 0;

    /// Deterministic parameters for a subject id (fixed generator).
    static SubjectParams from_id(int subject_id);
};

/// Joint rotations for one pose. `joint_angles` holds XYZ Euler angles
/// for the nine non-root bones; pose id 0 is the rest pose.
struct PoseParams {
    std::vector<Vec3> joint_angles;  // bones 1..9
    Vec3 global_rotation = Vec3::Zero();
    int pose_id = 0;

    static PoseParams from_id(int pose_id);
};

/// Per-axis joint limit used by the pose generator.
constexpr double kJointLimit = 2.0 * M_PI / 3.0;

struct Bone {
    int parent = -1;
    Vec3 pivot = Vec3::Zero();  // joint position in template coordinates
    Vec3 tip = Vec3::Zero();    // far end of the bone (next joint / limb end)
};

/// Blend of at most two bones; weights are >= 0 and sum to 1.
/// bone[1] == -1 marks a single-bone vertex.
struct VertexSkin {
    int bone[2] = {0, -1};
    double weight[2] = {1.0, 0.0};
};

/// Rest-pose humanoid with its skeleton and skinning weights. All
/// subjects share the exact same topology (face list and vertex/bone
/// layout); only the geometry differs.
struct SkinnedTemplate {
    TriMesh mesh;    // centered, scaled to fit a ball of radius 0.8
    std::vector<Bone> bones;
    std::vector<VertexSkin> skin;
    SubjectParams params;
};

/// Bone indices in a SkinnedTemplate.
enum BoneId : int {
    kRoot = 0,
    kHead = 1,
    kArmLUpper = 2, kArmLFore = 3,
    kArmRUpper = 4, kArmRFore = 5,
    kLegLThigh = 6, kLegLShin = 7,
    kLegRThigh = 8, kLegRShin = 9,
    kBoneCount = 10,
};

/// Build the watertight rest-pose mesh for a subject: a subdivided
/// box torso with five extruded limb chains.
SkinnedTemplate build_subject(const SubjectParams& params);

/// Linear-blend skinning under forward kinematics. Topology unchanged.
TriMesh pose_shape(const SkinnedTemplate& tmpl, const PoseParams& pose);

/// Joint/tip world positions of every bone under a pose (for testing and
/// skeleton-length checks).
std::vector<std::pair<Vec3, Vec3>> posed_bone_segments(const SkinnedTemplate& tmpl,
                                                       const PoseParams& pose);

enum class Split { train, val, test };

/// Subject-id layout and sizes of the synthetic dataset. Subjects are
/// partitioned by id: train ids first, then val, then test.
struct DatasetSpec {
    int train_subjects = 8;
    int val_subjects = 2;
    int test_subjects = 2;
    int poses_per_subject = 40;
    int eval_views = 10;

    int total_subjects() const { return train_subjects + val_subjects + test_subjects; }
    std::vector<int> subjects_for(Split split) const;
};

/// One training / evaluation sample.
struct Triplet {
    PointCloud P;         // single-view part of R, with normals
    TriMesh Q;            // full shape, another pose, vertex normals set
    TriMesh R;            // ground-truth completion, vertex normals set
    Correspondence gt_map;     // pi*: Q -> R, identity for the shared template
    Correspondence part_to_R;  // P index -> R vertex index
    int subject_id = 0, pose_id_q = 0, pose_id_r = 0;
    double azimuth = 0.0;
};

/// Memoized subject templates; safe to share across threads.
class TemplateCache {
public:
    const SkinnedTemplate& get(int subject_id);

private:
    std::mutex mu_;
    std::unordered_map<int, SkinnedTemplate> map_;
};

/// Draw one triplet: subject from the split's pool, two distinct poses,
/// and a single-view projection of R at a uniform random azimuth.
/// Deterministic for a given seed. Retries up to 8 azimuths if a
/// projection comes back empty.
Triplet sample_triplet(const DatasetSpec& spec, std::uint64_t seed, Split split,
                       TemplateCache* cache = nullptr);

/// Fixed projection of a posed shape at one of the evenly spaced eval
/// views (the triplet's azimuth is the view's azimuth).
Triplet make_eval_triplet(const DatasetSpec& spec, int subject_id, int pose_q, int pose_r,
                          int view_index, TemplateCache* cache = nullptr);

}  // namespace nrsc
