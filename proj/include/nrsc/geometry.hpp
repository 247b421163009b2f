#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <array>
#include <utility>
#include <vector>

#include "nrsc/errors.hpp"

namespace nrsc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unordered set of 3D points, optionally with unit normals.
/// `normals` is either empty or the same length as `positions`.
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;

    std::size_t size() const { return positions.size(); }
    bool empty() const { return positions.empty(); }
    bool has_normals() const { return !normals.empty() && normals.size() == positions.size(); }
};

/// Triangle mesh. Faces index into `vertices.positions`; winding is CCW
/// seen from outside for the watertight meshes this project generates.
struct TriMesh {
    PointCloud vertices;
    std::vector<std::array<int, 3>> faces;

    std::size_t vertex_count() const { return vertices.size(); }
    std::size_t face_count() const { return faces.size(); }
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    RigidTransform inverse() const {
        RigidTransform inv;
        inv.rotation = rotation.transpose();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }

    /// this ∘ other: apply `other` first, then this.
    RigidTransform compose(const RigidTransform& other) const {
        RigidTransform out;
        out.rotation = rotation * other.rotation;
        out.translation = rotation * other.translation + translation;
        return out;
    }
};

/// Index map from a source shape into a target shape: entry i is the
/// target index matched to source point i.
struct Correspondence {
    int source_size = 0;
    std::vector<int> target_indices;
};

/// Translate so the vertex mean sits at the origin. Returns the shifted
/// cloud and the removed mean. Normals are untouched.
std::pair<PointCloud, Vec3> center_at_origin(const PointCloud& cloud);
std::pair<TriMesh, Vec3> center_at_origin(const TriMesh& mesh);

/// Area-weighted vertex normals from face connectivity. Vertices whose
/// incident faces are all degenerate get the (0,0,1) fallback; their
/// indices are appended to `fallback` when non-null.
std::vector<Vec3> vertex_normals(const TriMesh& mesh, std::vector<int>* fallback = nullptr);

/// PCA plane-fit normals for a raw point cloud: smallest-eigenvalue
/// eigenvector of the covariance of each point's k nearest neighbors,
/// oriented so normal . (viewpoint - point) >= 0.
std::vector<Vec3> estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint);

/// For every query point, the index of its nearest target point.
/// Ties break to the lowest target index.
Correspondence nearest_neighbors(const PointCloud& queries, const PointCloud& targets);

/// Signed enclosed volume: sum over faces of det(v0,v1,v2)/6.
/// Meaningful only for watertight, consistently oriented meshes.
double mesh_volume(const TriMesh& mesh);

/// Dijkstra shortest paths on the mesh edge graph from `source`.
/// Unreachable vertices get +infinity.
std::vector<double> geodesic_distances(const TriMesh& mesh, int source);

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t);
TriMesh apply_transform(const TriMesh& mesh, const RigidTransform& t);

double bounding_box_diagonal(const PointCloud& cloud);
double surface_area(const TriMesh& mesh);

/// True when the edge graph is connected (vertex 0 reaches everything).
bool edge_graph_connected(const TriMesh& mesh);

/// Static 3-d kd-tree over a fixed point set. Nearest-neighbor queries
/// break distance ties to the lowest point index, matching the brute
/// force scan.
class KdTree {
public:
    explicit KdTree(const std::vector<Vec3>& points);

    /// Index of the nearest point; squared distance via `dist_sq` if given.
    int nearest(const Vec3& query, double* dist_sq = nullptr) const;

    /// Indices of the k nearest points, closest first (ties by index).
    std::vector<int> k_nearest(const Vec3& query, int k) const;

    std::size_t size() const { return pts_.size(); }

private:
    struct Node {
        int left = -1, right = -1;
        int axis = 0;
        int point = -1;  // leaf payload when left == right == -1
        double split = 0.0;
    };

    int build(std::vector<int>& idx, int lo, int hi, int depth);

    std::vector<Vec3> pts_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

}  // namespace nrsc
