#include "nrsc/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace nrsc {

std::pair<PointCloud, Vec3> center_at_origin(const PointCloud& cloud) {
    if (cloud.empty()) throw InvalidInput("center_at_origin: empty cloud");
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : cloud.positions) mean += p;
    mean /= static_cast<double>(cloud.size());
    PointCloud out = cloud;
    for (Vec3& p : out.positions) p -= mean;
    return {std::move(out), mean};
}

std::pair<TriMesh, Vec3> center_at_origin(const TriMesh& mesh) {
    auto [cloud, offset] = center_at_origin(mesh.vertices);
    TriMesh out;
    out.vertices = std::move(cloud);
    out.faces = mesh.faces;
    return {std::move(out), offset};
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh, std::vector<int>* fallback) {
    const std::size_t n = mesh.vertex_count();
    std::vector<Vec3> sums(n, Vec3::Zero());
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices.positions[f[0]];
        const Vec3& b = mesh.vertices.positions[f[1]];
        const Vec3& c = mesh.vertices.positions[f[2]];
        // cross = 2 * area * unit normal; zero-area faces contribute nothing
        Vec3 cross = (b - a).cross(c - a);
        sums[f[0]] += cross;
        sums[f[1]] += cross;
        sums[f[2]] += cross;
    }
    std::vector<Vec3> normals(n);
    for (std::size_t i = 0; i < n; ++i) {
        double len = sums[i].norm();
        if (len < 1e-30) {
            normals[i] = Vec3(0, 0, 1);
            if (fallback) fallback->push_back(static_cast<int>(i));
        } else {
            normals[i] = sums[i] / len;
        }
    }
    return normals;
}

std::vector<Vec3> estimate_normals(const PointCloud& cloud, int k, const Vec3& viewpoint) {
    const int n = static_cast<int>(cloud.size());
    if (k < 3) throw InvalidInput("estimate_normals: k must be >= 3");
    if (n < k + 1) throw InvalidInput("estimate_normals: cloud needs at least k+1 points");

    KdTree tree(cloud.positions);
    std::vector<Vec3> normals(n);
    for (int i = 0; i < n; ++i) {
        const Vec3& p = cloud.positions[i];
        // k nearest excluding the point itself
        std::vector<int> nn = tree.k_nearest(p, k + 1);
        std::vector<Vec3> nbrs;
        nbrs.reserve(k);
        for (int j : nn) {
            if (j == i) continue;
            nbrs.push_back(cloud.positions[j]);
            if (static_cast<int>(nbrs.size()) == k) break;
        }
        Vec3 mean = Vec3::Zero();
        for (const Vec3& q : nbrs) mean += q;
        mean /= static_cast<double>(nbrs.size());
        Mat3 cov = Mat3::Zero();
        for (const Vec3& q : nbrs) {
            Vec3 d = q - mean;
            cov += d * d.transpose();
        }
        Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        Vec3 normal = eig.eigenvectors().col(0);  // smallest eigenvalue
        double len = normal.norm();
        normal = (len > 0) ? Vec3(normal / len) : Vec3(0, 0, 1);
        if (normal.dot(viewpoint - p) < 0) normal = -normal;
        normals[i] = normal;
    }
    return normals;
}

Correspondence nearest_neighbors(const PointCloud& queries, const PointCloud& targets) {
    if (queries.empty() || targets.empty())
        throw InvalidInput("nearest_neighbors: empty input cloud");
    Correspondence corr;
    corr.source_size = static_cast<int>(queries.size());
    corr.target_indices.resize(queries.size());
    KdTree tree(targets.positions);
    for (std::size_t i = 0; i < queries.size(); ++i)
        corr.target_indices[i] = tree.nearest(queries.positions[i]);
    return corr;
}

double mesh_volume(const TriMesh& mesh) {
    double vol = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices.positions[f[0]];
        const Vec3& b = mesh.vertices.positions[f[1]];
        const Vec3& c = mesh.vertices.positions[f[2]];
        vol += a.dot(b.cross(c));
    }
    return vol / 6.0;
}

namespace {

std::vector<std::vector<std::pair<int, double>>> edge_adjacency(const TriMesh& mesh) {
    std::vector<std::vector<std::pair<int, double>>> adj(mesh.vertex_count());
    auto add_edge = [&](int a, int b) {
        for (const auto& [v, w] : adj[a])
            if (v == b) return;
        double w = (mesh.vertices.positions[a] - mesh.vertices.positions[b]).norm();
        adj[a].push_back({b, w});
        adj[b].push_back({a, w});
    };
    for (const auto& f : mesh.faces) {
        add_edge(f[0], f[1]);
        add_edge(f[1], f[2]);
        add_edge(f[2], f[0]);
    }
    return adj;
}

}  // namespace

std::vector<double> geodesic_distances(const TriMesh& mesh, int source) {
    const int n = static_cast<int>(mesh.vertex_count());
    if (source < 0 || source >= n) throw InvalidInput("geodesic_distances: source out of range");
    auto adj = edge_adjacency(mesh);

    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, kInf);
    dist[source] = 0.0;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    heap.push({0.0, source});
    while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (d > dist[u]) continue;
        for (const auto& [v, w] : adj[u]) {
            double nd = d + w;
            if (nd < dist[v]) {
                dist[v] = nd;
                heap.push({nd, v});
            }
        }
    }
    return dist;
}

bool edge_graph_connected(const TriMesh& mesh) {
    if (mesh.vertex_count() == 0) return true;
    auto d = geodesic_distances(mesh, 0);
    for (double x : d)
        if (!std::isfinite(x)) return false;
    return true;
}

PointCloud apply_transform(const PointCloud& cloud, const RigidTransform& t) {
    PointCloud out;
    out.positions.reserve(cloud.size());
    for (const Vec3& p : cloud.positions) out.positions.push_back(t.apply(p));
    out.normals.reserve(cloud.normals.size());
    for (const Vec3& n : cloud.normals) out.normals.push_back(t.rotation * n);
    return out;
}

TriMesh apply_transform(const TriMesh& mesh, const RigidTransform& t) {
    TriMesh out;
    out.vertices = apply_transform(mesh.vertices, t);
    out.faces = mesh.faces;
    return out;
}

double bounding_box_diagonal(const PointCloud& cloud) {
    if (cloud.empty()) return 0.0;
    Vec3 lo = cloud.positions[0], hi = cloud.positions[0];
    for (const Vec3& p : cloud.positions) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
}

double surface_area(const TriMesh& mesh) {
    double area = 0.0;
    for (const auto& f : mesh.faces) {
        const Vec3& a = mesh.vertices.positions[f[0]];
        const Vec3& b = mesh.vertices.positions[f[1]];
        const Vec3& c = mesh.vertices.positions[f[2]];
        area += 0.5 * (b - a).cross(c - a).norm();
    }
    return area;
}

// ---------------------------------------------------------------------------
// KdTree

KdTree::KdTree(const std::vector<Vec3>& points) : pts_(points) {
    if (pts_.empty()) throw InvalidInput("KdTree: empty point set");
    std::vector<int> idx(pts_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    nodes_.reserve(2 * pts_.size());
    root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int KdTree::build(std::vector<int>& idx, int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    int node_id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    if (hi - lo == 1) {
        nodes_[node_id].point = idx[lo];
        return node_id;
    }
    int axis = depth % 3;
    int mid = (lo + hi) / 2;
    std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi,
                     [&](int a, int b) {
                         double pa = pts_[a][axis], pb = pts_[b][axis];
                         if (pa != pb) return pa < pb;
                         return a < b;  // stable order for duplicate coordinates
                     });
    double split = pts_[idx[mid]][axis];
    int left = build(idx, lo, mid, depth + 1);
    int right = build(idx, mid, hi, depth + 1);
    Node& n = nodes_[node_id];
    n.axis = axis;
    n.split = split;
    n.left = left;
    n.right = right;
    return node_id;
}

namespace {

struct NearestState {
    double best_d2 = std::numeric_limits<double>::infinity();
    int best_idx = -1;

    void offer(int idx, double d2) {
        if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
            best_d2 = d2;
            best_idx = idx;
        }
    }
};

}  // namespace

int KdTree::nearest(const Vec3& query, double* dist_sq) const {
    NearestState st;
    // explicit stack; prune only strictly farther subtrees so ties stay visible
    std::vector<int> stack;
    stack.push_back(root_);
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (id < 0) continue;
        const Node& n = nodes_[id];
        if (n.point >= 0) {
            st.offer(n.point, (pts_[n.point] - query).squaredNorm());
            continue;
        }
        double delta = query[n.axis] - n.split;
        int near = delta < 0 ? n.left : n.right;
        int far = delta < 0 ? n.right : n.left;
        if (delta * delta <= st.best_d2) stack.push_back(far);
        stack.push_back(near);
    }
    if (dist_sq) *dist_sq = st.best_d2;
    return st.best_idx;
}

std::vector<int> KdTree::k_nearest(const Vec3& query, int k) const {
    k = std::min<int>(k, static_cast<int>(pts_.size()));
    // max-heap of (d2, idx); worse = larger d2, ties worse = larger idx
    auto worse = [](const std::pair<double, int>& a, const std::pair<double, int>& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    };
    std::vector<std::pair<double, int>> heap;
    heap.reserve(k + 1);

    std::vector<int> stack;
    stack.push_back(root_);
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (id < 0) continue;
        const Node& n = nodes_[id];
        if (n.point >= 0) {
            double d2 = (pts_[n.point] - query).squaredNorm();
            std::pair<double, int> cand{d2, n.point};
            if (static_cast<int>(heap.size()) < k) {
                heap.push_back(cand);
                std::push_heap(heap.begin(), heap.end(), worse);
            } else if (worse(cand, heap.front())) {
                std::pop_heap(heap.begin(), heap.end(), worse);
                heap.back() = cand;
                std::push_heap(heap.begin(), heap.end(), worse);
            }
            continue;
        }
        double delta = query[n.axis] - n.split;
        int near = delta < 0 ? n.left : n.right;
        int far = delta < 0 ? n.right : n.left;
        bool full = static_cast<int>(heap.size()) == k;
        if (!full || delta * delta <= heap.front().first) stack.push_back(far);
        stack.push_back(near);
    }
    std::sort(heap.begin(), heap.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    out.reserve(heap.size());
    for (const auto& [d2, i] : heap) out.push_back(i);
    return out;
}

}  // namespace nrsc
