#pragma once

#include "nrsc/geometry.hpp"
#include "nrsc/net.hpp"
#include "nrsc/train.hpp"

namespace nrsc {

/// Deform Q onto the pose of P: reconstruction vertices are
/// generate(Q6, theta(P, Q)), faces are Q's faces. Both inputs must be
/// centered and carry normals. `threads` splits the per-point forward
/// work (0 = use the hardware count); results are bit-identical for any
/// thread count.
TriMesh complete(const PointCloud& P, const TriMesh& Q, const NetworkWeights& weights,
                 int threads = 0);

/// Checkpoint-aware variant: refuses a mode mismatch between the
/// checkpoint and the invocation (a fixed-template model must be invoked
/// as such, and vice versa).
TriMesh complete(const PointCloud& P, const TriMesh& Q, const Checkpoint& ck,
                 TrainMode invocation_mode, int threads = 0);

/// Trimmed partial ICP: match every point of P to its nearest
/// reconstruction point, keep the best (1 - trim_fraction) matches,
/// solve the least-squares rigid fit (SVD, reflection-corrected), and
/// iterate. Returns the composed transform taking the original
/// reconstruction into P's frame. The trimmed RMS is checked to be
/// non-increasing every iteration.
RigidTransform icp_align(const PointCloud& reconstruction, const PointCloud& P,
                         int max_iters = 50, double trim_fraction = 0.1);

/// Dense map P -> Q: index of the nearest aligned-reconstruction vertex
/// for every point of P (reconstruction vertices carry Q's indexing).
Correspondence recover_correspondence(const PointCloud& P,
                                      const PointCloud& aligned_reconstruction,
                                      const TriMesh& Q);

}  // namespace nrsc
