#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "nrsc/geometry.hpp"

namespace nrsc {

/// Orthographic single-view camera on the horizontal circle around the
/// origin. `depth_epsilon` is the absolute visibility tolerance in model
/// units; use `make_view_for` to derive the default from a mesh.
struct ViewSpec {
    double azimuth = 0.0;           // radians in [0, 2pi)
    double elevation = 0.0;         // radians; the capture protocol keeps this 0
    int image_resolution = 256;     // z-buffer side in pixels, >= 16
    double depth_epsilon = 1e-3;    // model units, > 0
};

/// ViewSpec with depth_epsilon = 1e-3 * bounding-box diagonal of `mesh`.
ViewSpec make_view_for(const TriMesh& mesh, double azimuth, int image_resolution = 256);

/// n views with azimuths 2*pi*k/n, elevation 0.
std::vector<ViewSpec> equally_spaced_views(int count);

struct Projection {
    PointCloud cloud;             // retained vertices, positions + mesh normals
    Correspondence part_to_full;  // retained index -> index in the full mesh
};

/// Z-buffer visibility from the view direction: rasterize every triangle,
/// keep a vertex iff its depth is within depth_epsilon of the buffer at
/// its pixel. Retained positions are bit-exact copies of mesh vertices.
Projection project_visible(const TriMesh& mesh, const ViewSpec& view);

/// Unit view direction (camera toward origin) for a view.
Vec3 view_direction(const ViewSpec& view);

/// I.i.d. N(0, sigma^2) perturbation of every position component.
/// Normals are left untouched. Deterministic for a given seed.
PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, std::uint64_t seed);

/// Keep a uniform random subset of round(keep_fraction * n) points,
/// without replacement. Deterministic for a given seed.
std::pair<PointCloud, Correspondence> downsample_random(const PointCloud& cloud,
                                                        double keep_fraction,
                                                        std::uint64_t seed);

}  // namespace nrsc
