#pragma once

#include <filesystem>
#include <string>

#include "nrsc/geometry.hpp"

namespace nrsc {

/// ASCII PLY reader. Accepts `element vertex` with float/double x,y,z and
/// optional nx,ny,nz, and `element face` with a vertex_indices list of
/// triangles. Rejects non-finite coordinates and out-of-range indices
/// with "path:line:" diagnostics (FileFormatError).
TriMesh read_ply(const std::filesystem::path& path);

/// ASCII OFF reader (triangles only), same validation rules as read_ply.
TriMesh read_off(const std::filesystem::path& path);

/// Dispatch on extension (.ply / .off, case-insensitive).
TriMesh read_mesh(const std::filesystem::path& path);

/// ASCII PLY writer; emits normals when the mesh has them. Coordinates
/// are printed with enough digits to round-trip doubles exactly. The
/// write is atomic (temp file + rename).
void write_ply(const std::filesystem::path& path, const TriMesh& mesh);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

void write_off(const std::filesystem::path& path, const TriMesh& mesh);

/// Atomically replace `path` with `content`.
void atomic_write_text(const std::filesystem::path& path, const std::string& content);

/// Correspondence CSV: header `part_index,full_index`, zero-based rows.
void write_correspondence_csv(const std::filesystem::path& path, const Correspondence& corr);
Correspondence read_correspondence_csv(const std::filesystem::path& path);

}  // namespace nrsc
