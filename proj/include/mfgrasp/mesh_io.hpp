#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mfgrasp/geometry.hpp"

namespace mfgrasp {

/// Load an ASCII OBJ (v/f records) or PLY (ascii or binary little-endian)
/// mesh, multiplying coordinates by `scale` to obtain meters. Normals are
/// recomputed from winding and flipped outward for closed meshes.
/// Throws Error(Format) with the offending line or byte offset.
TriMesh load_mesh(const std::filesystem::path& path, double scale);

TriMesh parse_obj(const std::string& text, double scale);
TriMesh parse_ply(const std::string& bytes, double scale);

void write_mesh_obj(const std::filesystem::path& path, const TriMesh& mesh);

struct OrientedPoint {
  Vec3 position;
  Vec3 normal;
};

/// Binary little-endian PLY with float32 x,y,z,nx,ny,nz.
void write_points_ply(const std::filesystem::path& path, const std::vector<OrientedPoint>& points);
std::vector<OrientedPoint> read_points_ply(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace mfgrasp
