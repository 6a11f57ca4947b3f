#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgrasp/bvh.hpp"
#include "mfgrasp/geometry.hpp"

namespace mfgrasp {

struct SurfacePoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();  // unit, outward
};

/// A library entry: a mesh in its resting orientation plus provenance.
struct ObjectModel {
  std::string label;
  TriMesh mesh;
  std::string mesh_path;  // empty for generated primitives
  double scale = 1.0;
};

struct SceneObject {
  ObjectModel model;
  RigidTransform pose;
};

struct Scene {
  std::string id;
  double plane_height = 0.0;
  std::vector<SceneObject> objects;

  Scene transformed(const RigidTransform& t) const;
};

/// World-space meshes and acceleration structures for one scene. Immutable
/// after construction; safe to share across threads.
class SceneIndex {
 public:
  explicit SceneIndex(const Scene& scene);
  SceneIndex(const SceneIndex&) = delete;
  SceneIndex& operator=(const SceneIndex&) = delete;

  const Scene& scene() const { return *scene_; }
  std::size_t size() const { return meshes_.size(); }
  const TriMesh& world_mesh(std::size_t i) const { return *meshes_[i]; }
  const MeshBvh& bvh(std::size_t i) const { return *bvhs_[i]; }
  double plane_height() const { return plane_height_; }
  Aabb bounds() const;

  struct Hit {
    double t = 0.0;
    int object = -1;  // -1 for the support plane
    Vec3 normal = Vec3::Zero();
  };

  /// First hit against the objects, and against the support plane when
  /// `plane_half_extent` > 0 (a square of that half-size about the origin).
  std::optional<Hit> raycast(const Vec3& origin, const Vec3& dir, double t_max, double plane_half_extent = 0.0,
                             int skip_object = -2) const;

  /// Unsigned distance to the nearest object surface and that object's id.
  std::pair<double, int> nearest_surface(const Vec3& p, double max_dist) const;

 private:
  std::shared_ptr<const Scene> scene_;
  double plane_height_;
  std::vector<std::unique_ptr<TriMesh>> meshes_;
  std::vector<std::unique_ptr<MeshBvh>> bvhs_;
};

struct PointCloud {
  std::vector<SurfacePoint> points;
  std::vector<int> object_ids;     // -1 for support-plane points
  std::vector<std::uint8_t> reliable;  // normals usable for grasp sampling
  RigidTransform camera;
  bool empty_warning = false;

  std::size_t size() const { return points.size(); }
  PointCloud transformed(const RigidTransform& t) const;
};

struct SceneGenConfig {
  double region_half_extent = 0.12;  // placement square about the origin, m
  double contact_gap = 0.0005;       // clearance left after dropping, m
  int max_rejections = 1000;
};

/// Drops `count` objects from the library with random yaw and position,
/// stacking on the plane or on earlier objects. Deterministic for a seed.
/// Throws Error(SceneTooDense) when an object cannot be placed.
Scene synthesize_scene(const std::vector<ObjectModel>& library, int count, std::uint64_t seed,
                       const SceneGenConfig& config = {});

struct CloudConfig {
  int target_points = 20000;
  double plane_half_extent = 0.3;  // 0 disables the support plane
};

/// Camera looking straight down at the origin from `height` above the plane.
/// Camera convention: optical axis +z, image x right, y down.
RigidTransform overhead_camera(double plane_height, double height = 0.6);

/// Ray-cast partial view. Only first hits are kept; normals come from the
/// hit face and face the camera.
PointCloud sample_point_cloud(const SceneIndex& scene, const RigidTransform& camera, const CloudConfig& config = {});
PointCloud sample_point_cloud(const Scene& scene, const RigidTransform& camera, const CloudConfig& config = {});

struct NormalEstimate {
  SurfacePoint point;
  bool reliable = false;
};

/// Plane-fit normals from k nearest neighbours, oriented toward `viewpoint`.
std::vector<NormalEstimate> estimate_normals(const std::vector<Vec3>& points, int k, const Vec3& viewpoint);

// Scene descriptor: object mesh paths, row-major rotation, translation, plane height.
nlohmann::json scene_to_json(const Scene& scene);
/// Mesh paths in the descriptor are resolved relative to `base_dir`.
Scene scene_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// Brute-force minimum distance between two meshes (0 when they intersect).
double mesh_distance(const TriMesh& a, const TriMesh& b);
bool meshes_intersect(const TriMesh& a, const TriMesh& b);

}  // namespace mfgrasp
