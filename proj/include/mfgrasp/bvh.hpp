#pragma once

#include <vector>

#include "mfgrasp/geometry.hpp"

namespace mfgrasp {

/// Bounding-volume hierarchy over the triangles of one mesh. Holds a
/// reference to the mesh, which must outlive it.
class MeshBvh {
 public:
  explicit MeshBvh(const TriMesh& mesh);

  const TriMesh& mesh() const { return *mesh_; }
  const Aabb& bounds() const { return nodes_.front().box; }

  /// Nearest hit with t in [t_min, t_max].
  std::optional<RayHit> raycast(const Vec3& origin, const Vec3& dir, double t_min, double t_max) const;

  /// Every triangle crossing with t in [t_min, t_max], unsorted.
  void all_hits(const Vec3& origin, const Vec3& dir, double t_min, double t_max, std::vector<RayHit>& out) const;

  /// Unsigned distance from p to the surface; searches no farther than
  /// `max_dist` and returns max_dist when nothing is closer.
  double distance(const Vec3& p, double max_dist) const;

 private:
  struct Node {
    Aabb box;
    int left = -1;   // child index, or -1 for a leaf
    int right = -1;
    int first = 0;   // leaf range into order_
    int count = 0;
  };

  int build(int begin, int end);
  static bool slab(const Aabb& box, const Vec3& origin, const Vec3& inv_dir, double t_min, double t_max);

  const TriMesh* mesh_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
  std::vector<Aabb> tri_boxes_;
  std::vector<Vec3> tri_centers_;
};

}  // namespace mfgrasp
