#pragma once

#include <array>
#include <cstdint>
#include <unordered_set>
#include <vector>

#include "mfgrasp/geometry.hpp"
#include "mfgrasp/hand.hpp"

namespace mfgrasp {

/// Sparse occupancy on an axis-aligned lattice. Cell (i, j, k) covers
/// origin + size * [i, i+1) x [j, j+1) x [k, k+1).
class VoxelGrid {
 public:
  VoxelGrid(const Vec3& origin, double size);

  const Vec3& origin() const { return origin_; }
  double size() const { return size_; }
  std::size_t occupied_count() const { return cells_.size(); }

  /// Lattice index of p; coordinates below the origin are negative.
  std::array<std::int64_t, 3> index_of(const Vec3& p) const;
  void insert(const std::array<std::int64_t, 3>& idx);
  bool occupied(const std::array<std::int64_t, 3>& idx) const;
  bool contains(const Vec3& p) const { return occupied(index_of(p)); }
  std::vector<std::array<std::int64_t, 3>> cells() const;
  Vec3 cell_min(const std::array<std::int64_t, 3>& idx) const;
  Aabb bounds() const { return bounds_; }

 private:
  static std::uint64_t pack(const std::array<std::int64_t, 3>& idx);

  Vec3 origin_;
  double size_;
  std::unordered_set<std::uint64_t> cells_;
  Aabb bounds_;
};

/// Origin snaps to the minimum corner of the point set.
VoxelGrid voxelize_hand(const std::vector<Vec3>& points, double voxel_size);

/// Capsules around the closing line at each engaged finger. Scene points
/// inside them are intended contact, not collision.
struct ExclusionZone {
  std::vector<std::pair<Vec3, Vec3>> segments;
  double radius = 0.0;

  bool contains(const Vec3& p) const;
};

ExclusionZone closing_exclusion(const MultiFingerGrasp& grasp, const GraspType& type, const HandModel& hand,
                                double radius);

struct CollisionResult {
  bool collides = false;
  int contacts = 0;  // scene points inside occupied voxels
};

CollisionResult check_collision(const VoxelGrid& grid, const std::vector<Vec3>& cloud, const ExclusionZone& zone);

struct CollisionConfig {
  double voxel_size = 0.003;
  double exclude_radius = 0.015;
};

/// Poses and voxelises the hand for `grasp`, then checks it against the cloud.
CollisionResult check_grasp_collision(const MultiFingerGrasp& grasp, const GraspType& type, const HandModel& hand,
                                      const std::vector<Vec3>& cloud, const CollisionConfig& config = {});

/// Order-preserving filter; each candidate is checked independently.
std::vector<MultiFingerGrasp> batch_filter(const std::vector<MultiFingerGrasp>& candidates,
                                           const std::vector<GraspType>& taxonomy, const HandModel& hand,
                                           const std::vector<Vec3>& cloud, const CollisionConfig& config = {});

}  // namespace mfgrasp
