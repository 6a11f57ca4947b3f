#include "mfgrasp/collision.hpp"

#include <algorithm>
#include <cmath>

#include "mfgrasp/error.hpp"

namespace mfgrasp {

namespace {
constexpr std::int64_t kBias = std::int64_t{1} << 20;
constexpr std::int64_t kRange = std::int64_t{1} << 21;
}  // namespace

VoxelGrid::VoxelGrid(const Vec3& origin, double size) : origin_(origin), size_(size) {
  if (!(size > 0.0) || !std::isfinite(size)) throw Error(ErrorKind::Precondition, "voxel size must be positive");
}

std::array<std::int64_t, 3> VoxelGrid::index_of(const Vec3& p) const {
  std::array<std::int64_t, 3> idx{};
  for (int k = 0; k < 3; ++k) {
    std::int64_t i = static_cast<std::int64_t>(std::floor((p[k] - origin_[k]) / size_));
    // Agree exactly with the cell bounds that cell_min reports.
    if (p[k] < origin_[k] + size_ * static_cast<double>(i)) --i;
    else if (p[k] >= origin_[k] + size_ * static_cast<double>(i + 1)) ++i;
    idx[k] = i;
  }
  return idx;
}

std::uint64_t VoxelGrid::pack(const std::array<std::int64_t, 3>& idx) {
  std::uint64_t key = 0;
  for (int k = 0; k < 3; ++k) key = (key << 21) | static_cast<std::uint64_t>(idx[k] + kBias);
  return key;
}

void VoxelGrid::insert(const std::array<std::int64_t, 3>& idx) {
  for (int k = 0; k < 3; ++k)
    if (idx[k] + kBias < 0 || idx[k] + kBias >= kRange) throw Error(ErrorKind::Precondition, "voxel index out of range");
  cells_.insert(pack(idx));
  const Vec3 lo = cell_min(idx);
  bounds_.extend(lo);
  bounds_.extend(Vec3(lo + Vec3::Constant(size_)));
}

bool VoxelGrid::occupied(const std::array<std::int64_t, 3>& idx) const {
  for (int k = 0; k < 3; ++k)
    if (idx[k] + kBias < 0 || idx[k] + kBias >= kRange) return false;
  return cells_.count(pack(idx)) > 0;
}

std::vector<std::array<std::int64_t, 3>> VoxelGrid::cells() const {
  std::vector<std::array<std::int64_t, 3>> out;
  out.reserve(cells_.size());
  const std::uint64_t mask = (std::uint64_t{1} << 21) - 1;
  for (std::uint64_t key : cells_) {
    out.push_back({static_cast<std::int64_t>((key >> 42) & mask) - kBias,
                   static_cast<std::int64_t>((key >> 21) & mask) - kBias, static_cast<std::int64_t>(key & mask) - kBias});
  }
  std::sort(out.begin(), out.end());
  return out;
}

Vec3 VoxelGrid::cell_min(const std::array<std::int64_t, 3>& idx) const {
  return origin_ + size_ * Vec3(static_cast<double>(idx[0]), static_cast<double>(idx[1]), static_cast<double>(idx[2]));
}

VoxelGrid voxelize_hand(const std::vector<Vec3>& points, double voxel_size) {
  if (points.empty()) throw Error(ErrorKind::Precondition, "voxelize_hand: empty point set");
  Aabb box;
  for (const auto& p : points) box.extend(p);
  VoxelGrid grid(box.min, voxel_size);
  for (const auto& p : points) grid.insert(grid.index_of(p));
  return grid;
}

bool ExclusionZone::contains(const Vec3& p) const {
  const double r2 = radius * radius;
  for (const auto& [a, b] : segments) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    if ((a + s * ab - p).squaredNorm() <= r2) return true;
  }
  return false;
}

ExclusionZone closing_exclusion(const MultiFingerGrasp& grasp, const GraspType& type, const HandModel& hand,
                                double radius) {
  const HandShape shape = hand_shape(hand, type, grasp.width);
  ExclusionZone zone;
  zone.radius = radius;
  const double half = 0.5 * grasp.width;
  for (int f = 0; f < kNumFingers; ++f) {
    if (!shape.engaged[f]) continue;
    const double z = shape.pad_centers[f].z();
    const Vec3 a = grasp.rotation * Vec3(0.0, -half, z) + grasp.translation;
    const Vec3 b = grasp.rotation * Vec3(0.0, half, z) + grasp.translation;
    zone.segments.emplace_back(a, b);
  }
  return zone;
}

CollisionResult check_collision(const VoxelGrid& grid, const std::vector<Vec3>& cloud, const ExclusionZone& zone) {
  CollisionResult r;
  const Aabb box = grid.bounds();
  if (box.empty()) return r;
  for (const auto& p : cloud) {
    if ((p.array() < box.min.array()).any() || (p.array() > box.max.array()).any()) continue;
    if (!grid.contains(p)) continue;
    if (zone.contains(p)) continue;
    ++r.contacts;
  }
  r.collides = r.contacts > 0;
  return r;
}

CollisionResult check_grasp_collision(const MultiFingerGrasp& grasp, const GraspType& type, const HandModel& hand,
                                      const std::vector<Vec3>& cloud, const CollisionConfig& config) {
  const VoxelGrid grid = voxelize_hand(hand_geometry(grasp, type, hand), config.voxel_size);
  return check_collision(grid, cloud, closing_exclusion(grasp, type, hand, config.exclude_radius));
}

std::vector<MultiFingerGrasp> batch_filter(const std::vector<MultiFingerGrasp>& candidates,
                                           const std::vector<GraspType>& taxonomy, const HandModel& hand,
                                           const std::vector<Vec3>& cloud, const CollisionConfig& config) {
  std::vector<MultiFingerGrasp> out;
  for (const auto& g : candidates) {
    if (g.type_id < 0 || g.type_id >= static_cast<int>(taxonomy.size()))
      throw Error(ErrorKind::Precondition, "batch_filter: unknown grasp type");
    if (!check_grasp_collision(g, taxonomy[g.type_id], hand, cloud, config).collides) out.push_back(g);
  }
  return out;
}

}  // namespace mfgrasp
