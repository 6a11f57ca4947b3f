#pragma once

#include <vector>

#include <json.hpp>

#include "mfgrasp/geometry.hpp"
#include "mfgrasp/scene.hpp"

namespace mfgrasp {

struct RepConfig {
  int num_angles = 12;
  int num_depths = 5;
  double depth_step = 0.01;
  double max_width = 0.10;
  std::vector<double> friction_ladder = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  double surface_tolerance = 0.005;  // grasp point must lie this close to a surface

  void validate() const;
};

nlohmann::json to_json(const RepConfig& c);
RepConfig rep_config_from_json(const nlohmann::json& j);

/// Where a representation is computed: a surface point, the approach
/// direction into the surface, and the in-plane axis of angle bin 0.
struct GraspFrame {
  Vec3 point = Vec3::Zero();
  Vec3 approach = -Vec3::UnitZ();
  Vec3 zero_axis = Vec3::UnitX();

  /// Validates unit length and orthogonality (1e-9).
  static GraspFrame make(const Vec3& point, const Vec3& approach, const Vec3& zero_axis);
  /// Approach along the inward normal; zero axis completed deterministically from the normal.
  static GraspFrame from_surface(const Vec3& point, const Vec3& outward_normal);

  /// Closing direction of angle bin `a`: rotation by a*pi/A from the zero axis.
  Vec3 closing_direction(int a, int num_angles) const;
  /// Fingertip line centre for depth bin `d`.
  Vec3 line_center(int d, double depth_step) const { return point + (d + 1) * depth_step * approach; }
  GraspFrame transformed(const RigidTransform& t) const;
};

struct Cell {
  int angle = 0;
  int depth = 0;
  bool operator==(const Cell&) const = default;
};

/// Circular antipodal representation: antipodal score and jaw width per
/// (angle, depth) cell, row-major by angle. Each valid cell also keeps the
/// contact midpoint's offset along its closing direction.
class RepGrid {
 public:
  static constexpr double kInvalid = -1.0;

  RepGrid() = default;
  RepGrid(int num_angles, int num_depths);

  int num_angles() const { return angles_; }
  int num_depths() const { return depths_; }
  std::size_t cells() const { return scores_.size(); }

  double score(int a, int d) const { return scores_[index(a, d)]; }
  double width(int a, int d) const { return widths_[index(a, d)]; }
  double center(int a, int d) const { return centers_[index(a, d)]; }
  bool valid(int a, int d) const { return widths_[index(a, d)] >= 0.0; }
  void set(int a, int d, double score, double width, double center = 0.0);
  void set_invalid(int a, int d) { set(a, d, 0.0, kInvalid); }

  const std::vector<double>& scores() const { return scores_; }
  const std::vector<double>& widths() const { return widths_; }
  const std::vector<double>& centers() const { return centers_; }
  bool any_valid() const;

  /// result(a, d) = this((a - k) mod A, d): the grid of the scene rotated by
  /// k bins about the approach axis. Rows that wrap past pi reverse their
  /// closing direction, so their centre offsets change sign.
  RepGrid shifted(int k) const;
  /// Widths and centre offsets multiplied by `factor`; invalid cells stay invalid.
  RepGrid scaled_widths(double factor) const;

  std::size_t index(int a, int d) const { return static_cast<std::size_t>(a) * depths_ + d; }

 private:
  int angles_ = 0;
  int depths_ = 0;
  std::vector<double> scores_;
  std::vector<double> widths_;
  std::vector<double> centers_;
};

nlohmann::json to_json(const RepGrid& rep, const RepConfig& config);
RepGrid rep_from_json(const nlohmann::json& j);

/// Exact representation from scene geometry (BVH ray casting).
/// Throws Error(EmptyGrid) if the frame is not within surface_tolerance of a surface.
RepGrid compute_representation(const SceneIndex& scene, const GraspFrame& frame, const RepConfig& config);
RepGrid compute_representation(const Scene& scene, const GraspFrame& frame, const RepConfig& config);

/// Independent oracle: enumerates every triangle and every crossing pair.
RepGrid brute_force_representation(const Scene& scene, const GraspFrame& frame, const RepConfig& config);

/// Argmax score; ties go to the lower depth, then the lower angle.
/// Throws Error(NoGrasp) for an all-zero grid.
Cell best_antipodal_cell(const RepGrid& rep);

/// Cosine similarity of [scores | widths / max_width] mapped to [0, 1];
/// 0 when either vector has zero norm.
double rep_similarity(const RepGrid& a, const RepGrid& b, double max_width);

/// Antipodal score for a friction requirement: max(0, 1.1 - mu), capped at 1.
double ladder_score(double mu);

}  // namespace mfgrasp
