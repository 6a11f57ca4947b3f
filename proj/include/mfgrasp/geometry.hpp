#pragma once

#include <array>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace mfgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Proper rigid motion x -> R x + t. Construction validates that R is a
/// rotation (orthonormal, det +1) to 1e-9.
class RigidTransform {
 public:
  RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}
  RigidTransform(const Mat3& rotation, const Vec3& translation);

  static RigidTransform identity() { return {}; }
  static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t}; }
  static RigidTransform rotation(const Mat3& r) { return {r, Vec3::Zero()}; }
  /// Rotation by `angle` about the line through `pivot` along `axis`.
  static RigidTransform about_axis(const Vec3& pivot, const Vec3& axis, double angle);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 rotate(const Vec3& v) const { return rotation_ * v; }
  RigidTransform inverse() const;
  RigidTransform operator*(const RigidTransform& rhs) const;

  static bool is_rotation(const Mat3& r, double tol = 1e-9);

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

Mat3 axis_angle(const Vec3& axis, double angle);

/// Deterministic unit vector orthogonal to `n` (n need not be unit).
Vec3 any_orthogonal(const Vec3& n);

/// Geodesic interpolation between rotations (t = 0 gives a, t = 1 gives b).
Mat3 slerp(const Mat3& a, const Mat3& b, double t);

/// Angle of the relative rotation a^T b, radians.
double rotation_distance(const Mat3& a, const Mat3& b);

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
  bool empty() const { return (min.array() > max.array()).any(); }
  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 extent() const { return max - min; }
  bool overlaps(const Aabb& o, double pad = 0.0) const {
    return (min.array() <= o.max.array() + pad).all() && (o.min.array() <= max.array() + pad).all();
  }
  double distance(const Vec3& p) const;
};

using Triangle = std::array<int, 3>;

class TriMesh {
 public:
  TriMesh() = default;
  TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles);

  const std::vector<Vec3>& vertices() const { return vertices_; }
  const std::vector<Triangle>& triangles() const { return triangles_; }
  const std::vector<Vec3>& normals() const { return normals_; }
  bool watertight() const { return watertight_; }
  int degenerate_count() const { return degenerate_; }

  std::size_t num_vertices() const { return vertices_.size(); }
  std::size_t num_triangles() const { return triangles_.size(); }

  Aabb bounds() const;
  /// Volume centroid for closed meshes, vertex mean otherwise.
  Vec3 centroid() const;
  double volume() const;

  TriMesh transformed(const RigidTransform& t) const;
  TriMesh scaled(double factor, const Vec3& about = Vec3::Zero()) const;

  /// Flip every triangle when the signed volume is negative so that normals
  /// point outward. Only meaningful for closed meshes.
  void orient_outward();

 private:
  void rebuild();

  std::vector<Vec3> vertices_;
  std::vector<Triangle> triangles_;
  std::vector<Vec3> normals_;
  bool watertight_ = false;
  int degenerate_ = 0;
};

// Primitive solids, centred on the origin in x/y with their base at z = 0.
TriMesh make_box(double sx, double sy, double sz);
TriMesh make_icosphere(double radius, int subdivisions);
TriMesh make_cylinder(double radius, double height, int segments);
/// Triangular prism: isosceles cross-section in the x/z plane with the given
/// apex angle at the top, extruded `length` along y.
TriMesh make_wedge(double base_width, double apex_angle, double length);
TriMesh make_tetrahedron(double edge);

struct RayHit {
  double t = 0.0;
  int triangle = -1;
  Vec3 normal = Vec3::Zero();
};

/// Möller–Trumbore. `eps` widens the barycentric acceptance so that hits on
/// shared edges are reported by both neighbours rather than by neither.
std::optional<double> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                         const Vec3& c, double eps = 1e-12);

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace mfgrasp
