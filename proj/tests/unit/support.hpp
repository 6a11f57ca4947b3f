#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>
#include <unistd.h>

#include "mfgrasp/geometry.hpp"
#include "mfgrasp/scene.hpp"

namespace testing {

using mfgrasp::RigidTransform;
using mfgrasp::Scene;
using mfgrasp::SceneObject;
using mfgrasp::TriMesh;
using mfgrasp::Vec3;

constexpr double kPi = std::numbers::pi;
inline double deg(double d) { return d * kPi / 180.0; }

inline SceneObject object(const std::string& label, const TriMesh& mesh, const RigidTransform& pose = {}) {
  SceneObject o;
  o.model.label = label;
  o.model.mesh = mesh;
  o.pose = pose;
  return o;
}

inline Scene single(const std::string& label, const TriMesh& mesh, const RigidTransform& pose = {}) {
  Scene s;
  s.id = label;
  s.objects.push_back(object(label, mesh, pose));
  return s;
}

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("mfgrasp-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

/// Segment/triangle crossing by signed volumes; independent of the library's
/// ray code.
inline bool segment_crosses_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
  auto vol = [](const Vec3& u, const Vec3& v, const Vec3& w, const Vec3& x) { return (v - u).cross(w - u).dot(x - u); };
  const double s1 = vol(a, b, c, p);
  const double s2 = vol(a, b, c, q);
  if (s1 * s2 > 0.0 || (s1 == 0.0 && s2 == 0.0)) return false;
  const double e1 = vol(p, q, a, b);
  const double e2 = vol(p, q, b, c);
  const double e3 = vol(p, q, c, a);
  return (e1 >= 0 && e2 >= 0 && e3 >= 0) || (e1 <= 0 && e2 <= 0 && e3 <= 0);
}

/// Ray parameter of a crossing through the supporting plane, by Cramer's rule.
inline std::optional<double> ray_triangle(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c) {
  Eigen::Matrix3d m;
  m.col(0) = -d;
  m.col(1) = b - a;
  m.col(2) = c - a;
  const double det = m.determinant();
  if (std::abs(det) < 1e-18) return std::nullopt;
  const Vec3 x = m.inverse() * (o - a);
  const double u = x[1], v = x[2];
  if (u < -1e-12 || v < -1e-12 || u + v > 1.0 + 1e-12) return std::nullopt;
  return x[0];
}

}  // namespace testing
