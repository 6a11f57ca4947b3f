#include "mfgrasp/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "mfgrasp/error.hpp"

namespace mfgrasp {

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {
  if (!is_rotation(rotation)) throw Error(ErrorKind::Precondition, "RigidTransform: matrix is not a proper rotation");
  if (!translation.allFinite()) throw Error(ErrorKind::Precondition, "RigidTransform: non-finite translation");
}

RigidTransform RigidTransform::about_axis(const Vec3& pivot, const Vec3& axis, double angle) {
  const Mat3 r = axis_angle(axis, angle);
  return {r, pivot - r * pivot};
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transpose();
  return {rt, -(rt * translation_)};
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_};
}

bool RigidTransform::is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  if (((r.transpose() * r) - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

Vec3 any_orthogonal(const Vec3& n) {
  const Vec3 u = n.normalized();
  // Pick the world axis least aligned with n; the choice only depends on n.
  Vec3 ref = Vec3::UnitX();
  if (std::abs(u.x()) > std::abs(u.y())) ref = Vec3::UnitY();
  if (std::abs(u.z()) < std::min(std::abs(u.x()), std::abs(u.y()))) ref = Vec3::UnitZ();
  return (ref - ref.dot(u) * u).normalized();
}

Mat3 slerp(const Mat3& a, const Mat3& b, double t) {
  const Eigen::Quaterniond qa(a);
  const Eigen::Quaterniond qb(b);
  Mat3 r = qa.slerp(t, qb).normalized().toRotationMatrix();
  return r;
}

double rotation_distance(const Mat3& a, const Mat3& b) {
  // atan2 form stays accurate near zero where acos of the trace does not.
  const Mat3 rel = a.transpose() * b;
  const Vec3 axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
  return std::atan2(0.5 * axis.norm(), 0.5 * (rel.trace() - 1.0));
}

double Aabb::distance(const Vec3& p) const {
  const Vec3 d = (min - p).cwiseMax(p - max).cwiseMax(Vec3::Zero());
  return d.norm();
}

TriMesh::TriMesh(std::vector<Vec3> vertices, std::vector<Triangle> triangles)
    : vertices_(std::move(vertices)), triangles_(std::move(triangles)) {
  const int n = static_cast<int>(vertices_.size());
  for (const auto& tri : triangles_)
    for (int idx : tri)
      if (idx < 0 || idx >= n) throw Error(ErrorKind::Format, "TriMesh: triangle index out of range");
  rebuild();
}

void TriMesh::rebuild() {
  normals_.clear();
  normals_.reserve(triangles_.size());
  degenerate_ = 0;
  for (const auto& tri : triangles_) {
    const Vec3 n = (vertices_[tri[1]] - vertices_[tri[0]]).cross(vertices_[tri[2]] - vertices_[tri[0]]);
    const double len = n.norm();
    if (len < 1e-18) {
      ++degenerate_;
      normals_.push_back(Vec3::UnitZ());
    } else {
      normals_.push_back(n / len);
    }
  }
  std::map<std::pair<int, int>, int> edge_use;
  for (const auto& tri : triangles_)
    for (int k = 0; k < 3; ++k) {
      int a = tri[k], b = tri[(k + 1) % 3];
      if (a > b) std::swap(a, b);
      ++edge_use[{a, b}];
    }
  watertight_ = !triangles_.empty() &&
                std::all_of(edge_use.begin(), edge_use.end(), [](const auto& e) { return e.second == 2; });
}

Aabb TriMesh::bounds() const {
  Aabb box;
  for (const auto& v : vertices_) box.extend(v);
  return box;
}

double TriMesh::volume() const {
  double vol = 0.0;
  for (const auto& tri : triangles_)
    vol += vertices_[tri[0]].dot(vertices_[tri[1]].cross(vertices_[tri[2]])) / 6.0;
  return vol;
}

Vec3 TriMesh::centroid() const {
  if (watertight_) {
    double vol = 0.0;
    Vec3 acc = Vec3::Zero();
    for (const auto& tri : triangles_) {
      const Vec3& a = vertices_[tri[0]];
      const Vec3& b = vertices_[tri[1]];
      const Vec3& c = vertices_[tri[2]];
      const double v = a.dot(b.cross(c)) / 6.0;
      vol += v;
      acc += v * (a + b + c) / 4.0;
    }
    if (std::abs(vol) > 1e-18) return acc / vol;
  }
  Vec3 mean = Vec3::Zero();
  for (const auto& v : vertices_) mean += v;
  return vertices_.empty() ? mean : Vec3(mean / static_cast<double>(vertices_.size()));
}

TriMesh TriMesh::transformed(const RigidTransform& t) const {
  std::vector<Vec3> verts;
  verts.reserve(vertices_.size());
  for (const auto& v : vertices_) verts.push_back(t.apply(v));
  return TriMesh(std::move(verts), triangles_);
}

TriMesh TriMesh::scaled(double factor, const Vec3& about) const {
  std::vector<Vec3> verts;
  verts.reserve(vertices_.size());
  for (const auto& v : vertices_) verts.push_back(about + factor * (v - about));
  return TriMesh(std::move(verts), triangles_);
}

void TriMesh::orient_outward() {
  if (volume() < 0.0) {
    for (auto& tri : triangles_) std::swap(tri[1], tri[2]);
    rebuild();
  }
}

TriMesh make_box(double sx, double sy, double sz) {
  const double hx = sx / 2, hy = sy / 2;
  std::vector<Vec3> v = {{-hx, -hy, 0},  {hx, -hy, 0},  {hx, hy, 0},  {-hx, hy, 0},
                         {-hx, -hy, sz}, {hx, -hy, sz}, {hx, hy, sz}, {-hx, hy, sz}};
  std::vector<Triangle> f = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                             {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
  return TriMesh(std::move(v), std::move(f));
}

TriMesh make_icosphere(double radius, int subdivisions) {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                         {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& x : v) x.normalize();
  std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int level = 0; level < subdivisions; ++level) {
    std::map<std::pair<int, int>, int> cache;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = cache.find(key);
      if (it != cache.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      cache.emplace(key, idx);
      return idx;
    };
    std::vector<Triangle> next;
    next.reserve(f.size() * 4);
    for (const auto& t : f) {
      const int ab = midpoint(t[0], t[1]);
      const int bc = midpoint(t[1], t[2]);
      const int ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    f = std::move(next);
  }
  for (auto& x : v) x = x * radius + Vec3(0, 0, radius);
  TriMesh mesh(std::move(v), std::move(f));
  mesh.orient_outward();
  return mesh;
}

TriMesh make_cylinder(double radius, double height, int segments) {
  std::vector<Vec3> v;
  std::vector<Triangle> f;
  for (int i = 0; i < segments; ++i) {
    const double a = 2.0 * std::numbers::pi * i / segments;
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), 0.0);
    v.emplace_back(radius * std::cos(a), radius * std::sin(a), height);
  }
  const int bottom = static_cast<int>(v.size());
  v.emplace_back(0, 0, 0);
  v.emplace_back(0, 0, height);
  const int top = bottom + 1;
  for (int i = 0; i < segments; ++i) {
    const int j = (i + 1) % segments;
    const int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    f.push_back({b0, b1, t1});
    f.push_back({b0, t1, t0});
    f.push_back({bottom, b1, b0});
    f.push_back({top, t0, t1});
  }
  TriMesh mesh(std::move(v), std::move(f));
  mesh.orient_outward();
  return mesh;
}

TriMesh make_wedge(double base_width, double apex_angle, double length) {
  const double hb = base_width / 2;
  const double h = hb / std::tan(apex_angle / 2);
  const double hl = length / 2;
  std::vector<Vec3> v = {{-hb, -hl, 0}, {hb, -hl, 0}, {0, -hl, h}, {-hb, hl, 0}, {hb, hl, 0}, {0, hl, h}};
  std::vector<Triangle> f = {{0, 2, 1}, {3, 4, 5}, {0, 1, 4}, {0, 4, 3}, {1, 2, 5}, {1, 5, 4}, {2, 0, 3}, {2, 3, 5}};
  TriMesh mesh(std::move(v), std::move(f));
  mesh.orient_outward();
  return mesh;
}

TriMesh make_tetrahedron(double edge) {
  const double r = edge / std::sqrt(3.0);
  const double h = edge * std::sqrt(2.0 / 3.0);
  std::vector<Vec3> v;
  for (int i = 0; i < 3; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 3.0;
    v.emplace_back(r * std::cos(a), r * std::sin(a), 0.0);
  }
  v.emplace_back(0, 0, h);
  std::vector<Triangle> f = {{0, 2, 1}, {0, 1, 3}, {1, 2, 3}, {2, 0, 3}};
  TriMesh mesh(std::move(v), std::move(f));
  mesh.orient_outward();
  return mesh;
}

std::optional<double> intersect_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b,
                                         const Vec3& c, double eps) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-300) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tvec = origin - a;
  const double u = tvec.dot(pvec) * inv;
  if (u < -eps || u > 1.0 + eps) return std::nullopt;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv;
  if (v < -eps || u + v > 1.0 + eps) return std::nullopt;
  return e2.dot(qvec) * inv;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5.
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "format";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Config: return "config";
    case ErrorKind::NoGrasp: return "no_grasp";
    case ErrorKind::Infeasible: return "infeasible_grasp";
    case ErrorKind::SceneTooDense: return "scene_too_dense";
    case ErrorKind::NoFeasibleGrasp: return "no_feasible_grasp";
    case ErrorKind::EmptyGrid: return "empty_grid";
    case ErrorKind::LostTrack: return "lost_track";
    case ErrorKind::Diverged: return "diverged";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

bool is_usage_error(ErrorKind kind) {
  return kind == ErrorKind::Format || kind == ErrorKind::Config || kind == ErrorKind::Precondition ||
         kind == ErrorKind::Io;
}

}  // namespace mfgrasp
