#include "mfgrasp/bvh.hpp"

#include <algorithm>
#include <cmath>

namespace mfgrasp {

namespace {
constexpr int kLeafSize = 4;
}

MeshBvh::MeshBvh(const TriMesh& mesh) : mesh_(&mesh) {
  const auto& verts = mesh.vertices();
  const auto& tris = mesh.triangles();
  const int n = static_cast<int>(tris.size());
  order_.resize(n);
  tri_boxes_.resize(n);
  tri_centers_.resize(n);
  for (int i = 0; i < n; ++i) {
    order_[i] = i;
    Aabb box;
    for (int k : tris[i]) box.extend(verts[k]);
    tri_boxes_[i] = box;
    tri_centers_[i] = box.center();
  }
  nodes_.reserve(2 * std::max(1, n / kLeafSize) + 1);
  if (n == 0) {
    nodes_.push_back(Node{});
    return;
  }
  build(0, n);
}

int MeshBvh::build(int begin, int end) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{});
  Aabb box, centers;
  for (int i = begin; i < end; ++i) {
    box.extend(tri_boxes_[order_[i]]);
    centers.extend(tri_centers_[order_[i]]);
  }
  nodes_[index].box = box;
  if (end - begin <= kLeafSize) {
    nodes_[index].first = begin;
    nodes_[index].count = end - begin;
    return index;
  }
  int axis = 0;
  centers.extent().maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    if (tri_centers_[a][axis] != tri_centers_[b][axis]) return tri_centers_[a][axis] < tri_centers_[b][axis];
    return a < b;
  });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

bool MeshBvh::slab(const Aabb& box, const Vec3& origin, const Vec3& inv_dir, double t_min, double t_max) {
  constexpr double pad = 1e-9;
  for (int k = 0; k < 3; ++k) {
    double t0 = (box.min[k] - pad - origin[k]) * inv_dir[k];
    double t1 = (box.max[k] + pad - origin[k]) * inv_dir[k];
    if (std::isnan(t0) || std::isnan(t1)) {
      // Ray parallel to the slab and exactly on a boundary: treat as inside.
      if (origin[k] < box.min[k] - pad || origin[k] > box.max[k] + pad) return false;
      continue;
    }
    if (t0 > t1) std::swap(t0, t1);
    t_min = std::max(t_min, t0);
    t_max = std::min(t_max, t1);
    if (t_min > t_max) return false;
  }
  return true;
}

std::optional<RayHit> MeshBvh::raycast(const Vec3& origin, const Vec3& dir, double t_min, double t_max) const {
  if (order_.empty()) return std::nullopt;
  const Vec3 inv = dir.cwiseInverse();
  const auto& verts = mesh_->vertices();
  const auto& tris = mesh_->triangles();
  std::optional<RayHit> best;
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!slab(node.box, origin, inv, t_min, best ? best->t : t_max)) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int tri = order_[i];
        const auto& t = tris[tri];
        const auto hit = intersect_triangle(origin, dir, verts[t[0]], verts[t[1]], verts[t[2]]);
        if (hit && *hit >= t_min && *hit <= (best ? best->t : t_max)) {
          if (!best || *hit < best->t || (*hit == best->t && tri < best->triangle))
            best = RayHit{*hit, tri, mesh_->normals()[tri]};
        }
      }
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
  return best;
}

void MeshBvh::all_hits(const Vec3& origin, const Vec3& dir, double t_min, double t_max,
                       std::vector<RayHit>& out) const {
  if (order_.empty()) return;
  const Vec3 inv = dir.cwiseInverse();
  const auto& verts = mesh_->vertices();
  const auto& tris = mesh_->triangles();
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (!slab(node.box, origin, inv, t_min, t_max)) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int tri = order_[i];
        const auto& t = tris[tri];
        const auto hit = intersect_triangle(origin, dir, verts[t[0]], verts[t[1]], verts[t[2]]);
        if (hit && *hit >= t_min && *hit <= t_max) out.push_back(RayHit{*hit, tri, mesh_->normals()[tri]});
      }
    } else {
      stack[top++] = node.left;
      stack[top++] = node.right;
    }
  }
}

double MeshBvh::distance(const Vec3& p, double max_dist) const {
  if (order_.empty()) return max_dist;
  const auto& verts = mesh_->vertices();
  const auto& tris = mesh_->triangles();
  double best = max_dist;
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (node.box.distance(p) >= best) continue;
    if (node.left < 0) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const auto& t = tris[order_[i]];
        const double d = (closest_point_on_triangle(p, verts[t[0]], verts[t[1]], verts[t[2]]) - p).norm();
        best = std::min(best, d);
      }
    } else {
      const double dl = nodes_[node.left].box.distance(p);
      const double dr = nodes_[node.right].box.distance(p);
      // Visit the nearer child first.
      if (dl < dr) {
        stack[top++] = node.right;
        stack[top++] = node.left;
      } else {
        stack[top++] = node.left;
        stack[top++] = node.right;
      }
    }
  }
  return best;
}

}  // namespace mfgrasp
