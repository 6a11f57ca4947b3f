#include "mfgrasp/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mfgrasp/error.hpp"
#include "mfgrasp/mesh_io.hpp"
#include "mfgrasp/rng.hpp"

namespace mfgrasp {

Scene Scene::transformed(const RigidTransform& t) const {
  Scene out = *this;
  for (auto& obj : out.objects) obj.pose = t * obj.pose;
  // The plane is carried implicitly; callers transforming scenes off-axis
  // should not rely on plane_height afterwards.
  out.plane_height = plane_height + t.translation().z();
  return out;
}

SceneIndex::SceneIndex(const Scene& scene)
    : scene_(std::make_shared<const Scene>(scene)), plane_height_(scene.plane_height) {
  for (const auto& obj : scene_->objects) {
    meshes_.push_back(std::make_unique<TriMesh>(obj.model.mesh.transformed(obj.pose)));
    bvhs_.push_back(std::make_unique<MeshBvh>(*meshes_.back()));
  }
}

Aabb SceneIndex::bounds() const {
  Aabb box;
  for (const auto& b : bvhs_) box.extend(b->bounds());
  return box;
}

std::optional<SceneIndex::Hit> SceneIndex::raycast(const Vec3& origin, const Vec3& dir, double t_max,
                                                   double plane_half_extent, int skip_object) const {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < bvhs_.size(); ++i) {
    if (static_cast<int>(i) == skip_object) continue;
    const auto hit = bvhs_[i]->raycast(origin, dir, 0.0, best ? best->t : t_max);
    if (hit && (!best || hit->t < best->t)) best = Hit{hit->t, static_cast<int>(i), hit->normal};
  }
  if (plane_half_extent > 0.0 && std::abs(dir.z()) > 1e-12) {
    const double t = (plane_height_ - origin.z()) / dir.z();
    const Vec3 p = origin + t * dir;
    if (t >= 0.0 && t <= (best ? best->t : t_max) && std::abs(p.x()) <= plane_half_extent &&
        std::abs(p.y()) <= plane_half_extent)
      best = Hit{t, -1, Vec3::UnitZ()};
  }
  return best;
}

std::pair<double, int> SceneIndex::nearest_surface(const Vec3& p, double max_dist) const {
  double best = max_dist;
  int which = -1;
  for (std::size_t i = 0; i < bvhs_.size(); ++i) {
    const double d = bvhs_[i]->distance(p, best);
    if (d < best) {
      best = d;
      which = static_cast<int>(i);
    }
  }
  return {best, which};
}

PointCloud PointCloud::transformed(const RigidTransform& t) const {
  PointCloud out = *this;
  for (auto& p : out.points) {
    p.position = t.apply(p.position);
    p.normal = t.rotate(p.normal);
  }
  out.camera = t * camera;
  return out;
}

namespace {

bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
  const auto t = intersect_triangle(p, q - p, a, b, c, 0.0);
  return t && *t >= 0.0 && *t <= 1.0;
}

bool triangles_intersect(const Vec3* t1, const Vec3* t2) {
  for (int k = 0; k < 3; ++k) {
    if (segment_hits_triangle(t1[k], t1[(k + 1) % 3], t2[0], t2[1], t2[2])) return true;
    if (segment_hits_triangle(t2[k], t2[(k + 1) % 3], t1[0], t1[1], t1[2])) return true;
  }
  return false;
}

double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2, const Vec3& q2) {
  // Ericson, Real-Time Collision Detection, 5.1.9.
  const Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
  const double a = d1.dot(d1), e = d2.dot(d2), f = d2.dot(r);
  double s = 0, t = 0;
  if (a <= 1e-30 && e <= 1e-30) return r.norm();
  if (a <= 1e-30) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-30) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      s = denom > 1e-30 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p1 + d1 * s) - (p2 + d2 * t)).norm();
}

template <typename Fn>
void for_each_overlapping_pair(const TriMesh& a, const TriMesh& b, double pad, Fn&& fn) {
  std::vector<Aabb> boxes_b(b.num_triangles());
  for (std::size_t j = 0; j < b.num_triangles(); ++j)
    for (int k : b.triangles()[j]) boxes_b[j].extend(b.vertices()[k]);
  const Aabb all_b = b.bounds();
  for (std::size_t i = 0; i < a.num_triangles(); ++i) {
    Aabb box;
    for (int k : a.triangles()[i]) box.extend(a.vertices()[k]);
    if (!box.overlaps(all_b, pad)) continue;
    for (std::size_t j = 0; j < b.num_triangles(); ++j)
      if (box.overlaps(boxes_b[j], pad))
        if (fn(i, j)) return;
  }
}

}  // namespace

bool meshes_intersect(const TriMesh& a, const TriMesh& b) {
  bool hit = false;
  for_each_overlapping_pair(a, b, 0.0, [&](std::size_t i, std::size_t j) {
    const auto& ta = a.triangles()[i];
    const auto& tb = b.triangles()[j];
    const Vec3 va[3] = {a.vertices()[ta[0]], a.vertices()[ta[1]], a.vertices()[ta[2]]};
    const Vec3 vb[3] = {b.vertices()[tb[0]], b.vertices()[tb[1]], b.vertices()[tb[2]]};
    hit = triangles_intersect(va, vb);
    return hit;
  });
  return hit;
}

double mesh_distance(const TriMesh& a, const TriMesh& b) {
  if (meshes_intersect(a, b)) return 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < a.num_triangles(); ++i) {
    const auto& ta = a.triangles()[i];
    const Vec3 va[3] = {a.vertices()[ta[0]], a.vertices()[ta[1]], a.vertices()[ta[2]]};
    for (std::size_t j = 0; j < b.num_triangles(); ++j) {
      const auto& tb = b.triangles()[j];
      const Vec3 vb[3] = {b.vertices()[tb[0]], b.vertices()[tb[1]], b.vertices()[tb[2]]};
      for (int k = 0; k < 3; ++k) {
        best = std::min(best, (closest_point_on_triangle(va[k], vb[0], vb[1], vb[2]) - va[k]).norm());
        best = std::min(best, (closest_point_on_triangle(vb[k], va[0], va[1], va[2]) - vb[k]).norm());
        for (int m = 0; m < 3; ++m)
          best = std::min(best, segment_segment_distance(va[k], va[(k + 1) % 3], vb[m], vb[(m + 1) % 3]));
      }
    }
  }
  return best;
}

Scene synthesize_scene(const std::vector<ObjectModel>& library, int count, std::uint64_t seed,
                       const SceneGenConfig& config) {
  if (count < 1) throw Error(ErrorKind::Precondition, "synthesize_scene: count must be >= 1");
  if (library.empty()) throw Error(ErrorKind::Precondition, "synthesize_scene: empty object library");
  Rng rng(seed);
  Scene scene;
  scene.id = "scene-" + std::to_string(seed);
  std::vector<std::unique_ptr<TriMesh>> placed;
  std::vector<std::unique_ptr<MeshBvh>> placed_bvh;

  for (int n = 0; n < count; ++n) {
    const ObjectModel& model = library[rng.index(library.size())];
    // Re-base the model so its footprint is centred and its lowest point sits at z = 0.
    const Aabb local = model.mesh.bounds();
    const Vec3 rebase(-local.center().x(), -local.center().y(), -local.min.z());
    bool ok = false;
    for (int attempt = 0; attempt < config.max_rejections && !ok; ++attempt) {
      const double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double x = rng.uniform(-config.region_half_extent, config.region_half_extent);
      const double y = rng.uniform(-config.region_half_extent, config.region_half_extent);
      const Mat3 r = axis_angle(Vec3::UnitZ(), yaw);
      const RigidTransform footprint(r, r * rebase + Vec3(x, y, 0.0));
      const TriMesh probe = model.mesh.transformed(footprint);

      // Vertical sweep: distance the object can fall before touching the
      // plane or any placed object (vertex/face contacts in both directions).
      double lift = 1.0;
      for (const auto& m : placed) lift = std::max(lift, m->bounds().max.z() + 0.1);
      double drop = lift;  // distance to plane from the lifted pose
      const Vec3 down(0, 0, -1);
      for (const auto& v : probe.vertices()) {
        const Vec3 start = v + Vec3(0, 0, lift + scene.plane_height);
        for (const auto& bvh : placed_bvh)
          if (auto hit = bvh->raycast(start, down, 0.0, drop)) drop = std::min(drop, hit->t);
      }
      MeshBvh probe_bvh(probe);
      for (const auto& m : placed)
        for (const auto& v : m->vertices()) {
          const Vec3 start = v - Vec3(0, 0, lift + scene.plane_height);
          if (auto hit = probe_bvh.raycast(start, -down, 0.0, drop)) drop = std::min(drop, hit->t);
        }
      const double z = scene.plane_height + lift - drop + config.contact_gap;
      const RigidTransform pose = RigidTransform::translation(Vec3(0, 0, z)) * footprint;
      auto world = std::make_unique<TriMesh>(model.mesh.transformed(pose));
      bool clash = false;
      for (const auto& m : placed)
        if (meshes_intersect(*world, *m)) {
          clash = true;
          break;
        }
      if (clash) continue;
      scene.objects.push_back(SceneObject{model, pose});
      placed_bvh.push_back(std::make_unique<MeshBvh>(*world));
      placed.push_back(std::move(world));
      ok = true;
    }
    if (!ok)
      throw Error(ErrorKind::SceneTooDense,
                  "synthesize_scene: could not place object " + std::to_string(n) + " after " +
                      std::to_string(config.max_rejections) + " attempts");
  }
  return scene;
}

RigidTransform overhead_camera(double plane_height, double height) {
  Mat3 r;
  r.col(0) = Vec3::UnitX();
  r.col(1) = -Vec3::UnitY();
  r.col(2) = -Vec3::UnitZ();
  return {r, Vec3(0, 0, plane_height + height)};
}

PointCloud sample_point_cloud(const SceneIndex& index, const RigidTransform& camera, const CloudConfig& config) {
  PointCloud cloud;
  cloud.camera = camera;
  // Image-plane window covering the objects and, if enabled, the plane square.
  Aabb region = index.bounds();
  if (config.plane_half_extent > 0.0) {
    const double h = config.plane_half_extent;
    region.extend(Vec3(-h, -h, index.plane_height()));
    region.extend(Vec3(h, h, index.plane_height()));
  }
  if (region.empty()) {
    cloud.empty_warning = true;
    return cloud;
  }
  const RigidTransform world_to_cam = camera.inverse();
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  for (int c = 0; c < 8; ++c) {
    const Vec3 corner((c & 1) ? region.max.x() : region.min.x(), (c & 2) ? region.max.y() : region.min.y(),
                      (c & 4) ? region.max.z() : region.min.z());
    const Vec3 pc = world_to_cam.apply(corner);
    if (pc.z() <= 1e-6) continue;
    u0 = std::min(u0, pc.x() / pc.z());
    u1 = std::max(u1, pc.x() / pc.z());
    v0 = std::min(v0, pc.y() / pc.z());
    v1 = std::max(v1, pc.y() / pc.z());
  }
  if (!(u1 > u0 && v1 > v0)) {
    cloud.empty_warning = true;
    return cloud;
  }
  const double aspect = (u1 - u0) / (v1 - v0);
  const int nu = std::max(2, static_cast<int>(std::lround(std::sqrt(config.target_points * aspect))));
  const int nv = std::max(2, static_cast<int>(std::lround(static_cast<double>(config.target_points) / nu)));
  const Vec3 origin = camera.translation();
  for (int j = 0; j < nv; ++j) {
    for (int i = 0; i < nu; ++i) {
      const double u = u0 + (u1 - u0) * (i + 0.5) / nu;
      const double v = v0 + (v1 - v0) * (j + 0.5) / nv;
      const Vec3 dir = camera.rotate(Vec3(u, v, 1.0)).normalized();
      const auto hit = index.raycast(origin, dir, 1e3, config.plane_half_extent);
      if (!hit) continue;
      Vec3 n = hit->normal;
      // Back faces are never first hits on closed meshes; this only guards the plane.
      if (n.dot(dir) > 0) n = -n;
      cloud.points.push_back(SurfacePoint{origin + hit->t * dir, n});
      cloud.object_ids.push_back(hit->object);
      cloud.reliable.push_back(1);
    }
  }
  cloud.empty_warning = cloud.points.empty();
  return cloud;
}

PointCloud sample_point_cloud(const Scene& scene, const RigidTransform& camera, const CloudConfig& config) {
  const SceneIndex index(scene);
  return sample_point_cloud(index, camera, config);
}

namespace {

class KdTree {
 public:
  explicit KdTree(const std::vector<Vec3>& pts) : pts_(pts), idx_(pts.size()) {
    for (std::size_t i = 0; i < idx_.size(); ++i) idx_[i] = static_cast<int>(i);
    if (!idx_.empty()) build(0, static_cast<int>(idx_.size()), 0);
  }

  std::vector<int> knn(const Vec3& q, int k) const {
    std::vector<std::pair<double, int>> heap;
    search(0, static_cast<int>(idx_.size()), 0, q, k, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<int> out;
    for (const auto& h : heap) out.push_back(h.second);
    return out;
  }

 private:
  void build(int lo, int hi, int depth) {
    if (hi - lo <= 1) return;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(int lo, int hi, int depth, const Vec3& q, int k, std::vector<std::pair<double, int>>& heap) const {
    if (hi <= lo) return;
    const int mid = (lo + hi) / 2;
    const int axis = depth % 3;
    const int id = idx_[mid];
    const double d2 = (pts_[id] - q).squaredNorm();
    if (static_cast<int>(heap.size()) < k) {
      heap.emplace_back(d2, id);
      std::push_heap(heap.begin(), heap.end());
    } else if (d2 < heap.front().first) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = {d2, id};
      std::push_heap(heap.begin(), heap.end());
    }
    const double diff = q[axis] - pts_[id][axis];
    const bool left_first = diff < 0;
    search(left_first ? lo : mid + 1, left_first ? mid : hi, depth + 1, q, k, heap);
    if (static_cast<int>(heap.size()) < k || diff * diff < heap.front().first)
      search(left_first ? mid + 1 : lo, left_first ? hi : mid, depth + 1, q, k, heap);
  }

  const std::vector<Vec3>& pts_;
  std::vector<int> idx_;
};

}  // namespace

std::vector<NormalEstimate> estimate_normals(const std::vector<Vec3>& points, int k, const Vec3& viewpoint) {
  if (k < 3) throw Error(ErrorKind::Precondition, "estimate_normals: k must be >= 3");
  if (static_cast<int>(points.size()) < k)
    throw Error(ErrorKind::Precondition, "estimate_normals: fewer points than k");
  const KdTree tree(points);
  std::vector<NormalEstimate> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    const auto nbrs = tree.knn(p, k);
    Vec3 mean = Vec3::Zero();
    for (int i : nbrs) mean += points[i];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (int i : nbrs) {
      const Vec3 d = points[i] - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 evals = eig.eigenvalues();  // ascending
    Vec3 n = eig.eigenvectors().col(0).normalized();
    if (n.dot(viewpoint - p) < 0) n = -n;
    // A neighbourhood with no second spread direction is a line: no plane.
    const bool reliable = evals[1] > 1e-6 * evals[2] && evals[2] > 0.0;
    out.push_back(NormalEstimate{SurfacePoint{p, n}, reliable});
  }
  return out;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

}  // namespace

nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& obj : scene.objects) {
    if (obj.model.mesh_path.empty())
      throw Error(ErrorKind::Precondition, "scene_to_json: object '" + obj.model.label + "' has no mesh path");
    std::vector<double> rot;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) rot.push_back(obj.pose.rotation()(r, c));
    objects.push_back({{"mesh", obj.model.mesh_path},
                       {"scale", obj.model.scale},
                       {"label", obj.model.label},
                       {"rotation", rot},
                       {"translation", vec_json(obj.pose.translation())}});
  }
  return {{"schema", "mfgrasp.scene"},
          {"version", 1},
          {"id", scene.id},
          {"plane_height", scene.plane_height},
          {"objects", objects}};
}

Scene scene_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  try {
    if (j.at("schema") != "mfgrasp.scene" || j.at("version") != 1)
      throw Error(ErrorKind::Format, "scene descriptor: unsupported schema or version");
    Scene scene;
    scene.id = j.at("id").get<std::string>();
    scene.plane_height = j.at("plane_height").get<double>();
    for (const auto& o : j.at("objects")) {
      ObjectModel model;
      model.mesh_path = o.at("mesh").get<std::string>();
      model.scale = o.value("scale", 1.0);
      model.label = o.value("label", std::string{});
      std::filesystem::path p(model.mesh_path);
      model.mesh = load_mesh(p.is_absolute() ? p : base_dir / p, model.scale);
      const auto rot = o.at("rotation").get<std::vector<double>>();
      const auto tr = o.at("translation").get<std::vector<double>>();
      if (rot.size() != 9 || tr.size() != 3) throw Error(ErrorKind::Format, "scene descriptor: bad pose arrays");
      Mat3 r;
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) r(a, b) = rot[a * 3 + b];
      scene.objects.push_back(SceneObject{std::move(model), RigidTransform(r, Vec3(tr[0], tr[1], tr[2]))});
    }
    return scene;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("scene descriptor: ") + e.what());
  }
}

}  // namespace mfgrasp
