#include "mfgrasp/antipodal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mfgrasp/error.hpp"

namespace mfgrasp {

void RepConfig::validate() const {
  if (num_angles < 2) throw Error(ErrorKind::Config, "RepConfig: num_angles must be >= 2");
  if (num_depths < 1) throw Error(ErrorKind::Config, "RepConfig: num_depths must be >= 1");
  if (!(depth_step > 0) || !(max_width > 0)) throw Error(ErrorKind::Config, "RepConfig: steps must be positive");
  if (friction_ladder.empty() || !(friction_ladder.front() > 0))
    throw Error(ErrorKind::Config, "RepConfig: friction ladder must be positive");
  for (std::size_t i = 1; i < friction_ladder.size(); ++i)
    if (!(friction_ladder[i] > friction_ladder[i - 1]))
      throw Error(ErrorKind::Config, "RepConfig: friction ladder must be strictly ascending");
}

nlohmann::json to_json(const RepConfig& c) {
  return {{"num_angles", c.num_angles},       {"num_depths", c.num_depths}, {"depth_step", c.depth_step},
          {"max_width", c.max_width},         {"friction_ladder", c.friction_ladder},
          {"surface_tolerance", c.surface_tolerance}};
}

RepConfig rep_config_from_json(const nlohmann::json& j) {
  RepConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "num_angles") c.num_angles = value.get<int>();
    else if (key == "num_depths") c.num_depths = value.get<int>();
    else if (key == "depth_step") c.depth_step = value.get<double>();
    else if (key == "max_width") c.max_width = value.get<double>();
    else if (key == "friction_ladder") c.friction_ladder = value.get<std::vector<double>>();
    else if (key == "surface_tolerance") c.surface_tolerance = value.get<double>();
    else throw Error(ErrorKind::Config, "unknown representation key '" + key + "'");
  }
  c.validate();
  return c;
}

GraspFrame GraspFrame::make(const Vec3& point, const Vec3& approach, const Vec3& zero_axis) {
  if (std::abs(approach.norm() - 1.0) > 1e-9 || std::abs(zero_axis.norm() - 1.0) > 1e-9)
    throw Error(ErrorKind::Precondition, "GraspFrame: axes must be unit length");
  if (std::abs(approach.dot(zero_axis)) > 1e-9)
    throw Error(ErrorKind::Precondition, "GraspFrame: approach and zero axis must be orthogonal");
  return GraspFrame{point, approach, zero_axis};
}

GraspFrame GraspFrame::from_surface(const Vec3& point, const Vec3& outward_normal) {
  const Vec3 approach = -outward_normal.normalized();
  return GraspFrame{point, approach, any_orthogonal(approach)};
}

Vec3 GraspFrame::closing_direction(int a, int num_angles) const {
  const double theta = std::numbers::pi * a / num_angles;
  return std::cos(theta) * zero_axis + std::sin(theta) * approach.cross(zero_axis);
}

GraspFrame GraspFrame::transformed(const RigidTransform& t) const {
  return GraspFrame{t.apply(point), t.rotate(approach), t.rotate(zero_axis)};
}

RepGrid::RepGrid(int num_angles, int num_depths)
    : angles_(num_angles),
      depths_(num_depths),
      scores_(static_cast<std::size_t>(num_angles) * num_depths, 0.0),
      widths_(static_cast<std::size_t>(num_angles) * num_depths, kInvalid),
      centers_(static_cast<std::size_t>(num_angles) * num_depths, 0.0) {}

void RepGrid::set(int a, int d, double score, double width, double center) {
  scores_[index(a, d)] = score;
  widths_[index(a, d)] = width;
  centers_[index(a, d)] = center;
}

bool RepGrid::any_valid() const {
  return std::any_of(scores_.begin(), scores_.end(), [](double s) { return s > 0.0; });
}

RepGrid RepGrid::shifted(int k) const {
  RepGrid out(angles_, depths_);
  for (int a = 0; a < angles_; ++a) {
    const int src = ((a - k) % angles_ + angles_) % angles_;
    // Number of half turns between source and destination rows.
    const int turns = (a - k - src) / angles_;
    const double sign = turns % 2 == 0 ? 1.0 : -1.0;
    for (int d = 0; d < depths_; ++d) out.set(a, d, score(src, d), width(src, d), sign * center(src, d));
  }
  return out;
}

RepGrid RepGrid::scaled_widths(double factor) const {
  RepGrid out = *this;
  for (auto& w : out.widths_)
    if (w >= 0.0) w *= factor;
  for (auto& c : out.centers_) c *= factor;
  return out;
}

nlohmann::json to_json(const RepGrid& rep, const RepConfig& config) {
  nlohmann::json widths = nlohmann::json::array();
  for (double w : rep.widths()) widths.push_back(w >= 0.0 ? nlohmann::json(w) : nlohmann::json(nullptr));
  return {{"A", rep.num_angles()}, {"D", rep.num_depths()}, {"scores", rep.scores()}, {"widths", widths},
          {"centers", rep.centers()}, {"config", to_json(config)}};
}

RepGrid rep_from_json(const nlohmann::json& j) {
  try {
    RepGrid rep(j.at("A").get<int>(), j.at("D").get<int>());
    const auto& scores = j.at("scores");
    const auto& widths = j.at("widths");
    if (scores.size() != rep.cells() || widths.size() != rep.cells())
      throw Error(ErrorKind::Format, "RepGrid: array length does not match A*D");
    const nlohmann::json centers = j.contains("centers") ? j["centers"] : nlohmann::json(std::vector<double>(rep.cells(), 0.0));
    if (centers.size() != rep.cells()) throw Error(ErrorKind::Format, "RepGrid: centers length does not match A*D");
    for (int a = 0; a < rep.num_angles(); ++a)
      for (int d = 0; d < rep.num_depths(); ++d) {
        const auto i = rep.index(a, d);
        const double w = widths[i].is_null() ? RepGrid::kInvalid : widths[i].get<double>();
        rep.set(a, d, scores[i].get<double>(), w, centers[i].get<double>());
      }
    return rep;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("RepGrid: ") + e.what());
  }
}

double ladder_score(double mu) { return std::clamp(1.1 - mu, 0.0, 1.0); }

namespace {

constexpr double kLadderSlack = 1e-9;
constexpr double kMergeDistance = 1e-9;

struct Crossing {
  double s;      // signed position along the closing line from its centre
  int object;
  Vec3 normal;   // outward
  bool entering; // normal opposes the closing direction
};

// Smallest ladder rung whose cone about the inward normal contains `force`.
std::optional<double> required_friction(const Vec3& outward, const Vec3& force, const std::vector<double>& ladder) {
  const double cos_angle = -outward.dot(force);
  if (cos_angle <= 0.0) return std::nullopt;
  const double tan_angle = std::sqrt(std::max(0.0, 1.0 - cos_angle * cos_angle)) / cos_angle;
  for (double mu : ladder)
    if (mu >= tan_angle - kLadderSlack) return mu;
  return std::nullopt;
}

void merge_duplicates(std::vector<Crossing>& xs) {
  std::sort(xs.begin(), xs.end(), [](const Crossing& a, const Crossing& b) {
    if (a.s != b.s) return a.s < b.s;
    return a.object < b.object;
  });
  std::vector<Crossing> out;
  for (const auto& x : xs) {
    bool dup = false;
    for (auto it = out.rbegin(); it != out.rend() && x.s - it->s < kMergeDistance; ++it)
      if (it->object == x.object && it->entering == x.entering) {
        dup = true;
        break;
      }
    if (!dup) out.push_back(x);
  }
  xs = std::move(out);
}

}  // namespace

RepGrid compute_representation(const SceneIndex& scene, const GraspFrame& frame, const RepConfig& config) {
  config.validate();
  if (scene.nearest_surface(frame.point, config.surface_tolerance).second < 0)
    throw Error(ErrorKind::EmptyGrid, "compute_representation: grasp point is not near any surface");
  const int A = config.num_angles;
  const int D = config.num_depths;
  const double half = config.max_width / 2.0;
  RepGrid rep(A, D);
  std::vector<RayHit> hits;
  std::vector<Crossing> xs;
  for (int a = 0; a < A; ++a) {
    const Vec3 dir = frame.closing_direction(a, A);
    for (int d = 0; d < D; ++d) {
      const Vec3 center = frame.line_center(d, config.depth_step);
      const Vec3 start = center - half * dir;
      xs.clear();
      for (std::size_t i = 0; i < scene.size(); ++i) {
        hits.clear();
        scene.bvh(i).all_hits(start, dir, 0.0, config.max_width, hits);
        for (const auto& h : hits) {
          const double nd = h.normal.dot(dir);
          if (nd == 0.0) continue;
          xs.push_back(Crossing{h.t - half, static_cast<int>(i), h.normal, nd < 0.0});
        }
      }
      merge_duplicates(xs);
      if (xs.empty()) continue;
      // A jaw that starts inside material shows up as an object whose first
      // in-span crossing exits, or whose last one enters.
      bool blocked = false;
      for (std::size_t i = 0; i < scene.size() && !blocked; ++i) {
        const auto first = std::find_if(xs.begin(), xs.end(), [&](const Crossing& x) { return x.object == (int)i; });
        if (first == xs.end()) continue;
        const auto last = std::find_if(xs.rbegin(), xs.rend(), [&](const Crossing& x) { return x.object == (int)i; });
        blocked = !first->entering || last->entering;
      }
      if (blocked) continue;
      const Crossing& left = xs.front();
      const Crossing& right = xs.back();
      const auto mu_left = required_friction(left.normal, dir, config.friction_ladder);
      const auto mu_right = required_friction(right.normal, -dir, config.friction_ladder);
      if (!mu_left || !mu_right) continue;
      rep.set(a, d, ladder_score(std::max(*mu_left, *mu_right)), right.s - left.s, 0.5 * (left.s + right.s));
    }
  }
  return rep;
}

RepGrid compute_representation(const Scene& scene, const GraspFrame& frame, const RepConfig& config) {
  const SceneIndex index(scene);
  return compute_representation(index, frame, config);
}

namespace oracle {

struct Surfel {
  double s;
  int object;
  Vec3 normal;
};

// Line/triangle crossing via the supporting plane and edge half-space tests.
std::optional<double> cross_plane(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c,
                                  Vec3& normal_out) {
  const Vec3 n = (b - a).cross(c - a);
  const double area2 = n.norm();
  if (area2 < 1e-24) return std::nullopt;
  const double denom = n.dot(dir);
  if (denom == 0.0) return std::nullopt;
  const double s = n.dot(a - origin) / denom;
  const Vec3 p = origin + s * dir;
  // Edge tests scale with area^2; accept points a hair outside so shared
  // edges are never missed by both neighbours.
  const double tol = -1e-12 * area2 * area2;
  if (n.dot((b - a).cross(p - a)) < tol) return std::nullopt;
  if (n.dot((c - b).cross(p - b)) < tol) return std::nullopt;
  if (n.dot((a - c).cross(p - c)) < tol) return std::nullopt;
  normal_out = n / area2;
  return s;
}

}  // namespace oracle

RepGrid brute_force_representation(const Scene& scene, const GraspFrame& frame, const RepConfig& config) {
  config.validate();
  std::vector<TriMesh> world;
  for (const auto& obj : scene.objects) world.push_back(obj.model.mesh.transformed(obj.pose));

  double nearest = std::numeric_limits<double>::infinity();
  for (const auto& m : world)
    for (const auto& t : m.triangles())
      nearest = std::min(nearest, (closest_point_on_triangle(frame.point, m.vertices()[t[0]], m.vertices()[t[1]],
                                                              m.vertices()[t[2]]) - frame.point).norm());
  if (!(nearest < config.surface_tolerance))
    throw Error(ErrorKind::EmptyGrid, "brute_force_representation: grasp point is not near any surface");

  const int A = config.num_angles;
  const int D = config.num_depths;
  const double half = config.max_width / 2.0;
  RepGrid rep(A, D);
  for (int a = 0; a < A; ++a) {
    const double theta = std::numbers::pi * a / A;
    const Vec3 side = frame.approach.cross(frame.zero_axis);
    const Vec3 dir = std::cos(theta) * frame.zero_axis + std::sin(theta) * side;
    for (int d = 0; d < D; ++d) {
      const Vec3 center = frame.point + (d + 1) * config.depth_step * frame.approach;
      // Every crossing of the infinite line, with duplicates on shared edges removed.
      std::vector<oracle::Surfel> all;
      for (std::size_t o = 0; o < world.size(); ++o) {
        const auto& m = world[o];
        for (const auto& t : m.triangles()) {
          Vec3 n;
          const auto s = oracle::cross_plane(center, dir, m.vertices()[t[0]], m.vertices()[t[1]], m.vertices()[t[2]], n);
          if (!s) continue;
          bool dup = false;
          for (const auto& e : all)
            if (e.object == static_cast<int>(o) && std::abs(e.s - *s) < 1e-9 && (e.normal.dot(dir) < 0) == (n.dot(dir) < 0))
              dup = true;
          if (!dup) all.push_back({*s, static_cast<int>(o), n});
        }
      }
      // Jaw start points must be outside every object (crossing parity).
      bool blocked = false;
      for (std::size_t o = 0; o < world.size(); ++o) {
        int before = 0, after = 0;
        for (const auto& e : all) {
          if (e.object != static_cast<int>(o)) continue;
          if (e.s < -half) ++before;
          if (e.s > half) ++after;
        }
        if (before % 2 == 1 || after % 2 == 1) blocked = true;
      }
      if (blocked) continue;
      std::vector<oracle::Surfel> span;
      for (const auto& e : all)
        if (e.s >= -half && e.s <= half) span.push_back(e);
      // The jaws stop at the outermost pair of crossings.
      int bi = -1, bj = -1;
      double best = -1.0;
      for (std::size_t i = 0; i < span.size(); ++i)
        for (std::size_t j = 0; j < span.size(); ++j)
          if (span[j].s - span[i].s > best) {
            best = span[j].s - span[i].s;
            bi = static_cast<int>(i);
            bj = static_cast<int>(j);
          }
      if (bi < 0 || best < 0.0) continue;
      double mu = 0.0;
      bool ok = true;
      for (const auto& [contact, push] : {std::pair{span[bi], dir}, std::pair{span[bj], Vec3(-dir)}}) {
        // Angle between the push direction and the inward normal.
        const double angle = std::atan2(contact.normal.cross(push).norm(), -contact.normal.dot(push));
        if (angle >= std::numbers::pi / 2) {
          ok = false;
          break;
        }
        const double need = std::tan(angle);
        const auto rung = std::find_if(config.friction_ladder.begin(), config.friction_ladder.end(),
                                       [&](double m) { return m >= need - 1e-9; });
        if (rung == config.friction_ladder.end()) {
          ok = false;
          break;
        }
        mu = std::max(mu, *rung);
      }
      if (!ok) continue;
      rep.set(a, d, std::clamp(1.1 - mu, 0.0, 1.0), best, 0.5 * (span[bi].s + span[bj].s));
    }
  }
  return rep;
}

Cell best_antipodal_cell(const RepGrid& rep) {
  Cell best{-1, -1};
  double best_score = 0.0;
  for (int d = 0; d < rep.num_depths(); ++d)
    for (int a = 0; a < rep.num_angles(); ++a)
      if (rep.score(a, d) > best_score) {
        best_score = rep.score(a, d);
        best = {a, d};
      }
  if (best.angle < 0) throw Error(ErrorKind::NoGrasp, "best_antipodal_cell: no cell with positive score");
  return best;
}

double rep_similarity(const RepGrid& a, const RepGrid& b, double max_width) {
  if (a.num_angles() != b.num_angles() || a.num_depths() != b.num_depths())
    throw Error(ErrorKind::Precondition, "rep_similarity: grid shapes differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  auto accumulate = [&](double x, double y) {
    dot += x * y;
    na += x * x;
    nb += y * y;
  };
  for (std::size_t i = 0; i < a.cells(); ++i) accumulate(a.scores()[i], b.scores()[i]);
  for (std::size_t i = 0; i < a.cells(); ++i)
    accumulate(std::max(0.0, a.widths()[i]) / max_width, std::max(0.0, b.widths()[i]) / max_width);
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  return 0.5 * (cosine + 1.0);
}

}  // namespace mfgrasp
