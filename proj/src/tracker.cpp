#include "mfgrasp/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include <Eigen/SVD>

#include "mfgrasp/error.hpp"

namespace mfgrasp {

void TrackConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Config, "track: alpha must be in (0,1]");
  if (!(gate > 0.0)) throw Error(ErrorKind::Config, "track: gate must be > 0");
  if (candidates < 1) throw Error(ErrorKind::Config, "track: candidates must be >= 1");
  if (max_lost < 1) throw Error(ErrorKind::Config, "track: max_lost must be >= 1");
  if (tie_tolerance < 0.0) throw Error(ErrorKind::Config, "track: tie_tolerance must be >= 0");
  if (!(patch_radius > 0.0)) throw Error(ErrorKind::Config, "track: patch_radius must be > 0");
}

nlohmann::json to_json(const TrackConfig& c) {
  return {{"alpha", c.alpha},
          {"gate", c.gate},
          {"candidates", c.candidates},
          {"max_lost", c.max_lost},
          {"tie_tolerance", c.tie_tolerance},
          {"patch_radius", c.patch_radius}};
}

TrackConfig track_config_from_json(const nlohmann::json& j, TrackConfig c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "alpha") c.alpha = v.get<double>();
    else if (key == "gate") c.gate = v.get<double>();
    else if (key == "candidates") c.candidates = v.get<int>();
    else if (key == "max_lost") c.max_lost = v.get<int>();
    else if (key == "tie_tolerance") c.tie_tolerance = v.get<double>();
    else if (key == "patch_radius") c.patch_radius = v.get<double>();
    else throw Error(ErrorKind::Config, "unknown track key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace {

int floor_div(int a, int b) {
  int q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(src.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  const Mat3 r = svd.matrixV() * d * svd.matrixU().transpose();
  return {r, cd - r * cs};
}

}  // namespace

void label_cloud(const SceneIndex& index, PointCloud& cloud, double tolerance) {
  cloud.object_ids.assign(cloud.points.size(), -1);
  if (cloud.reliable.size() != cloud.points.size()) cloud.reliable.assign(cloud.points.size(), 1);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto [dist, id] = index.nearest_surface(cloud.points[i].position, tolerance);
    if (id >= 0 && dist <= tolerance) cloud.object_ids[i] = id;
  }
}

RigidTransform register_patch(const PointCloud& from, const PointCloud& to, const Vec3& center, int object,
                              double radius, const RigidTransform& guess) {
  constexpr std::size_t kMaxSource = 400;
  constexpr std::size_t kMinPoints = 6;
  std::vector<Vec3> src;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const int id = from.object_ids[i];
    if (id < 0 || (object >= 0 && id != object)) continue;
    if ((from.points[i].position - center).norm() <= radius) src.push_back(from.points[i].position);
  }
  if (src.size() > kMaxSource) {
    std::vector<Vec3> thinned;
    const double stride = static_cast<double>(src.size()) / kMaxSource;
    for (std::size_t k = 0; k < kMaxSource; ++k) thinned.push_back(src[static_cast<std::size_t>(k * stride)]);
    src.swap(thinned);
  }
  const Vec3 moved = guess.apply(center);
  // Target segment: the label nearest the predicted patch centre.
  int label = -1;
  double nearest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (to.object_ids[i] < 0) continue;
    const double d = (to.points[i].position - moved).squaredNorm();
    if (d < nearest) {
      nearest = d;
      label = to.object_ids[i];
    }
  }
  std::vector<Vec3> tgt;
  for (std::size_t i = 0; i < to.size(); ++i) {
    if (to.object_ids[i] != label) continue;
    if ((to.points[i].position - moved).norm() <= 2.0 * radius) tgt.push_back(to.points[i].position);
  }
  if (src.size() < kMinPoints || tgt.size() < kMinPoints) return guess;

  Vec3 mean_src = Vec3::Zero(), mean_tgt = Vec3::Zero();
  for (const auto& p : src) mean_src += guess.apply(p);
  for (const auto& p : tgt) mean_tgt += p;
  mean_src /= static_cast<double>(src.size());
  mean_tgt /= static_cast<double>(tgt.size());
  RigidTransform t = RigidTransform::translation(mean_tgt - mean_src) * guess;
  std::vector<Vec3> a, b;
  std::vector<double> dist(src.size());
  std::vector<std::size_t> match(src.size());
  double previous = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      const Vec3 p = t.apply(src[i]);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < tgt.size(); ++j) {
        const double d = (tgt[j] - p).squaredNorm();
        if (d < best) {
          best = d;
          match[i] = j;
        }
      }
      dist[i] = best;
    }
    std::vector<double> sorted = dist;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double cutoff = std::max(9.0 * sorted[sorted.size() / 2], 1e-4);
    a.clear();
    b.clear();
    double err = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (dist[i] > cutoff) continue;
      a.push_back(src[i]);
      b.push_back(tgt[match[i]]);
      err += dist[i];
    }
    if (a.size() < kMinPoints) return guess;
    t = kabsch(a, b);
    err /= static_cast<double>(a.size());
    if (std::abs(previous - err) < 1e-16) break;
    previous = err;
  }
  return t;
}

std::pair<int, double> best_shift(const RepGrid& anchor, const RepGrid& rep, double max_width, double tolerance) {
  const int A = anchor.num_angles();
  int best_k = 0;
  double best = rep_similarity(anchor, rep, max_width);
  // 0, 1, -1, 2, -2, ... so ties keep the smallest |k|.
  for (int m = 1; m <= A / 2; ++m) {
    for (int k : {m, -m}) {
      if (k == -A / 2 && A % 2 == 0) continue;  // same as +A/2
      const double s = rep_similarity(anchor.shifted(k), rep, max_width);
      if (s > best + tolerance) {
        best = s;
        best_k = k;
      }
    }
  }
  return {best_k, best};
}

std::optional<ShiftedGrasp> shifted_grasp(const GraspFrame& frame, const RepGrid& rep, Cell cell, bool flipped,
                                          int shift, const GraspType& type, double clearance, const RepConfig& rc,
                                          const HandModel& hand) {
  const int A = rep.num_angles();
  const int raw = cell.angle + shift;
  const int wraps = floor_div(raw, A);
  const Cell moved{raw - wraps * A, cell.depth};
  if (!rep.valid(moved.angle, moved.depth)) return std::nullopt;
  ShiftedGrasp out;
  try {
    out.grasp = pose_from_representation(frame, rep, moved, type, clearance, rc, hand);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Infeasible || e.kind() == ErrorKind::Precondition) return std::nullopt;
    throw;
  }
  out.cell = moved;
  out.flipped = flipped != (wraps % 2 != 0);
  if (out.flipped) {
    out.grasp.rotation.col(1) = -out.grasp.rotation.col(1);
    out.grasp.rotation.col(2) = -out.grasp.rotation.col(2);
  }
  return out;
}

TrackState init_track(const TrackFrame& frame, const PlannerContext& ctx, const PlannerConfig& planner,
                      const TrackConfig& config) {
  config.validate();
  const PlanResult plan = plan_grasp(frame.scene, frame.cloud, ctx, planner);
  const Candidate& chosen = plan.selection.candidate;
  TrackState s;
  s.frame = plan.candidates.frames[static_cast<std::size_t>(chosen.source)];
  s.object = plan.candidates.object_ids[static_cast<std::size_t>(chosen.source)];
  // Recomputed here: augmented candidates were represented in a perturbed copy.
  s.anchor = compute_representation(frame.scene, s.frame, planner.rep);
  s.cell = chosen.grasp.cell;
  s.grasp = chosen.grasp;
  s.measured = chosen.grasp.translation;
  s.alpha = config.alpha;
  s.last_similarity = 1.0;
  return s;
}

std::vector<TrackCandidate> track_candidates(const TrackState& state, const GraspFrame& predicted, const TrackFrame& frame,
                                             const PlannerContext& ctx, const PlannerConfig& planner,
                                             const TrackConfig& config) {
  const PointCloud& cloud = frame.cloud;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.object_ids[i] >= 0 && cloud.reliable[i]) pool.push_back(i);
  const std::size_t m = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(config.candidates));
  auto dist = [&](std::size_t i) { return (cloud.points[i].position - predicted.point).squaredNorm(); };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(m), pool.end(),
                    [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
  pool.resize(m);

  const SceneIndex index(frame.scene);
  const GraspType& type = (*ctx.taxonomy)[static_cast<std::size_t>(state.grasp.type_id)];
  std::vector<std::optional<TrackCandidate>> slots(m);
  parallel_for(m, planner.threads, [&](std::size_t k) {
    const SurfacePoint& sp = cloud.points[pool[k]];
    const Vec3 approach = -sp.normal.normalized();
    Vec3 zero = predicted.zero_axis - predicted.zero_axis.dot(approach) * approach;
    zero = zero.norm() < 1e-6 ? any_orthogonal(approach) : Vec3(zero.normalized());
    TrackCandidate c;
    c.frame = GraspFrame::make(sp.position, approach, zero);
    try {
      c.rep = compute_representation(index, c.frame, planner.rep);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::EmptyGrid) return;
      throw;
    }
    c.object = cloud.object_ids[pool[k]];
    c.shift = best_shift(state.anchor, c.rep, planner.rep.max_width, config.tie_tolerance).first;
    c.grasp = shifted_grasp(c.frame, c.rep, state.cell, state.flipped, c.shift, type, planner.clearance, planner.rep,
                            *ctx.hand);
    slots[k] = std::move(c);
  });
  std::vector<TrackCandidate> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  return out;
}

Association associate(const RepGrid& anchor, const std::vector<TrackCandidate>& candidates, const Vec3& predicted,
                      double max_width, const TrackConfig& config) {
  if (candidates.empty()) throw Error(ErrorKind::Precondition, "associate: no candidates");
  Association out;
  out.similarity.assign(candidates.size(), -1.0);
  out.shifts.assign(candidates.size(), 0);
  double best = -1.0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto [k, sim] = best_shift(anchor, candidates[i].rep, max_width, config.tie_tolerance);
    out.shifts[i] = k;
    if (!candidates[i].grasp) continue;
    const double d = (candidates[i].grasp->grasp.translation - predicted).norm();
    if (d > config.gate) continue;
    out.similarity[i] = sim;
    if (sim > best + config.tie_tolerance || (std::abs(sim - best) <= config.tie_tolerance && d < best_dist)) {
      best = std::max(best, sim);
      best_dist = d;
      out.index = static_cast<int>(i);
    }
  }
  return out;
}

TrackState step_track(const TrackState& state, const PointCloud& previous, const TrackFrame& frame,
                      const PlannerContext& ctx, const PlannerConfig& planner, const TrackConfig& config) {
  if (state.terminated) throw Error(ErrorKind::LostTrack, "track already terminated");
  TrackState s = state;
  ++s.frame_index;
  s.motion = register_patch(previous, frame.cloud, state.frame.point, state.object, config.patch_radius, state.motion);
  const GraspFrame predicted = state.frame.transformed(s.motion);
  const Vec3 predicted_t = s.motion.apply(state.measured);

  const std::vector<TrackCandidate> cands = track_candidates(state, predicted, frame, ctx, planner, config);
  Association assoc;
  if (!cands.empty()) assoc = associate(state.anchor, cands, predicted_t, planner.rep.max_width, config);

  if (assoc.index < 0) {
    s.lost_this_frame = true;
    ++s.lost;
    s.last_similarity = 0.0;
    s.frame = predicted;
    s.measured = predicted_t;
    if (s.lost >= config.max_lost) s.terminated = true;
    return s;
  }

  const TrackCandidate& c = cands[static_cast<std::size_t>(assoc.index)];
  const ShiftedGrasp& g = *c.grasp;
  s.lost_this_frame = false;
  s.lost = 0;
  s.last_similarity = assoc.similarity[static_cast<std::size_t>(assoc.index)];
  s.shift = assoc.shifts[static_cast<std::size_t>(assoc.index)];
  s.anchor = c.rep;
  s.cell = g.cell;
  s.flipped = g.flipped;
  s.frame = c.frame;
  s.object = c.object;
  s.measured = g.grasp.translation;

  const double a = state.alpha;
  MultiFingerGrasp next = g.grasp;
  next.translation = a * g.grasp.translation + (1.0 - a) * state.grasp.translation;
  next.rotation = slerp(state.grasp.rotation, g.grasp.rotation, a);
  next.quality = state.grasp.quality;
  s.grasp = next;
  return s;
}

std::string track_log_header() { return "frame,tx,ty,tz,qw,qx,qy,qz,similarity,shift,lost,terminated"; }

std::string track_log_row(const TrackState& s) {
  const Eigen::Quaterniond q(s.grasp.rotation);
  char buf[320];
  std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%d", s.frame_index,
                s.grasp.translation.x(), s.grasp.translation.y(), s.grasp.translation.z(), q.w(), q.x(), q.y(), q.z(),
                s.last_similarity, s.shift, s.lost_this_frame ? 1 : 0, s.terminated ? 1 : 0);
  return buf;
}

}  // namespace mfgrasp
