#include "mfgrasp/planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <mutex>
#include <thread>

#include "mfgrasp/error.hpp"
#include "mfgrasp/rng.hpp"

namespace mfgrasp {

void PlannerConfig::validate() const {
  if (num_grasp_points < 1) throw Error(ErrorKind::Config, "planner: num_grasp_points must be >= 1");
  if (top_k < 1) throw Error(ErrorKind::Config, "planner: top_k must be >= 1");
  if (!(confidence_gate > 0.0 && confidence_gate < 1.0)) throw Error(ErrorKind::Config, "planner: confidence_gate must be in (0,1)");
  if (augmentations < 0) throw Error(ErrorKind::Config, "planner: augmentations must be >= 0");
  if (aug_translation < 0.0 || aug_yaw_deg < 0.0) throw Error(ErrorKind::Config, "planner: augmentation magnitudes must be >= 0");
  if (clearance < 0.0) throw Error(ErrorKind::Config, "planner: clearance must be >= 0");
  if (threads < 1) throw Error(ErrorKind::Config, "planner: threads must be >= 1");
  if (!(collision.voxel_size > 0.0) || collision.exclude_radius < 0.0)
    throw Error(ErrorKind::Config, "planner: bad collision settings");
  rep.validate();
}

nlohmann::json to_json(const PlannerConfig& c) {
  return {{"num_grasp_points", c.num_grasp_points},
          {"top_k", c.top_k},
          {"confidence_gate", c.confidence_gate},
          {"augmentations", c.augmentations},
          {"aug_translation", c.aug_translation},
          {"aug_yaw_deg", c.aug_yaw_deg},
          {"seed", c.seed},
          {"clearance", c.clearance},
          {"all_cells", c.all_cells},
          {"threads", c.threads},
          {"rep", to_json(c.rep)},
          {"collision", {{"voxel_size", c.collision.voxel_size}, {"exclude_radius", c.collision.exclude_radius}}}};
}

PlannerConfig planner_config_from_json(const nlohmann::json& j, PlannerConfig c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "num_grasp_points") c.num_grasp_points = v.get<int>();
    else if (key == "top_k") c.top_k = v.get<int>();
    else if (key == "confidence_gate") c.confidence_gate = v.get<double>();
    else if (key == "augmentations") c.augmentations = v.get<int>();
    else if (key == "aug_translation") c.aug_translation = v.get<double>();
    else if (key == "aug_yaw_deg") c.aug_yaw_deg = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "clearance") c.clearance = v.get<double>();
    else if (key == "all_cells") c.all_cells = v.get<bool>();
    else if (key == "threads") c.threads = v.get<int>();
    else if (key == "rep") c.rep = rep_config_from_json(v);
    else if (key == "collision") {
      for (const auto& [k2, v2] : v.items()) {
        if (k2 == "voxel_size") c.collision.voxel_size = v2.get<double>();
        else if (k2 == "exclude_radius") c.collision.exclude_radius = v2.get<double>();
        else throw Error(ErrorKind::Config, "unknown collision key '" + k2 + "'");
      }
    } else {
      throw Error(ErrorKind::Config, "unknown planner key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(1, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

FrameSample sample_grasp_points(const PointCloud& cloud, int count, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorKind::Precondition, "sample_grasp_points: count must be >= 1");
  std::vector<int> pool;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (cloud.reliable[i] && cloud.object_ids[i] >= 0) pool.push_back(static_cast<int>(i));
  FrameSample out;
  out.too_few_points = static_cast<int>(pool.size()) < count;
  if (pool.empty()) return out;
  const std::size_t m = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(count));

  Rng rng(seed);
  std::vector<double> dist(pool.size(), std::numeric_limits<double>::infinity());
  std::size_t current = rng.index(pool.size());
  for (std::size_t k = 0; k < m; ++k) {
    const auto& sp = cloud.points[pool[current]];
    out.frames.push_back(GraspFrame::from_surface(sp.position, sp.normal));
    out.object_ids.push_back(cloud.object_ids[pool[current]]);
    dist[current] = -1.0;
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (dist[i] < 0.0) continue;
      const double d = (cloud.points[pool[i]].position - sp.position).squaredNorm();
      if (d < dist[i]) dist[i] = d;
      if (dist[i] > best) {
        best = dist[i];
        next = i;
      }
    }
    current = next;
  }
  return out;
}

void CandidateSet::sort_and_truncate(int top_k) {
  std::stable_sort(items.begin(), items.end(), [](const Candidate& a, const Candidate& b) { return a.quality > b.quality; });
  if (static_cast<int>(items.size()) > top_k) items.resize(static_cast<std::size_t>(top_k));
}

std::vector<RepGrid> compute_representations(const SceneIndex& scene, const std::vector<GraspFrame>& frames,
                                             const RepConfig& config, int threads) {
  std::vector<RepGrid> reps(frames.size(), RepGrid(config.num_angles, config.num_depths));
  parallel_for(frames.size(), threads, [&](std::size_t i) {
    try {
      reps[i] = compute_representation(scene, frames[i], config);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::EmptyGrid) throw;
    }
  });
  return reps;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void check_context(const PlannerContext& ctx) {
  if (!ctx.params || !ctx.taxonomy || !ctx.hand) throw Error(ErrorKind::Precondition, "planner: incomplete context");
}

}  // namespace

CandidateSet generate_candidates(const SceneIndex& scene, const FrameSample& frames, const PlannerContext& ctx,
                                 const PlannerConfig& config, PhaseTimes* times) {
  check_context(ctx);
  const RepConfig& rc = config.rep;
  const int C = static_cast<int>(ctx.taxonomy->size());
  auto t0 = Clock::now();
  CandidateSet set;
  set.frames = frames.frames;
  set.object_ids = frames.object_ids;
  set.reps = compute_representations(scene, frames.frames, rc, config.threads);
  if (times) times->rep_seconds += seconds_since(t0);

  t0 = Clock::now();
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < set.reps.size(); ++i)
    if (set.reps[i].any_valid()) live.push_back(i);
  if (live.empty()) return set;
  MatX inputs(ctx.params->input_size(), static_cast<Eigen::Index>(live.size()));
  for (std::size_t k = 0; k < live.size(); ++k)
    inputs.col(static_cast<Eigen::Index>(k)) = encode_rep(set.reps[live[k]], rc.max_width);
  const MatX scores = forward(*ctx.params, inputs);

  for (std::size_t k = 0; k < live.size(); ++k) {
    const std::size_t i = live[k];
    const RepGrid& rep = set.reps[i];
    std::vector<Cell> cells;
    if (config.all_cells) {
      for (int a = 0; a < rep.num_angles(); ++a)
        for (int d = 0; d < rep.num_depths(); ++d)
          if (rep.valid(a, d) && rep.score(a, d) > 0.0) cells.push_back({a, d});
    } else {
      try {
        cells.push_back(best_antipodal_cell(rep));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoGrasp) throw;  // valid cells, all scored zero
      }
    }
    for (const Cell& cell : cells) {
      for (int c = 0; c < C; ++c) {
        try {
          Candidate cand;
          cand.grasp = pose_from_representation(set.frames[i], rep, cell, (*ctx.taxonomy)[c], config.clearance, rc,
                                                *ctx.hand);
          cand.quality = scores(output_index(cell.angle, cell.depth, c, rep.num_depths(), C), static_cast<Eigen::Index>(k));
          cand.grasp.quality = cand.quality;
          cand.source = static_cast<int>(i);
          set.items.push_back(std::move(cand));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::Infeasible) throw;
        }
      }
    }
  }
  set.sort_and_truncate(config.top_k);
  if (times) times->decision_seconds += seconds_since(t0);
  return set;
}

namespace {

RigidTransform random_perturbation(Rng& rng, double max_translation, double max_yaw_deg) {
  Vec3 t;
  do {
    t = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  } while (t.squaredNorm() > 1.0);
  const double yaw = rng.uniform(-1.0, 1.0) * max_yaw_deg * std::numbers::pi / 180.0;
  return RigidTransform(axis_angle(Vec3::UnitZ(), yaw), max_translation * t);
}

}  // namespace

CandidateSet augment_and_pool(const Scene& scene, const PointCloud& cloud, const PlannerContext& ctx,
                              const PlannerConfig& config, int count, PhaseTimes* times) {
  if (count < 0) throw Error(ErrorKind::Precondition, "augment_and_pool: count must be >= 0");
  CandidateSet pooled;
  {
    const SceneIndex index(scene);
    const FrameSample frames = sample_grasp_points(cloud, config.num_grasp_points, config.seed);
    pooled = generate_candidates(index, frames, ctx, config, times);
  }
  Rng rng(Rng::mix(config.seed ^ 0xA06Dull));
  for (int k = 0; k < count; ++k) {
    const RigidTransform T = random_perturbation(rng, config.aug_translation, config.aug_yaw_deg);
    const RigidTransform back = T.inverse();
    const Scene moved = scene.transformed(T);
    const SceneIndex index(moved);
    const FrameSample frames = sample_grasp_points(cloud.transformed(T), config.num_grasp_points, config.seed);
    CandidateSet part = generate_candidates(index, frames, ctx, config, times);
    const int offset = static_cast<int>(pooled.reps.size());
    for (std::size_t i = 0; i < part.frames.size(); ++i) {
      pooled.frames.push_back(part.frames[i].transformed(back));
      pooled.reps.push_back(std::move(part.reps[i]));
      pooled.object_ids.push_back(part.object_ids[i]);
    }
    for (auto& c : part.items) {
      c.grasp = c.grasp.transformed(back);
      c.source += offset;
      pooled.items.push_back(std::move(c));
    }
  }
  auto t0 = Clock::now();
  pooled.sort_and_truncate(config.top_k);
  if (times) times->decision_seconds += seconds_since(t0);
  return pooled;
}

Selection select_best(const CandidateSet& candidates, const std::vector<Vec3>& cloud, const PlannerContext& ctx,
                      const PlannerConfig& config) {
  check_context(ctx);
  if (candidates.items.empty()) throw Error(ErrorKind::NoFeasibleGrasp, "no grasp candidates");
  Selection sel;
  // Items are sorted, so the first survivor is the best survivor.
  for (const auto& c : candidates.items) {
    ++sel.checked;
    const GraspType& type = ctx.taxonomy->at(static_cast<std::size_t>(c.grasp.type_id));
    if (check_grasp_collision(c.grasp, type, *ctx.hand, cloud, config.collision).collides) continue;
    sel.candidate = c;
    sel.below_gate = c.quality < config.confidence_gate;
    return sel;
  }
  throw Error(ErrorKind::NoFeasibleGrasp, "all " + std::to_string(candidates.items.size()) + " candidates collide");
}

std::vector<Vec3> positions(const PointCloud& cloud) {
  std::vector<Vec3> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back(p.position);
  return out;
}

PlanResult plan_grasp(const Scene& scene, const PointCloud& cloud, const PlannerContext& ctx,
                      const PlannerConfig& config) {
  config.validate();
  check_context(ctx);
  PlanResult r;
  r.candidates = augment_and_pool(scene, cloud, ctx, config, config.augmentations, &r.times);
  if (r.candidates.items.empty()) throw Error(ErrorKind::NoFeasibleGrasp, "no valid representation cell in the scene");
  const auto t0 = Clock::now();
  r.selection = select_best(r.candidates, positions(cloud), ctx, config);
  r.times.collision_seconds += seconds_since(t0);
  return r;
}

nlohmann::json plan_to_json(const Selection& selection, const GraspType& type) {
  return {{"schema", "mfgrasp.plan"},
          {"version", 1},
          {"grasp", to_json(selection.candidate.grasp)},
          {"quality", selection.candidate.quality},
          {"type_label", type.label},
          {"flags", {{"below_gate", selection.below_gate}}},
          {"checked", selection.checked}};
}

}  // namespace mfgrasp
