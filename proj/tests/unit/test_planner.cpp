#include <doctest.h>

#include <set>

#include "mfgrasp/error.hpp"
#include "mfgrasp/planner.hpp"
#include "mfgrasp/rng.hpp"
#include "support.hpp"

using namespace mfgrasp;
using namespace testing;

namespace {

struct Fixture {
  std::vector<GraspType> tax = builtin_taxonomy();
  HandModel hand;
  NetworkParams params = NetworkParams::random(NetworkParams::dims(12, 5, 16, 32), 5);
  PlannerContext ctx{&params, &tax, &hand};
};

Scene toy_scene() {
  Scene s;
  s.id = "toy";
  s.objects.push_back(object("box", make_box(0.04, 0.06, 0.05), RigidTransform::translation(Vec3(-0.06, 0.0, 0.0))));
  s.objects.push_back(object("can", make_cylinder(0.025, 0.08, 24), RigidTransform::translation(Vec3(0.06, 0.02, 0.0))));
  return s;
}

double min_pairwise(const std::vector<Vec3>& pts) {
  double best = 1e9;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, (pts[i] - pts[j]).norm());
  return best;
}

Candidate free_candidate(double q, double x) {
  Candidate c;
  c.quality = q;
  c.grasp.translation = Vec3(x, 1.0, 1.0);
  c.grasp.width = 0.05;
  c.grasp.quality = q;
  return c;
}

bool same_grasp(const MultiFingerGrasp& a, const MultiFingerGrasp& b, double tol) {
  return (a.rotation - b.rotation).norm() <= tol && (a.translation - b.translation).norm() <= tol &&
         std::abs(a.width - b.width) <= tol && a.type_id == b.type_id;
}

}  // namespace

TEST_CASE("farthest point sampling edge cases") {
  const Scene s = single("ball", make_icosphere(0.04, 3));
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0), {3000, 0.1});
  const FrameSample one = sample_grasp_points(pc, 1, 17);
  REQUIRE(one.frames.size() == 1);
  const FrameSample sixteen = sample_grasp_points(pc, 16, 17);
  CHECK(sixteen.frames.front().point == one.frames.front().point);

  int usable = 0;
  for (std::size_t i = 0; i < pc.size(); ++i) usable += pc.reliable[i] && pc.object_ids[i] >= 0;
  const FrameSample all = sample_grasp_points(pc, usable, 3);
  CHECK(static_cast<int>(all.frames.size()) == usable);
  CHECK_FALSE(all.too_few_points);
  std::set<std::tuple<double, double, double>> picked;
  for (const auto& f : all.frames) picked.insert({f.point.x(), f.point.y(), f.point.z()});
  CHECK(static_cast<int>(picked.size()) == usable);

  const FrameSample more = sample_grasp_points(pc, usable + 5, 3);
  CHECK(more.too_few_points);
  CHECK(static_cast<int>(more.frames.size()) == usable);
  // Frames approach into the surface along the inward normal.
  for (const auto& f : sixteen.frames) {
    CHECK(std::abs(f.approach.norm() - 1.0) < 1e-12);
    CHECK(std::abs(f.approach.dot(f.zero_axis)) < 1e-12);
    CHECK(f.approach.dot(f.point - Vec3(0, 0, 0.04)) < 0.0);
  }
}

TEST_CASE("farthest point spread beats random subsets") {
  const Scene s = single("ball", make_icosphere(0.05, 3));
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0), {20000, 0.0});
  std::vector<Vec3> pool;
  for (std::size_t i = 0; i < pc.size(); ++i)
    if (pc.reliable[i]) pool.push_back(pc.points[i].position);
  REQUIRE(pool.size() > 1000);
  const FrameSample fps = sample_grasp_points(pc, 16, 1);
  std::vector<Vec3> chosen;
  for (const auto& f : fps.frames) chosen.push_back(f.point);
  const double spread = min_pairwise(chosen);
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Vec3> subset;
    for (int k = 0; k < 16; ++k) subset.push_back(pool[rng.index(pool.size())]);
    CHECK(spread >= min_pairwise(subset));
  }
}

TEST_CASE("one frame yields at most one candidate per type") {
  Fixture fx;
  const Scene s = single("box", make_box(0.04, 0.05, 0.06));
  const SceneIndex index(s);
  FrameSample fs;
  fs.frames.push_back(GraspFrame::make(Vec3(0, 0, 0.06), -Vec3::UnitZ(), Vec3::UnitX()));
  fs.object_ids.push_back(0);
  PlannerConfig cfg;
  const CandidateSet set = generate_candidates(index, fs, fx.ctx, cfg);
  CHECK(set.items.size() <= 16);
  CHECK(!set.items.empty());
  std::set<int> types;
  for (const auto& c : set.items) {
    types.insert(c.grasp.type_id);
    CHECK(c.grasp.cell == set.items.front().grasp.cell);
    CHECK(c.grasp.quality.has_value());
  }
  CHECK(types.size() == set.items.size());
  for (std::size_t i = 1; i < set.items.size(); ++i) CHECK(set.items[i - 1].quality >= set.items[i].quality);
}

TEST_CASE("identical frames give adjacent duplicates in frame order") {
  Fixture fx;
  const Scene s = single("box", make_box(0.04, 0.05, 0.06));
  const SceneIndex index(s);
  FrameSample fs;
  const GraspFrame f = GraspFrame::make(Vec3(0, 0, 0.06), -Vec3::UnitZ(), Vec3::UnitX());
  fs.frames = {f, f};
  fs.object_ids = {0, 0};
  const CandidateSet set = generate_candidates(index, fs, fx.ctx, PlannerConfig{});
  REQUIRE(set.items.size() % 2 == 0);
  for (std::size_t i = 0; i < set.items.size(); i += 2) {
    CHECK(set.items[i].quality == set.items[i + 1].quality);
    CHECK(set.items[i].source == 0);
    CHECK(set.items[i + 1].source == 1);
    CHECK(same_grasp(set.items[i].grasp, set.items[i + 1].grasp, 0.0));
  }
}

TEST_CASE("top candidate equals an exhaustive scan") {
  Fixture fx;
  const Scene s = toy_scene();
  const SceneIndex index(s);
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0));
  const FrameSample fs = sample_grasp_points(pc, 24, 2);
  for (bool all_cells : {false, true}) {
    PlannerConfig cfg;
    cfg.all_cells = all_cells;
    const CandidateSet set = generate_candidates(index, fs, fx.ctx, cfg);
    REQUIRE(!set.items.empty());
    double best = -1.0;
    for (std::size_t i = 0; i < fs.frames.size(); ++i) {
      const RepGrid rep = compute_representation(index, fs.frames[i], cfg.rep);
      if (!rep.any_valid()) continue;
      const VecX probs = forward(fx.params, encode_rep(rep, cfg.rep.max_width));
      std::vector<Cell> cells;
      if (all_cells) {
        for (int a = 0; a < rep.num_angles(); ++a)
          for (int d = 0; d < rep.num_depths(); ++d)
            if (rep.score(a, d) > 0) cells.push_back({a, d});
      } else {
        cells.push_back(best_antipodal_cell(rep));
      }
      for (const Cell& c : cells)
        for (int t = 0; t < 16; ++t) {
          try {
            pose_from_representation(fs.frames[i], rep, c, fx.tax[t], cfg.clearance, cfg.rep, fx.hand);
          } catch (const Error&) {
            continue;
          }
          best = std::max(best, probs[output_index(c.angle, c.depth, t, 5, 16)]);
        }
    }
    CHECK(set.items.front().quality == best);
  }
}

TEST_CASE("augmentation") {
  Fixture fx;
  const Scene s = toy_scene();
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0));
  PlannerConfig cfg;
  cfg.num_grasp_points = 32;
  const CandidateSet none = augment_and_pool(s, pc, fx.ctx, cfg, 0);
  const CandidateSet direct = generate_candidates(SceneIndex(s), sample_grasp_points(pc, 32, cfg.seed), fx.ctx, cfg);
  REQUIRE(none.items.size() == direct.items.size());
  for (std::size_t i = 0; i < none.items.size(); ++i) {
    CHECK(none.items[i].quality == direct.items[i].quality);
    CHECK(same_grasp(none.items[i].grasp, direct.items[i].grasp, 0.0));
  }

  cfg.aug_yaw_deg = 0.0;
  cfg.top_k = 100000;
  const CandidateSet shifted = augment_and_pool(s, pc, fx.ctx, cfg, 3);
  const CandidateSet base = augment_and_pool(s, pc, fx.ctx, cfg, 0);
  int matched = 0;
  for (const auto& c : shifted.items) {
    const GraspFrame& f = shifted.frames[c.source];
    // Mapped back from a translated copy, a candidate on an original frame is that frame's candidate.
    for (const auto& o : base.items) {
      if ((base.frames[o.source].point - f.point).norm() > 1e-9 || o.grasp.type_id != c.grasp.type_id) continue;
      CHECK(same_grasp(o.grasp, c.grasp, 1e-9));
      ++matched;
      break;
    }
  }
  CHECK(matched >= static_cast<int>(base.items.size()));

  cfg = PlannerConfig{};
  cfg.num_grasp_points = 32;
  cfg.top_k = 100000;
  const CandidateSet ten = augment_and_pool(s, pc, fx.ctx, cfg, 10);
  const CandidateSet single_pass = augment_and_pool(s, pc, fx.ctx, cfg, 0);
  CHECK(ten.items.size() <= 11 * single_pass.items.size());
  CHECK(ten.items.size() > single_pass.items.size());
  CHECK_THROWS_AS(augment_and_pool(s, pc, fx.ctx, cfg, -1), Error);
}

TEST_CASE("selection rules") {
  Fixture fx;
  PlannerConfig cfg;
  const std::vector<Vec3> cloud = {Vec3(0, 0, 0)};
  CandidateSet one;
  one.items = {free_candidate(0.95, 0.0)};
  Selection sel = select_best(one, cloud, fx.ctx, cfg);
  CHECK(sel.candidate.quality == 0.95);
  CHECK_FALSE(sel.below_gate);

  CandidateSet three;
  three.items = {free_candidate(0.4, 0.0), free_candidate(0.95, 0.2), free_candidate(0.92, 0.4)};
  three.sort_and_truncate(cfg.top_k);
  sel = select_best(three, cloud, fx.ctx, cfg);
  CHECK(sel.candidate.quality == 0.95);
  CHECK_FALSE(sel.below_gate);

  CandidateSet low;
  low.items = {free_candidate(0.6, 0.0), free_candidate(0.4, 0.2)};
  sel = select_best(low, cloud, fx.ctx, cfg);
  CHECK(sel.candidate.quality == 0.6);
  CHECK(sel.below_gate);

  // A grasp buried in points collides; the next one survives.
  std::vector<Vec3> blob;
  for (int i = -10; i <= 10; ++i)
    for (int j = -10; j <= 10; ++j)
      for (int k = -10; k <= 10; ++k) blob.push_back(Vec3(0.01 * i, 1.0 + 0.01 * j, 1.0 + 0.01 * k));
  CandidateSet mixed;
  mixed.items = {free_candidate(0.99, 0.0), free_candidate(0.5, 0.5)};
  sel = select_best(mixed, blob, fx.ctx, cfg);
  CHECK(sel.candidate.quality == 0.5);
  CHECK(sel.checked == 2);
  CandidateSet buried;
  buried.items = {free_candidate(0.99, 0.0)};
  try {
    select_best(buried, blob, fx.ctx, cfg);
    FAIL("expected no_feasible_grasp");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoFeasibleGrasp);
  }
  CHECK_THROWS_AS(select_best(CandidateSet{}, cloud, fx.ctx, cfg), Error);
}

TEST_CASE("monotone rescaling keeps the selection") {
  Fixture fx;
  const Scene s = toy_scene();
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0));
  PlannerConfig cfg;
  cfg.num_grasp_points = 32;
  cfg.augmentations = 1;
  const PlanResult r = plan_grasp(s, pc, fx.ctx, cfg);
  CandidateSet rescaled = r.candidates;
  for (auto& c : rescaled.items) c.quality = std::pow(c.quality, 3.0) * 0.5;
  rescaled.sort_and_truncate(cfg.top_k);
  const Selection again = select_best(rescaled, positions(pc), fx.ctx, cfg);
  CHECK(same_grasp(again.candidate.grasp, r.selection.candidate.grasp, 0.0));
  CHECK(again.candidate.source == r.selection.candidate.source);
}

TEST_CASE("plans are sound and reproducible") {
  Fixture fx;
  const Scene s = toy_scene();
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0));
  PlannerConfig cfg;
  cfg.num_grasp_points = 48;
  cfg.augmentations = 2;
  cfg.seed = 4;
  const PlanResult a = plan_grasp(s, pc, fx.ctx, cfg);
  const Candidate& c = a.selection.candidate;
  CHECK_FALSE(check_grasp_collision(c.grasp, fx.tax[c.grasp.type_id], fx.hand, positions(pc), cfg.collision).collides);
  CHECK(a.candidates.reps[c.source].score(c.grasp.cell.angle, c.grasp.cell.depth) > 0.0);
  CHECK(static_cast<int>(a.candidates.items.size()) <= cfg.top_k);

  cfg.threads = 4;
  const PlanResult b = plan_grasp(s, pc, fx.ctx, cfg);
  REQUIRE(a.candidates.items.size() == b.candidates.items.size());
  for (std::size_t i = 0; i < a.candidates.items.size(); ++i) {
    CHECK(a.candidates.items[i].quality == b.candidates.items[i].quality);
    CHECK(same_grasp(a.candidates.items[i].grasp, b.candidates.items[i].grasp, 0.0));
  }
  const auto j = plan_to_json(a.selection, fx.tax[c.grasp.type_id]);
  CHECK(j["grasp"]["type"] == c.grasp.type_id);
  CHECK(j["flags"]["below_gate"] == a.selection.below_gate);
}

TEST_CASE("empty scene has nothing to plan") {
  Fixture fx;
  Scene s;
  s.id = "empty";
  const PointCloud pc = sample_point_cloud(s, overhead_camera(0.0), {2000, 0.2});
  try {
    plan_grasp(s, pc, fx.ctx, PlannerConfig{});
    FAIL("expected no_feasible_grasp");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoFeasibleGrasp);
  }
}

TEST_CASE("planner config") {
  PlannerConfig c;
  c.top_k = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = PlannerConfig{};
  c.confidence_gate = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  const PlannerConfig back = planner_config_from_json(to_json(PlannerConfig{}));
  CHECK(to_json(back) == to_json(PlannerConfig{}));
  CHECK_THROWS_AS(planner_config_from_json(nlohmann::json{{"topk", 3}}), Error);
  std::vector<int> hits(100, 0);
  parallel_for(100, 8, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
}
