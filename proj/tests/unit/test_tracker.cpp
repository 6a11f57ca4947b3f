#include <doctest.h>

#include <sstream>

#include "mfgrasp/error.hpp"
#include "mfgrasp/tracker.hpp"
#include "support.hpp"

using namespace mfgrasp;
using namespace testing;

namespace {

struct Fixture {
  std::vector<GraspType> tax = builtin_taxonomy();
  HandModel hand;
  NetworkParams params = NetworkParams::random(NetworkParams::dims(12, 5, 16, 32), 3);
  PlannerContext ctx{&params, &tax, &hand};
  PlannerConfig pc;
  Scene scene = single("box", make_box(0.05, 0.08, 0.06), RigidTransform::translation(Vec3(0.01, -0.02, 0.03)));
  TrackFrame first;

  Fixture() {
    pc.num_grasp_points = 32;
    pc.augmentations = 0;
    first = {scene, sample_point_cloud(scene, overhead_camera(0.0))};
  }

  TrackFrame moved(const RigidTransform& t) const { return {scene.transformed(t), first.cloud.transformed(t)}; }
};

}  // namespace

TEST_CASE("initialisation") {
  Fixture f;
  const TrackState s = init_track(f.first, f.ctx, f.pc);
  CHECK(s.grasp.quality.has_value());
  CHECK(s.object == 0);
  CHECK(s.anchor.valid(s.cell.angle, s.cell.depth));
  CHECK_FALSE(s.terminated);
  CHECK(s.frame_index == 0);

  Scene empty;
  empty.id = "empty";
  const TrackFrame nothing{empty, sample_point_cloud(empty, overhead_camera(0.0))};
  try {
    init_track(nothing, f.ctx, f.pc);
    FAIL("expected no feasible grasp");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoFeasibleGrasp);
  }
}

TEST_CASE("shift search on known representations") {
  Fixture f;
  const SceneIndex index(f.scene);
  const GraspFrame frame = GraspFrame::make(Vec3(0.01, -0.02, 0.09), -Vec3::UnitZ(), Vec3(1, 0.2, 0).normalized());
  const RepGrid anchor = compute_representation(index, frame, f.pc.rep);
  const auto self = best_shift(anchor, anchor, f.pc.rep.max_width);
  CHECK(self.first == 0);
  CHECK(self.second == doctest::Approx(1.0).epsilon(1e-12));

  // A translated twin reproduces the grid cell for cell.
  const RigidTransform shift = RigidTransform::translation(Vec3(0.2, -0.1, 0.0));
  const SceneIndex twin(f.scene.transformed(shift));
  const RepGrid same = compute_representation(twin, frame.transformed(shift), f.pc.rep);
  for (int a = 0; a < 12; ++a)
    for (int d = 0; d < 5; ++d) {
      CHECK(same.score(a, d) == doctest::Approx(anchor.score(a, d)).epsilon(1e-9));
      CHECK(same.width(a, d) == doctest::Approx(anchor.width(a, d)).epsilon(1e-9));
    }

  // Turning the object one bin about the approach moves the grid one row.
  const RigidTransform turn = RigidTransform::about_axis(frame.point, Vec3::UnitZ(), deg(15));
  const SceneIndex turned(f.scene.transformed(turn));
  const RepGrid rotated = compute_representation(turned, frame, f.pc.rep);
  const auto [k, sim] = best_shift(anchor, rotated, f.pc.rep.max_width);
  CHECK(std::abs(k) == 1);
  CHECK(sim == doctest::Approx(1.0).epsilon(1e-9));
  const RepGrid expect = anchor.shifted(k);
  for (int a = 0; a < 12; ++a)
    for (int d = 0; d < 5; ++d) {
      CHECK(rotated.score(a, d) == doctest::Approx(expect.score(a, d)).epsilon(1e-9));
      CHECK(rotated.width(a, d) == doctest::Approx(expect.width(a, d)).epsilon(1e-9));
    }
}

TEST_CASE("shift ties keep the smallest positive shift") {
  RepGrid anchor(12, 1);
  anchor.set(0, 0, 1.0, 0.05);
  RepGrid rep(12, 1);
  rep.set(1, 0, 1.0, 0.05);
  rep.set(11, 0, 1.0, 0.05);
  CHECK(best_shift(anchor, rep, 0.1).first == 1);
  RepGrid flat(12, 1);
  for (int a = 0; a < 12; ++a) flat.set(a, 0, 0.5, 0.05);
  CHECK(best_shift(flat, flat, 0.1).first == 0);
}

TEST_CASE("association gating") {
  Fixture f;
  RepGrid rep(12, 5);
  rep.set(0, 0, 1.0, 0.05);
  CHECK_THROWS_AS(associate(rep, {}, Vec3::Zero(), 0.1, TrackConfig{}), Error);
  std::vector<TrackCandidate> far(2);
  for (int i = 0; i < 2; ++i) {
    far[i].rep = rep;
    ShiftedGrasp g;
    g.grasp.translation = Vec3(1.0 + i, 0, 0);
    far[i].grasp = g;
  }
  const Association none = associate(rep, far, Vec3::Zero(), 0.1, TrackConfig{});
  CHECK(none.index == -1);
  CHECK(none.similarity[0] == -1.0);
  // Equal similarity goes to the candidate nearest the prediction.
  far[1].grasp->grasp.translation = Vec3(0.01, 0, 0);
  far[0].grasp->grasp.translation = Vec3(0.02, 0, 0);
  CHECK(associate(rep, far, Vec3::Zero(), 0.1, TrackConfig{}).index == 1);
}

TEST_CASE("identical frames are a fixed point") {
  Fixture f;
  const TrackState s0 = init_track(f.first, f.ctx, f.pc);
  TrackState s = s0;
  for (int i = 0; i < 3; ++i) s = step_track(s, f.first.cloud, f.first, f.ctx, f.pc, TrackConfig{});
  CHECK_FALSE(s.lost_this_frame);
  CHECK(s.shift == 0);
  CHECK(s.last_similarity == doctest::Approx(1.0).epsilon(1e-9));
  CHECK((s.grasp.translation - s0.grasp.translation).norm() < 1e-9);
  CHECK(rotation_distance(s.grasp.rotation, s0.grasp.rotation) < 1e-9);
  CHECK(s.frame_index == 3);
}

TEST_CASE("translation at one centimetre per frame") {
  Fixture f;
  TrackConfig tc;
  tc.alpha = 1.0;
  TrackState s = init_track(f.first, f.ctx, f.pc, tc);
  const MultiFingerGrasp g0 = s.grasp;
  PointCloud prev = f.first.cloud;
  for (int i = 1; i <= 10; ++i) {
    const RigidTransform t = RigidTransform::translation(Vec3(0.01 * i, 0, 0));
    const TrackFrame frame = f.moved(t);
    s = step_track(s, prev, frame, f.ctx, f.pc, tc);
    prev = frame.cloud;
    CHECK_FALSE(s.lost_this_frame);
    const MultiFingerGrasp truth = g0.transformed(t);
    CHECK((s.grasp.translation - truth.translation).norm() < 1e-3);
    CHECK(rotation_distance(s.grasp.rotation, truth.rotation) < deg(0.5));
  }
}

TEST_CASE("smoothing bounds each step") {
  Fixture f;
  TrackConfig tc;
  tc.alpha = 0.6;
  TrackState s = init_track(f.first, f.ctx, f.pc, tc);
  PointCloud prev = f.first.cloud;
  for (int i = 1; i <= 6; ++i) {
    const RigidTransform t = RigidTransform::translation(Vec3(0.008 * i, 0.004 * i, 0));
    const TrackFrame frame = f.moved(t);
    const TrackState next = step_track(s, prev, frame, f.ctx, f.pc, tc);
    prev = frame.cloud;
    REQUIRE_FALSE(next.lost_this_frame);
    const Vec3 expect = tc.alpha * next.measured + (1 - tc.alpha) * s.grasp.translation;
    CHECK((next.grasp.translation - expect).norm() < 1e-12);
    CHECK((next.grasp.translation - s.grasp.translation).norm() <=
          tc.alpha * (next.measured - s.grasp.translation).norm() + 1e-12);
    s = next;
  }
}

TEST_CASE("losing the object terminates the track") {
  Fixture f;
  TrackConfig tc;
  TrackState s = init_track(f.first, f.ctx, f.pc, tc);
  Scene empty;
  empty.id = "gone";
  const TrackFrame gone{empty, sample_point_cloud(empty, overhead_camera(0.0))};
  PointCloud prev = f.first.cloud;
  for (int i = 1; i <= 3; ++i) {
    s = step_track(s, prev, gone, f.ctx, f.pc, tc);
    prev = gone.cloud;
    CHECK(s.lost_this_frame);
    CHECK(s.lost == i);
    CHECK(s.terminated == (i == 3));
  }
  try {
    step_track(s, prev, gone, f.ctx, f.pc, tc);
    FAIL("expected lost track");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LostTrack);
  }
}

TEST_CASE("log format") {
  Fixture f;
  const TrackState s = init_track(f.first, f.ctx, f.pc);
  const std::string header = track_log_header();
  const std::string row = track_log_row(s);
  auto count = [](const std::string& text) { return std::count(text.begin(), text.end(), ',') + 1; };
  CHECK(count(header) == count(row));
  CHECK(header.rfind("frame,", 0) == 0);
  CHECK(row.rfind("0,", 0) == 0);
  TrackConfig bad;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(track_config_from_json(to_json(TrackConfig{})).alpha == 0.6);
}
