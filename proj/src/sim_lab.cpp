#include "mfgrasp/sim_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mfgrasp/error.hpp"
#include "mfgrasp/mesh_io.hpp"
#include "mfgrasp/rng.hpp"

namespace mfgrasp {

// ---- force closure ---------------------------------------------------------

bool in_convex_hull(const std::vector<VecX>& points, const VecX& target, double tol) {
  if (points.empty()) return false;
  const int dim = static_cast<int>(target.size());
  const int n = static_cast<int>(points.size());
  const int m = dim + 1;  // coordinates plus the convexity row
  const int cols = n + m + 1;
  // Tableau rows: sum_j lambda_j p_j + art = target, sum_j lambda_j + art = 1.
  MatX T = MatX::Zero(m, cols);
  for (int j = 0; j < n; ++j) {
    if (points[j].size() != dim) throw Error(ErrorKind::Precondition, "in_convex_hull: dimension mismatch");
    T.block(0, j, dim, 1) = points[j];
    T(dim, j) = 1.0;
  }
  T.block(0, cols - 1, dim, 1) = target;
  T(dim, cols - 1) = 1.0;
  for (int r = 0; r < m; ++r) {
    if (T(r, cols - 1) < 0.0) T.row(r) *= -1.0;
    T(r, n + r) = 1.0;
  }
  std::vector<int> basis(m);
  for (int r = 0; r < m; ++r) basis[r] = n + r;

  const double eps = 1e-12;
  for (int iter = 0; iter < 10000; ++iter) {
    // Phase-one reduced cost of a structural column is minus its artificial-row sum.
    int enter = -1;
    for (int j = 0; j < n + m && enter < 0; ++j) {
      if (std::find(basis.begin(), basis.end(), j) != basis.end()) continue;
      double reduced = j >= n ? 1.0 : 0.0;
      for (int r = 0; r < m; ++r)
        if (basis[r] >= n) reduced -= T(r, j);
      if (reduced < -eps) enter = j;
    }
    if (enter < 0) break;
    int leave = -1;
    double best = 0.0;
    for (int r = 0; r < m; ++r) {
      if (T(r, enter) <= eps) continue;
      const double ratio = T(r, cols - 1) / T(r, enter);
      if (leave < 0 || ratio < best - eps || (std::abs(ratio - best) <= eps && basis[r] < basis[leave])) {
        leave = r;
        best = ratio;
      }
    }
    if (leave < 0) break;  // unbounded direction; cannot happen in phase one
    T.row(leave) /= T(leave, enter);
    for (int r = 0; r < m; ++r)
      if (r != leave && T(r, enter) != 0.0) T.row(r) -= T(r, enter) * T.row(leave);
    basis[leave] = enter;
  }
  double infeasibility = 0.0;
  for (int r = 0; r < m; ++r)
    if (basis[r] >= n) infeasibility += T(r, cols - 1);
  return infeasibility <= tol;
}

void OracleConfig::validate() const {
  if (!(mu > 0.0)) throw Error(ErrorKind::Config, "oracle: mu must be positive");
  if (!(max_travel > 0.0)) throw Error(ErrorKind::Config, "oracle: max_travel must be positive");
  if (contact_tolerance < 0.0 || margin < 0.0 || pad_radius < 0.0 || lift_clearance < 0.0)
    throw Error(ErrorKind::Config, "oracle: tolerances must be non-negative");
  if (!(torque_scale > 0.0)) throw Error(ErrorKind::Config, "oracle: torque_scale must be positive");
  if (cone_edges < 3) throw Error(ErrorKind::Config, "oracle: cone_edges must be >= 3");
}

nlohmann::json to_json(const OracleConfig& c) {
  return {{"mu", c.mu},
          {"max_travel", c.max_travel},
          {"contact_tolerance", c.contact_tolerance},
          {"margin", c.margin},
          {"pad_radius", c.pad_radius},
          {"torque_scale", c.torque_scale},
          {"cone_edges", c.cone_edges},
          {"lift_clearance", c.lift_clearance}};
}

OracleConfig oracle_config_from_json(const nlohmann::json& j, OracleConfig c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "mu") c.mu = v.get<double>();
    else if (key == "max_travel") c.max_travel = v.get<double>();
    else if (key == "contact_tolerance") c.contact_tolerance = v.get<double>();
    else if (key == "margin") c.margin = v.get<double>();
    else if (key == "pad_radius") c.pad_radius = v.get<double>();
    else if (key == "torque_scale") c.torque_scale = v.get<double>();
    else if (key == "cone_edges") c.cone_edges = v.get<int>();
    else if (key == "lift_clearance") c.lift_clearance = v.get<double>();
    else throw Error(ErrorKind::Config, "unknown oracle key '" + key + "'");
  }
  c.validate();
  return c;
}

std::vector<Wrench> contact_wrenches(const std::vector<Contact>& contacts, const Vec3& center, const OracleConfig& c) {
  std::vector<Wrench> out;
  const double gamma = c.mu * c.pad_radius;
  for (const auto& k : contacts) {
    const Vec3 inward = -k.normal.normalized();
    const Vec3 u = any_orthogonal(inward);
    const Vec3 v = inward.cross(u);
    const Vec3 r = k.position - center;
    for (int e = 0; e < c.cone_edges; ++e) {
      const double th = 2.0 * std::numbers::pi * e / c.cone_edges;
      const Vec3 f = inward + c.mu * (std::cos(th) * u + std::sin(th) * v);
      Wrench w;
      w << f, r.cross(f) / c.torque_scale;
      out.push_back(w);
    }
    for (double sign : {1.0, -1.0}) {
      Wrench w;
      w << inward, (r.cross(inward) + sign * gamma * inward) / c.torque_scale;
      out.push_back(w);
    }
  }
  return out;
}

bool force_closure(const std::vector<Contact>& contacts, const Vec3& center, const OracleConfig& c) {
  if (contacts.size() < 2) return false;
  std::vector<VecX> pts;
  for (const auto& w : contact_wrenches(contacts, center, c)) pts.emplace_back(w);
  for (int k = 0; k < 6; ++k) {
    for (double sign : {1.0, -1.0}) {
      VecX target = VecX::Zero(6);
      target[k] = sign * c.margin;
      if (!in_convex_hull(pts, target)) return false;
    }
  }
  return true;
}

// ---- grasp outcome oracle --------------------------------------------------

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::NoContact: return "no_contact";
    case Outcome::OneSided: return "one_sided";
    case Outcome::ForeignContact: return "foreign_contact";
    case Outcome::Penetration: return "penetration";
    case Outcome::NoForceClosure: return "no_force_closure";
    case Outcome::LiftBlocked: return "lift_blocked";
  }
  return "unknown";
}

namespace {

// Another object resting on the target within `clearance`.
bool lift_blocked(const SceneIndex& scene, int target, double clearance) {
  const TriMesh& tm = scene.world_mesh(target);
  const double zc = tm.centroid().z();
  const Aabb tb = tm.bounds();
  for (std::size_t o = 0; o < scene.size(); ++o) {
    if (static_cast<int>(o) == target) continue;
    const TriMesh& om = scene.world_mesh(o);
    if (!tb.overlaps(om.bounds(), clearance)) continue;
    for (const auto& v : om.vertices())
      if (v.z() > zc && scene.bvh(target).distance(v, clearance) < clearance) return true;
    if (om.centroid().z() > zc)
      for (const auto& v : tm.vertices())
        if (scene.bvh(o).distance(v, clearance) < clearance) return true;
  }
  return false;
}

}  // namespace

TrialOutcome simulate_grasp_outcome(const SceneIndex& scene, const MultiFingerGrasp& grasp, const GraspType& type,
                                    const HandModel& hand, const OracleConfig& oracle) {
  TrialOutcome out;
  const HandShape shape = hand_shape(hand, type, grasp.width);
  const Vec3 closing = grasp.closing_axis();
  bool penetration = false;
  for (int f = 0; f < kNumFingers; ++f) {
    if (!shape.engaged[f]) continue;
    const double side = shape.pad_y_sign[f];
    const Vec3 pad = grasp.rotation * shape.pad_centers[f] + grasp.translation;
    const Vec3 dir = -side * closing;
    const Vec3 origin = pad - oracle.contact_tolerance * dir;
    const auto hit = scene.raycast(origin, dir, oracle.max_travel + oracle.contact_tolerance);
    if (!hit) continue;
    if (hit->normal.dot(dir) > 0.0) penetration = true;
    out.contacts.push_back(Contact{origin + hit->t * dir, hit->normal, hit->object, f});
  }
  if (out.contacts.empty()) {
    out.reason = Outcome::NoContact;
    return out;
  }
  if (penetration) {
    out.reason = Outcome::Penetration;
    return out;
  }
  // The thumb's object is the target; otherwise the first finger's.
  out.target = out.contacts.front().object;
  bool thumb_side = false, finger_side = false;
  for (const auto& c : out.contacts) {
    if (c.object != out.target) {
      out.reason = Outcome::ForeignContact;
      return out;
    }
    (c.finger == 0 ? thumb_side : finger_side) = true;
  }
  if (!thumb_side || !finger_side) {
    out.reason = Outcome::OneSided;
    return out;
  }
  const Vec3 center = scene.world_mesh(out.target).centroid();
  if (!force_closure(out.contacts, center, oracle)) {
    out.reason = Outcome::NoForceClosure;
    return out;
  }
  if (lift_blocked(scene, out.target, oracle.lift_clearance)) {
    out.reason = Outcome::LiftBlocked;
    return out;
  }
  out.q = 1;
  out.reason = Outcome::Success;
  return out;
}

// ---- scene categories ------------------------------------------------------

const std::vector<std::string>& category_names() {
  static const std::vector<std::string> names = {"hardware", "snack", "ragdoll", "household", "toy", "adversarial"};
  return names;
}

std::vector<ObjectModel> category_library(const std::string& category, std::uint64_t seed) {
  Rng rng(Rng::mix(seed ^ 0xCA7ull));
  auto u = [&](double lo, double hi) { return rng.uniform(lo, hi); };
  std::vector<ObjectModel> lib;
  auto add = [&](const std::string& label, TriMesh mesh) { lib.push_back(ObjectModel{label, std::move(mesh), "", 1.0}); };
  if (category == "hardware") {
    add("block", make_box(u(0.02, 0.04), u(0.03, 0.07), u(0.015, 0.035)));
    add("bolt", make_cylinder(u(0.008, 0.015), u(0.04, 0.09), 16));
    add("nut", make_cylinder(u(0.015, 0.025), u(0.01, 0.02), 6));
    add("shim", make_wedge(u(0.03, 0.05), u(0.6, 1.2), u(0.03, 0.06)));
  } else if (category == "snack") {
    add("bar", make_box(u(0.03, 0.05), u(0.08, 0.12), u(0.015, 0.03)));
    add("carton", make_box(u(0.04, 0.07), u(0.05, 0.09), u(0.04, 0.08)));
    add("can", make_cylinder(u(0.025, 0.035), u(0.06, 0.11), 20));
  } else if (category == "ragdoll") {
    add("ball", make_icosphere(u(0.025, 0.045), 2));
    add("pillow", make_box(u(0.05, 0.08), u(0.05, 0.08), u(0.02, 0.04)));
    add("roll", make_cylinder(u(0.03, 0.045), u(0.03, 0.06), 16));
  } else if (category == "household") {
    add("bottle", make_cylinder(u(0.025, 0.04), u(0.09, 0.15), 20));
    add("box", make_box(u(0.05, 0.08), u(0.06, 0.1), u(0.03, 0.07)));
    add("cup", make_cylinder(u(0.03, 0.045), u(0.06, 0.1), 20));
  } else if (category == "toy") {
    add("pyramid", make_tetrahedron(u(0.04, 0.07)));
    add("marble", make_icosphere(u(0.015, 0.03), 2));
    add("cube", make_box(u(0.03, 0.05), u(0.03, 0.05), u(0.03, 0.05)));
    add("ramp", make_wedge(u(0.04, 0.06), u(0.7, 1.1), u(0.04, 0.07)));
  } else if (category == "adversarial") {
    add("blade", make_wedge(u(0.03, 0.06), u(0.3, 0.7), u(0.04, 0.08)));
    add("spike", make_tetrahedron(u(0.05, 0.09)));
    add("plate", make_box(u(0.008, 0.015), u(0.05, 0.09), u(0.05, 0.09)));
    add("pin", make_cylinder(u(0.006, 0.01), u(0.05, 0.1), 12));
  } else {
    throw Error(ErrorKind::Config, "unknown scene category '" + category + "'");
  }
  return lib;
}

Scene make_category_scene(const SceneSpec& spec) {
  const auto lib = category_library(spec.category, spec.seed);
  int objects = std::max(1, spec.objects);
  for (int attempt = 0;; ++attempt) {
    try {
      SceneGenConfig gen;
      gen.max_rejections = 200;
      Scene s = synthesize_scene(lib, objects, Rng::mix(spec.seed + attempt), gen);
      s.id = spec.category + "-" + std::to_string(spec.seed);
      return s;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SceneTooDense || attempt >= 8) throw;
      if (attempt % 3 == 2 && objects > 1) --objects;
    }
  }
}

std::vector<SceneSpec> scene_suite(int count, std::uint64_t seed, const std::vector<std::string>& categories,
                                   int max_objects) {
  if (categories.empty()) throw Error(ErrorKind::Config, "scene suite needs at least one category");
  Rng rng(Rng::mix(seed ^ 0x5C3Eull));
  std::vector<SceneSpec> out;
  for (int i = 0; i < count; ++i) {
    SceneSpec s;
    s.category = categories[static_cast<std::size_t>(i) % categories.size()];
    s.objects = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(std::max(1, max_objects - 1))));
    s.seed = rng.bits() >> 16;
    out.push_back(s);
  }
  return out;
}

// ---- datasets ----------------------------------------------------------------

void SimConfig::validate() const {
  rep.validate();
  oracle.validate();
  if (clearance < 0.0) throw Error(ErrorKind::Config, "sim: clearance must be >= 0");
  if (frames_per_scene < 1) throw Error(ErrorKind::Config, "sim: frames_per_scene must be >= 1");
  if (max_objects < 1) throw Error(ErrorKind::Config, "sim: max_objects must be >= 1");
  if (categories.empty()) throw Error(ErrorKind::Config, "sim: categories must not be empty");
  for (const auto& c : categories)
    if (std::find(category_names().begin(), category_names().end(), c) == category_names().end())
      throw Error(ErrorKind::Config, "sim: unknown category '" + c + "'");
}

nlohmann::json to_json(const SimConfig& c) {
  return {{"rep", to_json(c.rep)},
          {"oracle", to_json(c.oracle)},
          {"collision", {{"voxel_size", c.collision.voxel_size}, {"exclude_radius", c.collision.exclude_radius}}},
          {"clearance", c.clearance},
          {"frames_per_scene", c.frames_per_scene},
          {"max_objects", c.max_objects},
          {"categories", c.categories}};
}

SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig c) {
  for (const auto& [key, v] : j.items()) {
    if (key == "rep") c.rep = rep_config_from_json(v);
    else if (key == "oracle") c.oracle = oracle_config_from_json(v, c.oracle);
    else if (key == "collision") {
      for (const auto& [k2, v2] : v.items()) {
        if (k2 == "voxel_size") c.collision.voxel_size = v2.get<double>();
        else if (k2 == "exclude_radius") c.collision.exclude_radius = v2.get<double>();
        else throw Error(ErrorKind::Config, "unknown collision key '" + k2 + "'");
      }
    } else if (key == "clearance") c.clearance = v.get<double>();
    else if (key == "frames_per_scene") c.frames_per_scene = v.get<int>();
    else if (key == "max_objects") c.max_objects = v.get<int>();
    else if (key == "categories") c.categories = v.get<std::vector<std::string>>();
    else throw Error(ErrorKind::Config, "unknown sim key '" + key + "'");
  }
  c.validate();
  return c;
}

namespace {

struct Pick {
  MultiFingerGrasp grasp;
  int frame = -1;
};

struct Perception {
  PointCloud cloud;
  std::vector<Vec3> points;
  FrameSample frames;
  std::vector<RepGrid> reps;
};

Perception perceive(const SceneIndex& index, int frames, std::uint64_t seed, const RepConfig& rep) {
  Perception p;
  p.cloud = sample_point_cloud(index, overhead_camera(index.plane_height()));
  p.points = positions(p.cloud);
  p.frames = sample_grasp_points(p.cloud, frames, seed);
  p.reps = compute_representations(index, p.frames.frames, rep);
  return p;
}

// Each frame's best cell with a type from `choose_type`; executes the
// highest antipodal score that survives the collision check.
std::optional<Pick> heuristic_pick(const Perception& p, const std::function<int()>& choose_type, const SimConfig& cfg,
                                   const std::vector<GraspType>& taxonomy, const HandModel& hand) {
  struct Option {
    double score;
    int frame;
    MultiFingerGrasp grasp;
  };
  std::vector<Option> options;
  for (std::size_t i = 0; i < p.reps.size(); ++i) {
    const RepGrid& rep = p.reps[i];
    if (!rep.any_valid()) continue;
    Cell cell;
    try {
      cell = best_antipodal_cell(rep);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NoGrasp) throw;
      continue;
    }
    const int type = choose_type();
    try {
      options.push_back({rep.score(cell.angle, cell.depth), static_cast<int>(i),
                         pose_from_representation(p.frames.frames[i], rep, cell, taxonomy[type], cfg.clearance, cfg.rep,
                                                  hand)});
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Infeasible) throw;
    }
  }
  std::stable_sort(options.begin(), options.end(), [](const Option& a, const Option& b) { return a.score > b.score; });
  for (const auto& o : options) {
    if (check_grasp_collision(o.grasp, taxonomy[o.grasp.type_id], hand, p.points, cfg.collision).collides) continue;
    return Pick{o.grasp, o.frame};
  }
  return std::nullopt;
}

}  // namespace

Dataset collect_trials(int n, std::uint64_t seed, const SimConfig& config, const std::vector<GraspType>& taxonomy,
                       const HandModel& hand, const std::function<void(int)>& progress) {
  if (n < 1) throw Error(ErrorKind::Precondition, "collect_trials: n must be >= 1");
  config.validate();
  Dataset ds;
  ds.header = {{"schema", "mfgrasp.trials"}, {"version", 1}, {"seed", seed}, {"n", n}, {"sim", to_json(config)}};
  Rng scene_rng(Rng::mix(seed));
  const long max_scenes = 20L * n + 100;
  for (long s = 0; static_cast<int>(ds.records.size()) < n; ++s) {
    if (s >= max_scenes) throw Error(ErrorKind::NoFeasibleGrasp, "collect_trials: too many scenes without a grasp");
    Rng trial_rng = scene_rng.fork(static_cast<std::uint64_t>(s));
    SceneSpec spec;
    spec.category = config.categories[trial_rng.index(config.categories.size())];
    spec.objects = 1 + static_cast<int>(trial_rng.index(static_cast<std::size_t>(config.max_objects)));
    spec.seed = trial_rng.bits() >> 16;
    const Scene scene = make_category_scene(spec);
    const SceneIndex index(scene);
    const Perception p = perceive(index, config.frames_per_scene, spec.seed, config.rep);
    const auto pick = heuristic_pick(
        p, [&] { return static_cast<int>(trial_rng.index(taxonomy.size())); }, config, taxonomy, hand);
    if (!pick) {
      ++ds.skipped_scenes;
      continue;
    }
    const TrialOutcome outcome = simulate_grasp_outcome(index, pick->grasp, taxonomy[pick->grasp.type_id], hand,
                                                        config.oracle);
    TrialRecord r;
    r.scene_id = scene.id;
    r.category = spec.category;
    r.rep = p.reps[pick->frame];
    r.cell = pick->grasp.cell;
    r.type_id = pick->grasp.type_id;
    r.q = outcome.q;
    r.reason = to_string(outcome.reason);
    r.grasp = pick->grasp;
    r.timestamp = ds.records.size();
    ds.records.push_back(std::move(r));
    if (progress) progress(static_cast<int>(ds.records.size()));
  }
  return ds;
}

nlohmann::json record_to_json(const TrialRecord& r, const RepConfig& rep) {
  nlohmann::json rj = to_json(r.rep, rep);
  rj.erase("config");
  return {{"scene_id", r.scene_id}, {"category", r.category}, {"rep", rj},
          {"cell", {r.cell.angle, r.cell.depth}}, {"type", r.type_id}, {"q", r.q},
          {"reason", r.reason}, {"grasp", to_json(r.grasp)}, {"timestamp", r.timestamp}};
}

TrialRecord record_from_json(const nlohmann::json& j) {
  try {
    TrialRecord r;
    r.scene_id = j.at("scene_id").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.rep = rep_from_json(j.at("rep"));
    const auto cell = j.at("cell").get<std::array<int, 2>>();
    r.cell = Cell{cell[0], cell[1]};
    r.type_id = j.at("type").get<int>();
    r.q = j.at("q").get<int>();
    r.reason = j.at("reason").get<std::string>();
    r.grasp = grasp_from_json(j.at("grasp"));
    r.timestamp = j.at("timestamp").get<std::uint64_t>();
    if (r.q != 0 && r.q != 1) throw Error(ErrorKind::Format, "trial: q must be 0 or 1");
    if (r.cell.angle < 0 || r.cell.angle >= r.rep.num_angles() || r.cell.depth < 0 || r.cell.depth >= r.rep.num_depths() ||
        !r.rep.valid(r.cell.angle, r.cell.depth))
      throw Error(ErrorKind::Format, "trial: executed cell is not valid in its representation");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("trial: ") + e.what());
  }
}

std::string dataset_to_jsonl(const Dataset& d) {
  RepConfig rep;
  if (d.header.contains("sim")) rep = rep_config_from_json(d.header["sim"]["rep"]);
  std::string out = d.header.dump() + "\n";
  for (const auto& r : d.records) out += record_to_json(r, rep).dump() + "\n";
  return out;
}

Dataset dataset_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Dataset d;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Format, "dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    if (lineno == 1) {
      if (j.value("schema", "") != "mfgrasp.trials" || j.value("version", 0) != 1)
        throw Error(ErrorKind::Format, "dataset: missing mfgrasp.trials v1 header");
      d.header = j;
      continue;
    }
    try {
      d.records.push_back(record_from_json(j));
    } catch (const Error& e) {
      throw Error(ErrorKind::Format, "dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (lineno == 0) throw Error(ErrorKind::Format, "dataset: empty file");
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) { write_file(path, dataset_to_jsonl(d)); }

Dataset read_dataset(const std::filesystem::path& path) { return dataset_from_jsonl(read_file(path)); }

std::pair<std::vector<TrialRecord>, std::vector<TrialRecord>> split_dataset(const std::vector<TrialRecord>& records,
                                                                            int eval_count, std::uint64_t seed) {
  if (eval_count < 0 || static_cast<int>(records.size()) <= eval_count)
    throw Error(ErrorKind::Precondition, "split_dataset: need more than " + std::to_string(eval_count) + " records, have " +
                                             std::to_string(records.size()));
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(Rng::mix(seed ^ 0x5B117ull));
  rng.shuffle(idx);
  std::vector<bool> is_eval(records.size(), false);
  for (int i = 0; i < eval_count; ++i) is_eval[idx[i]] = true;
  std::pair<std::vector<TrialRecord>, std::vector<TrialRecord>> out;
  for (std::size_t i = 0; i < records.size(); ++i) (is_eval[i] ? out.second : out.first).push_back(records[i]);
  return out;
}

std::vector<Sample> to_samples(const std::vector<TrialRecord>& records, double max_width, int num_types) {
  std::vector<Sample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Sample s;
    s.input = encode_rep(r.rep, max_width);
    s.index = output_index(r.cell.angle, r.cell.depth, r.type_id, r.rep.num_depths(), num_types);
    s.label = r.q;
    out.push_back(std::move(s));
  }
  return out;
}

double classification_accuracy(const NetworkParams& params, const std::vector<TrialRecord>& records, double max_width,
                               int num_types) {
  if (records.empty()) throw Error(ErrorKind::Precondition, "classification_accuracy: no records");
  const auto samples = to_samples(records, max_width, num_types);
  MatX x(params.input_size(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = samples[i].input;
  const MatX p = forward(params, x);
  int correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int predicted = p(samples[i].index, static_cast<Eigen::Index>(i)) >= 0.5 ? 1 : 0;
    correct += predicted == static_cast<int>(samples[i].label) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// ---- policy evaluation -------------------------------------------------------

const char* to_string(Policy p) {
  switch (p) {
    case Policy::DecisionModel: return "decision_model";
    case Policy::RandomType: return "random_type";
    case Policy::TwoFinger: return "two_finger";
  }
  return "unknown";
}

EvalConfig::EvalConfig() {
  planner.num_grasp_points = 64;
  planner.augmentations = 2;
}

std::pair<double, double> wilson_interval(int successes, int trials, double z) {
  if (trials <= 0) return {0.0, 1.0};
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double center = (p + z2 / (2 * n)) / (1 + z2 / n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / (1 + z2 / n);
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

EvalResult evaluate_policy(Policy policy, const NetworkParams* params, const std::vector<SceneSpec>& scenes,
                           const EvalConfig& config, const std::vector<GraspType>& taxonomy, const HandModel& hand,
                           bool always_succeed) {
  if (policy == Policy::DecisionModel && !params)
    throw Error(ErrorKind::Precondition, "evaluate_policy: decision model needs parameters");
  EvalResult res;
  int two_finger = -1;
  for (const auto& t : taxonomy)
    if (t.engaged_fingers == 2 && (two_finger < 0 || t.depth_offset < taxonomy[two_finger].depth_offset)) two_finger = t.id;
  if (policy == Policy::TwoFinger && two_finger < 0)
    throw Error(ErrorKind::Precondition, "evaluate_policy: taxonomy has no two-finger type");

  for (const auto& spec : scenes) {
    const Scene scene = make_category_scene(spec);
    const SceneIndex index(scene);
    std::optional<MultiFingerGrasp> chosen;
    if (policy == Policy::DecisionModel) {
      const PointCloud cloud = sample_point_cloud(index, overhead_camera(index.plane_height()));
      PlannerConfig pc = config.planner;
      pc.seed = spec.seed;
      PlannerContext ctx{params, &taxonomy, &hand};
      try {
        chosen = plan_grasp(scene, cloud, ctx, pc).selection.candidate.grasp;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NoFeasibleGrasp) throw;
      }
    } else {
      const Perception p = perceive(index, config.planner.num_grasp_points, spec.seed, config.planner.rep);
      Rng rng(Rng::mix(config.policy_seed ^ spec.seed));
      auto choose = [&] {
        return policy == Policy::TwoFinger ? two_finger : static_cast<int>(rng.index(taxonomy.size()));
      };
      SimConfig sc = config.sim;
      sc.rep = config.planner.rep;
      sc.clearance = config.planner.clearance;
      sc.collision = config.planner.collision;
      if (auto pick = heuristic_pick(p, choose, sc, taxonomy, hand)) chosen = pick->grasp;
    }
    int q = 0;
    std::string reason = "no_grasp";
    if (chosen) {
      if (always_succeed) {
        q = 1;
        reason = "rigged";
      } else {
        const TrialOutcome o = simulate_grasp_outcome(index, *chosen, taxonomy[chosen->type_id], hand, config.sim.oracle);
        q = o.q;
        reason = to_string(o.reason);
      }
    } else {
      ++res.no_grasp;
    }
    ++res.trials;
    res.successes += q;
    auto& cat = res.per_category[spec.category];
    cat.first += q;
    cat.second += 1;
    ++res.reasons[reason];
  }
  res.rate = res.trials > 0 ? static_cast<double>(res.successes) / res.trials : 0.0;
  std::tie(res.ci_low, res.ci_high) = wilson_interval(res.successes, res.trials);
  return res;
}

nlohmann::json to_json(const EvalResult& r) {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [name, st] : r.per_category)
    cats[name] = {{"successes", st.first}, {"trials", st.second},
                  {"rate", st.second > 0 ? static_cast<double>(st.first) / st.second : 0.0}};
  return {{"successes", r.successes}, {"trials", r.trials}, {"no_grasp", r.no_grasp}, {"rate", r.rate},
          {"ci95", {r.ci_low, r.ci_high}}, {"per_category", cats}, {"reasons", r.reasons}};
}

// ---- learning curve -----------------------------------------------------------

std::vector<CurveRow> learning_curve(const std::vector<TrialRecord>& train, const std::vector<TrialRecord>& eval,
                                     const CurveConfig& config, const std::vector<GraspType>& taxonomy,
                                     const HandModel& hand, const std::function<void(const CurveRow&)>& progress) {
  if (train.empty() || eval.empty()) throw Error(ErrorKind::Precondition, "learning_curve: empty split");
  if (config.repeats < 1) throw Error(ErrorKind::Config, "learning_curve: repeats must be >= 1");
  const RepConfig& rc = config.eval.planner.rep;
  const int C = static_cast<int>(taxonomy.size());
  const auto all = to_samples(train, rc.max_width, C);
  const auto dims = NetworkParams::dims(rc.num_angles, rc.num_depths, C, config.train.hidden);
  std::vector<SceneSpec> suite;
  if (config.eval_scenes > 0)
    suite = scene_suite(config.eval_scenes, config.seed ^ 0xE7A1ull, config.eval.sim.categories, config.eval.sim.max_objects);

  std::vector<CurveRow> rows;
  for (int size : config.sizes) {
    if (size < 1 || size > static_cast<int>(train.size()))
      throw Error(ErrorKind::Config, "learning_curve: size " + std::to_string(size) + " exceeds the train split");
    for (int r = 0; r < config.repeats; ++r) {
      CurveRow row;
      row.size = size;
      row.repeat = r;
      row.seed = config.seed + static_cast<std::uint64_t>(r);
      std::vector<Sample> subset;
      if (size == static_cast<int>(all.size())) {
        subset = all;
      } else {
        std::vector<std::size_t> idx(all.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(Rng::mix(row.seed ^ (static_cast<std::uint64_t>(size) << 20)));
        rng.shuffle(idx);
        for (int i = 0; i < size; ++i) subset.push_back(all[idx[i]]);
      }
      TrainConfig tc = config.train;
      tc.seed = row.seed;
      const TrainResult tr = mfgrasp::train(subset, dims, tc);
      row.final_loss = tr.history.empty() ? std::nan("") : tr.history.back().mean_loss;
      row.accuracy = classification_accuracy(tr.params, eval, rc.max_width, C);
      if (!suite.empty())
        row.success_rate = evaluate_policy(Policy::DecisionModel, &tr.params, suite, config.eval, taxonomy, hand).rate;
      rows.push_back(row);
      if (progress) progress(row);
    }
  }
  return rows;
}

std::string curve_to_csv(const std::vector<CurveRow>& rows) {
  std::string out = "size,repeat,seed,accuracy,success_rate,final_loss\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%d,%llu,%.17g,%.17g,%.17g\n", r.size, r.repeat,
                  static_cast<unsigned long long>(r.seed), r.accuracy, r.success_rate, r.final_loss);
    out += line;
  }
  return out;
}

std::vector<CurveRow> curve_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CurveRow> rows;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line.rfind("size,repeat", 0) != 0) throw Error(ErrorKind::Format, "curve CSV: unexpected header");
      continue;
    }
    if (line.empty()) continue;
    CurveRow r;
    unsigned long long seed = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%llu,%lf,%lf,%lf", &r.size, &r.repeat, &seed, &r.accuracy, &r.success_rate,
                    &r.final_loss) != 6)
      throw Error(ErrorKind::Format, "curve CSV line " + std::to_string(lineno) + ": expected 6 fields");
    r.seed = seed;
    rows.push_back(r);
  }
  return rows;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(ErrorKind::Precondition, "spearman: need two equal-length series");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

std::string fmt(double v) {
  char b[32];
  std::snprintf(b, sizeof(b), "%.2f", v);
  return b;
}

}  // namespace

std::string curve_svg(const std::vector<CurveRow>& rows, const std::string& metric) {
  if (metric != "accuracy" && metric != "success_rate")
    throw Error(ErrorKind::Config, "curve_svg: metric must be accuracy or success_rate");
  auto value = [&](const CurveRow& r) { return metric == "accuracy" ? r.accuracy : r.success_rate; };
  std::vector<int> sizes;
  int repeats = 0;
  for (const auto& r : rows) {
    if (std::find(sizes.begin(), sizes.end(), r.size) == sizes.end()) sizes.push_back(r.size);
    repeats = std::max(repeats, r.repeat + 1);
  }
  std::sort(sizes.begin(), sizes.end());
  const double W = 640, H = 400, L = 60, R = 20, T = 30, B = 50;
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, value(r));
    hi = std::max(hi, value(r));
  }
  if (rows.empty()) lo = 0.0, hi = 1.0;
  lo = std::max(0.0, lo - 0.05);
  hi = std::min(1.0, hi + 0.05);
  if (hi <= lo) hi = lo + 0.1;
  auto sx = [&](std::size_t i) { return L + (W - L - R) * (sizes.size() > 1 ? double(i) / (sizes.size() - 1) : 0.5); };
  auto sy = [&](double v) { return H - B - (H - T - B) * (v - lo) / (hi - lo); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << metric
    << " vs training size</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < sizes.size(); ++i)
    s << "<text x=\"" << sx(i) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">" << sizes[i]
      << "</text>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4;
    s << "<text x=\"" << L - 6 << "\" y=\"" << sy(v) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(v)
      << "</text>\n";
  }
  s << "<text x=\"" << W / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\" font-size=\"12\">training samples</text>\n";
  for (int rep = 0; rep < repeats; ++rep) {
    s << "<polyline fill=\"none\" stroke=\"" << kPalette[rep % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < sizes.size(); ++i)
      for (const auto& r : rows)
        if (r.size == sizes[i] && r.repeat == rep) s << sx(i) << "," << sy(value(r)) << " ";
    s << "\"/>\n";
    s << "<text x=\"" << W - R - 80 << "\" y=\"" << T + 14 * (rep + 1) << "\" font-size=\"11\" fill=\""
      << kPalette[rep % 6] << "\">repeat " << rep << "</text>\n";
  }
  s << "<polyline fill=\"none\" stroke=\"black\" stroke-dasharray=\"4 3\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    double sum = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.size == sizes[i]) sum += value(r), ++n;
    if (n > 0) s << sx(i) << "," << sy(sum / n) << " ";
  }
  s << "\"/>\n</svg>\n";
  return s.str();
}

std::string bar_svg(const std::vector<std::pair<std::string, double>>& bars, const std::string& title) {
  const double W = 640, H = 400, L = 60, R = 20, T = 30, B = 60;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  const double slot = bars.empty() ? 0.0 : (W - L - R) / bars.size();
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double v = std::clamp(bars[i].second, 0.0, 1.0);
    const double h = (H - T - B) * v;
    const double x = L + slot * i + 0.15 * slot;
    s << "<rect x=\"" << x << "\" y=\"" << H - B - h << "\" width=\"" << 0.7 * slot << "\" height=\"" << h
      << "\" fill=\"" << kPalette[i % 6] << "\"/>\n";
    s << "<text x=\"" << x + 0.35 * slot << "\" y=\"" << H - B - h - 4 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << fmt(bars[i].second) << "</text>\n";
    s << "<text x=\"" << x + 0.35 * slot << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << bars[i].first << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace mfgrasp
