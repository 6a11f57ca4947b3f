// Batch front end: scene-gen, collect, train, eval, plan, track, report, bench.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfgrasp/error.hpp"
#include "mfgrasp/mesh_io.hpp"
#include "mfgrasp/planner.hpp"
#include "mfgrasp/sim_lab.hpp"
#include "mfgrasp/tracker.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mfgrasp;
using cli::RunConfig;

namespace {

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out;
}

int report_error(const std::string& cmd, const std::string& kind, int code, const std::string& msg) {
  std::cerr << "error cmd=" << cmd << " kind=" << kind << " exit=" << code << " msg=\"" << escape(msg) << "\"\n";
  return code;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Artifacts go to a hidden sibling first and are renamed into place on commit.
class OutputDir {
 public:
  OutputDir(fs::path target, bool force) : target_(std::move(target)), force_(force) {
    if (target_.empty()) throw Error(ErrorKind::Config, "--out is required");
    if (fs::exists(target_) && !force_)
      throw Error(ErrorKind::Config, "output directory '" + target_.string() + "' exists (use --force)");
    const fs::path parent = target_.has_parent_path() ? target_.parent_path() : fs::path(".");
    std::error_code ec;
    fs::create_directories(parent, ec);
    staging_ = parent / ("." + target_.filename().string() + ".partial-" + std::to_string(::getpid()));
    fs::remove_all(staging_, ec);
    if (!fs::create_directories(staging_, ec) || ec)
      throw Error(ErrorKind::Io, "cannot create '" + staging_.string() + "'");
  }
  ~OutputDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  fs::path operator/(const std::string& name) const { return staging_ / name; }
  const fs::path& final_path() const { return target_; }

  void commit() {
    std::error_code ec;
    if (fs::exists(target_)) fs::remove_all(target_, ec);
    fs::rename(staging_, target_, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot move output into '" + target_.string() + "': " + ec.message());
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool force_ = false;
  bool committed_ = false;
};

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::string out;
  std::vector<std::string> sets;
  int verbose = 0;
  bool force = false;
  std::string hand_path;
  std::string taxonomy_path;
};

struct Run {
  std::string cmd;
  RunConfig cfg;
  json raw;  // merged config as given, before defaults
  HandModel hand;
  std::vector<GraspType> taxonomy;
  std::unique_ptr<OutputDir> out;

  void info(const std::string& msg) const {
    if (cfg.verbosity > 0) std::cerr << "info cmd=" << cmd << " msg=\"" << escape(msg) << "\"\n";
  }
  PlannerContext context(const NetworkParams* params) const { return {params, &taxonomy, &hand}; }
};

json read_json(const fs::path& path, ErrorKind kind) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(kind, path.string() + ": " + e.what());
  }
}

Run prepare(const std::string& cmd, const Common& common, const std::function<void(RunConfig&)>& flags,
            bool needs_out = true) {
  Run run;
  run.cmd = cmd;
  json j = json::object();
  if (!common.config_path.empty()) j = read_json(common.config_path, ErrorKind::Config);
  if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  for (const auto& s : common.sets) cli::apply_override(j, s);
  if (common.seed) j["seed"] = *common.seed;
  if (common.threads) j["threads"] = *common.threads;
  if (common.verbose > 0) j["verbosity"] = common.verbose;
  run.raw = j;
  run.cfg = cli::run_config_from_json(j);
  flags(run.cfg);
  run.cfg.derive();
  run.cfg.validate();

  run.hand = common.hand_path.empty() ? HandModel{} : hand_from_json(read_json(common.hand_path, ErrorKind::Config));
  run.hand.validate();
  run.taxonomy = common.taxonomy_path.empty()
                     ? builtin_taxonomy()
                     : taxonomy_from_json(read_json(common.taxonomy_path, ErrorKind::Config), run.hand);

  if (needs_out) {
    run.out = std::make_unique<OutputDir>(common.out, common.force);
    json echo = cli::to_json(run.cfg);
    write_file(*run.out / "config.json", echo.dump(2) + "\n");
    write_file(*run.out / "hand.json", to_json(run.hand).dump(2) + "\n");
    write_file(*run.out / "taxonomy.json", taxonomy_to_json(run.taxonomy).dump(2) + "\n");
  }
  return run;
}

NetworkParams load_checked_weights(const fs::path& path, const RunConfig& cfg, std::size_t types) {
  NetworkParams p = load_weights(path);
  const RepConfig& rc = cfg.sim.rep;
  const auto cells = static_cast<Eigen::Index>(rc.num_angles * rc.num_depths);
  if (p.input_size() != 2 * cells || p.output_size() != cells * static_cast<Eigen::Index>(types))
    throw Error(ErrorKind::Config, "weights do not match the representation grid and taxonomy size");
  return p;
}

Scene load_scene(const fs::path& path) { return scene_from_json(read_json(path, ErrorKind::Format), path.parent_path()); }

PointCloud cloud_from_ply(const fs::path& path, const Scene& scene) {
  PointCloud cloud;
  for (const auto& p : read_points_ply(path)) cloud.points.push_back({p.position, p.normal});
  cloud.reliable.assign(cloud.points.size(), 1);
  const SceneIndex index(scene);
  label_cloud(index, cloud);
  return cloud;
}

std::vector<OrientedPoint> oriented(const PointCloud& cloud) {
  std::vector<OrientedPoint> out;
  out.reserve(cloud.size());
  for (const auto& p : cloud.points) out.push_back({p.position, p.normal});
  return out;
}

json transform_json(const RigidTransform& t) {
  std::vector<double> r;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r.push_back(t.rotation()(a, b));
  return {{"R", r}, {"t", {t.translation().x(), t.translation().y(), t.translation().z()}}};
}

RigidTransform transform_from_json(const json& j) {
  const auto r = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw Error(ErrorKind::Format, "transform needs R[9] and t[3]");
  Mat3 m;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) m(a, b) = r[a * 3 + b];
  if (!RigidTransform::is_rotation(m, 1e-6)) throw Error(ErrorKind::Format, "transform R is not a rotation");
  // Re-orthonormalise float noise from hand-written files.
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return {svd.matrixU() * svd.matrixV().transpose(), Vec3(t[0], t[1], t[2])};
}

// ---- commands ---------------------------------------------------------------

int cmd_scene_gen(Run& run) {
  const auto& sc = run.cfg.scenes;
  const auto specs = scene_suite(sc.count, run.cfg.seed, sc.categories, sc.max_objects);
  const fs::path dir = *run.out / "scenes";
  fs::create_directories(dir / "meshes");
  json index = json::array();
  for (const auto& spec : specs) {
    Scene scene = make_category_scene(spec);
    for (std::size_t k = 0; k < scene.objects.size(); ++k) {
      auto& model = scene.objects[k].model;
      model.mesh_path = "meshes/" + scene.id + "-" + std::to_string(k) + ".obj";
      model.scale = 1.0;
      write_mesh_obj(dir / model.mesh_path, model.mesh);
    }
    write_file(dir / (scene.id + ".json"), scene_to_json(scene).dump(2) + "\n");
    const PointCloud cloud = sample_point_cloud(scene, overhead_camera(scene.plane_height));
    write_points_ply(dir / (scene.id + ".ply"), oriented(cloud));
    index.push_back({{"id", scene.id},
                     {"category", spec.category},
                     {"objects", scene.objects.size()},
                     {"seed", spec.seed},
                     {"scene", scene.id + ".json"},
                     {"cloud", scene.id + ".ply"},
                     {"points", cloud.size()}});
    run.info("wrote scene " + scene.id);
  }
  write_file(dir / "index.json", index.dump(2) + "\n");
  run.out->commit();
  std::cout << "scenes=" << specs.size() << " out=" << run.out->final_path().string() << "\n";
  return 0;
}

int cmd_collect(Run& run) {
  const int n = run.cfg.collect.n;
  const Dataset ds = collect_trials(n, run.cfg.seed, run.cfg.sim, run.taxonomy, run.hand, [&](int done) {
    if (done % 500 == 0) run.info("collected " + std::to_string(done) + "/" + std::to_string(n));
  });
  write_dataset(*run.out / "trials.jsonl", ds);
  int successes = 0;
  std::map<std::string, int> reasons;
  std::map<std::string, std::pair<int, int>> types;
  for (const auto& r : ds.records) {
    successes += r.q;
    ++reasons[r.reason];
  }
  const double rate = ds.records.empty() ? 0.0 : static_cast<double>(successes) / ds.records.size();
  json summary = {{"trials", ds.records.size()},
                  {"successes", successes},
                  {"success_rate", rate},
                  {"skipped_scenes", ds.skipped_scenes},
                  {"reasons", reasons}};
  write_file(*run.out / "summary.json", summary.dump(2) + "\n");
  run.out->commit();
  std::printf("trials=%zu success_rate=%.4f skipped_scenes=%d\n", ds.records.size(), rate, ds.skipped_scenes);
  return 0;
}

struct SplitData {
  std::vector<TrialRecord> train, eval;
  RepConfig rep;
};

SplitData load_split(const fs::path& path, const RunConfig& cfg) {
  const Dataset ds = read_dataset(path);
  SplitData s;
  s.rep = ds.header.contains("sim") ? rep_config_from_json(ds.header["sim"]["rep"]) : RepConfig{};
  if (to_json(s.rep) != to_json(cfg.sim.rep))
    throw Error(ErrorKind::Config, "dataset representation settings differ from the run config");
  std::tie(s.train, s.eval) = split_dataset(ds.records, cfg.eval.holdout, cfg.seed);
  return s;
}

int cmd_train(Run& run, const std::string& data, bool curve) {
  const SplitData split = load_split(data, run.cfg);
  const RepConfig& rc = split.rep;
  const int C = static_cast<int>(run.taxonomy.size());
  const auto dims = NetworkParams::dims(rc.num_angles, rc.num_depths, C, run.cfg.train.hidden);
  run.info("training on " + std::to_string(split.train.size()) + " records");
  const TrainResult tr = train(to_samples(split.train, rc.max_width, C), dims, run.cfg.train);
  save_weights(*run.out / "weights.bin", tr.params);
  write_loss_history(*run.out / "loss.csv", tr.history);
  const double acc = classification_accuracy(tr.params, split.eval, rc.max_width, C);
  const double train_acc = classification_accuracy(tr.params, split.train, rc.max_width, C);
  json metrics = {{"train_size", split.train.size()},
                  {"eval_size", split.eval.size()},
                  {"eval_accuracy", acc},
                  {"train_accuracy", train_acc},
                  {"final_loss", tr.history.empty() ? 0.0 : tr.history.back().mean_loss},
                  {"diverged", tr.diverged}};

  if (curve) {
    CurveConfig cc;
    cc.sizes = run.cfg.curve.sizes;
    cc.repeats = run.cfg.curve.repeats;
    cc.seed = run.cfg.seed;
    cc.train = run.cfg.train;
    cc.eval_scenes = run.cfg.curve.eval_scenes;
    cc.eval.planner = run.cfg.eval.planner;
    cc.eval.sim = run.cfg.sim;
    cc.eval.policy_seed = run.cfg.eval.policy_seed;
    const auto rows = learning_curve(split.train, split.eval, cc, run.taxonomy, run.hand, [&](const CurveRow& r) {
      run.info("curve size=" + std::to_string(r.size) + " repeat=" + std::to_string(r.repeat) +
               " accuracy=" + std::to_string(r.accuracy));
    });
    write_file(*run.out / "curve.csv", curve_to_csv(rows));
    write_file(*run.out / "curve_accuracy.svg", curve_svg(rows, "accuracy"));
    if (cc.eval_scenes > 0) write_file(*run.out / "curve_success.svg", curve_svg(rows, "success_rate"));
    std::map<int, std::pair<double, int>> sums;
    for (const auto& r : rows) {
      sums[r.size].first += r.accuracy;
      ++sums[r.size].second;
    }
    std::vector<double> sizes, means;
    for (const auto& [size, s] : sums) {
      sizes.push_back(size);
      means.push_back(s.first / s.second);
    }
    metrics["curve_spearman"] = sizes.size() > 1 ? spearman(sizes, means) : 0.0;
    metrics["curve_mean_accuracy"] = means;
  }
  write_file(*run.out / "metrics.json", metrics.dump(2) + "\n");
  run.out->commit();
  std::printf("train_size=%zu eval_size=%zu eval_accuracy=%.4f diverged=%d\n", split.train.size(), split.eval.size(), acc,
              tr.diverged ? 1 : 0);
  if (tr.diverged) return report_error(run.cmd, "diverged", 1, "loss went non-finite; weights are the last finite checkpoint");
  return 0;
}

int cmd_eval(Run& run, const std::string& weights, const std::string& data) {
  std::vector<Policy> policies;
  for (const auto& p : run.cfg.eval.policies) policies.push_back(cli::policy_from_string(p));
  std::optional<NetworkParams> params;
  const bool needs_model = std::find(policies.begin(), policies.end(), Policy::DecisionModel) != policies.end();
  if (needs_model || !data.empty()) {
    if (weights.empty()) throw Error(ErrorKind::Config, "--weights is required for the decision policy and --data");
    params = load_checked_weights(weights, run.cfg, run.taxonomy.size());
  }
  json report = json::object();
  if (!data.empty()) {
    const SplitData split = load_split(data, run.cfg);
    const double acc =
        classification_accuracy(*params, split.eval, split.rep.max_width, static_cast<int>(run.taxonomy.size()));
    report["eval_accuracy"] = acc;
    report["eval_size"] = split.eval.size();
    std::printf("eval_accuracy=%.4f eval_size=%zu\n", acc, split.eval.size());
  }
  const auto scenes = scene_suite(run.cfg.eval.scenes, cli::eval_scene_seed(run.cfg.seed), run.cfg.eval.categories,
                                  run.cfg.scenes.max_objects);
  EvalConfig ec;
  ec.planner = run.cfg.eval.planner;
  ec.sim = run.cfg.sim;
  ec.policy_seed = run.cfg.eval.policy_seed;
  std::string csv = "policy,successes,trials,success_rate,ci_low,ci_high,no_grasp\n";
  std::vector<std::pair<std::string, double>> bars;
  json per_policy = json::object();
  for (std::size_t i = 0; i < policies.size(); ++i) {
    run.info(std::string("evaluating ") + to_string(policies[i]));
    const EvalResult r = evaluate_policy(policies[i], params ? &*params : nullptr, scenes, ec, run.taxonomy, run.hand);
    const std::string& name = run.cfg.eval.policies[i];
    per_policy[name] = to_json(r);
    char line[256];
    std::snprintf(line, sizeof line, "%s,%d,%d,%.6f,%.6f,%.6f,%d\n", name.c_str(), r.successes, r.trials, r.rate, r.ci_low,
                  r.ci_high, r.no_grasp);
    csv += line;
    bars.emplace_back(name, r.rate);
    std::printf("policy=%s success_rate=%.4f ci=[%.4f,%.4f] trials=%d\n", name.c_str(), r.rate, r.ci_low, r.ci_high,
                r.trials);
  }
  report["policies"] = per_policy;
  report["scenes"] = scenes.size();
  write_file(*run.out / "eval.json", report.dump(2) + "\n");
  write_file(*run.out / "eval.csv", csv);
  write_file(*run.out / "eval.svg", bar_svg(bars, "simulated grasp success"));
  run.out->commit();
  return 0;
}

int cmd_plan(Run& run, const std::string& scene_path, const std::string& cloud_path, const std::string& weights) {
  if (scene_path.empty() || weights.empty()) throw Error(ErrorKind::Config, "plan needs --scene and --weights");
  const NetworkParams params = load_checked_weights(weights, run.cfg, run.taxonomy.size());
  const Scene scene = load_scene(scene_path);
  const PointCloud cloud = cloud_path.empty() ? sample_point_cloud(scene, overhead_camera(scene.plane_height))
                                              : cloud_from_ply(cloud_path, scene);
  try {
    const PlanResult res = plan_grasp(scene, cloud, run.context(&params), run.cfg.planner);
    const auto& g = res.selection.candidate.grasp;
    json out = plan_to_json(res.selection, run.taxonomy[static_cast<std::size_t>(g.type_id)]);
    out["times"] = {{"representation_s", res.times.rep_seconds},
                    {"decision_s", res.times.decision_seconds},
                    {"collision_s", res.times.collision_seconds}};
    out["candidates"] = res.candidates.items.size();
    write_file(*run.out / "plan.json", out.dump(2) + "\n");
    run.out->commit();
    std::printf("type=%s quality=%.4f below_gate=%d t=[%.4f,%.4f,%.4f]\n",
                run.taxonomy[static_cast<std::size_t>(g.type_id)].label.c_str(), res.selection.candidate.quality,
                res.selection.below_gate ? 1 : 0, g.translation.x(), g.translation.y(), g.translation.z());
    return 0;
  } catch (const Error& e) {
    if (is_usage_error(e.kind())) throw;
    write_file(*run.out / "plan.json", json({{"schema", "mfgrasp.plan"}, {"error", to_string(e.kind())}}).dump(2) + "\n");
    run.out->commit();
    return report_error(run.cmd, to_string(e.kind()), 1, e.what());
  }
}

struct Sequence {
  std::vector<RigidTransform> transforms;  // frame i scene = transforms[i] applied to the base scene
  std::vector<PointCloud> clouds;
};

Sequence scripted_sequence(const Scene& scene, const std::string& motion, int frames, double step, double yaw_deg) {
  if (motion != "translate" && motion != "rotate" && motion != "combined")
    throw Error(ErrorKind::Config, "--motion must be translate, rotate or combined");
  if (frames < 1) throw Error(ErrorKind::Config, "--frames must be >= 1");
  const SceneIndex index(scene);
  const PointCloud base = sample_point_cloud(index, overhead_camera(scene.plane_height));
  Aabb box = index.bounds();
  const Vec3 pivot0 = box.empty() ? Vec3::Zero() : Vec3(0.5 * (box.min + box.max));
  Sequence seq;
  RigidTransform t;
  const double yaw = yaw_deg * std::numbers::pi / 180.0;
  for (int i = 0; i <= frames; ++i) {
    if (i > 0) {
      const Vec3 pivot = t.apply(pivot0);
      RigidTransform s;
      if (motion == "translate") s = RigidTransform::translation(Vec3(step, 0.0, 0.0));
      else if (motion == "rotate") s = RigidTransform::about_axis(pivot, Vec3::UnitZ(), yaw);
      else s = RigidTransform::translation(Vec3(0.6 * step, 0.8 * step, 0.0)) * RigidTransform::about_axis(pivot, Vec3::UnitZ(), yaw);
      t = s * t;
    }
    seq.transforms.push_back(t);
    seq.clouds.push_back(base.transformed(t));
  }
  return seq;
}

int cmd_track(Run& run, const std::string& scene_path, const std::string& weights, const std::string& sequence_dir,
              const std::string& motion, int frames, double step, double yaw_deg) {
  if (scene_path.empty() || weights.empty()) throw Error(ErrorKind::Config, "track needs --scene and --weights");
  const NetworkParams params = load_checked_weights(weights, run.cfg, run.taxonomy.size());
  const Scene scene = load_scene(scene_path);
  Sequence seq;
  if (sequence_dir.empty()) {
    seq = scripted_sequence(scene, motion, frames, step, yaw_deg);
    const fs::path dir = *run.out / "sequence";
    fs::create_directories(dir);
    json list = json::array();
    for (std::size_t i = 0; i < seq.clouds.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03zu.ply", i);
      write_points_ply(dir / name, oriented(seq.clouds[i]));
      list.push_back({{"cloud", name}, {"transform", transform_json(seq.transforms[i])}});
    }
    write_file(dir / "transforms.json", json({{"schema", "mfgrasp.sequence"}, {"version", 1}, {"frames", list}}).dump(2) + "\n");
  } else {
    const fs::path dir(sequence_dir);
    const json j = read_json(dir / "transforms.json", ErrorKind::Format);
    try {
      if (j.at("schema") != "mfgrasp.sequence" || j.at("version") != 1)
        throw Error(ErrorKind::Format, "sequence: unsupported schema or version");
      for (const auto& f : j.at("frames")) {
        seq.transforms.push_back(transform_from_json(f.at("transform")));
        seq.clouds.push_back(cloud_from_ply(dir / f.at("cloud").get<std::string>(), scene.transformed(seq.transforms.back())));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, std::string("sequence: ") + e.what());
    }
    if (seq.clouds.empty()) throw Error(ErrorKind::Format, "sequence has no frames");
  }

  const PlannerContext ctx = run.context(&params);
  std::string log = track_log_header() + ",err_t,err_deg\n";
  auto row = [&](const TrackState& s, const MultiFingerGrasp& truth) {
    char extra[64];
    std::snprintf(extra, sizeof extra, ",%.9g,%.9g", (s.grasp.translation - truth.translation).norm(),
                  rotation_distance(s.grasp.rotation, truth.rotation) * 180.0 / std::numbers::pi);
    log += track_log_row(s) + extra + "\n";
  };
  int status = 0;
  int lost_frames = 0;
  double max_err_t = 0.0, max_err_deg = 0.0;
  TrackState state;
  try {
    state = init_track({scene.transformed(seq.transforms[0]), seq.clouds[0]}, ctx, run.cfg.planner, run.cfg.track);
    const MultiFingerGrasp initial = state.grasp.transformed(seq.transforms[0].inverse());
    row(state, state.grasp);
    for (std::size_t i = 1; i < seq.clouds.size(); ++i) {
      state = step_track(state, seq.clouds[i - 1], {scene.transformed(seq.transforms[i]), seq.clouds[i]}, ctx,
                         run.cfg.planner, run.cfg.track);
      const MultiFingerGrasp truth = initial.transformed(seq.transforms[i]);
      row(state, truth);
      if (state.lost_this_frame) {
        ++lost_frames;
      } else {
        max_err_t = std::max(max_err_t, (state.grasp.translation - truth.translation).norm());
        max_err_deg = std::max(max_err_deg, rotation_distance(state.grasp.rotation, truth.rotation) * 180.0 / std::numbers::pi);
      }
      if (state.terminated) break;
    }
  } catch (const Error& e) {
    if (is_usage_error(e.kind())) throw;
    status = report_error(run.cmd, to_string(e.kind()), 1, e.what());
  }
  write_file(*run.out / "track.csv", log);
  json summary = {{"frames", seq.clouds.size()},
                  {"processed", state.frame_index + 1},
                  {"lost_frames", lost_frames},
                  {"terminated", state.terminated},
                  {"max_error_m", max_err_t},
                  {"max_error_deg", max_err_deg}};
  write_file(*run.out / "summary.json", summary.dump(2) + "\n");
  run.out->commit();
  std::printf("frames=%zu lost=%d terminated=%d max_error_m=%.6f max_error_deg=%.4f\n", seq.clouds.size(), lost_frames,
              state.terminated ? 1 : 0, max_err_t, max_err_deg);
  if (status == 0 && state.terminated)
    status = report_error(run.cmd, "lost_track", 1,
                          "track lost for " + std::to_string(run.cfg.track.max_lost) + " consecutive frames at frame " +
                              std::to_string(state.frame_index));
  return status;
}

int cmd_report(Run& run, const std::string& curve_path, const std::string& eval_path) {
  if (curve_path.empty() && eval_path.empty()) throw Error(ErrorKind::Config, "report needs --curve and/or --eval");
  json summary = json::object();
  if (!curve_path.empty()) {
    const auto rows = curve_from_csv(read_file(curve_path));
    if (rows.empty()) throw Error(ErrorKind::Format, "curve CSV has no rows");
    write_file(*run.out / "curve_accuracy.svg", curve_svg(rows, "accuracy"));
    bool has_success = false;
    for (const auto& r : rows) has_success |= r.success_rate >= 0.0;
    if (has_success) write_file(*run.out / "curve_success.svg", curve_svg(rows, "success_rate"));
    std::map<int, std::pair<double, int>> sums;
    for (const auto& r : rows) {
      sums[r.size].first += r.accuracy;
      ++sums[r.size].second;
    }
    std::vector<double> sizes, means;
    json table = json::array();
    for (const auto& [size, s] : sums) {
      sizes.push_back(size);
      means.push_back(s.first / s.second);
      table.push_back({{"size", size}, {"mean_accuracy", means.back()}, {"repeats", s.second}});
    }
    const double rho = sizes.size() > 1 ? spearman(sizes, means) : 0.0;
    summary["curve"] = table;
    summary["spearman"] = rho;
    std::printf("curve_sizes=%zu spearman=%.4f\n", sizes.size(), rho);
  }
  if (!eval_path.empty()) {
    const json ev = read_json(eval_path, ErrorKind::Format);
    std::vector<std::pair<std::string, double>> bars;
    try {
      for (const auto& [name, r] : ev.at("policies").items()) bars.emplace_back(name, r.at("rate").get<double>());
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, std::string("eval report: ") + e.what());
    }
    write_file(*run.out / "policies.svg", bar_svg(bars, "simulated grasp success"));
    summary["policies"] = ev.at("policies");
  }
  write_file(*run.out / "report.json", summary.dump(2) + "\n");
  run.out->commit();
  return 0;
}

int cmd_bench(Run& run, const std::string& weights, bool include_empty) {
  const RepConfig& rc = run.cfg.sim.rep;
  const int C = static_cast<int>(run.taxonomy.size());
  const NetworkParams params = weights.empty()
                                   ? NetworkParams::random(NetworkParams::dims(rc.num_angles, rc.num_depths, C, run.cfg.train.hidden), run.cfg.seed)
                                   : load_checked_weights(weights, run.cfg, run.taxonomy.size());
  if (weights.empty()) run.info("no --weights given; timing a randomly initialised network");
  const PlannerContext ctx = run.context(&params);
  PlannerConfig pc = run.cfg.planner;
  pc.top_k = std::max(pc.top_k, run.cfg.bench.candidates);

  std::vector<Scene> scenes;
  if (include_empty) {
    Scene empty;
    empty.id = "empty";
    scenes.push_back(empty);
  }
  for (const auto& spec : scene_suite(run.cfg.bench.scenes, cli::eval_scene_seed(run.cfg.seed) + 1, run.cfg.eval.categories,
                                      run.cfg.scenes.max_objects))
    scenes.push_back(make_category_scene(spec));

  std::string csv = "scene,points,frames,candidates,rep_s,decision_s,decision_batch_s,collision_s,collision_checked\n";
  std::printf("%-28s %8s %7s %10s %10s %12s %12s %12s\n", "scene", "points", "frames", "candidates", "rep_s", "decision_s",
              "dm_batch_s", "collision_s");
  for (const Scene& scene : scenes) {
    const SceneIndex index(scene);
    const PointCloud cloud = sample_point_cloud(index, overhead_camera(scene.plane_height));
    const FrameSample frames = sample_grasp_points(cloud, pc.num_grasp_points, pc.seed);
    PhaseTimes times;
    const CandidateSet set = generate_candidates(index, frames, ctx, pc, &times);

    // Forward passes for the distinct frames behind the top candidates only.
    std::vector<int> sources;
    const std::size_t want = std::min<std::size_t>(set.items.size(), static_cast<std::size_t>(run.cfg.bench.candidates));
    for (std::size_t i = 0; i < want; ++i)
      if (std::find(sources.begin(), sources.end(), set.items[i].source) == sources.end())
        sources.push_back(set.items[i].source);
    double dm_batch = 0.0;
    if (!sources.empty()) {
      MatX inputs(params.input_size(), static_cast<Eigen::Index>(sources.size()));
      for (std::size_t k = 0; k < sources.size(); ++k)
        inputs.col(static_cast<Eigen::Index>(k)) = encode_rep(set.reps[static_cast<std::size_t>(sources[k])], rc.max_width);
      const auto t0 = std::chrono::steady_clock::now();
      const MatX scores = forward(params, inputs);
      dm_batch = seconds_since(t0);
      if (!scores.allFinite()) run.info("non-finite scores in bench");
    }
    std::vector<MultiFingerGrasp> grasps;
    for (std::size_t i = 0; i < want; ++i) grasps.push_back(set.items[i].grasp);
    const auto pts = positions(cloud);
    const auto t0 = std::chrono::steady_clock::now();
    const auto kept = batch_filter(grasps, run.taxonomy, run.hand, pts, pc.collision);
    const double collision = seconds_since(t0);
    char line[320];
    std::snprintf(line, sizeof line, "%s,%zu,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%zu\n", scene.id.c_str(), cloud.size(),
                  frames.frames.size(), want, times.rep_seconds, times.decision_seconds, dm_batch, collision, grasps.size());
    csv += line;
    std::printf("%-28s %8zu %7zu %10zu %10.4f %12.5f %12.5f %12.4f\n", scene.id.c_str(), cloud.size(), frames.frames.size(),
                want, times.rep_seconds, times.decision_seconds, dm_batch, collision);
    (void)kept;
  }
  std::printf("reference (published hardware): representation 0.2 s, decision 0.01 s, collision 19 s\n");
  write_file(*run.out / "bench.csv", csv);
  run.out->commit();
  return 0;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "JSON run config")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--threads", c.threads, "Worker cap")->check(CLI::PositiveNumber);
  sub->add_option("-o,--out", c.out, "Output directory (created atomically)");
  sub->add_option("--set", c.sets, "Config override key.path=json")->take_all();
  sub->add_flag("-v,--verbose", c.verbose, "Progress on stderr");
  sub->add_flag("--force", c.force, "Replace an existing output directory");
  sub->add_option("--hand", c.hand_path, "Hand model JSON")->check(CLI::ExistingFile);
  sub->add_option("--taxonomy", c.taxonomy_path, "Grasp taxonomy JSON")->check(CLI::ExistingFile);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mfgrasp: multi-finger grasp planning toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* scene_gen = app.add_subcommand("scene-gen", "Generate seeded scenes (JSON, OBJ meshes, PLY clouds)");
  std::optional<int> scene_count;
  std::vector<std::string> scene_cats;
  scene_gen->add_option("--count", scene_count, "Number of scenes");
  scene_gen->add_option("--categories", scene_cats, "Scene categories");

  auto* collect = app.add_subcommand("collect", "Simulated random-type trial collection (JSONL)");
  std::optional<int> collect_n;
  collect->add_option("-n,--n", collect_n, "Number of trials");

  auto* train_cmd = app.add_subcommand("train", "Train the decision network");
  std::string data_path;
  std::optional<int> epochs;
  bool with_curve = false;
  train_cmd->add_option("--data", data_path, "Trials JSONL")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--epochs", epochs, "Training epochs");
  train_cmd->add_flag("--curve", with_curve, "Also run the learning curve");

  auto* eval_cmd = app.add_subcommand("eval", "Classification accuracy and simulated policy success");
  std::string weights_path;
  std::string eval_data;
  std::optional<int> eval_scenes;
  std::vector<std::string> eval_policies, eval_cats;
  eval_cmd->add_option("--weights", weights_path, "Decision network weights")->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_data, "Trials JSONL for held-out accuracy")->check(CLI::ExistingFile);
  eval_cmd->add_option("--scenes", eval_scenes, "Fresh simulated scenes");
  eval_cmd->add_option("--policy", eval_policies, "decision, random, two-finger");
  eval_cmd->add_option("--categories", eval_cats, "Scene categories");

  auto* plan_cmd = app.add_subcommand("plan", "Plan one grasp for a scene");
  std::string scene_path, cloud_path;
  plan_cmd->add_option("--scene", scene_path, "Scene descriptor JSON")->required()->check(CLI::ExistingFile);
  plan_cmd->add_option("--cloud", cloud_path, "Point cloud PLY (rendered from the scene if absent)")->check(CLI::ExistingFile);
  plan_cmd->add_option("--weights", weights_path, "Decision network weights")->required()->check(CLI::ExistingFile);

  auto* track_cmd = app.add_subcommand("track", "Track a grasp over a frame sequence");
  std::string sequence_dir, motion = "translate";
  int frames = 50;
  double step = 0.01, yaw = 3.0;
  std::optional<double> alpha;
  track_cmd->add_option("--scene", scene_path, "Scene descriptor JSON for frame 0")->required()->check(CLI::ExistingFile);
  track_cmd->add_option("--weights", weights_path, "Decision network weights")->required()->check(CLI::ExistingFile);
  track_cmd->add_option("--sequence", sequence_dir, "Directory with transforms.json and PLY clouds")->check(CLI::ExistingDirectory);
  track_cmd->add_option("--motion", motion, "Scripted motion: translate, rotate, combined");
  track_cmd->add_option("--frames", frames, "Scripted frames after the first");
  track_cmd->add_option("--step", step, "Scripted translation per frame, m");
  track_cmd->add_option("--yaw", yaw, "Scripted yaw per frame, degrees");
  track_cmd->add_option("--alpha", alpha, "Smoothing factor");

  auto* report_cmd = app.add_subcommand("report", "Render learning-curve and policy plots");
  std::string curve_path, eval_path;
  report_cmd->add_option("--curve", curve_path, "Learning-curve CSV")->check(CLI::ExistingFile);
  report_cmd->add_option("--eval", eval_path, "eval.json from the eval command")->check(CLI::ExistingFile);

  auto* bench_cmd = app.add_subcommand("bench", "Per-phase timing table");
  bool bench_empty = false;
  std::optional<int> bench_scenes;
  bench_cmd->add_option("--weights", weights_path, "Decision network weights")->check(CLI::ExistingFile);
  bench_cmd->add_option("--scenes", bench_scenes, "Number of scenes");
  bench_cmd->add_flag("--empty", bench_empty, "Include an empty scene");

  for (auto* sub : {scene_gen, collect, train_cmd, eval_cmd, plan_cmd, track_cmd, report_cmd, bench_cmd})
    add_common(sub, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string cmd = "mfgrasp";
    for (auto* sub : app.get_subcommands()) cmd = sub->get_name();
    return report_error(cmd, "usage", 2, e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string cmd = sub->get_name();
  try {
    if (cmd == "scene-gen") {
      Run run = prepare(cmd, common, [&](RunConfig& c) {
        if (scene_count) c.scenes.count = *scene_count;
        if (!scene_cats.empty()) c.scenes.categories = scene_cats;
      });
      return cmd_scene_gen(run);
    }
    if (cmd == "collect") {
      Run run = prepare(cmd, common, [&](RunConfig& c) {
        if (collect_n) c.collect.n = *collect_n;
      });
      return cmd_collect(run);
    }
    if (cmd == "train") {
      Run run = prepare(cmd, common, [&](RunConfig& c) {
        if (epochs) c.train.epochs = *epochs;
      });
      return cmd_train(run, data_path, with_curve);
    }
    if (cmd == "eval") {
      Run run = prepare(cmd, common, [&](RunConfig& c) {
        if (eval_scenes) c.eval.scenes = *eval_scenes;
        if (!eval_policies.empty()) c.eval.policies = eval_policies;
        if (!eval_cats.empty()) c.eval.categories = eval_cats;
      });
      return cmd_eval(run, weights_path, eval_data);
    }
    if (cmd == "plan") {
      Run run = prepare(cmd, common, [](RunConfig&) {});
      return cmd_plan(run, scene_path, cloud_path, weights_path);
    }
    if (cmd == "track") {
      Run run = prepare(cmd, common, [&](RunConfig& c) {
        if (alpha) c.track.alpha = *alpha;
      });
      return cmd_track(run, scene_path, weights_path, sequence_dir, motion, frames, step, yaw);
    }
    if (cmd == "report") {
      Run run = prepare(cmd, common, [](RunConfig&) {});
      return cmd_report(run, curve_path, eval_path);
    }
    if (cmd == "bench") {
      Run run = prepare(cmd, common, [&](RunConfig& c) {
        if (bench_scenes) c.bench.scenes = *bench_scenes;
      });
      return cmd_bench(run, weights_path, bench_empty);
    }
    return report_error(cmd, "usage", 2, "unknown subcommand");
  } catch (const Error& e) {
    return report_error(cmd, to_string(e.kind()), is_usage_error(e.kind()) ? 2 : 1, e.what());
  } catch (const json::exception& e) {
    return report_error(cmd, "config", 2, e.what());
  } catch (const std::exception& e) {
    return report_error(cmd, "internal", 1, e.what());
  }
}
