#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgrasp/antipodal.hpp"
#include "mfgrasp/decision_net.hpp"
#include "mfgrasp/hand.hpp"
#include "mfgrasp/planner.hpp"
#include "mfgrasp/scene.hpp"

namespace mfgrasp {

// ---- force closure ---------------------------------------------------------

using Wrench = Eigen::Matrix<double, 6, 1>;

/// True when `target` is a convex combination of `points` (dense simplex,
/// phase one, Bland's rule). Points may be any dimension.
bool in_convex_hull(const std::vector<VecX>& points, const VecX& target, double tol = 1e-9);

struct Contact {
  Vec3 position;
  Vec3 normal;  // outward surface normal of the grasped object
  int object = -1;
  int finger = 0;
};

struct OracleConfig {
  double mu = 0.4;
  double max_travel = 0.06;         // per finger, m
  double contact_tolerance = 0.002; // rays start this far behind the pad
  double margin = 0.03;             // required force-closure margin in normalised wrench space
  double pad_radius = 0.006;        // torsional friction lever, m
  double torque_scale = 0.05;       // m, divides moments
  int cone_edges = 8;
  double lift_clearance = 0.001;    // m

  void validate() const;
};

nlohmann::json to_json(const OracleConfig& c);
OracleConfig oracle_config_from_json(const nlohmann::json& j, OracleConfig base = {});

/// Primitive contact wrenches: `cone_edges` friction-cone edges per contact
/// plus two torsional primitives, about `center`.
std::vector<Wrench> contact_wrenches(const std::vector<Contact>& contacts, const Vec3& center, const OracleConfig& c);

/// Origin interior with the configured margin: every point +-margin*e_k lies
/// in the hull of the primitive wrenches.
bool force_closure(const std::vector<Contact>& contacts, const Vec3& center, const OracleConfig& c);

// ---- grasp outcome oracle --------------------------------------------------

enum class Outcome {
  Success,
  NoContact,
  OneSided,
  ForeignContact,
  Penetration,
  NoForceClosure,
  LiftBlocked,
};

const char* to_string(Outcome o);

struct TrialOutcome {
  int q = 0;
  Outcome reason = Outcome::NoContact;
  int target = -1;
  std::vector<Contact> contacts;
};

/// Closes each engaged finger along the closing axis until contact or the
/// travel limit, then tests contacts, force closure and lift.
TrialOutcome simulate_grasp_outcome(const SceneIndex& scene, const MultiFingerGrasp& grasp, const GraspType& type,
                                    const HandModel& hand, const OracleConfig& oracle);

// ---- scene categories ------------------------------------------------------

const std::vector<std::string>& category_names();
/// Primitive library for a category, sizes drawn from `seed`.
std::vector<ObjectModel> category_library(const std::string& category, std::uint64_t seed);

struct SceneSpec {
  std::string category;
  int objects = 0;
  std::uint64_t seed = 0;
};

/// Deterministic scene for a spec; retries with derived seeds when placement fails.
Scene make_category_scene(const SceneSpec& spec);

/// Seeded specs cycling through `categories` with 2..max_objects objects.
std::vector<SceneSpec> scene_suite(int count, std::uint64_t seed, const std::vector<std::string>& categories,
                                   int max_objects = 6);

// ---- datasets ----------------------------------------------------------------

struct TrialRecord {
  std::string scene_id;
  std::string category;
  RepGrid rep;
  Cell cell;
  int type_id = 0;
  int q = 0;
  std::string reason;
  MultiFingerGrasp grasp;
  std::uint64_t timestamp = 0;  // logical sequence number
};

struct SimConfig {
  RepConfig rep;
  OracleConfig oracle;
  CollisionConfig collision;
  double clearance = 0.01;
  int frames_per_scene = 48;  // grasp points sampled per scene during collection
  int max_objects = 6;
  std::vector<std::string> categories = category_names();

  void validate() const;
};

nlohmann::json to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig base = {});

struct Dataset {
  nlohmann::json header;
  std::vector<TrialRecord> records;
  int skipped_scenes = 0;
};

/// Random-type data collection: per scene, each frame's best antipodal cell
/// gets a uniformly drawn type; the highest-scoring collision-free one is
/// executed.
Dataset collect_trials(int n, std::uint64_t seed, const SimConfig& config, const std::vector<GraspType>& taxonomy,
                       const HandModel& hand, const std::function<void(int)>& progress = {});

nlohmann::json record_to_json(const TrialRecord& r, const RepConfig& rep);
TrialRecord record_from_json(const nlohmann::json& j);
std::string dataset_to_jsonl(const Dataset& d);
Dataset dataset_from_jsonl(const std::string& text);
void write_dataset(const std::filesystem::path& path, const Dataset& d);
Dataset read_dataset(const std::filesystem::path& path);

/// Disjoint, exhaustive seeded split. Throws Error(Precondition) when the
/// dataset is not larger than eval_count.
std::pair<std::vector<TrialRecord>, std::vector<TrialRecord>> split_dataset(const std::vector<TrialRecord>& records,
                                                                            int eval_count, std::uint64_t seed);

std::vector<Sample> to_samples(const std::vector<TrialRecord>& records, double max_width, int num_types);

/// Fraction of records whose thresholded (0.5) prediction matches the outcome.
double classification_accuracy(const NetworkParams& params, const std::vector<TrialRecord>& records, double max_width,
                               int num_types);

// ---- policy evaluation -------------------------------------------------------

enum class Policy { DecisionModel, RandomType, TwoFinger };
const char* to_string(Policy p);

struct EvalConfig {
  PlannerConfig planner;
  SimConfig sim;
  std::uint64_t policy_seed = 7;

  EvalConfig();
};

struct EvalResult {
  int successes = 0;
  int trials = 0;
  int no_grasp = 0;  // scenes where the policy found nothing (counted as failures)
  double rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::map<std::string, std::pair<int, int>> per_category;  // successes, trials
  std::map<std::string, int> reasons;
};

std::pair<double, double> wilson_interval(int successes, int trials, double z = 1.96);

/// Runs the policy once per scene and simulates the selected grasp.
/// `always_succeed` rigs the oracle for harness tests.
EvalResult evaluate_policy(Policy policy, const NetworkParams* params, const std::vector<SceneSpec>& scenes,
                           const EvalConfig& config, const std::vector<GraspType>& taxonomy, const HandModel& hand,
                           bool always_succeed = false);

nlohmann::json to_json(const EvalResult& r);

// ---- learning curve -----------------------------------------------------------

struct CurveRow {
  int size = 0;
  int repeat = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double success_rate = -1.0;  // negative when grasp evaluation is disabled
  double final_loss = 0.0;
};

struct CurveConfig {
  std::vector<int> sizes = {100, 500, 1000, 2000, 4500};
  int repeats = 3;
  std::uint64_t seed = 0;
  TrainConfig train;
  int eval_scenes = 0;  // simulated scenes per run for the success rate; 0 disables
  EvalConfig eval;
};

/// Trains one network per (size, repeat) on a seeded subset of `train`. A
/// size equal to the whole train split uses it in stored order.
std::vector<CurveRow> learning_curve(const std::vector<TrialRecord>& train, const std::vector<TrialRecord>& eval,
                                     const CurveConfig& config, const std::vector<GraspType>& taxonomy,
                                     const HandModel& hand, const std::function<void(const CurveRow&)>& progress = {});

std::string curve_to_csv(const std::vector<CurveRow>& rows);
std::vector<CurveRow> curve_from_csv(const std::string& text);
/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Line plot: one polyline per repeat plus the mean.
std::string curve_svg(const std::vector<CurveRow>& rows, const std::string& metric);
std::string bar_svg(const std::vector<std::pair<std::string, double>>& bars, const std::string& title);

}  // namespace mfgrasp
