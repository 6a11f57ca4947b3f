#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgrasp/planner.hpp"
#include "mfgrasp/sim_lab.hpp"
#include "mfgrasp/tracker.hpp"

namespace mfgrasp::cli {

/// Everything a run reads from its config file. Stage seeds are derived from
/// `seed` so a run is reproducible from this object alone.
struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  int verbosity = 0;

  PlannerConfig planner;
  SimConfig sim;
  TrainConfig train;

  struct Scenes {
    int count = 20;
    int max_objects = 6;
    std::vector<std::string> categories = category_names();
  } scenes;

  struct Collect {
    int n = 5000;
  } collect;

  struct Eval {
    int holdout = 500;  // records held out of training
    int scenes = 200;
    std::uint64_t policy_seed = 7;
    std::vector<std::string> categories = category_names();
    std::vector<std::string> policies = {"decision", "random", "two-finger"};
    PlannerConfig planner = EvalConfig().planner;
  } eval;

  struct Curve {
    std::vector<int> sizes = {100, 500, 1000, 2000, 4500};
    int repeats = 3;
    int eval_scenes = 0;
  } curve;

  TrackConfig track;

  struct Bench {
    int scenes = 5;
    int candidates = 500;
  } bench;

  /// Pushes `seed` and `threads` into the nested stage configs.
  void derive();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Overlays `j` onto `base`. Unknown keys at any level throw Error(Config).
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});

/// Applies "a.b.c=value" to `j`; the value is parsed as JSON, falling back to
/// a plain string.
void apply_override(nlohmann::json& j, const std::string& assignment);

Policy policy_from_string(const std::string& name);

/// Seed for fresh evaluation scenes, kept apart from collection scenes.
std::uint64_t eval_scene_seed(std::uint64_t seed);

}  // namespace mfgrasp::cli
