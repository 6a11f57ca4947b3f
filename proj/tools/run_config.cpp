#include "run_config.hpp"

#include <algorithm>

#include "mfgrasp/error.hpp"
#include "mfgrasp/rng.hpp"

namespace mfgrasp::cli {

namespace {

[[noreturn]] void unknown(const std::string& section, const std::string& key) {
  throw Error(ErrorKind::Config, "unknown " + section + " key '" + key + "'");
}

// Keys that the run derives itself and must not be set per stage.
void reject_derived(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys) {
  for (const char* k : keys)
    if (j.contains(k))
      throw Error(ErrorKind::Config, section + "." + k + " is derived; set the top-level key instead");
}

void check_categories(const std::vector<std::string>& cats, const std::string& where) {
  if (cats.empty()) throw Error(ErrorKind::Config, where + ": categories must not be empty");
  for (const auto& c : cats)
    if (std::find(category_names().begin(), category_names().end(), c) == category_names().end())
      throw Error(ErrorKind::Config, where + ": unknown category '" + c + "'");
}

}  // namespace

Policy policy_from_string(const std::string& name) {
  if (name == "decision") return Policy::DecisionModel;
  if (name == "random") return Policy::RandomType;
  if (name == "two-finger") return Policy::TwoFinger;
  throw Error(ErrorKind::Config, "unknown policy '" + name + "' (decision, random, two-finger)");
}

std::uint64_t eval_scene_seed(std::uint64_t seed) { return Rng::mix(seed ^ 0xE5A1'5CE7ull); }

void RunConfig::derive() {
  planner.seed = seed;
  planner.threads = threads;
  planner.rep = sim.rep;
  eval.planner.seed = seed;
  eval.planner.threads = threads;
  eval.planner.rep = sim.rep;
  train.seed = seed;
  sim.max_objects = scenes.max_objects;
}

void RunConfig::validate() const {
  if (threads < 1) throw Error(ErrorKind::Config, "threads must be >= 1");
  planner.validate();
  eval.planner.validate();
  sim.validate();
  train.validate();
  track.validate();
  if (scenes.count < 0) throw Error(ErrorKind::Config, "scenes.count must be >= 0");
  if (scenes.max_objects < 1) throw Error(ErrorKind::Config, "scenes.max_objects must be >= 1");
  check_categories(scenes.categories, "scenes");
  check_categories(eval.categories, "eval");
  if (collect.n < 1) throw Error(ErrorKind::Config, "collect.n must be >= 1");
  if (eval.holdout < 1) throw Error(ErrorKind::Config, "eval.holdout must be >= 1");
  if (eval.scenes < 0) throw Error(ErrorKind::Config, "eval.scenes must be >= 0");
  if (eval.policies.empty()) throw Error(ErrorKind::Config, "eval.policies must not be empty");
  for (const auto& p : eval.policies) policy_from_string(p);
  if (curve.sizes.empty() || curve.repeats < 1 || curve.eval_scenes < 0)
    throw Error(ErrorKind::Config, "curve: need sizes, repeats >= 1, eval_scenes >= 0");
  for (int s : curve.sizes)
    if (s < 1) throw Error(ErrorKind::Config, "curve.sizes must be positive");
  if (bench.scenes < 0 || bench.candidates < 1) throw Error(ErrorKind::Config, "bench: bad scene or candidate count");
}

nlohmann::json to_json(const RunConfig& c) {
  auto planner = to_json(c.planner);
  planner.erase("seed");
  planner.erase("threads");
  planner.erase("rep");
  auto eval_planner = to_json(c.eval.planner);
  eval_planner.erase("seed");
  eval_planner.erase("threads");
  eval_planner.erase("rep");
  auto sim = to_json(c.sim);
  sim.erase("rep");
  sim.erase("max_objects");
  auto train = to_json(c.train);
  train.erase("seed");
  return {{"seed", c.seed},
          {"threads", c.threads},
          {"verbosity", c.verbosity},
          {"rep", to_json(c.sim.rep)},
          {"planner", planner},
          {"sim", sim},
          {"train", train},
          {"scenes", {{"count", c.scenes.count}, {"max_objects", c.scenes.max_objects}, {"categories", c.scenes.categories}}},
          {"collect", {{"n", c.collect.n}}},
          {"eval",
           {{"holdout", c.eval.holdout},
            {"scenes", c.eval.scenes},
            {"policy_seed", c.eval.policy_seed},
            {"categories", c.eval.categories},
            {"policies", c.eval.policies},
            {"planner", eval_planner}}},
          {"curve", {{"sizes", c.curve.sizes}, {"repeats", c.curve.repeats}, {"eval_scenes", c.curve.eval_scenes}}},
          {"track", to_json(c.track)},
          {"bench", {{"scenes", c.bench.scenes}, {"candidates", c.bench.candidates}}}};
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "verbosity") c.verbosity = v.get<int>();
      else if (key == "rep") c.sim.rep = rep_config_from_json(v);
      else if (key == "planner") {
        reject_derived(v, "planner", {"seed", "threads", "rep"});
        c.planner = planner_config_from_json(v, c.planner);
      } else if (key == "sim") {
        reject_derived(v, "sim", {"rep", "max_objects"});
        c.sim = sim_config_from_json(v, c.sim);
      } else if (key == "train") {
        reject_derived(v, "train", {"seed"});
        c.train = train_config_from_json(v, c.train);
      } else if (key == "scenes") {
        for (const auto& [k, x] : v.items()) {
          if (k == "count") c.scenes.count = x.get<int>();
          else if (k == "max_objects") c.scenes.max_objects = x.get<int>();
          else if (k == "categories") c.scenes.categories = x.get<std::vector<std::string>>();
          else unknown("scenes", k);
        }
      } else if (key == "collect") {
        for (const auto& [k, x] : v.items()) {
          if (k == "n") c.collect.n = x.get<int>();
          else unknown("collect", k);
        }
      } else if (key == "eval") {
        for (const auto& [k, x] : v.items()) {
          if (k == "holdout") c.eval.holdout = x.get<int>();
          else if (k == "scenes") c.eval.scenes = x.get<int>();
          else if (k == "policy_seed") c.eval.policy_seed = x.get<std::uint64_t>();
          else if (k == "categories") c.eval.categories = x.get<std::vector<std::string>>();
          else if (k == "policies") c.eval.policies = x.get<std::vector<std::string>>();
          else if (k == "planner") {
            reject_derived(x, "eval.planner", {"seed", "threads", "rep"});
            c.eval.planner = planner_config_from_json(x, c.eval.planner);
          } else unknown("eval", k);
        }
      } else if (key == "curve") {
        for (const auto& [k, x] : v.items()) {
          if (k == "sizes") c.curve.sizes = x.get<std::vector<int>>();
          else if (k == "repeats") c.curve.repeats = x.get<int>();
          else if (k == "eval_scenes") c.curve.eval_scenes = x.get<int>();
          else unknown("curve", k);
        }
      } else if (key == "track") {
        c.track = track_config_from_json(v, c.track);
      } else if (key == "bench") {
        for (const auto& [k, x] : v.items()) {
          if (k == "scenes") c.bench.scenes = x.get<int>();
          else if (k == "candidates") c.bench.candidates = x.get<int>();
          else unknown("bench", k);
        }
      } else {
        unknown("top-level", key);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("config: ") + e.what());
  }
  c.derive();
  c.validate();
  return c;
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error(ErrorKind::Config, "override must look like key.path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorKind::Config, "override: empty key in '" + path + "'");
    if (!node->is_object()) throw Error(ErrorKind::Config, "override: '" + path + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

}  // namespace mfgrasp::cli
