#include "mfgrasp/hand.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "mfgrasp/error.hpp"

namespace mfgrasp {

void HandModel::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(ErrorKind::Config, std::string("hand: ") + name + " must be positive");
  };
  positive(finger_length, "finger_length");
  positive(distal_length, "distal_length");
  positive(finger_radius, "finger_radius");
  positive(palm_depth, "palm_depth");
  positive(palm_half_height, "palm_half_height");
  positive(thumb_swing_radius, "thumb_swing_radius");
  positive(max_opening, "max_opening");
  positive(sample_spacing, "sample_spacing");
  if (palm_margin < 0.0) throw Error(ErrorKind::Config, "hand: palm_margin must be non-negative");
  if (distal_length >= finger_length) throw Error(ErrorKind::Config, "hand: distal_length must be shorter than the finger");
  for (int k = 0; k < 2; ++k)
    if (!(joint_min[k] < joint_max[k])) throw Error(ErrorKind::Config, "hand: joint limits must satisfy min < max");
}

nlohmann::json to_json(const HandModel& h) {
  return {{"schema", "mfgrasp.hand"},
          {"version", 1},
          {"finger_length", h.finger_length},
          {"distal_length", h.distal_length},
          {"finger_radius", h.finger_radius},
          {"palm_depth", h.palm_depth},
          {"palm_half_height", h.palm_half_height},
          {"palm_margin", h.palm_margin},
          {"finger_base_z", h.finger_base_z},
          {"thumb_swing_radius", h.thumb_swing_radius},
          {"max_opening", h.max_opening},
          {"curl_threshold", h.curl_threshold},
          {"joint_min", h.joint_min},
          {"joint_max", h.joint_max},
          {"sample_spacing", h.sample_spacing}};
}

HandModel hand_from_json(const nlohmann::json& j) {
  HandModel h;
  for (const auto& [key, v] : j.items()) {
    if (key == "schema") {
      if (v.get<std::string>() != "mfgrasp.hand") throw Error(ErrorKind::Format, "hand: wrong schema '" + v.get<std::string>() + "'");
    } else if (key == "version") {
      if (v.get<int>() != 1) throw Error(ErrorKind::Format, "hand: unsupported version " + v.dump());
    } else if (key == "finger_length") h.finger_length = v.get<double>();
    else if (key == "distal_length") h.distal_length = v.get<double>();
    else if (key == "finger_radius") h.finger_radius = v.get<double>();
    else if (key == "palm_depth") h.palm_depth = v.get<double>();
    else if (key == "palm_half_height") h.palm_half_height = v.get<double>();
    else if (key == "palm_margin") h.palm_margin = v.get<double>();
    else if (key == "finger_base_z") h.finger_base_z = v.get<std::array<double, 4>>();
    else if (key == "thumb_swing_radius") h.thumb_swing_radius = v.get<double>();
    else if (key == "max_opening") h.max_opening = v.get<double>();
    else if (key == "curl_threshold") h.curl_threshold = v.get<double>();
    else if (key == "joint_min") h.joint_min = v.get<std::array<double, 2>>();
    else if (key == "joint_max") h.joint_max = v.get<std::array<double, 2>>();
    else if (key == "sample_spacing") h.sample_spacing = v.get<double>();
    else throw Error(ErrorKind::Config, "hand: unknown key '" + key + "'");
  }
  h.validate();
  return h;
}

namespace {

constexpr const char* kPreshapeNames[4] = {"pinch", "tripod", "quad", "power"};
constexpr double kOffsets[4] = {0.0, 0.01, 0.02, 0.03};

int count_engaged(const std::array<double, kNumMotors>& m, double curl_threshold) {
  int n = 0;
  for (int k = 1; k < kNumMotors; ++k) n += m[k] < curl_threshold ? 1 : 0;
  return n;
}

}  // namespace

std::vector<GraspType> builtin_taxonomy() {
  const HandModel hand;
  // Thumb swings to the mean height of the engaged fingers, rounded to the
  // precision of the shipped asset (adding 0.0 turns -0 into 0).
  auto thumb_rot = [&](int fingers) {
    double z = 0.0;
    for (int i = 0; i < fingers; ++i) z += hand.finger_base_z[i];
    return std::round(std::asin(z / fingers / hand.thumb_swing_radius) * 1e4) / 1e4 + 0.0;
  };
  const double open = 0.5, wrap = 0.6, curled = 1.5;
  const std::array<std::array<double, kNumMotors>, 4> motors = {{
      {thumb_rot(1), open, open, curled, curled, curled},
      {thumb_rot(2), open, open, open, curled, curled},
      {thumb_rot(3), open, open, open, open, curled},
      {thumb_rot(4), wrap, wrap, wrap, wrap, wrap},
  }};
  std::vector<GraspType> out;
  for (int p = 0; p < 4; ++p) {
    for (int o = 0; o < 4; ++o) {
      GraspType t;
      t.id = 4 * p + o;
      t.preshape = p;
      t.motors = motors[p];
      t.depth_offset = kOffsets[o];
      t.engaged_fingers = count_engaged(t.motors, hand.curl_threshold);
      t.label = std::string(kPreshapeNames[p]) + "-d" + std::to_string(o);
      out.push_back(t);
    }
  }
  return out;
}

nlohmann::json taxonomy_to_json(const std::vector<GraspType>& types) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : types) {
    arr.push_back({{"id", t.id},
                   {"label", t.label},
                   {"preshape", t.preshape},
                   {"motors", t.motors},
                   {"depth_offset", t.depth_offset},
                   {"engaged_fingers", t.engaged_fingers}});
  }
  return {{"schema", "mfgrasp.taxonomy"}, {"version", 1}, {"types", arr}};
}

std::vector<GraspType> taxonomy_from_json(const nlohmann::json& j, const HandModel& hand) {
  if (!j.is_object() || j.value("schema", "") != "mfgrasp.taxonomy")
    throw Error(ErrorKind::Format, "taxonomy: missing or wrong schema");
  if (j.value("version", 0) != 1) throw Error(ErrorKind::Format, "taxonomy: unsupported version");
  if (!j.contains("types") || !j["types"].is_array()) throw Error(ErrorKind::Format, "taxonomy: 'types' array required");
  std::vector<GraspType> out;
  for (const auto& e : j["types"]) {
    GraspType t;
    for (const auto& [key, v] : e.items()) {
      if (key == "id") t.id = v.get<int>();
      else if (key == "label") t.label = v.get<std::string>();
      else if (key == "preshape") t.preshape = v.get<int>();
      else if (key == "motors") t.motors = v.get<std::array<double, kNumMotors>>();
      else if (key == "depth_offset") t.depth_offset = v.get<double>();
      else if (key == "engaged_fingers") t.engaged_fingers = v.get<int>();
      else throw Error(ErrorKind::Config, "taxonomy: unknown key '" + key + "'");
    }
    const int engaged = count_engaged(t.motors, hand.curl_threshold);
    if (e.contains("engaged_fingers") && engaged != t.engaged_fingers)
      throw Error(ErrorKind::Format, "taxonomy: type " + std::to_string(t.id) + " engaged_fingers disagrees with motors");
    t.engaged_fingers = engaged;
    if (t.motors[1] >= hand.curl_threshold || engaged < 2)
      throw Error(ErrorKind::Format, "taxonomy: type " + std::to_string(t.id) + " must engage the thumb and one finger");
    for (int k = 0; k < kNumMotors; ++k) {
      const int lim = k == 0 ? 0 : 1;
      if (!(t.motors[k] >= hand.joint_min[lim] && t.motors[k] <= hand.joint_max[lim]))
        throw Error(ErrorKind::Format, "taxonomy: type " + std::to_string(t.id) + " motor " + std::to_string(k) +
                                           " outside joint limits");
    }
    bool on_ladder = false;
    for (double o : kOffsets) on_ladder |= std::abs(t.depth_offset - o) < 1e-9;
    if (!on_ladder) throw Error(ErrorKind::Format, "taxonomy: depth_offset must be one of 0, 0.01, 0.02, 0.03");
    if (t.preshape < 0 || t.preshape > 3) throw Error(ErrorKind::Format, "taxonomy: preshape must be 0..3");
    out.push_back(t);
  }
  std::sort(out.begin(), out.end(), [](const GraspType& a, const GraspType& b) { return a.id < b.id; });
  if (out.size() != kNumGraspTypes) throw Error(ErrorKind::Format, "taxonomy: expected 16 types");
  for (int i = 0; i < kNumGraspTypes; ++i)
    if (out[i].id != i) throw Error(ErrorKind::Format, "taxonomy: ids must be unique and dense 0..15");
  return out;
}

MultiFingerGrasp MultiFingerGrasp::transformed(const RigidTransform& t) const {
  MultiFingerGrasp g = *this;
  g.rotation = t.rotation() * rotation;
  g.translation = t.apply(translation);
  return g;
}

nlohmann::json to_json(const MultiFingerGrasp& g) {
  std::vector<double> r;
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r.push_back(g.rotation(i, k));
  nlohmann::json j = {{"R", r},
                      {"t", {g.translation.x(), g.translation.y(), g.translation.z()}},
                      {"w", g.width},
                      {"type", g.type_id},
                      {"cell", {g.cell.angle, g.cell.depth}}};
  j["quality"] = g.quality ? nlohmann::json(*g.quality) : nlohmann::json(nullptr);
  return j;
}

MultiFingerGrasp grasp_from_json(const nlohmann::json& j) {
  MultiFingerGrasp g;
  const auto r = j.at("R").get<std::vector<double>>();
  const auto t = j.at("t").get<std::vector<double>>();
  if (r.size() != 9 || t.size() != 3) throw Error(ErrorKind::Format, "grasp: R needs 9 values and t needs 3");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) g.rotation(i, k) = r[3 * i + k];
  g.translation = Vec3(t[0], t[1], t[2]);
  if (!RigidTransform::is_rotation(g.rotation, 1e-6)) throw Error(ErrorKind::Format, "grasp: R is not a rotation");
  g.width = j.at("w").get<double>();
  g.type_id = j.at("type").get<int>();
  if (g.type_id < 0 || g.type_id >= kNumGraspTypes) throw Error(ErrorKind::Format, "grasp: type out of range");
  const auto cell = j.at("cell").get<std::array<int, 2>>();
  g.cell = Cell{cell[0], cell[1]};
  if (j.contains("quality") && !j["quality"].is_null()) g.quality = j["quality"].get<double>();
  return g;
}

MultiFingerGrasp pose_from_representation(const GraspFrame& frame, const RepGrid& rep, Cell cell,
                                          const GraspType& type, double clearance, const RepConfig& config,
                                          const HandModel& hand) {
  if (cell.angle < 0 || cell.angle >= rep.num_angles() || cell.depth < 0 || cell.depth >= rep.num_depths())
    throw Error(ErrorKind::Precondition, "pose_from_representation: cell out of range");
  if (!rep.valid(cell.angle, cell.depth) || rep.score(cell.angle, cell.depth) <= 0.0)
    throw Error(ErrorKind::Precondition, "pose_from_representation: cell is not a valid antipodal grasp");
  if (clearance < 0.0) throw Error(ErrorKind::Precondition, "pose_from_representation: negative clearance");
  const double w = rep.width(cell.angle, cell.depth) + clearance;
  if (w > hand.max_opening + 1e-12)
    throw Error(ErrorKind::Infeasible, "grasp width " + std::to_string(w) + " exceeds hand opening " +
                                           std::to_string(hand.max_opening));
  const Vec3 x = frame.approach;
  const Vec3 y = frame.closing_direction(cell.angle, rep.num_angles());
  MultiFingerGrasp g;
  g.rotation.col(0) = x;
  g.rotation.col(1) = y;
  g.rotation.col(2) = x.cross(y);
  // Centred between the contacts so the pads straddle the object.
  g.translation = frame.line_center(cell.depth, config.depth_step) + rep.center(cell.angle, cell.depth) * y +
                  type.depth_offset * x;
  g.width = w;
  g.type_id = type.id;
  g.cell = cell;
  return g;
}

HandShape hand_shape(const HandModel& hand, const GraspType& type, double width) {
  HandShape s;
  const double r = hand.finger_radius;
  const double L = hand.finger_length;
  const double ld = hand.distal_length;
  const double pad_y = 0.5 * width + r;  // capsule axis at the fingertip
  const double base_y = pad_y + ld * std::sin(0.5);

  std::array<bool, 4> engaged{};
  double shift = 0.0;
  int n = 0;
  for (int i = 0; i < 4; ++i) {
    engaged[i] = type.motors[2 + i] < hand.curl_threshold;
    if (engaged[i]) {
      shift += hand.finger_base_z[i];
      ++n;
    }
  }
  shift = n > 0 ? shift / n : 0.0;

  auto add_finger = [&](int slot, double side, double z, double flex) {
    const Vec3 base(-L, side * base_y, z);
    if (flex < hand.curl_threshold) {
      const Vec3 tip(0.0, side * pad_y, z);
      const Vec3 knuckle(-ld, side * (pad_y + ld * std::sin(flex)), z);
      s.segments.push_back({base, knuckle, r});
      s.segments.push_back({knuckle, tip, r});
      s.engaged[slot] = true;
      s.pad_centers[slot] = Vec3(0.0, side * 0.5 * width, z);
    } else {
      // Tucked toward the palm, clear of the closing line.
      const Vec3 tip(-L + 0.6 * ld, side * (base_y - 0.5 * ld), z);
      s.segments.push_back({base, tip, r});
    }
    s.pad_y_sign[slot] = side;
  };

  const double thumb_z = hand.thumb_swing_radius * std::sin(type.motors[0]) - shift;
  add_finger(0, -1.0, thumb_z, type.motors[1]);
  for (int i = 0; i < 4; ++i) add_finger(i + 1, 1.0, hand.finger_base_z[i] - shift, type.motors[2 + i]);

  const double half_y = base_y + r + hand.palm_margin;
  s.palm.min = Vec3(-L - hand.palm_depth, -half_y, -hand.palm_half_height - shift);
  s.palm.max = Vec3(-L, half_y, hand.palm_half_height - shift);
  return s;
}

Aabb hand_bounds(const HandShape& shape) {
  Aabb box;
  box.extend(shape.palm.min);
  box.extend(shape.palm.max);
  for (const auto& c : shape.segments) {
    const Vec3 pad = Vec3::Constant(c.radius);
    box.extend(c.a - pad);
    box.extend(c.a + pad);
    box.extend(c.b - pad);
    box.extend(c.b + pad);
  }
  return box;
}

namespace {

void sample_box(const OrientedBox& b, double h, std::vector<Vec3>& out) {
  const Vec3 ext = b.max - b.min;
  std::array<int, 3> n{};
  for (int k = 0; k < 3; ++k) n[k] = std::max(1, static_cast<int>(std::ceil(ext[k] / h)));
  for (int face = 0; face < 6; ++face) {
    const int axis = face / 2;
    const int u = (axis + 1) % 3, v = (axis + 2) % 3;
    for (int i = 0; i <= n[u]; ++i) {
      for (int k = 0; k <= n[v]; ++k) {
        Vec3 p;
        p[axis] = face % 2 == 0 ? b.min[axis] : b.max[axis];
        p[u] = b.min[u] + ext[u] * i / n[u];
        p[v] = b.min[v] + ext[v] * k / n[v];
        out.push_back(p);
      }
    }
  }
}

void sample_capsule(const Capsule& c, double h, std::vector<Vec3>& out) {
  const Vec3 d = c.b - c.a;
  const double len = d.norm();
  const Vec3 u = len > 1e-12 ? Vec3(d / len) : Vec3::UnitX();
  const Vec3 e1 = any_orthogonal(u);
  const Vec3 e2 = u.cross(e1);
  const double r = c.radius;
  const int nc = std::max(8, static_cast<int>(std::ceil(2.0 * std::numbers::pi * r / h)));
  const int nl = std::max(1, static_cast<int>(std::ceil(len / h)));
  for (int i = 0; i <= nl; ++i) {
    const Vec3 center = c.a + d * (static_cast<double>(i) / nl);
    for (int k = 0; k < nc; ++k) {
      const double th = 2.0 * std::numbers::pi * k / nc;
      out.push_back(center + r * (std::cos(th) * e1 + std::sin(th) * e2));
    }
  }
  const int nphi = std::max(2, static_cast<int>(std::ceil(0.5 * std::numbers::pi * r / h)));
  for (int cap = 0; cap < 2; ++cap) {
    const Vec3 center = cap == 0 ? c.b : c.a;
    const Vec3 axis = cap == 0 ? u : Vec3(-u);
    for (int i = 1; i <= nphi; ++i) {
      const double phi = 0.5 * std::numbers::pi * i / nphi;
      const double ring = r * std::cos(phi);
      const int m = std::max(1, static_cast<int>(std::ceil(2.0 * std::numbers::pi * ring / h)));
      for (int k = 0; k < m; ++k) {
        const double th = 2.0 * std::numbers::pi * k / m;
        out.push_back(center + r * std::sin(phi) * axis + ring * (std::cos(th) * e1 + std::sin(th) * e2));
      }
    }
  }
}

}  // namespace

std::vector<Vec3> sample_hand_shape(const HandShape& shape, double spacing) {
  if (!(spacing > 0.0)) throw Error(ErrorKind::Precondition, "sample_hand_shape: spacing must be positive");
  std::vector<Vec3> pts;
  sample_box(shape.palm, spacing, pts);
  for (const auto& c : shape.segments) sample_capsule(c, spacing, pts);
  return pts;
}

std::vector<Vec3> hand_geometry(const MultiFingerGrasp& grasp, const GraspType& type, const HandModel& hand) {
  auto pts = sample_hand_shape(hand_shape(hand, type, grasp.width), hand.sample_spacing);
  for (auto& p : pts) p = grasp.rotation * p + grasp.translation;
  return pts;
}

}  // namespace mfgrasp
