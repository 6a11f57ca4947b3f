#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfgrasp/antipodal.hpp"
#include "mfgrasp/geometry.hpp"

namespace mfgrasp {

enum class Finger { Thumb = 0, Index, Middle, Ring, Little };
inline constexpr int kNumFingers = 5;
inline constexpr int kNumMotors = 6;  // thumb rotation + thumb flex + one flex per other finger
inline constexpr int kNumGraspTypes = 16;

/// One taxonomy entry: a finger preshape combined with a depth offset.
struct GraspType {
  int id = 0;
  int preshape = 0;  // 0 pinch, 1 tripod, 2 four-finger precision, 3 power
  std::string label;
  /// Motor values in radians: thumb rotation, thumb flex, index, middle, ring, little.
  std::array<double, kNumMotors> motors{};
  double depth_offset = 0.0;  // m
  int engaged_fingers = 2;
};

/// Parametric hand. Hand frame: x along approach, y along the closing axis
/// (fingers on +y, thumb on -y), z = x cross y; the origin is the centre of
/// the fingertip pads.
struct HandModel {
  double finger_length = 0.07;       // fingertip plane to palm front face
  double distal_length = 0.028;      // knuckle to fingertip along x
  double finger_radius = 0.004;
  double palm_depth = 0.03;
  double palm_half_height = 0.04;    // along z
  double palm_margin = 0.01;         // beyond the outermost finger in y
  std::array<double, 4> finger_base_z = {0.027, 0.009, -0.009, -0.027};  // index..little
  double thumb_swing_radius = 0.04;
  double max_opening = 0.12;
  double curl_threshold = 1.2;       // flex at or above this tucks the finger away
  std::array<double, 2> joint_min = {0.0, 0.0};
  std::array<double, 2> joint_max = {1.6, 1.6};
  double sample_spacing = 0.001;     // surface sampling for voxelisation

  void validate() const;
};

nlohmann::json to_json(const HandModel& hand);
HandModel hand_from_json(const nlohmann::json& j);

/// The 16 built-in types, preshape-major: id = 4 * preshape + offset index.
std::vector<GraspType> builtin_taxonomy();
nlohmann::json taxonomy_to_json(const std::vector<GraspType>& types);
/// Parses and validates a taxonomy asset (dense unique ids, offsets on the
/// 1 cm ladder, motors within joint limits).
std::vector<GraspType> taxonomy_from_json(const nlohmann::json& j, const HandModel& hand = {});

struct MultiFingerGrasp {
  Mat3 rotation = Mat3::Identity();  // columns: approach, closing axis, approach x closing
  Vec3 translation = Vec3::Zero();   // fingertip pad centre
  double width = 0.0;                // pad-to-pad opening, m
  int type_id = 0;
  Cell cell;
  std::optional<double> quality;

  Vec3 approach() const { return rotation.col(0); }
  Vec3 closing_axis() const { return rotation.col(1); }
  RigidTransform pose() const { return {rotation, translation}; }
  MultiFingerGrasp transformed(const RigidTransform& t) const;
};

nlohmann::json to_json(const MultiFingerGrasp& g);
MultiFingerGrasp grasp_from_json(const nlohmann::json& j);

/// Maps a representation cell to a multi-finger grasp sharing the parallel
/// grasp's rotation, translation and width. Throws Error(Infeasible) when
/// width + clearance exceeds the hand opening, Error(Precondition) for an
/// invalid cell.
MultiFingerGrasp pose_from_representation(const GraspFrame& frame, const RepGrid& rep, Cell cell,
                                          const GraspType& type, double clearance, const RepConfig& config,
                                          const HandModel& hand = {});

struct Capsule {
  Vec3 a;
  Vec3 b;
  double radius;
};

struct OrientedBox {
  Vec3 min;  // in hand frame
  Vec3 max;
};

/// Hand primitives in the hand frame for a given type and opening.
struct HandShape {
  OrientedBox palm;
  std::vector<Capsule> segments;
  std::array<bool, kNumFingers> engaged{};
  std::array<Vec3, kNumFingers> pad_centers{};  // hand frame, valid for engaged fingers
  std::array<double, kNumFingers> pad_y_sign{};  // +1 fingers, -1 thumb
};

HandShape hand_shape(const HandModel& hand, const GraspType& type, double width);
Aabb hand_bounds(const HandShape& shape);

/// Palm and finger capsules posed by the grasp and sampled at
/// hand.sample_spacing or finer.
std::vector<Vec3> hand_geometry(const MultiFingerGrasp& grasp, const GraspType& type, const HandModel& hand = {});
std::vector<Vec3> sample_hand_shape(const HandShape& shape, double spacing);

}  // namespace mfgrasp
