#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace morph {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

// ---------------------------------------------------------------------------
// Rotation helpers
// ---------------------------------------------------------------------------

/// Unit quaternion for the rotation vector `v` (axis * angle).
Quat quat_exp(const Vec3& v);

/// Rotation vector of `q`, taken on the short arc (angle in [0, pi]).
Vec3 quat_log(const Quat& q);

/// First two columns of the rotation matrix, column-major: (c0, c1).
using Rot6 = std::array<double, 6>;
Rot6 to_rot6(const Quat& q);

/// Gram-Schmidt decode of a 6D encoding. Throws InputError when the two
/// columns are degenerate.
Quat from_rot6(std::span<const double, 6> v);

/// Yaw-only rotation extracted from the forward (+X) axis of `q`.
Quat heading_of(const Quat& q);

// ---------------------------------------------------------------------------
// Skeleton
// ---------------------------------------------------------------------------

struct Joint {
  std::string name;
  int parent = -1;
  Vec3 offset = Vec3::Zero();  ///< position in parent frame at zero rotation, m
  double mass = 1.0;           ///< kg, lumped at the joint
  double collision_radius = 0.05;
  /// Extra ground-contact points in the joint frame (foot soles). Optional.
  std::vector<Vec3> contact_points;

  bool operator==(const Joint&) const = default;
};

/// Joint tree, topologically sorted, +Z up, ground plane z = 0.
class Skeleton {
 public:
  Skeleton() = default;
  /// Validates every invariant; throws StructuralError on violation.
  Skeleton(std::string name, std::vector<Joint> joints, std::vector<int> feet,
           int pelvis);

  const std::string& name() const { return name_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const Joint& joint(int i) const { return joints_[static_cast<size_t>(i)]; }
  int num_joints() const { return static_cast<int>(joints_.size()); }
  const std::vector<int>& feet() const { return feet_; }
  int pelvis() const { return pelvis_; }
  int parent(int i) const { return joints_[static_cast<size_t>(i)].parent; }
  double total_mass() const;

  bool operator==(const Skeleton&) const = default;

 private:
  std::string name_;
  std::vector<Joint> joints_;
  std::vector<int> feet_;
  int pelvis_ = 0;
};

/// 13-joint humanoid used throughout the project ("humanoid13").
const Skeleton& default_humanoid();

// ---------------------------------------------------------------------------
// Poses and sequences
// ---------------------------------------------------------------------------

/// Root position plus one rotation per joint. joint_rot[0] is the root's
/// world orientation; every other entry is relative to the parent joint.
struct Pose {
  Vec3 root_pos = Vec3::Zero();
  std::vector<Quat> joint_rot;
};

struct ConditionTag {
  std::string label;
  std::uint64_t seed = 0;
  bool operator==(const ConditionTag&) const = default;
};

struct MotionSequence {
  int fps = 30;
  std::vector<Pose> frames;
  ConditionTag condition;
  std::string skeleton = "humanoid13";

  int length() const { return static_cast<int>(frames.size()); }
};

struct WorldPose {
  std::vector<Vec3> positions;
  std::vector<Quat> rotations;
};

/// Per-frame, per-joint kinematic quantities. Velocities use backward
/// differences at the sequence rate; frame 0 copies frame 1. ang_vel is the
/// joint's rotation rate relative to its parent, expressed in the parent
/// frame (world frame for the root).
struct MotionDerivatives {
  std::vector<std::vector<Vec3>> joint_pos;
  std::vector<std::vector<Vec3>> lin_vel;
  std::vector<std::vector<Vec3>> ang_vel;
};

/// Throws StructuralError when the pose does not fit the skeleton.
void check_pose(const Skeleton& skeleton, const Pose& pose);

/// Throws InputError/StructuralError for sequence-level violations
/// (length, fps range, joint counts, skeleton id).
void check_sequence(const Skeleton& skeleton, const MotionSequence& seq);

WorldPose forward_kinematics(const Skeleton& skeleton, const Pose& pose);

MotionDerivatives derive_velocities(const Skeleton& skeleton,
                                    const MotionSequence& seq);

/// Finite-difference velocities between two consecutive poses, the same
/// formula derive_velocities applies per frame.
void pose_velocities(const WorldPose& prev_world, const Pose& prev,
                     const WorldPose& cur_world, const Pose& cur, double fps,
                     std::vector<Vec3>& lin_vel, std::vector<Vec3>& ang_vel);

/// Mean Euclidean distance between corresponding points of two frame lists.
double mpjpe(std::span<const std::vector<Vec3>> a,
             std::span<const std::vector<Vec3>> b);

double pose_mpjpe(const Skeleton& skeleton, const Pose& a, const Pose& b);

/// Sequence MPJPE in meters; throws InputError on length/skeleton mismatch.
double mpjpe(const Skeleton& skeleton, const MotionSequence& a,
             const MotionSequence& b);

/// Renormalizes every quaternion and flips it to w >= 0. Throws InputError
/// on a zero-norm quaternion.
Pose canonicalize(const Pose& pose);

/// Centre of mass of the lumped joint masses.
Vec3 center_of_mass(const Skeleton& skeleton, const WorldPose& world);

/// Lowest collision-sphere bottom (z - radius) of a posed skeleton.
double lowest_point(const Skeleton& skeleton, const WorldPose& world);

} // namespace morph
