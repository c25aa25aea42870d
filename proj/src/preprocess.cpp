#include "morph/preprocess.hpp"

#include "morph/errors.hpp"

#include <cmath>
#include <numbers>

namespace morph {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

Vec3 feet_midpoint(const Skeleton& skeleton, const WorldPose& world) {
  Vec3 mid = Vec3::Zero();
  for (int f : skeleton.feet()) mid += world.positions[static_cast<size_t>(f)];
  return mid / static_cast<double>(skeleton.feet().size());
}

void check_reference(const MotionSequence& seq, int reference_frame) {
  if (reference_frame < 0 || reference_frame >= seq.length()) {
    throw InputError("preprocess: reference frame " + std::to_string(reference_frame) +
                     " outside [0, " + std::to_string(seq.length()) + ")");
  }
}

// Pelvis minus feet midpoint; the body axis whose lean is measured.
Vec3 body_axis(const Skeleton& skeleton, const Pose& pose) {
  const WorldPose world = forward_kinematics(skeleton, pose);
  const Vec3 axis = world.positions[static_cast<size_t>(skeleton.pelvis())] -
                    feet_midpoint(skeleton, world);
  if (!(axis.norm() > 1e-9)) {
    throw DegenerateGeometryError("tilt: pelvis coincides with the feet midpoint");
  }
  return axis;
}

} // namespace

double tilt_angle(const Skeleton& skeleton, const Pose& pose) {
  const Vec3 axis = body_axis(skeleton, pose);
  // The ground projection of the centre of mass runs along -Z; the angle
  // between it and the feet->pelvis line equals the angle to +Z.
  const double horizontal = std::hypot(axis.x(), axis.y());
  return std::atan2(horizontal, axis.z()) * kRadToDeg;
}

MotionSequence correct_tilt(const Skeleton& skeleton, const MotionSequence& seq,
                            double angle_deg, int reference_frame) {
  check_reference(seq, reference_frame);
  if (angle_deg == 0.0) return seq;
  const Pose& ref = seq.frames[static_cast<size_t>(reference_frame)];
  const Vec3 axis = body_axis(skeleton, ref);
  Vec3 lateral = axis.cross(Vec3::UnitZ());
  if (!(lateral.norm() > 1e-12)) {
    return seq;  // already vertical, no lean direction
  }
  lateral.normalize();
  const WorldPose world = forward_kinematics(skeleton, ref);
  const Vec3 pivot = feet_midpoint(skeleton, world);
  // rotating by +angle about (axis x up) brings the axis toward +Z
  const Quat fix(Eigen::AngleAxisd(angle_deg / kRadToDeg, lateral));
  MotionSequence out = seq;
  for (Pose& p : out.frames) {
    p.root_pos = pivot + fix * (p.root_pos - pivot);
    p.joint_rot[0] = fix * p.joint_rot[0];
    p = canonicalize(p);
  }
  return out;
}

/// Residual ground offset treated as already aligned, m.
constexpr double kAlignedTolerance = 1e-12;

MotionSequence ground_align(const Skeleton& skeleton, const MotionSequence& seq,
                            int reference_frame) {
  check_reference(seq, reference_frame);
  const WorldPose world =
      forward_kinematics(skeleton, seq.frames[static_cast<size_t>(reference_frame)]);
  const double h = lowest_point(skeleton, world);
  MotionSequence out = seq;
  if (std::abs(h) <= kAlignedTolerance) return out;
  for (Pose& p : out.frames) p.root_pos.z() -= h;
  return out;
}

MotionSequence preprocess(const Skeleton& skeleton, const MotionSequence& seq,
                          const PreprocessParams& params) {
  if (!(params.tilt_threshold_deg > 0.0 && params.tilt_threshold_deg < 90.0)) {
    throw InputError("preprocess: tilt threshold must be in (0, 90) degrees");
  }
  check_sequence(skeleton, seq);
  check_reference(seq, params.reference_frame);
  const double tilt =
      tilt_angle(skeleton, seq.frames[static_cast<size_t>(params.reference_frame)]);
  MotionSequence out = seq;
  if (tilt > params.tilt_threshold_deg) {
    out = correct_tilt(skeleton, out, tilt, params.reference_frame);
  }
  return ground_align(skeleton, out, params.reference_frame);
}

} // namespace morph
