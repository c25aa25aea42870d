#include "morph/motion.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace morph {

Quat quat_exp(const Vec3& v) {
  const double angle = v.norm();
  if (angle < 1e-12) {
    // second-order accurate for tiny rotations
    Quat q(1.0, 0.5 * v.x(), 0.5 * v.y(), 0.5 * v.z());
    q.normalize();
    return q;
  }
  return Quat(Eigen::AngleAxisd(angle, v / angle));
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  }
  const Vec3 xyz = q.vec();
  const double s = xyz.norm();
  if (s < 1e-12) {
    return 2.0 * xyz;
  }
  const double angle = 2.0 * std::atan2(s, q.w());
  return xyz * (angle / s);
}

Rot6 to_rot6(const Quat& q) {
  const Mat3 m = q.toRotationMatrix();
  return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Quat from_rot6(std::span<const double, 6> v) {
  Vec3 a(v[0], v[1], v[2]);
  Vec3 b(v[3], v[4], v[5]);
  const double na = a.norm();
  if (!(na > 1e-12)) {
    throw InputError("6D rotation: degenerate first column");
  }
  a /= na;
  b -= a.dot(b) * a;
  const double nb = b.norm();
  if (!(nb > 1e-12)) {
    throw InputError("6D rotation: degenerate second column");
  }
  b /= nb;
  Mat3 m;
  m.col(0) = a;
  m.col(1) = b;
  m.col(2) = a.cross(b);
  Quat q(m);
  q.normalize();
  if (q.w() < 0.0) {
    q.coeffs() = -q.coeffs();
  }
  return q;
}

Quat heading_of(const Quat& q) {
  const Vec3 fwd = q * Vec3::UnitX();
  const double yaw = std::atan2(fwd.y(), fwd.x());
  return Quat(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
}

// ---------------------------------------------------------------------------

Skeleton::Skeleton(std::string name, std::vector<Joint> joints,
                   std::vector<int> feet, int pelvis)
    : name_(std::move(name)),
      joints_(std::move(joints)),
      feet_(std::move(feet)),
      pelvis_(pelvis) {
  const int n = num_joints();
  if (n == 0) {
    throw StructuralError("skeleton '" + name_ + "' has no joints");
  }
  int roots = 0;
  for (int i = 0; i < n; ++i) {
    const Joint& j = joints_[static_cast<size_t>(i)];
    if (j.parent < 0) {
      ++roots;
      if (i != 0) {
        throw StructuralError("skeleton: root must be joint 0, found root at " +
                              std::to_string(i));
      }
    } else if (j.parent >= i) {
      throw StructuralError("skeleton: joint " + std::to_string(i) +
                            " has parent index >= its own index");
    }
    if (!(j.mass > 0.0) || !std::isfinite(j.mass)) {
      throw StructuralError("skeleton: joint '" + j.name + "' mass must be > 0");
    }
    if (!(j.collision_radius > 0.0) || !std::isfinite(j.collision_radius)) {
      throw StructuralError("skeleton: joint '" + j.name +
                            "' collision_radius must be > 0");
    }
    if (!j.offset.allFinite()) {
      throw StructuralError("skeleton: joint '" + j.name + "' offset not finite");
    }
  }
  if (roots != 1) {
    throw StructuralError("skeleton: expected exactly one root, found " +
                          std::to_string(roots));
  }
  if (feet_.empty()) {
    throw StructuralError("skeleton: foot list is empty");
  }
  for (int f : feet_) {
    if (f < 0 || f >= n) {
      throw StructuralError("skeleton: foot index out of range");
    }
  }
  if (pelvis_ < 0 || pelvis_ >= n) {
    throw StructuralError("skeleton: pelvis index out of range");
  }
}

double Skeleton::total_mass() const {
  double m = 0.0;
  for (const Joint& j : joints_) m += j.mass;
  return m;
}

const Skeleton& default_humanoid() {
  static const Skeleton skel = [] {
    const std::vector<Vec3> sole = {
        {-0.08, 0.045, -0.06}, {-0.08, -0.045, -0.06},
        {0.12, 0.045, -0.06},  {0.12, -0.045, -0.06}};
    std::vector<Joint> j = {
        {"pelvis", -1, {0, 0, 0}, 10.0, 0.12, {}},
        {"spine", 0, {0, 0, 0.25}, 14.0, 0.12, {}},
        {"head", 1, {0, 0, 0.30}, 5.0, 0.10, {}},
        {"l_hip", 0, {0, 0.09, -0.06}, 7.0, 0.08, {}},
        {"l_knee", 3, {0, 0, -0.42}, 4.0, 0.06, {}},
        {"l_ankle", 4, {0, 0, -0.40}, 1.5, 0.06, sole},
        {"r_hip", 0, {0, -0.09, -0.06}, 7.0, 0.08, {}},
        {"r_knee", 6, {0, 0, -0.42}, 4.0, 0.06, {}},
        {"r_ankle", 7, {0, 0, -0.40}, 1.5, 0.06, sole},
        {"l_shoulder", 1, {0, 0.18, 0.22}, 2.5, 0.05, {}},
        {"l_elbow", 9, {0, 0, -0.28}, 2.0, 0.05, {}},
        {"r_shoulder", 1, {0, -0.18, 0.22}, 2.5, 0.05, {}},
        {"r_elbow", 11, {0, 0, -0.28}, 2.0, 0.05, {}},
    };
    return Skeleton("humanoid13", std::move(j), {5, 8}, 0);
  }();
  return skel;
}

// ---------------------------------------------------------------------------

void check_pose(const Skeleton& skeleton, const Pose& pose) {
  if (static_cast<int>(pose.joint_rot.size()) != skeleton.num_joints()) {
    throw StructuralError("pose has " + std::to_string(pose.joint_rot.size()) +
                          " joint rotations, skeleton '" + skeleton.name() +
                          "' has " + std::to_string(skeleton.num_joints()));
  }
}

void check_sequence(const Skeleton& skeleton, const MotionSequence& seq) {
  if (seq.length() < 2) {
    throw InputError("motion sequence needs at least 2 frames, got " +
                     std::to_string(seq.length()));
  }
  if (seq.fps < 10 || seq.fps > 120) {
    throw InputError("motion fps must be in [10, 120], got " +
                     std::to_string(seq.fps));
  }
  if (seq.skeleton != skeleton.name()) {
    throw StructuralError("motion references skeleton '" + seq.skeleton +
                          "' but '" + skeleton.name() + "' was supplied");
  }
  for (const Pose& p : seq.frames) check_pose(skeleton, p);
}

WorldPose forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
  check_pose(skeleton, pose);
  const int n = skeleton.num_joints();
  WorldPose out;
  out.positions.resize(static_cast<size_t>(n));
  out.rotations.resize(static_cast<size_t>(n));
  out.positions[0] = pose.root_pos;
  out.rotations[0] = pose.joint_rot[0];
  for (int i = 1; i < n; ++i) {
    const auto ui = static_cast<size_t>(i);
    const auto p = static_cast<size_t>(skeleton.parent(i));
    out.positions[ui] = out.positions[p] + out.rotations[p] * skeleton.joint(i).offset;
    out.rotations[ui] = out.rotations[p] * pose.joint_rot[ui];
  }
  return out;
}

void pose_velocities(const WorldPose& prev_world, const Pose& prev,
                     const WorldPose& cur_world, const Pose& cur, double fps,
                     std::vector<Vec3>& lin_vel, std::vector<Vec3>& ang_vel) {
  const size_t n = cur.joint_rot.size();
  lin_vel.resize(n);
  ang_vel.resize(n);
  for (size_t j = 0; j < n; ++j) {
    lin_vel[j] = (cur_world.positions[j] - prev_world.positions[j]) * fps;
    // log(R_l R_{l-1}^-1) is the increment expressed in the parent frame
    ang_vel[j] = quat_log(cur.joint_rot[j] * prev.joint_rot[j].conjugate()) * fps;
  }
}

MotionDerivatives derive_velocities(const Skeleton& skeleton,
                                    const MotionSequence& seq) {
  if (seq.length() < 2) {
    throw InputError("derive_velocities needs at least 2 frames");
  }
  const auto L = static_cast<size_t>(seq.length());
  MotionDerivatives d;
  d.joint_pos.resize(L);
  d.lin_vel.resize(L);
  d.ang_vel.resize(L);
  std::vector<WorldPose> world(L);
  for (size_t l = 0; l < L; ++l) {
    world[l] = forward_kinematics(skeleton, seq.frames[l]);
    d.joint_pos[l] = world[l].positions;
  }
  const double fps = seq.fps;
  for (size_t l = 1; l < L; ++l) {
    pose_velocities(world[l - 1], seq.frames[l - 1], world[l], seq.frames[l], fps,
                    d.lin_vel[l], d.ang_vel[l]);
  }
  d.lin_vel[0] = d.lin_vel[1];
  d.ang_vel[0] = d.ang_vel[1];
  return d;
}

double mpjpe(std::span<const std::vector<Vec3>> a,
             std::span<const std::vector<Vec3>> b) {
  if (a.size() != b.size() || a.empty()) {
    throw InputError("mpjpe: frame counts differ or are zero");
  }
  double sum = 0.0;
  size_t count = 0;
  for (size_t l = 0; l < a.size(); ++l) {
    if (a[l].size() != b[l].size()) {
      throw InputError("mpjpe: joint counts differ");
    }
    for (size_t j = 0; j < a[l].size(); ++j) {
      sum += (a[l][j] - b[l][j]).norm();
    }
    count += a[l].size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double pose_mpjpe(const Skeleton& skeleton, const Pose& a, const Pose& b) {
  const WorldPose wa = forward_kinematics(skeleton, a);
  const WorldPose wb = forward_kinematics(skeleton, b);
  double sum = 0.0;
  for (size_t j = 0; j < wa.positions.size(); ++j) {
    sum += (wa.positions[j] - wb.positions[j]).norm();
  }
  return sum / static_cast<double>(wa.positions.size());
}

double mpjpe(const Skeleton& skeleton, const MotionSequence& a,
             const MotionSequence& b) {
  if (a.length() != b.length()) {
    throw InputError("mpjpe: sequences have " + std::to_string(a.length()) +
                     " and " + std::to_string(b.length()) + " frames");
  }
  if (a.skeleton != b.skeleton || a.skeleton != skeleton.name()) {
    throw InputError("mpjpe: skeleton mismatch");
  }
  std::vector<std::vector<Vec3>> pa, pb;
  pa.reserve(a.frames.size());
  pb.reserve(b.frames.size());
  for (size_t l = 0; l < a.frames.size(); ++l) {
    pa.push_back(forward_kinematics(skeleton, a.frames[l]).positions);
    pb.push_back(forward_kinematics(skeleton, b.frames[l]).positions);
  }
  return mpjpe(pa, pb);
}

Pose canonicalize(const Pose& pose) {
  Pose out = pose;
  for (Quat& q : out.joint_rot) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw InputError("canonicalize: zero-norm or non-finite quaternion");
    }
    if (std::abs(n - 1.0) > 4.0 * std::numeric_limits<double>::epsilon()) {
      q.coeffs() /= n;
    }
    if (q.w() < 0.0) {
      q.coeffs() = -q.coeffs();
    }
  }
  return out;
}

Vec3 center_of_mass(const Skeleton& skeleton, const WorldPose& world) {
  Vec3 c = Vec3::Zero();
  for (int j = 0; j < skeleton.num_joints(); ++j) {
    c += skeleton.joint(j).mass * world.positions[static_cast<size_t>(j)];
  }
  return c / skeleton.total_mass();
}

double lowest_point(const Skeleton& skeleton, const WorldPose& world) {
  double low = std::numeric_limits<double>::infinity();
  for (int j = 0; j < skeleton.num_joints(); ++j) {
    low = std::min(low, world.positions[static_cast<size_t>(j)].z() -
                            skeleton.joint(j).collision_radius);
  }
  return low;
}

} // namespace morph
