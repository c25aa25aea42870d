#include "morph/synth.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>

namespace morph {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

Quat rot_x(double a) { return Quat(Eigen::AngleAxisd(a, Vec3::UnitX())); }
Quat rot_y(double a) { return Quat(Eigen::AngleAxisd(a, Vec3::UnitY())); }
Quat rot_z(double a) { return Quat(Eigen::AngleAxisd(a, Vec3::UnitZ())); }

struct Rig {
  int spine, head, l_hip, l_knee, l_ankle, r_hip, r_knee, r_ankle;
  int l_shoulder, l_elbow, r_shoulder, r_elbow;
};

Rig rig_of(const Skeleton& skeleton) {
  auto find = [&](const char* name) {
    for (int j = 0; j < skeleton.num_joints(); ++j) {
      if (skeleton.joint(j).name == name) return j;
    }
    throw StructuralError(std::string("synthetic presets need a joint named '") + name +
                          "' in skeleton '" + skeleton.name() + "'");
  };
  return {find("spine"),      find("head"),    find("l_hip"),      find("l_knee"),
          find("l_ankle"),    find("r_hip"),   find("r_knee"),     find("r_ankle"),
          find("l_shoulder"), find("l_elbow"), find("r_shoulder"), find("r_elbow")};
}

Vec3 feet_center(const Skeleton& skeleton, const WorldPose& w) {
  Vec3 c = Vec3::Zero();
  for (int f : skeleton.feet()) c += w.positions[static_cast<size_t>(f)];
  return c / static_cast<double>(skeleton.feet().size());
}

// Trunk lean that puts the centre of mass over the middle of the soles.
double balance_lean(const Skeleton& skeleton, Pose pose, const Rig& rig, double thigh,
                    double arm_raise) {
  auto apply = [&](double b) {
    pose.joint_rot[0] = rot_y(b);
    pose.joint_rot[static_cast<size_t>(rig.l_hip)] = rot_y(-b - thigh);
    pose.joint_rot[static_cast<size_t>(rig.r_hip)] = rot_y(-b - thigh);
    pose.joint_rot[static_cast<size_t>(rig.l_shoulder)] = rot_y(-b - arm_raise);
    pose.joint_rot[static_cast<size_t>(rig.r_shoulder)] = rot_y(-b - arm_raise);
    const WorldPose w = forward_kinematics(skeleton, pose);
    return center_of_mass(skeleton, w).x() - (feet_center(skeleton, w).x() + 0.02);
  };
  double lo = -0.5;
  double hi = 1.5;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (apply(mid) > 0.0) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Two-link leg pose putting the ankle at `ankle` with the foot level.
void leg_ik(const Skeleton& skeleton, Pose& pose, int hip, int knee, int ankle_joint,
            const Vec3& ankle) {
  const double a = skeleton.joint(knee).offset.norm();
  const double b = skeleton.joint(ankle_joint).offset.norm();
  const Vec3 d = ankle - (pose.root_pos + skeleton.joint(hip).offset);
  const double roll = std::atan2(d.y(), -d.z());
  const double down = std::hypot(d.y(), d.z());
  const double reach = std::min(std::hypot(d.x(), down), a + b - 1e-6);
  const double bend = kPi - std::acos(std::clamp((a * a + b * b - reach * reach) / (2 * a * b), -1.0, 1.0));
  const double forward = std::atan2(d.x(), down);
  const double lift = std::asin(std::clamp(b * std::sin(bend) / reach, -1.0, 1.0));
  const double pitch = -(forward + lift);
  pose.joint_rot[static_cast<size_t>(hip)] = rot_x(roll) * rot_y(pitch);
  pose.joint_rot[static_cast<size_t>(knee)] = rot_y(bend);
  pose.joint_rot[static_cast<size_t>(ankle_joint)] = rot_y(-(pitch + bend)) * rot_x(-roll);
}

// Quasi-static gait: weight shifts during double support, the centre of mass
// stays over the planted foot while the other foot swings.
Pose walk_pose(const Skeleton& skeleton, const Rig& rig, double t, double variation) {
  const double inward = 0.25;
  const double step_len = 0.22 + 0.06 * variation;
  const double step_time = 1.5;
  const double double_time = 1.0;
  const double lift = 0.06;
  const double width = std::abs(skeleton.joint(rig.l_hip).offset.y());
  const double ankle_z = skeleton.joint(rig.l_ankle).collision_radius;

  const int k = static_cast<int>(std::floor(t / step_time));
  const double u = t - k * step_time;
  // step k moves the right foot when k is even, the left foot when odd
  auto foot_x = [&](bool left, int steps_done) {
    if (steps_done <= 0) return 0.0;
    const int last = left ? (steps_done % 2 == 0 ? steps_done - 1 : steps_done - 2)
                          : (steps_done % 2 == 1 ? steps_done - 1 : steps_done - 2);
    return last < 0 ? 0.0 : (last + 1) * step_len;
  };
  const bool swing_left = k % 2 == 1;
  Vec3 left(foot_x(true, k), width, ankle_z);
  Vec3 right(foot_x(false, k), -width, ankle_z);
  Vec3& swing = swing_left ? left : right;
  const Vec3& stance = swing_left ? right : left;
  const double stance_side = swing_left ? -1.0 : 1.0;

  const Vec3 sole(0.02, 0.0, 0.0);
  Vec3 target = stance + sole - Vec3(0, stance_side * inward * width, 0);
  if (u < double_time) {
    Vec3 from;
    if (k == 0) {
      from = 0.5 * (left + right) + sole;
    } else {
      const Vec3& prev = swing;  // the foot about to swing supported the last step
      from = prev + sole + Vec3(0, stance_side * inward * width, 0);
    }
    const double w = 0.5 * (1.0 - std::cos(kPi * u / double_time));
    target = from + w * (target - from);
  } else {
    const double w = (u - double_time) / (step_time - double_time);
    const double s = 0.5 * (1.0 - std::cos(kPi * w));
    const double to = (k + 1) * step_len;
    swing.x() += s * (to - swing.x());
    swing.z() += lift * std::sin(kPi * w);
  }

  Pose p;
  p.joint_rot.assign(static_cast<size_t>(skeleton.num_joints()), Quat::Identity());
  p.root_pos = Vec3(target.x(), target.y(), ankle_z + 0.75 - skeleton.joint(rig.l_hip).offset.z());
  for (int it = 0; it < 30; ++it) {
    leg_ik(skeleton, p, rig.l_hip, rig.l_knee, rig.l_ankle, left);
    leg_ik(skeleton, p, rig.r_hip, rig.r_knee, rig.r_ankle, right);
    p.joint_rot[static_cast<size_t>(rig.l_shoulder)] = rot_y(1.2 * (left.x() - p.root_pos.x()));
    p.joint_rot[static_cast<size_t>(rig.r_shoulder)] = rot_y(1.2 * (right.x() - p.root_pos.x()));
    p.joint_rot[static_cast<size_t>(rig.l_elbow)] = rot_y(-0.3);
    p.joint_rot[static_cast<size_t>(rig.r_elbow)] = rot_y(-0.3);
    const Vec3 com = center_of_mass(skeleton, forward_kinematics(skeleton, p));
    p.root_pos.x() += target.x() - com.x();
    p.root_pos.y() += target.y() - com.y();
  }
  return p;
}

// Local rotations (root at origin, root rotation without yaw) for one frame.
Pose preset_pose(const Skeleton& skeleton, const Rig& rig, const std::string& preset,
                 double t, double variation) {
  Pose p;
  p.joint_rot.assign(static_cast<size_t>(skeleton.num_joints()), Quat::Identity());
  auto set = [&](int j, const Quat& q) { p.joint_rot[static_cast<size_t>(j)] = q; };
  const double amp = 0.9 + 0.2 * variation;
  if (preset == "walk") {
    return walk_pose(skeleton, rig, t, variation);
  } else if (preset == "squat") {
    const double period = 3.0;
    const double depth = 0.3 * (1.0 - std::cos(kTwoPi * t / period)) * amp;
    const double thigh = 0.9 * depth;
    const double shank = 0.55 * depth;
    const double arm_raise = 1.2 * depth;
    set(rig.l_knee, rot_y(thigh + shank));
    set(rig.r_knee, rot_y(thigh + shank));
    set(rig.l_ankle, rot_y(-shank));
    set(rig.r_ankle, rot_y(-shank));
    const double b = balance_lean(skeleton, p, rig, thigh, arm_raise);
    set(0, rot_y(b));
    set(rig.l_hip, rot_y(-b - thigh));
    set(rig.r_hip, rot_y(-b - thigh));
    set(rig.l_shoulder, rot_y(-b - arm_raise));
    set(rig.r_shoulder, rot_y(-b - arm_raise));
  } else if (preset == "wave") {
    const double period = 0.8;
    set(rig.r_shoulder, rot_x(-2.2 * amp));
    set(rig.r_elbow, rot_x(-0.5 - 0.4 * std::sin(kTwoPi * t / period + kTwoPi * variation)));
    set(rig.l_elbow, rot_y(-0.2));
  } else if (preset == "stand") {
    set(rig.l_elbow, rot_y(-0.1 * amp));
    set(rig.r_elbow, rot_y(-0.1 * amp));
  } else {
    throw InputError("unknown preset '" + preset + "'");
  }
  return p;
}

} // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"walk", "squat", "wave", "stand"};
  return names;
}

bool is_preset(const std::string& label) {
  const auto& n = preset_names();
  return std::find(n.begin(), n.end(), label) != n.end();
}

void ArtifactSpec::validate() const {
  for (double v : {float_m, penetrate_m, skate_drift_mps, lean_deg, jitter_rad}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InputError("artifact amounts must be >= 0");
  }
  if (float_m > 0.0 && penetrate_m > 0.0) {
    throw InputError("float and penetrate artifacts cannot both be set");
  }
  if (lean_deg >= 90.0) throw InputError("lean must be below 90 degrees");
}

bool ArtifactSpec::is_clean() const {
  return float_m == 0.0 && penetrate_m == 0.0 && skate_drift_mps == 0.0 && lean_deg == 0.0 &&
         jitter_rad == 0.0;
}

Json ArtifactSpec::to_json() const {
  return {{"float_m", float_m},
          {"penetrate_m", penetrate_m},
          {"skate_drift_mps", skate_drift_mps},
          {"lean_deg", lean_deg},
          {"jitter_rad", jitter_rad},
          {"seed", seed}};
}

ArtifactSpec ArtifactSpec::from_json(const JsonFile& f, const std::string& base) {
  ArtifactSpec a;
  auto num = [&](const char* key, double& field) {
    if (f.has(base + "/" + key)) field = f.number(base + "/" + key);
  };
  num("float_m", a.float_m);
  num("penetrate_m", a.penetrate_m);
  num("skate_drift_mps", a.skate_drift_mps);
  num("lean_deg", a.lean_deg);
  num("jitter_rad", a.jitter_rad);
  if (f.has(base + "/seed")) {
    const auto s = f.integer(base + "/seed");
    if (s < 0) f.fail(base + "/seed", "must be >= 0");
    a.seed = static_cast<std::uint64_t>(s);
  }
  try {
    a.validate();
  } catch (const InputError& e) {
    f.fail(base.empty() ? "/" : base, e.what());
  }
  return a;
}

MotionSequence synth_clean(const Skeleton& skeleton, const std::string& preset,
                           double variation, double yaw, const SynthOptions& options) {
  if (!is_preset(preset)) throw InputError("unknown preset '" + preset + "'");
  if (options.frames < 2) throw InputError("synthetic clips need at least 2 frames");
  if (options.fps < 10 || options.fps > 120) throw InputError("fps must be in [10, 120]");
  const Rig rig = rig_of(skeleton);
  const Quat heading = rot_z(yaw);

  MotionSequence seq;
  seq.fps = options.fps;
  seq.skeleton = skeleton.name();
  seq.condition.label = preset;
  Vec3 root_xy = Vec3::Zero();
  std::vector<Vec3> prev_rel;
  for (int l = 0; l < options.frames; ++l) {
    const double t = static_cast<double>(l) / options.fps;
    Pose p = preset_pose(skeleton, rig, preset, t, variation);
    p.joint_rot[0] = heading * p.joint_rot[0];
    if (preset == "walk") {
      // feet are placed explicitly; only rotate the path to the heading
      p.root_pos = heading * p.root_pos;
      const WorldPose w = forward_kinematics(skeleton, p);
      p.root_pos.z() -= lowest_point(skeleton, w);
      seq.frames.push_back(canonicalize(p));
      continue;
    }
    p.root_pos = Vec3::Zero();
    const WorldPose w = forward_kinematics(skeleton, p);
    std::vector<Vec3> rel;
    for (int f : skeleton.feet()) rel.push_back(w.positions[static_cast<size_t>(f)]);
    if (l > 0) {
      // keep the planted (lowest) foot fixed on the ground
      size_t stance = 0;
      for (size_t k = 1; k < rel.size(); ++k) {
        if (rel[k].z() < rel[stance].z()) stance = k;
      }
      Vec3 d = rel[stance] - prev_rel[stance];
      d.z() = 0.0;
      root_xy -= d;
    }
    prev_rel = rel;
    p.root_pos = root_xy;
    p.root_pos.z() = -lowest_point(skeleton, w);
    seq.frames.push_back(canonicalize(p));
  }
  return seq;
}

MotionSequence inject_artifacts(const Skeleton& skeleton, const MotionSequence& clean,
                                const ArtifactSpec& spec, std::uint64_t index) {
  spec.validate();
  check_sequence(skeleton, clean);
  MotionSequence out = clean;
  if (spec.is_clean()) return out;
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + index + 1);
  std::normal_distribution<double> normal(0.0, 1.0);

  if (spec.jitter_rad > 0.0) {
    for (Pose& p : out.frames) {
      for (size_t j = 1; j < p.joint_rot.size(); ++j) {
        const Vec3 n(normal(rng), normal(rng), normal(rng));
        p.joint_rot[j] = quat_exp(spec.jitter_rad * n) * p.joint_rot[j];
      }
    }
  }
  if (spec.lean_deg > 0.0) {
    const WorldPose w0 = forward_kinematics(skeleton, clean.frames.front());
    Vec3 pivot = feet_center(skeleton, w0);
    pivot.z() = 0.0;
    const Quat heading = heading_of(clean.frames.front().joint_rot[0]);
    const Vec3 lateral = heading * Vec3::UnitY();
    const Quat tilt(Eigen::AngleAxisd(-spec.lean_deg * kPi / 180.0, lateral));
    for (Pose& p : out.frames) {
      p.root_pos = pivot + tilt * (p.root_pos - pivot);
      p.joint_rot[0] = tilt * p.joint_rot[0];
    }
  }
  if (spec.skate_drift_mps > 0.0) {
    const double tol = 0.005;
    double drift = 0.0;
    for (size_t l = 0; l < out.frames.size(); ++l) {
      if (l > 0) {
        const WorldPose w = forward_kinematics(skeleton, clean.frames[l]);
        bool contact = false;
        for (int f : skeleton.feet()) {
          const auto fi = static_cast<size_t>(f);
          contact |= w.positions[fi].z() - skeleton.joint(f).collision_radius <= tol;
        }
        if (contact) drift += spec.skate_drift_mps / clean.fps;
      }
      out.frames[l].root_pos.x() += drift;
    }
  }
  const double dz = spec.float_m - spec.penetrate_m;
  for (Pose& p : out.frames) {
    p.root_pos.z() += dz;
    p = canonicalize(p);
  }
  return out;
}

SynthBatch synth_generate(const Skeleton& skeleton, const std::string& preset, int count,
                          const ArtifactSpec& spec, std::mt19937_64& rng,
                          const SynthOptions& options) {
  if (!is_preset(preset)) throw InputError("unknown preset '" + preset + "'");
  if (count < 1) throw InputError("count must be >= 1");
  spec.validate();
  SynthBatch b;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < count; ++i) {
    const double variation = unit(rng);
    const double yaw = kTwoPi * unit(rng) - kPi;
    const std::uint64_t seed = rng();
    MotionSequence clean = synth_clean(skeleton, preset, variation, yaw, options);
    clean.condition.seed = seed;
    b.noisy.push_back(inject_artifacts(skeleton, clean, spec, static_cast<std::uint64_t>(i)));
    b.clean.push_back(std::move(clean));
  }
  return b;
}

} // namespace morph
