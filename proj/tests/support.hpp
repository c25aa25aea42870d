#pragma once

#include "morph/motion.hpp"

#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

namespace morph::test {

inline Quat random_quat(std::mt19937_64& rng, double max_angle = M_PI) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis(n(rng), n(rng), n(rng));
  axis.normalize();
  Quat q(Eigen::AngleAxisd(u(rng), axis));
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

inline Pose random_pose(const Skeleton& sk, std::mt19937_64& rng, double max_angle = 0.6,
                        double root_z = 1.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Pose p;
  p.root_pos = Vec3(u(rng), u(rng), root_z + 0.3 * u(rng));
  for (int j = 0; j < sk.num_joints(); ++j) p.joint_rot.push_back(random_quat(rng, max_angle));
  return p;
}

/// Smoothly varying clip: a random walk in rotation space around a random pose.
inline MotionSequence random_clip(const Skeleton& sk, std::mt19937_64& rng, int frames = 40,
                                  int fps = 30) {
  std::normal_distribution<double> n(0.0, 1.0);
  MotionSequence m;
  m.fps = fps;
  m.condition = {"walk", rng()};
  m.skeleton = sk.name();
  Pose p = random_pose(sk, rng, 0.4, 0.95);
  for (int l = 0; l < frames; ++l) {
    m.frames.push_back(p);
    p.root_pos += Vec3(0.02 * n(rng), 0.02 * n(rng), 0.01 * n(rng));
    for (Quat& q : p.joint_rot) {
      q = (quat_exp(Vec3(n(rng), n(rng), n(rng)) * 0.05) * q).normalized();
      if (q.w() < 0.0) q.coeffs() *= -1.0;
    }
  }
  return m;
}

/// Static copy of one pose.
inline MotionSequence hold(const Skeleton& sk, const Pose& p, int frames = 30, int fps = 30) {
  MotionSequence m;
  m.fps = fps;
  m.condition = {"stand", 0};
  m.skeleton = sk.name();
  m.frames.assign(static_cast<size_t>(frames), p);
  return m;
}

inline Pose rest_pose(const Skeleton& sk) {
  Pose p;
  p.joint_rot.assign(static_cast<size_t>(sk.num_joints()), Quat::Identity());
  return p;
}

/// Rest pose lifted so the lowest collision sphere touches z = 0.
inline Pose grounded_rest(const Skeleton& sk) {
  Pose p = rest_pose(sk);
  const WorldPose w = forward_kinematics(sk, p);
  p.root_pos.z() = -lowest_point(sk, w);
  return p;
}

/// Joint positions from a product of homogeneous transforms along each
/// root-to-joint path; shares no code with forward_kinematics.
inline std::vector<Vec3> chain_positions(const Skeleton& sk, const Pose& pose) {
  std::vector<Vec3> out;
  for (int j = 0; j < sk.num_joints(); ++j) {
    std::vector<int> path;
    for (int k = j; k >= 0; k = sk.parent(k)) path.push_back(k);
    Eigen::Matrix4d t = Eigen::Matrix4d::Identity();
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      const int k = *it;
      Eigen::Matrix4d step = Eigen::Matrix4d::Identity();
      step.topLeftCorner<3, 3>() = pose.joint_rot[static_cast<size_t>(k)].toRotationMatrix();
      step.topRightCorner<3, 1>() = k == 0 ? pose.root_pos : sk.joint(k).offset;
      t = t * step;
    }
    out.push_back(t.topRightCorner<3, 1>());
  }
  return out;
}

} // namespace morph::test
