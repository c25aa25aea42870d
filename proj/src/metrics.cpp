#include "morph/metrics.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>

namespace morph {

namespace {

std::vector<WorldPose> pose_all(const Skeleton& skeleton, const MotionSequence& seq) {
  check_sequence(skeleton, seq);
  std::vector<WorldPose> out;
  out.reserve(seq.frames.size());
  for (const Pose& p : seq.frames) out.push_back(forward_kinematics(skeleton, p));
  return out;
}

double penetrate_of(const Skeleton& skeleton, const std::vector<WorldPose>& world) {
  double sum = 0.0;
  for (const WorldPose& w : world) sum += std::max(0.0, -lowest_point(skeleton, w));
  return 1000.0 * sum / static_cast<double>(world.size());
}

double float_of(const Skeleton& skeleton, const std::vector<WorldPose>& world,
                const ContactParams& params) {
  const double tol = params.contact_height_mm / 1000.0;
  double sum = 0.0;
  for (const WorldPose& w : world) sum += std::max(0.0, lowest_point(skeleton, w) - tol);
  return 1000.0 * sum / static_cast<double>(world.size());
}

double skate_of(const Skeleton& skeleton, const std::vector<WorldPose>& world,
                const ContactParams& params) {
  const double tol = params.contact_height_mm / 1000.0;
  double feet_sum = 0.0;
  int feet_with_contact = 0;
  for (int f : skeleton.feet()) {
    const auto fi = static_cast<size_t>(f);
    const double r = skeleton.joint(f).collision_radius;
    double sum = 0.0;
    int pairs = 0;
    for (size_t l = 1; l < world.size(); ++l) {
      const Vec3& a = world[l - 1].positions[fi];
      const Vec3& b = world[l].positions[fi];
      if (a.z() - r <= tol && b.z() - r <= tol) {
        sum += std::hypot(b.x() - a.x(), b.y() - a.y());
        ++pairs;
      }
    }
    if (pairs > 0) {
      feet_sum += sum / pairs;
      ++feet_with_contact;
    }
  }
  return feet_with_contact == 0 ? 0.0 : 1000.0 * feet_sum / feet_with_contact;
}

double pfc_of(const Skeleton& skeleton, const std::vector<WorldPose>& world, double fps) {
  const size_t L = world.size();
  if (L < 3) {
    throw InputError("pfc needs at least 3 frames");
  }
  std::vector<Vec3> com(L);
  for (size_t l = 0; l < L; ++l) com[l] = center_of_mass(skeleton, world[l]);
  double sum = 0.0;
  double max_acc = 0.0;
  for (size_t i = 1; i + 1 < L; ++i) {
    Vec3 acc = (com[i + 1] - 2.0 * com[i] + com[i - 1]) * fps * fps;
    acc.z() = std::max(acc.z(), 0.0);
    const double a = acc.norm();
    double s = a;
    for (int f : skeleton.feet()) {
      const auto fi = static_cast<size_t>(f);
      s *= (world[i].positions[fi] - world[i - 1].positions[fi]).norm() * fps;
    }
    sum += s;
    max_acc = std::max(max_acc, a);
  }
  if (max_acc == 0.0) return 0.0;
  return sum / static_cast<double>(L - 2) / max_acc;
}

} // namespace

void ContactParams::validate() const {
  if (!(contact_height_mm > 0.0) || !std::isfinite(contact_height_mm)) {
    throw InputError("contact height must be > 0 mm");
  }
  if (!(contact_vel_mps > 0.0) || !std::isfinite(contact_vel_mps)) {
    throw InputError("contact velocity threshold must be > 0 m/s");
  }
}

double penetrate(const Skeleton& skeleton, const MotionSequence& seq) {
  return penetrate_of(skeleton, pose_all(skeleton, seq));
}

double float_metric(const Skeleton& skeleton, const MotionSequence& seq,
                    const ContactParams& params) {
  params.validate();
  return float_of(skeleton, pose_all(skeleton, seq), params);
}

double skate(const Skeleton& skeleton, const MotionSequence& seq,
             const ContactParams& params) {
  params.validate();
  return skate_of(skeleton, pose_all(skeleton, seq), params);
}

double pfc(const Skeleton& skeleton, const MotionSequence& seq) {
  return pfc_of(skeleton, pose_all(skeleton, seq), seq.fps);
}

PlausibilityReport evaluate_plausibility(const Skeleton& skeleton,
                                         const MotionSequence& seq,
                                         const ContactParams& params, bool per_frame) {
  params.validate();
  const auto world = pose_all(skeleton, seq);
  PlausibilityReport r;
  r.penetrate_mm = penetrate_of(skeleton, world);
  r.float_mm = float_of(skeleton, world, params);
  r.skate_mm = skate_of(skeleton, world, params);
  r.pfc = world.size() >= 3 ? pfc_of(skeleton, world, seq.fps) : 0.0;
  if (per_frame) {
    const double tol = params.contact_height_mm / 1000.0;
    for (const WorldPose& w : world) {
      const double low = lowest_point(skeleton, w);
      r.per_frame.push_back({1000.0 * std::max(0.0, -low),
                             1000.0 * std::max(0.0, low - tol)});
    }
  }
  return r;
}

double aggregate_ifr(const std::vector<bool>& accepted) {
  if (accepted.empty()) {
    throw InputError("aggregate_ifr: empty decision list");
  }
  const auto rejected = std::count(accepted.begin(), accepted.end(), false);
  return static_cast<double>(rejected) / static_cast<double>(accepted.size());
}

PlausibilityReport mean_report(std::span<const PlausibilityReport> reports) {
  PlausibilityReport m;
  if (reports.empty()) return m;
  for (const PlausibilityReport& r : reports) {
    m.penetrate_mm += r.penetrate_mm;
    m.float_mm += r.float_mm;
    m.skate_mm += r.skate_mm;
    m.pfc += r.pfc;
  }
  const auto n = static_cast<double>(reports.size());
  m.penetrate_mm /= n;
  m.float_mm /= n;
  m.skate_mm /= n;
  m.pfc /= n;
  return m;
}

} // namespace morph
