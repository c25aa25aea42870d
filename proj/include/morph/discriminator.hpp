#pragma once

#include "morph/motion.hpp"
#include "morph/nn.hpp"

#include <span>
#include <vector>

namespace morph {

/// Clamp applied to discriminator outputs before any logarithm.
inline constexpr double kDiscEpsilon = 1e-4;

/// Feature length for a skeleton: 6D rotations, root-relative positions,
/// linear and angular velocities of every joint.
int disc_feature_size(const Skeleton& skeleton);

/// Single-pose feature vector in the pose's own heading frame. Layout, per
/// joint in index order:
///   [0, 6n)     rotations (root: heading-removed world rotation; others local)
///   [6n, 9n)    joint position minus root position
///   [9n, 12n)   world linear velocity
///   [12n, 15n)  angular velocity (root rotated into the heading frame)
Vector disc_features(const Skeleton& skeleton, const Pose& pose, const WorldPose& world,
                     std::span<const Vec3> lin_vel, std::span<const Vec3> ang_vel);

/// Features for every frame of a sequence, one column per frame.
Matrix sequence_disc_features(const Skeleton& skeleton, const MotionSequence& seq);

/// Binary cross-entropy with real labelled 1 and fake labelled 0; outputs
/// are clamped to [eps, 1 - eps].
double disc_loss(std::span<const double> d_real, std::span<const double> d_fake);

/// Per-sample output gradients of disc_loss (zero where the clamp is
/// active).
void disc_loss_grad(std::span<const double> d_real, std::span<const double> d_fake,
                    std::vector<double>& g_real, std::vector<double>& g_fake);

struct DiscUpdateStats {
  double loss = 0.0;  ///< before the step
  double mean_real = 0.0;
  double mean_fake = 0.0;
  bool skipped = false;
};

/// One Adam step on the discriminator loss. Columns of `real` and `fake`
/// are samples; batch sizes must match.
DiscUpdateStats disc_update(MlpParams& disc, const Matrix& real, const Matrix& fake,
                            AdamState& adam);

/// Clamped discriminator probability for each column.
std::vector<double> disc_scores(const MlpParams& disc, const Matrix& features);

} // namespace morph
