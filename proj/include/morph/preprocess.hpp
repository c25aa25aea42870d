#pragma once

#include "morph/motion.hpp"

namespace morph {

struct PreprocessParams {
  double tilt_threshold_deg = 10.0;
  int reference_frame = 0;
};

/// Angle in degrees between the pelvis -> feet-midpoint line and the
/// vertical direction along which the centre of mass projects onto the
/// ground. Throws DegenerateGeometryError when pelvis and feet midpoint
/// coincide.
double tilt_angle(const Skeleton& skeleton, const Pose& pose);

/// Rigidly rotates every frame about the horizontal axis through the
/// reference frame's feet midpoint so the measured `angle_deg` tilt is
/// undone. The axis is taken from the reference frame's lean direction.
MotionSequence correct_tilt(const Skeleton& skeleton, const MotionSequence& seq,
                            double angle_deg, int reference_frame = 0);

/// Shifts every frame vertically so the reference frame's lowest
/// collision-sphere bottom sits at z = 0.
MotionSequence ground_align(const Skeleton& skeleton, const MotionSequence& seq,
                            int reference_frame = 0);

/// Tilt correction (only above the threshold) followed by ground alignment.
MotionSequence preprocess(const Skeleton& skeleton, const MotionSequence& seq,
                          const PreprocessParams& params = {});

} // namespace morph
