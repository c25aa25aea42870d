#pragma once

#include "morph/motion.hpp"

#include <optional>
#include <span>
#include <vector>

namespace morph {

struct ContactParams {
  double contact_height_mm = 5.0;
  /// Accepted and reported for completeness; the normative Skate and PFC
  /// definitions gate contact on height only.
  double contact_vel_mps = 0.1;

  void validate() const;
};

struct PlausibilityFrame {
  double penetrate_mm = 0.0;
  double float_mm = 0.0;
};

struct PlausibilityReport {
  double penetrate_mm = 0.0;
  double float_mm = 0.0;
  double skate_mm = 0.0;
  double pfc = 0.0;
  std::vector<PlausibilityFrame> per_frame;
};

/// Mean over frames of the depth (mm) of the lowest collision-sphere bottom
/// below z = 0.
double penetrate(const Skeleton& skeleton, const MotionSequence& seq);

/// Mean over frames of the height (mm) of the lowest collision-sphere bottom
/// above the contact tolerance.
double float_metric(const Skeleton& skeleton, const MotionSequence& seq,
                    const ContactParams& params = {});

/// Mean horizontal foot displacement (mm per frame) over frame pairs in
/// which the foot sphere bottom stays within the contact tolerance, computed
/// per foot and averaged over feet that have contact.
double skate(const Skeleton& skeleton, const MotionSequence& seq,
             const ContactParams& params = {});

/// Physical foot contact score: mean of |a_com| * prod |v_foot| over
/// interior frames divided by max |a_com|, with downward vertical COM
/// acceleration clamped to zero.
double pfc(const Skeleton& skeleton, const MotionSequence& seq);

PlausibilityReport evaluate_plausibility(const Skeleton& skeleton,
                                         const MotionSequence& seq,
                                         const ContactParams& params = {},
                                         bool per_frame = false);

/// Fraction of rejected imitations. `accepted[i]` is the selection outcome
/// of sequence i. Throws InputError on an empty list.
double aggregate_ifr(const std::vector<bool>& accepted);

/// Element-wise mean of several reports (per-frame data dropped).
PlausibilityReport mean_report(std::span<const PlausibilityReport> reports);

} // namespace morph
