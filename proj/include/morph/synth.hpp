#pragma once

#include "morph/json_file.hpp"
#include "morph/motion.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace morph {

/// Registered preset labels: "walk", "squat", "wave", "stand".
const std::vector<std::string>& preset_names();
bool is_preset(const std::string& label);

struct ArtifactSpec {
  double float_m = 0.0;
  double penetrate_m = 0.0;
  double skate_drift_mps = 0.0;  ///< root drift along +X while a foot is planted
  double lean_deg = 0.0;         ///< backward tilt about the feet midpoint
  double jitter_rad = 0.0;       ///< per-joint Gaussian rotation noise std
  std::uint64_t seed = 0;

  void validate() const;
  bool is_clean() const;
  Json to_json() const;
  static ArtifactSpec from_json(const JsonFile& file, const std::string& base);
};

struct SynthOptions {
  int frames = 90;
  int fps = 30;
};

struct SynthBatch {
  std::vector<MotionSequence> noisy;
  std::vector<MotionSequence> clean;
};

/// One clean clip of a preset. `variation` in [0, 1) shifts amplitude and
/// phase; `yaw` sets the facing direction.
MotionSequence synth_clean(const Skeleton& skeleton, const std::string& preset,
                           double variation, double yaw, const SynthOptions& options = {});

/// Applies artifacts to a clean clip. Clip `index` draws its noise from
/// `spec.seed` and the index.
MotionSequence inject_artifacts(const Skeleton& skeleton, const MotionSequence& clean,
                                const ArtifactSpec& spec, std::uint64_t index = 0);

/// `count` clean clips with per-clip variation drawn from `rng`, and their
/// noisy twins. Throws InputError for an unknown preset or count < 1.
SynthBatch synth_generate(const Skeleton& skeleton, const std::string& preset, int count,
                          const ArtifactSpec& spec, std::mt19937_64& rng,
                          const SynthOptions& options = {});

} // namespace morph
