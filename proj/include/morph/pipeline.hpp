#pragma once

#include "morph/generator.hpp"
#include "morph/imitator.hpp"
#include "morph/metrics.hpp"
#include "morph/motion_io.hpp"
#include "morph/preprocess.hpp"
#include "morph/synth.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace morph {

// ---------------------------------------------------------------------------
// Refinement and selection
// ---------------------------------------------------------------------------

struct RefineResult {
  MotionSequence motion;  ///< simulated motion, same length and fps as the input
  bool success = true;    ///< false when termination fired or the simulation diverged
  bool diverged = false;
  int terminated_at = -1;  ///< first frame past the termination distance, -1 if none
};

/// Deterministic rollout (policy mean) from frame 0 over the whole input.
/// The simulation keeps running after termination so the output always has
/// the input's length; after a divergence the last finite state is repeated.
RefineResult refine_motion(const Skeleton& skeleton, const GaussianPolicy& policy,
                           const MotionSequence& seq, const SimConfig& sim_config,
                           double termination_m = 0.5);

enum class SelectedSource { Refined, Original };

const char* to_string(SelectedSource source);

struct SelectionDecision {
  std::string id;
  double mpjpe_m = 0.0;
  SelectedSource accepted_source = SelectedSource::Original;
  double tau = 0.5;

  Json to_json() const;
};

/// Accepts the refined motion iff its MPJPE to the original is <= tau.
/// Throws InputError for a negative tau or unequal lengths.
SelectionDecision imitation_select(const Skeleton& skeleton, const std::string& id,
                                   const MotionSequence& original, const MotionSequence& refined,
                                   double tau);

struct RefinedItem {
  std::string id;
  MotionSequence original;  ///< refinement input
  RefineResult refined;
};

/// Refines every sequence in parallel; output order follows the input.
std::vector<RefinedItem> refine_batch(const Skeleton& skeleton, const GaussianPolicy& policy,
                                      std::span<const NamedMotion> inputs,
                                      const SimConfig& sim_config, double termination_m,
                                      int threads);

struct SelectionOutcome {
  std::vector<SelectionDecision> decisions;
  std::vector<MotionSequence> outputs;  ///< refined or original per decision
  double ifr = 0.0;
};

SelectionOutcome select_batch(const Skeleton& skeleton, std::span<const RefinedItem> items,
                              double tau);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

Json metrics_json(const PlausibilityReport& report);

/// Mean plausibility of a batch; throws InputError when empty.
PlausibilityReport batch_metrics(const Skeleton& skeleton, std::span<const MotionSequence> seqs,
                                 const ContactParams& params = {});

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::vector<std::string> presets{"walk", "squat", "wave", "stand"};
  int clips_per_preset = 2;
  /// Applied round-robin over the generated clips.
  std::vector<ArtifactSpec> artifacts;
  SynthOptions synth;
  PreprocessParams preprocess;
  ContactParams contact;
  ImitatorConfig imitator;
  double tau = 0.5;
  int rounds = 1;
  bool finetune = true;
  FinetuneConfig finetune_config;
  std::vector<int> generator_hidden{128};

  static PipelineConfig defaults();
  void validate() const;
  Json to_json() const;
  static PipelineConfig from_json(const JsonFile& file);
};

struct RoundReport {
  Json json;
  bool failed = false;
};

struct PipelineResult {
  std::vector<RoundReport> rounds;
  ImitatorModel model;
  ToyGenerator generator;
  Json summary;  ///< every round plus config hash, seed and the IFR trend
  bool failed = false;
};

/// Generate, preprocess, train, refine and select, fine-tune the generator,
/// and regenerate from it for the next round. A stage failure ends the run
/// with a diagnostic round report.
PipelineResult run_pipeline(const Skeleton& skeleton, const PipelineConfig& config,
                            std::uint64_t seed);

/// Noisy inputs of round one, named "<preset>_<index>".
std::vector<NamedMotion> generate_suite(const Skeleton& skeleton, const PipelineConfig& config,
                                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// Experiment harnesses
// ---------------------------------------------------------------------------

struct TauRow {
  double tau = 0.0;
  double ifr = 0.0;
  int accepted = 0;
  double mean_mpjpe_m = 0.0;  ///< output vs original
  double max_mpjpe_m = 0.0;
  PlausibilityReport metrics;

  Json to_json() const;
};

/// Re-applies selection to one fixed set of refinements per tau.
std::vector<TauRow> sweep_tau(const Skeleton& skeleton, std::span<const RefinedItem> items,
                              std::span<const double> taus, const ContactParams& params = {});

struct DataVolumeRow {
  double fraction = 0.0;
  int train_clips = 0;
  double final_mean_reward = 0.0;
  double ifr = 0.0;
  PlausibilityReport metrics;
  std::vector<TrainLogRecord> log;

  Json to_json() const;
};

/// Indices of a seeded subsample of `total` items, kept in input order.
/// Throws InputError when the fraction is outside (0, 1] or selects nothing.
std::vector<size_t> subsample_indices(size_t total, double fraction, std::uint64_t seed);

/// Trains one imitator per fraction of the preprocessed suite and evaluates
/// each on the whole suite.
std::vector<DataVolumeRow> sweep_data_volume(const Skeleton& skeleton,
                                             std::span<const double> fractions,
                                             const PipelineConfig& config, std::uint64_t seed);

} // namespace morph
