#pragma once

#include "morph/discriminator.hpp"
#include "morph/motion.hpp"
#include "morph/nn.hpp"
#include "morph/sim.hpp"

#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace morph {

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

struct RewardWeights {
  double w_rot = 0.5;
  double w_pos = 0.3;
  double w_vel = 0.1;
  double w_ang_vel = 0.1;
  double scale_rot = 100.0;
  double scale_pos = 10.0;
  double scale_vel = 0.1;
  double scale_ang_vel = 0.1;
  double energy_coeff = 0.0005;

  /// Weights positive and summing to 1 (within 1e-9), scales positive.
  void validate() const;
};

/// Per-joint quantities of one frame, shared by the reference and simulated
/// sides. Rotations and angular velocities follow the Pose convention (root
/// in world, others relative to the parent); positions and linear
/// velocities are world-frame.
struct FrameQuantities {
  std::vector<Quat> rot;
  std::vector<Vec3> pos;
  std::vector<Vec3> lin_vel;
  std::vector<Vec3> ang_vel;
};

struct RewardParts {
  double mimic = 0.0;
  double energy = 0.0;
  double adversarial = 0.0;
  double total = 0.0;
};

/// Weighted sum of exp(-scale * mean absolute error) over rotation (log of
/// the relative rotation), position, linear and angular velocity.
double mimic_reward(const FrameQuantities& ref, const FrameQuantities& sim,
                    const RewardWeights& weights = {});

/// -coeff * sum over every scalar DOF of (torque * angular velocity)^2.
double energy_penalty(std::span<const Vec3> torques, std::span<const Vec3> ang_vels,
                      double coeff = 0.0005);

/// -log(1 - d) with d clamped to [eps, 1 - eps].
double adversarial_reward(double d);

/// Simulated-side quantities of a state.
FrameQuantities state_quantities(Simulator& sim, const SimCharacterState& state);

// ---------------------------------------------------------------------------
// Observation
// ---------------------------------------------------------------------------

/// 2 * (6n + 3n) + 3n + 3n entries.
int observation_size(const Skeleton& skeleton);

/// Observation for one control step, in the simulated character's heading
/// frame centred on its root. Layout (n joints):
///   ref_next rotations (6D)              6n
///   ref_next positions rel. to sim root  3n
///   ref_next - sim rotations (6D)        6n
///   ref_next - sim positions             3n
///   ref_next - sim linear velocities     3n
///   ref_now - sim angular velocities     3n
Vector build_observation(const Skeleton& skeleton, const FrameQuantities& ref_next,
                         const FrameQuantities& ref_now, const FrameQuantities& sim);

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

/// Diagonal Gaussian with a learned mean and fixed standard deviations.
struct GaussianPolicy {
  MlpParams mean_net;
  std::vector<double> sigma;

  int action_size() const { return mean_net.output_size(); }
  void validate() const;
  double log_prob(const Vector& mean, const Vector& action) const;
  Vector sample(const Vector& mean, std::mt19937_64& rng) const;
};

/// Action for a policy output vector (one 3-vector per joint).
Action to_action(const Vector& flat);

// ---------------------------------------------------------------------------
// Trajectories, advantages, PPO
// ---------------------------------------------------------------------------

struct Transition {
  Vector obs;
  Vector action;
  double log_prob = 0.0;
  RewardParts reward;
  double value = 0.0;
  bool done = false;
  bool failed = false;  ///< episode ended by termination or divergence
  int clip = 0;
  int frame = 0;  ///< reference frame the action tracked
  Vector disc_feature;
};

struct GaeResult {
  std::vector<double> raw_advantages;
  std::vector<double> advantages;  ///< normalized to zero mean, unit variance
  std::vector<double> returns;     ///< raw advantage + value
};

/// Episodes are consecutive runs terminated by `done`; nothing is
/// bootstrapped past a done step. Throws InputError on an empty batch or a
/// trailing unfinished episode.
GaeResult compute_gae(std::span<const Transition> batch, double gamma = 0.99,
                      double lambda = 0.95);

/// Ratio clamped to [1 - clip, 1 + clip].
double clip_ratio(double ratio, double clip);

/// Multiplier of the advantage selected by min(ratio * A, clip(ratio) * A).
double surrogate_factor(double ratio, double advantage, double clip);

struct PpoConfig {
  double clip = 0.1;
  int epochs = 5;
  int minibatch = 64;
  double learning_rate = 4e-5;
};

struct PpoStats {
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  int minibatches = 0;
  int skipped = 0;  ///< minibatches dropped for a non-finite loss or gradient
};

/// Log-probabilities of the stored actions under the current policy.
std::vector<double> policy_log_probs(const GaussianPolicy& policy,
                                     std::span<const Transition> batch);

/// Clipped-surrogate policy step and squared-error value regression over
/// shuffled minibatches.
PpoStats ppo_update(GaussianPolicy& policy, MlpParams& value, AdamState& policy_adam,
                    AdamState& value_adam, std::span<const Transition> batch,
                    const GaeResult& gae, const PpoConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Hard negative mining
// ---------------------------------------------------------------------------

class HardSampleWeights {
 public:
  static constexpr int kMaxDoublings = 10;

  explicit HardSampleWeights(size_t clips = 0) : failures_(clips, 0) {}

  size_t size() const { return failures_.size(); }
  double weight(size_t clip) const;
  int failures(size_t clip) const { return failures_.at(clip); }
  void record_failure(size_t clip);
  /// Draw a clip index with probability proportional to its weight.
  size_t sample(std::mt19937_64& rng) const;

 private:
  std::vector<int> failures_;
};

// ---------------------------------------------------------------------------
// Rollouts and training
// ---------------------------------------------------------------------------

/// Preprocessed clip plus everything derived from it once.
struct ReferenceClip {
  std::string id;
  MotionSequence seq;
  MotionDerivatives derivs;
  std::vector<FrameQuantities> frames;
  Matrix disc_features;  ///< one column per frame

  static ReferenceClip build(const Skeleton& skeleton, std::string id, MotionSequence seq);
};

/// Policy, value function and discriminator trained together.
struct ImitatorModel {
  GaussianPolicy policy;
  MlpParams value;
  MlpParams discriminator;

  void save(const std::filesystem::path& dir) const;
  static ImitatorModel load(const std::filesystem::path& dir, const Skeleton& skeleton);
};

struct ImitatorConfig {
  int iterations = 40;
  int steps_per_iter = 1024;  ///< transitions gathered per iteration (at least)
  int episode_batch = 8;      ///< episodes launched together
  double gamma = 0.99;
  double lambda = 0.95;
  double sigma = 0.05;
  double termination_m = 0.5;
  PpoConfig ppo;
  double disc_learning_rate = 4e-5;
  int disc_batch = 64;
  std::vector<int> policy_hidden{512, 256};
  std::vector<int> value_hidden{512, 256};
  std::vector<int> disc_hidden{256, 128};
  RewardWeights reward;
  SimConfig sim = SimConfig::humanoid_defaults();
  int threads = 0;  ///< 0: MORPH_THREADS or hardware concurrency

  void validate() const;
  Json to_json() const;
  static ImitatorConfig from_json(const JsonFile& file, const std::string& base);
};

ImitatorModel init_imitator(const Skeleton& skeleton, const ImitatorConfig& config,
                            std::mt19937_64& rng);

struct EpisodeResult {
  std::vector<Transition> transitions;
  bool failed = false;
  bool diverged = false;
};

/// One episode from a uniformly drawn start frame. `deterministic` uses the
/// policy mean instead of sampling.
EpisodeResult rollout(const Skeleton& skeleton, const ImitatorModel& model,
                      const ReferenceClip& clip, int clip_index, const ImitatorConfig& config,
                      std::mt19937_64& rng, bool deterministic = false);

struct TrainLogRecord {
  int iter = 0;
  double mean_reward = 0.0;
  double mean_mimic = 0.0;
  double mean_len = 0.0;
  double clip_frac = 0.0;
  double disc_loss = 0.0;
  double train_ifr = 0.0;
  double mean_ratio = 0.0;
  double value_loss = 0.0;

  Json to_json() const;
};

struct TrainResult {
  ImitatorModel model;
  std::vector<TrainLogRecord> log;
  HardSampleWeights weights;
};

using TrainCallback = std::function<void(const TrainLogRecord&)>;

/// Hard-negative-mined PPO training. Continues from `init` when given.
TrainResult train_imitator(const Skeleton& skeleton, std::span<const ReferenceClip> clips,
                           const ImitatorConfig& config, std::uint64_t seed,
                           const ImitatorModel* init = nullptr,
                           const TrainCallback& on_iter = {});

/// Worker count: `requested` if positive, else MORPH_THREADS, else the
/// hardware concurrency.
int worker_count(int requested);

/// Runs fn(i) for i in [0, n) on up to `threads` threads.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

} // namespace morph
