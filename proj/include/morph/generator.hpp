#pragma once

#include "morph/json_file.hpp"
#include "morph/motion.hpp"
#include "morph/nn.hpp"

#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace morph {

/// Label embedding plus seed code, concatenated into the decoder input.
inline constexpr int kLabelEmbedDim = 8;
inline constexpr int kSeedCodeDim = 8;

/// Conditional motion generator: a fixed embedding per label and a fixed
/// code per condition seed feed a tanh decoder whose output is the whole
/// motion block (per frame: root position, then one 6D rotation per joint).
struct ToyGenerator {
  std::string skeleton = "humanoid13";
  int joints = 0;
  int frames = 0;
  int fps = 30;
  std::vector<std::string> labels;
  Matrix embeddings;  ///< kLabelEmbedDim x labels
  MlpParams decoder;

  static ToyGenerator init(const Skeleton& skeleton, std::vector<std::string> labels,
                           int frames, int fps, std::vector<int> hidden, std::mt19937_64& rng);

  int frame_size() const { return 3 + 6 * joints; }
  int block_size() const { return frames * frame_size(); }

  /// Decoder input for a condition. Throws InputError for an unknown label.
  Vector condition_input(const ConditionTag& condition) const;

  /// Motion block of a sequence. Throws InputError when the length, fps or
  /// joint count differs from the generator's.
  Vector encode(const MotionSequence& seq) const;

  /// Sequence for a block; rotations are re-orthonormalized, so every block
  /// of the right size decodes.
  MotionSequence decode(const Vector& block, const ConditionTag& condition) const;

  MotionSequence generate(const ConditionTag& condition) const;

  void validate() const;
  Json to_json() const;
  static ToyGenerator from_json(const JsonFile& file);
  void save(const std::filesystem::path& path) const;
  static ToyGenerator load(const std::filesystem::path& path);
};

/// Deterministic standard-normal code for a condition seed.
Vector seed_code(std::uint64_t seed);

struct FinetuneConfig {
  int steps = 5000;
  double learning_rate = 1e-5;

  void validate() const;
};

struct FinetuneResult {
  std::vector<double> loss_curve;  ///< loss before each update
  double final_loss = 0.0;         ///< loss after the last update
  int skipped = 0;                 ///< updates dropped for a non-finite gradient
};

/// Mean squared error between decoder outputs and target blocks.
double generator_loss(const ToyGenerator& generator, std::span<const MotionSequence> data);

/// Full-batch Adam on the mean squared error between the decoder output for
/// each target's condition and the target's motion block.
FinetuneResult finetune_generator(ToyGenerator& generator, std::span<const MotionSequence> data,
                                  const FinetuneConfig& config);

} // namespace morph
