#pragma once

#include "morph/json_file.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace morph {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class OutputActivation { None, Sigmoid };

/// Dense tanh network. Weights are stored (out x in); inputs and outputs are
/// column-major batches (features x batch).
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  OutputActivation output_activation = OutputActivation::None;
  /// Bumped on every in-place update so stale forward caches are detected.
  std::uint64_t revision = 0;

  /// Scaled-uniform init: hidden layers with gain sqrt(2), the final layer
  /// with `final_gain`; biases zero.
  static MlpParams init(std::vector<int> layer_sizes, OutputActivation out,
                        double final_gain, std::mt19937_64& rng);

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  size_t num_layers() const { return weights.size(); }
  size_t num_params() const;
  bool all_finite() const;
};

struct MlpCache {
  std::vector<Matrix> activations;  ///< input, then every layer's output
  std::uint64_t revision = 0;
  const MlpParams* owner = nullptr;
};

struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  static MlpGrads zeros_like(const MlpParams& params);
  void add(const MlpGrads& other);
  void scale(double s);
  bool all_finite() const;
};

/// Throws StructuralError when the input row count is wrong.
Matrix mlp_forward(const MlpParams& params, const Matrix& input,
                   MlpCache* cache = nullptr);

Vector mlp_forward(const MlpParams& params, const Vector& input);

/// Reverse-mode pass for a cache from mlp_forward on the same parameters.
/// `output_grad` is dLoss/dOutput (post output activation), summed over the
/// batch into the parameter gradients. Never mutates `params`.
MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache,
                      const Matrix& output_grad, Matrix* input_grad = nullptr);

struct AdamState {
  long step_count = 0;
  double learning_rate = 4e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Matrix> m_w, v_w;
  std::vector<Vector> m_b, v_b;

  static AdamState for_params(const MlpParams& params, double learning_rate);
};

/// Bias-corrected Adam. Throws OptimizationError (leaving everything
/// untouched) when a gradient is non-finite.
void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state);

// Checkpoints -----------------------------------------------------------------

Json mlp_to_json(const MlpParams& params, const std::string& role,
                 const std::vector<double>* sigma = nullptr);
MlpParams mlp_from_json(const JsonFile& file, const std::string& base,
                        std::string* role = nullptr,
                        std::vector<double>* sigma = nullptr);

} // namespace morph
