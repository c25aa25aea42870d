#pragma once

#include "morph/nn.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace morph::test {

struct GradCheck {
  double worst_param = 0.0;
  double worst_input = 0.0;
  int probes = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

/// Central-difference probes of d(g . f(x))/d(theta) and d/dx for random
/// inputs x, output gradients g, one parameter and one input entry each.
inline GradCheck check_gradients(std::vector<int> sizes, OutputActivation act, double final_gain,
                                 int probes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MlpParams net = MlpParams::init(sizes, act, final_gain, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  const double h = 1e-5;
  GradCheck out;
  auto loss = [&](const MlpParams& p, const Matrix& x, const Matrix& g) {
    return (mlp_forward(p, x).array() * g.array()).sum();
  };
  for (int k = 0; k < probes; ++k) {
    Matrix x(sizes.front(), 2);
    Matrix g(sizes.back(), 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
    MlpCache cache;
    mlp_forward(net, x, &cache);
    Matrix input_grad;
    const MlpGrads grads = mlp_backward(net, cache, g, &input_grad);

    const size_t layer = std::uniform_int_distribution<size_t>(0, net.num_layers() - 1)(rng);
    const bool bias = std::uniform_int_distribution<int>(0, 4)(rng) == 0;
    MlpParams plus = net;
    MlpParams minus = net;
    double analytic = 0.0;
    if (bias) {
      const auto i = std::uniform_int_distribution<Eigen::Index>(0, net.biases[layer].size() - 1)(rng);
      plus.biases[layer](i) += h;
      minus.biases[layer](i) -= h;
      analytic = grads.biases[layer](i);
    } else {
      const auto i = std::uniform_int_distribution<Eigen::Index>(0, net.weights[layer].size() - 1)(rng);
      plus.weights[layer].data()[i] += h;
      minus.weights[layer].data()[i] -= h;
      analytic = grads.weights[layer].data()[i];
    }
    ++plus.revision;
    ++minus.revision;
    const double numeric = (loss(plus, x, g) - loss(minus, x, g)) / (2.0 * h);
    out.worst_param = std::max(out.worst_param, relative_error(analytic, numeric));

    const auto xi = std::uniform_int_distribution<Eigen::Index>(0, x.size() - 1)(rng);
    Matrix xp = x, xm = x;
    xp.data()[xi] += h;
    xm.data()[xi] -= h;
    const double numeric_x = (loss(net, xp, g) - loss(net, xm, g)) / (2.0 * h);
    out.worst_input = std::max(out.worst_input, relative_error(input_grad.data()[xi], numeric_x));
    ++out.probes;
  }
  return out;
}

} // namespace morph::test
