#include "morph/nn.hpp"

#include "morph/errors.hpp"

#include <cmath>

namespace morph {

MlpParams MlpParams::init(std::vector<int> layer_sizes, OutputActivation out,
                          double final_gain, std::mt19937_64& rng) {
  if (layer_sizes.size() < 2) {
    throw StructuralError("mlp: need at least input and output sizes");
  }
  for (int s : layer_sizes) {
    if (s <= 0) throw StructuralError("mlp: layer sizes must be positive");
  }
  MlpParams p;
  p.layer_sizes = std::move(layer_sizes);
  p.output_activation = out;
  const size_t layers = p.layer_sizes.size() - 1;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (size_t k = 0; k < layers; ++k) {
    const int in = p.layer_sizes[k];
    const int outn = p.layer_sizes[k + 1];
    const double gain = (k + 1 == layers) ? final_gain : std::sqrt(2.0);
    const double a = gain * std::sqrt(3.0 / in);
    Matrix w(outn, in);
    for (int c = 0; c < in; ++c) {
      for (int r = 0; r < outn; ++r) w(r, c) = a * unit(rng);
    }
    p.weights.push_back(std::move(w));
    p.biases.push_back(Vector::Zero(outn));
  }
  return p;
}

size_t MlpParams::num_params() const {
  size_t n = 0;
  for (size_t k = 0; k < weights.size(); ++k) {
    n += static_cast<size_t>(weights[k].size() + biases[k].size());
  }
  return n;
}

bool MlpParams::all_finite() const {
  for (size_t k = 0; k < weights.size(); ++k) {
    if (!weights[k].allFinite() || !biases[k].allFinite()) return false;
  }
  return true;
}

MlpGrads MlpGrads::zeros_like(const MlpParams& params) {
  MlpGrads g;
  for (size_t k = 0; k < params.weights.size(); ++k) {
    g.weights.push_back(Matrix::Zero(params.weights[k].rows(), params.weights[k].cols()));
    g.biases.push_back(Vector::Zero(params.biases[k].size()));
  }
  return g;
}

void MlpGrads::add(const MlpGrads& other) {
  for (size_t k = 0; k < weights.size(); ++k) {
    weights[k] += other.weights[k];
    biases[k] += other.biases[k];
  }
}

void MlpGrads::scale(double s) {
  for (size_t k = 0; k < weights.size(); ++k) {
    weights[k] *= s;
    biases[k] *= s;
  }
}

bool MlpGrads::all_finite() const {
  for (size_t k = 0; k < weights.size(); ++k) {
    if (!weights[k].allFinite() || !biases[k].allFinite()) return false;
  }
  return true;
}

Matrix mlp_forward(const MlpParams& params, const Matrix& input, MlpCache* cache) {
  if (input.rows() != params.input_size()) {
    throw StructuralError("mlp_forward: input has " + std::to_string(input.rows()) +
                          " rows, network expects " + std::to_string(params.input_size()));
  }
  const size_t layers = params.num_layers();
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(layers + 1);
    cache->activations.push_back(input);
    cache->revision = params.revision;
    cache->owner = &params;
  }
  Matrix a = input;
  for (size_t k = 0; k < layers; ++k) {
    Matrix z = params.weights[k] * a;
    z.colwise() += params.biases[k];
    if (k + 1 < layers) {
      a = z.array().tanh().matrix();
    } else if (params.output_activation == OutputActivation::Sigmoid) {
      a = (1.0 / (1.0 + (-z.array()).exp())).matrix();
    } else {
      a = std::move(z);
    }
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

Vector mlp_forward(const MlpParams& params, const Vector& input) {
  Matrix in = input;
  return mlp_forward(params, in, nullptr).col(0);
}

MlpGrads mlp_backward(const MlpParams& params, const MlpCache& cache,
                      const Matrix& output_grad, Matrix* input_grad) {
  const size_t layers = params.num_layers();
  if (cache.owner != &params || cache.revision != params.revision ||
      cache.activations.size() != layers + 1) {
    throw StructuralError("mlp_backward: cache does not belong to these parameters");
  }
  const Matrix& out = cache.activations.back();
  if (output_grad.rows() != out.rows() || output_grad.cols() != out.cols()) {
    throw StructuralError("mlp_backward: output gradient shape mismatch");
  }
  MlpGrads g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix delta = output_grad;
  if (params.output_activation == OutputActivation::Sigmoid) {
    delta = (delta.array() * out.array() * (1.0 - out.array())).matrix();
  }
  for (size_t k = layers; k-- > 0;) {
    const Matrix& a_in = cache.activations[k];
    g.weights[k] = delta * a_in.transpose();
    g.biases[k] = delta.rowwise().sum();
    if (k > 0 || input_grad) {
      Matrix back = params.weights[k].transpose() * delta;
      if (k > 0) {
        // tanh' = 1 - a^2 on the previous layer's output
        delta = (back.array() * (1.0 - a_in.array().square())).matrix();
      } else {
        *input_grad = std::move(back);
      }
    }
  }
  return g;
}

AdamState AdamState::for_params(const MlpParams& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (size_t k = 0; k < params.weights.size(); ++k) {
    s.m_w.push_back(Matrix::Zero(params.weights[k].rows(), params.weights[k].cols()));
    s.v_w.push_back(Matrix::Zero(params.weights[k].rows(), params.weights[k].cols()));
    s.m_b.push_back(Vector::Zero(params.biases[k].size()));
    s.v_b.push_back(Vector::Zero(params.biases[k].size()));
  }
  return s;
}

void adam_step(MlpParams& params, const MlpGrads& grads, AdamState& state) {
  if (grads.weights.size() != params.weights.size() ||
      state.m_w.size() != params.weights.size()) {
    throw StructuralError("adam_step: gradient/state layout mismatch");
  }
  for (size_t k = 0; k < params.weights.size(); ++k) {
    if (grads.weights[k].rows() != params.weights[k].rows() ||
        grads.weights[k].cols() != params.weights[k].cols() ||
        grads.biases[k].size() != params.biases[k].size()) {
      throw StructuralError("adam_step: gradient shape mismatch");
    }
  }
  if (!grads.all_finite()) {
    throw OptimizationError("adam_step: non-finite gradient");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double lr = state.learning_rate;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double eps = state.epsilon;
  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (size_t k = 0; k < params.weights.size(); ++k) {
    update(params.weights[k], grads.weights[k], state.m_w[k], state.v_w[k]);
    update(params.biases[k], grads.biases[k], state.m_b[k], state.v_b[k]);
  }
  ++params.revision;
}

Json mlp_to_json(const MlpParams& params, const std::string& role,
                 const std::vector<double>* sigma) {
  Json weights = Json::array();
  Json biases = Json::array();
  for (size_t k = 0; k < params.weights.size(); ++k) {
    const Matrix& w = params.weights[k];
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    }
    weights.push_back(flat);
    biases.push_back(std::vector<double>(params.biases[k].data(),
                                         params.biases[k].data() + params.biases[k].size()));
  }
  Json j = {{"version", 1},
            {"role", role},
            {"layer_sizes", params.layer_sizes},
            {"output_activation",
             params.output_activation == OutputActivation::Sigmoid ? "sigmoid" : "none"},
            {"weights", weights},
            {"biases", biases}};
  if (sigma) j["sigma"] = *sigma;
  return j;
}

MlpParams mlp_from_json(const JsonFile& f, const std::string& base, std::string* role,
                        std::vector<double>* sigma) {
  if (f.integer(base + "/version") != 1) f.fail(base + "/version", "unsupported version");
  const std::string r = f.string(base + "/role");
  if (role) *role = r;
  MlpParams p;
  const Json& sizes = f.at(base + "/layer_sizes");
  if (!sizes.is_array() || sizes.size() < 2) f.fail(base + "/layer_sizes", "need >= 2 sizes");
  for (size_t i = 0; i < sizes.size(); ++i) {
    const auto s = f.integer(base + "/layer_sizes/" + std::to_string(i));
    if (s <= 0) f.fail(base + "/layer_sizes/" + std::to_string(i), "must be positive");
    p.layer_sizes.push_back(static_cast<int>(s));
  }
  std::string act = f.has(base + "/output_activation")
                        ? f.string(base + "/output_activation")
                        : (r == "discriminator" ? "sigmoid" : "none");
  if (act == "sigmoid") {
    p.output_activation = OutputActivation::Sigmoid;
  } else if (act != "none") {
    f.fail(base + "/output_activation", "expected 'none' or 'sigmoid'");
  }
  const size_t layers = p.layer_sizes.size() - 1;
  const Json& jw = f.at(base + "/weights");
  const Json& jb = f.at(base + "/biases");
  if (!jw.is_array() || jw.size() != layers) f.fail(base + "/weights", "wrong layer count");
  if (!jb.is_array() || jb.size() != layers) f.fail(base + "/biases", "wrong layer count");
  for (size_t k = 0; k < layers; ++k) {
    const int in = p.layer_sizes[k];
    const int out = p.layer_sizes[k + 1];
    const std::string wp = base + "/weights/" + std::to_string(k);
    const std::string bp = base + "/biases/" + std::to_string(k);
    const auto w = f.numbers(wp, static_cast<size_t>(in) * static_cast<size_t>(out));
    const auto b = f.numbers(bp, static_cast<size_t>(out));
    Matrix m(out, in);
    for (int rr = 0; rr < out; ++rr) {
      for (int c = 0; c < in; ++c) m(rr, c) = w[static_cast<size_t>(rr * in + c)];
    }
    p.weights.push_back(std::move(m));
    p.biases.push_back(Eigen::Map<const Vector>(b.data(), out));
  }
  if (sigma) {
    sigma->clear();
    if (f.has(base + "/sigma")) {
      const Json& js = f.at(base + "/sigma");
      if (!js.is_array()) f.fail(base + "/sigma", "expected an array");
      *sigma = f.numbers(base + "/sigma", js.size());
    }
  }
  return p;
}

} // namespace morph
