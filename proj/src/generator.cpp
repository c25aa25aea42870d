#include "morph/generator.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>

namespace morph {

namespace {

// Gram-Schmidt that never fails: degenerate columns fall back to the
// closest axis-aligned choice.
Quat orthonormal_rot6(const double* v) {
  Vec3 a(v[0], v[1], v[2]);
  Vec3 b(v[3], v[4], v[5]);
  if (!(a.norm() > 1e-9) || !a.allFinite()) a = Vec3::UnitX();
  a.normalize();
  if (!b.allFinite()) b = Vec3::UnitY();
  b -= a.dot(b) * a;
  if (!(b.norm() > 1e-9)) {
    const Vec3 axis = std::abs(a.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    b = axis - a.dot(axis) * a;
  }
  b.normalize();
  Mat3 m;
  m.col(0) = a;
  m.col(1) = b;
  m.col(2) = a.cross(b);
  return Quat(m).normalized();
}

Matrix input_batch(const ToyGenerator& g, std::span<const MotionSequence> data) {
  Matrix x(kLabelEmbedDim + kSeedCodeDim, static_cast<Eigen::Index>(data.size()));
  for (size_t i = 0; i < data.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = g.condition_input(data[i].condition);
  }
  return x;
}

Matrix target_batch(const ToyGenerator& g, std::span<const MotionSequence> data) {
  Matrix y(g.block_size(), static_cast<Eigen::Index>(data.size()));
  for (size_t i = 0; i < data.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = g.encode(data[i]);
  return y;
}

} // namespace

Vector seed_code(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> n(0.0, 1.0);
  Vector c(kSeedCodeDim);
  for (int i = 0; i < kSeedCodeDim; ++i) c(i) = n(rng);
  return c;
}

ToyGenerator ToyGenerator::init(const Skeleton& skeleton, std::vector<std::string> labels,
                                int frames, int fps, std::vector<int> hidden,
                                std::mt19937_64& rng) {
  if (labels.empty()) throw InputError("generator: no labels");
  if (frames < 2) throw InputError("generator: need at least 2 frames");
  if (fps <= 0) throw InputError("generator: fps must be positive");
  ToyGenerator g;
  g.skeleton = skeleton.name();
  g.joints = skeleton.num_joints();
  g.frames = frames;
  g.fps = fps;
  g.labels = std::move(labels);
  std::normal_distribution<double> n(0.0, 1.0);
  g.embeddings.resize(kLabelEmbedDim, static_cast<Eigen::Index>(g.labels.size()));
  for (Eigen::Index c = 0; c < g.embeddings.cols(); ++c) {
    for (Eigen::Index r = 0; r < g.embeddings.rows(); ++r) g.embeddings(r, c) = n(rng);
  }
  std::vector<int> sizes{kLabelEmbedDim + kSeedCodeDim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(g.block_size());
  g.decoder = MlpParams::init(sizes, OutputActivation::None, 0.01, rng);

  // rest pose on the ground as the output offset
  Pose rest;
  rest.joint_rot.assign(static_cast<size_t>(g.joints), Quat::Identity());
  rest.root_pos.z() = -lowest_point(skeleton, forward_kinematics(skeleton, rest));
  Vector frame(g.frame_size());
  frame.head<3>() = rest.root_pos;
  for (int j = 0; j < g.joints; ++j) {
    const Rot6 r = to_rot6(Quat::Identity());
    for (int i = 0; i < 6; ++i) frame(3 + 6 * j + i) = r[static_cast<size_t>(i)];
  }
  Vector& bias = g.decoder.biases.back();
  for (int l = 0; l < frames; ++l) bias.segment(l * g.frame_size(), g.frame_size()) = frame;
  return g;
}

Vector ToyGenerator::condition_input(const ConditionTag& condition) const {
  const auto it = std::find(labels.begin(), labels.end(), condition.label);
  if (it == labels.end()) {
    throw InputError("generator: unknown condition label '" + condition.label + "'");
  }
  Vector x(kLabelEmbedDim + kSeedCodeDim);
  x.head<kLabelEmbedDim>() = embeddings.col(it - labels.begin());
  x.tail<kSeedCodeDim>() = seed_code(condition.seed);
  return x;
}

Vector ToyGenerator::encode(const MotionSequence& seq) const {
  if (seq.length() != frames) {
    throw InputError("generator: motion has " + std::to_string(seq.length()) +
                     " frames, generator expects " + std::to_string(frames));
  }
  if (seq.fps != fps) {
    throw InputError("generator: motion fps " + std::to_string(seq.fps) +
                     " differs from generator fps " + std::to_string(fps));
  }
  Vector block(block_size());
  for (int l = 0; l < frames; ++l) {
    const Pose& p = seq.frames[static_cast<size_t>(l)];
    if (p.joint_rot.size() != static_cast<size_t>(joints)) {
      throw InputError("generator: joint count mismatch");
    }
    const Eigen::Index base = l * frame_size();
    block.segment<3>(base) = p.root_pos;
    for (int j = 0; j < joints; ++j) {
      const Rot6 r = to_rot6(p.joint_rot[static_cast<size_t>(j)]);
      for (int i = 0; i < 6; ++i) block(base + 3 + 6 * j + i) = r[static_cast<size_t>(i)];
    }
  }
  return block;
}

MotionSequence ToyGenerator::decode(const Vector& block, const ConditionTag& condition) const {
  if (block.size() != block_size()) {
    throw StructuralError("generator: block has " + std::to_string(block.size()) +
                          " entries, expected " + std::to_string(block_size()));
  }
  MotionSequence seq;
  seq.fps = fps;
  seq.skeleton = skeleton;
  seq.condition = condition;
  seq.frames.resize(static_cast<size_t>(frames));
  for (int l = 0; l < frames; ++l) {
    Pose& p = seq.frames[static_cast<size_t>(l)];
    const Eigen::Index base = l * frame_size();
    p.root_pos = block.segment<3>(base);
    if (!p.root_pos.allFinite()) p.root_pos.setZero();
    p.joint_rot.resize(static_cast<size_t>(joints));
    for (int j = 0; j < joints; ++j) {
      p.joint_rot[static_cast<size_t>(j)] = orthonormal_rot6(block.data() + base + 3 + 6 * j);
    }
    p = canonicalize(p);
  }
  return seq;
}

MotionSequence ToyGenerator::generate(const ConditionTag& condition) const {
  return decode(mlp_forward(decoder, condition_input(condition)), condition);
}

void ToyGenerator::validate() const {
  if (joints <= 0 || frames < 2 || fps <= 0) throw StructuralError("generator: bad shape");
  if (labels.empty()) throw StructuralError("generator: no labels");
  if (embeddings.rows() != kLabelEmbedDim ||
      embeddings.cols() != static_cast<Eigen::Index>(labels.size())) {
    throw StructuralError("generator: embedding table does not match the labels");
  }
  if (decoder.input_size() != kLabelEmbedDim + kSeedCodeDim ||
      decoder.output_size() != block_size()) {
    throw StructuralError("generator: decoder sizes do not match the motion block");
  }
}

Json ToyGenerator::to_json() const {
  Json emb = Json::array();
  for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
    emb.push_back(std::vector<double>(embeddings.col(c).data(),
                                      embeddings.col(c).data() + embeddings.rows()));
  }
  return {{"version", 1},     {"kind", "toy_generator"}, {"skeleton", skeleton},
          {"joints", joints}, {"frames", frames},        {"fps", fps},
          {"labels", labels}, {"embeddings", emb},       {"decoder", mlp_to_json(decoder, "generator")}};
}

ToyGenerator ToyGenerator::from_json(const JsonFile& f) {
  if (f.integer("/version") != 1) f.fail("/version", "unsupported version");
  if (f.string("/kind") != "toy_generator") f.fail("/kind", "expected 'toy_generator'");
  ToyGenerator g;
  g.skeleton = f.string("/skeleton");
  g.joints = static_cast<int>(f.integer("/joints"));
  g.frames = static_cast<int>(f.integer("/frames"));
  g.fps = static_cast<int>(f.integer("/fps"));
  if (g.joints <= 0) f.fail("/joints", "must be positive");
  if (g.frames < 2) f.fail("/frames", "must be at least 2");
  if (g.fps <= 0) f.fail("/fps", "must be positive");
  const Json& labels = f.at("/labels");
  if (!labels.is_array() || labels.empty()) f.fail("/labels", "expected a non-empty array");
  for (size_t i = 0; i < labels.size(); ++i) g.labels.push_back(f.string("/labels/" + std::to_string(i)));
  const Json& emb = f.at("/embeddings");
  if (!emb.is_array() || emb.size() != g.labels.size()) {
    f.fail("/embeddings", "expected one vector per label");
  }
  g.embeddings.resize(kLabelEmbedDim, static_cast<Eigen::Index>(g.labels.size()));
  for (size_t c = 0; c < g.labels.size(); ++c) {
    const auto v = f.numbers("/embeddings/" + std::to_string(c), kLabelEmbedDim);
    for (int r = 0; r < kLabelEmbedDim; ++r) g.embeddings(r, static_cast<Eigen::Index>(c)) = v[static_cast<size_t>(r)];
  }
  std::string role;
  g.decoder = mlp_from_json(f, "/decoder", &role);
  if (role != "generator") f.fail("/decoder/role", "expected 'generator'");
  try {
    g.validate();
  } catch (const StructuralError& e) {
    f.fail("/decoder/layer_sizes", e.what());
  }
  return g;
}

void ToyGenerator::save(const std::filesystem::path& path) const { write_json(path, to_json()); }

ToyGenerator ToyGenerator::load(const std::filesystem::path& path) {
  return from_json(JsonFile::load(path));
}

void FinetuneConfig::validate() const {
  if (steps < 0) throw InputError("finetune: steps must be >= 0");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("finetune: learning rate must be positive");
  }
}

double generator_loss(const ToyGenerator& generator, std::span<const MotionSequence> data) {
  if (data.empty()) throw InputError("generator loss: empty dataset");
  const Matrix out = mlp_forward(generator.decoder, input_batch(generator, data));
  return (out - target_batch(generator, data)).squaredNorm() / static_cast<double>(out.size());
}

FinetuneResult finetune_generator(ToyGenerator& generator, std::span<const MotionSequence> data,
                                  const FinetuneConfig& config) {
  config.validate();
  generator.validate();
  if (data.empty()) throw InputError("finetune: empty dataset");
  const Matrix x = input_batch(generator, data);
  const Matrix y = target_batch(generator, data);
  const double scale = 2.0 / static_cast<double>(y.size());
  AdamState adam = AdamState::for_params(generator.decoder, config.learning_rate);
  FinetuneResult res;
  res.loss_curve.reserve(static_cast<size_t>(config.steps));
  MlpCache cache;
  for (int step = 0; step < config.steps; ++step) {
    const Matrix diff = mlp_forward(generator.decoder, x, &cache) - y;
    res.loss_curve.push_back(diff.squaredNorm() / static_cast<double>(diff.size()));
    const MlpGrads grads = mlp_backward(generator.decoder, cache, scale * diff);
    try {
      adam_step(generator.decoder, grads, adam);
    } catch (const OptimizationError&) {
      ++res.skipped;
    }
  }
  const Matrix out = mlp_forward(generator.decoder, x);
  res.final_loss = (out - y).squaredNorm() / static_cast<double>(out.size());
  return res;
}

} // namespace morph
