#include "morph/discriminator.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>

namespace morph {

namespace {

double clamp_d(double d) { return std::clamp(d, kDiscEpsilon, 1.0 - kDiscEpsilon); }

} // namespace

int disc_feature_size(const Skeleton& skeleton) { return 15 * skeleton.num_joints(); }

Vector disc_features(const Skeleton& skeleton, const Pose& pose, const WorldPose& world,
                     std::span<const Vec3> lin_vel, std::span<const Vec3> ang_vel) {
  const int n = skeleton.num_joints();
  const auto un = static_cast<size_t>(n);
  if (pose.joint_rot.size() != un || world.positions.size() != un ||
      lin_vel.size() != un || ang_vel.size() != un) {
    throw StructuralError("disc_features: quantities do not match the skeleton");
  }
  const Quat inv_heading = heading_of(pose.joint_rot[0]).conjugate();
  const Mat3 to_local = inv_heading.toRotationMatrix();
  const Vec3& root = world.positions[0];
  Vector f(15 * n);
  for (int j = 0; j < n; ++j) {
    const auto uj = static_cast<size_t>(j);
    const Quat q = j == 0 ? inv_heading * pose.joint_rot[0] : pose.joint_rot[uj];
    const Rot6 r = to_rot6(q);
    for (int i = 0; i < 6; ++i) f(6 * j + i) = r[static_cast<size_t>(i)];
    f.segment<3>(6 * n + 3 * j) = to_local * (world.positions[uj] - root);
    f.segment<3>(9 * n + 3 * j) = to_local * lin_vel[uj];
    f.segment<3>(12 * n + 3 * j) = j == 0 ? Vec3(to_local * ang_vel[0]) : ang_vel[uj];
  }
  return f;
}

Matrix sequence_disc_features(const Skeleton& skeleton, const MotionSequence& seq) {
  const MotionDerivatives d = derive_velocities(skeleton, seq);
  Matrix out(disc_feature_size(skeleton), seq.length());
  for (int l = 0; l < seq.length(); ++l) {
    const auto ul = static_cast<size_t>(l);
    WorldPose w;
    w.positions = d.joint_pos[ul];
    out.col(l) = disc_features(skeleton, seq.frames[ul], w, d.lin_vel[ul], d.ang_vel[ul]);
  }
  return out;
}

double disc_loss(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) {
    throw InputError("disc_loss: empty batch");
  }
  double real = 0.0;
  for (double d : d_real) real -= std::log(clamp_d(d));
  double fake = 0.0;
  for (double d : d_fake) fake -= std::log(1.0 - clamp_d(d));
  return real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
}

void disc_loss_grad(std::span<const double> d_real, std::span<const double> d_fake,
                    std::vector<double>& g_real, std::vector<double>& g_fake) {
  if (d_real.empty() || d_fake.empty()) {
    throw InputError("disc_loss: empty batch");
  }
  const double nr = static_cast<double>(d_real.size());
  const double nf = static_cast<double>(d_fake.size());
  auto inside = [](double d) { return d > kDiscEpsilon && d < 1.0 - kDiscEpsilon; };
  g_real.resize(d_real.size());
  g_fake.resize(d_fake.size());
  for (size_t i = 0; i < d_real.size(); ++i) {
    g_real[i] = inside(d_real[i]) ? -1.0 / (nr * d_real[i]) : 0.0;
  }
  for (size_t i = 0; i < d_fake.size(); ++i) {
    g_fake[i] = inside(d_fake[i]) ? 1.0 / (nf * (1.0 - d_fake[i])) : 0.0;
  }
}

std::vector<double> disc_scores(const MlpParams& disc, const Matrix& features) {
  const Matrix out = mlp_forward(disc, features);
  std::vector<double> s(static_cast<size_t>(out.cols()));
  for (Eigen::Index i = 0; i < out.cols(); ++i) s[static_cast<size_t>(i)] = clamp_d(out(0, i));
  return s;
}

DiscUpdateStats disc_update(MlpParams& disc, const Matrix& real, const Matrix& fake,
                            AdamState& adam) {
  if (real.cols() == 0 || fake.cols() == 0) {
    throw InputError("disc_update: empty batch");
  }
  if (real.cols() != fake.cols()) {
    throw InputError("disc_update: real and fake batches must have equal size");
  }
  if (disc.output_size() != 1 || disc.output_activation != OutputActivation::Sigmoid) {
    throw StructuralError("disc_update: expected a single sigmoid output");
  }
  const Eigen::Index b = real.cols();
  Matrix both(real.rows(), 2 * b);
  both << real, fake;
  MlpCache cache;
  const Matrix out = mlp_forward(disc, both, &cache);
  std::vector<double> dr(static_cast<size_t>(b)), df(static_cast<size_t>(b));
  for (Eigen::Index i = 0; i < b; ++i) {
    dr[static_cast<size_t>(i)] = out(0, i);
    df[static_cast<size_t>(i)] = out(0, b + i);
  }
  DiscUpdateStats st;
  st.loss = disc_loss(dr, df);
  for (Eigen::Index i = 0; i < b; ++i) {
    st.mean_real += clamp_d(dr[static_cast<size_t>(i)]);
    st.mean_fake += clamp_d(df[static_cast<size_t>(i)]);
  }
  st.mean_real /= static_cast<double>(b);
  st.mean_fake /= static_cast<double>(b);
  if (!std::isfinite(st.loss)) {
    st.skipped = true;
    return st;
  }
  std::vector<double> gr, gf;
  disc_loss_grad(dr, df, gr, gf);
  Matrix g(1, 2 * b);
  for (Eigen::Index i = 0; i < b; ++i) {
    g(0, i) = gr[static_cast<size_t>(i)];
    g(0, b + i) = gf[static_cast<size_t>(i)];
  }
  const MlpGrads grads = mlp_backward(disc, cache, g);
  try {
    adam_step(disc, grads, adam);
  } catch (const OptimizationError&) {
    st.skipped = true;
  }
  return st;
}

} // namespace morph
