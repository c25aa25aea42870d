#include "morph/imitator.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace morph {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;

double mean_abs(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double sum = 0.0;
  for (size_t j = 0; j < a.size(); ++j) sum += (a[j] - b[j]).cwiseAbs().sum();
  return sum / (3.0 * static_cast<double>(a.size()));
}

void check_quantities(const FrameQuantities& q, size_t n, const char* what) {
  if (q.rot.size() != n || q.pos.size() != n || q.lin_vel.size() != n ||
      q.ang_vel.size() != n) {
    throw StructuralError(std::string(what) + ": frame quantities do not match the skeleton");
  }
}

} // namespace

// ---------------------------------------------------------------------------
// Rewards

void RewardWeights::validate() const {
  for (double w : {w_rot, w_pos, w_vel, w_ang_vel, scale_rot, scale_pos, scale_vel,
                   scale_ang_vel}) {
    if (!(w > 0.0) || !std::isfinite(w)) {
      throw InputError("reward weights and scales must be positive");
    }
  }
  if (std::abs(w_rot + w_pos + w_vel + w_ang_vel - 1.0) > 1e-9) {
    throw InputError("reward weights must sum to 1");
  }
  if (!(energy_coeff >= 0.0)) throw InputError("energy coefficient must be >= 0");
}

double mimic_reward(const FrameQuantities& ref, const FrameQuantities& sim,
                    const RewardWeights& w) {
  const size_t n = ref.rot.size();
  if (n == 0) throw StructuralError("mimic_reward: empty frame");
  check_quantities(ref, n, "mimic_reward");
  check_quantities(sim, n, "mimic_reward");
  double rot = 0.0;
  for (size_t j = 0; j < n; ++j) {
    rot += quat_log(ref.rot[j] * sim.rot[j].conjugate()).cwiseAbs().sum();
  }
  rot /= 3.0 * static_cast<double>(n);
  return w.w_rot * std::exp(-w.scale_rot * rot) +
         w.w_pos * std::exp(-w.scale_pos * mean_abs(ref.pos, sim.pos)) +
         w.w_vel * std::exp(-w.scale_vel * mean_abs(ref.lin_vel, sim.lin_vel)) +
         w.w_ang_vel * std::exp(-w.scale_ang_vel * mean_abs(ref.ang_vel, sim.ang_vel));
}

double energy_penalty(std::span<const Vec3> torques, std::span<const Vec3> ang_vels,
                      double coeff) {
  if (torques.size() != ang_vels.size()) {
    throw StructuralError("energy_penalty: torque and velocity counts differ");
  }
  double sum = 0.0;
  for (size_t j = 0; j < torques.size(); ++j) {
    sum += torques[j].cwiseProduct(ang_vels[j]).squaredNorm();
  }
  return -coeff * sum;
}

double adversarial_reward(double d) {
  return -std::log(1.0 - std::clamp(d, kDiscEpsilon, 1.0 - kDiscEpsilon));
}

FrameQuantities state_quantities(Simulator& sim, const SimCharacterState& state) {
  FrameQuantities q;
  q.rot = state.joint_rot;
  sim.joint_kinematics(state, q.pos, q.lin_vel);
  q.ang_vel = state.joint_ang_vel;
  return q;
}

// ---------------------------------------------------------------------------
// Observation

int observation_size(const Skeleton& skeleton) { return 24 * skeleton.num_joints(); }

Vector build_observation(const Skeleton& skeleton, const FrameQuantities& ref_next,
                         const FrameQuantities& ref_now, const FrameQuantities& sim) {
  const int n = skeleton.num_joints();
  const auto un = static_cast<size_t>(n);
  check_quantities(ref_next, un, "build_observation");
  check_quantities(ref_now, un, "build_observation");
  check_quantities(sim, un, "build_observation");
  const Quat inv_heading = heading_of(sim.rot[0]).conjugate();
  const Mat3 to_local = inv_heading.toRotationMatrix();
  const Vec3& root = sim.pos[0];
  Vector o(24 * n);
  int at = 0;
  auto put6 = [&](const Rot6& r) {
    for (double v : r) o(at++) = v;
  };
  auto put3 = [&](const Vec3& v) {
    o.segment<3>(at) = v;
    at += 3;
  };
  auto local_rot = [&](const FrameQuantities& q, size_t j) {
    return j == 0 ? Quat(inv_heading * q.rot[0]) : q.rot[j];
  };
  for (size_t j = 0; j < un; ++j) put6(to_rot6(local_rot(ref_next, j)));
  for (size_t j = 0; j < un; ++j) put3(to_local * (ref_next.pos[j] - root));
  for (size_t j = 0; j < un; ++j) {
    const Rot6 a = to_rot6(local_rot(ref_next, j));
    const Rot6 b = to_rot6(local_rot(sim, j));
    Rot6 d;
    for (size_t i = 0; i < 6; ++i) d[i] = a[i] - b[i];
    put6(d);
  }
  for (size_t j = 0; j < un; ++j) put3(to_local * (ref_next.pos[j] - sim.pos[j]));
  for (size_t j = 0; j < un; ++j) put3(to_local * (ref_next.lin_vel[j] - sim.lin_vel[j]));
  for (size_t j = 0; j < un; ++j) {
    const Vec3 d = ref_now.ang_vel[j] - sim.ang_vel[j];
    put3(j == 0 ? Vec3(to_local * d) : d);
  }
  return o;
}

// ---------------------------------------------------------------------------
// Policy

void GaussianPolicy::validate() const {
  if (static_cast<int>(sigma.size()) != action_size()) {
    throw StructuralError("policy: sigma length differs from the action size");
  }
  for (double s : sigma) {
    if (!(s > 0.0) || !std::isfinite(s)) throw InputError("policy: sigma must be > 0");
  }
}

double GaussianPolicy::log_prob(const Vector& mean, const Vector& action) const {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double s = sigma[static_cast<size_t>(i)];
    const double z = (action(i) - mean(i)) / s;
    lp += -0.5 * z * z - std::log(s) - 0.5 * kLogTwoPi;
  }
  return lp;
}

Vector GaussianPolicy::sample(const Vector& mean, std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector a(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    a(i) = mean(i) + sigma[static_cast<size_t>(i)] * normal(rng);
  }
  return a;
}

Action to_action(const Vector& flat) {
  if (flat.size() % 3 != 0) throw StructuralError("action vector length must be a multiple of 3");
  Action a;
  for (Eigen::Index j = 0; j < flat.size() / 3; ++j) a.offsets.push_back(flat.segment<3>(3 * j));
  return a;
}

// ---------------------------------------------------------------------------
// GAE and PPO

GaeResult compute_gae(std::span<const Transition> batch, double gamma, double lambda) {
  if (batch.empty()) throw InputError("compute_gae: empty batch");
  if (!batch.back().done) throw InputError("compute_gae: last episode is unfinished");
  const size_t n = batch.size();
  GaeResult r;
  r.raw_advantages.assign(n, 0.0);
  r.returns.assign(n, 0.0);
  double next_adv = 0.0;
  double next_value = 0.0;
  for (size_t k = n; k-- > 0;) {
    const Transition& t = batch[k];
    if (t.done) {
      next_adv = 0.0;
      next_value = 0.0;
    }
    const double delta = t.reward.total + gamma * next_value - t.value;
    const double adv = delta + gamma * lambda * next_adv;
    r.raw_advantages[k] = adv;
    r.returns[k] = adv + t.value;
    next_adv = adv;
    next_value = t.value;
  }
  const double mean =
      std::accumulate(r.raw_advantages.begin(), r.raw_advantages.end(), 0.0) / static_cast<double>(n);
  double var = 0.0;
  for (double a : r.raw_advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  r.advantages.resize(n);
  for (size_t k = 0; k < n; ++k) {
    r.advantages[k] = sd > 1e-12 ? (r.raw_advantages[k] - mean) / sd : 0.0;
  }
  return r;
}

double clip_ratio(double ratio, double clip) {
  return std::clamp(ratio, 1.0 - clip, 1.0 + clip);
}

double surrogate_factor(double ratio, double advantage, double clip) {
  const double clipped = clip_ratio(ratio, clip);
  return ratio * advantage <= clipped * advantage ? ratio : clipped;
}

std::vector<double> policy_log_probs(const GaussianPolicy& policy,
                                     std::span<const Transition> batch) {
  std::vector<double> out;
  out.reserve(batch.size());
  for (const Transition& t : batch) {
    out.push_back(policy.log_prob(mlp_forward(policy.mean_net, t.obs), t.action));
  }
  return out;
}

PpoStats ppo_update(GaussianPolicy& policy, MlpParams& value, AdamState& policy_adam,
                    AdamState& value_adam, std::span<const Transition> batch,
                    const GaeResult& gae, const PpoConfig& config, std::mt19937_64& rng) {
  if (batch.empty()) throw InputError("ppo_update: empty batch");
  if (gae.advantages.size() != batch.size() || gae.returns.size() != batch.size()) {
    throw StructuralError("ppo_update: advantages do not match the batch");
  }
  if (!(config.clip > 0.0) || config.epochs < 1 || config.minibatch < 1) {
    throw InputError("ppo_update: invalid configuration");
  }
  policy.validate();
  const int obs_dim = policy.mean_net.input_size();
  const int act_dim = policy.action_size();
  std::vector<size_t> order(batch.size());
  std::iota(order.begin(), order.end(), size_t{0});

  PpoStats st;
  double ratio_sum = 0.0;
  double clipped = 0.0;
  double samples = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.minibatch)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.minibatch));
      const auto b = static_cast<Eigen::Index>(stop - start);
      const double inv_b = 1.0 / static_cast<double>(b);
      Matrix obs(obs_dim, b);
      for (Eigen::Index i = 0; i < b; ++i) obs.col(i) = batch[order[start + static_cast<size_t>(i)]].obs;

      MlpCache pcache;
      const Matrix mean = mlp_forward(policy.mean_net, obs, &pcache);
      Matrix pgrad = Matrix::Zero(act_dim, b);
      double ploss = 0.0;
      double mb_ratio = 0.0;
      double mb_clipped = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) {
        const Transition& t = batch[order[start + static_cast<size_t>(i)]];
        const double adv = gae.advantages[order[start + static_cast<size_t>(i)]];
        const double ratio = std::exp(policy.log_prob(mean.col(i), t.action) - t.log_prob);
        const double factor = surrogate_factor(ratio, adv, config.clip);
        ploss -= factor * adv * inv_b;
        mb_ratio += ratio;
        if (std::abs(ratio - 1.0) > config.clip) mb_clipped += 1.0;
        if (factor == ratio) {
          for (int k = 0; k < act_dim; ++k) {
            const double s = policy.sigma[static_cast<size_t>(k)];
            pgrad(k, i) = -inv_b * ratio * adv * (t.action(k) - mean(k, i)) / (s * s);
          }
        }
      }

      MlpCache vcache;
      const Matrix v = mlp_forward(value, obs, &vcache);
      Matrix vgrad(1, b);
      double vloss = 0.0;
      for (Eigen::Index i = 0; i < b; ++i) {
        const double err = v(0, i) - gae.returns[order[start + static_cast<size_t>(i)]];
        vloss += err * err * inv_b;
        vgrad(0, i) = 2.0 * err * inv_b;
      }

      ++st.minibatches;
      if (!std::isfinite(ploss) || !std::isfinite(vloss)) {
        ++st.skipped;
        continue;
      }
      try {
        const MlpGrads pg = mlp_backward(policy.mean_net, pcache, pgrad);
        const MlpGrads vg = mlp_backward(value, vcache, vgrad);
        if (!pg.all_finite() || !vg.all_finite()) throw OptimizationError("non-finite gradient");
        adam_step(policy.mean_net, pg, policy_adam);
        adam_step(value, vg, value_adam);
      } catch (const OptimizationError&) {
        ++st.skipped;
        continue;
      }
      st.policy_loss += ploss * static_cast<double>(b);
      st.value_loss += vloss * static_cast<double>(b);
      ratio_sum += mb_ratio;
      clipped += mb_clipped;
      samples += static_cast<double>(b);
    }
  }
  if (samples > 0.0) {
    st.mean_ratio = ratio_sum / samples;
    st.clip_fraction = clipped / samples;
    st.policy_loss /= samples;
    st.value_loss /= samples;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Hard negative mining

double HardSampleWeights::weight(size_t clip) const {
  return std::ldexp(1.0, std::min(failures_.at(clip), kMaxDoublings));
}

void HardSampleWeights::record_failure(size_t clip) {
  int& f = failures_.at(clip);
  if (f < kMaxDoublings) ++f;
}

size_t HardSampleWeights::sample(std::mt19937_64& rng) const {
  if (failures_.empty()) throw InputError("hard-sample weights: no clips");
  std::vector<double> w(failures_.size());
  for (size_t i = 0; i < w.size(); ++i) w[i] = weight(i);
  std::discrete_distribution<size_t> dist(w.begin(), w.end());
  return dist(rng);
}

// ---------------------------------------------------------------------------
// Models and configuration

ReferenceClip ReferenceClip::build(const Skeleton& skeleton, std::string id,
                                   MotionSequence seq) {
  check_sequence(skeleton, seq);
  ReferenceClip c;
  c.id = std::move(id);
  c.derivs = derive_velocities(skeleton, seq);
  c.frames.resize(seq.frames.size());
  for (size_t l = 0; l < seq.frames.size(); ++l) {
    c.frames[l] = {seq.frames[l].joint_rot, c.derivs.joint_pos[l], c.derivs.lin_vel[l],
                   c.derivs.ang_vel[l]};
  }
  c.disc_features = sequence_disc_features(skeleton, seq);
  c.seq = std::move(seq);
  return c;
}

void ImitatorModel::save(const std::filesystem::path& dir) const {
  write_json(dir / "policy.json", mlp_to_json(policy.mean_net, "policy", &policy.sigma));
  write_json(dir / "value.json", mlp_to_json(value, "value"));
  write_json(dir / "discriminator.json", mlp_to_json(discriminator, "discriminator"));
}

ImitatorModel ImitatorModel::load(const std::filesystem::path& dir, const Skeleton& skeleton) {
  auto read = [&](const char* file, const char* expected, std::vector<double>* sigma) {
    const JsonFile f = JsonFile::load(dir / file);
    std::string role;
    MlpParams p = mlp_from_json(f, "", &role, sigma);
    if (role != expected) f.fail("/role", std::string("expected '") + expected + "'");
    return p;
  };
  ImitatorModel m;
  m.policy.mean_net = read("policy.json", "policy", &m.policy.sigma);
  m.value = read("value.json", "value", nullptr);
  m.discriminator = read("discriminator.json", "discriminator", nullptr);
  const int obs = observation_size(skeleton);
  const int act = 3 * skeleton.num_joints();
  if (m.policy.mean_net.input_size() != obs || m.policy.action_size() != act ||
      m.value.input_size() != obs || m.value.output_size() != 1 ||
      m.discriminator.input_size() != disc_feature_size(skeleton) ||
      m.discriminator.output_size() != 1) {
    throw StructuralError("checkpoint in " + dir.string() + " does not fit skeleton '" +
                          skeleton.name() + "'");
  }
  if (m.policy.sigma.empty()) {
    m.policy.sigma.assign(static_cast<size_t>(act), ImitatorConfig{}.sigma);
  }
  m.policy.validate();
  return m;
}

void ImitatorConfig::validate() const {
  if (iterations < 0) throw InputError("iterations must be >= 0");
  if (steps_per_iter < 1) throw InputError("steps_per_iter must be >= 1");
  if (episode_batch < 1) throw InputError("episode_batch must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw InputError("gamma must be in (0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("lambda must be in [0, 1]");
  if (!(sigma > 0.0)) throw InputError("sigma must be > 0");
  if (!(termination_m > 0.0)) throw InputError("termination threshold must be > 0");
  if (!(ppo.clip > 0.0 && ppo.clip < 1.0)) throw InputError("ppo clip must be in (0, 1)");
  if (ppo.epochs < 1 || ppo.minibatch < 1) throw InputError("ppo epochs and minibatch must be >= 1");
  if (!(ppo.learning_rate >= 0.0) || !(disc_learning_rate >= 0.0)) {
    throw InputError("learning rates must be >= 0");
  }
  if (disc_batch < 1) throw InputError("disc_batch must be >= 1");
  for (const auto* h : {&policy_hidden, &value_hidden, &disc_hidden}) {
    for (int s : *h) {
      if (s < 1) throw InputError("hidden sizes must be positive");
    }
  }
  reward.validate();
  sim.validate();
}

Json ImitatorConfig::to_json() const {
  return {{"iterations", iterations},
          {"steps_per_iter", steps_per_iter},
          {"episode_batch", episode_batch},
          {"gamma", gamma},
          {"lambda", lambda},
          {"sigma", sigma},
          {"termination_m", termination_m},
          {"ppo_clip", ppo.clip},
          {"ppo_epochs", ppo.epochs},
          {"minibatch", ppo.minibatch},
          {"learning_rate", ppo.learning_rate},
          {"disc_learning_rate", disc_learning_rate},
          {"disc_batch", disc_batch},
          {"policy_hidden", policy_hidden},
          {"value_hidden", value_hidden},
          {"disc_hidden", disc_hidden},
          {"reward",
           {{"w_rot", reward.w_rot},
            {"w_pos", reward.w_pos},
            {"w_vel", reward.w_vel},
            {"w_ang_vel", reward.w_ang_vel},
            {"scale_rot", reward.scale_rot},
            {"scale_pos", reward.scale_pos},
            {"scale_vel", reward.scale_vel},
            {"scale_ang_vel", reward.scale_ang_vel},
            {"energy_coeff", reward.energy_coeff}}},
          {"sim", sim.to_json()}};
}

ImitatorConfig ImitatorConfig::from_json(const JsonFile& f, const std::string& base) {
  ImitatorConfig c;
  auto num = [&](const std::string& key, double& field) {
    if (f.has(base + "/" + key)) field = f.number(base + "/" + key);
  };
  auto integer = [&](const std::string& key, int& field) {
    if (f.has(base + "/" + key)) field = static_cast<int>(f.integer(base + "/" + key));
  };
  auto sizes = [&](const std::string& key, std::vector<int>& field) {
    const std::string ptr = base + "/" + key;
    if (!f.has(ptr)) return;
    const Json& a = f.at(ptr);
    if (!a.is_array()) f.fail(ptr, "expected an array of sizes");
    field.clear();
    for (size_t i = 0; i < a.size(); ++i) {
      field.push_back(static_cast<int>(f.integer(ptr + "/" + std::to_string(i))));
    }
  };
  integer("iterations", c.iterations);
  integer("steps_per_iter", c.steps_per_iter);
  integer("episode_batch", c.episode_batch);
  num("gamma", c.gamma);
  num("lambda", c.lambda);
  num("sigma", c.sigma);
  num("termination_m", c.termination_m);
  num("ppo_clip", c.ppo.clip);
  integer("ppo_epochs", c.ppo.epochs);
  integer("minibatch", c.ppo.minibatch);
  num("learning_rate", c.ppo.learning_rate);
  num("disc_learning_rate", c.disc_learning_rate);
  integer("disc_batch", c.disc_batch);
  sizes("policy_hidden", c.policy_hidden);
  sizes("value_hidden", c.value_hidden);
  sizes("disc_hidden", c.disc_hidden);
  num("reward/w_rot", c.reward.w_rot);
  num("reward/w_pos", c.reward.w_pos);
  num("reward/w_vel", c.reward.w_vel);
  num("reward/w_ang_vel", c.reward.w_ang_vel);
  num("reward/scale_rot", c.reward.scale_rot);
  num("reward/scale_pos", c.reward.scale_pos);
  num("reward/scale_vel", c.reward.scale_vel);
  num("reward/scale_ang_vel", c.reward.scale_ang_vel);
  num("reward/energy_coeff", c.reward.energy_coeff);
  if (f.has(base + "/sim")) c.sim = SimConfig::from_json(f, base + "/sim");
  try {
    c.validate();
  } catch (const InputError& e) {
    f.fail(base.empty() ? "/" : base, e.what());
  }
  return c;
}

ImitatorModel init_imitator(const Skeleton& skeleton, const ImitatorConfig& config,
                            std::mt19937_64& rng) {
  config.validate();
  const int obs = observation_size(skeleton);
  const int act = 3 * skeleton.num_joints();
  auto sizes = [](int in, const std::vector<int>& hidden, int out) {
    std::vector<int> s{in};
    s.insert(s.end(), hidden.begin(), hidden.end());
    s.push_back(out);
    return s;
  };
  ImitatorModel m;
  m.policy.mean_net =
      MlpParams::init(sizes(obs, config.policy_hidden, act), OutputActivation::None, 0.01, rng);
  m.policy.sigma.assign(static_cast<size_t>(act), config.sigma);
  m.value = MlpParams::init(sizes(obs, config.value_hidden, 1), OutputActivation::None, 1.0, rng);
  m.discriminator = MlpParams::init(sizes(disc_feature_size(skeleton), config.disc_hidden, 1),
                                    OutputActivation::Sigmoid, 1.0, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Rollouts

EpisodeResult rollout(const Skeleton& skeleton, const ImitatorModel& model,
                      const ReferenceClip& clip, int clip_index, const ImitatorConfig& config,
                      std::mt19937_64& rng, bool deterministic) {
  const MotionSequence& seq = clip.seq;
  const int L = seq.length();
  if (L < 2) throw InputError("rollout: clip '" + clip.id + "' is shorter than 2 frames");
  if (std::abs(config.sim.dt * seq.fps - 1.0) > 1e-9) {
    throw InputError("rollout: clip '" + clip.id + "' at " + std::to_string(seq.fps) +
                     " fps does not match the control step");
  }
  std::uniform_int_distribution<int> start_dist(0, L - 2);
  const int start = start_dist(rng);

  Simulator sim(skeleton, config.sim);
  SimCharacterState state = reset_to_pose(skeleton, seq, clip.derivs, start);
  FrameQuantities simq = state_quantities(sim, state);
  Pose prev_pose = state.pose();
  WorldPose prev_world;
  prev_world.positions = simq.pos;

  EpisodeResult ep;
  std::vector<Vector> features;
  std::vector<Vec3> lin_vel, ang_vel;
  for (int l = start; l + 1 < L; ++l) {
    const auto next = static_cast<size_t>(l + 1);
    Transition t;
    t.obs = build_observation(skeleton, clip.frames[next], clip.frames[static_cast<size_t>(l)], simq);
    const Vector mean = mlp_forward(model.policy.mean_net, t.obs);
    t.action = deterministic ? mean : model.policy.sample(mean, rng);
    t.log_prob = model.policy.log_prob(mean, t.action);
    t.clip = clip_index;
    t.frame = l + 1;
    const auto targets = pd_targets(seq.frames[next], to_action(t.action));
    try {
      state = sim.step(state, targets);
    } catch (const SimulationDiverged&) {
      ep.diverged = true;
      ep.failed = true;
      break;
    }
    simq = state_quantities(sim, state);
    const Pose pose = state.pose();
    WorldPose world;
    world.positions = simq.pos;
    pose_velocities(prev_world, prev_pose, world, pose, seq.fps, lin_vel, ang_vel);
    t.disc_feature = disc_features(skeleton, pose, world, lin_vel, ang_vel);
    prev_pose = pose;
    prev_world = std::move(world);

    t.reward.mimic = mimic_reward(clip.frames[next], simq, config.reward);
    t.reward.energy = energy_penalty(state.last_torques, state.joint_ang_vel,
                                     config.reward.energy_coeff);
    const bool terminated = check_termination(skeleton, seq.frames[next], state,
                                              config.termination_m);
    t.done = terminated || l + 2 == L;
    t.failed = terminated;
    ep.transitions.push_back(std::move(t));
    if (terminated) {
      ep.failed = true;
      break;
    }
  }
  if (ep.transitions.empty()) return ep;
  ep.transitions.back().done = true;
  ep.transitions.back().failed = ep.failed;

  const auto n = static_cast<Eigen::Index>(ep.transitions.size());
  Matrix obs(ep.transitions.front().obs.size(), n);
  Matrix feats(ep.transitions.front().disc_feature.size(), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    obs.col(i) = ep.transitions[static_cast<size_t>(i)].obs;
    feats.col(i) = ep.transitions[static_cast<size_t>(i)].disc_feature;
  }
  const Matrix values = mlp_forward(model.value, obs);
  const std::vector<double> scores = disc_scores(model.discriminator, feats);
  for (Eigen::Index i = 0; i < n; ++i) {
    Transition& t = ep.transitions[static_cast<size_t>(i)];
    t.value = values(0, i);
    t.reward.adversarial = adversarial_reward(scores[static_cast<size_t>(i)]);
    t.reward.total = t.reward.mimic + t.reward.energy + t.reward.adversarial;
  }
  return ep;
}

// ---------------------------------------------------------------------------
// Training

int worker_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MORPH_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<int>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  const int workers = std::min(n, std::max(1, threads));
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Json TrainLogRecord::to_json() const {
  return {{"iter", iter},
          {"mean_reward", mean_reward},
          {"mean_mimic", mean_mimic},
          {"mean_len", mean_len},
          {"clip_frac", clip_frac},
          {"disc_loss", disc_loss},
          {"train_ifr", train_ifr},
          {"mean_ratio", mean_ratio},
          {"value_loss", value_loss}};
}

TrainResult train_imitator(const Skeleton& skeleton, std::span<const ReferenceClip> clips,
                           const ImitatorConfig& config, std::uint64_t seed,
                           const ImitatorModel* init, const TrainCallback& on_iter) {
  config.validate();
  if (clips.empty()) throw InputError("train_imitator: empty dataset");
  std::mt19937_64 rng(seed);
  TrainResult result;
  result.model = init ? *init : init_imitator(skeleton, config, rng);
  result.model.policy.validate();
  result.weights = HardSampleWeights(clips.size());
  ImitatorModel& model = result.model;
  AdamState policy_adam = AdamState::for_params(model.policy.mean_net, config.ppo.learning_rate);
  AdamState value_adam = AdamState::for_params(model.value, config.ppo.learning_rate);
  AdamState disc_adam = AdamState::for_params(model.discriminator, config.disc_learning_rate);

  std::vector<std::pair<size_t, Eigen::Index>> real_index;
  for (size_t c = 0; c < clips.size(); ++c) {
    for (Eigen::Index l = 0; l < clips[c].disc_features.cols(); ++l) real_index.emplace_back(c, l);
  }
  const int threads = worker_count(config.threads);

  for (int it = 1; it <= config.iterations; ++it) {
    std::vector<Transition> batch;
    std::vector<bool> clip_failed(clips.size(), false);
    int episodes = 0;
    int failed_episodes = 0;
    while (static_cast<int>(batch.size()) < config.steps_per_iter) {
      const int k = config.episode_batch;
      std::vector<size_t> picks(static_cast<size_t>(k));
      std::vector<std::uint64_t> seeds(static_cast<size_t>(k));
      for (int e = 0; e < k; ++e) {
        picks[static_cast<size_t>(e)] = result.weights.sample(rng);
        seeds[static_cast<size_t>(e)] = rng();
      }
      std::vector<EpisodeResult> results(static_cast<size_t>(k));
      parallel_for(k, threads, [&](int e) {
        const auto ue = static_cast<size_t>(e);
        std::mt19937_64 ep_rng(seeds[ue]);
        results[ue] = rollout(skeleton, model, clips[picks[ue]], static_cast<int>(picks[ue]),
                              config, ep_rng);
      });
      for (int e = 0; e < k; ++e) {
        EpisodeResult& r = results[static_cast<size_t>(e)];
        ++episodes;
        if (r.failed) {
          ++failed_episodes;
          clip_failed[picks[static_cast<size_t>(e)]] = true;
        }
        for (Transition& t : r.transitions) batch.push_back(std::move(t));
      }
    }

    TrainLogRecord rec;
    rec.iter = it;
    for (const Transition& t : batch) {
      rec.mean_reward += t.reward.total;
      rec.mean_mimic += t.reward.mimic;
    }
    rec.mean_reward /= static_cast<double>(batch.size());
    rec.mean_mimic /= static_cast<double>(batch.size());
    rec.mean_len = static_cast<double>(batch.size()) / episodes;
    rec.train_ifr = static_cast<double>(failed_episodes) / episodes;

    // discriminator: reference frames against freshly simulated ones
    const auto db = static_cast<Eigen::Index>(config.disc_batch);
    const int fdim = disc_feature_size(skeleton);
    Matrix real(fdim, db), fake(fdim, db);
    std::uniform_int_distribution<size_t> pick_real(0, real_index.size() - 1);
    std::uniform_int_distribution<size_t> pick_fake(0, batch.size() - 1);
    for (Eigen::Index i = 0; i < db; ++i) {
      const auto [c, l] = real_index[pick_real(rng)];
      real.col(i) = clips[c].disc_features.col(l);
      fake.col(i) = batch[pick_fake(rng)].disc_feature;
    }
    rec.disc_loss = disc_update(model.discriminator, real, fake, disc_adam).loss;

    const GaeResult gae = compute_gae(batch, config.gamma, config.lambda);
    const PpoStats ps = ppo_update(model.policy, model.value, policy_adam, value_adam, batch, gae,
                                   config.ppo, rng);
    rec.clip_frac = ps.clip_fraction;
    rec.mean_ratio = ps.mean_ratio;
    rec.value_loss = ps.value_loss;

    for (size_t c = 0; c < clips.size(); ++c) {
      if (clip_failed[c]) result.weights.record_failure(c);
    }
    result.log.push_back(rec);
    if (on_iter) on_iter(rec);
  }
  return result;
}

} // namespace morph
