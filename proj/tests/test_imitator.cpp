#include "morph/errors.hpp"
#include "morph/imitator.hpp"
#include "morph/preprocess.hpp"
#include "morph/synth.hpp"
#include "support.hpp"

#include <filesystem>
#include <map>

using namespace morph;
using namespace morph::test;

namespace {

FrameQuantities still_quantities(const Skeleton& sk, const Pose& p) {
  FrameQuantities q;
  q.rot = p.joint_rot;
  q.pos = forward_kinematics(sk, p).positions;
  q.lin_vel.assign(q.pos.size(), Vec3::Zero());
  q.ang_vel.assign(q.pos.size(), Vec3::Zero());
  return q;
}

Transition step_with(double reward, double value, bool done) {
  Transition t;
  t.reward.total = reward;
  t.value = value;
  t.done = done;
  return t;
}

/// Independent GAE: explicit discounted sums of TD residuals per episode.
std::vector<double> gae_oracle(const std::vector<Transition>& batch, double gamma, double lambda) {
  std::vector<double> out;
  size_t begin = 0;
  for (size_t end = 0; end < batch.size(); ++end) {
    if (!batch[end].done) continue;
    for (size_t t = begin; t <= end; ++t) {
      double adv = 0.0;
      double discount = 1.0;
      for (size_t k = t; k <= end; ++k) {
        const double next_value = k == end ? 0.0 : batch[k + 1].value;
        const double delta = batch[k].reward.total + gamma * next_value - batch[k].value;
        adv += discount * delta;
        discount *= gamma * lambda;
      }
      out.push_back(adv);
    }
    begin = end + 1;
  }
  return out;
}

ImitatorConfig small_config() {
  ImitatorConfig c;
  c.iterations = 2;
  c.steps_per_iter = 128;
  c.episode_batch = 4;
  c.policy_hidden = {32};
  c.value_hidden = {32};
  c.disc_hidden = {16};
  c.ppo.epochs = 2;
  c.threads = 1;
  return c;
}

ReferenceClip static_clip(const Skeleton& sk, int frames = 30) {
  return ReferenceClip::build(sk, "still", hold(sk, grounded_rest(sk), frames));
}

bool same_transitions(const std::vector<Transition>& a, const std::vector<Transition>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].obs != b[i].obs || a[i].action != b[i].action) return false;
    if (a[i].reward.total != b[i].reward.total || a[i].log_prob != b[i].log_prob) return false;
    if (a[i].done != b[i].done || a[i].frame != b[i].frame) return false;
  }
  return true;
}

} // namespace

TEST_CASE("perfect match earns exactly one") {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(61);
  const FrameQuantities q = still_quantities(sk, random_pose(sk, rng));
  CHECK(mimic_reward(q, q) == 1.0);
}

TEST_CASE("mimic reward plug-in values") {
  const Skeleton& sk = default_humanoid();
  const FrameQuantities ref = still_quantities(sk, rest_pose(sk));
  FrameQuantities sim = ref;
  const double angle = 3.0 * std::log(2.0) / 100.0;
  for (Quat& q : sim.rot) q = quat_exp(Vec3(-angle, 0.0, 0.0));
  CHECK(mimic_reward(ref, sim) == doctest::Approx(0.75).epsilon(1e-12));

  FrameQuantities far = ref;
  for (Vec3& p : far.pos) p += Vec3(1e6, 0.0, 0.0);
  const double r = mimic_reward(ref, far);
  CHECK(r > 0.0);
  CHECK(r == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("mimic reward is invariant under a common horizontal translation") {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(62);
  for (int i = 0; i < 20; ++i) {
    FrameQuantities ref = still_quantities(sk, random_pose(sk, rng));
    FrameQuantities sim = still_quantities(sk, random_pose(sk, rng));
    const double before = mimic_reward(ref, sim);
    for (Vec3& p : ref.pos) p += Vec3(2.0, -1.0, 0.0);
    for (Vec3& p : sim.pos) p += Vec3(2.0, -1.0, 0.0);
    CHECK(mimic_reward(ref, sim) == doctest::Approx(before).epsilon(1e-12));
    CHECK(before > 0.0);
    CHECK(before <= 1.0);
  }
}

TEST_CASE("energy penalty arithmetic") {
  std::vector<Vec3> torque(13, Vec3::Zero()), omega(13, Vec3::Zero());
  CHECK(energy_penalty(torque, omega) == 0.0);
  for (int j = 0; j < 10; ++j) {
    torque[static_cast<size_t>(j)] = Vec3(2.0, 0.0, 0.0);
    omega[static_cast<size_t>(j)] = Vec3(0.5, 3.0, 0.0);
  }
  CHECK(energy_penalty(torque, omega) == doctest::Approx(-0.005).epsilon(1e-15));
  for (Vec3& w : omega) w *= 2.0;
  CHECK(energy_penalty(torque, omega) == doctest::Approx(-0.02).epsilon(1e-15));
  omega.pop_back();
  CHECK_THROWS_AS(energy_penalty(torque, omega), StructuralError);
}

TEST_CASE("adversarial reward arithmetic") {
  CHECK(std::abs(adversarial_reward(0.5) + std::log(0.5)) < 1e-12);
  CHECK(adversarial_reward(kDiscEpsilon) == doctest::Approx(1e-4).epsilon(1e-3));
  CHECK(adversarial_reward(1.0) == doctest::Approx(-std::log(kDiscEpsilon)).epsilon(1e-12));
  CHECK(adversarial_reward(-3.0) == adversarial_reward(kDiscEpsilon));
  double prev = -1.0;
  for (double d = 0.0; d <= 1.0; d += 0.01) {
    CHECK(adversarial_reward(d) >= prev);
    prev = adversarial_reward(d);
  }
}

TEST_CASE("reward weights must be positive and sum to one") {
  RewardWeights w;
  CHECK_NOTHROW(w.validate());
  w.w_rot = 0.6;
  CHECK_THROWS_AS(w.validate(), InputError);
  w = {};
  w.scale_pos = 0.0;
  CHECK_THROWS_AS(w.validate(), InputError);
}

TEST_CASE("GAE on a single terminal step") {
  const std::vector<Transition> b{step_with(2.5, 0.0, true)};
  CHECK(compute_gae(b).raw_advantages[0] == 2.5);
}

TEST_CASE("GAE hand-rolled recursion") {
  const std::vector<Transition> b{step_with(1, 0, false), step_with(1, 0, false), step_with(1, 0, true)};
  const GaeResult r = compute_gae(b, 0.5, 1.0);
  CHECK(r.raw_advantages == std::vector<double>{1.75, 1.5, 1.0});
}

TEST_CASE("GAE matches explicit sums and normalises") {
  std::mt19937_64 rng(63);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Transition> b;
  for (int e = 0; e < 6; ++e) {
    const int len = 1 + static_cast<int>(rng() % 9);
    for (int k = 0; k < len; ++k) b.push_back(step_with(n(rng), n(rng), k == len - 1));
  }
  const GaeResult r = compute_gae(b, 0.99, 0.95);
  const std::vector<double> expect = gae_oracle(b, 0.99, 0.95);
  double mean = 0.0, var = 0.0;
  for (size_t i = 0; i < b.size(); ++i) {
    CHECK(std::abs(r.raw_advantages[i] - expect[i]) < 1e-12);
    CHECK(r.returns[i] == doctest::Approx(r.raw_advantages[i] + b[i].value).epsilon(1e-14));
    mean += r.advantages[i];
  }
  mean /= static_cast<double>(b.size());
  for (double a : r.advantages) var += (a - mean) * (a - mean);
  var /= static_cast<double>(b.size());
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::abs(var - 1.0) < 1e-9);
}

TEST_CASE("GAE rejects empty and unfinished batches") {
  CHECK_THROWS_AS(compute_gae(std::vector<Transition>{}), InputError);
  CHECK_THROWS_AS(compute_gae(std::vector<Transition>{step_with(1, 0, false)}), InputError);
}

TEST_CASE("PPO clip factors") {
  const double clip = 0.1;
  const std::vector<double> ratios{0.85, 1.0, 1.3};
  std::vector<double> clipped;
  for (double r : ratios) clipped.push_back(clip_ratio(r, clip));
  CHECK(clipped == std::vector<double>{0.9, 1.0, 1.1});
  // min(r A, clip(r) A) picks the pessimistic factor for each advantage sign
  CHECK(surrogate_factor(0.85, 1.0, clip) == 0.85);
  CHECK(surrogate_factor(1.0, 1.0, clip) == 1.0);
  CHECK(surrogate_factor(1.3, 1.0, clip) == 1.1);
  CHECK(surrogate_factor(0.85, -1.0, clip) == 0.9);
  CHECK(surrogate_factor(1.0, -1.0, clip) == 1.0);
  CHECK(surrogate_factor(1.3, -1.0, clip) == 1.3);
}

TEST_CASE("Gaussian log-probability matches the closed form") {
  std::mt19937_64 rng(64);
  GaussianPolicy pol;
  pol.mean_net = MlpParams::init({4, 6}, OutputActivation::None, 1.0, rng);
  pol.sigma = {0.05, 0.1, 0.2, 0.3, 0.5, 1.0};
  const Vector mean = Vector::LinSpaced(6, -0.5, 0.5);
  for (int i = 0; i < 50; ++i) {
    const Vector a = pol.sample(mean, rng);
    double expect = 0.0;
    for (int k = 0; k < 6; ++k) {
      const double s = pol.sigma[static_cast<size_t>(k)];
      const double z = (a(k) - mean(k)) / s;
      expect += -0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * M_PI);
    }
    CHECK(std::abs(pol.log_prob(mean, a) - expect) < 1e-9);
  }
}

TEST_CASE("policy samples follow the configured spread") {
  std::mt19937_64 rng(65);
  GaussianPolicy pol;
  pol.mean_net = MlpParams::init({2, 2}, OutputActivation::None, 1.0, rng);
  pol.sigma = {0.05, 0.5};
  const Vector mean = Vector::Zero(2);
  double s0 = 0.0, s1 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const Vector a = pol.sample(mean, rng);
    s0 += a(0) * a(0);
    s1 += a(1) * a(1);
  }
  CHECK(std::sqrt(s0 / n) == doctest::Approx(0.05).epsilon(0.03));
  CHECK(std::sqrt(s1 / n) == doctest::Approx(0.5).epsilon(0.03));
}

TEST_CASE("hard-sample weights double per failure up to the cap") {
  HardSampleWeights w(3);
  std::vector<double> seq{w.weight(0)};
  for (int i = 0; i < 3; ++i) {
    w.record_failure(0);
    seq.push_back(w.weight(0));
  }
  CHECK(seq == std::vector<double>{1, 2, 4, 8});
  for (int i = 0; i < 20; ++i) w.record_failure(1);
  CHECK(w.weight(1) == 1024.0);
  CHECK(w.weight(2) == 1.0);
  for (size_t c = 0; c < w.size(); ++c) {
    int e = 0;
    CHECK(std::frexp(w.weight(c), &e) == 0.5);
  }
}

TEST_CASE("clip sampling matches normalised weights") {
  HardSampleWeights w(4);
  w.record_failure(1);
  for (int i = 0; i < 2; ++i) w.record_failure(2);
  for (int i = 0; i < 3; ++i) w.record_failure(3);
  std::mt19937_64 rng(66);
  const int draws = 100000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < draws; ++i) ++counts[w.sample(rng)];
  const double total = 1 + 2 + 4 + 8;
  double chi2 = 0.0;
  for (size_t c = 0; c < 4; ++c) {
    const double expect = draws * w.weight(c) / total;
    chi2 += (counts[c] - expect) * (counts[c] - expect) / expect;
  }
  // 99th percentile of chi-square with 3 degrees of freedom
  CHECK(chi2 < 11.345);
}

TEST_CASE("observation layout is heading and translation invariant") {
  const Skeleton& sk = default_humanoid();
  CHECK(observation_size(sk) == 24 * sk.num_joints());
  std::mt19937_64 rng(67);
  const Pose a = random_pose(sk, rng);
  const Pose b = random_pose(sk, rng);
  const Pose c = random_pose(sk, rng);
  const Vector obs = build_observation(sk, still_quantities(sk, a), still_quantities(sk, b),
                                       still_quantities(sk, c));
  CHECK(obs.size() == observation_size(sk));
  CHECK(obs.allFinite());
  const Quat yaw(Eigen::AngleAxisd(1.1, Vec3::UnitZ()));
  auto moved = [&](Pose p) {
    p.joint_rot[0] = yaw * p.joint_rot[0];
    p.root_pos = yaw * p.root_pos + Vec3(4.0, -3.0, 0.0);
    return still_quantities(sk, p);
  };
  const Vector obs2 = build_observation(sk, moved(a), moved(b), moved(c));
  CHECK((obs - obs2).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("rollouts are reproducible and their rewards add up") {
  const Skeleton& sk = default_humanoid();
  const ImitatorConfig cfg = small_config();
  std::mt19937_64 init(68);
  const ImitatorModel model = init_imitator(sk, cfg, init);
  std::mt19937_64 synth_rng(69);
  const SynthBatch data = synth_generate(sk, "walk", 1, {}, synth_rng);
  const ReferenceClip clip = ReferenceClip::build(sk, "walk", preprocess(sk, data.clean[0]));
  std::mt19937_64 r1(70), r2(70);
  const EpisodeResult a = rollout(sk, model, clip, 0, cfg, r1);
  const EpisodeResult b = rollout(sk, model, clip, 0, cfg, r2);
  CHECK(same_transitions(a.transitions, b.transitions));
  REQUIRE(!a.transitions.empty());
  CHECK(a.transitions.back().done);
  for (const Transition& t : a.transitions) {
    CHECK(t.reward.total == t.reward.mimic + t.reward.energy + t.reward.adversarial);
    CHECK(t.reward.mimic > 0.0);
    CHECK(t.reward.mimic <= 1.0);
    CHECK(t.reward.energy <= 0.0);
    CHECK(t.reward.adversarial >= 0.0);
    CHECK(t.obs.size() == observation_size(sk));
    CHECK(t.action.size() == 3 * sk.num_joints());
  }
  const std::vector<double> lp = policy_log_probs(model.policy, a.transitions);
  for (size_t i = 0; i < lp.size(); ++i) CHECK(std::abs(lp[i] - a.transitions[i].log_prob) < 1e-9);
}

TEST_CASE("deterministic tracking of a static clip") {
  const Skeleton& sk = default_humanoid();
  const ImitatorConfig cfg = small_config();
  std::mt19937_64 init(71);
  const ImitatorModel model = init_imitator(sk, cfg, init);
  const ReferenceClip clip = static_clip(sk, 40);
  std::mt19937_64 rng(72);
  const EpisodeResult ep = rollout(sk, model, clip, 0, cfg, rng, true);
  CHECK_FALSE(ep.failed);
  for (size_t i = 5; i < ep.transitions.size(); ++i) CHECK(ep.transitions[i].reward.mimic > 0.9);
}

TEST_CASE("termination ends the episode as a failure") {
  const Skeleton& sk = default_humanoid();
  const ImitatorConfig cfg = small_config();
  std::mt19937_64 init(73);
  const ImitatorModel model = init_imitator(sk, cfg, init);
  MotionSequence jumpy = hold(sk, grounded_rest(sk), 20);
  for (size_t l = 0; l < jumpy.frames.size(); ++l) jumpy.frames[l].root_pos.x() += l % 2 == 1 ? 0.6 : 0.0;
  const ReferenceClip clip = ReferenceClip::build(sk, "jumpy", jumpy);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed);
    const EpisodeResult ep = rollout(sk, model, clip, 0, cfg, rng);
    REQUIRE(ep.transitions.size() <= 2);
    CHECK(ep.failed);
    CHECK(ep.transitions.back().done);
    CHECK(ep.transitions.back().failed);
  }
}

TEST_CASE("zero advantages leave the policy untouched") {
  const Skeleton& sk = default_humanoid();
  const ImitatorConfig cfg = small_config();
  std::mt19937_64 init(74);
  ImitatorModel model = init_imitator(sk, cfg, init);
  const ReferenceClip clip = static_clip(sk);
  std::mt19937_64 rng(75);
  const EpisodeResult ep = rollout(sk, model, clip, 0, cfg, rng);
  GaeResult gae = compute_gae(ep.transitions);
  std::fill(gae.advantages.begin(), gae.advantages.end(), 0.0);
  const MlpParams before = model.policy.mean_net;
  AdamState pa = AdamState::for_params(model.policy.mean_net, 1e-3);
  AdamState va = AdamState::for_params(model.value, 1e-3);
  const PpoStats stats = ppo_update(model.policy, model.value, pa, va, ep.transitions, gae, cfg.ppo, rng);
  for (size_t k = 0; k < before.num_layers(); ++k) {
    CHECK(model.policy.mean_net.weights[k] == before.weights[k]);
    CHECK(model.policy.mean_net.biases[k] == before.biases[k]);
  }
  CHECK(stats.minibatches > 0);
  CHECK(stats.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("training is reproducible and independent of the worker count") {
  const Skeleton& sk = default_humanoid();
  const std::vector<ReferenceClip> clips{static_clip(sk, 20),
                                         ReferenceClip::build(sk, "lean", hold(sk, grounded_rest(sk), 25))};
  ImitatorConfig one = small_config();
  ImitatorConfig three = small_config();
  three.threads = 3;
  std::vector<TrainLogRecord> seen;
  const TrainResult a = train_imitator(sk, clips, one, 9, nullptr,
                                       [&](const TrainLogRecord& r) { seen.push_back(r); });
  const TrainResult b = train_imitator(sk, clips, three, 9);
  REQUIRE(a.log.size() == 2);
  REQUIRE(seen.size() == 2);
  for (size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].to_json() == b.log[i].to_json());
    CHECK(seen[i].to_json() == a.log[i].to_json());
    CHECK(a.log[i].iter == static_cast<int>(i) + 1);
    const Json j = a.log[i].to_json();
    for (const char* key : {"iter", "mean_reward", "mean_len", "clip_frac", "disc_loss", "train_ifr"}) {
      CHECK(j.contains(key));
    }
  }
  CHECK(a.model.policy.mean_net.weights.back() == b.model.policy.mean_net.weights.back());
  CHECK_THROWS_AS(train_imitator(sk, std::vector<ReferenceClip>{}, one, 9), InputError);
}

TEST_CASE("models and configs round trip") {
  const Skeleton& sk = default_humanoid();
  const ImitatorConfig cfg = small_config();
  std::mt19937_64 init(76);
  const ImitatorModel m = init_imitator(sk, cfg, init);
  const auto dir = std::filesystem::temp_directory_path() / "morph_imitator_model";
  std::filesystem::remove_all(dir);
  m.save(dir);
  const ImitatorModel back = ImitatorModel::load(dir, sk);
  CHECK(back.policy.sigma == m.policy.sigma);
  CHECK(back.policy.mean_net.weights[0] == m.policy.mean_net.weights[0]);
  CHECK(back.discriminator.output_activation == OutputActivation::Sigmoid);

  const Json j = cfg.to_json();
  CHECK(ImitatorConfig::from_json(JsonFile("cfg", j.dump()), "").to_json() == j);
  ImitatorConfig bad = cfg;
  bad.sigma = 0.0;
  CHECK_THROWS_AS(bad.validate(), InputError);
  CHECK(ImitatorConfig().sigma == 0.05);
  CHECK(ImitatorConfig().ppo.clip == 0.1);
  CHECK(ImitatorConfig().ppo.minibatch == 64);
  CHECK(ImitatorConfig().ppo.learning_rate == 4e-5);
}
