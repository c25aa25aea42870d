#include "morph/discriminator.hpp"
#include "morph/imitator.hpp"
#include "morph/pipeline.hpp"
#include "gradcheck.hpp"
#include "metric_oracle.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

using namespace morph;
using namespace morph::test;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void report(int id, const char* name, const Verdict& v, Clock::time_point start) {
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("criterion %2d %-28s %s  (%s; %.1f s)\n", id, name, v.pass ? "PASS" : "FAIL", v.detail.c_str(),
              secs);
  std::fflush(stdout);
  if (!v.pass) ++g_failures;
}

template <class Fn>
void run(int id, const char* name, Fn fn) {
  const auto start = Clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  report(id, name, v, start);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// ---------------------------------------------------------------------------

Verdict metric_oracle() {
  const auto start = Clock::now();
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(1001);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const MotionSequence m = near_ground_clip(sk, rng);
    const OracleMetrics o = oracle_metrics(sk, m);
    const PlausibilityReport r = evaluate_plausibility(sk, m);
    for (double d : {r.penetrate_mm - o.penetrate_mm, r.float_mm - o.float_mm, r.skate_mm - o.skate_mm,
                     r.pfc - o.pfc}) {
      worst = std::max(worst, std::abs(d));
    }
  }
  return {worst < 1e-9 && seconds_since(start) < 60.0, fmt("max |diff| %.2e over 100 clips", worst)};
}

Verdict gradients() {
  const auto start = Clock::now();
  const Skeleton& sk = default_humanoid();
  const int obs = observation_size(sk);
  const GradCheck p = check_gradients({obs, 512, 256, 3 * sk.num_joints()}, OutputActivation::None, 0.01, 200, 1002);
  const GradCheck v = check_gradients({obs, 512, 256, 1}, OutputActivation::None, 1.0, 200, 1003);
  const GradCheck d = check_gradients({disc_feature_size(sk), 256, 128, 1}, OutputActivation::Sigmoid, 1.0, 200, 1004);
  double worst = 0.0;
  for (const GradCheck& g : {p, v, d}) worst = std::max({worst, g.worst_param, g.worst_input});
  return {worst < 1e-4 && seconds_since(start) < 120.0, fmt("worst relative error %.2e, 3 x 200 probes", worst)};
}

Verdict simulator() {
  const auto start = Clock::now();
  const Skeleton& sk = default_humanoid();
  auto still = [&](const Pose& p) {
    SimCharacterState s;
    s.root_pos = p.root_pos;
    s.joint_rot = p.joint_rot;
    s.joint_ang_vel.assign(p.joint_rot.size(), Vec3::Zero());
    return s;
  };
  const std::vector<Quat> hold_pose(static_cast<size_t>(sk.num_joints()), Quat::Identity());

  SimConfig fall_cfg = SimConfig::humanoid_defaults();
  fall_cfg.contact = false;
  Simulator fall(sk, fall_cfg);
  Pose high = rest_pose(sk);
  high.root_pos.z() = 10.0;
  SimCharacterState s = still(high);
  const int fall_steps = static_cast<int>(std::lround(0.3 / fall_cfg.dt));
  const double span = fall_steps * fall_cfg.dt;
  const double drop = 0.5 * fall_cfg.gravity * span * span;
  double fall_dev = 0.0;
  for (int i = 1; i <= fall_steps; ++i) {
    s = fall.step(s, hold_pose);
    const double t = i * fall_cfg.dt;
    fall_dev = std::max(fall_dev, std::abs((10.0 - s.root_pos.z()) - 0.5 * fall_cfg.gravity * t * t));
  }
  const double fall_rel = fall_dev / drop;

  Simulator rest(sk, SimConfig::humanoid_defaults());
  s = still(grounded_rest(sk));
  double pen = 0.0;
  const int rest_steps = static_cast<int>(std::lround(2.0 / fall_cfg.dt));
  for (int i = 0; i < rest_steps; ++i) {
    StepInfo info;
    s = rest.step(s, hold_pose, &info);
    pen = std::max(pen, info.max_penetration);
  }

  SimConfig free_cfg;
  free_cfg.gravity = 0.0;
  free_cfg.contact = false;
  free_cfg.pd_kp = 0.0;
  free_cfg.pd_kd = 0.0;
  Simulator free_sim(sk, free_cfg);
  std::mt19937_64 rng(1005);
  std::normal_distribution<double> n(0.0, 1.0);
  s = still(random_pose(sk, rng));
  s.root_lin_vel = Vec3(0.3, -0.2, 0.5);
  for (Vec3& w : s.joint_ang_vel) w = Vec3(n(rng), n(rng), n(rng));
  double drift = 0.0;
  for (int i = 0; i < 100; ++i) {
    const SimCharacterState next = free_sim.step(s, hold_pose);
    drift = std::max(drift, (free_sim.linear_momentum(next) - free_sim.linear_momentum(s)).norm());
    s = next;
  }
  const bool pass = fall_rel <= 0.01 && pen <= 0.005 && drift < 1e-9 && seconds_since(start) < 60.0;
  return {pass, fmt("free fall dev %.2f%% of drop, rest penetration %.2f mm, momentum drift %.1e/step",
                    100.0 * fall_rel, 1000.0 * pen, drift)};
}

Verdict rewards() {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(1006);
  const Pose p = random_pose(sk, rng);
  FrameQuantities q;
  q.rot = p.joint_rot;
  q.pos = forward_kinematics(sk, p).positions;
  q.lin_vel.assign(q.pos.size(), Vec3(0.1, 0.0, 0.0));
  q.ang_vel.assign(q.pos.size(), Vec3(0.0, 0.2, 0.0));
  const double perfect = mimic_reward(q, q);
  std::vector<Vec3> torque(static_cast<size_t>(sk.num_joints()), Vec3::Zero());
  std::vector<Vec3> omega = torque;
  for (size_t j = 0; j < 10; ++j) {
    torque[j] = Vec3(1.0, 0.0, 0.0);
    omega[j] = Vec3(1.0, 0.0, 0.0);
  }
  const double energy = energy_penalty(torque, omega);
  const double adv = adversarial_reward(0.5);
  const bool pass = perfect == 1.0 && std::abs(energy + 0.005) < 1e-15 && std::abs(adv + std::log(0.5)) < 1e-12;
  return {pass, fmt("mimic %.17g, energy %.17g, adversarial %.17g", perfect, energy, adv)};
}

Verdict ppo_clip() {
  const double clip = 0.1;
  const std::vector<double> ratios{0.85, 1.0, 1.3};
  const std::vector<double> expected{0.9, 1.0, 1.1};
  bool pass = true;
  std::string got;
  for (size_t i = 0; i < ratios.size(); ++i) {
    const double c = clip_ratio(ratios[i], clip);
    // with a positive advantage the surrogate takes min(r, clip(r))
    const double pos = surrogate_factor(ratios[i], 1.0, clip);
    const double neg = surrogate_factor(ratios[i], -1.0, clip);
    pass = pass && std::abs(c - expected[i]) < 1e-15 && pos == std::min(ratios[i], expected[i]) &&
           neg == std::max(ratios[i], expected[i]);
    got += fmt("%.2f", c) + (i + 1 < ratios.size() ? "," : "");
  }
  return {pass, "clipped {" + got + "}"};
}

// ---------------------------------------------------------------------------

struct TrainedTracker {
  ImitatorModel model;
  std::vector<TrainLogRecord> log;
  std::vector<ReferenceClip> clips;
  double seconds = 0.0;
};

TrainedTracker train_tracker() {
  const Skeleton& sk = default_humanoid();
  TrainedTracker t;
  for (const char* preset : {"walk", "squat", "stand"}) {
    t.clips.push_back(ReferenceClip::build(sk, preset, preprocess(sk, synth_clean(sk, preset, 0.5, 0.3))));
  }
  const auto start = Clock::now();
  TrainResult r = train_imitator(sk, t.clips, ImitatorConfig{}, 7);
  t.seconds = seconds_since(start);
  t.model = std::move(r.model);
  t.log = std::move(r.log);
  return t;
}

Verdict desk_training(const TrainedTracker& t) {
  const Skeleton& sk = default_humanoid();
  const size_t w = std::min<size_t>(5, t.log.size());
  double head = 0.0, tail = 0.0;
  for (size_t i = 0; i < w; ++i) {
    head += t.log[i].mean_reward / static_cast<double>(w);
    tail += t.log[t.log.size() - w + i].mean_reward / static_cast<double>(w);
  }
  const double final_reward = t.log.back().mean_reward;
  int tracked = 0;
  std::string errs;
  for (const ReferenceClip& c : t.clips) {
    const RefineResult r = refine_motion(sk, t.model.policy, c.seq, ImitatorConfig{}.sim);
    const double e = mpjpe(sk, c.seq, r.motion);
    if (e <= 0.5) ++tracked;
    errs += (errs.empty() ? "" : ",") + fmt("%.3f", e);
  }
  const bool pass = final_reward >= 0.5 && tail > head && tracked >= 2 && t.seconds < 1800.0;
  return {pass, fmt("final reward %.3f, 5-iter mean %.3f -> %.3f, ", final_reward, head, tail) +
                    "MPJPE m {" + errs + "}, " + std::to_string(tracked) + "/3 tracked, " +
                    fmt("train %.0f s", t.seconds)};
}

/// Noisy inputs of the artifact suite and their refinements.
struct SuiteRun {
  std::vector<NamedMotion> noisy;
  std::vector<RefinedItem> items;
};

SuiteRun refine_suite(const TrainedTracker& t) {
  const Skeleton& sk = default_humanoid();
  PipelineConfig cfg;
  cfg.presets = {"walk", "squat", "stand"};
  cfg.clips_per_preset = 2;
  ArtifactSpec a, b, c, d, e, f;
  a.float_m = 0.10;
  b.penetrate_m = 0.05;
  c.skate_drift_mps = 0.3;
  d.lean_deg = 15.0;
  d.float_m = 0.05;
  e.jitter_rad = 0.03;
  e.penetrate_m = 0.02;
  f.skate_drift_mps = 0.2;
  f.float_m = 0.03;
  cfg.artifacts = {a, b, c, d, e, f};
  for (size_t i = 0; i < cfg.artifacts.size(); ++i) cfg.artifacts[i].seed = 11 + i;
  SuiteRun s;
  s.noisy = generate_suite(sk, cfg, 2024);
  std::vector<NamedMotion> pre = s.noisy;
  for (NamedMotion& m : pre) m.motion = preprocess(sk, m.motion);
  s.items = refine_batch(sk, t.model.policy, pre, cfg.imitator.sim, cfg.imitator.termination_m, 0);
  return s;
}

Verdict table_trend(const SuiteRun& s) {
  const Skeleton& sk = default_humanoid();
  std::vector<MotionSequence> noisy;
  for (const NamedMotion& m : s.noisy) noisy.push_back(m.motion);
  const SelectionOutcome sel = select_batch(sk, s.items, 0.5);
  const PlausibilityReport in = batch_metrics(sk, noisy);
  const PlausibilityReport out = batch_metrics(sk, sel.outputs);
  const bool pass = out.penetrate_mm <= 5.0 && out.float_mm <= 0.5 * in.float_mm && out.skate_mm <= 0.5 * in.skate_mm;
  return {pass, fmt("penetrate %.2f -> %.2f mm, float %.2f -> %.2f mm, ", in.penetrate_mm, out.penetrate_mm,
                    in.float_mm, out.float_mm) +
                    fmt("skate %.2f -> %.2f mm, ifr %.3f", in.skate_mm, out.skate_mm, sel.ifr)};
}

Verdict tau_sweep(const SuiteRun& s) {
  const Skeleton& sk = default_humanoid();
  std::vector<double> taus;
  for (int i = 1; i <= 10; ++i) taus.push_back(0.1 * i);
  const std::vector<TauRow> rows = sweep_tau(sk, s.items, taus);
  bool pass = true;
  std::set<std::string> prev;
  std::string ifrs;
  for (size_t k = 0; k < rows.size(); ++k) {
    const SelectionOutcome sel = select_batch(sk, s.items, taus[k]);
    std::set<std::string> accepted;
    for (const SelectionDecision& d : sel.decisions) {
      if (d.accepted_source == SelectedSource::Refined) accepted.insert(d.id);
    }
    pass = pass && std::includes(accepted.begin(), accepted.end(), prev.begin(), prev.end());
    pass = pass && rows[k].ifr == sel.ifr && (k == 0 || rows[k].ifr <= rows[k - 1].ifr);
    prev = accepted;
    ifrs += (ifrs.empty() ? "" : ",") + fmt("%.3f", rows[k].ifr);
  }
  return {pass, "ifr over tau 0.1..1.0 {" + ifrs + "}"};
}

Verdict finetuning() {
  const Skeleton& sk = default_humanoid();
  std::vector<MotionSequence> data;
  std::mt19937_64 rng(3);
  for (const std::string& preset : preset_names()) {
    const SynthBatch b = synth_generate(sk, preset, 2, ArtifactSpec{}, rng);
    for (const MotionSequence& m : b.clean) data.push_back(m);
  }
  std::mt19937_64 init(1);
  ToyGenerator g = ToyGenerator::init(sk, preset_names(), 90, 30, {128}, init);
  const FinetuneResult r = finetune_generator(g, data, FinetuneConfig{});
  const double ratio = r.final_loss / r.loss_curve.front();
  bool monotone = true;
  double prev = std::numeric_limits<double>::infinity();
  for (size_t w = 0; w + 500 <= r.loss_curve.size(); w += 500) {
    const double mean = std::accumulate(r.loss_curve.begin() + static_cast<long>(w),
                                        r.loss_curve.begin() + static_cast<long>(w + 500), 0.0) / 500.0;
    monotone = monotone && mean < prev;
    prev = mean;
  }
  return {ratio <= 0.1 && monotone && r.loss_curve.size() == 5000,
          fmt("%.0f clips, final/initial MSE %.4f, ", static_cast<double>(data.size()), ratio) +
              (monotone ? "window means decreasing" : "window means not decreasing")};
}

Verdict determinism() {
  const Skeleton& sk = default_humanoid();
  const PipelineConfig cfg =
      PipelineConfig::from_json(JsonFile::load(std::filesystem::path(MORPH_DATA_DIR).parent_path() / "configs" / "demo.json"));
  const std::string a = run_pipeline(sk, cfg, 11).summary.dump(2);
  const std::string b = run_pipeline(sk, cfg, 11).summary.dump(2);
  return {a == b, fmt("report %.0f bytes, ", static_cast<double>(a.size())) + (a == b ? "identical" : "different")};
}

Verdict preprocessing() {
  const Skeleton& sk = default_humanoid();
  auto leaning = [&](double deg, double lift) {
    Pose base = grounded_rest(sk);
    const WorldPose w = forward_kinematics(sk, base);
    Vec3 pivot = Vec3::Zero();
    for (int f : sk.feet()) pivot += w.positions[static_cast<size_t>(f)] / static_cast<double>(sk.feet().size());
    pivot.z() = 0.0;
    const Quat r(Eigen::AngleAxisd(-deg * M_PI / 180.0, Vec3::UnitY()));
    MotionSequence m = hold(sk, base, 20);
    for (Pose& p : m.frames) {
      p.joint_rot[0] = r * p.joint_rot[0];
      p.root_pos = pivot + r * (p.root_pos - pivot) + Vec3(0.0, 0.0, lift);
    }
    return m;
  };
  const MotionSequence fixed = preprocess(sk, leaning(15.0, 0.1));
  const double tilt = tilt_angle(sk, fixed.frames[0]);
  const double low = lowest_point(sk, forward_kinematics(sk, fixed.frames[0]));
  const MotionSequence mild = leaning(9.0, 0.0);
  const MotionSequence mild_out = preprocess(sk, mild);
  double rotated = 0.0;
  for (size_t l = 0; l < mild.frames.size(); ++l) {
    rotated = std::max(rotated, mild.frames[l].joint_rot[0].angularDistance(mild_out.frames[l].joint_rot[0]));
  }
  const MotionSequence again = preprocess(sk, fixed);
  const double idem = mpjpe(sk, fixed, again);
  const bool pass = tilt < 1e-6 && std::abs(low) < 1e-9 && rotated == 0.0 && idem < 1e-12;
  return {pass, fmt("tilt %.1e deg, lowest %.1e m, 9 deg rotation %.1e, reapply diff %.1e", tilt, low, rotated, idem)};
}

} // namespace

int main() {
  run(1, "metric oracle", metric_oracle);
  run(2, "gradient checks", gradients);
  run(3, "simulator sanity", simulator);
  run(4, "reward arithmetic", rewards);
  run(5, "ppo clipping", ppo_clip);

  TrainedTracker tracker;
  std::string train_error;
  try {
    tracker = train_tracker();
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  auto needs_tracker = [&](auto fn) {
    return [&, fn]() -> Verdict {
      if (!train_error.empty()) return {false, "training failed: " + train_error};
      return fn();
    };
  };
  run(6, "desk-scale training", needs_tracker([&] { return desk_training(tracker); }));
  SuiteRun suite;
  std::string suite_error;
  if (train_error.empty()) {
    try {
      suite = refine_suite(tracker);
    } catch (const std::exception& e) {
      suite_error = e.what();
    }
  }
  auto needs_suite = [&](auto fn) {
    return needs_tracker([&, fn]() -> Verdict {
      if (!suite_error.empty()) return {false, "refinement failed: " + suite_error};
      return fn();
    });
  };
  run(7, "plausibility trend", needs_suite([&] { return table_trend(suite); }));
  run(8, "selection monotonicity", needs_suite([&] { return tau_sweep(suite); }));
  run(9, "generator fine-tuning", finetuning);
  run(10, "pipeline determinism", determinism);
  run(11, "preprocessing", preprocessing);
  std::printf("%d of 11 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
