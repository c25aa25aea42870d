#include "morph/errors.hpp"
#include "morph/metrics.hpp"
#include "morph/synth.hpp"
#include "metric_oracle.hpp"

using namespace morph;
using namespace morph::test;

namespace {

void check_matches_oracle(const Skeleton& sk, const MotionSequence& m) {
  const OracleMetrics o = oracle_metrics(sk, m);
  const PlausibilityReport r = evaluate_plausibility(sk, m);
  CHECK(std::abs(r.penetrate_mm - o.penetrate_mm) < 1e-9);
  CHECK(std::abs(r.float_mm - o.float_mm) < 1e-9);
  CHECK(std::abs(r.skate_mm - o.skate_mm) < 1e-9);
  CHECK(std::abs(r.pfc - o.pfc) < 1e-9);
}

/// Grounded rest pose whose feet slide along +X by `step_m` per frame.
MotionSequence sliding_clip(const Skeleton& sk, double step_m, int frames = 20) {
  MotionSequence m = hold(sk, grounded_rest(sk), frames);
  for (size_t l = 0; l < m.frames.size(); ++l) m.frames[l].root_pos.x() += step_m * static_cast<double>(l);
  return m;
}

} // namespace

TEST_CASE("metrics match the brute-force oracle on random clips") {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(31);
  int contact_clips = 0;
  for (int i = 0; i < 100; ++i) {
    const MotionSequence m = near_ground_clip(sk, rng);
    if (oracle_metrics(sk, m).skate_mm > 0.0) ++contact_clips;
    check_matches_oracle(sk, m);
  }
  CHECK(contact_clips > 10);
}

TEST_CASE("metrics match the brute-force oracle on procedural clips") {
  const Skeleton& sk = default_humanoid();
  ArtifactSpec spec;
  spec.skate_drift_mps = 0.2;
  spec.jitter_rad = 0.03;
  spec.seed = 4;
  std::mt19937_64 rng(32);
  for (const std::string& preset : preset_names()) {
    const SynthBatch b = synth_generate(sk, preset, 3, spec, rng);
    for (const MotionSequence& m : b.noisy) check_matches_oracle(sk, m);
    for (const MotionSequence& m : b.clean) check_matches_oracle(sk, m);
  }
}

TEST_CASE("penetrate by construction") {
  const Skeleton& sk = default_humanoid();
  Pose above = grounded_rest(sk);
  above.root_pos.z() += 1e-9;
  CHECK(penetrate(sk, hold(sk, above)) == 0.0);
  Pose sunk = grounded_rest(sk);
  sunk.root_pos.z() -= 0.05;
  CHECK(penetrate(sk, hold(sk, sunk)) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("float by construction") {
  const Skeleton& sk = default_humanoid();
  const ContactParams cp;
  CHECK(float_metric(sk, hold(sk, grounded_rest(sk)), cp) == 0.0);
  Pose lifted = grounded_rest(sk);
  lifted.root_pos.z() += 0.10;
  CHECK(float_metric(sk, hold(sk, lifted), cp) == doctest::Approx(95.0).epsilon(1e-12));
}

TEST_CASE("a vertical offset raises float by the offset minus the tolerance") {
  const Skeleton& sk = default_humanoid();
  const ContactParams cp;
  MotionSequence m = hold(sk, grounded_rest(sk), 20);
  for (size_t l = 0; l < m.frames.size(); ++l) {
    m.frames[l].joint_rot[10] = quat_exp(Vec3(0.05 * static_cast<double>(l), 0.0, 0.0));
  }
  const double skate_before = skate(sk, m, cp);
  for (double d : {0.002, 0.03, 0.25}) {
    MotionSequence up = m;
    for (Pose& p : up.frames) p.root_pos.z() += d;
    CHECK(float_metric(sk, up, cp) ==
          doctest::Approx(std::max(0.0, d * 1000.0 - cp.contact_height_mm)).epsilon(1e-9));
    CHECK(skate(sk, up, cp) == skate_before);
  }
}

TEST_CASE("skate by construction") {
  const Skeleton& sk = default_humanoid();
  const ContactParams cp;
  CHECK(skate(sk, sliding_clip(sk, 0.0), cp) == 0.0);
  CHECK(skate(sk, sliding_clip(sk, 0.02), cp) == doctest::Approx(20.0).epsilon(1e-9));
  MotionSequence airborne = sliding_clip(sk, 0.02);
  for (Pose& p : airborne.frames) p.root_pos.z() += 0.2;
  CHECK(skate(sk, airborne, cp) == 0.0);
}

TEST_CASE("pfc by construction") {
  const Skeleton& sk = default_humanoid();
  CHECK(pfc(sk, hold(sk, grounded_rest(sk))) == 0.0);
  MotionSequence m = hold(sk, grounded_rest(sk), 12);
  const double dt = 1.0 / m.fps;
  for (size_t l = 0; l < m.frames.size(); ++l) {
    const double t = dt * static_cast<double>(l);
    m.frames[l].root_pos.x() += 1.0 * t;
    m.frames[l].root_pos.z() += 0.5 * t * t;
  }
  const double v = pfc(sk, m);
  CHECK(v > 0.0);
  CHECK(v == doctest::Approx(oracle_metrics(sk, m).pfc).epsilon(1e-12));
  CHECK_THROWS_AS(pfc(sk, hold(sk, grounded_rest(sk), 2)), InputError);
}

TEST_CASE("metrics are invariant under horizontal translation") {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(33);
  for (int i = 0; i < 20; ++i) {
    const MotionSequence m = near_ground_clip(sk, rng);
    MotionSequence moved = m;
    for (Pose& p : moved.frames) p.root_pos += Vec3(3.5, -2.25, 0.0);
    const PlausibilityReport a = evaluate_plausibility(sk, m);
    const PlausibilityReport b = evaluate_plausibility(sk, moved);
    CHECK(a.penetrate_mm == doctest::Approx(b.penetrate_mm).epsilon(1e-9));
    CHECK(a.float_mm == doctest::Approx(b.float_mm).epsilon(1e-9));
    CHECK(std::abs(a.skate_mm - b.skate_mm) < 1e-6);
    CHECK(std::abs(a.pfc - b.pfc) < 1e-9);
    for (double x : {a.penetrate_mm, a.float_mm, a.skate_mm, a.pfc}) {
      CHECK(x >= 0.0);
      CHECK(std::isfinite(x));
    }
  }
}

TEST_CASE("penetrate is zero exactly when nothing is below ground") {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(34);
  for (int i = 0; i < 50; ++i) {
    const MotionSequence m = near_ground_clip(sk, rng, 15);
    bool below = false;
    for (const Pose& p : m.frames) below = below || lowest_point(sk, forward_kinematics(sk, p)) < 0.0;
    CHECK((penetrate(sk, m) == 0.0) == !below);
  }
}

TEST_CASE("per-frame breakdown") {
  const Skeleton& sk = default_humanoid();
  std::mt19937_64 rng(35);
  const MotionSequence m = near_ground_clip(sk, rng, 25);
  const PlausibilityReport r = evaluate_plausibility(sk, m, {}, true);
  REQUIRE(r.per_frame.size() == 25);
  double pen = 0.0;
  for (const PlausibilityFrame& f : r.per_frame) {
    CHECK((f.penetrate_mm == 0.0 || f.float_mm == 0.0));
    pen += f.penetrate_mm;
  }
  CHECK(pen / 25.0 == doctest::Approx(r.penetrate_mm).epsilon(1e-12));
  CHECK(evaluate_plausibility(sk, m).per_frame.empty());
}

TEST_CASE("imitation failure rate") {
  CHECK(aggregate_ifr(std::vector<bool>(20, true)) == 0.0);
  std::vector<bool> d(20, true);
  d[1] = d[7] = d[19] = false;
  CHECK(aggregate_ifr(d) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK_THROWS_AS(aggregate_ifr({}), InputError);
}

TEST_CASE("contact parameters must be positive") {
  const Skeleton& sk = default_humanoid();
  ContactParams cp;
  cp.contact_height_mm = 0.0;
  CHECK_THROWS_AS(float_metric(sk, hold(sk, grounded_rest(sk)), cp), InputError);
  cp = {};
  cp.contact_vel_mps = -1.0;
  CHECK_THROWS_AS(evaluate_plausibility(sk, hold(sk, grounded_rest(sk)), cp), InputError);
}

TEST_CASE("mean report averages each field") {
  PlausibilityReport a, b;
  a.penetrate_mm = 2.0;
  b.penetrate_mm = 4.0;
  a.pfc = 1.0;
  const std::vector<PlausibilityReport> all{a, b};
  const PlausibilityReport m = mean_report(all);
  CHECK(m.penetrate_mm == 3.0);
  CHECK(m.pfc == 0.5);
}
