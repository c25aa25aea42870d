#include "morph/pipeline.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace morph {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kDataStream = 1;
constexpr std::uint64_t kGeneratorStream = 2;
std::uint64_t train_stream(int round) { return 100 + static_cast<std::uint64_t>(round); }

std::vector<MotionSequence> motions_of(std::span<const NamedMotion> items) {
  std::vector<MotionSequence> out;
  out.reserve(items.size());
  for (const NamedMotion& m : items) out.push_back(m.motion);
  return out;
}

std::vector<NamedMotion> preprocess_all(const Skeleton& skeleton,
                                        std::span<const NamedMotion> inputs,
                                        const PreprocessParams& params) {
  std::vector<NamedMotion> out;
  out.reserve(inputs.size());
  for (const NamedMotion& m : inputs) out.push_back({m.id, preprocess(skeleton, m.motion, params)});
  return out;
}

std::vector<ReferenceClip> reference_clips(const Skeleton& skeleton,
                                           std::span<const NamedMotion> motions) {
  std::vector<ReferenceClip> clips;
  clips.reserve(motions.size());
  for (const NamedMotion& m : motions) clips.push_back(ReferenceClip::build(skeleton, m.id, m.motion));
  return clips;
}

} // namespace

// ---------------------------------------------------------------------------
// Refinement and selection

RefineResult refine_motion(const Skeleton& skeleton, const GaussianPolicy& policy,
                           const MotionSequence& seq, const SimConfig& sim_config,
                           double termination_m) {
  sim_config.validate();
  policy.validate();
  check_sequence(skeleton, seq);
  if (std::abs(sim_config.dt * seq.fps - 1.0) > 1e-9) {
    throw InputError("refine: motion at " + std::to_string(seq.fps) +
                     " fps does not match the control step");
  }
  const ReferenceClip clip = ReferenceClip::build(skeleton, "refine", seq);
  Simulator sim(skeleton, sim_config);
  SimCharacterState state = reset_to_pose(skeleton, seq, clip.derivs, 0);

  RefineResult res;
  res.motion.fps = seq.fps;
  res.motion.skeleton = seq.skeleton;
  res.motion.condition = seq.condition;
  res.motion.frames.reserve(seq.frames.size());
  res.motion.frames.push_back(canonicalize(state.pose()));
  FrameQuantities simq = state_quantities(sim, state);
  const int L = seq.length();
  for (int l = 0; l + 1 < L; ++l) {
    const auto next = static_cast<size_t>(l + 1);
    if (!res.diverged) {
      const Vector obs = build_observation(skeleton, clip.frames[next],
                                           clip.frames[static_cast<size_t>(l)], simq);
      const Vector mean = mlp_forward(policy.mean_net, obs);
      try {
        state = sim.step(state, pd_targets(seq.frames[next], to_action(mean)));
        simq = state_quantities(sim, state);
      } catch (const SimulationDiverged&) {
        res.diverged = true;
        res.success = false;
        if (res.terminated_at < 0) res.terminated_at = l + 1;
      }
    }
    res.motion.frames.push_back(canonicalize(state.pose()));
    if (!res.diverged && res.terminated_at < 0 &&
        check_termination(skeleton, seq.frames[next], state, termination_m)) {
      res.terminated_at = l + 1;
      res.success = false;
    }
  }
  return res;
}

const char* to_string(SelectedSource source) {
  return source == SelectedSource::Refined ? "refined" : "original";
}

Json SelectionDecision::to_json() const {
  return {{"id", id}, {"mpjpe_m", mpjpe_m}, {"accepted_source", to_string(accepted_source)},
          {"tau", tau}};
}

SelectionDecision imitation_select(const Skeleton& skeleton, const std::string& id,
                                   const MotionSequence& original, const MotionSequence& refined,
                                   double tau) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InputError("selection: tau must be >= 0");
  if (original.length() != refined.length()) {
    throw InputError("selection: '" + id + "' has " + std::to_string(original.length()) +
                     " original frames but " + std::to_string(refined.length()) + " refined");
  }
  SelectionDecision d;
  d.id = id;
  d.tau = tau;
  d.mpjpe_m = mpjpe(skeleton, original, refined);
  d.accepted_source = d.mpjpe_m <= tau ? SelectedSource::Refined : SelectedSource::Original;
  return d;
}

std::vector<RefinedItem> refine_batch(const Skeleton& skeleton, const GaussianPolicy& policy,
                                      std::span<const NamedMotion> inputs,
                                      const SimConfig& sim_config, double termination_m,
                                      int threads) {
  std::vector<RefinedItem> items(inputs.size());
  std::vector<std::string> errors(inputs.size());
  parallel_for(static_cast<int>(inputs.size()), worker_count(threads), [&](int i) {
    const auto ui = static_cast<size_t>(i);
    try {
      items[ui] = {inputs[ui].id, inputs[ui].motion,
                   refine_motion(skeleton, policy, inputs[ui].motion, sim_config, termination_m)};
    } catch (const std::exception& e) {
      errors[ui] = e.what();
    }
  });
  for (size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw InputError("refine '" + inputs[i].id + "': " + errors[i]);
  }
  return items;
}

SelectionOutcome select_batch(const Skeleton& skeleton, std::span<const RefinedItem> items,
                              double tau) {
  if (items.empty()) throw InputError("selection: empty batch");
  SelectionOutcome out;
  std::vector<bool> accepted;
  for (const RefinedItem& it : items) {
    SelectionDecision d = imitation_select(skeleton, it.id, it.original, it.refined.motion, tau);
    const bool ok = d.accepted_source == SelectedSource::Refined;
    accepted.push_back(ok);
    out.outputs.push_back(ok ? it.refined.motion : it.original);
    out.decisions.push_back(std::move(d));
  }
  out.ifr = aggregate_ifr(accepted);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

Json metrics_json(const PlausibilityReport& r) {
  return {{"penetrate_mm", r.penetrate_mm},
          {"float_mm", r.float_mm},
          {"skate_mm", r.skate_mm},
          {"pfc", r.pfc}};
}

PlausibilityReport batch_metrics(const Skeleton& skeleton, std::span<const MotionSequence> seqs,
                                 const ContactParams& params) {
  if (seqs.empty()) throw InputError("metrics: empty batch");
  std::vector<PlausibilityReport> reports;
  reports.reserve(seqs.size());
  for (const MotionSequence& s : seqs) reports.push_back(evaluate_plausibility(skeleton, s, params));
  return mean_report(reports);
}

// ---------------------------------------------------------------------------
// Configuration

PipelineConfig PipelineConfig::defaults() {
  PipelineConfig c;
  ArtifactSpec a;
  a.float_m = 0.08;
  a.skate_drift_mps = 0.1;
  a.lean_deg = 12.0;
  a.jitter_rad = 0.02;
  a.seed = 11;
  ArtifactSpec b;
  b.penetrate_m = 0.05;
  b.skate_drift_mps = 0.1;
  b.jitter_rad = 0.02;
  b.seed = 12;
  c.artifacts = {a, b};
  return c;
}

void PipelineConfig::validate() const {
  if (presets.empty()) throw InputError("pipeline: no presets");
  for (const std::string& p : presets) {
    if (!is_preset(p)) throw InputError("pipeline: unknown preset '" + p + "'");
  }
  if (clips_per_preset < 1) throw InputError("pipeline: clips_per_preset must be >= 1");
  for (const ArtifactSpec& a : artifacts) a.validate();
  if (synth.frames < 2) throw InputError("pipeline: frames must be >= 2");
  if (synth.fps <= 0) throw InputError("pipeline: fps must be positive");
  contact.validate();
  imitator.validate();
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InputError("pipeline: tau must be >= 0");
  if (rounds < 1) throw InputError("pipeline: rounds must be >= 1");
  finetune_config.validate();
  for (int h : generator_hidden) {
    if (h < 1) throw InputError("pipeline: generator hidden sizes must be positive");
  }
}

Json PipelineConfig::to_json() const {
  Json arts = Json::array();
  for (const ArtifactSpec& a : artifacts) arts.push_back(a.to_json());
  return {{"presets", presets},
          {"clips_per_preset", clips_per_preset},
          {"artifacts", arts},
          {"frames", synth.frames},
          {"fps", synth.fps},
          {"tilt_threshold_deg", preprocess.tilt_threshold_deg},
          {"contact_height_mm", contact.contact_height_mm},
          {"contact_vel_mps", contact.contact_vel_mps},
          {"imitator", imitator.to_json()},
          {"tau", tau},
          {"rounds", rounds},
          {"finetune", finetune},
          {"finetune_steps", finetune_config.steps},
          {"finetune_learning_rate", finetune_config.learning_rate},
          {"generator_hidden", generator_hidden}};
}

PipelineConfig PipelineConfig::from_json(const JsonFile& f) {
  PipelineConfig c = defaults();
  if (!f.root().is_object()) f.fail("", "expected an object");
  if (f.has("/presets")) {
    const Json& a = f.at("/presets");
    if (!a.is_array()) f.fail("/presets", "expected an array of preset names");
    c.presets.clear();
    for (size_t i = 0; i < a.size(); ++i) {
      const std::string ptr = "/presets/" + std::to_string(i);
      c.presets.push_back(f.string(ptr));
      if (!is_preset(c.presets.back())) f.fail(ptr, "unknown preset '" + c.presets.back() + "'");
    }
  }
  auto integer = [&](const char* key, int& field) {
    if (f.has(std::string("/") + key)) field = static_cast<int>(f.integer(std::string("/") + key));
  };
  auto num = [&](const char* key, double& field) {
    if (f.has(std::string("/") + key)) field = f.number(std::string("/") + key);
  };
  integer("clips_per_preset", c.clips_per_preset);
  if (f.has("/artifacts")) {
    const Json& a = f.at("/artifacts");
    if (!a.is_array()) f.fail("/artifacts", "expected an array of artifact specs");
    c.artifacts.clear();
    for (size_t i = 0; i < a.size(); ++i) {
      c.artifacts.push_back(ArtifactSpec::from_json(f, "/artifacts/" + std::to_string(i)));
    }
  }
  integer("frames", c.synth.frames);
  integer("fps", c.synth.fps);
  num("tilt_threshold_deg", c.preprocess.tilt_threshold_deg);
  num("contact_height_mm", c.contact.contact_height_mm);
  num("contact_vel_mps", c.contact.contact_vel_mps);
  if (f.has("/imitator")) c.imitator = ImitatorConfig::from_json(f, "/imitator");
  num("tau", c.tau);
  integer("rounds", c.rounds);
  if (f.has("/finetune")) {
    if (!f.at("/finetune").is_boolean()) f.fail("/finetune", "expected true or false");
    c.finetune = f.at("/finetune").get<bool>();
  }
  integer("finetune_steps", c.finetune_config.steps);
  num("finetune_learning_rate", c.finetune_config.learning_rate);
  if (f.has("/generator_hidden")) {
    const Json& a = f.at("/generator_hidden");
    if (!a.is_array()) f.fail("/generator_hidden", "expected an array of sizes");
    c.generator_hidden.clear();
    for (size_t i = 0; i < a.size(); ++i) {
      c.generator_hidden.push_back(static_cast<int>(f.integer("/generator_hidden/" + std::to_string(i))));
    }
  }
  try {
    c.validate();
  } catch (const InputError& e) {
    f.fail("", e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline

std::vector<NamedMotion> generate_suite(const Skeleton& skeleton, const PipelineConfig& config,
                                        std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(mix_seed(seed, kDataStream));
  std::vector<NamedMotion> out;
  std::uint64_t index = 0;
  for (const std::string& preset : config.presets) {
    const SynthBatch b =
        synth_generate(skeleton, preset, config.clips_per_preset, ArtifactSpec{}, rng, config.synth);
    for (size_t i = 0; i < b.clean.size(); ++i, ++index) {
      MotionSequence noisy =
          config.artifacts.empty()
              ? b.clean[i]
              : inject_artifacts(skeleton, b.clean[i],
                                 config.artifacts[index % config.artifacts.size()], index);
      char id[64];
      std::snprintf(id, sizeof id, "%s_%03zu", preset.c_str(), i);
      out.push_back({id, std::move(noisy)});
    }
  }
  return out;
}

PipelineResult run_pipeline(const Skeleton& skeleton, const PipelineConfig& config,
                            std::uint64_t seed) {
  config.validate();
  const std::string hash = json_digest(config.to_json());
  PipelineResult result;
  std::mt19937_64 gen_rng(mix_seed(seed, kGeneratorStream));
  result.generator = ToyGenerator::init(skeleton, config.presets, config.synth.frames,
                                        config.synth.fps, config.generator_hidden, gen_rng);
  std::vector<NamedMotion> inputs = generate_suite(skeleton, config, seed);
  bool have_model = false;
  std::vector<double> ifrs;

  for (int round = 1; round <= config.rounds; ++round) {
    Json rep = {{"round", round}, {"seed", seed}, {"config_hash", hash}, {"tau", config.tau}};
    std::string stage = "generate";
    try {
      if (round > 1) {
        for (NamedMotion& m : inputs) m.motion = result.generator.generate(m.motion.condition);
      }
      stage = "preprocess";
      const std::vector<NamedMotion> pre = preprocess_all(skeleton, inputs, config.preprocess);

      stage = "train";
      const std::vector<ReferenceClip> clips = reference_clips(skeleton, pre);
      TrainResult tr = train_imitator(skeleton, clips, config.imitator,
                                      mix_seed(seed, train_stream(round)),
                                      have_model ? &result.model : nullptr);
      result.model = std::move(tr.model);
      have_model = true;
      Json train = {{"iterations", config.imitator.iterations}};
      if (!tr.log.empty()) {
        train["final_mean_reward"] = tr.log.back().mean_reward;
        train["final_train_ifr"] = tr.log.back().train_ifr;
      }
      rep["train"] = train;

      stage = "refine";
      const std::vector<RefinedItem> items =
          refine_batch(skeleton, result.model.policy, pre, config.imitator.sim,
                       config.imitator.termination_m, config.imitator.threads);

      stage = "select";
      const SelectionOutcome sel = select_batch(skeleton, items, config.tau);
      std::vector<MotionSequence> refined;
      for (const RefinedItem& it : items) refined.push_back(it.refined.motion);
      rep["metrics"] = {
          {"input", metrics_json(batch_metrics(skeleton, motions_of(inputs), config.contact))},
          {"preprocessed", metrics_json(batch_metrics(skeleton, motions_of(pre), config.contact))},
          {"refined", metrics_json(batch_metrics(skeleton, refined, config.contact))},
          {"output", metrics_json(batch_metrics(skeleton, sel.outputs, config.contact))}};
      Json decisions = Json::array();
      int accepted = 0;
      for (size_t i = 0; i < sel.decisions.size(); ++i) {
        Json d = sel.decisions[i].to_json();
        d["refine_success"] = items[i].refined.success;
        decisions.push_back(d);
        accepted += sel.decisions[i].accepted_source == SelectedSource::Refined;
      }
      rep["decisions"] = decisions;
      rep["accepted"] = accepted;
      rep["total"] = static_cast<int>(sel.decisions.size());
      rep["ifr"] = sel.ifr;
      ifrs.push_back(sel.ifr);

      stage = "finetune";
      Json ft = {{"enabled", config.finetune}};
      if (config.finetune) {
        const FinetuneResult fr =
            finetune_generator(result.generator, sel.outputs, config.finetune_config);
        ft["steps"] = config.finetune_config.steps;
        ft["initial_loss"] = fr.loss_curve.empty() ? fr.final_loss : fr.loss_curve.front();
        ft["final_loss"] = fr.final_loss;
        ft["skipped"] = fr.skipped;
      }
      rep["finetune"] = ft;
      rep["status"] = "ok";
      result.rounds.push_back({rep, false});
    } catch (const Error& e) {
      rep["status"] = "failed";
      rep["stage"] = stage;
      rep["error"] = e.what();
      result.rounds.push_back({rep, true});
      result.failed = true;
      break;
    }
  }

  bool non_increasing = true;
  for (size_t i = 1; i < ifrs.size(); ++i) non_increasing &= ifrs[i] <= ifrs[i - 1];
  Json rounds = Json::array();
  for (const RoundReport& r : result.rounds) rounds.push_back(r.json);
  result.summary = {{"schema_version", 1},
                    {"seed", seed},
                    {"config_hash", hash},
                    {"config", config.to_json()},
                    {"rounds", rounds},
                    {"ifr_by_round", ifrs},
                    {"ifr_non_increasing", non_increasing},
                    {"status", result.failed ? "failed" : "ok"}};
  return result;
}

// ---------------------------------------------------------------------------
// Harnesses

Json TauRow::to_json() const {
  return {{"tau", tau},
          {"ifr", ifr},
          {"accepted", accepted},
          {"mean_mpjpe_m", mean_mpjpe_m},
          {"max_mpjpe_m", max_mpjpe_m},
          {"metrics", metrics_json(metrics)}};
}

std::vector<TauRow> sweep_tau(const Skeleton& skeleton, std::span<const RefinedItem> items,
                              std::span<const double> taus, const ContactParams& params) {
  if (taus.empty()) throw InputError("sweep-tau: empty tau list");
  if (items.empty()) throw InputError("sweep-tau: no refinements");
  std::vector<double> dist;
  for (const RefinedItem& it : items) {
    dist.push_back(imitation_select(skeleton, it.id, it.original, it.refined.motion, 0.0).mpjpe_m);
  }
  std::vector<TauRow> rows;
  for (double tau : taus) {
    const SelectionOutcome sel = select_batch(skeleton, items, tau);
    TauRow row;
    row.tau = tau;
    row.ifr = sel.ifr;
    for (size_t i = 0; i < sel.decisions.size(); ++i) {
      if (sel.decisions[i].accepted_source != SelectedSource::Refined) continue;
      ++row.accepted;
      row.mean_mpjpe_m += dist[i];
      row.max_mpjpe_m = std::max(row.max_mpjpe_m, dist[i]);
    }
    row.mean_mpjpe_m /= static_cast<double>(items.size());
    row.metrics = batch_metrics(skeleton, sel.outputs, params);
    rows.push_back(std::move(row));
  }
  return rows;
}

Json DataVolumeRow::to_json() const {
  Json log_json = Json::array();
  for (const TrainLogRecord& r : log) log_json.push_back(r.to_json());
  return {{"fraction", fraction},
          {"train_clips", train_clips},
          {"final_mean_reward", final_mean_reward},
          {"ifr", ifr},
          {"metrics", metrics_json(metrics)},
          {"log", log_json}};
}

std::vector<size_t> subsample_indices(size_t total, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InputError("data fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const auto k = static_cast<size_t>(std::floor(fraction * static_cast<double>(total) + 1e-9));
  if (k == 0) {
    throw InputError("data fraction " + std::to_string(fraction) + " of " +
                     std::to_string(total) + " clips selects nothing");
  }
  std::vector<size_t> idx(total);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<DataVolumeRow> sweep_data_volume(const Skeleton& skeleton,
                                             std::span<const double> fractions,
                                             const PipelineConfig& config, std::uint64_t seed) {
  if (fractions.empty()) throw InputError("sweep-data: empty fraction list");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) {
      throw InputError("data fraction must be in (0, 1], got " + std::to_string(f));
    }
  }
  const std::vector<NamedMotion> inputs = generate_suite(skeleton, config, seed);
  const std::vector<NamedMotion> pre = preprocess_all(skeleton, inputs, config.preprocess);
  const std::vector<ReferenceClip> all = reference_clips(skeleton, pre);
  std::vector<DataVolumeRow> rows;
  for (double f : fractions) {
    const std::vector<size_t> idx = subsample_indices(all.size(), f, mix_seed(seed, kDataStream));
    std::vector<ReferenceClip> clips;
    for (size_t i : idx) clips.push_back(all[i]);
    TrainResult tr = train_imitator(skeleton, clips, config.imitator, mix_seed(seed, train_stream(1)));
    const std::vector<RefinedItem> items =
        refine_batch(skeleton, tr.model.policy, pre, config.imitator.sim,
                     config.imitator.termination_m, config.imitator.threads);
    const SelectionOutcome sel = select_batch(skeleton, items, config.tau);
    DataVolumeRow row;
    row.fraction = f;
    row.train_clips = static_cast<int>(clips.size());
    row.final_mean_reward = tr.log.empty() ? 0.0 : tr.log.back().mean_reward;
    row.ifr = sel.ifr;
    row.metrics = batch_metrics(skeleton, sel.outputs, config.contact);
    row.log = std::move(tr.log);
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace morph
