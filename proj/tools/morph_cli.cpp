#include "morph/errors.hpp"
#include "morph/generator.hpp"
#include "morph/imitator.hpp"
#include "morph/metrics.hpp"
#include "morph/motion_io.hpp"
#include "morph/pipeline.hpp"
#include "morph/preprocess.hpp"
#include "morph/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace morph;

namespace {

bool g_quiet = false;

void log_line(const std::string& msg) {
  if (!g_quiet) std::cerr << msg << '\n';
}

Skeleton skeleton_for(const std::string& path) {
  return path.empty() ? default_humanoid() : load_skeleton(path);
}

void check_skeleton(const Skeleton& sk, const NamedMotion& m) {
  if (m.motion.skeleton != sk.name()) {
    throw InputError(m.id + ": motion uses skeleton '" + m.motion.skeleton + "', loaded '" +
                     sk.name() + "'");
  }
}

std::vector<NamedMotion> load_inputs(const Skeleton& sk, const fs::path& path) {
  std::vector<NamedMotion> in = load_motions(path);
  if (in.empty()) throw InputError(path.string() + ": no motion files");
  for (const NamedMotion& m : in) check_skeleton(sk, m);
  return in;
}

void write_motions(const fs::path& dir, const std::vector<NamedMotion>& motions) {
  fs::create_directories(dir);
  for (const NamedMotion& m : motions) save_motion(dir / (m.id + ".json"), m.motion);
}

void write_report(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_json(path, j);
}

void stamp(Json& report, const Json& options, std::uint64_t seed) {
  report["config_hash"] = json_digest(options);
  report["seed"] = seed;
}

ImitatorConfig imitator_config(const std::string& path) {
  if (path.empty()) return {};
  const JsonFile f = JsonFile::load(path);
  return ImitatorConfig::from_json(f, f.has("/imitator") ? "/imitator" : "");
}

PipelineConfig pipeline_config(const std::string& path) {
  return path.empty() ? PipelineConfig::defaults() : PipelineConfig::from_json(JsonFile::load(path));
}

std::vector<double> default_taus() {
  std::vector<double> t;
  for (int i = 1; i <= 10; ++i) t.push_back(0.1 * i);
  return t;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-based refinement of generated motion"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_flag("-q,--quiet", g_quiet, "Suppress progress output");
  std::uint64_t seed = 0;
  std::string skeleton_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Seed for every random choice")->capture_default_str();
    sub->add_option("--skeleton", skeleton_path, "Skeleton file (default: built-in humanoid13)");
  };

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Tilt-correct and ground-align motions");
  std::string pre_in, pre_out;
  PreprocessParams pre_params;
  pre->add_option("--in", pre_in, "Motion file or directory")->required();
  pre->add_option("--out", pre_out, "Output file or directory")->required();
  pre->add_option("--tilt-threshold", pre_params.tilt_threshold_deg, "Degrees")->capture_default_str();
  add_common(pre);

  // metrics
  auto* met = app.add_subcommand("metrics", "Physical plausibility metrics");
  std::string met_in, met_out;
  ContactParams contact;
  bool per_frame = false;
  met->add_option("--in", met_in, "Motion file or directory")->required();
  met->add_option("--out", met_out, "Report file (default: stdout)");
  met->add_option("--contact-height-mm,--contact-height", contact.contact_height_mm, "Contact tolerance, mm")->capture_default_str();
  met->add_option("--contact-vel", contact.contact_vel_mps, "Contact speed threshold, m/s")->capture_default_str();
  met->add_flag("--per-frame", per_frame, "Include per-frame breakdown");
  add_common(met);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate clean and noisy procedural clips");
  std::vector<std::string> gen_presets;
  int gen_count = 1;
  std::string gen_out;
  ArtifactSpec art;
  SynthOptions synth;
  gen->add_option("--preset", gen_presets, "Preset name(s)")->required();
  gen->add_option("--count", gen_count, "Clips per preset")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory (noisy/ and clean/)")->required();
  gen->add_option("--float", art.float_m, "Vertical lift, m");
  gen->add_option("--penetrate", art.penetrate_m, "Vertical sink, m");
  gen->add_option("--skate", art.skate_drift_mps, "Root drift during contact, m/s");
  gen->add_option("--lean", art.lean_deg, "Backward tilt, degrees");
  gen->add_option("--jitter", art.jitter_rad, "Rotation noise std, rad");
  gen->add_option("--frames", synth.frames, "Frames per clip")->capture_default_str();
  gen->add_option("--fps", synth.fps, "Frame rate")->capture_default_str();
  add_common(gen);

  // train
  auto* train = app.add_subcommand("train", "Train the imitation policy");
  std::string train_data, train_config, train_out;
  int train_iters = -1;
  train->add_option("--data", train_data, "Preprocessed motion file or directory")->required();
  train->add_option("--config", train_config, "Imitator or pipeline config");
  train->add_option("--out", train_out, "Checkpoint directory")->required();
  train->add_option("--iters", train_iters, "Iterations (overrides the config)");
  std::string train_init;
  train->add_option("--resume", train_init, "Continue from a checkpoint directory");
  add_common(train);

  // refine
  auto* ref = app.add_subcommand("refine", "Simulate motions with a trained policy");
  std::string ref_model, ref_in, ref_out, ref_config;
  ref->add_option("--model", ref_model, "Checkpoint directory")->required();
  ref->add_option("--in", ref_in, "Preprocessed motion file or directory")->required();
  ref->add_option("--out", ref_out, "Output directory")->required();
  ref->add_option("--config", ref_config, "Imitator or pipeline config (simulator settings)");
  add_common(ref);

  // select
  auto* sel = app.add_subcommand("select", "Keep refined motions within tau of their inputs");
  std::string sel_orig, sel_ref, sel_out;
  double sel_tau = 0.5;
  sel->add_option("--original", sel_orig, "Refinement inputs")->required();
  sel->add_option("--refined", sel_ref, "Refined motions")->required();
  sel->add_option("--tau", sel_tau, "MPJPE threshold, m")->capture_default_str();
  sel->add_option("--out", sel_out, "Output directory")->required();
  add_common(sel);

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fit the toy generator to selected motions");
  std::string ft_gen, ft_data, ft_out;
  FinetuneConfig ft_config;
  std::vector<int> ft_hidden{128};
  ft->add_option("--generator", ft_gen, "Generator file (default: new generator)");
  ft->add_option("--data", ft_data, "Motion file or directory")->required();
  ft->add_option("--steps", ft_config.steps, "Adam steps")->capture_default_str();
  ft->add_option("--lr", ft_config.learning_rate, "Learning rate")->capture_default_str();
  ft->add_option("--hidden", ft_hidden, "Hidden sizes of a new generator")->capture_default_str();
  ft->add_option("--out", ft_out, "Output directory")->required();
  add_common(ft);

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "Run the full multi-round loop");
  std::string pipe_config, pipe_out;
  pipe->add_option("--config", pipe_config, "Pipeline config");
  pipe->add_option("--out", pipe_out, "Output directory")->required();
  add_common(pipe);

  // sweep-tau
  auto* st = app.add_subcommand("sweep-tau", "Selection sweep over thresholds");
  std::string st_model, st_in, st_out, st_config;
  std::vector<double> st_taus = default_taus();
  st->add_option("--model", st_model, "Checkpoint directory")->required();
  st->add_option("--in", st_in, "Preprocessed motion file or directory")->required();
  st->add_option("--taus", st_taus, "Thresholds, m")->delimiter(',');
  st->add_option("--config", st_config, "Imitator or pipeline config (simulator settings)");
  st->add_option("--out", st_out, "Report file")->required();
  add_common(st);

  // sweep-data
  auto* sd = app.add_subcommand("sweep-data", "Train on growing fractions of the suite");
  std::string sd_config, sd_out;
  std::vector<double> sd_fractions{0.25, 0.5, 1.0};
  sd->add_option("--config", sd_config, "Pipeline config");
  sd->add_option("--fractions", sd_fractions, "Data fractions in (0, 1]")->delimiter(',');
  sd->add_option("--out", sd_out, "Report file")->required();
  add_common(sd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    const Skeleton sk = skeleton_for(skeleton_path);

    if (*pre) {
      const bool dir = fs::is_directory(pre_in);
      std::vector<NamedMotion> out;
      for (const NamedMotion& m : load_inputs(sk, pre_in)) {
        out.push_back({m.id, preprocess(sk, m.motion, pre_params)});
      }
      if (dir) {
        write_motions(pre_out, out);
      } else {
        save_motion(pre_out, out.front().motion);
      }
      log_line("preprocessed " + std::to_string(out.size()) + " motion(s)");

    } else if (*met) {
      contact.validate();
      Json report = {{"schema_version", 1}, {"sequences", Json::array()}};
      std::vector<PlausibilityReport> all;
      for (const NamedMotion& m : load_inputs(sk, met_in)) {
        const PlausibilityReport r = evaluate_plausibility(sk, m.motion, contact, per_frame);
        Json j = {{"id", m.id}};
        j.update(metrics_json(r));
        if (per_frame) {
          Json frames = Json::array();
          for (const PlausibilityFrame& f : r.per_frame) {
            frames.push_back({{"penetrate_mm", f.penetrate_mm}, {"float_mm", f.float_mm}});
          }
          j["per_frame"] = frames;
        }
        report["sequences"].push_back(j);
        all.push_back(r);
      }
      report["aggregate"] = metrics_json(mean_report(all));
      report["aggregate"]["ifr"] = nullptr;
      stamp(report,
            {{"contact_height_mm", contact.contact_height_mm},
             {"contact_vel_mps", contact.contact_vel_mps}},
            seed);
      if (met_out.empty()) {
        std::cout << report.dump(2) << '\n';
      } else {
        write_report(met_out, report);
      }

    } else if (*gen) {
      art.seed = seed;
      art.validate();
      std::mt19937_64 rng(seed);
      std::vector<NamedMotion> noisy, clean;
      for (const std::string& p : gen_presets) {
        const SynthBatch b = synth_generate(sk, p, gen_count, art, rng, synth);
        for (size_t i = 0; i < b.clean.size(); ++i) {
          char id[64];
          std::snprintf(id, sizeof id, "%s_%03zu", p.c_str(), i);
          noisy.push_back({id, b.noisy[i]});
          clean.push_back({id, b.clean[i]});
        }
      }
      write_motions(fs::path(gen_out) / "noisy", noisy);
      write_motions(fs::path(gen_out) / "clean", clean);
      Json report = {{"schema_version", 1}, {"clips", static_cast<int>(noisy.size())}};
      stamp(report,
            {{"presets", gen_presets}, {"count", gen_count}, {"artifacts", art.to_json()},
             {"frames", synth.frames}, {"fps", synth.fps}},
            seed);
      write_report(fs::path(gen_out) / "gen_report.json", report);
      log_line("generated " + std::to_string(noisy.size()) + " clip pair(s)");

    } else if (*train) {
      ImitatorConfig cfg = imitator_config(train_config);
      if (train_iters >= 0) cfg.iterations = train_iters;
      cfg.validate();
      std::vector<ReferenceClip> clips;
      for (const NamedMotion& m : load_inputs(sk, train_data)) {
        clips.push_back(ReferenceClip::build(sk, m.id, m.motion));
      }
      ImitatorModel init;
      if (!train_init.empty()) init = ImitatorModel::load(train_init, sk);
      fs::create_directories(train_out);
      std::ofstream log(fs::path(train_out) / "train_log.jsonl");
      const TrainResult res = train_imitator(
          sk, clips, cfg, seed, train_init.empty() ? nullptr : &init,
          [&](const TrainLogRecord& r) {
            log << r.to_json().dump() << '\n';
            log.flush();
            char buf[160];
            std::snprintf(buf, sizeof buf, "iter %d  reward %.4f  len %.1f  ifr %.3f  clip %.3f",
                          r.iter, r.mean_reward, r.mean_len, r.train_ifr, r.clip_frac);
            log_line(buf);
          });
      res.model.save(train_out);
      Json report = {{"schema_version", 1}, {"clips", static_cast<int>(clips.size())}};
      Json failures = Json::object();
      for (size_t c = 0; c < clips.size(); ++c) failures[clips[c].id] = res.weights.failures(c);
      report["clip_failures"] = failures;
      stamp(report, cfg.to_json(), seed);
      write_report(fs::path(train_out) / "train_report.json", report);

    } else if (*ref) {
      const ImitatorConfig cfg = imitator_config(ref_config);
      const ImitatorModel model = ImitatorModel::load(ref_model, sk);
      const std::vector<NamedMotion> in = load_inputs(sk, ref_in);
      const std::vector<RefinedItem> items =
          refine_batch(sk, model.policy, in, cfg.sim, cfg.termination_m, cfg.threads);
      std::vector<NamedMotion> out;
      Json entries = Json::array();
      for (const RefinedItem& it : items) {
        out.push_back({it.id, it.refined.motion});
        entries.push_back({{"id", it.id},
                           {"success", it.refined.success},
                           {"diverged", it.refined.diverged},
                           {"terminated_at", it.refined.terminated_at}});
      }
      write_motions(ref_out, out);
      Json report = {{"schema_version", 1}, {"motions", entries}};
      stamp(report, cfg.to_json(), seed);
      write_report(fs::path(ref_out) / "refine_report.json", report);
      log_line("refined " + std::to_string(out.size()) + " motion(s)");

    } else if (*sel) {
      const std::vector<NamedMotion> orig = load_inputs(sk, sel_orig);
      const std::vector<NamedMotion> refd = load_inputs(sk, sel_ref);
      std::vector<RefinedItem> items;
      for (const NamedMotion& o : orig) {
        auto it = std::find_if(refd.begin(), refd.end(),
                               [&](const NamedMotion& r) { return r.id == o.id; });
        if (it == refd.end()) throw InputError("select: no refined motion for '" + o.id + "'");
        RefineResult r;
        r.motion = it->motion;
        items.push_back({o.id, o.motion, r});
      }
      const SelectionOutcome outcome = select_batch(sk, items, sel_tau);
      std::vector<NamedMotion> out;
      Json decisions = Json::array();
      for (size_t i = 0; i < items.size(); ++i) {
        out.push_back({items[i].id, outcome.outputs[i]});
        decisions.push_back(outcome.decisions[i].to_json());
      }
      write_motions(sel_out, out);
      Json report = {{"schema_version", 1}, {"decisions", decisions}, {"ifr", outcome.ifr}};
      stamp(report, {{"tau", sel_tau}}, seed);
      write_report(fs::path(sel_out) / "select_report.json", report);
      log_line("IFR " + std::to_string(outcome.ifr));

    } else if (*ft) {
      std::vector<MotionSequence> data;
      std::vector<std::string> labels;
      for (const NamedMotion& m : load_inputs(sk, ft_data)) {
        data.push_back(m.motion);
        if (std::find(labels.begin(), labels.end(), m.motion.condition.label) == labels.end()) {
          labels.push_back(m.motion.condition.label);
        }
      }
      ToyGenerator g;
      if (ft_gen.empty()) {
        std::mt19937_64 rng(seed);
        g = ToyGenerator::init(sk, labels, data.front().length(), data.front().fps, ft_hidden, rng);
      } else {
        g = ToyGenerator::load(ft_gen);
      }
      const FinetuneResult res = finetune_generator(g, data, ft_config);
      fs::create_directories(ft_out);
      g.save(fs::path(ft_out) / "generator.json");
      Json report = {{"schema_version", 1},
                     {"loss_curve", res.loss_curve},
                     {"final_loss", res.final_loss},
                     {"skipped", res.skipped}};
      stamp(report,
            {{"steps", ft_config.steps}, {"learning_rate", ft_config.learning_rate},
             {"hidden", ft_hidden}, {"generator", ft_gen}},
            seed);
      write_report(fs::path(ft_out) / "finetune_report.json", report);
      log_line("final loss " + std::to_string(res.final_loss));

    } else if (*pipe) {
      const PipelineConfig cfg = pipeline_config(pipe_config);
      const PipelineResult res = run_pipeline(sk, cfg, seed);
      fs::create_directories(pipe_out);
      write_report(fs::path(pipe_out) / "report.json", res.summary);
      if (!res.rounds.empty() && !res.failed) {
        res.model.save(fs::path(pipe_out) / "model");
        res.generator.save(fs::path(pipe_out) / "generator.json");
      }
      for (const RoundReport& r : res.rounds) log_line(r.json.dump());
      if (res.failed) return 2;

    } else if (*st) {
      const ImitatorConfig cfg = imitator_config(st_config);
      const ImitatorModel model = ImitatorModel::load(st_model, sk);
      const std::vector<RefinedItem> items = refine_batch(
          sk, model.policy, load_inputs(sk, st_in), cfg.sim, cfg.termination_m, cfg.threads);
      Json rows = Json::array();
      for (const TauRow& r : sweep_tau(sk, items, st_taus)) rows.push_back(r.to_json());
      Json report = {{"schema_version", 1}, {"rows", rows}};
      stamp(report, {{"taus", st_taus}, {"imitator", cfg.to_json()}}, seed);
      write_report(st_out, report);

    } else if (*sd) {
      const PipelineConfig cfg = pipeline_config(sd_config);
      Json rows = Json::array();
      for (const DataVolumeRow& r : sweep_data_volume(sk, sd_fractions, cfg, seed)) {
        rows.push_back(r.to_json());
      }
      Json report = {{"schema_version", 1}, {"rows", rows}};
      stamp(report, {{"fractions", sd_fractions}, {"pipeline", cfg.to_json()}}, seed);
      write_report(sd_out, report);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const StructuralError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
