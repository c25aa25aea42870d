#include "morph/motion_io.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>

namespace morph {

namespace {

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_at(const JsonFile& f, const std::string& ptr) {
  const auto v = f.numbers(ptr, 3);
  return {v[0], v[1], v[2]};
}

} // namespace

Json skeleton_to_json(const Skeleton& skeleton) {
  Json joints = Json::array();
  for (const Joint& j : skeleton.joints()) {
    Json jj = {{"name", j.name},
               {"parent", j.parent},
               {"offset", vec_json(j.offset)},
               {"mass", j.mass},
               {"collision_radius", j.collision_radius}};
    if (!j.contact_points.empty()) {
      Json pts = Json::array();
      for (const Vec3& p : j.contact_points) pts.push_back(vec_json(p));
      jj["contact_points"] = pts;
    }
    joints.push_back(jj);
  }
  return {{"version", 1},
          {"name", skeleton.name()},
          {"joints", joints},
          {"feet", skeleton.feet()},
          {"pelvis", skeleton.pelvis()}};
}

Skeleton skeleton_from_json(const JsonFile& f) {
  if (f.integer("/version") != 1) f.fail("/version", "unsupported version");
  const std::string name = f.string("/name");
  const Json& js = f.at("/joints");
  if (!js.is_array() || js.empty()) f.fail("/joints", "expected a non-empty array");
  std::vector<Joint> joints;
  for (size_t i = 0; i < js.size(); ++i) {
    const std::string base = "/joints/" + std::to_string(i);
    Joint j;
    j.name = f.string(base + "/name");
    j.parent = static_cast<int>(f.integer(base + "/parent"));
    j.offset = vec_at(f, base + "/offset");
    j.mass = f.number(base + "/mass");
    j.collision_radius = f.number(base + "/collision_radius");
    if (f.has(base + "/contact_points")) {
      const Json& pts = f.at(base + "/contact_points");
      if (!pts.is_array()) f.fail(base + "/contact_points", "expected an array");
      for (size_t k = 0; k < pts.size(); ++k) {
        j.contact_points.push_back(vec_at(f, base + "/contact_points/" + std::to_string(k)));
      }
    }
    joints.push_back(std::move(j));
  }
  std::vector<int> feet;
  const Json& jf = f.at("/feet");
  if (!jf.is_array()) f.fail("/feet", "expected an array of joint indices");
  for (size_t i = 0; i < jf.size(); ++i) {
    feet.push_back(static_cast<int>(f.integer("/feet/" + std::to_string(i))));
  }
  const int pelvis = static_cast<int>(f.integer("/pelvis"));
  try {
    return Skeleton(name, std::move(joints), std::move(feet), pelvis);
  } catch (const StructuralError& e) {
    f.fail("/joints", e.what());
  }
}

Skeleton load_skeleton(const std::filesystem::path& path) {
  return skeleton_from_json(JsonFile::load(path));
}

void save_skeleton(const std::filesystem::path& path, const Skeleton& skeleton) {
  write_json(path, skeleton_to_json(skeleton));
}

Json motion_to_json(const MotionSequence& seq) {
  Json frames = Json::array();
  for (const Pose& p : seq.frames) {
    Json rots = Json::array();
    for (const Quat& q : p.joint_rot) {
      rots.push_back(Json::array({q.w(), q.x(), q.y(), q.z()}));
    }
    frames.push_back({{"root_pos", vec_json(p.root_pos)}, {"joint_rot", rots}});
  }
  return {{"version", 1},
          {"fps", seq.fps},
          {"condition", {{"label", seq.condition.label}, {"seed", seq.condition.seed}}},
          {"skeleton", seq.skeleton},
          {"frames", frames}};
}

MotionSequence motion_from_json(const JsonFile& f) {
  if (f.integer("/version") != 1) f.fail("/version", "unsupported version");
  MotionSequence seq;
  seq.fps = static_cast<int>(f.integer("/fps"));
  if (seq.fps < 10 || seq.fps > 120) f.fail("/fps", "must be in [10, 120]");
  seq.condition.label = f.string("/condition/label");
  const Json& seed = f.at("/condition/seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    f.fail("/condition/seed", "expected a non-negative integer");
  }
  seq.condition.seed = seed.get<std::uint64_t>();
  seq.skeleton = f.string("/skeleton");
  const Json& frames = f.at("/frames");
  if (!frames.is_array()) f.fail("/frames", "expected an array");
  if (frames.size() < 2) f.fail("/frames", "need at least 2 frames");
  size_t joint_count = 0;
  for (size_t l = 0; l < frames.size(); ++l) {
    const std::string base = "/frames/" + std::to_string(l);
    Pose p;
    p.root_pos = vec_at(f, base + "/root_pos");
    const Json& rots = f.at(base + "/joint_rot");
    if (!rots.is_array() || rots.empty()) f.fail(base + "/joint_rot", "expected a non-empty array");
    if (l == 0) {
      joint_count = rots.size();
    } else if (rots.size() != joint_count) {
      f.fail(base + "/joint_rot", "joint count differs from frame 0");
    }
    for (size_t j = 0; j < rots.size(); ++j) {
      const std::string ptr = base + "/joint_rot/" + std::to_string(j);
      const auto q = f.numbers(ptr, 4);
      Quat quat(q[0], q[1], q[2], q[3]);
      if (!(quat.norm() > 1e-9)) f.fail(ptr, "zero-norm quaternion");
      p.joint_rot.push_back(quat);
    }
    seq.frames.push_back(canonicalize(p));
  }
  return seq;
}

MotionSequence load_motion(const std::filesystem::path& path) {
  return motion_from_json(JsonFile::load(path));
}

void save_motion(const std::filesystem::path& path, const MotionSequence& seq) {
  write_json(path, motion_to_json(seq));
}

std::vector<NamedMotion> load_motions(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<NamedMotion> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      const std::string name = entry.path().filename().string();
      const bool report = name.ends_with("_report.json");
      if (entry.is_regular_file() && entry.path().extension() == ".json" && !report) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& p : files) {
      out.push_back({p.stem().string(), load_motion(p)});
    }
  } else if (fs::exists(path)) {
    out.push_back({path.stem().string(), load_motion(path)});
  } else {
    throw InputError(path.string() + ": no such file or directory");
  }
  if (out.empty()) {
    throw InputError(path.string() + ": no motion files found");
  }
  return out;
}

Skeleton resolve_skeleton(const std::string& id,
                          const std::filesystem::path& override_path) {
  if (!override_path.empty()) {
    Skeleton s = load_skeleton(override_path);
    if (s.name() != id) {
      throw InputError(override_path.string() + ": skeleton name '" + s.name() +
                       "' does not match motion skeleton id '" + id + "'");
    }
    return s;
  }
  if (id == default_humanoid().name()) return default_humanoid();
  throw InputError("unknown skeleton id '" + id + "' (pass --skeleton <file>)");
}

} // namespace morph
