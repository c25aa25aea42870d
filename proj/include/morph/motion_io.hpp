#pragma once

#include "morph/json_file.hpp"
#include "morph/motion.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace morph {

Json skeleton_to_json(const Skeleton& skeleton);
Skeleton skeleton_from_json(const JsonFile& file);
Skeleton load_skeleton(const std::filesystem::path& path);
void save_skeleton(const std::filesystem::path& path, const Skeleton& skeleton);

Json motion_to_json(const MotionSequence& seq);
/// Parses and canonicalizes a motion document. Structural problems raise
/// InputError with a file/line/field diagnostic.
MotionSequence motion_from_json(const JsonFile& file);
MotionSequence load_motion(const std::filesystem::path& path);
void save_motion(const std::filesystem::path& path, const MotionSequence& seq);

struct NamedMotion {
  std::string id;  ///< file stem
  MotionSequence motion;
};

/// A single motion file, or every *.json in a directory sorted by name,
/// skipping *_report.json.
std::vector<NamedMotion> load_motions(const std::filesystem::path& path);

/// Resolves a skeleton id to a skeleton: the built-in "humanoid13" or a
/// file at `override_path` when given.
Skeleton resolve_skeleton(const std::string& id,
                          const std::filesystem::path& override_path = {});

} // namespace morph
