#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace morph {

using Json = nlohmann::json;

/// A parsed JSON document that remembers the source line of every value so
/// diagnostics can name file, line, and field.
class JsonFile {
 public:
  /// Parses `text`; throws InputError naming `origin` and the line on a
  /// syntax error.
  JsonFile(std::string origin, const std::string& text);

  static JsonFile load(const std::filesystem::path& path);

  const Json& root() const { return doc_; }
  const std::string& origin() const { return origin_; }

  /// Source line of the value at JSON pointer `ptr` (0 when unknown).
  int line_of(const std::string& ptr) const;

  /// Throws InputError formatted as "<origin>:<line>: field '<ptr>': <msg>".
  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const;

  // Typed accessors that fail() with a field diagnostic on mismatch.
  const Json& at(const std::string& ptr) const;
  bool has(const std::string& ptr) const;
  double number(const std::string& ptr) const;
  long long integer(const std::string& ptr) const;
  std::string string(const std::string& ptr) const;
  std::vector<double> numbers(const std::string& ptr, size_t expected) const;

 private:
  std::string origin_;
  Json doc_;
  std::map<std::string, int> lines_;
};

/// Writes `j` with deterministic key order and round-trip precision.
void write_json(const std::filesystem::path& path, const Json& j);

/// 64-bit FNV-1a digest of the compact dump, as 16 hex digits.
std::string json_digest(const Json& j);

} // namespace morph
