#include "morph/json_file.hpp"

#include "morph/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

namespace morph {

namespace {

// Iterator over the raw text that reports how far the parser has read, so the
// SAX pass below can attach a byte offset to every value.
struct CountingIterator {
  using iterator_category = std::forward_iterator_tag;
  using value_type = char;
  using difference_type = std::ptrdiff_t;
  using pointer = const char*;
  using reference = const char&;

  const char* p = nullptr;
  size_t* consumed = nullptr;

  reference operator*() const { return *p; }
  CountingIterator& operator++() {
    ++p;
    ++*consumed;
    return *this;
  }
  CountingIterator operator++(int) {
    CountingIterator tmp = *this;
    ++*this;
    return tmp;
  }
  bool operator==(const CountingIterator& o) const { return p == o.p; }
  bool operator!=(const CountingIterator& o) const { return p != o.p; }
};

class LineRecorder : public nlohmann::json_sax<Json> {
 public:
  LineRecorder(const std::vector<size_t>& line_starts, const size_t& consumed,
               std::map<std::string, int>& lines)
      : line_starts_(line_starts), consumed_(consumed), lines_(lines) {}

  bool null() override { return scalar(); }
  bool boolean(bool) override { return scalar(); }
  bool number_integer(number_integer_t) override { return scalar(); }
  bool number_unsigned(number_unsigned_t) override { return scalar(); }
  bool number_float(number_float_t, const string_t&) override { return scalar(); }
  bool string(string_t&) override { return scalar(); }
  bool binary(binary_t&) override { return scalar(); }

  bool start_object(std::size_t) override {
    value();
    stack_.push_back({false, 0, {}});
    return true;
  }
  bool key(string_t& k) override {
    stack_.back().key = k;
    return true;
  }
  bool end_object() override {
    stack_.pop_back();
    advance();
    return true;
  }
  bool start_array(std::size_t) override {
    value();
    stack_.push_back({true, 0, {}});
    return true;
  }
  bool end_array() override {
    stack_.pop_back();
    advance();
    return true;
  }
  bool parse_error(std::size_t, const std::string&,
                   const nlohmann::detail::exception&) override {
    return false;
  }

 private:
  struct Level {
    bool is_array;
    size_t index;
    std::string key;
  };

  bool value() {
    std::string ptr;
    for (const Level& l : stack_) {
      ptr += '/';
      ptr += l.is_array ? std::to_string(l.index) : escape(l.key);
    }
    lines_[ptr] = line_at(consumed_ == 0 ? 0 : consumed_ - 1);
    return true;
  }

  bool scalar() {
    value();
    advance();
    return true;
  }

  void advance() {
    if (!stack_.empty() && stack_.back().is_array) {
      ++stack_.back().index;
    }
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') {
        out += "~0";
      } else if (c == '/') {
        out += "~1";
      } else {
        out += c;
      }
    }
    return out;
  }

  int line_at(size_t offset) const {
    auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), offset);
    return static_cast<int>(it - line_starts_.begin());
  }

  const std::vector<size_t>& line_starts_;
  const size_t& consumed_;
  std::map<std::string, int>& lines_;
  std::vector<Level> stack_;
};

std::vector<size_t> line_starts_of(const std::string& text) {
  std::vector<size_t> starts{0};
  for (size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') starts.push_back(i + 1);
  }
  return starts;
}

} // namespace

JsonFile::JsonFile(std::string origin, const std::string& text)
    : origin_(std::move(origin)) {
  const std::vector<size_t> starts = line_starts_of(text);
  try {
    doc_ = Json::parse(text);
  } catch (const Json::parse_error& e) {
    const size_t byte = e.byte == 0 ? 0 : e.byte - 1;
    auto it = std::upper_bound(starts.begin(), starts.end(), byte);
    const auto line = it - starts.begin();
    throw InputError(origin_ + ":" + std::to_string(line) + ": JSON syntax error: " +
                     e.what());
  }
  size_t consumed = 0;
  LineRecorder recorder(starts, consumed, lines_);
  CountingIterator first{text.data(), &consumed};
  CountingIterator last{text.data() + text.size(), &consumed};
  Json::sax_parse(first, last, &recorder);
}

JsonFile JsonFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError(path.string() + ": cannot open file");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return JsonFile(path.string(), ss.str());
}

int JsonFile::line_of(const std::string& ptr) const {
  auto it = lines_.find(ptr);
  if (it != lines_.end()) return it->second;
  // fall back to the closest recorded ancestor
  std::string p = ptr;
  while (!p.empty()) {
    p = p.substr(0, p.find_last_of('/'));
    it = lines_.find(p);
    if (it != lines_.end()) return it->second;
  }
  auto root = lines_.find("");
  return root == lines_.end() ? 0 : root->second;
}

void JsonFile::fail(const std::string& ptr, const std::string& msg) const {
  throw InputError(origin_ + ":" + std::to_string(line_of(ptr)) + ": field '" +
                   (ptr.empty() ? std::string("/") : ptr) + "': " + msg);
}

bool JsonFile::has(const std::string& ptr) const {
  try {
    return doc_.contains(Json::json_pointer(ptr));
  } catch (const Json::exception&) {
    return false;
  }
}

const Json& JsonFile::at(const std::string& ptr) const {
  if (!has(ptr)) fail(ptr, "missing");
  return doc_.at(Json::json_pointer(ptr));
}

double JsonFile::number(const std::string& ptr) const {
  const Json& v = at(ptr);
  if (!v.is_number()) fail(ptr, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(ptr, "number is not finite");
  return d;
}

long long JsonFile::integer(const std::string& ptr) const {
  const Json& v = at(ptr);
  if (!v.is_number_integer()) fail(ptr, "expected an integer");
  return v.get<long long>();
}

std::string JsonFile::string(const std::string& ptr) const {
  const Json& v = at(ptr);
  if (!v.is_string()) fail(ptr, "expected a string");
  return v.get<std::string>();
}

std::vector<double> JsonFile::numbers(const std::string& ptr, size_t expected) const {
  const Json& v = at(ptr);
  if (!v.is_array() || v.size() != expected) {
    fail(ptr, "expected an array of " + std::to_string(expected) + " numbers");
  }
  std::vector<double> out;
  out.reserve(expected);
  for (size_t i = 0; i < expected; ++i) {
    out.push_back(number(ptr + "/" + std::to_string(i)));
  }
  return out;
}

void write_json(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError(path.string() + ": cannot open for writing");
  }
  out << j.dump(1) << '\n';
}

std::string json_digest(const Json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

} // namespace morph
