#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace s2slab {

// Flat key=value configuration with dotted section prefixes, e.g.
//   model.d_model=64
//   noise.mask_ratio=0.3
// '#' starts a comment; blank lines ignored. Later assignments win, so
// command-line overrides are applied by re-assigning keys.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);

  // Accepts "key=value"; throws on malformed input.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  std::string str(const std::string& key, const std::string& fallback) const;
  std::string require(const std::string& key) const;
  int64_t i64(const std::string& key, int64_t fallback) const;
  double f64(const std::string& key, double fallback) const;
  bool flag(const std::string& key, bool fallback) const;

  // Keys not in `known` cause an error listing the offenders.
  void validate_keys(const std::vector<std::string>& known) const;

  // Deterministic echo, one sorted key=value per line.
  std::string render() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Splits "a,b,c" into trimmed pieces; empty pieces dropped.
std::vector<std::string> split_list(const std::string& text, char sep = ',');

}  // namespace s2slab
