#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "feddrm/errors.hpp"

namespace feddrm {

// key = value config file; '#' starts a comment, blank lines ignored.  Lookups
// of absent keys without a default throw config_error naming the key, and the
// key set is validated against a whitelist so typos fail loudly.
class RunConfig {
 public:
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double dflt) const;
  int get_int(const std::string& key) const;
  int get_int(const std::string& key, int dflt) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<int> get_int_list(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;

  // throws config_error on the first key outside the whitelist
  void reject_unknown(const std::set<std::string>& known) const;

  // FNV-1a over the sorted canonical "key=value\n" lines
  std::uint64_t hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace feddrm
