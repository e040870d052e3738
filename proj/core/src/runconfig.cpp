#include "feddrm/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace feddrm {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

RunConfig RunConfig::parse_string(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(line_no) +
                         ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("config line " + std::to_string(line_no) +
                                        ": empty key");
    if (cfg.kv_.count(key))
      throw config_error("config: duplicate key " + key);
    cfg.kv_[key] = value;
  }
  return cfg;
}

std::string RunConfig::get_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw config_error("missing required key: " + key);
  return it->second;
}

std::string RunConfig::get_str(const std::string& key,
                               const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string s = get_str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("key " + key + ": expected a number, got '" + s + "'");
  }
}

double RunConfig::get_double(const std::string& key, double dflt) const {
  return has(key) ? get_double(key) : dflt;
}

int RunConfig::get_int(const std::string& key) const {
  const std::string s = get_str(key);
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw config_error("key " + key + ": expected an integer, got '" + s + "'");
  }
}

int RunConfig::get_int(const std::string& key, int dflt) const {
  return has(key) ? get_int(key) : dflt;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string s = get_str(key);
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw config_error("key " + key + ": expected an unsigned integer, got '" + s +
                       "'");
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t dflt) const {
  return has(key) ? get_u64(key) : dflt;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string s = get_str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw config_error("key " + key + ": expected true/false, got '" + s + "'");
}

bool RunConfig::get_bool(const std::string& key, bool dflt) const {
  return has(key) ? get_bool(key) : dflt;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string s = get_str(key);
  std::vector<int> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    try {
      out.push_back(std::stoi(cell));
    } catch (const std::exception&) {
      throw config_error("key " + key + ": expected integer list, got '" + s + "'");
    }
  }
  if (out.empty()) throw config_error("key " + key + ": empty list");
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  const std::string s = get_str(key);
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw config_error("key " + key + ": expected number list, got '" + s + "'");
    }
  }
  if (out.empty()) throw config_error("key " + key + ": empty list");
  return out;
}

void RunConfig::reject_unknown(const std::set<std::string>& known) const {
  for (const auto& [key, value] : kv_) {
    (void)value;
    if (!known.count(key)) throw config_error("unknown config key: " + key);
  }
}

std::uint64_t RunConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [key, value] : kv_) {  // std::map iterates in sorted order
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return h;
}

}  // namespace feddrm
