#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace lvp {

using KeyValues = std::map<std::string, std::string>;
// Section name → keys. The empty section holds top-level keys.
using IniDocument = std::map<std::string, KeyValues>;

IniDocument load_ini(const std::filesystem::path& path);
IniDocument parse_ini(const std::string& text, const std::string& source);
std::string format_ini(const IniDocument& doc);

// Canonical text for hashing and checkpoint headers: sorted "key=value\n".
std::string kv_text(const KeyValues& kv);
std::string kv_hash(const KeyValues& kv);

std::string format_double(double v);  // shortest exact round-trip

// Typed reads from one section; unknown keys are reported by finish().
class KvReader {
 public:
  KvReader(const KeyValues& kv, std::string section) : kv_(kv), section_(std::move(section)) {}

  std::int64_t get_int(const std::string& key, std::int64_t fallback);
  std::size_t get_size(const std::string& key, std::size_t fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::string get_string(const std::string& key, const std::string& fallback);
  void finish() const;

 private:
  const std::string* find(const std::string& key);
  [[noreturn]] void bad(const std::string& key, const std::string& value, const char* what) const;
  const KeyValues& kv_;
  std::string section_;
  std::set<std::string> used_;
};

}  // namespace lvp
