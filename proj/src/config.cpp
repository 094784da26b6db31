#include "lvp/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <sstream>

#include "lvp/errors.hpp"
#include "lvp/io.hpp"

namespace lvp {

namespace pt = boost::property_tree;

IniDocument parse_ini(const std::string& text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  IniDocument doc;
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      doc[""][name] = node.data();
      continue;
    }
    auto& section = doc[name];
    for (const auto& [key, leaf] : node) section[key] = leaf.data();
  }
  return doc;
}

IniDocument load_ini(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  return parse_ini(read_text_file(path), path.string());
}

std::string format_ini(const IniDocument& doc) {
  std::string out;
  if (auto top = doc.find(""); top != doc.end()) out += kv_text(top->second);
  for (const auto& [name, kv] : doc) {
    if (name.empty()) continue;
    if (!out.empty()) out += "\n";
    out += "[" + name + "]\n" + kv_text(kv);
  }
  return out;
}

std::string kv_text(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string kv_hash(const KeyValues& kv) {
  Sha256 h;
  h.update(kv_text(kv));
  return h.hex_digest();
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

const std::string* KvReader::find(const std::string& key) {
  used_.insert(key);
  auto it = kv_.find(key);
  return it == kv_.end() ? nullptr : &it->second;
}

void KvReader::bad(const std::string& key, const std::string& value, const char* what) const {
  throw ConfigError("[" + section_ + "] " + key + " = '" + value + "' is not " + what);
}

std::int64_t KvReader::get_int(const std::string& key, std::int64_t fallback) {
  const auto* s = find(key);
  if (!s) return fallback;
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || end != s->data() + s->size()) bad(key, *s, "an integer");
  return v;
}

std::size_t KvReader::get_size(const std::string& key, std::size_t fallback) {
  const auto v = get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) bad(key, std::to_string(v), "a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::uint64_t KvReader::get_u64(const std::string& key, std::uint64_t fallback) {
  const auto* s = find(key);
  if (!s) return fallback;
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || end != s->data() + s->size()) bad(key, *s, "an unsigned integer");
  return v;
}

double KvReader::get_double(const std::string& key, double fallback) {
  const auto* s = find(key);
  if (!s) return fallback;
  double v = 0;
  auto [end, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
  if (ec != std::errc() || end != s->data() + s->size()) bad(key, *s, "a number");
  return v;
}

bool KvReader::get_bool(const std::string& key, bool fallback) {
  const auto* s = find(key);
  if (!s) return fallback;
  if (*s == "true" || *s == "1" || *s == "yes") return true;
  if (*s == "false" || *s == "0" || *s == "no") return false;
  bad(key, *s, "a boolean");
}

std::string KvReader::get_string(const std::string& key, const std::string& fallback) {
  const auto* s = find(key);
  return s ? *s : fallback;
}

void KvReader::finish() const {
  for (const auto& [k, v] : kv_) {
    if (!used_.count(k)) throw ConfigError("[" + section_ + "] unknown key '" + k + "'");
  }
}

}  // namespace lvp
