#include "lvp/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lvp/errors.hpp"

namespace lvp {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr);
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::span<const std::byte> bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
}

void Sha256::update(std::string_view text) { update(std::as_bytes(std::span(text.data(), text.size()))); }

void Sha256::update_u64(std::uint64_t value) {
  ByteWriter w;
  w.u64(value);
  update(w.bytes());
}

std::string Sha256::hex_digest() {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string sha256_hex(std::span<const std::byte> bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex_digest();
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

void ByteWriter::raw(std::string_view bytes) {
  for (char c : bytes) buf_.push_back(static_cast<std::byte>(c));
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f32s(std::span<const float> values) {
  buf_.reserve(buf_.size() + 4 * values.size());
  for (float v : values) f32(v);
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s);
}

void ByteReader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw IoError(source_ + ": truncated data at byte " + std::to_string(pos_));
}

std::string ByteReader::raw(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

void ByteReader::f32s(std::span<float> out) {
  need(4 * out.size());
  for (float& v : out) v = f32();
}

std::string ByteReader::str() { return raw(u32()); }

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

const Tensor& Checkpoint::tensor(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw CheckpointMismatch("checkpoint has no tensor named " + std::string(name));
}

const std::string& Checkpoint::value(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw CheckpointMismatch("checkpoint config lacks key " + key);
  return it->second;
}

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.magic.size() != 8) throw UsageError("checkpoint magic must be 8 bytes");
  ByteWriter w;
  w.raw(ckpt.magic);
  w.u32(kCheckpointVersion);
  std::string config;
  for (const auto& [k, v] : ckpt.config) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw UsageError("checkpoint config entry not representable: " + k);
    }
    config += k + "=" + v + "\n";
  }
  w.str(config);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.value.values());
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes, std::string_view expected_magic,
                             const std::string& source) {
  ByteReader r(bytes, source);
  Checkpoint ckpt;
  ckpt.magic = r.raw(8);
  if (ckpt.magic != expected_magic) {
    throw CheckpointMismatch(source + ": magic '" + ckpt.magic + "' but expected '" +
                             std::string(expected_magic) + "'");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointMismatch(source + ": unsupported version " + std::to_string(version));
  }
  std::istringstream config(r.str());
  for (std::string line; std::getline(config, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(source + ": malformed config line '" + line + "'");
    ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    Tensor t(shape);
    r.f32s(t.values_mut());
    ckpt.tensors.push_back({std::move(name), std::move(t)});
  }
  if (!r.at_end()) throw IoError(source + ": trailing bytes after tensor table");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_magic) {
  return decode_checkpoint(read_file_bytes(path), expected_magic, path.string());
}

}  // namespace lvp
