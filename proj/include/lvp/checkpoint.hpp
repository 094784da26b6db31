#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lvp/io.hpp"
#include "lvp/nn.hpp"

// Checkpoint container, little-endian:
//   magic      8 bytes ("HARPCODC" codec, "HARPDYNA" dynamics)
//   version    u32
//   config     u32 byte length, then "key=value\n" lines sorted by key
//   tensors    u32 count, then per tensor:
//                u32 name length, name bytes, u32 rank, u32 extents[rank],
//                f32 values[prod(extents)]
namespace lvp {

inline constexpr std::string_view kCodecMagic = "HARPCODC";
inline constexpr std::string_view kDynamicsMagic = "HARPDYNA";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string magic;
  std::map<std::string, std::string> config;
  std::vector<NamedParameter> tensors;

  const Tensor& tensor(std::string_view name) const;
  const std::string& value(const std::string& key) const;
};

std::vector<std::byte> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::byte> bytes, std::string_view expected_magic,
                             const std::string& source);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path, std::string_view expected_magic);

}  // namespace lvp
