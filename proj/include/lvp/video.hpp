#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lvp/tensor.hpp"

namespace lvp {

// T frames of N_ch×H×W pixels in [−1, 1] with optional per-frame actions.
struct VideoClip {
  Tensor frames;                // [T × N_ch × H × W]
  std::vector<float> actions;   // T × action_width, row-major; empty when action_width == 0
  std::size_t action_width = 0;
  std::uint64_t seed = 0;       // generator seed, 0 when not generated
  std::string config_hash;

  std::size_t length() const { return frames.dim(0); }
  std::size_t channels() const { return frames.dim(1); }
  std::size_t height() const { return frames.dim(2); }
  std::size_t width() const { return frames.dim(3); }
  std::size_t frame_size() const { return channels() * height() * width(); }

  // Frames [first, first + count) as a new clip (actions sliced alongside).
  VideoClip slice(std::size_t first, std::size_t count) const;
  // [count × N_ch × H × W] tensor of frames starting at `first`.
  Tensor frame_batch(std::size_t first, std::size_t count) const;
  void validate() const;
};

// Clip file, little-endian:
//   magic "HARPCLIP", u32 T, u32 H, u32 W, u32 N_ch, u32 A,
//   f32 frames[T·N_ch·H·W] (frame-major, then channel, row, column),
//   f32 actions[T·A]
std::vector<std::byte> encode_clip(const VideoClip& clip);
VideoClip decode_clip(std::span<const std::byte> bytes, const std::string& source);
void write_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& path);

}  // namespace lvp
