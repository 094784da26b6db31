#include "lvp/video.hpp"

#include <algorithm>

#include "lvp/errors.hpp"
#include "lvp/io.hpp"

namespace lvp {

namespace {
constexpr std::string_view kClipMagic = "HARPCLIP";
}

VideoClip VideoClip::slice(std::size_t first, std::size_t count) const {
  if (first + count > length()) {
    throw DimensionError("clip slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                         ") exceeds length " + std::to_string(length()));
  }
  VideoClip out;
  out.frames = frame_batch(first, count);
  out.action_width = action_width;
  if (action_width > 0) {
    out.actions.assign(actions.begin() + static_cast<std::ptrdiff_t>(first * action_width),
                       actions.begin() + static_cast<std::ptrdiff_t>((first + count) * action_width));
  }
  out.seed = seed;
  out.config_hash = config_hash;
  return out;
}

Tensor VideoClip::frame_batch(std::size_t first, std::size_t count) const {
  const std::size_t fs = frame_size();
  auto begin = frames.values().begin() + static_cast<std::ptrdiff_t>(first * fs);
  return Tensor({count, channels(), height(), width()}, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(count * fs)));
}

void VideoClip::validate() const {
  if (!frames.defined() || frames.rank() != 4) throw DimensionError("clip frames must be [T×N_ch×H×W]");
  if (actions.size() != length() * action_width) {
    throw DimensionError("clip has " + std::to_string(actions.size()) + " action values for " +
                         std::to_string(length()) + " frames of width " + std::to_string(action_width));
  }
  for (float v : frames.values()) {
    if (!(v >= -1.0f && v <= 1.0f)) throw NumericError("clip pixel outside [-1, 1]");
  }
}

std::vector<std::byte> encode_clip(const VideoClip& clip) {
  ByteWriter w;
  w.raw(kClipMagic);
  w.u32(static_cast<std::uint32_t>(clip.length()));
  w.u32(static_cast<std::uint32_t>(clip.height()));
  w.u32(static_cast<std::uint32_t>(clip.width()));
  w.u32(static_cast<std::uint32_t>(clip.channels()));
  w.u32(static_cast<std::uint32_t>(clip.action_width));
  w.f32s(clip.frames.values());
  w.f32s(clip.actions);
  return w.bytes();
}

VideoClip decode_clip(std::span<const std::byte> bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.raw(8) != kClipMagic) throw IoError(source + ": not a clip file");
  const std::size_t t = r.u32(), h = r.u32(), w = r.u32(), c = r.u32(), a = r.u32();
  VideoClip clip;
  clip.frames = Tensor({t, c, h, w});
  r.f32s(clip.frames.values_mut());
  clip.action_width = a;
  clip.actions.resize(t * a);
  r.f32s(clip.actions);
  if (!r.at_end()) throw IoError(source + ": trailing bytes");
  return clip;
}

void write_clip(const std::filesystem::path& path, const VideoClip& clip) {
  write_file_bytes(path, encode_clip(clip));
}

VideoClip read_clip(const std::filesystem::path& path) {
  return decode_clip(read_file_bytes(path), path.string());
}

}  // namespace lvp
