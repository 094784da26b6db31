#include "lvp/augment.hpp"

#include <algorithm>

#include "lvp/errors.hpp"

namespace lvp {

KeyValues AugmentConfig::to_kv() const {
  return {{"m", std::to_string(m)}, {"fill", format_double(fill)}, {"axis_exclusive", axis_exclusive ? "true" : "false"}};
}

AugmentConfig AugmentConfig::from_kv(const KeyValues& kv) {
  AugmentConfig c;
  KvReader r(kv, "augment");
  c.m = static_cast<int>(r.get_int("m", c.m));
  c.fill = static_cast<float>(r.get_double("fill", c.fill));
  c.axis_exclusive = r.get_bool("axis_exclusive", c.axis_exclusive);
  r.finish();
  if (c.m < 0) throw ConfigError("augment m must be non-negative");
  return c;
}

Shift draw_shift(const AugmentConfig& config, Rng& rng) {
  Shift s;
  if (config.axis_exclusive) {
    const bool x_axis = rng.uniform_int(0, 1) == 0;
    const int d = static_cast<int>(rng.uniform_int(-config.m, config.m));
    (x_axis ? s.dx : s.dy) = d;
  } else {
    s.dx = static_cast<int>(rng.uniform_int(-config.m, config.m));
    s.dy = static_cast<int>(rng.uniform_int(-config.m, config.m));
  }
  return s;
}

VideoClip shift_clip(const VideoClip& clip, Shift shift, float fill) {
  VideoClip out = clip;
  out.frames = Tensor(clip.frames.shape());
  const int h = static_cast<int>(clip.height()), w = static_cast<int>(clip.width());
  const std::size_t planes = clip.length() * clip.channels();
  const float* src = clip.frames.data();
  float* dst = out.frames.data_mut();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* s = src + p * static_cast<std::size_t>(h * w);
    float* d = dst + p * static_cast<std::size_t>(h * w);
    for (int y = 0; y < h; ++y) {
      const int sy = y - shift.dy;
      for (int x = 0; x < w; ++x) {
        const int sx = x - shift.dx;
        d[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? s[sy * w + sx] : fill;
      }
    }
  }
  return out;
}

VideoClip translate_clip(const VideoClip& clip, Rng& rng, const AugmentConfig& config) {
  const int limit = static_cast<int>(std::min(clip.height(), clip.width()));
  if (config.m < 0 || config.m >= limit) {
    throw ConfigError("augment m = " + std::to_string(config.m) + " must lie in [0, " + std::to_string(limit) + ")");
  }
  if (config.m == 0) return clip;
  return shift_clip(clip, draw_shift(config, rng), config.fill);
}

}  // namespace lvp
