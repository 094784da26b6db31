#pragma once

#include "lvp/config.hpp"
#include "lvp/rng.hpp"
#include "lvp/video.hpp"

namespace lvp {

struct AugmentConfig {
  int m = 4;              // maximum shift in pixels
  float fill = 0.0f;      // value for exposed border pixels
  bool axis_exclusive = false;  // shift along X or Y, never both

  KeyValues to_kv() const;
  static AugmentConfig from_kv(const KeyValues& kv);
};

struct Shift {
  int dx = 0, dy = 0;
};

// Uniform over {−m..m}², or in axis-exclusive mode a uniform axis and then a
// uniform offset in {−m..m} along it.
Shift draw_shift(const AugmentConfig& config, Rng& rng);

// out(x, y) = in(x − dx, y − dy), fill where the source lies outside.
VideoClip shift_clip(const VideoClip& clip, Shift shift, float fill);

// One shift per clip, applied to every frame.
VideoClip translate_clip(const VideoClip& clip, Rng& rng, const AugmentConfig& config);

}  // namespace lvp
