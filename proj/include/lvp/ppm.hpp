#pragma once

#include <filesystem>

namespace lvp {

// Binary portable pixmap (P6) for 3 channels or graymap (P5) for 1; values in
// [−1, 1] map linearly to 0..255. `frame` is N_ch×H×W planar.
void write_ppm(const std::filesystem::path& path, const float* frame, std::size_t channels, std::size_t height,
               std::size_t width);

}  // namespace lvp
