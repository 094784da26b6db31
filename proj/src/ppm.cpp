#include "lvp/ppm.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "lvp/errors.hpp"
#include "lvp/io.hpp"

namespace lvp {

void write_ppm(const std::filesystem::path& path, const float* frame, std::size_t channels, std::size_t height,
               std::size_t width) {
  if (channels != 1 && channels != 3) throw ConfigError("ppm export needs 1 or 3 channels");
  const std::string header =
      std::string(channels == 3 ? "P6" : "P5") + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::byte> bytes;
  for (char c : header) bytes.push_back(static_cast<std::byte>(c));
  const std::size_t plane = height * width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double v = std::clamp((double(frame[c * plane + p]) + 1.0) * 127.5, 0.0, 255.0);
      bytes.push_back(static_cast<std::byte>(static_cast<unsigned>(std::lround(v))));
    }
  }
  write_file_bytes(path, bytes);
}

}  // namespace lvp
