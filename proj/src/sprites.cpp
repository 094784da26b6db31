#include "lvp/sprites.hpp"

#include <algorithm>
#include <json.hpp>
#include <sstream>

#include "lvp/errors.hpp"
#include "lvp/io.hpp"

namespace lvp {

void SpriteWorldConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("canvas must be non-empty");
  if (channels != 1 && channels != 3) throw ConfigError("channels must be 1 or 3");
  if (frames == 0) throw ConfigError("clip needs at least one frame");
  if (cond_frames > frames) throw ConfigError("conditioning frames exceed clip length");
  if (size_min == 0 || size_min > size_max) throw ConfigError("sprite sizes need 1 <= size_min <= size_max");
  if (size_max > std::min(height, width)) {
    throw ConfigError("sprite size " + std::to_string(size_max) + " exceeds canvas " + std::to_string(height) + "x" +
                      std::to_string(width));
  }
  const int room = static_cast<int>(std::min(height, width) - size_max);
  if (max_speed < 0 || max_speed > room) throw ConfigError("max_speed must lie in [0, " + std::to_string(room) + "]");
  if (max_action < 0 || max_action > room) throw ConfigError("max_action must lie in [0, " + std::to_string(room) + "]");
  if (mode == PhysicsMode::kAction && sprites == 0) throw ConfigError("action mode needs an agent sprite");
  if (!(background >= -1.0f && background <= 1.0f)) throw ConfigError("background outside [-1, 1]");
}

KeyValues SpriteWorldConfig::to_kv() const {
  return {{"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"channels", std::to_string(channels)},
          {"frames", std::to_string(frames)},
          {"cond_frames", std::to_string(cond_frames)},
          {"sprites", std::to_string(sprites)},
          {"size_min", std::to_string(size_min)},
          {"size_max", std::to_string(size_max)},
          {"max_speed", std::to_string(max_speed)},
          {"max_action", std::to_string(max_action)},
          {"background", format_double(background)},
          {"mode", mode == PhysicsMode::kAction ? "action" : "bounce"}};
}

SpriteWorldConfig SpriteWorldConfig::from_kv(const KeyValues& kv) {
  SpriteWorldConfig c;
  KvReader r(kv, "data");
  c.height = r.get_size("height", c.height);
  c.width = r.get_size("width", c.width);
  c.channels = r.get_size("channels", c.channels);
  c.frames = r.get_size("frames", c.frames);
  c.cond_frames = r.get_size("cond_frames", c.cond_frames);
  c.sprites = r.get_size("sprites", c.sprites);
  c.size_min = r.get_size("size_min", c.size_min);
  c.size_max = r.get_size("size_max", c.size_max);
  c.max_speed = static_cast<int>(r.get_int("max_speed", c.max_speed));
  c.max_action = static_cast<int>(r.get_int("max_action", c.max_action));
  c.background = static_cast<float>(r.get_double("background", c.background));
  const auto mode = r.get_string("mode", "bounce");
  if (mode == "bounce") {
    c.mode = PhysicsMode::kBounce;
  } else if (mode == "action") {
    c.mode = PhysicsMode::kAction;
  } else {
    throw ConfigError("[data] mode must be 'bounce' or 'action', got '" + mode + "'");
  }
  r.finish();
  c.validate();
  return c;
}

const std::vector<std::array<float, 3>>& sprite_palette() {
  static const std::vector<std::array<float, 3>> palette{
      {0.8f, -0.6f, -0.6f}, {-0.6f, 0.8f, -0.6f}, {-0.6f, -0.6f, 0.8f},
      {0.8f, 0.8f, -0.6f},  {-0.6f, 0.8f, 0.8f},  {0.8f, -0.6f, 0.8f},
  };
  return palette;
}

std::vector<Sprite> sample_sprites(const SpriteWorldConfig& config, Rng& rng) {
  std::vector<Sprite> out(config.sprites);
  const auto& palette = sprite_palette();
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& s = out[i];
    s.size = static_cast<int>(rng.uniform_int(static_cast<std::int64_t>(config.size_min),
                                              static_cast<std::int64_t>(config.size_max)));
    s.x = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(config.width) - s.size));
    s.y = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(config.height) - s.size));
    s.vx = static_cast<int>(rng.uniform_int(-config.max_speed, config.max_speed));
    s.vy = static_cast<int>(rng.uniform_int(-config.max_speed, config.max_speed));
    s.color = palette[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(palette.size()) - 1))];
    if (config.mode == PhysicsMode::kAction && i == 0) s.vx = s.vy = 0;
  }
  return out;
}

std::vector<int> sample_actions(const SpriteWorldConfig& config, Rng& rng) {
  std::vector<int> actions(config.frames * config.action_width());
  for (auto& a : actions) a = static_cast<int>(rng.uniform_int(-config.max_action, config.max_action));
  return actions;
}

namespace {

// Reflects p into [0, hi] and flips v when a wall is crossed.
void bounce_axis(int& p, int& v, int hi) {
  p += v;
  if (p < 0) {
    p = -p;
    v = -v;
  } else if (p > hi) {
    p = 2 * hi - p;
    v = -v;
  }
}

}  // namespace

void step_sprites(const SpriteWorldConfig& config, std::vector<Sprite>& sprites, const int* action) {
  for (std::size_t i = 0; i < sprites.size(); ++i) {
    auto& s = sprites[i];
    const int hx = static_cast<int>(config.width) - s.size, hy = static_cast<int>(config.height) - s.size;
    if (config.mode == PhysicsMode::kAction && i == 0) {
      s.x = std::clamp(s.x + action[0], 0, hx);
      s.y = std::clamp(s.y + action[1], 0, hy);
    } else {
      bounce_axis(s.x, s.vx, hx);
      bounce_axis(s.y, s.vy, hy);
    }
  }
}

void render_sprites(const SpriteWorldConfig& config, const std::vector<Sprite>& sprites, float* frame) {
  const std::size_t h = config.height, w = config.width, plane = h * w;
  std::fill(frame, frame + config.channels * plane, config.background);
  auto draw = [&](const Sprite& s) {
    for (std::size_t c = 0; c < config.channels; ++c) {
      const float value = config.channels == 3 ? s.color[c] : (s.color[0] + s.color[1] + s.color[2]) / 3.0f;
      for (int y = s.y; y < s.y + s.size; ++y) {
        std::fill(frame + c * plane + static_cast<std::size_t>(y) * w + s.x,
                  frame + c * plane + static_cast<std::size_t>(y) * w + s.x + s.size, value);
      }
    }
  };
  // The agent is drawn last so it is never hidden.
  const std::size_t first = config.mode == PhysicsMode::kAction ? 1 : 0;
  for (std::size_t i = first; i < sprites.size(); ++i) draw(sprites[i]);
  if (first == 1) draw(sprites[0]);
}

VideoClip simulate(const SpriteWorldConfig& config, std::vector<Sprite> sprites, const std::vector<int>& actions) {
  config.validate();
  const std::size_t aw = config.action_width();
  if (actions.size() != config.frames * aw) throw DimensionError("action sequence length does not match clip");
  VideoClip clip;
  clip.frames = Tensor({config.frames, config.channels, config.height, config.width});
  const std::size_t fs = clip.frame_size();
  for (std::size_t t = 0; t < config.frames; ++t) {
    if (t > 0) step_sprites(config, sprites, aw ? &actions[(t - 1) * aw] : nullptr);
    render_sprites(config, sprites, clip.frames.data_mut() + t * fs);
  }
  clip.action_width = aw;
  clip.actions.assign(actions.begin(), actions.end());
  clip.config_hash = config.hash();
  return clip;
}

VideoClip generate_clip(const SpriteWorldConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  auto sprites = sample_sprites(config, rng);
  auto actions = sample_actions(config, rng);
  auto clip = simulate(config, std::move(sprites), actions);
  clip.seed = seed;
  return clip;
}

std::uint64_t train_seed(std::uint64_t master, std::size_t index) {
  if (index >= (1ull << 31)) throw ConfigError("too many training clips");
  return (master << 32) + index;
}

std::uint64_t test_seed(std::uint64_t master, std::size_t index) {
  if (index >= (1ull << 31)) throw ConfigError("too many test clips");
  return (master << 32) + (1ull << 31) + index;
}

namespace {

std::string clip_name(const std::string& split, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05zu.bin", i);
  return split + "/" + buf;
}

}  // namespace

std::vector<DatasetRecord> generate_dataset(const SpriteWorldConfig& config, std::size_t n_train, std::size_t n_test,
                                            std::uint64_t master_seed, const std::filesystem::path& dir) {
  config.validate();
  if (master_seed >= (1ull << 32)) throw ConfigError("master seed must fit in 32 bits");
  const std::string hash = config.hash();
  std::vector<DatasetRecord> records(n_train + n_test);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.split = i < n_train ? "train" : "test";
    r.seed = i < n_train ? train_seed(master_seed, i) : test_seed(master_seed, i - n_train);
    r.file = clip_name(r.split, i < n_train ? i : i - n_train);
    r.config_hash = hash;
  }
  std::filesystem::create_directories(dir / "train");
  std::filesystem::create_directories(dir / "test");
  const auto count = static_cast<std::ptrdiff_t>(records.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    auto& r = records[static_cast<std::size_t>(i)];
    const auto bytes = encode_clip(generate_clip(config, r.seed));
    r.sha256 = sha256_hex(bytes);
    write_file_bytes(dir / r.file, bytes);
  }
  std::string manifest;
  nlohmann::json header{{"kind", "dataset"},     {"master_seed", master_seed}, {"n_train", n_train},
                        {"n_test", n_test},      {"config_hash", hash},        {"config", config.to_kv()}};
  manifest += header.dump() + "\n";
  for (const auto& r : records) {
    nlohmann::json line{{"kind", "clip"},       {"split", r.split},   {"file", r.file},
                        {"seed", r.seed},       {"config_hash", hash}, {"sha256", r.sha256}};
    manifest += line.dump() + "\n";
  }
  write_text_file(dir / "manifest.jsonl", manifest);
  write_text_file(dir / "dataset.ini", format_ini({{"data", config.to_kv()}}));
  return records;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.jsonl";
  if (!std::filesystem::exists(manifest_path)) throw IoError("dataset manifest not found: " + manifest_path.string());
  Dataset ds;
  std::istringstream in(read_text_file(manifest_path));
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(manifest_path.string() + ": " + e.what());
    }
    if (j.at("kind") == "dataset") {
      ds.config = SpriteWorldConfig::from_kv(j.at("config").get<KeyValues>());
      have_header = true;
      continue;
    }
    auto clip = read_clip(dir / j.at("file").get<std::string>());
    clip.seed = j.at("seed").get<std::uint64_t>();
    clip.config_hash = j.at("config_hash").get<std::string>();
    (j.at("split") == "train" ? ds.train : ds.test).push_back(std::move(clip));
  }
  if (!have_header) throw IoError(manifest_path.string() + ": missing dataset header");
  return ds;
}

}  // namespace lvp
