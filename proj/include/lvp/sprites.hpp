#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lvp/config.hpp"
#include "lvp/rng.hpp"
#include "lvp/video.hpp"

namespace lvp {

enum class PhysicsMode { kBounce, kAction };

struct SpriteWorldConfig {
  std::size_t height = 32, width = 32, channels = 3;
  std::size_t frames = 12;      // T
  std::size_t cond_frames = 2;  // c
  std::size_t sprites = 2;
  std::size_t size_min = 4, size_max = 7;
  int max_speed = 2;   // per-axis velocity bound in bounce mode
  int max_action = 1;  // per-axis action bound in action mode
  float background = -0.8f;
  PhysicsMode mode = PhysicsMode::kBounce;

  void validate() const;
  std::size_t action_width() const { return mode == PhysicsMode::kAction ? 2 : 0; }
  KeyValues to_kv() const;
  static SpriteWorldConfig from_kv(const KeyValues& kv);
  std::string hash() const { return kv_hash(to_kv()); }
};

struct Sprite {
  int x = 0, y = 0;    // top-left corner
  int vx = 0, vy = 0;
  int size = 1;
  std::array<float, 3> color{};
};

const std::vector<std::array<float, 3>>& sprite_palette();

// Initial sprites and (in action mode) the per-frame actions drawn from rng.
std::vector<Sprite> sample_sprites(const SpriteWorldConfig& config, Rng& rng);
std::vector<int> sample_actions(const SpriteWorldConfig& config, Rng& rng);

// Advances one frame. In action mode sprite 0 is the agent and moves by the
// clamped action; every other sprite bounces.
void step_sprites(const SpriteWorldConfig& config, std::vector<Sprite>& sprites, const int* action);
void render_sprites(const SpriteWorldConfig& config, const std::vector<Sprite>& sprites, float* frame);

// Frame t is rendered from the state after t steps; action t drives the
// transition from frame t to frame t + 1.
VideoClip simulate(const SpriteWorldConfig& config, std::vector<Sprite> sprites, const std::vector<int>& actions);
VideoClip generate_clip(const SpriteWorldConfig& config, std::uint64_t seed);

// Train seeds occupy [master·2³², master·2³² + 2³¹), test seeds the upper half.
std::uint64_t train_seed(std::uint64_t master, std::size_t index);
std::uint64_t test_seed(std::uint64_t master, std::size_t index);

struct DatasetRecord {
  std::string split, file, config_hash, sha256;
  std::uint64_t seed = 0;
};

// Writes <dir>/{train,test}/clip_NNNNN.bin, <dir>/manifest.jsonl and a
// resolved-config snapshot <dir>/dataset.ini.
std::vector<DatasetRecord> generate_dataset(const SpriteWorldConfig& config, std::size_t n_train, std::size_t n_test,
                                            std::uint64_t master_seed, const std::filesystem::path& dir);

struct Dataset {
  SpriteWorldConfig config;
  std::vector<VideoClip> train, test;
};

Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace lvp
