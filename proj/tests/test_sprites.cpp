#include <filesystem>
#include <set>

#include "doctest.h"
#include "lvp/errors.hpp"
#include "lvp/io.hpp"
#include "lvp/sprites.hpp"

using namespace lvp;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("lvp_test_sprites_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("zero-velocity sprites give identical frames") {
  SpriteWorldConfig c;
  Sprite s;
  s.x = 5;
  s.y = 7;
  s.size = 4;
  s.color = sprite_palette()[2];
  auto clip = simulate(c, {s}, {});
  for (std::size_t t = 1; t < clip.length(); ++t) {
    CHECK(std::equal(clip.frames.values().begin(), clip.frames.values().begin() + clip.frame_size(),
                     clip.frames.values().begin() + t * clip.frame_size()));
  }
}

TEST_CASE("agent follows clamped actions") {
  SpriteWorldConfig c;
  c.mode = PhysicsMode::kAction;
  c.sprites = 1;
  c.frames = 40;
  Sprite agent;
  agent.x = 3;
  agent.y = 10;
  agent.size = 4;
  agent.color = sprite_palette()[0];
  std::vector<int> actions;
  for (std::size_t t = 0; t < c.frames; ++t) actions.insert(actions.end(), {1, 0});
  auto sprites = std::vector<Sprite>{agent};
  for (std::size_t t = 1; t < c.frames; ++t) {
    step_sprites(c, sprites, &actions[(t - 1) * 2]);
    CHECK(sprites[0].x == std::min<int>(3 + static_cast<int>(t), 28));
    CHECK(sprites[0].y == 10);
  }
  auto clip = simulate(c, {agent}, actions);
  // Frame 5: agent at x = 8, red channel.
  const float* f5 = clip.frames.data() + 5 * clip.frame_size();
  CHECK(f5[10 * 32 + 8] == sprite_palette()[0][0]);
  CHECK(f5[10 * 32 + 7] == c.background);
}

TEST_CASE("action trajectories integrate exactly") {
  SpriteWorldConfig c;
  c.mode = PhysicsMode::kAction;
  c.max_action = 2;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(seed);
    auto sprites = sample_sprites(c, rng);
    auto actions = sample_actions(c, rng);
    const auto start = sprites[0];
    const int hi = 32 - start.size;
    int x = start.x, y = start.y;
    for (std::size_t t = 1; t < c.frames; ++t) {
      step_sprites(c, sprites, &actions[(t - 1) * 2]);
      x = std::clamp(x + actions[(t - 1) * 2], 0, hi);
      y = std::clamp(y + actions[(t - 1) * 2 + 1], 0, hi);
    }
    CHECK(sprites[0].x == x);
    CHECK(sprites[0].y == y);
  }
}

TEST_CASE("bounce conserves speed and stays on canvas") {
  SpriteWorldConfig c;
  c.max_speed = 5;
  c.frames = 200;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto sprites = sample_sprites(c, rng);
    const auto initial = sprites;
    for (std::size_t t = 0; t < c.frames; ++t) {
      step_sprites(c, sprites, nullptr);
      for (std::size_t i = 0; i < sprites.size(); ++i) {
        CHECK(std::abs(sprites[i].vx) == std::abs(initial[i].vx));
        CHECK(std::abs(sprites[i].vy) == std::abs(initial[i].vy));
        CHECK(sprites[i].x >= 0);
        CHECK(sprites[i].x + sprites[i].size <= 32);
        CHECK(sprites[i].y >= 0);
        CHECK(sprites[i].y + sprites[i].size <= 32);
      }
    }
  }
}

TEST_CASE("clips are deterministic and in range") {
  SpriteWorldConfig c;
  auto a = encode_clip(generate_clip(c, 77));
  auto b = encode_clip(generate_clip(c, 77));
  CHECK(a == b);
  CHECK(a != encode_clip(generate_clip(c, 78)));
  auto clip = generate_clip(c, 77);
  CHECK_NOTHROW(clip.validate());
  CHECK(clip.frames.shape() == Shape{12, 3, 32, 32});
}

TEST_CASE("infeasible configs") {
  SpriteWorldConfig c;
  c.size_max = 40;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(generate_clip(c, 1), ConfigError);
  SpriteWorldConfig d;
  d.cond_frames = 13;
  CHECK_THROWS_AS(d.validate(), ConfigError);
  CHECK_THROWS_AS(SpriteWorldConfig::from_kv({{"mode", "teleport"}}), ConfigError);
  CHECK_THROWS_AS(SpriteWorldConfig::from_kv({{"hieght", "32"}}), ConfigError);
}

TEST_CASE("config round trip") {
  SpriteWorldConfig c;
  c.mode = PhysicsMode::kAction;
  c.height = 16;
  c.width = 16;
  c.size_max = 5;
  auto back = SpriteWorldConfig::from_kv(c.to_kv());
  CHECK(back.to_kv() == c.to_kv());
  CHECK(back.hash() == c.hash());
}

TEST_CASE("clip file round trip") {
  SpriteWorldConfig c;
  c.mode = PhysicsMode::kAction;
  auto clip = generate_clip(c, 5);
  auto bytes = encode_clip(clip);
  auto back = decode_clip(bytes, "mem");
  CHECK(encode_clip(back) == bytes);
  CHECK(back.actions == clip.actions);
  bytes.pop_back();
  CHECK_THROWS_AS(decode_clip(bytes, "mem"), IoError);
}

TEST_CASE("datasets") {
  SpriteWorldConfig c;
  c.height = c.width = 16;
  c.size_min = 2;
  c.size_max = 4;
  auto dir = scratch("a");
  auto records = generate_dataset(c, 64, 8, 3, dir);
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) files += e.path().extension() == ".bin";
  CHECK(files == 72);
  CHECK(std::filesystem::exists(dir / "manifest.jsonl"));
  CHECK(std::filesystem::exists(dir / "dataset.ini"));
  std::set<std::uint64_t> seeds;
  std::uint64_t max_train = 0, min_test = ~0ull;
  for (const auto& r : records) {
    seeds.insert(r.seed);
    if (r.split == "train") max_train = std::max(max_train, r.seed);
    if (r.split == "test") min_test = std::min(min_test, r.seed);
  }
  CHECK(seeds.size() == 72);
  CHECK(max_train < min_test);
  CHECK(train_seed(3, (1u << 31) - 1) < test_seed(3, 0));
  CHECK(test_seed(3, (1u << 31) - 1) < train_seed(4, 0));

  auto dir2 = scratch("b");
  generate_dataset(c, 64, 8, 3, dir2);
  CHECK(sha256_file(dir / "manifest.jsonl") == sha256_file(dir2 / "manifest.jsonl"));
  CHECK(sha256_file(dir / "test/clip_00007.bin") == sha256_file(dir2 / "test/clip_00007.bin"));

  auto ds = load_dataset(dir);
  CHECK(ds.train.size() == 64);
  CHECK(ds.test.size() == 8);
  CHECK(ds.config.hash() == c.hash());
  CHECK(encode_clip(ds.test[2]) == encode_clip(generate_clip(c, test_seed(3, 2))));
  CHECK_THROWS_AS(load_dataset(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}
