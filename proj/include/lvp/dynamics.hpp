#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lvp/checkpoint.hpp"
#include "lvp/codec.hpp"
#include "lvp/config.hpp"
#include "lvp/nn.hpp"
#include "lvp/rng.hpp"
#include "lvp/video.hpp"

namespace lvp {

struct DynamicsConfig {
  std::size_t layers = 12;
  std::size_t heads = 4;
  std::size_t width = 64;         // model width d
  std::size_t vocab = 256;        // K
  std::size_t grid_h = 8, grid_w = 8;
  std::size_t frames = 12;        // learned frame positions (training T)
  std::size_t cond_frames = 2;    // c
  std::size_t context = 2048;     // token capacity
  std::size_t action_width = 0;   // 0 = unconditioned

  void validate() const;
  std::size_t tokens_per_frame() const { return grid_h * grid_w; }
  KeyValues to_kv() const;
  static DynamicsConfig from_kv(const KeyValues& kv);
};

// Codes of a clip in raster order, frame-major.
struct TokenSequence {
  std::vector<int> codes;
  std::vector<int> frame_index, spatial_index;
  std::size_t frames = 0, grid_h = 0, grid_w = 0;
  std::size_t cond_frames = 0;
  std::vector<float> actions;  // frames × action_width
  std::size_t action_width = 0;

  std::size_t length() const { return codes.size(); }
  std::size_t tokens_per_frame() const { return grid_h * grid_w; }
  std::size_t first_target() const { return cond_frames * tokens_per_frame(); }
  // N_d = (T − c)·H′·W′
  std::size_t target_count() const { return length() - first_target(); }
};

TokenSequence flatten_codes(const std::vector<CodeGrid>& grids, std::size_t cond_frames,
                            std::span<const float> actions = {}, std::size_t action_width = 0);

// Pre-norm causal transformer over code tokens.
class LatentTransformer {
 public:
  LatentTransformer(const DynamicsConfig& config, std::uint64_t seed);

  const DynamicsConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // [L×K] next-code logits; row i depends only on tokens 0..i.
  Tensor forward_logits(const TokenSequence& seq) const;
  // Batched: sequences must share length; rows are batch-major.
  Tensor forward_logits(std::span<const TokenSequence> batch) const;
  // Mean NLL over the target positions of every sequence. Only target rows
  // are unembedded; equals nll_loss(forward_logits(batch), batch).
  Tensor loss(std::span<const TokenSequence> batch) const;

  std::string content_hash() const { return params_.content_hash(); }
  Checkpoint to_checkpoint(const std::string& codec_hash) const;
  static LatentTransformer from_checkpoint(const Checkpoint& ckpt);

 private:
  friend class Rollout;
  void check(const TokenSequence& seq) const;
  Tensor embed(std::span<const TokenSequence> batch) const;
  Tensor trunk(std::span<const TokenSequence> batch) const;  // final-normed hidden [B·L × d]
  Tensor unembed(const Tensor& hidden) const;
  DynamicsConfig config_;
  ParameterSet params_;
};

// Rows p − 1 predict code p for every target position p ≥ c·H′·W′.
std::vector<int> target_rows(const TokenSequence& seq, std::size_t row_offset = 0);
Tensor nll_loss(const Tensor& logits, const TokenSequence& seq);
Tensor nll_loss(const Tensor& logits, std::span<const TokenSequence> batch);

struct SamplerSettings {
  std::size_t k = 10;
  double temperature = 1.0;
};

// Samples from the k largest logits renormalized at the given temperature;
// equal logits admit the lower index first. Consumes one uniform draw.
int sample_topk(std::span<const float> logits, std::size_t k, double temperature, Rng& rng);

// Incremental decoding with a per-layer cache of q/k/v rows. Logits match
// forward_logits row for row.
class Rollout {
 public:
  Rollout(const LatentTransformer& model, std::size_t capacity);
  // Appends a token and returns the logits predicting the next one.
  std::vector<float> push(int code, std::size_t frame, std::size_t spatial, std::span<const float> action);
  std::size_t length() const { return length_; }

 private:
  const LatentTransformer& model_;
  std::size_t capacity_, length_ = 0;
  std::vector<std::vector<float>> qkv_;  // per layer [capacity × 3d]
};

// Autoregressive prediction of future frames from conditioning frames. The
// rng stream is consumed token by token, so extending an existing session
// matches one longer rollout.
class PredictionSession {
 public:
  PredictionSession(const LatentTransformer& model, const VqCodec& codec, const VideoClip& conditioning,
                    std::vector<float> actions, SamplerSettings sampler, std::uint64_t seed);

  // Samples `frames` further frames; returns them decoded.
  VideoClip extend(std::size_t frames);
  const std::vector<CodeGrid>& grids() const { return grids_; }

 private:
  const LatentTransformer& model_;
  const VqCodec& codec_;
  std::vector<float> actions_;
  SamplerSettings sampler_;
  Rng rng_;
  Rollout rollout_;
  std::vector<CodeGrid> grids_;
  std::vector<float> next_logits_;
  std::size_t cond_frames_;
};

// Token budget check: (c + future)·H′·W′ must fit the context.
void check_rollout_budget(const DynamicsConfig& config, std::size_t cond_frames, std::size_t future_steps);

VideoClip predict_video(const VideoClip& conditioning, std::span<const float> actions, std::size_t future_steps,
                        const VqCodec& codec, const LatentTransformer& model, SamplerSettings sampler,
                        std::uint64_t seed);

// Pixel-space autoregressive counting model over a tiny clip with integer
// intensities; orders pixel-channels raster-wise with channels innermost.
struct TinyClip {
  std::size_t frames = 0, height = 0, width = 0, channels = 1, levels = 4;
  std::vector<int> values;  // frames·height·width·channels entries in [0, levels)
};

struct PixelAccounting {
  std::size_t pixels = 0;       // N_p = T·H·W
  std::size_t cond_pixels = 0;  // N_c = c·H·W
  std::size_t predicted = 0;    // predicted pixel-channel positions
};

enum class PixelModel { kUniform, kLaplaceCount };

PixelAccounting pixel_accounting(const TinyClip& clip, std::size_t cond_frames);
// log p(x_i | x_<i) for one position.
double pixel_conditional(const TinyClip& clip, std::size_t position, PixelModel model);
// Σ of conditional log-probabilities over predicted positions.
double pixel_factorization_oracle(const TinyClip& clip, std::size_t cond_frames, PixelModel model);
// log of the joint of the predicted positions by summing the model over all
// completions (ratio of marginals), independent of the chain-rule sum.
double pixel_joint_by_enumeration(const TinyClip& clip, std::size_t cond_frames, PixelModel model);

}  // namespace lvp
