#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lvp/augment.hpp"
#include "lvp/codec.hpp"
#include "lvp/config.hpp"
#include "lvp/dynamics.hpp"
#include "lvp/video.hpp"

namespace lvp {

// Two-phase codec schedule: phase 1 optimizes the vector-quantized objective
// with pixel reconstruction; phase 2 swaps in the perceptual distance and adds
// the adaptively weighted adversarial term, alternating with discriminator steps.
struct CodecTrainConfig {
  std::size_t phase1_steps = 2000;
  std::size_t phase2_steps = 0;
  std::size_t batch = 8;
  double lr = 2e-3;
  double disc_lr = 2e-4;
  double pixel_weight = 1.0;       // phase-2 pixel MSE weight
  double perceptual_weight = 1.0;  // phase-2 perceptual weight
  double gan_weight = 0.1;         // multiplies λ·ℒ_GAN
  std::size_t dead_code_interval = 200;  // 0 disables reseeding
  double clip_grad = 0.0;                // 0 disables clipping
  std::uint64_t seed = 1;
  double target_psnr = 0.0;     // held-out PSNR that ends phase 1 early; 0 disables
  std::size_t eval_every = 250;  // steps between held-out evaluations

  KeyValues to_kv() const;
  static CodecTrainConfig from_kv(const KeyValues& kv);
};

struct CodecStepLog {
  std::size_t step = 0;
  int phase = 1;
  double total = 0, recon = 0, codebook = 0, commit = 0;
  double perceptual = 0, g_loss = 0, d_loss = 0, lambda = 0;
  std::size_t reseeded = 0;
  std::string json() const;
};

struct CodecTrainHooks {
  // Called after each step; returning true ends the current phase early.
  std::function<bool(const CodecStepLog&, const VqCodec&)> on_step;
};

struct CodecTrainResult {
  std::vector<CodecStepLog> log;
  std::size_t phase1_steps_run = 0, phase2_steps_run = 0;
};

// `frames` is the pool of training frames [N × N_ch × H × W]. A non-finite
// loss restores the parameters of the last good step and throws NumericError.
CodecTrainResult train_codec(VqCodec& codec, Discriminator& disc, const Tensor& frames, const CodecTrainConfig& cfg,
                             const CodecTrainHooks& hooks = {});

// Stacks every frame of the clips.
Tensor pool_frames(const std::vector<VideoClip>& clips);

double held_out_psnr(const VqCodec& codec, const Tensor& frames, std::size_t batch = 32);

struct DynamicsTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::size_t warmup = 100;
  bool cosine = true;      // decay to 10% of lr
  double clip_grad = 1.0;  // 0 disables clipping
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  KeyValues to_kv() const;
  static DynamicsTrainConfig from_kv(const KeyValues& kv);
};

struct DynamicsStepLog {
  std::size_t step = 0;
  double loss = 0, lr = 0;
  std::size_t tokens = 0, targets = 0;
  std::string json() const;
};

struct DynamicsTrainHooks {
  std::function<bool(const DynamicsStepLog&, const LatentTransformer&)> on_step;
  // Invoked at every checkpoint interval and at the end.
  std::function<void(std::size_t step, const LatentTransformer&)> on_checkpoint;
};

struct DynamicsTrainResult {
  std::vector<DynamicsStepLog> log;
  std::string codec_hash;
};

// Refuses codecs whose K or grid differ from the model.
void check_pairing(const VqCodec& codec, const DynamicsConfig& config);

TokenSequence clip_tokens(const VideoClip& clip, const VqCodec& codec, const DynamicsConfig& config);

// The codec is frozen: its hash is checked at every checkpoint and at the end.
DynamicsTrainResult train_dynamics(LatentTransformer& model, const VqCodec& codec, const std::vector<VideoClip>& clips,
                                   const AugmentConfig& augment, const DynamicsTrainConfig& cfg,
                                   const DynamicsTrainHooks& hooks = {});

// Teacher-forced mean NLL over target tokens.
double nats_per_token(const LatentTransformer& model, const VqCodec& codec, const std::vector<VideoClip>& clips);

}  // namespace lvp
