#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvp/checkpoint.hpp"
#include "lvp/config.hpp"
#include "lvp/nn.hpp"
#include "lvp/tape.hpp"
#include "lvp/video.hpp"

namespace lvp {

struct CodecConfig {
  std::size_t height = 32, width = 32, channels = 3;
  std::size_t downsample = 4;    // f; H′ = H / f
  std::size_t codes = 256;       // K
  std::size_t code_dim = 16;     // N_z
  std::size_t base_width = 16;   // stage s has min(base·2^s, max_width) channels
  std::size_t max_width = 64;
  double beta = 0.25;
  double delta = 1e-6;
  std::size_t disc_width = 16;
  std::uint64_t perceptual_seed = 7;

  void validate() const;
  std::size_t stages() const;  // log2(f)
  std::vector<std::size_t> widths() const;  // stages() + 1 entries
  std::size_t grid_h() const { return height / downsample; }
  std::size_t grid_w() const { return width / downsample; }
  KeyValues to_kv() const;
  static CodecConfig from_kv(const KeyValues& kv);
};

// H′×W′ code indices in raster order.
struct CodeGrid {
  std::size_t height = 0, width = 0;
  std::vector<int> codes;
  bool operator==(const CodeGrid&) const = default;
};

struct Quantized {
  Tensor z_q;           // straight-through output: values of z_q_codebook, gradient to z_e
  Tensor z_q_codebook;  // selected codebook rows laid out like z_e; gradient to the codebook
  std::vector<int> codes;  // B·H′·W′ indices, batch-major then raster
};

// Nearest codebook row for each z_e vector of [B×N_z×H′×W′]; lowest index on ties.
Quantized quantize(const Tensor& z_e, const Tensor& codebook);

struct VqLoss {
  Tensor total, recon, codebook_term, commit;
};

// recon = mean‖x − x̂‖², codebook_term = mean‖sg[z_e] − z_q‖², commit = β·mean‖sg[z_q] − z_e‖².
VqLoss vqvae_loss(const Tensor& x, const Tensor& reconstruction, const Tensor& z_e, const Tensor& z_q_codebook,
                  double beta);

class VqCodec {
 public:
  VqCodec(const CodecConfig& config, std::uint64_t seed);

  const CodecConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Tensor& codebook() const { return params_.at("codebook"); }
  const Tensor& last_layer() const { return params_.at("decoder.out.weight"); }

  Tensor encode(const Tensor& frames) const;  // [B×N_ch×H×W] → [B×N_z×H′×W′]
  Tensor decode(const Tensor& z_q) const;     // [B×N_z×H′×W′] → [B×N_ch×H×W] in [−1, 1]
  Tensor decode_codes(std::span<const int> codes, std::size_t batch) const;

  struct Forward {
    Tensor z_e;
    Quantized q;
    Tensor reconstruction;
  };
  Forward forward(const Tensor& frames) const;

  std::string content_hash() const { return params_.content_hash(); }
  Checkpoint to_checkpoint() const;
  static VqCodec from_checkpoint(const Checkpoint& ckpt);

 private:
  void check_frames(const Tensor& frames) const;
  CodecConfig config_;
  ParameterSet params_;
};

// Per-frame quantize∘encode with no gradient recording.
std::vector<CodeGrid> encode_video(const VideoClip& clip, const VqCodec& codec);

// Fixed, seed-determined random conv features; distance is the mean squared
// difference of channel-normalized activations summed over layers.
class PerceptualBank {
 public:
  PerceptualBank(std::size_t channels, std::uint64_t seed);
  Tensor distance(const Tensor& x, const Tensor& y) const;
  std::size_t layers() const { return weights_.size(); }

 private:
  std::vector<Tensor> weights_;
  std::vector<std::size_t> strides_;
};

Tensor perceptual_loss(const Tensor& x, const Tensor& x_hat, const PerceptualBank& bank);

// Patch discriminator: three stride-2 4×4 convs with leaky ReLU, then a 1×1 head.
class Discriminator {
 public:
  Discriminator(std::size_t channels, std::size_t width, std::uint64_t seed);
  Tensor forward(const Tensor& frames) const;  // [B×1×H/8×W/8] logits
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

 private:
  ParameterSet params_;
};

struct GanLosses {
  Tensor d_loss, g_loss;
};

// d_loss = −mean[log σ(real) + log σ(−fake)], g_loss = −mean log σ(fake).
GanLosses gan_losses_from_logits(const Tensor& real_logits, const Tensor& fake_logits);
GanLosses gan_losses(const Tensor& x, const Tensor& x_hat, const Discriminator& d);

inline constexpr double kMaxAdaptiveWeight = 1e4;

// λ = ‖g_perc‖ / (‖g_gan‖ + δ), clamped to [0, 1e4].
double adaptive_weight(std::span<const float> grad_perc, std::span<const float> grad_gan, double delta);

// Gradient of `loss` with respect to `param`, leaving all leaf gradients as
// they were. `loss` must have been recorded on `tape`.
std::vector<float> gradient_of(Tape& tape, const Tensor& loss, const Tensor& param, ParameterSet& owner);

// Codes with zero usage are overwritten with randomly chosen encoder vectors.
// Returns the number of reseeded codes.
std::size_t reseed_dead_codes(Tensor& codebook, std::span<const std::uint64_t> usage, std::span<const float> encoder_rows,
                              std::size_t n_rows, Rng& rng);

}  // namespace lvp
