#include "lvp/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "lvp/errors.hpp"
#include "lvp/kernels.hpp"
#include "lvp/ops.hpp"

namespace lvp {

void CodecConfig::validate() const {
  if (downsample == 0 || !std::has_single_bit(downsample)) throw ConfigError("downsample factor must be a power of two");
  if (height == 0 || width == 0 || height % downsample || width % downsample) {
    throw ConfigError("frame " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by f = " +
                      std::to_string(downsample));
  }
  if (channels == 0) throw ConfigError("codec needs at least one channel");
  if (codes == 0) throw ConfigError("codebook must not be empty");
  if (code_dim == 0 || base_width == 0 || max_width == 0 || disc_width == 0) throw ConfigError("codec widths must be positive");
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (!(delta > 0.0)) throw ConfigError("delta must be positive");
}

std::size_t CodecConfig::stages() const { return static_cast<std::size_t>(std::countr_zero(downsample)); }

std::vector<std::size_t> CodecConfig::widths() const {
  std::vector<std::size_t> w(stages() + 1);
  for (std::size_t s = 0; s < w.size(); ++s) w[s] = std::min(base_width << s, max_width);
  return w;
}

KeyValues CodecConfig::to_kv() const {
  return {{"height", std::to_string(height)},
          {"width", std::to_string(width)},
          {"channels", std::to_string(channels)},
          {"downsample", std::to_string(downsample)},
          {"codes", std::to_string(codes)},
          {"code_dim", std::to_string(code_dim)},
          {"base_width", std::to_string(base_width)},
          {"max_width", std::to_string(max_width)},
          {"beta", format_double(beta)},
          {"delta", format_double(delta)},
          {"disc_width", std::to_string(disc_width)},
          {"perceptual_seed", std::to_string(perceptual_seed)}};
}

CodecConfig CodecConfig::from_kv(const KeyValues& kv) {
  CodecConfig c;
  KvReader r(kv, "codec");
  c.height = r.get_size("height", c.height);
  c.width = r.get_size("width", c.width);
  c.channels = r.get_size("channels", c.channels);
  c.downsample = r.get_size("downsample", c.downsample);
  c.codes = r.get_size("codes", c.codes);
  c.code_dim = r.get_size("code_dim", c.code_dim);
  c.base_width = r.get_size("base_width", c.base_width);
  c.max_width = r.get_size("max_width", c.max_width);
  c.beta = r.get_double("beta", c.beta);
  c.delta = r.get_double("delta", c.delta);
  c.disc_width = r.get_size("disc_width", c.disc_width);
  c.perceptual_seed = r.get_u64("perceptual_seed", c.perceptual_seed);
  r.finish();
  c.validate();
  return c;
}

Quantized quantize(const Tensor& z_e, const Tensor& codebook) {
  if (!codebook.defined() || codebook.rank() != 2 || codebook.dim(0) == 0) {
    throw ConfigError("quantize: codebook must be a non-empty [K×N_z] tensor");
  }
  if (z_e.rank() != 4 || z_e.dim(1) != codebook.dim(1)) {
    throw DimensionError("quantize: z_e " + shape_string(z_e.shape()) + " does not match codebook " +
                         shape_string(codebook.shape()));
  }
  const std::size_t b = z_e.dim(0), nz = z_e.dim(1), h = z_e.dim(2), w = z_e.dim(3);
  static constexpr std::size_t to_rows[] = {0, 2, 3, 1};
  static constexpr std::size_t to_maps[] = {0, 3, 1, 2};
  Quantized q;
  q.codes.resize(b * h * w);
  {
    NoGradScope no_grad;
    auto rows = ops::permute(z_e, std::span<const std::size_t>(to_rows));
    kernels::nearest_codes(rows.data(), q.codes.size(), codebook.data(), codebook.dim(0), nz, q.codes.data());
  }
  auto selected = ops::reshape(ops::embedding(codebook, q.codes), {b, h, w, nz});
  q.z_q_codebook = ops::permute(selected, std::span<const std::size_t>(to_maps));
  q.z_q = ops::straight_through(z_e, q.z_q_codebook);
  return q;
}

VqLoss vqvae_loss(const Tensor& x, const Tensor& reconstruction, const Tensor& z_e, const Tensor& z_q_codebook,
                  double beta) {
  if (x.shape() != reconstruction.shape()) {
    throw DimensionError("vqvae_loss: frames " + shape_string(x.shape()) + " vs reconstruction " +
                         shape_string(reconstruction.shape()));
  }
  VqLoss l;
  l.recon = ops::mse(x, reconstruction);
  l.codebook_term = ops::mse(ops::stop_gradient(z_e), z_q_codebook);
  l.commit = ops::scale(ops::mse(ops::stop_gradient(z_q_codebook), z_e), static_cast<float>(beta));
  l.total = ops::add(ops::add(l.recon, l.codebook_term), l.commit);
  return l;
}

namespace {

void add_conv(ParameterSet& p, const std::string& name, std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  p.add(name + ".weight", normal_tensor({out, in, k, k}, std::sqrt(2.0 / double(in * k * k)), rng));
  p.add(name + ".bias", Tensor({out}));
}

// Kernel [in×out×4×4] for a stride-2 transpose conv; each output sees 4·in taps.
void add_up(ParameterSet& p, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  p.add(name + ".weight", normal_tensor({in, out, 4, 4}, std::sqrt(2.0 / double(4 * in)), rng));
  p.add(name + ".bias", Tensor({out}));
}

Tensor conv(const ParameterSet& p, const std::string& name, const Tensor& x, std::size_t stride, std::size_t pad) {
  return ops::conv2d(x, p.at(name + ".weight"), p.at(name + ".bias"), stride, pad);
}

}  // namespace

VqCodec::VqCodec(const CodecConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto w = config_.widths();
  const std::size_t top = w.back();
  add_conv(params_, "encoder.stem", w[0], config_.channels, 3, rng);
  for (std::size_t s = 1; s < w.size(); ++s) add_conv(params_, "encoder.down" + std::to_string(s), w[s], w[s - 1], 4, rng);
  add_conv(params_, "encoder.mid", top, top, 3, rng);
  add_conv(params_, "encoder.out", config_.code_dim, top, 1, rng);
  params_.add("codebook", uniform_tensor({config_.codes, config_.code_dim}, 1.0 / double(config_.codes), rng));
  add_conv(params_, "decoder.in", top, config_.code_dim, 3, rng);
  add_conv(params_, "decoder.mid", top, top, 3, rng);
  for (std::size_t s = w.size() - 1; s >= 1; --s) add_up(params_, "decoder.up" + std::to_string(s), w[s], w[s - 1], rng);
  add_conv(params_, "decoder.out", config_.channels, w[0], 3, rng);
}

void VqCodec::check_frames(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(1) != config_.channels || frames.dim(2) != config_.height ||
      frames.dim(3) != config_.width) {
    throw ConfigError("codec expects [B x " + std::to_string(config_.channels) + " x " + std::to_string(config_.height) +
                      " x " + std::to_string(config_.width) + "] frames, got " + shape_string(frames.shape()));
  }
}

Tensor VqCodec::encode(const Tensor& frames) const {
  check_frames(frames);
  auto h = ops::relu(conv(params_, "encoder.stem", frames, 1, 1));
  for (std::size_t s = 1; s <= config_.stages(); ++s) h = ops::relu(conv(params_, "encoder.down" + std::to_string(s), h, 2, 1));
  h = ops::relu(conv(params_, "encoder.mid", h, 1, 1));
  return conv(params_, "encoder.out", h, 1, 0);
}

Tensor VqCodec::decode(const Tensor& z_q) const {
  if (z_q.rank() != 4 || z_q.dim(1) != config_.code_dim || z_q.dim(2) != config_.grid_h() ||
      z_q.dim(3) != config_.grid_w()) {
    throw ConfigError("decoder expects [B x " + std::to_string(config_.code_dim) + " x " +
                      std::to_string(config_.grid_h()) + " x " + std::to_string(config_.grid_w()) + "] codes, got " +
                      shape_string(z_q.shape()));
  }
  auto h = ops::relu(conv(params_, "decoder.in", z_q, 1, 1));
  h = ops::relu(conv(params_, "decoder.mid", h, 1, 1));
  for (std::size_t s = config_.stages(); s >= 1; --s) {
    const std::string name = "decoder.up" + std::to_string(s);
    h = ops::relu(ops::conv_transpose2d(h, params_.at(name + ".weight"), params_.at(name + ".bias"), 2, 1));
  }
  return ops::tanh(conv(params_, "decoder.out", h, 1, 1));
}

Tensor VqCodec::decode_codes(std::span<const int> codes, std::size_t batch) const {
  const std::size_t h = config_.grid_h(), w = config_.grid_w(), nz = config_.code_dim;
  if (codes.size() != batch * h * w) throw DimensionError("decode_codes: wrong code count");
  for (int c : codes) {
    if (c < 0 || static_cast<std::size_t>(c) >= config_.codes) throw VocabularyError("code " + std::to_string(c) + " outside codebook");
  }
  static constexpr std::size_t to_maps[] = {0, 3, 1, 2};
  auto rows = ops::reshape(ops::embedding(codebook(), codes), {batch, h, w, nz});
  return decode(ops::permute(rows, std::span<const std::size_t>(to_maps)));
}

VqCodec::Forward VqCodec::forward(const Tensor& frames) const {
  Forward f;
  f.z_e = encode(frames);
  f.q = quantize(f.z_e, codebook());
  f.reconstruction = decode(f.q.z_q);
  return f;
}

Checkpoint VqCodec::to_checkpoint() const {
  Checkpoint c;
  c.magic = std::string(kCodecMagic);
  c.config = config_.to_kv();
  c.tensors = params_.entries();
  return c;
}

VqCodec VqCodec::from_checkpoint(const Checkpoint& ckpt) {
  VqCodec codec(CodecConfig::from_kv(ckpt.config), 0);
  for (auto& e : codec.params_.entries()) {
    const auto& t = ckpt.tensor(e.name);
    if (t.shape() != e.value.shape()) {
      throw CheckpointMismatch("codec tensor " + e.name + " has shape " + shape_string(t.shape()) + ", expected " +
                               shape_string(e.value.shape()));
    }
    std::copy(t.values().begin(), t.values().end(), e.value.values_mut().begin());
  }
  if (ckpt.tensors.size() != codec.params_.size()) throw CheckpointMismatch("codec checkpoint has unexpected tensors");
  return codec;
}

std::vector<CodeGrid> encode_video(const VideoClip& clip, const VqCodec& codec) {
  const auto& cfg = codec.config();
  if (clip.channels() != cfg.channels || clip.height() != cfg.height || clip.width() != cfg.width) {
    throw ConfigError("clip frames " + std::to_string(clip.channels()) + "x" + std::to_string(clip.height()) + "x" +
                      std::to_string(clip.width()) + " do not match codec " + std::to_string(cfg.channels) + "x" +
                      std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
  NoGradScope no_grad;
  const std::size_t t = clip.length(), hw = cfg.grid_h() * cfg.grid_w();
  std::vector<CodeGrid> grids(t);
  auto q = quantize(codec.encode(clip.frames), codec.codebook());
  for (std::size_t i = 0; i < t; ++i) {
    grids[i].height = cfg.grid_h();
    grids[i].width = cfg.grid_w();
    grids[i].codes.assign(q.codes.begin() + static_cast<std::ptrdiff_t>(i * hw),
                          q.codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * hw));
  }
  return grids;
}

PerceptualBank::PerceptualBank(std::size_t channels, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t widths[] = {channels, 16, 32, 32};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t in = widths[l], out = widths[l + 1];
    const std::size_t k = l == 0 ? 3 : 4;
    weights_.push_back(normal_tensor({out, in, k, k}, std::sqrt(2.0 / double(in * k * k)), rng));
    strides_.push_back(l == 0 ? 1 : 2);
  }
}

Tensor PerceptualBank::distance(const Tensor& x, const Tensor& y) const {
  if (x.shape() != y.shape()) {
    throw DimensionError("perceptual distance: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  Tensor total, fx = x, fy = y;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    fx = ops::relu(ops::conv2d(fx, weights_[l], Tensor(), strides_[l], 1));
    fy = ops::relu(ops::conv2d(fy, weights_[l], Tensor(), strides_[l], 1));
    auto d = ops::mse(ops::channel_normalize(fx), ops::channel_normalize(fy));
    total = total.defined() ? ops::add(total, d) : d;
  }
  return total;
}

Tensor perceptual_loss(const Tensor& x, const Tensor& x_hat, const PerceptualBank& bank) { return bank.distance(x, x_hat); }

Discriminator::Discriminator(std::size_t channels, std::size_t width, std::uint64_t seed) {
  Rng rng(seed);
  add_conv(params_, "disc.conv1", width, channels, 4, rng);
  add_conv(params_, "disc.conv2", 2 * width, width, 4, rng);
  add_conv(params_, "disc.conv3", 4 * width, 2 * width, 4, rng);
  add_conv(params_, "disc.head", 1, 4 * width, 1, rng);
}

Tensor Discriminator::forward(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(2) % 8 || frames.dim(3) % 8) {
    throw DimensionError("discriminator needs [B x C x H x W] frames with H, W divisible by 8, got " +
                         shape_string(frames.shape()));
  }
  auto h = frames;
  for (int i = 1; i <= 3; ++i) h = ops::leaky_relu(conv(params_, "disc.conv" + std::to_string(i), h, 2, 1), 0.2f);
  return conv(params_, "disc.head", h, 1, 0);
}

GanLosses gan_losses_from_logits(const Tensor& real_logits, const Tensor& fake_logits) {
  GanLosses l;
  auto real_term = ops::mean(ops::log_sigmoid(real_logits));
  auto fake_term = ops::mean(ops::log_sigmoid(ops::scale(fake_logits, -1.0f)));
  l.d_loss = ops::scale(ops::add(real_term, fake_term), -1.0f);
  l.g_loss = ops::scale(ops::mean(ops::log_sigmoid(fake_logits)), -1.0f);
  return l;
}

GanLosses gan_losses(const Tensor& x, const Tensor& x_hat, const Discriminator& d) {
  return gan_losses_from_logits(d.forward(x), d.forward(x_hat));
}

double adaptive_weight(std::span<const float> grad_perc, std::span<const float> grad_gan, double delta) {
  if (grad_perc.size() != grad_gan.size()) throw DimensionError("adaptive_weight: gradient sizes differ");
  double np = 0, ng = 0;
  for (float g : grad_perc) np += double(g) * g;
  for (float g : grad_gan) ng += double(g) * g;
  np = std::sqrt(np);
  ng = std::sqrt(ng);
  if (!std::isfinite(np) || !std::isfinite(ng)) throw NumericError("adaptive_weight: non-finite gradient");
  const double lambda = np / (ng + delta);
  return std::clamp(std::isfinite(lambda) ? lambda : kMaxAdaptiveWeight, 0.0, kMaxAdaptiveWeight);
}

std::vector<float> gradient_of(Tape& tape, const Tensor& loss, const Tensor& param, ParameterSet& owner) {
  std::vector<std::vector<float>> saved;
  for (auto& e : owner.entries()) {
    saved.emplace_back(e.value.grad().begin(), e.value.grad().end());
    e.value.zero_grad();
  }
  tape.backward(loss);
  std::vector<float> out(param.numel(), 0.0f);
  if (param.has_grad()) std::copy(param.grad().begin(), param.grad().end(), out.begin());
  for (std::size_t i = 0; i < saved.size(); ++i) {
    auto& t = owner.entries()[i].value;
    if (saved[i].empty()) {
      t.clear_grad();
    } else {
      std::copy(saved[i].begin(), saved[i].end(), t.grad_mut().begin());
    }
  }
  return out;
}

std::size_t reseed_dead_codes(Tensor& codebook, std::span<const std::uint64_t> usage, std::span<const float> encoder_rows,
                              std::size_t n_rows, Rng& rng) {
  const std::size_t k = codebook.dim(0), nz = codebook.dim(1);
  if (usage.size() != k) throw DimensionError("reseed_dead_codes: usage has wrong length");
  if (n_rows == 0 || encoder_rows.size() != n_rows * nz) throw DimensionError("reseed_dead_codes: bad encoder rows");
  std::size_t reseeded = 0;
  auto cb = codebook.values_mut();
  for (std::size_t i = 0; i < k; ++i) {
    if (usage[i] > 0) continue;
    const auto r = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n_rows) - 1));
    std::copy_n(encoder_rows.begin() + static_cast<std::ptrdiff_t>(r * nz), nz, cb.begin() + static_cast<std::ptrdiff_t>(i * nz));
    ++reseeded;
  }
  return reseeded;
}

}  // namespace lvp
