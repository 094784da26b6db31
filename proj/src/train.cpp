#include "lvp/train.hpp"

#include <cmath>
#include <json.hpp>
#include <numbers>

#include "lvp/errors.hpp"
#include "lvp/metrics.hpp"
#include "lvp/ops.hpp"
#include "lvp/tape.hpp"

namespace lvp {

KeyValues CodecTrainConfig::to_kv() const {
  return {{"phase1_steps", std::to_string(phase1_steps)},
          {"phase2_steps", std::to_string(phase2_steps)},
          {"batch", std::to_string(batch)},
          {"lr", format_double(lr)},
          {"disc_lr", format_double(disc_lr)},
          {"pixel_weight", format_double(pixel_weight)},
          {"perceptual_weight", format_double(perceptual_weight)},
          {"gan_weight", format_double(gan_weight)},
          {"dead_code_interval", std::to_string(dead_code_interval)},
          {"clip_grad", format_double(clip_grad)},
          {"seed", std::to_string(seed)},
          {"target_psnr", format_double(target_psnr)},
          {"eval_every", std::to_string(eval_every)}};
}

CodecTrainConfig CodecTrainConfig::from_kv(const KeyValues& kv) {
  CodecTrainConfig c;
  KvReader r(kv, "codec_train");
  c.phase1_steps = r.get_size("phase1_steps", c.phase1_steps);
  c.phase2_steps = r.get_size("phase2_steps", c.phase2_steps);
  c.batch = r.get_size("batch", c.batch);
  c.lr = r.get_double("lr", c.lr);
  c.disc_lr = r.get_double("disc_lr", c.disc_lr);
  c.pixel_weight = r.get_double("pixel_weight", c.pixel_weight);
  c.perceptual_weight = r.get_double("perceptual_weight", c.perceptual_weight);
  c.gan_weight = r.get_double("gan_weight", c.gan_weight);
  c.dead_code_interval = r.get_size("dead_code_interval", c.dead_code_interval);
  c.clip_grad = r.get_double("clip_grad", c.clip_grad);
  c.seed = r.get_u64("seed", c.seed);
  c.target_psnr = r.get_double("target_psnr", c.target_psnr);
  c.eval_every = r.get_size("eval_every", c.eval_every);
  r.finish();
  if (c.eval_every == 0) throw ConfigError("[codec_train] eval_every must be positive");
  if (c.batch == 0) throw ConfigError("[codec_train] batch must be positive");
  if (!(c.lr > 0) || !(c.disc_lr > 0)) throw ConfigError("[codec_train] learning rates must be positive");
  return c;
}

std::string CodecStepLog::json() const {
  nlohmann::ordered_json j{{"step", step},         {"phase", phase},     {"total", total},
                           {"recon", recon},       {"codebook", codebook}, {"commit", commit}};
  if (phase == 2) {
    j["perceptual"] = perceptual;
    j["g_loss"] = g_loss;
    j["d_loss"] = d_loss;
    j["lambda"] = lambda;
  }
  if (reseeded) j["reseeded"] = reseeded;
  return j.dump();
}

namespace {

using Snapshot = std::vector<std::vector<float>>;

Snapshot snapshot(const ParameterSet& p) {
  Snapshot s;
  for (const auto& e : p.entries()) s.emplace_back(e.value.values().begin(), e.value.values().end());
  return s;
}

void restore(ParameterSet& p, const Snapshot& s) {
  for (std::size_t i = 0; i < s.size(); ++i) std::copy(s[i].begin(), s[i].end(), p.entries()[i].value.values_mut().begin());
}

Tensor gather_frames(const Tensor& pool, std::span<const std::size_t> idx) {
  Shape shape = pool.shape();
  const std::size_t fs = pool.numel() / shape[0];
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(pool.values().begin() + static_cast<std::ptrdiff_t>(idx[i] * fs), fs,
                out.values_mut().begin() + static_cast<std::ptrdiff_t>(i * fs));
  }
  return out;
}

bool finite(const Tensor& t) { return std::isfinite(t.item()); }

}  // namespace

Tensor pool_frames(const std::vector<VideoClip>& clips) {
  if (clips.empty()) throw UsageError("no clips to pool");
  std::size_t total = 0;
  for (const auto& c : clips) total += c.length();
  Shape shape = clips[0].frames.shape();
  shape[0] = total;
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& c : clips) {
    if (c.frame_size() != clips[0].frame_size()) throw DimensionError("clips differ in frame size");
    std::copy(c.frames.values().begin(), c.frames.values().end(), out.values_mut().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += c.frames.numel();
  }
  return out;
}

double held_out_psnr(const VqCodec& codec, const Tensor& frames, std::size_t batch) {
  NoGradScope no_grad;
  const std::size_t n = frames.dim(0), fs = frames.numel() / n;
  double total = 0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    auto x = gather_frames(frames, idx);
    auto r = codec.forward(x).reconstruction;
    for (std::size_t i = 0; i < count; ++i) total += psnr(r.values().subspan(i * fs, fs), x.values().subspan(i * fs, fs));
  }
  return total / double(n);
}

CodecTrainResult train_codec(VqCodec& codec, Discriminator& disc, const Tensor& frames, const CodecTrainConfig& cfg,
                             const CodecTrainHooks& hooks) {
  const auto& cc = codec.config();
  if (frames.rank() != 4 || frames.dim(0) == 0) throw UsageError("codec training needs a non-empty frame pool");
  Rng rng(cfg.seed);
  Adam opt(cfg.lr), dopt(cfg.disc_lr);
  PerceptualBank bank(cc.channels, cc.perceptual_seed);
  auto& params = codec.params();
  std::vector<std::uint64_t> usage(cc.codes, 0);
  Snapshot good = snapshot(params);
  CodecTrainResult result;
  const std::size_t n = frames.dim(0);
  std::size_t step = 0;
  for (int phase = 1; phase <= 2; ++phase) {
    const std::size_t phase_steps = phase == 1 ? cfg.phase1_steps : cfg.phase2_steps;
    for (std::size_t s = 0; s < phase_steps; ++s, ++step) {
      std::vector<std::size_t> idx(cfg.batch);
      for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
      auto x = gather_frames(frames, idx);
      CodecStepLog log;
      log.step = step;
      log.phase = phase;
      Tensor recon_detached;
      {
        Tape tape;
        TapeScope scope(tape);
        auto f = codec.forward(x);
        auto vq = vqvae_loss(x, f.reconstruction, f.z_e, f.q.z_q_codebook, cc.beta);
        for (int c : f.q.codes) ++usage[static_cast<std::size_t>(c)];
        log.recon = vq.recon.item();
        log.codebook = vq.codebook_term.item();
        log.commit = vq.commit.item();
        Tensor objective = vq.total;
        if (phase == 2) {
          auto perc = perceptual_loss(x, f.reconstruction, bank);
          auto g = ops::scale(ops::mean(ops::log_sigmoid(disc.forward(f.reconstruction))), -1.0f);
          const auto& gl = codec.last_layer();
          const auto grad_perc = gradient_of(tape, perc, gl, params);
          const auto grad_gan = gradient_of(tape, g, gl, params);
          log.lambda = adaptive_weight(grad_perc, grad_gan, cc.delta);
          log.perceptual = perc.item();
          log.g_loss = g.item();
          auto rec = ops::add(ops::scale(perc, float(cfg.perceptual_weight)), ops::scale(vq.recon, float(cfg.pixel_weight)));
          objective = ops::add(ops::add(ops::add(rec, vq.codebook_term), vq.commit),
                               ops::scale(g, float(log.lambda * cfg.gan_weight)));
        }
        log.total = objective.item();
        if (!finite(objective)) {
          restore(params, good);
          throw NumericError("non-finite codec loss at step " + std::to_string(step));
        }
        params.zero_grad();
        tape.backward(objective);
        recon_detached = f.reconstruction.detach();
        if (cfg.clip_grad > 0) params.clip_grad_norm(cfg.clip_grad);
        opt.step(params);
        if (cfg.dead_code_interval > 0 && (step + 1) % cfg.dead_code_interval == 0) {
          NoGradScope no_grad;
          static constexpr std::size_t to_rows[] = {0, 2, 3, 1};
          auto rows = ops::permute(f.z_e.detach(), std::span<const std::size_t>(to_rows));
          log.reseeded = reseed_dead_codes(params.at("codebook"), usage, rows.values(), rows.numel() / cc.code_dim, rng);
          std::fill(usage.begin(), usage.end(), 0);
        }
      }
      if (phase == 2) {
        Tape tape;
        TapeScope scope(tape);
        auto d = gan_losses_from_logits(disc.forward(x), disc.forward(recon_detached)).d_loss;
        log.d_loss = d.item();
        if (!finite(d)) {
          restore(params, good);
          throw NumericError("non-finite discriminator loss at step " + std::to_string(step));
        }
        disc.params().zero_grad();
        tape.backward(d);
        dopt.step(disc.params());
      }
      good = snapshot(params);
      result.log.push_back(log);
      (phase == 1 ? result.phase1_steps_run : result.phase2_steps_run)++;
      if (hooks.on_step && hooks.on_step(log, codec)) {
        step += 1;
        break;
      }
    }
  }
  return result;
}

KeyValues DynamicsTrainConfig::to_kv() const {
  return {{"steps", std::to_string(steps)},
          {"batch", std::to_string(batch)},
          {"lr", format_double(lr)},
          {"warmup", std::to_string(warmup)},
          {"cosine", cosine ? "true" : "false"},
          {"clip_grad", format_double(clip_grad)},
          {"seed", std::to_string(seed)},
          {"checkpoint_every", std::to_string(checkpoint_every)}};
}

DynamicsTrainConfig DynamicsTrainConfig::from_kv(const KeyValues& kv) {
  DynamicsTrainConfig c;
  KvReader r(kv, "dynamics_train");
  c.steps = r.get_size("steps", c.steps);
  c.batch = r.get_size("batch", c.batch);
  c.lr = r.get_double("lr", c.lr);
  c.warmup = r.get_size("warmup", c.warmup);
  c.cosine = r.get_bool("cosine", c.cosine);
  c.clip_grad = r.get_double("clip_grad", c.clip_grad);
  c.seed = r.get_u64("seed", c.seed);
  c.checkpoint_every = r.get_size("checkpoint_every", c.checkpoint_every);
  r.finish();
  if (c.batch == 0) throw ConfigError("[dynamics_train] batch must be positive");
  if (!(c.lr > 0)) throw ConfigError("[dynamics_train] lr must be positive");
  return c;
}

std::string DynamicsStepLog::json() const {
  return nlohmann::ordered_json{{"step", step}, {"loss", loss}, {"lr", lr}, {"tokens", tokens}, {"targets", targets}}.dump();
}

void check_pairing(const VqCodec& codec, const DynamicsConfig& config) {
  const auto& cc = codec.config();
  if (cc.codes != config.vocab || cc.grid_h() != config.grid_h || cc.grid_w() != config.grid_w) {
    throw ConfigError("codec has K=" + std::to_string(cc.codes) + " and grid " + std::to_string(cc.grid_h()) + "x" +
                      std::to_string(cc.grid_w()) + "; dynamics expects K=" + std::to_string(config.vocab) +
                      " and grid " + std::to_string(config.grid_h) + "x" + std::to_string(config.grid_w));
  }
}

TokenSequence clip_tokens(const VideoClip& clip, const VqCodec& codec, const DynamicsConfig& config) {
  if (clip.length() < config.frames) {
    throw DimensionError("clip has " + std::to_string(clip.length()) + " frames, dynamics trains on " +
                         std::to_string(config.frames));
  }
  const auto part = clip.length() == config.frames ? clip : clip.slice(0, config.frames);
  if (config.action_width > 0 && part.action_width != config.action_width) {
    throw DimensionError("clip actions have width " + std::to_string(part.action_width) + ", model expects " +
                         std::to_string(config.action_width));
  }
  return flatten_codes(encode_video(part, codec), config.cond_frames, part.actions, config.action_width);
}

namespace {

double scheduled_lr(const DynamicsTrainConfig& cfg, std::size_t step) {
  if (cfg.warmup > 0 && step < cfg.warmup) return cfg.lr * double(step + 1) / double(cfg.warmup);
  if (!cfg.cosine || cfg.steps <= cfg.warmup) return cfg.lr;
  const double progress = double(step - cfg.warmup) / double(cfg.steps - cfg.warmup);
  return cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace

DynamicsTrainResult train_dynamics(LatentTransformer& model, const VqCodec& codec, const std::vector<VideoClip>& clips,
                                   const AugmentConfig& augment, const DynamicsTrainConfig& cfg,
                                   const DynamicsTrainHooks& hooks) {
  const auto& mc = model.config();
  check_pairing(codec, mc);
  if (clips.empty()) throw UsageError("dynamics training needs clips");
  DynamicsTrainResult result;
  result.codec_hash = codec.content_hash();
  auto verify_frozen = [&] {
    if (codec.content_hash() != result.codec_hash) throw CheckpointMismatch("codec parameters changed during dynamics training");
  };
  Rng rng(cfg.seed);
  std::vector<TokenSequence> cache;
  if (augment.m == 0) {
    for (const auto& c : clips) cache.push_back(clip_tokens(c, codec, mc));
  }
  auto& params = model.params();
  Adam opt(cfg.lr);
  Snapshot good = snapshot(params);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    std::vector<TokenSequence> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(clips.size()) - 1));
      batch.push_back(augment.m == 0 ? cache[i] : clip_tokens(translate_clip(clips[i], rng, augment), codec, mc));
    }
    DynamicsStepLog log;
    log.step = step;
    log.lr = scheduled_lr(cfg, step);
    for (const auto& s : batch) {
      log.tokens += s.length();
      log.targets += s.target_count();
    }
    {
      Tape tape;
      TapeScope scope(tape);
      auto loss = model.loss(batch);
      log.loss = loss.item();
      if (!finite(loss)) {
        restore(params, good);
        throw NumericError("non-finite dynamics loss at step " + std::to_string(step));
      }
      params.zero_grad();
      tape.backward(loss);
    }
    if (cfg.clip_grad > 0) params.clip_grad_norm(cfg.clip_grad);
    opt.set_lr(log.lr);
    opt.step(params);
    good = snapshot(params);
    result.log.push_back(log);
    const bool stop = hooks.on_step && hooks.on_step(log, model);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps && !stop) {
      verify_frozen();
      if (hooks.on_checkpoint) hooks.on_checkpoint(step + 1, model);
    }
    if (stop) break;
  }
  verify_frozen();
  if (hooks.on_checkpoint) hooks.on_checkpoint(result.log.size(), model);
  return result;
}

double nats_per_token(const LatentTransformer& model, const VqCodec& codec, const std::vector<VideoClip>& clips) {
  NoGradScope no_grad;
  double total = 0;
  std::size_t targets = 0;
  for (const auto& c : clips) {
    auto seq = clip_tokens(c, codec, model.config());
    total += double(model.loss(std::span<const TokenSequence>(&seq, 1)).item()) * double(seq.target_count());
    targets += seq.target_count();
  }
  return targets ? total / double(targets) : 0.0;
}

}  // namespace lvp
