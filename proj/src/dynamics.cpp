#include "lvp/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lvp/errors.hpp"
#include "lvp/kernels.hpp"
#include "lvp/ops.hpp"
#include "lvp/tape.hpp"

namespace lvp {

void DynamicsConfig::validate() const {
  if (heads == 0 || width == 0 || width % heads) throw ConfigError("model width must be a positive multiple of heads");
  if (vocab == 0) throw ConfigError("vocabulary must be non-empty");
  if (grid_h == 0 || grid_w == 0) throw ConfigError("code grid must be non-empty");
  if (frames == 0) throw ConfigError("dynamics needs at least one frame position");
  if (cond_frames == 0 || cond_frames >= frames) {
    throw ConfigError("conditioning frames must lie in [1, " + std::to_string(frames) + ")");
  }
  if (context < frames * tokens_per_frame()) {
    throw ConfigError("context " + std::to_string(context) + " is shorter than a clip of " +
                      std::to_string(frames * tokens_per_frame()) + " tokens");
  }
}

KeyValues DynamicsConfig::to_kv() const {
  return {{"layers", std::to_string(layers)},
          {"heads", std::to_string(heads)},
          {"width", std::to_string(width)},
          {"vocab", std::to_string(vocab)},
          {"grid_h", std::to_string(grid_h)},
          {"grid_w", std::to_string(grid_w)},
          {"frames", std::to_string(frames)},
          {"cond_frames", std::to_string(cond_frames)},
          {"context", std::to_string(context)},
          {"action_width", std::to_string(action_width)}};
}

DynamicsConfig DynamicsConfig::from_kv(const KeyValues& kv) {
  DynamicsConfig c;
  KvReader r(kv, "dynamics");
  c.layers = r.get_size("layers", c.layers);
  c.heads = r.get_size("heads", c.heads);
  c.width = r.get_size("width", c.width);
  c.vocab = r.get_size("vocab", c.vocab);
  c.grid_h = r.get_size("grid_h", c.grid_h);
  c.grid_w = r.get_size("grid_w", c.grid_w);
  c.frames = r.get_size("frames", c.frames);
  c.cond_frames = r.get_size("cond_frames", c.cond_frames);
  c.context = r.get_size("context", c.context);
  c.action_width = r.get_size("action_width", c.action_width);
  r.finish();
  c.validate();
  return c;
}

TokenSequence flatten_codes(const std::vector<CodeGrid>& grids, std::size_t cond_frames, std::span<const float> actions,
                            std::size_t action_width) {
  if (grids.empty()) throw DimensionError("flatten_codes: no frames");
  if (cond_frames == 0 || cond_frames > grids.size()) {
    throw ConfigError("flatten_codes: conditioning frames must lie in [1, " + std::to_string(grids.size()) + "]");
  }
  TokenSequence seq;
  seq.frames = grids.size();
  seq.grid_h = grids[0].height;
  seq.grid_w = grids[0].width;
  seq.cond_frames = cond_frames;
  const std::size_t hw = seq.tokens_per_frame();
  for (std::size_t t = 0; t < grids.size(); ++t) {
    const auto& g = grids[t];
    if (g.height != seq.grid_h || g.width != seq.grid_w || g.codes.size() != hw) {
      throw DimensionError("flatten_codes: frame " + std::to_string(t) + " grid " + std::to_string(g.height) + "x" +
                           std::to_string(g.width) + " differs from " + std::to_string(seq.grid_h) + "x" +
                           std::to_string(seq.grid_w));
    }
    for (std::size_t i = 0; i < hw; ++i) {
      seq.codes.push_back(g.codes[i]);
      seq.frame_index.push_back(static_cast<int>(t));
      seq.spatial_index.push_back(static_cast<int>(i));
    }
  }
  if (action_width > 0) {
    if (actions.size() < grids.size() * action_width) throw DimensionError("flatten_codes: too few actions");
    seq.actions.assign(actions.begin(), actions.begin() + static_cast<std::ptrdiff_t>(grids.size() * action_width));
    seq.action_width = action_width;
  }
  return seq;
}

LatentTransformer::LatentTransformer(const DynamicsConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = config_.width;
  const double std_init = 0.02, proj_std = 0.02 / std::sqrt(2.0 * double(std::max<std::size_t>(config_.layers, 1)));
  params_.add("tok_emb", normal_tensor({config_.vocab, d}, std_init, rng));
  params_.add("frame_emb", normal_tensor({config_.frames, d}, std_init, rng));
  params_.add("spatial_emb", normal_tensor({config_.tokens_per_frame(), d}, std_init, rng));
  if (config_.action_width > 0) params_.add("action_proj", normal_tensor({config_.action_width, d}, std_init, rng));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    params_.add(p + "ln1.gain", Tensor::full({d}, 1.0f));
    params_.add(p + "ln1.bias", Tensor({d}));
    params_.add(p + "attn.qkv.weight", normal_tensor({d, 3 * d}, std_init, rng));
    params_.add(p + "attn.qkv.bias", Tensor({3 * d}));
    params_.add(p + "attn.proj.weight", normal_tensor({d, d}, proj_std, rng));
    params_.add(p + "attn.proj.bias", Tensor({d}));
    params_.add(p + "ln2.gain", Tensor::full({d}, 1.0f));
    params_.add(p + "ln2.bias", Tensor({d}));
    params_.add(p + "mlp.fc.weight", normal_tensor({d, 4 * d}, std_init, rng));
    params_.add(p + "mlp.fc.bias", Tensor({4 * d}));
    params_.add(p + "mlp.out.weight", normal_tensor({4 * d, d}, proj_std, rng));
    params_.add(p + "mlp.out.bias", Tensor({d}));
  }
  params_.add("ln_f.gain", Tensor::full({d}, 1.0f));
  params_.add("ln_f.bias", Tensor({d}));
  params_.add("unembed.weight", normal_tensor({d, config_.vocab}, std_init, rng));
  params_.add("unembed.bias", Tensor({config_.vocab}));
}

void LatentTransformer::check(const TokenSequence& seq) const {
  if (seq.length() > config_.context) {
    throw CapacityError("sequence of " + std::to_string(seq.length()) + " tokens exceeds context " +
                        std::to_string(config_.context));
  }
  if (seq.grid_h != config_.grid_h || seq.grid_w != config_.grid_w) {
    throw DimensionError("sequence grid " + std::to_string(seq.grid_h) + "x" + std::to_string(seq.grid_w) +
                         " does not match model grid " + std::to_string(config_.grid_h) + "x" +
                         std::to_string(config_.grid_w));
  }
  for (int c : seq.codes) {
    if (c < 0 || static_cast<std::size_t>(c) >= config_.vocab) {
      throw VocabularyError("code " + std::to_string(c) + " outside vocabulary of " + std::to_string(config_.vocab));
    }
  }
  if (config_.action_width > 0 && seq.actions.size() < seq.frames * config_.action_width) {
    throw DimensionError("action-conditioned model needs " + std::to_string(config_.action_width) +
                         " action values per frame");
  }
}

Tensor LatentTransformer::embed(std::span<const TokenSequence> batch) const {
  std::vector<int> codes, frames, spatial;
  std::vector<float> actions;
  const std::size_t a = config_.action_width;
  for (const auto& seq : batch) {
    check(seq);
    codes.insert(codes.end(), seq.codes.begin(), seq.codes.end());
    spatial.insert(spatial.end(), seq.spatial_index.begin(), seq.spatial_index.end());
    for (int f : seq.frame_index) {
      // Frames past the training horizon reuse the last learned embedding.
      frames.push_back(std::min(f, static_cast<int>(config_.frames) - 1));
      if (a > 0) {
        actions.insert(actions.end(), seq.actions.begin() + static_cast<std::ptrdiff_t>(f * a),
                       seq.actions.begin() + static_cast<std::ptrdiff_t>((f + 1) * a));
      }
    }
  }
  auto x = ops::add(ops::embedding(params_.at("tok_emb"), codes), ops::embedding(params_.at("frame_emb"), frames));
  x = ops::add(x, ops::embedding(params_.at("spatial_emb"), spatial));
  if (a > 0) x = ops::add(x, ops::matmul(Tensor({codes.size(), a}, std::move(actions)), params_.at("action_proj")));
  return x;
}

Tensor LatentTransformer::trunk(std::span<const TokenSequence> batch) const {
  if (batch.empty()) throw UsageError("empty batch");
  const std::size_t len = batch[0].length();
  for (const auto& s : batch) {
    if (s.length() != len) throw DimensionError("batched sequences must share a length");
  }
  auto x = embed(batch);
  const auto& p = params_;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    auto h = ops::layer_norm(x, p.at(b + "ln1.gain"), p.at(b + "ln1.bias"));
    auto qkv = ops::add_bias(ops::matmul(h, p.at(b + "attn.qkv.weight")), p.at(b + "attn.qkv.bias"));
    auto att = ops::causal_attention(qkv, batch.size(), len, config_.heads);
    x = ops::add(x, ops::add_bias(ops::matmul(att, p.at(b + "attn.proj.weight")), p.at(b + "attn.proj.bias")));
    auto h2 = ops::layer_norm(x, p.at(b + "ln2.gain"), p.at(b + "ln2.bias"));
    auto m = ops::gelu(ops::add_bias(ops::matmul(h2, p.at(b + "mlp.fc.weight")), p.at(b + "mlp.fc.bias")));
    x = ops::add(x, ops::add_bias(ops::matmul(m, p.at(b + "mlp.out.weight")), p.at(b + "mlp.out.bias")));
  }
  return ops::layer_norm(x, p.at("ln_f.gain"), p.at("ln_f.bias"));
}

Tensor LatentTransformer::unembed(const Tensor& hidden) const {
  return ops::add_bias(ops::matmul(hidden, params_.at("unembed.weight")), params_.at("unembed.bias"));
}

Tensor LatentTransformer::forward_logits(const TokenSequence& seq) const {
  return forward_logits(std::span<const TokenSequence>(&seq, 1));
}

Tensor LatentTransformer::forward_logits(std::span<const TokenSequence> batch) const { return unembed(trunk(batch)); }

std::vector<int> target_rows(const TokenSequence& seq, std::size_t row_offset) {
  if (seq.first_target() == 0) throw ConfigError("sequence needs at least one conditioning frame");
  std::vector<int> rows;
  for (std::size_t p = seq.first_target(); p < seq.length(); ++p) rows.push_back(static_cast<int>(row_offset + p - 1));
  return rows;
}

namespace {

std::vector<int> batch_targets(std::span<const TokenSequence> batch, std::vector<int>& rows) {
  std::vector<int> targets;
  std::size_t offset = 0;
  for (const auto& seq : batch) {
    auto r = target_rows(seq, offset);
    rows.insert(rows.end(), r.begin(), r.end());
    targets.insert(targets.end(), seq.codes.begin() + static_cast<std::ptrdiff_t>(seq.first_target()), seq.codes.end());
    offset += seq.length();
  }
  return targets;
}

}  // namespace

Tensor LatentTransformer::loss(std::span<const TokenSequence> batch) const {
  auto hidden = trunk(batch);
  std::vector<int> rows;
  auto targets = batch_targets(batch, rows);
  return ops::cross_entropy(unembed(ops::gather_rows(hidden, rows)), targets);
}

Tensor nll_loss(const Tensor& logits, const TokenSequence& seq) {
  return nll_loss(logits, std::span<const TokenSequence>(&seq, 1));
}

Tensor nll_loss(const Tensor& logits, std::span<const TokenSequence> batch) {
  std::vector<int> rows;
  auto targets = batch_targets(batch, rows);
  return ops::cross_entropy(ops::gather_rows(logits, rows), targets);
}

Checkpoint LatentTransformer::to_checkpoint(const std::string& codec_hash) const {
  Checkpoint c;
  c.magic = std::string(kDynamicsMagic);
  c.config = config_.to_kv();
  c.config["codec_hash"] = codec_hash;
  c.tensors = params_.entries();
  return c;
}

LatentTransformer LatentTransformer::from_checkpoint(const Checkpoint& ckpt) {
  auto kv = ckpt.config;
  kv.erase("codec_hash");
  LatentTransformer model(DynamicsConfig::from_kv(kv), 0);
  for (auto& e : model.params_.entries()) {
    const auto& t = ckpt.tensor(e.name);
    if (t.shape() != e.value.shape()) {
      throw CheckpointMismatch("dynamics tensor " + e.name + " has shape " + shape_string(t.shape()) + ", expected " +
                               shape_string(e.value.shape()));
    }
    std::copy(t.values().begin(), t.values().end(), e.value.values_mut().begin());
  }
  if (ckpt.tensors.size() != model.params_.size()) throw CheckpointMismatch("dynamics checkpoint has unexpected tensors");
  return model;
}

int sample_topk(std::span<const float> logits, std::size_t k, double temperature, Rng& rng) {
  if (logits.empty()) throw UsageError("sample_topk: empty logits");
  if (k < 1 || k > logits.size()) {
    throw UsageError("sample_topk: k = " + std::to_string(k) + " outside [1, " + std::to_string(logits.size()) + "]");
  }
  if (!(temperature > 0.0)) throw UsageError("sample_topk: temperature must be positive");
  std::vector<int> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logits[a] > logits[b]; });
  const double top = logits[order[0]];
  if (!std::isfinite(top)) throw NumericError("sample_topk: non-finite logits");
  std::vector<double> weights(k);
  double total = 0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp((double(logits[order[i]]) - top) / temperature);
    total += weights[i];
  }
  const double u = rng.uniform() * total;
  double acc = 0;
  for (std::size_t i = 0; i < k; ++i) {
    acc += weights[i];
    if (u < acc) return order[i];
  }
  // u landed on the rounding slack past the last positive weight.
  for (std::size_t i = k; i-- > 0;) {
    if (weights[i] > 0) return order[i];
  }
  return order[0];
}

Rollout::Rollout(const LatentTransformer& model, std::size_t capacity) : model_(model), capacity_(capacity) {
  if (capacity > model.config().context) {
    throw CapacityError("rollout of " + std::to_string(capacity) + " tokens exceeds context " +
                        std::to_string(model.config().context));
  }
  qkv_.assign(model.config().layers, std::vector<float>(capacity * 3 * model.config().width));
}

std::vector<float> Rollout::push(int code, std::size_t frame, std::size_t spatial, std::span<const float> action) {
  const auto& cfg = model_.config();
  const auto& p = model_.params();
  if (length_ >= capacity_) throw CapacityError("rollout cache full at " + std::to_string(capacity_) + " tokens");
  if (code < 0 || static_cast<std::size_t>(code) >= cfg.vocab) throw VocabularyError("code " + std::to_string(code) + " outside vocabulary");
  if (spatial >= cfg.tokens_per_frame()) throw IndexError("spatial index out of range");
  NoGradScope no_grad;
  const std::size_t d = cfg.width;
  const int code_row[] = {code};
  const int frame_row[] = {static_cast<int>(std::min(frame, cfg.frames - 1))};
  const int spatial_row[] = {static_cast<int>(spatial)};
  auto x = ops::add(ops::embedding(p.at("tok_emb"), code_row), ops::embedding(p.at("frame_emb"), frame_row));
  x = ops::add(x, ops::embedding(p.at("spatial_emb"), spatial_row));
  if (cfg.action_width > 0) {
    if (action.size() != cfg.action_width) throw DimensionError("rollout action has wrong width");
    x = ops::add(x, ops::matmul(Tensor({1, cfg.action_width}, std::vector<float>(action.begin(), action.end())),
                                p.at("action_proj")));
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string b = "block" + std::to_string(l) + ".";
    auto h = ops::layer_norm(x, p.at(b + "ln1.gain"), p.at(b + "ln1.bias"));
    auto qkv = ops::add_bias(ops::matmul(h, p.at(b + "attn.qkv.weight")), p.at(b + "attn.qkv.bias"));
    float* cache = qkv_[l].data();
    std::copy(qkv.values().begin(), qkv.values().end(), cache + length_ * 3 * d);
    Tensor att({1, d});
    kernels::causal_attention_row(static_cast<const float*>(cache), length_, d, cfg.heads, att.data_mut());
    x = ops::add(x, ops::add_bias(ops::matmul(att, p.at(b + "attn.proj.weight")), p.at(b + "attn.proj.bias")));
    auto h2 = ops::layer_norm(x, p.at(b + "ln2.gain"), p.at(b + "ln2.bias"));
    auto m = ops::gelu(ops::add_bias(ops::matmul(h2, p.at(b + "mlp.fc.weight")), p.at(b + "mlp.fc.bias")));
    x = ops::add(x, ops::add_bias(ops::matmul(m, p.at(b + "mlp.out.weight")), p.at(b + "mlp.out.bias")));
  }
  ++length_;
  auto logits = model_.unembed(ops::layer_norm(x, p.at("ln_f.gain"), p.at("ln_f.bias")));
  return std::vector<float>(logits.values().begin(), logits.values().end());
}

void check_rollout_budget(const DynamicsConfig& config, std::size_t cond_frames, std::size_t future_steps) {
  const std::size_t needed = (cond_frames + future_steps) * config.tokens_per_frame();
  if (needed > config.context) {
    throw CapacityError("rollout needs " + std::to_string(needed) + " tokens ((" + std::to_string(cond_frames) + " + " +
                        std::to_string(future_steps) + ") frames x " + std::to_string(config.tokens_per_frame()) +
                        " codes) but the context holds " + std::to_string(config.context));
  }
}

PredictionSession::PredictionSession(const LatentTransformer& model, const VqCodec& codec,
                                     const VideoClip& conditioning, std::vector<float> actions,
                                     SamplerSettings sampler, std::uint64_t seed)
    : model_(model),
      codec_(codec),
      actions_(std::move(actions)),
      sampler_(sampler),
      rng_(seed),
      rollout_(model, model.config().context),
      cond_frames_(conditioning.length()) {
  const auto& cfg = model.config();
  if (codec.config().codes != cfg.vocab || codec.config().grid_h() != cfg.grid_h ||
      codec.config().grid_w() != cfg.grid_w) {
    throw ConfigError("codec (K=" + std::to_string(codec.config().codes) + ", grid " +
                      std::to_string(codec.config().grid_h()) + "x" + std::to_string(codec.config().grid_w()) +
                      ") does not match dynamics (K=" + std::to_string(cfg.vocab) + ", grid " +
                      std::to_string(cfg.grid_h) + "x" + std::to_string(cfg.grid_w) + ")");
  }
  if (cond_frames_ == 0) throw ConfigError("prediction needs at least one conditioning frame");
  check_rollout_budget(cfg, cond_frames_, 0);
  grids_ = encode_video(conditioning, codec);
  const std::size_t a = cfg.action_width;
  if (a > 0 && actions_.size() < cond_frames_ * a) throw DimensionError("actions missing for conditioning frames");
  for (std::size_t t = 0; t < cond_frames_; ++t) {
    for (std::size_t i = 0; i < cfg.tokens_per_frame(); ++i) {
      std::span<const float> act = a ? std::span<const float>(actions_).subspan(t * a, a) : std::span<const float>();
      next_logits_ = rollout_.push(grids_[t].codes[i], t, i, act);
    }
  }
}

VideoClip PredictionSession::extend(std::size_t frames) {
  const auto& cfg = model_.config();
  const std::size_t start = grids_.size(), hw = cfg.tokens_per_frame(), a = cfg.action_width;
  check_rollout_budget(cfg, cond_frames_, start - cond_frames_ + frames);
  if (a > 0 && actions_.size() < (start + frames) * a) {
    throw DimensionError("actions cover " + std::to_string(actions_.size() / a) + " frames, rollout needs " +
                         std::to_string(start + frames));
  }
  std::vector<int> codes;
  for (std::size_t t = start; t < start + frames; ++t) {
    CodeGrid g{cfg.grid_h, cfg.grid_w, std::vector<int>(hw)};
    for (std::size_t i = 0; i < hw; ++i) {
      g.codes[i] = sample_topk(next_logits_, sampler_.k, sampler_.temperature, rng_);
      // The logits after the final token are only needed if the rollout continues.
      if (rollout_.length() < cfg.context) {
        std::span<const float> act = a ? std::span<const float>(actions_).subspan(t * a, a) : std::span<const float>();
        next_logits_ = rollout_.push(g.codes[i], t, i, act);
      }
    }
    codes.insert(codes.end(), g.codes.begin(), g.codes.end());
    grids_.push_back(std::move(g));
  }
  VideoClip out;
  {
    NoGradScope no_grad;
    out.frames = codec_.decode_codes(codes, frames);
  }
  out.action_width = a;
  if (a > 0) out.actions.assign(actions_.begin() + static_cast<std::ptrdiff_t>(start * a),
                                actions_.begin() + static_cast<std::ptrdiff_t>((start + frames) * a));
  return out;
}

VideoClip predict_video(const VideoClip& conditioning, std::span<const float> actions, std::size_t future_steps,
                        const VqCodec& codec, const LatentTransformer& model, SamplerSettings sampler,
                        std::uint64_t seed) {
  check_rollout_budget(model.config(), conditioning.length(), future_steps);
  PredictionSession session(model, codec, conditioning, std::vector<float>(actions.begin(), actions.end()), sampler,
                            seed);
  return session.extend(future_steps);
}

namespace {

void check_tiny(const TinyClip& clip) {
  if (clip.frames > 3 || clip.height > 4 || clip.width > 4 || clip.channels != 1 || clip.levels > 4 ||
      clip.levels == 0) {
    throw CapacityError("pixel oracle handles at most 3x4x4x1 clips with 4 levels");
  }
  if (clip.values.size() != clip.frames * clip.height * clip.width * clip.channels) {
    throw DimensionError("tiny clip value count does not match its extents");
  }
  for (int v : clip.values) {
    if (v < 0 || v >= static_cast<int>(clip.levels)) throw IndexError("tiny clip intensity outside levels");
  }
}

}  // namespace

PixelAccounting pixel_accounting(const TinyClip& clip, std::size_t cond_frames) {
  if (cond_frames > clip.frames) throw ConfigError("conditioning frames exceed clip length");
  PixelAccounting a;
  a.pixels = clip.frames * clip.height * clip.width;
  a.cond_pixels = cond_frames * clip.height * clip.width;
  a.predicted = (a.pixels - a.cond_pixels) * clip.channels;
  return a;
}

double pixel_conditional(const TinyClip& clip, std::size_t position, PixelModel model) {
  const double levels = double(clip.levels);
  if (model == PixelModel::kUniform) return -std::log(levels);
  // Laplace-smoothed frequency of the value among all earlier positions.
  std::size_t matches = 0;
  for (std::size_t j = 0; j < position; ++j) matches += clip.values[j] == clip.values[position];
  return std::log((double(matches) + 1.0) / (double(position) + levels));
}

double pixel_factorization_oracle(const TinyClip& clip, std::size_t cond_frames, PixelModel model) {
  check_tiny(clip);
  const auto acc = pixel_accounting(clip, cond_frames);
  const std::size_t first = acc.cond_pixels * clip.channels;
  double total = 0;
  for (std::size_t p = first; p < first + acc.predicted; ++p) total += pixel_conditional(clip, p, model);
  return total;
}

double pixel_joint_by_enumeration(const TinyClip& clip, std::size_t cond_frames, PixelModel model) {
  check_tiny(clip);
  const auto acc = pixel_accounting(clip, cond_frames);
  const std::size_t first = acc.cond_pixels * clip.channels, m = acc.predicted, levels = clip.levels;
  double space = std::pow(double(levels), double(m));
  if (space > double(1u << 20)) throw CapacityError("enumeration space too large");
  // Unnormalized exchangeable weight: uniform, or the Pólya-urn weight
  // ∏_v Γ(prefix_v + 1 + n_v) / Γ(prefix_v + 1) that depends only on counts.
  std::vector<double> prefix(levels, 0.0);
  for (std::size_t j = 0; j < first; ++j) prefix[static_cast<std::size_t>(clip.values[j])] += 1.0;
  auto log_weight = [&](const std::vector<int>& completion) {
    if (model == PixelModel::kUniform) return 0.0;
    std::vector<double> n(levels, 0.0);
    for (int v : completion) n[static_cast<std::size_t>(v)] += 1.0;
    double w = 0;
    for (std::size_t v = 0; v < levels; ++v) w += std::lgamma(prefix[v] + 1.0 + n[v]) - std::lgamma(prefix[v] + 1.0);
    return w;
  };
  std::vector<int> completion(m, 0), observed(clip.values.begin() + static_cast<std::ptrdiff_t>(first),
                                               clip.values.begin() + static_cast<std::ptrdiff_t>(first + m));
  double total = 0;
  const auto count = static_cast<std::size_t>(space);
  for (std::size_t idx = 0; idx < count; ++idx) {
    std::size_t r = idx;
    for (std::size_t i = 0; i < m; ++i) {
      completion[i] = static_cast<int>(r % levels);
      r /= levels;
    }
    total += std::exp(log_weight(completion));
  }
  return log_weight(observed) - std::log(total);
}

}  // namespace lvp
