#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "lvp/augment.hpp"
#include "lvp/checkpoint.hpp"
#include "lvp/codec.hpp"
#include "lvp/config.hpp"
#include "lvp/dynamics.hpp"
#include "lvp/errors.hpp"
#include "lvp/io.hpp"
#include "lvp/metrics.hpp"
#include "lvp/ppm.hpp"
#include "lvp/sprites.hpp"
#include "lvp/tape.hpp"
#include "lvp/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

using namespace lvp;

struct Options {
  std::string config, data, out, codec, dynamics, pred, split = "test";
  std::vector<std::string> clips, sets;
  std::optional<std::size_t> k, layers, future_steps, samples, count, n_train, n_test, steps;
  std::optional<int> aug_m;
  std::optional<double> temperature;
  std::optional<std::uint64_t> seed;
};

class Timer {
 public:
  explicit Timer(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
  ~Timer() {
    const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
    std::fprintf(stderr, "%s: %.2f s\n", what_.c_str(), d.count());
  }

 private:
  std::string what_;
  std::chrono::steady_clock::time_point start_;
};

IniDocument load_settings(const Options& o) {
  IniDocument doc;
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw IoError("config file not found: " + o.config);
    doc = load_ini(o.config);
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('='), dot = s.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("--set expects section.key=value, got '" + s + "'");
    }
    doc[s.substr(0, dot)][s.substr(dot + 1, eq - dot - 1)] = s.substr(eq + 1);
  }
  return doc;
}

void set_default(KeyValues& kv, const std::string& key, const std::string& value) { kv.try_emplace(key, value); }

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string("missing required option ") + flag);
}

fs::path prepare_out(const std::string& out) {
  require(out, "--out");
  fs::create_directories(out);
  return out;
}

void write_resolved(const fs::path& out, const IniDocument& doc) { write_text_file(out / "resolved.ini", format_ini(doc)); }

std::string clip_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%03zu", i);
  return buf;
}

std::string indexed(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", prefix, i);
  return buf;
}

VqCodec load_codec(const std::string& path) {
  require(path, "--codec");
  if (!fs::exists(path)) throw IoError("codec checkpoint not found: " + path);
  return VqCodec::from_checkpoint(load_checkpoint(path, kCodecMagic));
}

struct LoadedDynamics {
  LatentTransformer model;
  std::string codec_hash;
};

LoadedDynamics load_dynamics(const std::string& path) {
  require(path, "--dynamics");
  if (!fs::exists(path)) throw IoError("dynamics checkpoint not found: " + path);
  auto ckpt = load_checkpoint(path, kDynamicsMagic);
  return {LatentTransformer::from_checkpoint(ckpt), ckpt.value("codec_hash")};
}

void check_hash(const LoadedDynamics& dyn, const VqCodec& codec) {
  const auto actual = codec.content_hash();
  if (dyn.codec_hash != actual) {
    throw CheckpointMismatch("dynamics checkpoint was trained with codec " + dyn.codec_hash + " but the codec is " + actual);
  }
}

// Truth clips come from --clip files or from a dataset split.
std::vector<std::pair<std::string, VideoClip>> gather_clips(const Options& o) {
  std::vector<std::pair<std::string, VideoClip>> out;
  for (const auto& c : o.clips) out.emplace_back(fs::absolute(c).string(), read_clip(c));
  if (out.empty() && !o.data.empty()) {
    if (o.split != "train" && o.split != "test") throw UsageError("--split must be train or test");
    std::ifstream in(fs::path(o.data) / "manifest.jsonl");
    if (!in) throw IoError("dataset manifest not found: " + (fs::path(o.data) / "manifest.jsonl").string());
    std::string line;
    const std::size_t limit = o.count.value_or(std::numeric_limits<std::size_t>::max());
    while (std::getline(in, line) && out.size() < limit) {
      auto j = json::parse(line);
      if (j.value("kind", "") != "clip" || j.value("split", "") != o.split) continue;
      const auto path = fs::absolute(fs::path(o.data) / j["file"].get<std::string>()).string();
      out.emplace_back(path, read_clip(path));
    }
  }
  if (out.empty()) throw UsageError("no clips given: use --clip or --data");
  return out;
}

int cmd_gen_data(const Options& o) {
  Timer t("gen-data");
  auto doc = load_settings(o);
  auto cfg = SpriteWorldConfig::from_kv(doc["data"]);
  cfg.validate();
  const std::uint64_t seed = o.seed.value_or(0);
  const auto out = prepare_out(o.out);
  doc["data"] = cfg.to_kv();
  doc["run"] = {{"command", "gen-data"},
                {"n_train", std::to_string(o.n_train.value_or(64))},
                {"n_test", std::to_string(o.n_test.value_or(8))},
                {"seed", std::to_string(seed)}};
  generate_dataset(cfg, o.n_train.value_or(64), o.n_test.value_or(8), seed, out);
  write_resolved(out, doc);
  return 0;
}

int cmd_train_codec(const Options& o) {
  Timer t("train-codec");
  auto doc = load_settings(o);
  require(o.data, "--data");
  auto data = load_dataset(o.data);
  auto& ck = doc["codec"];
  set_default(ck, "height", std::to_string(data.config.height));
  set_default(ck, "width", std::to_string(data.config.width));
  set_default(ck, "channels", std::to_string(data.config.channels));
  auto& tk = doc["codec_train"];
  if (o.seed) tk["seed"] = std::to_string(*o.seed);
  if (o.steps) tk["phase1_steps"] = std::to_string(*o.steps);
  const auto cc = CodecConfig::from_kv(ck);
  const auto tc = CodecTrainConfig::from_kv(tk);
  const auto out = prepare_out(o.out);
  doc["codec"] = cc.to_kv();
  doc["codec_train"] = tc.to_kv();
  doc["data"] = data.config.to_kv();
  write_resolved(out, doc);

  VqCodec codec(cc, derive_seed(tc.seed, 1));
  Discriminator disc(cc.channels, cc.disc_width, derive_seed(tc.seed, 2));
  const auto train_frames = pool_frames(data.train);
  const auto test_frames = data.test.empty() ? train_frames : pool_frames(data.test);
  std::ofstream log(out / "log.jsonl");
  double phase1_psnr = 0;
  CodecTrainHooks hooks;
  hooks.on_step = [&](const CodecStepLog& s, const VqCodec& c) {
    log << s.json() << '\n';
    const bool phase_end = s.phase == 1 && s.step + 1 == tc.phase1_steps;
    if ((s.step + 1) % tc.eval_every == 0 || phase_end) {
      const double p = held_out_psnr(c, test_frames);
      log << json{{"step", s.step}, {"phase", s.phase}, {"held_out_psnr", p}}.dump() << '\n';
      if (s.phase == 1) phase1_psnr = p;
      return s.phase == 1 && tc.target_psnr > 0 && p >= tc.target_psnr;
    }
    return false;
  };
  CodecTrainResult result;
  try {
    result = train_codec(codec, disc, train_frames, tc, hooks);
  } catch (const NumericError&) {
    save_checkpoint(out / "codec.last_good.ckpt", codec.to_checkpoint());
    throw;
  }
  const double final_psnr = held_out_psnr(codec, test_frames);
  save_checkpoint(out / "codec.ckpt", codec.to_checkpoint());
  json summary{{"phase1_steps", result.phase1_steps_run},
               {"phase2_steps", result.phase2_steps_run},
               {"phase1_psnr", phase1_psnr},
               {"final_psnr", final_psnr},
               {"codec_hash", codec.content_hash()}};
  if (result.phase2_steps_run) summary["final_d_loss"] = result.log.back().d_loss;
  write_text_file(out / "summary.json", summary.dump(2) + "\n");
  log << summary.dump() << '\n';
  return 0;
}

int cmd_train_dynamics(const Options& o) {
  Timer t("train-dynamics");
  auto doc = load_settings(o);
  require(o.data, "--data");
  auto data = load_dataset(o.data);
  const auto codec = load_codec(o.codec);
  auto& dk = doc["dynamics"];
  set_default(dk, "vocab", std::to_string(codec.config().codes));
  set_default(dk, "grid_h", std::to_string(codec.config().grid_h()));
  set_default(dk, "grid_w", std::to_string(codec.config().grid_w()));
  set_default(dk, "frames", std::to_string(data.config.frames));
  set_default(dk, "cond_frames", std::to_string(data.config.cond_frames));
  set_default(dk, "action_width", std::to_string(data.config.action_width()));
  if (o.layers) dk["layers"] = std::to_string(*o.layers);
  auto& ak = doc["augment"];
  if (o.aug_m) ak["m"] = std::to_string(*o.aug_m);
  auto& tk = doc["dynamics_train"];
  if (o.seed) tk["seed"] = std::to_string(*o.seed);
  if (o.steps) tk["steps"] = std::to_string(*o.steps);
  const auto dc = DynamicsConfig::from_kv(dk);
  const auto ac = AugmentConfig::from_kv(ak);
  const auto tc = DynamicsTrainConfig::from_kv(tk);
  check_pairing(codec, dc);
  auto clips = data.train;
  if (o.count && *o.count < clips.size()) clips.resize(*o.count);
  const auto out = prepare_out(o.out);
  doc["dynamics"] = dc.to_kv();
  doc["augment"] = ac.to_kv();
  doc["dynamics_train"] = tc.to_kv();
  doc["data"] = data.config.to_kv();
  doc["run"] = {{"codec", fs::absolute(o.codec).string()}, {"clips", std::to_string(clips.size())}};
  write_resolved(out, doc);

  LatentTransformer model(dc, derive_seed(tc.seed, 1));
  const auto codec_hash = codec.content_hash();
  std::ofstream log(out / "log.jsonl");
  DynamicsTrainHooks hooks;
  hooks.on_step = [&](const DynamicsStepLog& s, const LatentTransformer&) {
    log << s.json() << '\n';
    return false;
  };
  hooks.on_checkpoint = [&](std::size_t, const LatentTransformer& m) {
    save_checkpoint(out / "dynamics.ckpt", m.to_checkpoint(codec_hash));
  };
  try {
    train_dynamics(model, codec, clips, ac, tc, hooks);
  } catch (const NumericError&) {
    save_checkpoint(out / "dynamics.last_good.ckpt", model.to_checkpoint(codec_hash));
    throw;
  }
  json summary{{"steps", tc.steps},
               {"final_loss", nats_per_token(model, codec, clips)},
               {"codec_hash", codec_hash},
               {"codec_hash_after", codec.content_hash()},
               {"dynamics_hash", model.content_hash()}};
  write_text_file(out / "summary.json", summary.dump(2) + "\n");
  log << summary.dump() << '\n';
  return 0;
}

int cmd_predict(const Options& o) {
  Timer t("predict");
  auto doc = load_settings(o);
  const auto codec = load_codec(o.codec);
  const auto dyn = load_dynamics(o.dynamics);
  check_hash(dyn, codec);
  check_pairing(codec, dyn.model.config());
  const auto& mc = dyn.model.config();
  auto& pk = doc["predict"];
  if (o.k) pk["k"] = std::to_string(*o.k);
  if (o.temperature) pk["temperature"] = format_double(*o.temperature);
  if (o.seed) pk["seed"] = std::to_string(*o.seed);
  if (o.future_steps) pk["future_steps"] = std::to_string(*o.future_steps);
  if (o.samples) pk["samples"] = std::to_string(*o.samples);
  KvReader r(pk, "predict");
  SamplerSettings sampler;
  sampler.k = std::min(r.get_size("k", sampler.k), mc.vocab);
  sampler.temperature = r.get_double("temperature", sampler.temperature);
  const std::uint64_t seed = r.get_u64("seed", 0);
  const std::size_t future = r.get_size("future_steps", mc.frames - mc.cond_frames);
  const std::size_t samples = r.get_size("samples", 1);
  const std::size_t cond = r.get_size("cond_frames", mc.cond_frames);
  r.finish();
  if (sampler.k == 0) throw ConfigError("[predict] k must be positive");
  if (samples == 0) throw ConfigError("[predict] samples must be positive");
  check_rollout_budget(mc, cond, future);
  const auto clips = gather_clips(o);
  for (const auto& [path, clip] : clips) {
    if (clip.length() < cond) throw DimensionError(path + " has fewer than " + std::to_string(cond) + " frames");
  }
  const auto out = prepare_out(o.out);
  doc["predict"] = {{"k", std::to_string(sampler.k)},
                    {"temperature", format_double(sampler.temperature)},
                    {"seed", std::to_string(seed)},
                    {"future_steps", std::to_string(future)},
                    {"samples", std::to_string(samples)},
                    {"cond_frames", std::to_string(cond)}};
  write_resolved(out, doc);

  json meta{{"codec_hash", codec.content_hash()},
            {"dynamics_hash", dyn.model.content_hash()},
            {"k", sampler.k},
            {"temperature", sampler.temperature},
            {"seed", seed},
            {"cond_frames", cond},
            {"future_steps", future},
            {"samples", samples},
            {"clips", json::array()}};
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const auto& [path, clip] = clips[ci];
    const auto conditioning = clip.slice(0, cond);
    const auto clip_dir = out / clip_name(ci);
    std::vector<VideoClip> results(samples);
    std::vector<std::string> errors(samples);
#pragma omp parallel for schedule(static)
    for (std::size_t s = 0; s < samples; ++s) {
      try {
        results[s] = predict_video(conditioning, clip.actions, future, codec, dyn.model, sampler,
                                   derive_seed(derive_seed(seed, ci), s));
      } catch (const std::exception& e) {
        errors[s] = e.what();
      }
    }
    for (const auto& e : errors) {
      if (!e.empty()) throw DimensionError(path + ": " + e);
    }
    for (std::size_t s = 0; s < samples; ++s) {
      const auto dir = clip_dir / indexed("sample", s);
      fs::create_directories(dir);
      const auto& v = results[s];
      for (std::size_t f = 0; f < v.length(); ++f) {
        write_ppm(dir / (indexed("frame", f) + ".ppm"), v.frames.values().data() + f * v.frame_size(), v.channels(),
                  v.height(), v.width());
      }
      write_clip(dir / "frames.bin", v);
    }
    meta["clips"].push_back({{"name", clip_name(ci)}, {"truth", path}});
  }
  write_text_file(out / "meta.json", meta.dump(2) + "\n");
  return 0;
}

int cmd_eval(const Options& o) {
  Timer t("eval");
  require(o.pred, "--pred");
  const fs::path pred(o.pred);
  if (!fs::exists(pred / "meta.json")) throw IoError("prediction metadata not found: " + (pred / "meta.json").string());
  const auto meta = json::parse(read_text_file(pred / "meta.json"));
  const std::size_t cond = meta["cond_frames"], future = meta["future_steps"], samples = meta["samples"];
  std::vector<std::pair<std::string, VideoClip>> truths;
  if (!o.clips.empty()) {
    truths = gather_clips(o);
  } else {
    for (const auto& c : meta["clips"]) truths.emplace_back(c["truth"], read_clip(c["truth"].get<std::string>()));
  }
  if (truths.size() != meta["clips"].size()) {
    throw DimensionError("prediction has " + std::to_string(meta["clips"].size()) + " clips but " +
                         std::to_string(truths.size()) + " truth clips were given");
  }
  EvalReport report;
  report.k = meta["k"];
  report.temperature = meta["temperature"];
  report.seed = meta["seed"];
  report.codec_hash = meta["codec_hash"];
  report.dynamics_hash = meta["dynamics_hash"];
  report.sampler_note = "best of " + std::to_string(samples) + " samples per clip";
  for (std::size_t ci = 0; ci < truths.size(); ++ci) {
    const auto& [path, truth] = truths[ci];
    if (truth.length() < cond + future) {
      throw DimensionError(path + " has " + std::to_string(truth.length()) + " frames; evaluation needs " +
                           std::to_string(cond + future));
    }
    const auto target = truth.frame_batch(cond, future);
    ClipReport cr;
    cr.clip = meta["clips"][ci]["name"];
    cr.samples = samples;
    std::vector<std::vector<double>> frame_mae;
    for (std::size_t s = 0; s < samples; ++s) {
      const auto v = read_clip(pred / cr.clip / indexed("sample", s) / "frames.bin");
      if (v.frames.shape() != target.shape()) throw DimensionError("prediction shape differs from truth for " + cr.clip);
      const auto scores = score_frames(v.frames, target);
      cr.sample_psnr.push_back(scores.mean_psnr());
      cr.sample_mae.push_back(scores.mean_mae());
      frame_mae.push_back(scores.mae);
    }
    cr.best_psnr = best_psnr(cr.sample_psnr, samples);
    cr.best_mae = best_mae(cr.sample_mae, samples);
    const auto best = static_cast<std::size_t>(std::min_element(cr.sample_mae.begin(), cr.sample_mae.end()) - cr.sample_mae.begin());
    cr.best_frame_mae = frame_mae[best];
    Tensor copy_last(target.shape());
    const auto fs_ = truth.frame_size();
    for (std::size_t f = 0; f < future; ++f) {
      std::copy_n(truth.frames.values().begin() + static_cast<std::ptrdiff_t>((cond - 1) * fs_), fs_,
                  copy_last.values_mut().begin() + static_cast<std::ptrdiff_t>(f * fs_));
    }
    cr.copy_last_mae = score_frames(copy_last, target).mean_mae();
    report.clips.push_back(std::move(cr));
  }
  if (!o.codec.empty()) {
    const auto codec = load_codec(o.codec);
    std::vector<int> codes;
    for (const auto& [path, truth] : truths) {
      for (const auto& g : encode_video(truth, codec)) codes.insert(codes.end(), g.codes.begin(), g.codes.end());
    }
    report.has_codebook = true;
    report.codebook = codebook_stats(codes, codec.config().codes);
    if (!o.dynamics.empty()) {
      const auto dyn = load_dynamics(o.dynamics);
      check_hash(dyn, codec);
      std::vector<VideoClip> clips;
      for (const auto& [path, truth] : truths) clips.push_back(truth.slice(0, std::min(truth.length(), dyn.model.config().frames)));
      report.has_nll = true;
      report.nats_per_token = nats_per_token(dyn.model, codec, clips);
    }
  }
  report.finalize();
  const auto text = report.to_json().dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_text_file(out, text);
  }
  return 0;
}

int cmd_stats(const Options& o) {
  Timer t("stats");
  const auto codec = load_codec(o.codec);
  const auto clips = gather_clips(o);
  std::vector<int> codes;
  double psnr_sum = 0, mae_sum = 0;
  for (const auto& [path, clip] : clips) {
    const auto grids = encode_video(clip, codec);
    for (const auto& g : grids) codes.insert(codes.end(), g.codes.begin(), g.codes.end());
    std::vector<int> flat;
    for (const auto& g : grids) flat.insert(flat.end(), g.codes.begin(), g.codes.end());
    NoGradScope no_grad;
    const auto scores = score_frames(codec.decode_codes(flat, grids.size()), clip.frames);
    psnr_sum += scores.mean_psnr();
    mae_sum += scores.mean_mae();
  }
  const auto s = codebook_stats(codes, codec.config().codes);
  json j{{"clips", clips.size()},
         {"codes", codes.size()},
         {"perplexity", s.perplexity},
         {"usage", s.usage},
         {"recon_psnr", psnr_sum / double(clips.size())},
         {"recon_mae", mae_sum / double(clips.size())},
         {"codec_hash", codec.content_hash()}};
  const auto text = j.dump(2) + "\n";
  if (o.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(o.out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent video prediction toolkit"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "INI configuration file");
    c->add_option("--set", o.sets, "Override a setting as section.key=value");
    c->add_option("--seed", o.seed, "Seed");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic sprite dataset");
  common(gen);
  gen->add_option("--out", o.out, "Dataset directory")->required();
  gen->add_option("--train", o.n_train, "Training clips (default 64)");
  gen->add_option("--test", o.n_test, "Test clips (default 8)");

  auto* tcodec = app.add_subcommand("train-codec", "Train the vector-quantized codec");
  common(tcodec);
  tcodec->add_option("--data", o.data, "Dataset directory")->required();
  tcodec->add_option("--out", o.out, "Output directory")->required();
  tcodec->add_option("--steps", o.steps, "Phase-1 steps");

  auto* tdyn = app.add_subcommand("train-dynamics", "Train the latent transformer on a frozen codec");
  common(tdyn);
  tdyn->add_option("--data", o.data, "Dataset directory")->required();
  tdyn->add_option("--codec", o.codec, "Codec checkpoint")->required();
  tdyn->add_option("--out", o.out, "Output directory")->required();
  tdyn->add_option("--layers", o.layers, "Transformer layers");
  tdyn->add_option("--aug-m", o.aug_m, "Maximum translation in pixels");
  tdyn->add_option("--steps", o.steps, "Training steps");
  tdyn->add_option("--count", o.count, "Use only the first N training clips");

  auto* pred = app.add_subcommand("predict", "Roll out future frames");
  common(pred);
  pred->add_option("--codec", o.codec, "Codec checkpoint")->required();
  pred->add_option("--dynamics", o.dynamics, "Dynamics checkpoint")->required();
  pred->add_option("--clip", o.clips, "Clip file providing conditioning frames (repeatable)");
  pred->add_option("--data", o.data, "Dataset directory, used when no --clip is given");
  pred->add_option("--split", o.split, "Dataset split (train or test)");
  pred->add_option("--count", o.count, "Use only the first N clips of the split");
  pred->add_option("--out", o.out, "Output directory")->required();
  pred->add_option("--k", o.k, "Top-k truncation");
  pred->add_option("--temperature", o.temperature, "Sampling temperature");
  pred->add_option("--future-steps", o.future_steps, "Frames to predict");
  pred->add_option("--samples", o.samples, "Rollouts per clip");

  auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
  common(ev);
  ev->add_option("--pred", o.pred, "Prediction directory")->required();
  ev->add_option("--clip", o.clips, "Ground-truth clip files (default: those recorded at prediction)");
  ev->add_option("--codec", o.codec, "Codec checkpoint for codebook statistics");
  ev->add_option("--dynamics", o.dynamics, "Dynamics checkpoint for teacher-forced NLL");
  ev->add_option("--out", o.out, "Report path (default stdout)");

  auto* st = app.add_subcommand("stats", "Codebook usage over clips");
  common(st);
  st->add_option("--codec", o.codec, "Codec checkpoint")->required();
  st->add_option("--clip", o.clips, "Clip files (repeatable)");
  st->add_option("--data", o.data, "Dataset directory");
  st->add_option("--split", o.split, "Dataset split (train or test)");
  st->add_option("--count", o.count, "Use only the first N clips of the split");
  st->add_option("--out", o.out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (gen->parsed()) return cmd_gen_data(o);
    if (tcodec->parsed()) return cmd_train_codec(o);
    if (tdyn->parsed()) return cmd_train_dynamics(o);
    if (pred->parsed()) return cmd_predict(o);
    if (ev->parsed()) return cmd_eval(o);
    if (st->parsed()) return cmd_stats(o);
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 1;
}
