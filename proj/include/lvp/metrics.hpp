#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lvp/tensor.hpp"

namespace lvp {

inline constexpr double kPsnrCap = 99.0;

// Pixels are compared after mapping [−1, 1] to [0, 1]; identical inputs give the cap.
double psnr(std::span<const float> prediction, std::span<const float> truth);
// Mean absolute error on the native [−1, 1] scale.
double mae(std::span<const float> prediction, std::span<const float> truth);

struct FrameScores {
  std::vector<double> psnr, mae;  // one entry per frame
  double mean_psnr() const;
  double mean_mae() const;
};

// prediction and truth are [T × ...] with equal shapes.
FrameScores score_frames(const Tensor& prediction, const Tensor& truth);

struct CodebookStats {
  double perplexity = 0.0;
  double usage = 0.0;  // fraction of the K codes used at least once
  std::vector<std::uint64_t> histogram;
};

CodebookStats codebook_stats(std::span<const int> codes, std::size_t k);

struct ClipReport {
  std::string clip;
  std::size_t samples = 0;
  std::vector<double> sample_psnr, sample_mae;  // mean over future frames, per sample
  double best_psnr = 0.0, best_mae = 0.0;       // best over samples
  double copy_last_mae = 0.0;                   // baseline: repeat the last conditioning frame
  std::vector<double> best_frame_mae;           // per future frame, of the best-MAE sample
};

// Best-of-N over the first n samples.
double best_psnr(std::span<const double> sample_psnr, std::size_t n);
double best_mae(std::span<const double> sample_mae, std::size_t n);

struct EvalReport {
  std::vector<ClipReport> clips;
  double mean_best_psnr = 0.0, mean_best_mae = 0.0, mean_copy_last_mae = 0.0;
  double first_frame_mae = 0.0;  // mean over clips of the best sample's first predicted frame
  bool has_codebook = false;
  CodebookStats codebook;
  bool has_nll = false;
  double nats_per_token = 0.0;
  std::size_t k = 0;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::string codec_hash, dynamics_hash, sampler_note;

  void finalize();  // aggregates as means of per-clip values
  nlohmann::ordered_json to_json() const;
};

}  // namespace lvp
