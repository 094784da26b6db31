#include "lvp/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "lvp/errors.hpp"

namespace lvp {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b || a == 0) throw DimensionError("metric inputs differ in size: " + std::to_string(a) + " vs " + std::to_string(b));
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

double psnr(std::span<const float> prediction, std::span<const float> truth) {
  check_sizes(prediction.size(), truth.size());
  double se = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = 0.5 * (double(prediction[i]) - double(truth[i]));
    se += d * d;
  }
  const double mse = se / double(truth.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double mae(std::span<const float> prediction, std::span<const float> truth) {
  check_sizes(prediction.size(), truth.size());
  double s = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) s += std::abs(double(prediction[i]) - double(truth[i]));
  return s / double(truth.size());
}

double FrameScores::mean_psnr() const { return mean_of(psnr); }
double FrameScores::mean_mae() const { return mean_of(mae); }

FrameScores score_frames(const Tensor& prediction, const Tensor& truth) {
  if (prediction.shape() != truth.shape() || prediction.rank() < 1) {
    throw DimensionError("prediction " + shape_string(prediction.shape()) + " vs truth " + shape_string(truth.shape()));
  }
  const std::size_t t = truth.dim(0), fs = truth.numel() / t;
  FrameScores s;
  for (std::size_t i = 0; i < t; ++i) {
    auto p = prediction.values().subspan(i * fs, fs);
    auto g = truth.values().subspan(i * fs, fs);
    s.psnr.push_back(psnr(p, g));
    s.mae.push_back(mae(p, g));
  }
  return s;
}

CodebookStats codebook_stats(std::span<const int> codes, std::size_t k) {
  if (codes.empty()) throw UsageError("codebook_stats: no codes");
  CodebookStats s;
  s.histogram.assign(k, 0);
  for (int c : codes) {
    if (c < 0 || static_cast<std::size_t>(c) >= k) throw IndexError("codebook_stats: code outside [0, K)");
    ++s.histogram[static_cast<std::size_t>(c)];
  }
  double entropy = 0;
  std::size_t used = 0;
  for (auto n : s.histogram) {
    if (n == 0) continue;
    ++used;
    const double p = double(n) / double(codes.size());
    entropy -= p * std::log(p);
  }
  s.perplexity = std::exp(entropy);
  s.usage = double(used) / double(k);
  return s;
}

double best_psnr(std::span<const double> sample_psnr, std::size_t n) {
  if (n == 0 || n > sample_psnr.size()) throw UsageError("best-of-N needs 1 <= N <= samples");
  return *std::max_element(sample_psnr.begin(), sample_psnr.begin() + static_cast<std::ptrdiff_t>(n));
}

double best_mae(std::span<const double> sample_mae, std::size_t n) {
  if (n == 0 || n > sample_mae.size()) throw UsageError("best-of-N needs 1 <= N <= samples");
  return *std::min_element(sample_mae.begin(), sample_mae.begin() + static_cast<std::ptrdiff_t>(n));
}

void EvalReport::finalize() {
  std::vector<double> p, m, c, f;
  for (const auto& clip : clips) {
    p.push_back(clip.best_psnr);
    m.push_back(clip.best_mae);
    c.push_back(clip.copy_last_mae);
    if (!clip.best_frame_mae.empty()) f.push_back(clip.best_frame_mae.front());
  }
  mean_best_psnr = mean_of(p);
  mean_best_mae = mean_of(m);
  mean_copy_last_mae = mean_of(c);
  first_frame_mae = mean_of(f);
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["aggregate"] = {{"clips", clips.size()},
                    {"mean_best_psnr", mean_best_psnr},
                    {"mean_best_mae", mean_best_mae},
                    {"mean_copy_last_mae", mean_copy_last_mae},
                    {"first_frame_mae", first_frame_mae}};
  if (has_codebook) j["codebook"] = {{"perplexity", codebook.perplexity}, {"usage", codebook.usage}};
  if (has_nll) j["nats_per_token"] = nats_per_token;
  j["sampler"] = {{"k", k}, {"temperature", temperature}, {"seed", seed}, {"note", sampler_note}};
  j["provenance"] = {{"codec_hash", codec_hash}, {"dynamics_hash", dynamics_hash}};
  auto& per = j["clips"] = nlohmann::ordered_json::array();
  for (const auto& c : clips) {
    per.push_back({{"clip", c.clip},
                   {"samples", c.samples},
                   {"best_psnr", c.best_psnr},
                   {"best_mae", c.best_mae},
                   {"copy_last_mae", c.copy_last_mae},
                   {"best_frame_mae", c.best_frame_mae},
                   {"sample_psnr", c.sample_psnr},
                   {"sample_mae", c.sample_mae}});
  }
  return j;
}

}  // namespace lvp
