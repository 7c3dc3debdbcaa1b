#pragma once

// Test-time pipeline: boundary prediction, segmentation, per-segment
// caption decoding, toy reconstruction and metrics.

#include "mshot/metrics.hpp"
#include "mshot/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mshot {

/// What conditions the reconstruction lookup.
enum class PromptMode { kText, kFmri, kDual };

PromptMode prompt_mode_from_string(const std::string& s);
std::string to_string(PromptMode m);

struct EvalConfig {
  double tau = 0.5;
  Pooling pooling = Pooling::kMean;
  bool segmented = true;       // false: whole sequence decoded as one unit
  bool oracle = false;         // inject ground-truth boundaries
  bool decoder_active = true;  // false: semantics scored on the shot embedding itself
  PromptMode prompt = PromptMode::kText;
  std::vector<int> n_ways = {2, 50};
  int top_k = 1;
  int trials = 100;
  std::uint64_t seed = 1;
  int threads = 1;

  void validate() const;
};

struct ShotResult {
  int segment = 0;  // predicted segment holding the shot's middle scan
  std::string gt_caption;
  std::string pred_caption;
  std::vector<int> pred_tokens;
  double caption_sim = 0.0;
  bool exact = false;
  double ssim = 0.0;
  std::vector<double> nway_frame;  // per entry of n_ways; NaN when the pool is too small
  std::vector<double> nway_video;
};

struct SampleResult {
  int id = 0;
  int ratio_index = 0;
  std::string gt_bounds;
  std::string pred_bounds;
  std::optional<double> acc, ari, nmi;  // absent when unsegmented
  double caption_sim = 0.0;             // mean over ground-truth shots
  double caption_sim_video = 0.0;       // caption covering the video-level shot vs its caption
  double ssim = 0.0;
  double exact = 0.0;
  std::vector<double> nway_frame;
  std::vector<double> nway_video;
  std::vector<ShotResult> shots;
};

struct MetricRow {
  std::string name;
  MeanStderr stats;
  int n = 0;
};

struct EvalResult {
  std::vector<SampleResult> samples;
  std::vector<MetricRow> table;

  /// Row by name; throws InvalidArgument when missing.
  const MetricRow& row(const std::string& name) const;
};

EvalResult evaluate(const Model& p, const DatasetManifest& test, const EvalConfig& cfg);

}  // namespace mshot
