#pragma once

// Evaluation metrics: matched segmentation accuracy, ARI, NMI, N-way top-K
// retrieval accuracy, SSIM and mean +- standard error summaries.

#include "mshot/common.hpp"
#include "mshot/partition.hpp"
#include "mshot/synthworld.hpp"

#include <string>
#include <utility>
#include <vector>

namespace mshot {

/// Contingency counts between two labelings (labels remapped to 0..k-1 in
/// order of first appearance).
struct Contingency {
  Eigen::MatrixXd table;  // rows: predicted labels, cols: ground-truth labels
  Eigen::VectorXd pred_sizes;
  Eigen::VectorXd gt_sizes;
  double n = 0.0;
};

Contingency contingency(const Labeling& pred, const Labeling& gt);

/// Best bijective label matching (Hungarian); fraction of scans agreeing.
double seg_accuracy(const Labeling& pred, const Labeling& gt);

/// Pair-counting adjusted Rand index; 1.0 when the index is degenerate
/// (max == expected, e.g. both labelings a single cluster).
double ari(const Labeling& pred, const Labeling& gt);

enum class NmiNorm { kGeometric, kArithmetic };

/// I(pred; gt) normalized by the entropies. Both entropies zero -> 1.0;
/// exactly one zero -> 0.0.
double nmi(const Labeling& pred, const Labeling& gt, NmiNorm norm = NmiNorm::kGeometric);

/// Maximum-weight assignment for a (possibly rectangular) score matrix;
/// returns the assigned column per row (-1 when unassigned).
std::vector<int> hungarian_max(const Eigen::MatrixXd& score);

struct NwayConfig {
  int n_way = 2;
  int top_k = 1;
  int trials = 100;
  std::uint64_t seed = 0;
};

/// Fraction of trials in which the ground-truth candidate ranks within the
/// top K of N (gt + N-1 distractors drawn without replacement) by cosine
/// similarity to the query. Ties go to the lower pool index.
double nway_topk(const Eigen::Ref<const VecF>& query, int gt_index, const MatF& pool,
                 const NwayConfig& cfg);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM over valid window positions.
double ssim(const Frame& a, const Frame& b, const SsimConfig& cfg = {});

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

/// Mean and population standard deviation over sqrt(n).
MeanStderr report_stats(const std::vector<double>& values);

/// "0.790±0.03"
std::string format_mean_stderr(const MeanStderr& s);

}  // namespace mshot
