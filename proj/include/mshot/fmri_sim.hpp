#pragma once

// Hemodynamic mixing simulator: shot-code boxcar -> double-gamma HRF
// convolution -> sampling at the scan interval, plus Gaussian noise.

#include "mshot/common.hpp"
#include "mshot/synthworld.hpp"

#include <vector>

namespace mshot {

struct HrfParams {
  double a1 = 6.0;
  double b1 = 1.0;
  double a2 = 16.0;
  double b2 = 1.0;
  double undershoot_ratio = 1.0 / 6.0;
  double support_seconds = 32.0;

  void validate() const;
};

/// Gamma density with shape a and scale b.
double gamma_density(double t, double a, double b);

/// Continuous double-gamma response (unnormalized).
double hrf_value(const HrfParams& p, double t);

/// h sampled at k*dt for k = 0..floor(support/dt), L1-normalized.
Eigen::VectorXd hrf_kernel(const HrfParams& p, double dt);

struct ShotSpan {
  ShotFactor factor;
  double duration_seconds = 0.0;
};

struct ShotTimeline {
  std::vector<ShotSpan> shots;

  double total_duration() const;
  void validate() const;
};

enum class ScanTiming { kEndOfInterval, kMidpoint };

struct ScanConfig {
  double tr_seconds = 1.5;
  int n_scans = 4;
  double noise_sigma = 0.05;
  double dt = 0.1;  // fine grid for the convolution
  double offset_seconds = 4.0;  // hemodynamic delay added to every sample time
  ScanTiming timing = ScanTiming::kEndOfInterval;
};

struct ScanSequence {
  MatF emb;  // M x c, one row per scan
  double tr_seconds = 0.0;
  double noise_sigma = 0.0;

  int n_scans() const { return static_cast<int>(emb.rows()); }
  int dim() const { return static_cast<int>(emb.cols()); }
};

/// Sample time of scan k (0-based) under the given timing convention.
double scan_time(const ScanConfig& cfg, int k);

/// Mixes per-shot signal vectors through the HRF. `codes` holds one column per
/// shot in timeline order.
ScanSequence simulate_scans(const ShotTimeline& timeline, const MatF& codes, const HrfParams& hrf,
                            const ScanConfig& cfg, Rng& rng);

/// Convenience overload using the embedder's factor codes.
ScanSequence simulate_scans(const ShotTimeline& timeline, const SemanticEmbedder& embedder,
                            const HrfParams& hrf, const ScanConfig& cfg, Rng& rng);

}  // namespace mshot
