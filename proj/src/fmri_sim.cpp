#include "mshot/fmri_sim.hpp"

#include <cmath>

namespace mshot {

void HrfParams::validate() const {
  require(a1 > 0 && b1 > 0 && a2 > 0 && b2 > 0, "HRF shape/scale parameters must be positive");
  require(undershoot_ratio > 0, "HRF undershoot ratio must be positive");
  require(support_seconds > 0, "HRF support must be positive");
}

double gamma_density(double t, double a, double b) {
  if (t <= 0.0) return 0.0;
  return std::exp((a - 1.0) * std::log(t) - t / b - std::lgamma(a) - a * std::log(b));
}

double hrf_value(const HrfParams& p, double t) {
  return gamma_density(t, p.a1, p.b1) - p.undershoot_ratio * gamma_density(t, p.a2, p.b2);
}

Eigen::VectorXd hrf_kernel(const HrfParams& p, double dt) {
  p.validate();
  require(dt > 0, "hrf_kernel: dt must be positive");
  require(p.support_seconds >= 10.0 * dt, "hrf_kernel: support must cover at least 10 samples");
  const int n = static_cast<int>(std::floor(p.support_seconds / dt + 1e-9)) + 1;
  Eigen::VectorXd k(n);
  for (int i = 0; i < n; ++i) k(i) = hrf_value(p, i * dt);
  const double l1 = k.cwiseAbs().sum();
  require(l1 > 0, "hrf_kernel: kernel has zero mass");
  return k / l1;
}

double ShotTimeline::total_duration() const {
  double s = 0.0;
  for (const auto& sh : shots) s += sh.duration_seconds;
  return s;
}

void ShotTimeline::validate() const {
  require(!shots.empty(), "timeline must contain at least one shot");
  for (const auto& sh : shots) require(sh.duration_seconds > 0, "shot durations must be positive");
}

double scan_time(const ScanConfig& cfg, int k) {
  const double base = cfg.timing == ScanTiming::kMidpoint ? (k + 0.5) * cfg.tr_seconds
                                                          : (k + 1) * cfg.tr_seconds;
  return base + cfg.offset_seconds;
}

ScanSequence simulate_scans(const ShotTimeline& timeline, const MatF& codes, const HrfParams& hrf,
                            const ScanConfig& cfg, Rng& rng) {
  timeline.validate();
  require(cfg.n_scans >= 1, "simulate_scans: M must be >= 1");
  require(cfg.tr_seconds > 0, "simulate_scans: tr must be positive");
  require(cfg.dt > 0, "simulate_scans: dt must be positive");
  require(cfg.noise_sigma >= 0, "simulate_scans: noise sigma must be non-negative");
  require(static_cast<std::size_t>(codes.cols()) == timeline.shots.size(),
          "simulate_scans: one code column per shot required");
  const double last = scan_time(cfg, cfg.n_scans - 1);
  require(last <= timeline.total_duration() + hrf.support_seconds + 1e-9,
          "simulate_scans: scans extend past stimulus plus HRF support");

  const Eigen::VectorXd kernel = hrf_kernel(hrf, cfg.dt);
  const int c = static_cast<int>(codes.rows());

  // Boxcar on the fine grid: grid cell i covers [i*dt, (i+1)*dt).
  const int n_grid = static_cast<int>(std::llround(timeline.total_duration() / cfg.dt));
  std::vector<int> owner(n_grid, -1);
  double start = 0.0;
  for (std::size_t s = 0; s < timeline.shots.size(); ++s) {
    const double end = start + timeline.shots[s].duration_seconds;
    const int i0 = static_cast<int>(std::llround(start / cfg.dt));
    const int i1 = static_cast<int>(std::llround(end / cfg.dt));
    for (int i = std::max(0, i0); i < std::min(n_grid, i1); ++i) owner[i] = static_cast<int>(s);
    start = end;
  }

  const Eigen::MatrixXd codes_d = codes.cast<double>();
  ScanSequence out;
  out.tr_seconds = cfg.tr_seconds;
  out.noise_sigma = cfg.noise_sigma;
  out.emb.resize(cfg.n_scans, c);
  NormalSampler normal(rng);
  for (int k = 0; k < cfg.n_scans; ++k) {
    // Response at grid index g: sum_i box[i] * kernel[g - i], causal.
    const int g = static_cast<int>(std::llround(scan_time(cfg, k) / cfg.dt));
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(c);
    for (int i = 0; i < n_grid && i <= g; ++i) {
      const int lag = g - i;
      if (lag >= kernel.size() || owner[i] < 0) continue;
      acc += kernel(lag) * codes_d.col(owner[i]);
    }
    for (int j = 0; j < c; ++j) acc(j) += cfg.noise_sigma * normal();
    out.emb.row(k) = acc.transpose().cast<float>();
  }
  return out;
}

ScanSequence simulate_scans(const ShotTimeline& timeline, const SemanticEmbedder& embedder,
                            const HrfParams& hrf, const ScanConfig& cfg, Rng& rng) {
  MatF codes(embedder.dim(), static_cast<Eigen::Index>(timeline.shots.size()));
  for (std::size_t s = 0; s < timeline.shots.size(); ++s)
    codes.col(static_cast<Eigen::Index>(s)) = embedder.factor_code(timeline.shots[s].factor);
  return simulate_scans(timeline, codes, hrf, cfg, rng);
}

}  // namespace mshot
