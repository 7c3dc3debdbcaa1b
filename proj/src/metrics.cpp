#include "mshot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

namespace mshot {

namespace {

std::vector<int> compact(const Labeling& l, int& k) {
  std::map<int, int> ids;
  std::vector<int> out(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) {
    auto [it, inserted] = ids.emplace(l[i], static_cast<int>(ids.size()));
    out[i] = it->second;
  }
  k = static_cast<int>(ids.size());
  return out;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

double entropy(const Eigen::VectorXd& sizes, double n) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < sizes.size(); ++i)
    if (sizes(i) > 0) h -= sizes(i) / n * std::log(sizes(i) / n);
  return h;
}

}  // namespace

Contingency contingency(const Labeling& pred, const Labeling& gt) {
  require(pred.size() == gt.size(), "labelings differ in length");
  int kp = 0, kg = 0;
  const auto p = compact(pred, kp);
  const auto g = compact(gt, kg);
  Contingency c;
  c.table = Eigen::MatrixXd::Zero(kp, kg);
  for (std::size_t i = 0; i < p.size(); ++i) c.table(p[i], g[i]) += 1.0;
  c.pred_sizes = c.table.rowwise().sum();
  c.gt_sizes = c.table.colwise().sum().transpose();
  c.n = static_cast<double>(pred.size());
  return c;
}

std::vector<int> hungarian_max(const Eigen::MatrixXd& score) {
  const int rows = static_cast<int>(score.rows()), cols = static_cast<int>(score.cols());
  const int n = std::max(rows, cols);
  if (n == 0) return {};
  const double big = score.size() ? score.maxCoeff() : 0.0;
  // Square cost matrix, 1-based, minimizing big - score (padding cost big).
  std::vector<std::vector<double>> a(n + 1, std::vector<double>(n + 1, 0.0));
  for (int i = 1; i <= n; ++i)
    for (int j = 1; j <= n; ++j)
      a[i][j] = (i <= rows && j <= cols) ? big - score(i - 1, j - 1) : big;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0][j] - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(rows, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] >= 1 && p[j] <= rows && j <= cols) assign[p[j] - 1] = j - 1;
  return assign;
}

double seg_accuracy(const Labeling& pred, const Labeling& gt) {
  require(pred.size() == gt.size(), "seg_accuracy: length mismatch");
  require(!pred.empty(), "seg_accuracy: empty labeling");
  const Contingency c = contingency(pred, gt);
  const auto assign = hungarian_max(c.table);
  double hit = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i)
    if (assign[i] >= 0) hit += c.table(static_cast<Eigen::Index>(i), assign[i]);
  return hit / c.n;
}

double ari(const Labeling& pred, const Labeling& gt) {
  require(pred.size() == gt.size(), "ari: length mismatch");
  require(pred.size() >= 2, "ari: need at least 2 scans");
  const Contingency c = contingency(pred, gt);
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (Eigen::Index i = 0; i < c.table.size(); ++i) index += comb2(c.table.data()[i]);
  for (Eigen::Index i = 0; i < c.pred_sizes.size(); ++i) sa += comb2(c.pred_sizes(i));
  for (Eigen::Index j = 0; j < c.gt_sizes.size(); ++j) sb += comb2(c.gt_sizes(j));
  const double expected = sa * sb / comb2(c.n);
  const double max_index = 0.5 * (sa + sb);
  const double denom = max_index - expected;
  if (std::abs(denom) < 1e-15) return 1.0;
  return (index - expected) / denom;
}

double nmi(const Labeling& pred, const Labeling& gt, NmiNorm norm) {
  require(pred.size() == gt.size(), "nmi: length mismatch");
  require(!pred.empty(), "nmi: empty labeling");
  const Contingency c = contingency(pred, gt);
  const double hp = entropy(c.pred_sizes, c.n);
  const double hg = entropy(c.gt_sizes, c.n);
  if (hp == 0.0 && hg == 0.0) return 1.0;
  if (hp == 0.0 || hg == 0.0) return 0.0;
  double mi = 0.0;
  for (Eigen::Index i = 0; i < c.table.rows(); ++i)
    for (Eigen::Index j = 0; j < c.table.cols(); ++j) {
      const double nij = c.table(i, j);
      if (nij > 0) mi += nij / c.n * std::log(c.n * nij / (c.pred_sizes(i) * c.gt_sizes(j)));
    }
  const double denom = norm == NmiNorm::kGeometric ? std::sqrt(hp * hg) : 0.5 * (hp + hg);
  return std::clamp(mi / denom, 0.0, 1.0);
}

double nway_topk(const Eigen::Ref<const VecF>& query, int gt_index, const MatF& pool,
                 const NwayConfig& cfg) {
  const int pool_size = static_cast<int>(pool.cols());
  require(cfg.n_way >= 2, "nway: N must be >= 2");
  require(cfg.top_k >= 1 && cfg.top_k < cfg.n_way, "nway: K must satisfy 1 <= K < N");
  require(cfg.trials >= 1, "nway: trials must be >= 1");
  require(pool_size >= cfg.n_way, "nway: candidate pool smaller than N");
  require(gt_index >= 0 && gt_index < pool_size, "nway: ground-truth index out of range");
  require(query.size() == pool.rows(), "nway: query width mismatch");

  std::vector<double> sim(pool_size);
  for (int i = 0; i < pool_size; ++i) sim[i] = cosine(query, pool.col(i));

  std::vector<int> others;
  others.reserve(pool_size - 1);
  for (int i = 0; i < pool_size; ++i)
    if (i != gt_index) others.push_back(i);

  Rng rng(cfg.seed);
  int success = 0;
  for (int trial = 0; trial < cfg.trials; ++trial) {
    int rank = 0;
    for (int k = 0; k < cfg.n_way - 1; ++k) {
      const std::size_t j = k + uniform_index(rng, others.size() - k);
      std::swap(others[k], others[j]);
      const int d = others[k];
      if (sim[d] > sim[gt_index] || (sim[d] == sim[gt_index] && d < gt_index)) ++rank;
    }
    if (rank < cfg.top_k) ++success;
  }
  return static_cast<double>(success) / cfg.trials;
}

double ssim(const Frame& a, const Frame& b, const SsimConfig& cfg) {
  require(a.height() == b.height() && a.width() == b.width(), "ssim: frame dimensions differ");
  require(cfg.window >= 1 && cfg.window % 2 == 1, "ssim: window must be odd");
  require(a.height() >= cfg.window && a.width() >= cfg.window, "ssim: frame smaller than window");
  const int w = cfg.window;
  Eigen::MatrixXd g(w, w);
  const int r = w / 2;
  for (int i = 0; i < w; ++i)
    for (int j = 0; j < w; ++j)
      g(i, j) = std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * cfg.sigma * cfg.sigma));
  g /= g.sum();
  const double c1 = std::pow(cfg.k1 * cfg.dynamic_range, 2);
  const double c2 = std::pow(cfg.k2 * cfg.dynamic_range, 2);
  const Eigen::MatrixXd x = a.pixels.cast<double>();
  const Eigen::MatrixXd y = b.pixels.cast<double>();
  const int oh = a.height() - w + 1, ow = a.width() - w + 1;
  double total = 0.0;
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j) {
      const auto px = x.block(i, j, w, w).array();
      const auto py = y.block(i, j, w, w).array();
      const double mx = (g.array() * px).sum();
      const double my = (g.array() * py).sum();
      const double vx = (g.array() * px * px).sum() - mx * mx;
      const double vy = (g.array() * py * py).sum() - my * my;
      const double cxy = (g.array() * px * py).sum() - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  return total / (static_cast<double>(oh) * ow);
}

MeanStderr report_stats(const std::vector<double>& values) {
  require(!values.empty(), "report_stats: empty list");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n) / std::sqrt(n)};
}

std::string format_mean_stderr(const MeanStderr& s) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f±%.2f", s.mean, s.stderr_);
  return buf;
}

}  // namespace mshot
