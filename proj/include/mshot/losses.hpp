#pragma once

// Auxiliary objectives: symmetric InfoNCE alignment against frozen
// keyframe/caption embeddings, noise-prediction MSE through a frozen toy
// denoiser, and the uncertainty-weighted total loss.

#include "mshot/nn.hpp"

#include <array>
#include <functional>
#include <string>

namespace mshot {

namespace detail {

template <typename S>
Mat<S> normalize_rows(const Mat<S>& a, Vec<S>& norms) {
  norms = a.rowwise().norm();
  Mat<S> out = a;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    if (norms(i) > 0) out.row(i) /= norms(i);
  return out;
}

// Gradient through row normalization a_hat = a / |a|.
template <typename S>
Mat<S> normalize_rows_backward(const Mat<S>& a_hat, const Vec<S>& norms, const Mat<S>& d_hat) {
  Mat<S> d(a_hat.rows(), a_hat.cols());
  for (Eigen::Index i = 0; i < a_hat.rows(); ++i) {
    if (!(norms(i) > 0)) {
      d.row(i).setZero();
      continue;
    }
    const S proj = a_hat.row(i).dot(d_hat.row(i));
    d.row(i) = (d_hat.row(i) - proj * a_hat.row(i)) / norms(i);
  }
  return d;
}

}  // namespace detail

/// Symmetric InfoNCE over the cosine-similarity matrix of rows of a and b
/// scaled by 1/temperature. Gradients wrt a, b and log(temperature) are
/// accumulated when the pointers are non-null.
template <typename S>
double info_nce(const Mat<S>& a, const Mat<S>& b, S log_temperature, Mat<S>* d_a = nullptr,
                Mat<S>* d_b = nullptr, S* d_log_temperature = nullptr) {
  const Eigen::Index n = a.rows();
  require(n >= 2, "contrastive loss needs at least 2 rows");
  require(b.rows() == n && b.cols() == a.cols(), "contrastive loss: shape mismatch");
  Vec<S> na, nb;
  const Mat<S> ah = detail::normalize_rows(a, na);
  const Mat<S> bh = detail::normalize_rows(b, nb);
  const S inv_t = std::exp(-log_temperature);
  const Mat<S> logits = inv_t * ah * bh.transpose();

  Mat<S> p_rows(n, n), p_cols(n, n);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const S m = logits.row(i).maxCoeff();
    const S lse = m + std::log((logits.row(i).array() - m).exp().sum());
    loss += static_cast<double>(lse - logits(i, i));
    p_rows.row(i) = (logits.row(i).array() - lse).exp();
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const S m = logits.col(j).maxCoeff();
    const S lse = m + std::log((logits.col(j).array() - m).exp().sum());
    loss += static_cast<double>(lse - logits(j, j));
    p_cols.col(j) = (logits.col(j).array() - lse).exp();
  }
  loss /= 2.0 * static_cast<double>(n);

  if (d_a || d_b || d_log_temperature) {
    const Mat<S> eye = Mat<S>::Identity(n, n);
    const Mat<S> dl = ((p_rows - eye) + (p_cols - eye)) / (S(2) * S(n));
    if (d_a) *d_a += detail::normalize_rows_backward<S>(ah, na, Mat<S>(inv_t * dl * bh));
    if (d_b) *d_b += detail::normalize_rows_backward<S>(bh, nb, Mat<S>(inv_t * dl.transpose() * ah));
    if (d_log_temperature) *d_log_temperature += -(dl.cwiseProduct(logits)).sum();
  }
  return loss;
}

/// Rows of shot, keyframe and caption embeddings for one contrastive batch.
template <typename S>
struct ContrastiveBatch {
  Mat<S> shot;     // N x c
  Mat<S> image;    // N x c
  Mat<S> caption;  // N x c
};

/// 1/2 (InfoNCE(shot, image) + InfoNCE(shot, caption)).
template <typename S>
double align_loss(const ContrastiveBatch<S>& batch, S log_temperature, Mat<S>* d_shot = nullptr,
                  S* d_log_temperature = nullptr) {
  require(batch.shot.rows() == batch.image.rows() && batch.shot.rows() == batch.caption.rows(),
          "align_loss: batch row counts differ");
  Mat<S> g;
  if (d_shot) g = Mat<S>::Zero(batch.shot.rows(), batch.shot.cols());
  S dt = 0;
  const double li = info_nce<S>(batch.shot, batch.image, log_temperature, d_shot ? &g : nullptr,
                                nullptr, d_log_temperature ? &dt : nullptr);
  const double lt = info_nce<S>(batch.shot, batch.caption, log_temperature,
                                d_shot ? &g : nullptr, nullptr, d_log_temperature ? &dt : nullptr);
  if (d_shot) *d_shot += g / S(2);
  if (d_log_temperature) *d_log_temperature += dt / S(2);
  return 0.5 * (li + lt);
}

// ---------------------------------------------------------------------------
// Noise prediction

/// Frozen surrogate denoiser. The 2-layer perceptron refines the
/// conditioning into a clean-signal estimate x0 = cond + scale * MLP(...),
/// and the predicted noise is (x_t - sqrt(abar) x0) / sqrt(1 - abar).
template <typename S>
struct DiffusionToy {
  int dim = 0;
  int steps = 50;
  int time_dim = 8;
  S refine_scale = S(0.1);
  Vec<S> alpha_bar;  // index t-1 for t in [1, steps]
  Mat<S> w1, b1, w2;  // hidden x (2 dim + time_dim), hidden x 1, dim x hidden

  static DiffusionToy make(int dim, std::uint64_t seed, int steps = 50, int hidden = 64) {
    require(dim >= 1 && steps >= 1 && hidden >= 1, "DiffusionToy: invalid sizes");
    DiffusionToy t;
    t.dim = dim;
    t.steps = steps;
    t.alpha_bar.resize(steps);
    double ab = 1.0;
    for (int k = 0; k < steps; ++k) {
      const double beta = steps == 1 ? 0.01 : 0.01 + (0.2 - 0.01) * k / (steps - 1);
      ab *= 1.0 - beta;
      t.alpha_bar(k) = static_cast<S>(ab);
    }
    Rng rng(derive_seed(seed, hash_tag("denoiser")));
    const int in = 2 * dim + t.time_dim;
    t.w1 = Mat<S>::Zero(hidden, in);
    t.b1 = Mat<S>::Zero(hidden, 1);
    t.w2 = Mat<S>::Zero(dim, hidden);
    init_uniform(t.w1, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    init_uniform(t.b1, 0.1, rng);
    init_uniform(t.w2, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    return t;
  }

  Vec<S> time_embedding(int t) const {
    Vec<S> e(time_dim);
    for (int k = 0; k < time_dim / 2; ++k) {
      const double freq = std::pow(100.0, -static_cast<double>(k) / (time_dim / 2));
      e(2 * k) = static_cast<S>(std::sin(t * freq));
      e(2 * k + 1) = static_cast<S>(std::cos(t * freq));
    }
    return e;
  }

  /// Predicted noise for rows of x_t given rows of cond; optionally returns
  /// d(loss)/d(cond) given d(loss)/d(prediction).
  Mat<S> predict(const Mat<S>& x_t, const Mat<S>& cond, int t) const {
    Mat<S> unused;
    return run(x_t, cond, t, nullptr, &unused);
  }

  Mat<S> cond_gradient(const Mat<S>& x_t, const Mat<S>& cond, int t, const Mat<S>& d_pred) const {
    Mat<S> d_cond;
    run(x_t, cond, t, &d_pred, &d_cond);
    return d_cond;
  }

 private:
  Mat<S> run(const Mat<S>& x_t, const Mat<S>& cond, int t, const Mat<S>* d_pred,
             Mat<S>* d_cond) const {
    const S ab = alpha_bar(t - 1);
    const S sa = std::sqrt(ab), sn = std::sqrt(S(1) - ab);
    const Eigen::Index n = x_t.rows();
    Mat<S> z(2 * dim + time_dim, n);
    z.topRows(dim) = x_t.transpose();
    z.middleRows(dim, dim) = cond.transpose();
    z.bottomRows(time_dim) = time_embedding(t).replicate(1, n);
    const Mat<S> a = ((w1 * z).colwise() + b1.col(0)).array().tanh().matrix();
    const Mat<S> x0 = cond.transpose() + refine_scale * (w2 * a);
    const Mat<S> pred = (x_t.transpose() - sa * x0) / sn;
    if (d_pred) {
      const Mat<S> dx0 = -(sa / sn) * d_pred->transpose();
      const Mat<S> da = refine_scale * (w2.transpose() * dx0);
      const Mat<S> dz = da.cwiseProduct((Mat<S>::Ones(a.rows(), a.cols()) - a.cwiseProduct(a)));
      const Mat<S> dzin = w1.transpose() * dz;
      *d_cond = (dx0 + dzin.middleRows(dim, dim)).transpose();
    }
    return pred.transpose();
  }
};

/// Denoiser override for tests: (x_t, cond, t) -> predicted noise rows.
template <typename S>
using DenoiserFn = std::function<Mat<S>(const Mat<S>&, const Mat<S>&, int)>;

/// Mean over rows and channels of (eps_gt - eps_pred)^2, with
/// x_t = sqrt(abar_t) image + sqrt(1 - abar_t) eps_gt.
template <typename S>
double mse_loss(const DiffusionToy<S>& toy, const Mat<S>& image, const Mat<S>& shot, int t,
                Rng& rng, Mat<S>* d_shot = nullptr, const DenoiserFn<S>* override_fn = nullptr) {
  require(t >= 1 && t <= toy.steps, "mse_loss: timestep out of range");
  require(image.rows() == shot.rows() && image.cols() == shot.cols(), "mse_loss: shape mismatch");
  require(image.cols() == toy.dim, "mse_loss: width mismatch");
  NormalSampler normal(rng);
  Mat<S> eps(image.rows(), image.cols());
  for (Eigen::Index i = 0; i < eps.rows(); ++i)
    for (Eigen::Index j = 0; j < eps.cols(); ++j) eps(i, j) = static_cast<S>(normal());
  const S ab = toy.alpha_bar(t - 1);
  const Mat<S> x_t = std::sqrt(ab) * image + std::sqrt(S(1) - ab) * eps;
  const Mat<S> pred = override_fn ? (*override_fn)(x_t, shot, t) : toy.predict(x_t, shot, t);
  const Mat<S> diff = eps - pred;
  const double n = static_cast<double>(diff.size());
  if (d_shot && !override_fn) {
    const Mat<S> d_pred = (S(-2) / S(n)) * diff;
    *d_shot += toy.cond_gradient(x_t, shot, t, d_pred);
  }
  return static_cast<double>(diff.squaredNorm()) / n;
}

// ---------------------------------------------------------------------------
// Loss combination

enum class WeightMode { kUncertainty, kPlain };

WeightMode weight_mode_from_string(const std::string& name);
std::string to_string(WeightMode m);

inline constexpr double kPlainWeightFloor = 1e-3;

/// Learnable weights for caption, align, mse (in that order). In
/// uncertainty mode the values are log-precisions s_j with weight exp(-s_j);
/// in plain mode they are the weights themselves, kept >= a small floor.
template <typename S>
struct LossWeights {
  using Scalar = S;
  Mat<S> s = Mat<S>::Zero(3, 1);
  WeightMode mode = WeightMode::kUncertainty;

  S weight(int j) const { return mode == WeightMode::kUncertainty ? std::exp(-s(j, 0)) : s(j, 0); }

  void init() { s.setConstant(mode == WeightMode::kUncertainty ? S(0) : S(1)); }
  void project() {
    if (mode == WeightMode::kPlain) s = s.cwiseMax(static_cast<S>(kPlainWeightFloor));
  }

  template <typename F>
  void for_each(F&& f, const std::string& prefix = "weights.") {
    f(prefix + "s", s);
  }
};

struct LossTerms {
  double sbp = 0.0;
  double caption = 0.0;
  double align = 0.0;
  double mse = 0.0;
};

struct LossSwitches {
  bool sbp = true;
  bool caption = true;
  bool align = true;
  bool mse = true;
};

/// l_sbp + sum_j [exp(-s_j) l_j + s_j] over enabled auxiliary terms (or
/// l_sbp + sum_j lambda_j l_j in plain mode).
template <typename S>
double total_loss(const LossTerms& l, const LossWeights<S>& w, const LossSwitches& on = {}) {
  const std::array<double, 3> terms{l.caption, l.align, l.mse};
  for (double v : {l.sbp, l.caption, l.align, l.mse})
    require(std::isfinite(v), "total_loss: non-finite loss term");
  require(w.s.allFinite(), "total_loss: non-finite weight parameter");
  const std::array<bool, 3> enabled{on.caption, on.align, on.mse};
  double total = on.sbp ? l.sbp : 0.0;
  for (int j = 0; j < 3; ++j) {
    if (!enabled[j]) continue;
    const double sj = static_cast<double>(w.s(j, 0));
    if (w.mode == WeightMode::kUncertainty)
      total += std::exp(-sj) * terms[j] + sj;
    else
      total += sj * terms[j];
  }
  return total;
}

/// Multipliers applied to each term's gradient, and d(total)/d(s).
template <typename S>
struct TotalLossGrad {
  std::array<double, 4> term_scale{};  // sbp, caption, align, mse
  Mat<S> ds = Mat<S>::Zero(3, 1);
};

template <typename S>
TotalLossGrad<S> total_loss_grad(const LossTerms& l, const LossWeights<S>& w,
                                 const LossSwitches& on = {}) {
  TotalLossGrad<S> g;
  const std::array<double, 3> terms{l.caption, l.align, l.mse};
  const std::array<bool, 3> enabled{on.caption, on.align, on.mse};
  g.term_scale[0] = on.sbp ? 1.0 : 0.0;
  for (int j = 0; j < 3; ++j) {
    if (!enabled[j]) continue;
    const double sj = static_cast<double>(w.s(j, 0));
    if (w.mode == WeightMode::kUncertainty) {
      g.term_scale[j + 1] = std::exp(-sj);
      g.ds(j, 0) = static_cast<S>(-std::exp(-sj) * terms[j] + 1.0);
    } else {
      g.term_scale[j + 1] = sj;
      g.ds(j, 0) = static_cast<S>(terms[j]);
    }
  }
  return g;
}

}  // namespace mshot
