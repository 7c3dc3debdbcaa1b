#pragma once

// Shot boundary predictor: a residual scan encoder, a two-layer
// bidirectional LSTM and a linear boundary head over adjacent scan pairs,
// trained with binary cross-entropy.

#include "mshot/nn.hpp"
#include "mshot/partition.hpp"

#include <algorithm>
#include <string>

namespace mshot {

/// Scan encoder. An optional fixed memory of K reference embeddings first
/// replaces each scan x by softmax(P x / T)^T P; then a shallow residual
/// layer e = x + W2 tanh(W1 x + b1) + b2 (absent in the identity form).
template <typename S>
struct EncoderParams {
  using Scalar = S;
  Mat<S> w1, b1, w2, b2;
  Mat<S> memory;  // K x c, not trained
  S memory_temperature = 0;

  EncoderParams() = default;
  EncoderParams(int dim, int hidden)
      : w1(Mat<S>::Zero(hidden, dim)),
        b1(Mat<S>::Zero(hidden, 1)),
        w2(Mat<S>::Zero(dim, hidden)),
        b2(Mat<S>::Zero(dim, 1)) {}

  bool identity() const { return w1.size() == 0; }
  bool has_memory() const { return memory.size() > 0; }

  void init(Rng& rng) {
    if (identity()) return;
    init_uniform(w1, 1.0 / std::sqrt(static_cast<double>(w1.cols())), rng);
    init_uniform(w2, 0.1 / std::sqrt(static_cast<double>(w2.cols())), rng);
  }

  template <typename F>
  void for_each(F&& f, const std::string& prefix = "encoder.") {
    if (identity()) return;
    f(prefix + "w1", w1);
    f(prefix + "b1", b1);
    f(prefix + "w2", w2);
    f(prefix + "b2", b2);
  }
};

template <typename S>
struct EncoderTrace {
  Mat<S> attn;  // M x K memory weights
  Mat<S> x;     // c x M
  Mat<S> a;     // hidden activations
};

/// scans: M x c. Returns the memory readout, M x c.
template <typename S>
Mat<S> memory_readout(const EncoderParams<S>& p, const Mat<S>& scans, Mat<S>* attn = nullptr) {
  Mat<S> w = scans * p.memory.transpose() / p.memory_temperature;
  for (Eigen::Index r = 0; r < w.rows(); ++r) {
    w.row(r) = (w.row(r).array() - w.row(r).maxCoeff()).exp().matrix();
    w.row(r) /= w.row(r).sum();
  }
  Mat<S> out = w * p.memory;
  if (attn) *attn = std::move(w);
  return out;
}

/// scans: M x c. Returns encoded M x c.
template <typename S>
Mat<S> encoder_forward(const EncoderParams<S>& p, const Mat<S>& scans, EncoderTrace<S>* tr = nullptr) {
  Mat<S> in = p.has_memory() ? memory_readout(p, scans, tr ? &tr->attn : nullptr) : scans;
  if (p.identity()) return in;
  Mat<S> x = in.transpose();
  Mat<S> a = ((p.w1 * x).colwise() + p.b1.col(0)).array().tanh().matrix();
  Mat<S> e = x + ((p.w2 * a).colwise() + p.b2.col(0));
  if (tr) {
    tr->x = std::move(x);
    tr->a = a;
  }
  return e.transpose();
}

/// d_out: M x c gradient wrt the encoder output. Returns gradient wrt scans.
template <typename S>
Mat<S> encoder_backward(const EncoderParams<S>& p, const EncoderTrace<S>& tr, const Mat<S>& d_out,
                        EncoderParams<S>& grad) {
  Mat<S> d_in = d_out;
  if (!p.identity()) {
    const Mat<S> de = d_out.transpose();
    grad.w2.noalias() += de * tr.a.transpose();
    grad.b2.col(0) += de.rowwise().sum();
    const Mat<S> dz = (p.w2.transpose() * de).cwiseProduct(
        (Mat<S>::Ones(tr.a.rows(), tr.a.cols()) - tr.a.cwiseProduct(tr.a)));
    grad.w1.noalias() += dz * tr.x.transpose();
    grad.b1.col(0) += dz.rowwise().sum();
    d_in = (de + p.w1.transpose() * dz).transpose();
  }
  if (!p.has_memory()) return d_in;
  const Mat<S> da = d_in * p.memory.transpose();
  const Vec<S> dot = da.cwiseProduct(tr.attn).rowwise().sum();
  const Mat<S> dl = tr.attn.cwiseProduct(da.colwise() - dot);
  return dl * p.memory / p.memory_temperature;
}

/// How M hidden states become M-1 boundary logits.
enum class HeadMode { kPair, kDropLast, kDifference };

HeadMode head_mode_from_string(const std::string& name);
std::string to_string(HeadMode m);

template <typename S>
struct SbpParams {
  using Scalar = S;
  LstmParams<S> l1f, l1b, l2f, l2b;
  Mat<S> head_w;  // 1 x (2d) for pair mode, 1 x d otherwise
  Mat<S> head_b;  // 1 x 1
  HeadMode mode = HeadMode::kPair;

  SbpParams() = default;
  SbpParams(int input_dim, int hidden_d, HeadMode m = HeadMode::kPair) : mode(m) {
    require(hidden_d >= 2 && hidden_d % 2 == 0, "sbp hidden width d must be even and >= 2");
    const int h = hidden_d / 2;
    l1f = LstmParams<S>(input_dim, h);
    l1b = LstmParams<S>(input_dim, h);
    l2f = LstmParams<S>(hidden_d, h);
    l2b = LstmParams<S>(hidden_d, h);
    head_w = Mat<S>::Zero(1, m == HeadMode::kPair ? 2 * hidden_d : hidden_d);
    head_b = Mat<S>::Zero(1, 1);
  }

  int hidden_d() const { return 2 * l1f.hidden(); }
  int input_dim() const { return l1f.input(); }

  void init(Rng& rng) {
    l1f.init(rng);
    l1b.init(rng);
    l2f.init(rng);
    l2b.init(rng);
    init_uniform(head_w, 1.0 / std::sqrt(static_cast<double>(head_w.cols())), rng);
    head_b.setZero();
  }

  template <typename F>
  void for_each(F&& f, const std::string& prefix = "sbp.") {
    l1f.for_each(f, prefix + "l1f.");
    l1b.for_each(f, prefix + "l1b.");
    l2f.for_each(f, prefix + "l2f.");
    l2b.for_each(f, prefix + "l2b.");
    f(prefix + "head_w", head_w);
    f(prefix + "head_b", head_b);
  }
};

template <typename S>
struct SbpTrace {
  LstmTrace<S> t1f, t1b, t2f, t2b;
  Mat<S> h1, h2;  // d x M
  Vec<S> logits;
};

/// Boundary probabilities for an M x c scan matrix; M-1 entries.
template <typename S>
Vec<S> sbp_forward(const SbpParams<S>& p, const Mat<S>& emb, SbpTrace<S>* trace = nullptr) {
  const int M = static_cast<int>(emb.rows());
  require(M >= 2, "sbp_forward: need at least 2 scans");
  require(emb.cols() == p.input_dim(), "sbp_forward: embedding width mismatch");
  SbpTrace<S> local;
  SbpTrace<S>& tr = trace ? *trace : local;
  const int h = p.l1f.hidden();
  const Mat<S> x = emb.transpose();
  tr.h1.resize(2 * h, M);
  tr.h1.topRows(h) = lstm_forward(p.l1f, x, false, tr.t1f);
  tr.h1.bottomRows(h) = lstm_forward(p.l1b, x, true, tr.t1b);
  tr.h2.resize(2 * h, M);
  tr.h2.topRows(h) = lstm_forward(p.l2f, tr.h1, false, tr.t2f);
  tr.h2.bottomRows(h) = lstm_forward(p.l2b, tr.h1, true, tr.t2b);
  const int d = 2 * h;
  tr.logits.resize(M - 1);
  for (int i = 0; i + 1 < M; ++i) {
    S z = p.head_b(0, 0);
    switch (p.mode) {
      case HeadMode::kPair:
        z += p.head_w.leftCols(d).row(0).dot(tr.h2.col(i)) +
             p.head_w.rightCols(d).row(0).dot(tr.h2.col(i + 1));
        break;
      case HeadMode::kDropLast:
        z += p.head_w.row(0).dot(tr.h2.col(i));
        break;
      case HeadMode::kDifference:
        z += p.head_w.row(0).dot(tr.h2.col(i + 1) - tr.h2.col(i));
        break;
    }
    tr.logits(i) = z;
  }
  return sigmoid(tr.logits);
}

/// Backprop from d(loss)/d(logits); returns gradient wrt emb (M x c).
template <typename S>
Mat<S> sbp_backward(const SbpParams<S>& p, const SbpTrace<S>& tr, const Vec<S>& d_logits,
                    SbpParams<S>& grad) {
  const int M = static_cast<int>(tr.h2.cols());
  const int h = p.l1f.hidden();
  const int d = 2 * h;
  Mat<S> dh2 = Mat<S>::Zero(d, M);
  for (int i = 0; i + 1 < M; ++i) {
    const S g = d_logits(i);
    grad.head_b(0, 0) += g;
    switch (p.mode) {
      case HeadMode::kPair:
        grad.head_w.leftCols(d).row(0) += g * tr.h2.col(i).transpose();
        grad.head_w.rightCols(d).row(0) += g * tr.h2.col(i + 1).transpose();
        dh2.col(i) += g * p.head_w.leftCols(d).row(0).transpose();
        dh2.col(i + 1) += g * p.head_w.rightCols(d).row(0).transpose();
        break;
      case HeadMode::kDropLast:
        grad.head_w.row(0) += g * tr.h2.col(i).transpose();
        dh2.col(i) += g * p.head_w.row(0).transpose();
        break;
      case HeadMode::kDifference:
        grad.head_w.row(0) += g * (tr.h2.col(i + 1) - tr.h2.col(i)).transpose();
        dh2.col(i + 1) += g * p.head_w.row(0).transpose();
        dh2.col(i) -= g * p.head_w.row(0).transpose();
        break;
    }
  }
  Mat<S> dh1 = lstm_backward(p.l2f, tr.t2f, Mat<S>(dh2.topRows(h)), grad.l2f);
  dh1 += lstm_backward(p.l2b, tr.t2b, Mat<S>(dh2.bottomRows(h)), grad.l2b);
  Mat<S> dx = lstm_backward(p.l1f, tr.t1f, Mat<S>(dh1.topRows(h)), grad.l1f);
  dx += lstm_backward(p.l1b, tr.t1b, Mat<S>(dh1.bottomRows(h)), grad.l1b);
  return dx.transpose();
}

inline constexpr double kBceEps = 1e-7;

/// Mean binary cross-entropy over boundary positions; probs clamped to
/// [eps, 1-eps] inside the logs.
template <typename Derived>
double sbp_loss(const Eigen::MatrixBase<Derived>& probs, const BoundaryVector& y) {
  require(static_cast<std::size_t>(probs.size()) == y.size(), "sbp_loss: length mismatch");
  require(!y.empty(), "sbp_loss: no boundary positions");
  double s = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(static_cast<double>(probs(i)), kBceEps, 1.0 - kBceEps);
    s += y[i] ? std::log(p) : std::log(1.0 - p);
  }
  return -s / static_cast<double>(y.size());
}

/// d(sbp_loss)/d(logits) of the unclamped objective, (p - y) / (M - 1).
template <typename S>
Vec<S> sbp_loss_grad_logits(const Vec<S>& probs, const BoundaryVector& y) {
  require(static_cast<std::size_t>(probs.size()) == y.size(), "sbp_loss: length mismatch");
  const S n = static_cast<S>(y.size());
  Vec<S> g(probs.size());
  for (Eigen::Index i = 0; i < probs.size(); ++i) g(i) = (probs(i) - S(y[i] ? 1 : 0)) / n;
  return g;
}

}  // namespace mshot
