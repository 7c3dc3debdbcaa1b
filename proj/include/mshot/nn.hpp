#pragma once

// Small dense building blocks with hand-written backward passes: parameter
// visiting, an LSTM layer, and the Adam optimizer. Templated on the scalar
// so gradient checks can run in double while training runs in float.

#include "mshot/common.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mshot {

template <typename Scalar>
using ParamVisitor = std::function<void(const std::string&, Mat<Scalar>&)>;

/// Named views into a parameter struct, in a fixed order.
template <typename Scalar>
struct ParamRefs {
  std::vector<std::string> names;
  std::vector<Mat<Scalar>*> mats;

  std::size_t size() const { return mats.size(); }
  Eigen::Index count() const {
    Eigen::Index n = 0;
    for (auto* m : mats) n += m->size();
    return n;
  }
};

template <typename P>
auto refs_of(P& p) {
  using Scalar = typename P::Scalar;
  ParamRefs<Scalar> r;
  p.for_each([&](const std::string& name, Mat<Scalar>& m) {
    r.names.push_back(name);
    r.mats.push_back(&m);
  });
  return r;
}

/// Same shapes as p, zero filled.
template <typename P>
P zeros_like(const P& p) {
  P z = p;
  z.for_each([](const std::string&, auto& m) { m.setZero(); });
  return z;
}

template <typename P>
void add_into(P& acc, P& g, typename P::Scalar scale = 1) {
  auto a = refs_of(acc);
  auto b = refs_of(g);
  for (std::size_t i = 0; i < a.size(); ++i) *a.mats[i] += scale * *b.mats[i];
}

template <typename P>
void scale_in_place(P& p, typename P::Scalar s) {
  p.for_each([&](const std::string&, auto& m) { m *= s; });
}

template <typename P>
typename P::Scalar squared_norm(P& p) {
  typename P::Scalar s = 0;
  p.for_each([&](const std::string&, auto& m) { s += m.squaredNorm(); });
  return s;
}

template <typename P>
bool params_finite(P& p) {
  bool ok = true;
  p.for_each([&](const std::string&, auto& m) { ok = ok && m.allFinite(); });
  return ok;
}

template <typename Scalar>
void init_uniform(Mat<Scalar>& m, double bound, Rng& rng) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      m(i, j) = static_cast<Scalar>((2.0 * uniform01(rng) - 1.0) * bound);
}

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return Scalar(1) / (Scalar(1) + std::exp(-v)); });
}

// ---------------------------------------------------------------------------
// LSTM

template <typename S>
struct LstmParams {
  using Scalar = S;
  Mat<S> wx;  // 4H x In, gate order i f g o
  Mat<S> wh;  // 4H x H
  Mat<S> b;   // 4H x 1

  LstmParams() = default;
  LstmParams(int input, int hidden)
      : wx(Mat<S>::Zero(4 * hidden, input)),
        wh(Mat<S>::Zero(4 * hidden, hidden)),
        b(Mat<S>::Zero(4 * hidden, 1)) {}

  int hidden() const { return static_cast<int>(wh.cols()); }
  int input() const { return static_cast<int>(wx.cols()); }

  void init(Rng& rng) {
    const double k = 1.0 / std::sqrt(static_cast<double>(hidden()));
    init_uniform(wx, k, rng);
    init_uniform(wh, k, rng);
    b.setZero();
    b.block(hidden(), 0, hidden(), 1).setOnes();  // forget bias
  }

  template <typename F>
  void for_each(F&& f, const std::string& prefix = "") {
    f(prefix + "wx", wx);
    f(prefix + "wh", wh);
    f(prefix + "b", b);
  }
};

/// Activations of one pass, columns in processing order.
template <typename S>
struct LstmTrace {
  Mat<S> x, i, f, g, o, c, h;
  bool reverse = false;
};

template <typename S>
struct LstmState {
  Vec<S> h;
  Vec<S> c;
};

/// One recurrent step; fills gate activations when `gates` is non-null.
template <typename S>
LstmState<S> lstm_step(const LstmParams<S>& p, const Eigen::Ref<const Vec<S>>& x,
                       const LstmState<S>& prev, Vec<S>* gates = nullptr) {
  const int H = p.hidden();
  Vec<S> a = p.wx * x + p.wh * prev.h + p.b.col(0);
  Vec<S> i = sigmoid(a.segment(0, H));
  Vec<S> f = sigmoid(a.segment(H, H));
  Vec<S> g = a.segment(2 * H, H).array().tanh().matrix();
  Vec<S> o = sigmoid(a.segment(3 * H, H));
  LstmState<S> next;
  next.c = f.cwiseProduct(prev.c) + i.cwiseProduct(g);
  next.h = o.cwiseProduct(next.c.array().tanh().matrix());
  if (gates) {
    gates->resize(4 * H);
    *gates << i, f, g, o;
  }
  return next;
}

/// Runs the layer over columns of X (In x T); returns hidden states in
/// original time order (H x T).
template <typename S>
Mat<S> lstm_forward(const LstmParams<S>& p, const Mat<S>& X, bool reverse, LstmTrace<S>& tr) {
  const int H = p.hidden();
  const int T = static_cast<int>(X.cols());
  tr.reverse = reverse;
  tr.x.resize(X.rows(), T);
  tr.i.resize(H, T);
  tr.f.resize(H, T);
  tr.g.resize(H, T);
  tr.o.resize(H, T);
  tr.c.resize(H, T);
  tr.h.resize(H, T);
  LstmState<S> st{Vec<S>::Zero(H), Vec<S>::Zero(H)};
  Mat<S> out(H, T);
  Vec<S> gates;
  for (int s = 0; s < T; ++s) {
    const int t = reverse ? T - 1 - s : s;
    tr.x.col(s) = X.col(t);
    st = lstm_step<S>(p, X.col(t), st, &gates);
    tr.i.col(s) = gates.segment(0, H);
    tr.f.col(s) = gates.segment(H, H);
    tr.g.col(s) = gates.segment(2 * H, H);
    tr.o.col(s) = gates.segment(3 * H, H);
    tr.c.col(s) = st.c;
    tr.h.col(s) = st.h;
    out.col(t) = st.h;
  }
  return out;
}

/// Backpropagates dH (H x T, original order); accumulates into grad and
/// returns dX (In x T, original order).
template <typename S>
Mat<S> lstm_backward(const LstmParams<S>& p, const LstmTrace<S>& tr, const Mat<S>& dH,
                     LstmParams<S>& grad) {
  const int H = p.hidden();
  const int T = static_cast<int>(tr.h.cols());
  Mat<S> dX(tr.x.rows(), T);
  Vec<S> dh_next = Vec<S>::Zero(H);
  Vec<S> dc_next = Vec<S>::Zero(H);
  Vec<S> da(4 * H);
  for (int s = T - 1; s >= 0; --s) {
    const int t = tr.reverse ? T - 1 - s : s;
    const Vec<S> dh = dH.col(t) + dh_next;
    const Vec<S> tc = tr.c.col(s).array().tanh().matrix();
    const Vec<S> d_o = dh.cwiseProduct(tc);
    const Vec<S> dc = dh.cwiseProduct(tr.o.col(s)).cwiseProduct(
                          (Vec<S>::Ones(H) - tc.cwiseProduct(tc))) +
                      dc_next;
    const Vec<S> c_prev = s > 0 ? Vec<S>(tr.c.col(s - 1)) : Vec<S>::Zero(H);
    const Vec<S> h_prev = s > 0 ? Vec<S>(tr.h.col(s - 1)) : Vec<S>::Zero(H);
    const auto i = tr.i.col(s).array();
    const auto f = tr.f.col(s).array();
    const auto g = tr.g.col(s).array();
    const auto o = tr.o.col(s).array();
    da.segment(0, H) = (dc.array() * g * i * (1 - i)).matrix();
    da.segment(H, H) = (dc.array() * c_prev.array() * f * (1 - f)).matrix();
    da.segment(2 * H, H) = (dc.array() * i * (1 - g * g)).matrix();
    da.segment(3 * H, H) = (d_o.array() * o * (1 - o)).matrix();
    grad.wx.noalias() += da * tr.x.col(s).transpose();
    grad.wh.noalias() += da * h_prev.transpose();
    grad.b.col(0) += da;
    dX.col(t).noalias() = p.wx.transpose() * da;
    dh_next.noalias() = p.wh.transpose() * da;
    dc_next = dc.cwiseProduct(tr.f.col(s));
  }
  return dX;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm clip; <= 0 disables
};

template <typename P>
class Adam {
 public:
  using Scalar = typename P::Scalar;

  Adam() = default;
  Adam(const P& params, AdamConfig cfg) : cfg_(cfg), m_(zeros_like(params)), v_(zeros_like(params)) {}

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  P& first_moment() { return m_; }
  P& second_moment() { return v_; }

  void step(P& params, P& grad) {
    if (cfg_.clip_norm > 0) {
      const double n = std::sqrt(static_cast<double>(squared_norm(grad)));
      if (n > cfg_.clip_norm) scale_in_place(grad, static_cast<Scalar>(cfg_.clip_norm / n));
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto p = refs_of(params);
    auto g = refs_of(grad);
    auto m = refs_of(m_);
    auto v = refs_of(v_);
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    const auto lr = static_cast<Scalar>(cfg_.lr / bc1);
    const auto inv_bc2 = static_cast<Scalar>(1.0 / bc2);
    const auto eps = static_cast<Scalar>(cfg_.eps);
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& gk = *g.mats[k];
      *m.mats[k] = b1 * *m.mats[k] + (1 - b1) * gk;
      *v.mats[k] = b2 * *v.mats[k] + (1 - b2) * gk.cwiseProduct(gk);
      p.mats[k]->array() -=
          lr * m.mats[k]->array() / ((v.mats[k]->array() * inv_bc2).sqrt() + eps);
    }
  }

 private:
  AdamConfig cfg_;
  P m_;
  P v_;
  long t_ = 0;
};

}  // namespace mshot
