#include "doctest.h"
#include "test_support.hpp"

#include "mshot/sbp.hpp"

#include <cmath>

using namespace mshot;

namespace {

template <typename S>
Mat<S> random_mat(int r, int c, Rng& rng, double scale = 1.0) {
  Mat<S> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * (2 * uniform01(rng) - 1));
  return m;
}

Mat<double> swap_halves(const Mat<double>& m) {
  const Eigen::Index h = m.cols() / 2;
  Mat<double> out(m.rows(), m.cols());
  out << m.rightCols(h), m.leftCols(h);
  return out;
}

}  // namespace

TEST_CASE("sbp output shapes and range") {
  Rng rng(1);
  SbpParams<float> p(16, 8);
  p.init(rng);
  for (int M = 2; M <= 64; ++M) {
    const Vec<float> probs = sbp_forward(p, random_mat<float>(M, 16, rng));
    REQUIRE(probs.size() == M - 1);
    CHECK(probs.minCoeff() >= 0.0f);
    CHECK(probs.maxCoeff() <= 1.0f);
  }
  CHECK_THROWS_AS(sbp_forward(p, random_mat<float>(1, 16, rng)), InvalidArgument);
  CHECK_THROWS_AS(sbp_forward(p, random_mat<float>(4, 15, rng)), InvalidArgument);
  CHECK_THROWS_AS(SbpParams<float>(16, 7), InvalidArgument);
}

TEST_CASE("zero head and cross-entropy values") {
  Rng rng(2);
  SbpParams<double> p(8, 8);
  p.init(rng);
  p.head_w.setZero();
  const Vec<double> probs = sbp_forward(p, random_mat<double>(6, 8, rng));
  for (Eigen::Index i = 0; i < probs.size(); ++i) CHECK(probs(i) == 0.5);
  CHECK(sbp_loss(probs, BoundaryVector{0, 1, 0, 0, 1}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  Eigen::VectorXd q(2);
  q << 0.9, 0.1;
  CHECK(sbp_loss(q, BoundaryVector{1, 0}) == doctest::Approx(0.105361).epsilon(1e-5));
  Eigen::VectorXd sure(1);
  sure << 0.0;
  CHECK(std::isfinite(sbp_loss(sure, BoundaryVector{1})));
  CHECK_THROWS_AS(sbp_loss(q, BoundaryVector{1}), InvalidArgument);
}

TEST_CASE("sbp gradients match central differences") {
  for (HeadMode mode : {HeadMode::kPair, HeadMode::kDropLast, HeadMode::kDifference}) {
    Rng rng(3);
    SbpParams<double> p(8, 8, mode);
    p.init(rng);
    const Mat<double> x = random_mat<double>(5, 8, rng);
    const BoundaryVector y{0, 1, 0, 1};

    SbpTrace<double> tr;
    const Vec<double> probs = sbp_forward(p, x, &tr);
    SbpParams<double> g = zeros_like(p);
    const Mat<double> dx = sbp_backward(p, tr, sbp_loss_grad_logits(probs, y), g);

    const std::function<double(SbpParams<double>&)> loss = [&](SbpParams<double>& q) {
      return sbp_loss(sbp_forward(q, x), y);
    };
    CHECK(testing::grad_check(p, g, loss) < 1e-3);

    double worst = 0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Mat<double> xp = x, xm = x;
      xp.data()[i] += 1e-5;
      xm.data()[i] -= 1e-5;
      const double num = (sbp_loss(sbp_forward(p, xp), y) - sbp_loss(sbp_forward(p, xm), y)) / 2e-5;
      worst = std::max(worst, std::abs(num - dx.data()[i]) / std::max(std::abs(num) + std::abs(dx.data()[i]), 1e-6));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("encoder gradients including the memory readout") {
  Rng rng(4);
  EncoderParams<double> enc(6, 5);
  enc.init(rng);
  enc.b1 = random_mat<double>(5, 1, rng, 0.1);
  enc.b2 = random_mat<double>(6, 1, rng, 0.1);
  enc.memory = random_mat<double>(7, 6, rng);
  enc.memory_temperature = 0.7;
  const Mat<double> x = random_mat<double>(4, 6, rng);
  const Mat<double> target = random_mat<double>(4, 6, rng);
  auto objective = [&](const EncoderParams<double>& q, const Mat<double>& in) {
    return 0.5 * (encoder_forward(q, in) - target).squaredNorm();
  };

  EncoderTrace<double> tr;
  const Mat<double> out = encoder_forward(enc, x, &tr);
  EncoderParams<double> g = zeros_like(enc);
  const Mat<double> dx = encoder_backward(enc, tr, Mat<double>(out - target), g);

  const std::function<double(EncoderParams<double>&)> loss = [&](EncoderParams<double>& q) {
    return objective(q, x);
  };
  CHECK(testing::grad_check(enc, g, loss) < 1e-3);

  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Mat<double> xp = x, xm = x;
    xp.data()[i] += 1e-5;
    xm.data()[i] -= 1e-5;
    const double num = (objective(enc, xp) - objective(enc, xm)) / 2e-5;
    worst = std::max(worst, std::abs(num - dx.data()[i]) / std::max(std::abs(num) + std::abs(dx.data()[i]), 1e-6));
  }
  CHECK(worst < 1e-3);

  // memory rows are convex combinations; a sharp temperature snaps to the nearest row
  Mat<double> attn;
  const Mat<double> read = memory_readout(enc, x, &attn);
  for (Eigen::Index r = 0; r < attn.rows(); ++r) CHECK(attn.row(r).sum() == doctest::Approx(1.0));
  enc.memory_temperature = 1e-4;
  const Mat<double> snapped = memory_readout(enc, Mat<double>(enc.memory.topRows(3)));
  CHECK((snapped - enc.memory.topRows(3)).cwiseAbs().maxCoeff() < 1e-6);
  (void)read;

  EncoderParams<double> plain;
  CHECK(plain.identity());
  CHECK(encoder_forward(plain, x) == x);
}

TEST_CASE("tied weights give time-reversal equivariance") {
  Rng rng(5);
  SbpParams<double> p(6, 8);
  p.init(rng);
  p.l1b = p.l1f;
  p.l2b = p.l2f;
  p.l2b.wx = swap_halves(p.l2f.wx);
  p.head_w.rightCols(8) = swap_halves(p.head_w.leftCols(8));
  const Mat<double> x = random_mat<double>(7, 6, rng);
  const Mat<double> rev = x.colwise().reverse();
  const Vec<double> a = sbp_forward(p, x);
  const Vec<double> b = sbp_forward(p, rev);
  CHECK((a - Vec<double>(b.reverse())).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("head mode names") {
  for (HeadMode m : {HeadMode::kPair, HeadMode::kDropLast, HeadMode::kDifference})
    CHECK(head_mode_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(head_mode_from_string("attention"), InvalidArgument);
}
