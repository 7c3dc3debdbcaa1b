#include "doctest.h"
#include "test_support.hpp"

#include "mshot/captioner.hpp"

#include <cmath>
#include <numeric>

using namespace mshot;

namespace {

struct Fixture {
  FactorSpace space;
  Lexicon lex{space};
  SemanticEmbedder emb{space, 64, 7};
  DecoderConfig cfg;

  Fixture() { cfg.vocab = lex.vocab_size(); }
};

// Trains on every factor not in `held_out`; returns the per-epoch mean loss.
std::vector<double> fit(DecoderParams<float>& p, const Fixture& fx, const std::vector<int>& train_ids,
                        int epochs, double lr) {
  Adam<DecoderParams<float>> opt(p, AdamConfig{lr, 0.9, 0.999, 1e-8, 5.0});
  std::vector<double> curve;
  Rng rng(17);
  std::vector<int> order = train_ids;
  for (int e = 0; e < epochs; ++e) {
    shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    for (std::size_t b = 0; b < order.size(); b += 16) {
      DecoderParams<float> g = zeros_like(p);
      const std::size_t end = std::min(order.size(), b + 16);
      for (std::size_t k = b; k < end; ++k) {
        const ShotFactor f = fx.space.factor_at(order[k]);
        const VecF code = fx.emb.factor_code(f);
        sum += caption_loss<float>(p, code, fx.lex.caption_of(f).tokens, fx.lex.instruction_tokens(), &g);
      }
      scale_in_place(g, 1.0f / static_cast<float>(end - b));
      opt.step(p, g);
    }
    curve.push_back(sum / order.size());
  }
  return curve;
}

}  // namespace

TEST_CASE("uniform decoder gives T log V") {
  Fixture fx;
  Rng rng(1);
  DecoderParams<double> p(fx.cfg);
  p.init(rng);
  p.out_w.setZero();
  p.out_b.setZero();
  const Caption c = fx.lex.caption_of({3, 2, 1});
  const int T = static_cast<int>(c.tokens.size()) - 1;
  const Vec<double> e = fx.emb.factor_code({3, 2, 1}).cast<double>();
  CHECK(caption_loss<double>(p, e, c.tokens, fx.lex.instruction_tokens()) ==
        doctest::Approx(T * std::log(static_cast<double>(fx.lex.vocab_size()))).epsilon(1e-12));
}

TEST_CASE("loss factorizes over greedy steps and is nonnegative") {
  Fixture fx;
  Rng rng(2);
  DecoderParams<double> p(fx.cfg);
  p.init(rng);
  const Caption c = fx.lex.caption_of({1, 4, 2});
  const Vec<double> e = fx.emb.factor_code({1, 4, 2}).cast<double>();
  const double loss = caption_loss<double>(p, e, c.tokens, fx.lex.instruction_tokens());
  CHECK(loss >= 0.0);

  // replay the recurrence by hand
  const int H = p.core.hidden();
  LstmState<double> st{Vec<double>::Zero(H), Vec<double>::Zero(H)};
  for (int t : fx.lex.instruction_tokens()) st = lstm_step<double>(p.core, p.tok.col(t), st);
  st = lstm_step<double>(p.core, Vec<double>(p.proj_w * e + p.proj_b.col(0)), st);
  double manual = 0;
  for (std::size_t k = 0; k + 1 < c.tokens.size(); ++k) {
    st = lstm_step<double>(p.core, p.tok.col(c.tokens[k]), st);
    const Vec<double> z = p.out_w * st.h + p.out_b.col(0);
    manual -= detail::log_softmax(z)(c.tokens[k + 1]);
  }
  CHECK(loss == doctest::Approx(manual).epsilon(1e-12));

  CHECK_THROWS_AS(caption_loss<double>(p, e, {5, 6}, {}), InvalidArgument);
  CHECK_THROWS_AS(caption_loss<double>(p, e, {0, 999}, {}), InvalidArgument);
  CHECK_THROWS_AS(caption_loss<double>(p, Vec<double>::Zero(3), c.tokens, {}), InvalidArgument);
}

TEST_CASE("decoder gradients match central differences") {
  FactorSpace space;
  Lexicon lex(space);
  DecoderConfig cfg;
  cfg.vocab = lex.vocab_size();
  cfg.embed_dim = 6;
  cfg.token_dim = 5;
  cfg.hidden = 6;
  Rng rng(3);
  DecoderParams<double> p(cfg);
  p.init(rng);
  Vec<double> e(6);
  for (int i = 0; i < 6; ++i) e(i) = uniform01(rng) - 0.5;
  const auto tokens = lex.caption_of({2, 1, 3}).tokens;
  const auto instr = lex.instruction_tokens();
  DecoderParams<double> g = zeros_like(p);
  Vec<double> de = Vec<double>::Zero(6);
  caption_loss<double>(p, e, tokens, instr, &g, &de);
  const std::function<double(DecoderParams<double>&)> loss = [&](DecoderParams<double>& q) {
    return caption_loss<double>(q, e, tokens, instr);
  };
  CHECK(testing::grad_check(p, g, loss) < 1e-3);
  for (int i = 0; i < 6; ++i) {
    Vec<double> ep = e, em = e;
    ep(i) += 1e-5;
    em(i) -= 1e-5;
    const double num = (caption_loss<double>(p, ep, tokens, instr) - caption_loss<double>(p, em, tokens, instr)) / 2e-5;
    CHECK(num == doctest::Approx(de(i)).epsilon(1e-5));
  }
}

TEST_CASE("decoding terminates and is deterministic") {
  Fixture fx;
  Rng rng(4);
  DecoderParams<float> p(fx.cfg);
  p.init(rng);
  const VecF e = fx.emb.factor_code({0, 1, 2});
  const auto a = decode_tokens<float>(p, e, fx.lex.instruction_tokens());
  CHECK(a == decode_tokens<float>(p, e, fx.lex.instruction_tokens()));
  CHECK(a.front() == Lexicon::kBos);
  CHECK(static_cast<int>(a.size()) <= Lexicon::kMaxCaptionLen);
  CHECK(decode_tokens<float>(p, e, fx.lex.instruction_tokens(), 2).size() == 2);

  p.out_w.setZero();
  p.out_b.setZero();
  p.out_b(Lexicon::kEos, 0) = 1.0f;
  CHECK(decode_tokens<float>(p, e, fx.lex.instruction_tokens()) == std::vector<int>{Lexicon::kBos, Lexicon::kEos});
}

TEST_CASE("training fits and generalizes to held-out factor combinations") {
  Fixture fx;
  fx.cfg.token_dim = 16;
  fx.cfg.hidden = 48;
  Rng rng(5);
  DecoderParams<float> p(fx.cfg);
  p.init(rng);

  std::vector<int> ids(fx.space.size());
  std::iota(ids.begin(), ids.end(), 0);
  Rng split(6);
  shuffle(ids.begin(), ids.end(), split);
  const std::vector<int> held(ids.begin(), ids.begin() + 20);
  const std::vector<int> train_ids(ids.begin() + 20, ids.end());

  const auto curve = fit(p, fx, train_ids, 120, 5e-3);
  // smoothed loss never goes up by more than noise
  for (std::size_t e = 10; e + 10 <= curve.size(); e += 10) {
    const double prev = std::accumulate(curve.begin() + e - 10, curve.begin() + e, 0.0);
    const double next = std::accumulate(curve.begin() + e, curve.begin() + e + 10, 0.0);
    CHECK(next <= prev * 1.05);
  }
  CHECK(curve.back() < 0.05 * curve.front());

  int exact = 0;
  double sim = 0;
  for (int id : held) {
    const ShotFactor f = fx.space.factor_at(id);
    const Caption pred = decode_caption<float>(p, fx.emb.factor_code(f), fx.lex);
    exact += pred == fx.lex.caption_of(f);
    sim += caption_similarity(pred, fx.lex.caption_of(f), fx.emb, fx.lex);
  }
  MESSAGE("held-out exact " << exact << "/20, mean sim " << sim / 20);
  CHECK(exact >= 19);

  // the embedding slot matters: a different factor's code changes the caption
  const ShotFactor a{0, 0, 0}, b{5, 3, 2};
  CHECK_FALSE(decode_caption<float>(p, fx.emb.factor_code(a), fx.lex) ==
              decode_caption<float>(p, fx.emb.factor_code(b), fx.lex));
}

TEST_CASE("caption similarity") {
  Fixture fx;
  const Caption a = fx.lex.caption_of({1, 1, 1});
  CHECK(caption_similarity(a, a, fx.emb, fx.lex) == doctest::Approx(1.0f));
  const Caption b = fx.lex.caption_of({1, 1, 2});
  const Caption c = fx.lex.caption_of({4, 3, 2});
  CHECK(caption_similarity(a, b, fx.emb, fx.lex) == doctest::Approx(caption_similarity(b, a, fx.emb, fx.lex)));
  CHECK(caption_similarity(a, b, fx.emb, fx.lex) > caption_similarity(a, c, fx.emb, fx.lex));
}
