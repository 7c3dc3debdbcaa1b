#pragma once

// Shot-conditioned caption decoder. The prompt layout is
//   [describe this image][<embedding slot>][<bos> t1 ... t_{T-1}]
// and the objective is the summed token negative log-likelihood.

#include "mshot/nn.hpp"
#include "mshot/synthworld.hpp"

#include <string>
#include <vector>

namespace mshot {

struct DecoderConfig {
  int vocab = 0;
  int embed_dim = 64;  // width of the shot embedding fed into the slot
  int token_dim = 32;
  int hidden = 64;
  int max_len = Lexicon::kMaxCaptionLen;
};

template <typename S>
struct DecoderParams {
  using Scalar = S;
  Mat<S> tok;     // token_dim x V
  Mat<S> proj_w;  // token_dim x embed_dim
  Mat<S> proj_b;  // token_dim x 1
  LstmParams<S> core;
  Mat<S> out_w;  // V x hidden
  Mat<S> out_b;  // V x 1

  DecoderParams() = default;
  explicit DecoderParams(const DecoderConfig& cfg)
      : tok(Mat<S>::Zero(cfg.token_dim, cfg.vocab)),
        proj_w(Mat<S>::Zero(cfg.token_dim, cfg.embed_dim)),
        proj_b(Mat<S>::Zero(cfg.token_dim, 1)),
        core(cfg.token_dim, cfg.hidden),
        out_w(Mat<S>::Zero(cfg.vocab, cfg.hidden)),
        out_b(Mat<S>::Zero(cfg.vocab, 1)) {
    require(cfg.vocab >= 2, "decoder vocabulary too small");
  }

  int vocab() const { return static_cast<int>(tok.cols()); }
  int embed_dim() const { return static_cast<int>(proj_w.cols()); }

  void init(Rng& rng) {
    init_uniform(tok, 1.0, rng);
    init_uniform(proj_w, 1.0 / std::sqrt(static_cast<double>(proj_w.cols())), rng);
    core.init(rng);
    init_uniform(out_w, 1.0 / std::sqrt(static_cast<double>(out_w.cols())), rng);
  }

  template <typename F>
  void for_each(F&& f, const std::string& prefix = "decoder.") {
    f(prefix + "tok", tok);
    f(prefix + "proj_w", proj_w);
    f(prefix + "proj_b", proj_b);
    core.for_each(f, prefix + "core.");
    f(prefix + "out_w", out_w);
    f(prefix + "out_b", out_b);
  }
};

namespace detail {

template <typename S>
Vec<S> log_softmax(const Vec<S>& z) {
  const S m = z.maxCoeff();
  const S lse = m + std::log((z.array() - m).exp().sum());
  return (z.array() - lse).matrix();
}

template <typename S>
void validate_tokens(const DecoderParams<S>& p, const std::vector<int>& tokens) {
  require(tokens.size() >= 2, "caption must contain at least BOS and one target token");
  require(tokens.front() == Lexicon::kBos, "caption must start with BOS");
  for (int t : tokens) require(t >= 0 && t < p.vocab(), "caption token outside vocabulary");
}

}  // namespace detail

/// Summed NLL of tokens[1..] given the prompt and shot embedding. When
/// `grad` is non-null, parameter gradients are accumulated into it and the
/// gradient wrt the embedding is accumulated into `d_emb` (if given).
template <typename S>
double caption_loss(const DecoderParams<S>& p, const Eigen::Ref<const Vec<S>>& emb,
                    const std::vector<int>& tokens, const std::vector<int>& instruction,
                    DecoderParams<S>* grad = nullptr, Vec<S>* d_emb = nullptr) {
  detail::validate_tokens(p, tokens);
  require(emb.size() == p.embed_dim(), "caption_loss: embedding width mismatch");
  for (int t : instruction) require(t >= 0 && t < p.vocab(), "instruction token outside vocabulary");
  const int n_instr = static_cast<int>(instruction.size());
  const int T = static_cast<int>(tokens.size()) - 1;
  const int slot = n_instr;
  const int first_out = slot + 1;
  const int cols = first_out + T;

  Mat<S> X(p.tok.rows(), cols);
  for (int k = 0; k < n_instr; ++k) X.col(k) = p.tok.col(instruction[k]);
  X.col(slot) = p.proj_w * emb + p.proj_b.col(0);
  for (int k = 0; k < T; ++k) X.col(first_out + k) = p.tok.col(tokens[k]);

  LstmTrace<S> tr;
  const Mat<S> H = lstm_forward(p.core, X, false, tr);
  double loss = 0.0;
  Mat<S> dH = Mat<S>::Zero(H.rows(), H.cols());
  for (int k = 0; k < T; ++k) {
    const Vec<S> z = p.out_w * H.col(first_out + k) + p.out_b.col(0);
    const Vec<S> lp = detail::log_softmax(z);
    const int target = tokens[k + 1];
    loss -= static_cast<double>(lp(target));
    if (grad) {
      Vec<S> dz = lp.array().exp().matrix();
      dz(target) -= 1;
      grad->out_w.noalias() += dz * H.col(first_out + k).transpose();
      grad->out_b.col(0) += dz;
      dH.col(first_out + k).noalias() = p.out_w.transpose() * dz;
    }
  }
  if (grad) {
    const Mat<S> dX = lstm_backward(p.core, tr, dH, grad->core);
    for (int k = 0; k < n_instr; ++k) grad->tok.col(instruction[k]) += dX.col(k);
    grad->proj_w.noalias() += dX.col(slot) * emb.transpose();
    grad->proj_b.col(0) += dX.col(slot);
    if (d_emb) *d_emb += p.proj_w.transpose() * dX.col(slot);
    for (int k = 0; k < T; ++k) grad->tok.col(tokens[k]) += dX.col(first_out + k);
  }
  return loss;
}

/// Greedy argmax decoding (ties to the lowest token id) until EOS or
/// max_len tokens including BOS.
template <typename S>
std::vector<int> decode_tokens(const DecoderParams<S>& p, const Eigen::Ref<const Vec<S>>& emb,
                               const std::vector<int>& instruction,
                               int max_len = Lexicon::kMaxCaptionLen) {
  require(emb.size() == p.embed_dim(), "decode: embedding width mismatch");
  require(max_len >= 2, "decode: max_len must be >= 2");
  const int H = p.core.hidden();
  LstmState<S> st{Vec<S>::Zero(H), Vec<S>::Zero(H)};
  for (int t : instruction) st = lstm_step<S>(p.core, p.tok.col(t), st);
  const Vec<S> slot = p.proj_w * emb + p.proj_b.col(0);
  st = lstm_step<S>(p.core, slot, st);
  std::vector<int> out{Lexicon::kBos};
  int prev = Lexicon::kBos;
  while (static_cast<int>(out.size()) < max_len) {
    st = lstm_step<S>(p.core, p.tok.col(prev), st);
    const Vec<S> z = p.out_w * st.h + p.out_b.col(0);
    int best = 0;
    for (int v = 1; v < z.size(); ++v)
      if (z(v) > z(best)) best = v;
    out.push_back(best);
    if (best == Lexicon::kEos) break;
    prev = best;
  }
  return out;
}

template <typename S>
Caption decode_caption(const DecoderParams<S>& p, const Eigen::Ref<const Vec<S>>& emb,
                       const Lexicon& lex) {
  return lex.from_tokens(decode_tokens(p, emb, lex.instruction_tokens()));
}

/// Cosine between the fixed semantic embeddings of two captions.
inline float caption_similarity(const Caption& pred, const Caption& gt,
                                const SemanticEmbedder& embedder, const Lexicon& lex) {
  return cosine(embedder.embed(pred, lex), embedder.embed(gt, lex));
}

}  // namespace mshot
