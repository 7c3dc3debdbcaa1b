#pragma once

// The trainable pipeline: scan encoder, boundary predictor, caption decoder,
// contrastive temperature and loss weights, plus the joint batch objective.

#include "mshot/captioner.hpp"
#include "mshot/losses.hpp"
#include "mshot/partition.hpp"
#include "mshot/sbp.hpp"
#include "mshot/synthesis.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace mshot {

struct ModelConfig {
  int input_dim = 64;       // c
  int encoder_hidden = 64;  // 0 selects the identity encoder
  double memory_temperature = 0.05;  // 0 disables the encoder memory
  int hidden_d = 64;        // d
  HeadMode head = HeadMode::kPair;
  int token_dim = 32;
  int decoder_hidden = 64;
  int vocab = 0;
  double temperature_init = 0.07;
  WeightMode weight_mode = WeightMode::kUncertainty;

  void validate() const;
};

template <typename S>
struct ModelParams {
  using Scalar = S;
  EncoderParams<S> encoder;
  SbpParams<S> sbp;
  DecoderParams<S> decoder;
  Mat<S> log_temperature = Mat<S>::Zero(1, 1);
  LossWeights<S> weights;

  template <typename F>
  void for_each(F&& f) {
    encoder.for_each(f);
    sbp.for_each(f);
    decoder.for_each(f);
    f("log_temperature", log_temperature);
    weights.for_each(f);
  }
};

using Model = ModelParams<float>;

template <typename S>
ModelParams<S> make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams<S> p;
  p.encoder = cfg.encoder_hidden > 0 ? EncoderParams<S>(cfg.input_dim, cfg.encoder_hidden)
                                     : EncoderParams<S>();
  p.sbp = SbpParams<S>(cfg.input_dim, cfg.hidden_d, cfg.head);
  DecoderConfig dc;
  dc.vocab = cfg.vocab;
  dc.embed_dim = cfg.input_dim;
  dc.token_dim = cfg.token_dim;
  dc.hidden = cfg.decoder_hidden;
  p.decoder = DecoderParams<S>(dc);
  Rng r_enc(derive_seed(seed, hash_tag("init/encoder")));
  Rng r_sbp(derive_seed(seed, hash_tag("init/sbp")));
  Rng r_dec(derive_seed(seed, hash_tag("init/decoder")));
  p.encoder.init(r_enc);
  p.sbp.init(r_sbp);
  p.decoder.init(r_dec);
  p.log_temperature(0, 0) = static_cast<S>(std::log(cfg.temperature_init));
  p.weights.mode = cfg.weight_mode;
  p.weights.init();
  return p;
}

/// One training/evaluation sample with its frozen targets precomputed.
struct Example {
  int id = 0;
  MatF scans;  // M x c
  BoundaryVector bounds;
  std::vector<std::vector<int>> tokens;  // per ground-truth shot
  MatF image;                            // shots x c keyframe embeddings
  MatF text;                             // shots x c caption embeddings
  int video_shot = 0;                    // shot standing for the whole video
};

/// Index of the longest shot (ties to the first); the video-level target.
int video_level_shot(const SyntheticSample& s);

std::vector<Example> make_examples(const DatasetManifest& m, const SemanticEmbedder& embedder,
                                   const Lexicon& lex);

struct Objective {
  LossSwitches on;
  Pooling pooling = Pooling::kMean;
  std::vector<int> instruction;  // decoder prompt tokens
};

/// Fills the encoder memory with the distinct keyframe embeddings of the
/// training examples, in order of first appearance.
void attach_memory(Model& p, const std::vector<Example>& data, double temperature);

/// Segments used for caption supervision: ground truth when the boundary
/// term is on, else the whole sequence as one unit.
SegmentPartition supervision_partition(const Example& ex, bool segmented);

/// Joint objective over a batch. Per-sample boundary loss is averaged over
/// the batch, caption NLL (summed over tokens) is averaged over shot rows,
/// alignment and noise prediction run over all shot rows of the batch.
/// Gradients are accumulated into `grad` when non-null. Returns NaN (and
/// leaves `grad` untouched) when any loss term is non-finite.
template <typename S>
double batch_objective(const ModelParams<S>& p, const std::vector<const Example*>& batch,
                       const Objective& obj, const DiffusionToy<S>& toy, std::uint64_t step_seed,
                       LossTerms* terms_out = nullptr, ModelParams<S>* grad = nullptr) {
  require(!batch.empty(), "empty batch");
  const LossSwitches& on = obj.on;
  const int B = static_cast<int>(batch.size());
  const int c = p.decoder.embed_dim();

  struct Fwd {
    EncoderTrace<S> et;
    Mat<S> enc;
    SbpTrace<S> st;
    Vec<S> probs;
    SegmentPartition part;
    int row0 = 0;
  };
  std::vector<Fwd> fw(B);
  std::vector<const std::vector<int>*> row_tokens;
  std::vector<std::pair<int, int>> row_src;  // (sample, shot)
  LossTerms t;
  for (int i = 0; i < B; ++i) {
    const Example& ex = *batch[i];
    Fwd& f = fw[i];
    f.enc = encoder_forward<S>(p.encoder, ex.scans.cast<S>(), &f.et);
    if (on.sbp) {
      f.probs = sbp_forward<S>(p.sbp, f.enc, &f.st);
      t.sbp += sbp_loss(f.probs, ex.bounds) / B;
    }
    f.part = supervision_partition(ex, on.sbp);
    f.row0 = static_cast<int>(row_src.size());
    for (int j = 0; j < f.part.size(); ++j) {
      const int shot = on.sbp ? j : ex.video_shot;
      row_src.emplace_back(i, shot);
      row_tokens.push_back(&ex.tokens[shot]);
    }
  }
  const int R = static_cast<int>(row_src.size());
  Mat<S> shots(R, c), image(R, c), text(R, c);
  for (int i = 0; i < B; ++i) {
    const Fwd& f = fw[i];
    shots.middleRows(f.row0, f.part.size()) = aggregate(f.enc, f.part, obj.pooling);
  }
  for (int r = 0; r < R; ++r) {
    const Example& ex = *batch[row_src[r].first];
    image.row(r) = ex.image.row(row_src[r].second).template cast<S>();
    text.row(r) = ex.text.row(row_src[r].second).template cast<S>();
  }

  Mat<S> d_cap = Mat<S>::Zero(R, c), d_align = Mat<S>::Zero(R, c), d_mse = Mat<S>::Zero(R, c);
  DecoderParams<S> g_dec;
  if (grad && on.caption) g_dec = zeros_like(p.decoder);
  const std::vector<int>& instr = obj.instruction;
  if (on.caption) {
    for (int r = 0; r < R; ++r) {
      Vec<S> de = Vec<S>::Zero(c);
      t.caption += caption_loss<S>(p.decoder, shots.row(r).transpose(), *row_tokens[r], instr,
                                   grad ? &g_dec : nullptr, grad ? &de : nullptr);
      if (grad) d_cap.row(r) = de.transpose();
    }
    t.caption /= R;
  }
  S d_logt = 0;
  const bool align_active = on.align && R >= 2;
  if (align_active) {
    ContrastiveBatch<S> cb{shots, image, text};
    t.align = align_loss<S>(cb, p.log_temperature(0, 0), grad ? &d_align : nullptr,
                            grad ? &d_logt : nullptr);
  }
  if (on.mse) {
    Rng rng(derive_seed(step_seed, hash_tag("mse")));
    const int ts = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(toy.steps)));
    t.mse = mse_loss<S>(toy, image, shots, ts, rng, grad ? &d_mse : nullptr);
  }
  LossSwitches eff = on;
  eff.align = align_active;
  if (terms_out) *terms_out = t;
  for (double v : {t.sbp, t.caption, t.align, t.mse})
    if (!std::isfinite(v)) return std::numeric_limits<double>::quiet_NaN();
  const double total = total_loss(t, p.weights, eff);
  if (!grad) return total;

  const TotalLossGrad<S> tg = total_loss_grad(t, p.weights, eff);
  const S s_cap = static_cast<S>(tg.term_scale[1] / R);
  const S s_align = static_cast<S>(tg.term_scale[2]);
  const S s_mse = static_cast<S>(tg.term_scale[3]);
  if (on.caption) add_into(grad->decoder, g_dec, s_cap);
  grad->log_temperature(0, 0) += s_align * d_logt;
  grad->weights.s += tg.ds;
  const Mat<S> d_shots = s_cap * d_cap + s_align * d_align + s_mse * d_mse;
  for (int i = 0; i < B; ++i) {
    const Example& ex = *batch[i];
    const Fwd& f = fw[i];
    Mat<S> d_enc =
        aggregate_backward(Mat<S>(d_shots.middleRows(f.row0, f.part.size())), f.part, obj.pooling);
    if (on.sbp) {
      const Vec<S> dl = sbp_loss_grad_logits<S>(f.probs, ex.bounds) / S(B);
      d_enc += sbp_backward<S>(p.sbp, f.st, dl, grad->sbp);
    }
    encoder_backward<S>(p.encoder, f.et, d_enc, grad->encoder);
  }
  return total;
}

}  // namespace mshot
