#include "mshot/evaluate.hpp"

#include "mshot/io.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace mshot {

PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "text") return PromptMode::kText;
  if (s == "fmri") return PromptMode::kFmri;
  if (s == "dual") return PromptMode::kDual;
  throw InvalidArgument("unknown prompt mode: " + s + " (expected text, fmri or dual)");
}

std::string to_string(PromptMode m) {
  switch (m) {
    case PromptMode::kText: return "text";
    case PromptMode::kFmri: return "fmri";
    case PromptMode::kDual: return "dual";
  }
  return "text";
}

void EvalConfig::validate() const {
  require(tau > 0 && tau < 1, "eval: tau must lie in (0, 1)");
  require(top_k >= 1, "eval: top_k must be >= 1");
  require(trials >= 1, "eval: trials must be >= 1");
  for (int n : n_ways) require(n > top_k, "eval: every N must exceed K");
}

const MetricRow& EvalResult::row(const std::string& name) const {
  for (const auto& r : table)
    if (r.name == name) return r;
  throw InvalidArgument("no metric row named " + name);
}

namespace {

struct Pools {
  std::vector<int> factor_of_col;
  std::map<int, int> col_of_factor;
  MatF frame;  // dim x P
  MatF video;
};

Pools make_pools(const DatasetManifest& test, const SemanticEmbedder& emb, int clip_frames) {
  Pools p;
  for (const auto& s : test.samples)
    for (const auto& shot : s.shots) p.col_of_factor.emplace(test.config.space.index_of(shot.factor), 0);
  const int n = static_cast<int>(p.col_of_factor.size());
  p.frame.resize(emb.dim(), n);
  p.video.resize(emb.dim(), n);
  int col = 0;
  for (auto& [f, c] : p.col_of_factor) {
    c = col++;
    const ShotFactor sf = test.config.space.factor_at(f);
    p.factor_of_col.push_back(f);
    p.frame.col(c) = emb.embed(render_frame(sf, 0, test.config.space, test.config.render),
                               test.config.render);
    p.video.col(c) = emb.embed_video(
        render_frames(sf, clip_frames, test.config.space, test.config.render), test.config.render);
  }
  return p;
}

VecF unit(const VecF& v) {
  const float n = v.norm();
  return n > 0 ? VecF(v / n) : v;
}

}  // namespace

EvalResult evaluate(const Model& p, const DatasetManifest& test, const EvalConfig& cfg) {
  cfg.validate();
  require(!test.samples.empty(), "eval: test set is empty");
  const SynthConfig& sc = test.config;
  require(p.decoder.embed_dim() == sc.embed_dim, "eval: model width does not match dataset c");
  require(p.sbp.input_dim() == sc.embed_dim, "eval: boundary predictor width mismatch");
  const Lexicon lex(sc.space);
  require(p.decoder.vocab() == lex.vocab_size(), "eval: decoder vocabulary does not match lexicon");
  const SemanticEmbedder emb(sc.space, sc.embed_dim, sc.codebook_seed, sc.attribute_share);
  const std::vector<int> instr = lex.instruction_tokens();
  const int clip_frames = std::max(1, static_cast<int>(std::lround(sc.total_seconds * sc.fps)));
  const Pools pools = make_pools(test, emb, clip_frames);
  const int n_pool = static_cast<int>(pools.factor_of_col.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();

  EvalResult res;
  res.samples.resize(test.samples.size());
  parallel_for(test.samples.size(), cfg.threads, [&](std::size_t idx) {
    const SyntheticSample& s = test.samples[idx];
    SampleResult& out = res.samples[idx];
    out.id = s.id;
    out.ratio_index = s.ratio_index;
    out.gt_bounds = to_bitstring(s.gt_bounds);
    const MatF enc = encoder_forward<float>(p.encoder, s.scans.emb);

    BoundaryVector pred;
    if (!cfg.segmented)
      pred.assign(s.gt_bounds.size(), 0);
    else if (cfg.oracle)
      pred = s.gt_bounds;
    else
      pred = binarize(sbp_forward<float>(p.sbp, enc), cfg.tau);
    out.pred_bounds = to_bitstring(pred);
    const SegmentPartition part = partition_from(pred);
    const SegmentPartition gt_part = s.gt_partition();
    if (cfg.segmented) {
      const Labeling lp = labels_from(part), lg = labels_from(gt_part);
      out.acc = seg_accuracy(lp, lg);
      out.ari = ari(lp, lg);
      out.nmi = nmi(lp, lg);
    }
    const MatF shots = aggregate(enc, part, cfg.pooling);
    std::vector<Caption> decoded(part.size());
    for (int k = 0; k < part.size(); ++k)
      decoded[k] = decode_caption<float>(p.decoder, shots.row(k).transpose(), lex);

    auto segment_of = [&](int gt_shot) {
      const Segment& g = gt_part.segments[gt_shot];
      const int mid = (g.begin + g.end - 1) / 2;
      for (int k = 0; k < part.size(); ++k)
        if (mid >= part.segments[k].begin && mid < part.segments[k].end) return k;
      return part.size() - 1;
    };
    auto semantic_sim = [&](int seg, const Caption& gt) -> double {
      if (cfg.decoder_active) return caption_similarity(decoded[seg], gt, emb, lex);
      return cosine(shots.row(seg).transpose(), emb.embed(gt, lex));
    };

    const int n_ways = static_cast<int>(cfg.n_ways.size());
    out.nway_frame.assign(n_ways, 0.0);
    out.nway_video.assign(n_ways, 0.0);
    for (int j = 0; j < static_cast<int>(s.shots.size()); ++j) {
      const ShotRecord& gt = s.shots[j];
      ShotResult r;
      r.segment = segment_of(j);
      r.gt_caption = gt.caption.text;
      r.pred_caption = decoded[r.segment].text;
      r.pred_tokens = decoded[r.segment].tokens;
      r.exact = decoded[r.segment] == gt.caption;
      r.caption_sim = semantic_sim(r.segment, gt.caption);

      std::optional<ShotFactor> f;
      const VecF shot_vec = shots.row(r.segment).transpose();
      switch (cfg.prompt) {
        case PromptMode::kText:
          f = lex.parse(decoded[r.segment]);
          break;
        case PromptMode::kFmri:
          f = sc.space.factor_at(emb.nearest_factor(shot_vec));
          break;
        case PromptMode::kDual: {
          const VecF mix = unit(emb.embed(decoded[r.segment], lex)) + unit(shot_vec);
          f = sc.space.factor_at(emb.nearest_factor(mix));
          break;
        }
      }
      const int n_frames = gt.frame_end - gt.frame_begin;
      std::vector<Frame> frames =
          f ? render_frames(*f, n_frames, sc.space, sc.render)
            : std::vector<Frame>(static_cast<std::size_t>(n_frames), blank_frame(sc.render));
      const Frame& key = frames[gt.keyframe_index - gt.frame_begin];
      r.ssim = ssim(key, gt.keyframe);

      const VecF q_frame = emb.embed(key, sc.render);
      const VecF q_video = emb.embed_video(frames, sc.render);
      const int gt_col = pools.col_of_factor.at(sc.space.index_of(gt.factor));
      for (int w = 0; w < n_ways; ++w) {
        const int n = cfg.n_ways[w];
        if (n_pool < n) {
          r.nway_frame.push_back(nan);
          r.nway_video.push_back(nan);
          continue;
        }
        NwayConfig nc;
        nc.n_way = n;
        nc.top_k = cfg.top_k;
        nc.trials = cfg.trials;
        nc.seed = derive_seed(cfg.seed, hash_tag("nway"),
                              static_cast<std::uint64_t>(s.id) * 64 + static_cast<std::uint64_t>(j));
        r.nway_frame.push_back(nway_topk(q_frame, gt_col, pools.frame, nc));
        r.nway_video.push_back(nway_topk(q_video, gt_col, pools.video, nc));
      }
      out.shots.push_back(std::move(r));
    }
    const double ns = static_cast<double>(out.shots.size());
    for (const auto& r : out.shots) {
      out.caption_sim += r.caption_sim / ns;
      out.ssim += r.ssim / ns;
      out.exact += (r.exact ? 1.0 : 0.0) / ns;
      for (int w = 0; w < n_ways; ++w) {
        out.nway_frame[w] += r.nway_frame[w] / ns;
        out.nway_video[w] += r.nway_video[w] / ns;
      }
    }
    const int vs = video_level_shot(s);
    out.caption_sim_video = semantic_sim(segment_of(vs), s.shots[vs].caption);
  });

  auto add_row = [&](const std::string& name, auto get) {
    std::vector<double> v;
    for (const auto& s : res.samples) {
      const std::optional<double> x = get(s);
      if (x && std::isfinite(*x)) v.push_back(*x);
    }
    if (!v.empty()) res.table.push_back({name, report_stats(v), static_cast<int>(v.size())});
  };
  add_row("caption_sim", [](const SampleResult& s) { return std::optional<double>(s.caption_sim); });
  add_row("caption_sim_video",
          [](const SampleResult& s) { return std::optional<double>(s.caption_sim_video); });
  add_row("exact_match", [](const SampleResult& s) { return std::optional<double>(s.exact); });
  if (cfg.segmented) {
    add_row("acc", [](const SampleResult& s) { return s.acc; });
    add_row("ari", [](const SampleResult& s) { return s.ari; });
    add_row("nmi", [](const SampleResult& s) { return s.nmi; });
  }
  for (std::size_t w = 0; w < cfg.n_ways.size(); ++w) {
    const std::string n = std::to_string(cfg.n_ways[w]);
    add_row(n + "way_video",
            [w](const SampleResult& s) { return std::optional<double>(s.nway_video[w]); });
    add_row(n + "way_frame",
            [w](const SampleResult& s) { return std::optional<double>(s.nway_frame[w]); });
  }
  add_row("ssim", [](const SampleResult& s) { return std::optional<double>(s.ssim); });
  return res;
}

}  // namespace mshot
