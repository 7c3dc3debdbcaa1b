#include "mshot/model.hpp"

namespace mshot {

void ModelConfig::validate() const {
  require(input_dim >= 2, "model: input_dim must be >= 2");
  require(encoder_hidden >= 0, "model: encoder_hidden must be >= 0");
  require(hidden_d >= 2 && hidden_d % 2 == 0, "model: hidden_d must be even and >= 2");
  require(token_dim >= 1 && decoder_hidden >= 1, "model: decoder sizes must be positive");
  require(vocab >= 2, "model: vocabulary too small");
  require(temperature_init > 0, "model: temperature_init must be positive");
  require(memory_temperature >= 0, "model: memory_temperature must be >= 0");
}

int video_level_shot(const SyntheticSample& s) {
  require(!s.shots.empty(), "sample has no shots");
  const SegmentPartition part = s.gt_partition();
  int best = 0;
  for (int j = 1; j < part.size(); ++j)
    if (part.segments[j].size() > part.segments[best].size()) best = j;
  return best;
}

std::vector<Example> make_examples(const DatasetManifest& m, const SemanticEmbedder& embedder,
                                   const Lexicon& lex) {
  require(!m.samples.empty(), "dataset is empty");
  std::vector<Example> out;
  out.reserve(m.samples.size());
  const RenderConfig& rc = m.config.render;
  for (const auto& s : m.samples) {
    Example ex;
    ex.id = s.id;
    ex.scans = s.scans.emb;
    ex.bounds = s.gt_bounds;
    const int n = static_cast<int>(s.shots.size());
    ex.image.resize(n, embedder.dim());
    ex.text.resize(n, embedder.dim());
    for (int j = 0; j < n; ++j) {
      ex.tokens.push_back(s.shots[j].caption.tokens);
      ex.image.row(j) = embedder.embed(s.shots[j].keyframe, rc).transpose();
      ex.text.row(j) = embedder.embed(s.shots[j].caption, lex).transpose();
    }
    ex.video_shot = video_level_shot(s);
    out.push_back(std::move(ex));
  }
  return out;
}

void attach_memory(Model& p, const std::vector<Example>& data, double temperature) {
  require(temperature > 0, "encoder memory needs a positive temperature");
  std::vector<VecF> rows;
  for (const auto& ex : data)
    for (Eigen::Index j = 0; j < ex.image.rows(); ++j) {
      const VecF v = ex.image.row(j).transpose();
      bool seen = false;
      for (const auto& r : rows)
        if (r.dot(v) >= 0.999f * r.norm() * v.norm()) {
          seen = true;
          break;
        }
      if (!seen) rows.push_back(v);
    }
  require(!rows.empty(), "encoder memory: no keyframe embeddings");
  p.encoder.memory.resize(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    p.encoder.memory.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
  p.encoder.memory_temperature = static_cast<float>(temperature);
}

SegmentPartition supervision_partition(const Example& ex, bool segmented) {
  if (segmented) return partition_from(ex.bounds);
  return partition_from(BoundaryVector(ex.bounds.size(), 0));
}

}  // namespace mshot
