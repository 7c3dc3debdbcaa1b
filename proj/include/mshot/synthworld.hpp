#pragma once

// Synthetic stimulus universe: shot factors, a toy frame renderer, a
// template captioner, and a fixed semantic embedder with known margins.

#include "mshot/common.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace mshot {

struct ShotFactor {
  int object_id = 0;
  int color_id = 0;
  int motion_id = 0;

  friend bool operator==(const ShotFactor&, const ShotFactor&) = default;
};

/// Vocabulary sizes of the factor product space.
struct FactorSpace {
  int n_objects = 8;
  int n_colors = 6;
  int n_motions = 4;

  static constexpr int kMaxObjects = 8;
  static constexpr int kMaxColors = 6;
  static constexpr int kMaxMotions = 5;

  void validate() const;
  int size() const { return n_objects * n_colors * n_motions; }
  int index_of(const ShotFactor& f) const;
  ShotFactor factor_at(int index) const;
  bool contains(const ShotFactor& f) const;
};

ShotFactor sample_shot_factor(const FactorSpace& space, Rng& rng);

struct Caption {
  std::vector<int> tokens;  // includes BOS and EOS when well-formed
  std::string text;

  friend bool operator==(const Caption&, const Caption&) = default;
};

/// Closed caption grammar "a <color> <object> <motion-phrase>" plus the
/// fixed instruction words of the decoder prompt.
class Lexicon {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kMaxCaptionLen = 8;

  explicit Lexicon(const FactorSpace& space);

  const FactorSpace& space() const { return space_; }
  int vocab_size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  const std::string& word(int id) const;
  std::optional<int> id_of(const std::string& word) const;

  /// Token ids of the instruction "describe this image".
  std::vector<int> instruction_tokens() const;

  Caption caption_of(const ShotFactor& f) const;
  /// Inverse of caption_of; nullopt unless the tokens follow the template
  /// exactly (BOS ... EOS).
  std::optional<ShotFactor> parse(const Caption& c) const;

  Caption from_text(const std::string& text) const;
  Caption from_tokens(std::vector<int> tokens) const;

  const std::string& object_word(int id) const;
  const std::string& color_word(int id) const;
  std::vector<std::string> motion_phrase(int id) const;

 private:
  FactorSpace space_;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

struct Frame {
  MatF pixels;  // height x width, values in [0, 1]

  int height() const { return static_cast<int>(pixels.rows()); }
  int width() const { return static_cast<int>(pixels.cols()); }
  friend bool operator==(const Frame& a, const Frame& b) {
    return a.pixels.rows() == b.pixels.rows() && a.pixels.cols() == b.pixels.cols() &&
           a.pixels == b.pixels;
  }
};

struct RenderConfig {
  int height = 32;
  int width = 32;
  int speed = 2;  // pixels per frame for moving objects
};

/// Intensity of the object body for a color id.
float color_intensity(const FactorSpace& space, int color_id);

Frame render_frame(const ShotFactor& f, int t, const FactorSpace& space,
                   const RenderConfig& cfg = {});
std::vector<Frame> render_frames(const ShotFactor& f, int n_frames, const FactorSpace& space,
                                 const RenderConfig& cfg = {});
Frame blank_frame(const RenderConfig& cfg = {});

/// Recovers the factor of a rendered frame; nullopt for blank frames.
std::optional<ShotFactor> parse_frame(const Frame& frame, const FactorSpace& space,
                                      const RenderConfig& cfg = {});

/// Fixed deterministic stand-in for frozen image/text encoders.
class SemanticEmbedder {
 public:
  SemanticEmbedder(const FactorSpace& space, int dim, std::uint64_t seed,
                   double attribute_share = 0.5);

  int dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  double attribute_share() const { return attribute_share_; }
  const FactorSpace& space() const { return space_; }

  /// Modality-free unit code of a factor; the signal the scan simulator mixes.
  VecF factor_code(const ShotFactor& f) const;
  const MatF& code_table() const { return code_table_; }  // dim x |space|

  VecF embed(const Caption& c, const Lexicon& lex) const;
  VecF embed(const Frame& frame, const RenderConfig& cfg = {}) const;
  /// Mean embedding over the frames of a clip (video-level semantics).
  VecF embed_video(const std::vector<Frame>& frames, const RenderConfig& cfg = {}) const;

  /// Index of the factor whose code is most cosine-similar to v.
  int nearest_factor(const Eigen::Ref<const VecF>& v) const;

 private:
  VecF attribute_part(const std::optional<int>& obj, const std::optional<int>& col,
                      const std::optional<int>& mot) const;
  VecF with_offset(const VecF& code, const Eigen::VectorXd& offset) const;

  FactorSpace space_;
  int dim_;
  std::uint64_t seed_;
  double attribute_share_;
  Eigen::MatrixXd attr_;   // dim x (n_obj + n_col + n_mot), orthonormal when dim allows
  Eigen::MatrixXd tuple_;  // dim x |space|
  Eigen::VectorXd null_;
  Eigen::VectorXd text_offset_;
  Eigen::VectorXd image_offset_;
  MatF code_table_;
};

float cosine(const Eigen::Ref<const VecF>& a, const Eigen::Ref<const VecF>& b);

}  // namespace mshot
