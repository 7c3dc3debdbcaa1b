#include "mshot/synthworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace mshot {

namespace {

constexpr std::array<const char*, FactorSpace::kMaxObjects> kObjects = {
    "disk", "square", "triangle", "cross", "ring", "bar", "pillar", "diamond"};
constexpr std::array<const char*, FactorSpace::kMaxColors> kColors = {
    "red", "orange", "yellow", "green", "blue", "purple"};

struct Motion {
  const char* verb;
  const char* word;
  int dx;
  int dy;
};
constexpr std::array<Motion, FactorSpace::kMaxMotions> kMotions = {{
    {"stays", "still", 0, 0},
    {"moves", "left", -1, 0},
    {"moves", "right", 1, 0},
    {"moves", "down", 0, 1},
    {"moves", "up", 0, -1},
}};

constexpr int kHalf = 5;  // shapes live in a (2*kHalf+1)^2 box

bool shape_covers(int object_id, int x, int y) {
  const int ax = std::abs(x), ay = std::abs(y);
  switch (object_id) {
    case 0:  // disk
      return x * x + y * y <= 25;
    case 1:  // square
      return ax <= 4 && ay <= 4;
    case 2:  // triangle, apex up
      return y >= -4 && y <= 4 && 2 * ax <= y + 4;
    case 3:  // cross
      return (ax <= 1 && ay <= 5) || (ay <= 1 && ax <= 5);
    case 4: {  // ring
      const int r2 = x * x + y * y;
      return r2 <= 25 && r2 >= 9;
    }
    case 5:  // horizontal bar
      return ax <= 5 && ay <= 2;
    case 6:  // vertical pillar
      return ax <= 2 && ay <= 5;
    case 7:  // diamond
      return ax + ay <= 5;
    default:
      return false;
  }
}

int wrap(int v, int n) {
  const int r = v % n;
  return r < 0 ? r + n : r;
}

void stamp(MatF& px, int object_id, int cx, int cy, float value) {
  const int h = static_cast<int>(px.rows()), w = static_cast<int>(px.cols());
  for (int dy = -kHalf; dy <= kHalf; ++dy)
    for (int dx = -kHalf; dx <= kHalf; ++dx)
      if (shape_covers(object_id, dx, dy)) px(wrap(cy + dy, h), wrap(cx + dx, w)) = value;
}

// Circular mean of the occupied coordinates along one axis of a torus.
double circular_mean(const std::vector<int>& coords, int n) {
  double s = 0.0, c = 0.0;
  for (int v : coords) {
    const double a = 2.0 * M_PI * v / n;
    s += std::sin(a);
    c += std::cos(a);
  }
  double a = std::atan2(s, c);
  if (a < 0) a += 2.0 * M_PI;
  return a * n / (2.0 * M_PI);
}

// Signed torus offset from `from` to `to`.
double torus_delta(double from, double to, int n) {
  double d = to - from;
  while (d > n / 2.0) d -= n;
  while (d < -n / 2.0) d += n;
  return d;
}

}  // namespace

void FactorSpace::validate() const {
  require(n_objects >= 1 && n_objects <= kMaxObjects, "n_objects must be in [1, 8]");
  require(n_colors >= 1 && n_colors <= kMaxColors, "n_colors must be in [1, 6]");
  require(n_motions >= 1 && n_motions <= kMaxMotions, "n_motions must be in [1, 5]");
}

int FactorSpace::index_of(const ShotFactor& f) const {
  require(contains(f), "factor outside vocabulary");
  return (f.object_id * n_colors + f.color_id) * n_motions + f.motion_id;
}

ShotFactor FactorSpace::factor_at(int index) const {
  require(index >= 0 && index < size(), "factor index out of range");
  ShotFactor f;
  f.motion_id = index % n_motions;
  f.color_id = (index / n_motions) % n_colors;
  f.object_id = index / (n_motions * n_colors);
  return f;
}

bool FactorSpace::contains(const ShotFactor& f) const {
  return f.object_id >= 0 && f.object_id < n_objects && f.color_id >= 0 &&
         f.color_id < n_colors && f.motion_id >= 0 && f.motion_id < n_motions;
}

ShotFactor sample_shot_factor(const FactorSpace& space, Rng& rng) {
  return space.factor_at(static_cast<int>(uniform_index(rng, space.size())));
}

// ---------------------------------------------------------------------------
// Lexicon

Lexicon::Lexicon(const FactorSpace& space) : space_(space) {
  space_.validate();
  auto add = [this](const std::string& w) {
    if (ids_.count(w)) return;
    ids_[w] = static_cast<int>(words_.size());
    words_.push_back(w);
  };
  add("<bos>");
  add("<eos>");
  add("describe");
  add("this");
  add("image");
  add("a");
  for (int i = 0; i < space_.n_colors; ++i) add(kColors[i]);
  for (int i = 0; i < space_.n_objects; ++i) add(kObjects[i]);
  for (int i = 0; i < space_.n_motions; ++i) {
    add(kMotions[i].verb);
    add(kMotions[i].word);
  }
}

const std::string& Lexicon::word(int id) const {
  require(id >= 0 && id < vocab_size(), "token id out of vocabulary");
  return words_[id];
}

std::optional<int> Lexicon::id_of(const std::string& w) const {
  auto it = ids_.find(w);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<int> Lexicon::instruction_tokens() const {
  return {*id_of("describe"), *id_of("this"), *id_of("image")};
}

const std::string& Lexicon::object_word(int id) const {
  return words_[ids_.at(kObjects.at(id))];
}
const std::string& Lexicon::color_word(int id) const {
  return words_[ids_.at(kColors.at(id))];
}
std::vector<std::string> Lexicon::motion_phrase(int id) const {
  return {kMotions.at(id).verb, kMotions.at(id).word};
}

Caption Lexicon::caption_of(const ShotFactor& f) const {
  require(space_.contains(f), "factor outside vocabulary");
  std::vector<int> t{kBos, *id_of("a"), *id_of(color_word(f.color_id)),
                     *id_of(object_word(f.object_id))};
  for (const auto& w : motion_phrase(f.motion_id)) t.push_back(*id_of(w));
  t.push_back(kEos);
  return from_tokens(std::move(t));
}

std::optional<ShotFactor> Lexicon::parse(const Caption& c) const {
  const auto& t = c.tokens;
  if (t.size() != 7 || t.front() != kBos || t.back() != kEos) return std::nullopt;
  for (int id : t)
    if (id < 0 || id >= vocab_size()) return std::nullopt;
  if (words_[t[1]] != "a") return std::nullopt;
  ShotFactor f{-1, -1, -1};
  for (int i = 0; i < space_.n_colors; ++i)
    if (words_[t[2]] == kColors[i]) f.color_id = i;
  for (int i = 0; i < space_.n_objects; ++i)
    if (words_[t[3]] == kObjects[i]) f.object_id = i;
  for (int i = 0; i < space_.n_motions; ++i)
    if (words_[t[4]] == kMotions[i].verb && words_[t[5]] == kMotions[i].word) f.motion_id = i;
  if (!space_.contains(f)) return std::nullopt;
  return f;
}

Caption Lexicon::from_tokens(std::vector<int> tokens) const {
  Caption c;
  std::ostringstream os;
  bool first = true;
  for (int id : tokens) {
    require(id >= 0 && id < vocab_size(), "token id out of vocabulary");
    if (id == kBos || id == kEos) continue;
    if (!first) os << ' ';
    os << words_[id];
    first = false;
  }
  c.tokens = std::move(tokens);
  c.text = os.str();
  return c;
}

Caption Lexicon::from_text(const std::string& text) const {
  std::istringstream is(text);
  std::vector<int> t{kBos};
  std::string w;
  while (is >> w) {
    auto id = id_of(w);
    require(id.has_value(), "word not in lexicon: " + w);
    t.push_back(*id);
  }
  t.push_back(kEos);
  return from_tokens(std::move(t));
}

// ---------------------------------------------------------------------------
// Renderer

float color_intensity(const FactorSpace& space, int color_id) {
  if (space.n_colors == 1) return 1.0f;
  return 0.5f + 0.5f * static_cast<float>(color_id) / static_cast<float>(space.n_colors - 1);
}

Frame render_frame(const ShotFactor& f, int t, const FactorSpace& space, const RenderConfig& cfg) {
  require(space.contains(f), "factor outside vocabulary");
  require(cfg.height >= 2 * kHalf + 4 && cfg.width >= 2 * kHalf + 4, "canvas too small");
  Frame fr;
  fr.pixels = MatF::Zero(cfg.height, cfg.width);
  const auto& m = kMotions[f.motion_id];
  const float value = color_intensity(space, f.color_id);
  auto center = [&](int tt) {
    return std::pair<int, int>{cfg.width / 2 + m.dx * cfg.speed * tt,
                               cfg.height / 2 + m.dy * cfg.speed * tt};
  };
  if (m.dx != 0 || m.dy != 0) {
    const auto [x2, y2] = center(t - 2);
    stamp(fr.pixels, f.object_id, x2, y2, 0.25f * value);
    const auto [x1, y1] = center(t - 1);
    stamp(fr.pixels, f.object_id, x1, y1, 0.5f * value);
  }
  const auto [x0, y0] = center(t);
  stamp(fr.pixels, f.object_id, x0, y0, value);
  return fr;
}

std::vector<Frame> render_frames(const ShotFactor& f, int n_frames, const FactorSpace& space,
                                 const RenderConfig& cfg) {
  require(n_frames >= 1, "render_frames: n_frames must be >= 1");
  std::vector<Frame> out;
  out.reserve(n_frames);
  for (int t = 0; t < n_frames; ++t) out.push_back(render_frame(f, t, space, cfg));
  return out;
}

Frame blank_frame(const RenderConfig& cfg) { return Frame{MatF::Zero(cfg.height, cfg.width)}; }

std::optional<ShotFactor> parse_frame(const Frame& frame, const FactorSpace& space,
                                      const RenderConfig& cfg) {
  const MatF& px = frame.pixels;
  const int h = frame.height(), w = frame.width();
  const float peak = px.maxCoeff();
  if (!(peak > 1e-3f)) return std::nullopt;

  ShotFactor f;
  {
    int best = 0;
    float err = 1e9f;
    for (int c = 0; c < space.n_colors; ++c) {
      const float e = std::abs(color_intensity(space, c) - peak);
      if (e < err) err = e, best = c;
    }
    f.color_id = best;
  }

  std::vector<int> hx, hy, tx, ty;
  const float tol = 1e-4f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = px(y, x);
      if (std::abs(v - peak) < tol) {
        hx.push_back(x);
        hy.push_back(y);
      } else if (v > tol) {
        tx.push_back(x);
        ty.push_back(y);
      }
    }
  const int cx = static_cast<int>(std::lround(circular_mean(hx, w))) % w;
  const int cy = static_cast<int>(std::lround(circular_mean(hy, h))) % h;

  // Shape: best IoU against centered templates, allowing small centroid error.
  double best_iou = -1.0;
  int best_obj = 0;
  for (int obj = 0; obj < space.n_objects; ++obj) {
    for (int oy = -2; oy <= 2; ++oy)
      for (int ox = -2; ox <= 2; ++ox) {
        int inter = 0, uni = 0;
        for (int dy = -kHalf - 3; dy <= kHalf + 3; ++dy)
          for (int dx = -kHalf - 3; dx <= kHalf + 3; ++dx) {
            const bool in_t = shape_covers(obj, dx, dy);
            const float v = px(wrap(cy + oy + dy, h), wrap(cx + ox + dx, w));
            const bool in_h = std::abs(v - peak) < tol;
            inter += in_t && in_h;
            uni += in_t || in_h;
          }
        const double iou = uni ? static_cast<double>(inter) / uni : 0.0;
        if (iou > best_iou + 1e-12) best_iou = iou, best_obj = obj;
      }
  }
  f.object_id = best_obj;

  f.motion_id = 0;
  if (!tx.empty()) {
    const double mx = torus_delta(circular_mean(hx, w), circular_mean(tx, w), w);
    const double my = torus_delta(circular_mean(hy, h), circular_mean(ty, h), h);
    // Trail lies behind the head, so motion points opposite to the trail.
    double best = -1e9;
    for (int m = 1; m < space.n_motions; ++m) {
      const double score = -(mx * kMotions[m].dx + my * kMotions[m].dy);
      if (score > best) best = score, f.motion_id = m;
    }
  }
  (void)cfg;
  return f;
}

// ---------------------------------------------------------------------------
// Embedder

namespace {

Eigen::MatrixXd gaussian(int rows, int cols, Rng& rng) {
  NormalSampler n(rng);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = n();
  return m;
}

void normalize_columns(Eigen::MatrixXd& m) {
  for (int j = 0; j < m.cols(); ++j) {
    const double n = m.col(j).norm();
    if (n > 0) m.col(j) /= n;
  }
}

}  // namespace

SemanticEmbedder::SemanticEmbedder(const FactorSpace& space, int dim, std::uint64_t seed,
                                   double attribute_share)
    : space_(space), dim_(dim), seed_(seed), attribute_share_(attribute_share) {
  space_.validate();
  require(dim >= 2, "embedding dim must be >= 2");
  require(attribute_share >= 0.0 && attribute_share <= 1.0, "attribute_share must be in [0,1]");
  Rng rng(derive_seed(seed, hash_tag("embedder")));
  const int n_attr = space_.n_objects + space_.n_colors + space_.n_motions;
  const int nf = space_.size();

  attr_ = gaussian(dim, n_attr, rng);
  const bool has_complement = dim > n_attr;
  Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(dim, dim);
  if (dim >= n_attr) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(attr_);
    attr_ = qr.householderQ() * Eigen::MatrixXd::Identity(dim, n_attr);
    if (has_complement) proj -= attr_ * attr_.transpose();
  } else {
    normalize_columns(attr_);
  }

  tuple_ = proj * gaussian(dim, nf, rng);
  normalize_columns(tuple_);
  // Decorrelate the per-factor vectors with a short soft-max repulsion pass.
  if (nf > 1 && dim < 512) {
    for (int it = 0; it < 100; ++it) {
      Eigen::MatrixXd g = tuple_.transpose() * tuple_;
      g.diagonal().setConstant(-1e9);
      const double gmax = g.maxCoeff();
      Eigen::MatrixXd wgt = (20.0 * (g.array() - gmax)).exp().matrix();
      wgt.diagonal().setZero();
      Eigen::MatrixXd step = proj * (tuple_ * wgt);
      const double s = step.cwiseAbs().maxCoeff();
      if (!(s > 0)) break;
      tuple_ -= (0.05 / s) * step;
      normalize_columns(tuple_);
    }
  }

  null_ = proj * gaussian(dim, 1, rng);
  null_.normalize();
  text_offset_ = gaussian(dim, 1, rng);
  text_offset_ *= 0.15 / text_offset_.norm();
  image_offset_ = gaussian(dim, 1, rng);
  image_offset_ *= 0.15 / image_offset_.norm();

  code_table_.resize(dim, nf);
  for (int i = 0; i < nf; ++i) code_table_.col(i) = factor_code(space_.factor_at(i));
}

VecF SemanticEmbedder::attribute_part(const std::optional<int>& obj,
                                      const std::optional<int>& col,
                                      const std::optional<int>& mot) const {
  Eigen::VectorXd a = Eigen::VectorXd::Zero(dim_);
  if (obj) a += attr_.col(*obj);
  if (col) a += attr_.col(space_.n_objects + *col);
  if (mot) a += attr_.col(space_.n_objects + space_.n_colors + *mot);
  return (a / std::sqrt(3.0)).cast<float>();
}

VecF SemanticEmbedder::factor_code(const ShotFactor& f) const {
  const int idx = space_.index_of(f);
  Eigen::VectorXd v = std::sqrt(attribute_share_) *
                          attribute_part(f.object_id, f.color_id, f.motion_id).cast<double>() +
                      std::sqrt(1.0 - attribute_share_) * tuple_.col(idx);
  v.normalize();
  return v.cast<float>();
}

VecF SemanticEmbedder::with_offset(const VecF& code, const Eigen::VectorXd& offset) const {
  Eigen::VectorXd v = code.cast<double>() + offset;
  v.normalize();
  return v.cast<float>();
}

VecF SemanticEmbedder::embed(const Caption& c, const Lexicon& lex) const {
  if (auto f = lex.parse(c)) return with_offset(factor_code(*f), text_offset_);
  // Malformed caption: keep whatever attribute words it names.
  std::optional<int> obj, col, mot;
  for (int id : c.tokens) {
    if (id < 0 || id >= lex.vocab_size()) continue;
    const auto& w = lex.word(id);
    for (int i = 0; i < space_.n_objects; ++i)
      if (w == lex.object_word(i)) obj = i;
    for (int i = 0; i < space_.n_colors; ++i)
      if (w == lex.color_word(i)) col = i;
    for (int i = 0; i < space_.n_motions; ++i)
      if (w == lex.motion_phrase(i)[1]) mot = i;
  }
  Eigen::VectorXd v = std::sqrt(attribute_share_) * attribute_part(obj, col, mot).cast<double>() +
                      std::sqrt(1.0 - attribute_share_) * null_;
  v.normalize();
  return with_offset(v.cast<float>(), text_offset_);
}

VecF SemanticEmbedder::embed(const Frame& frame, const RenderConfig& cfg) const {
  if (auto f = parse_frame(frame, space_, cfg)) return with_offset(factor_code(*f), image_offset_);
  return with_offset(null_.cast<float>(), image_offset_);
}

VecF SemanticEmbedder::embed_video(const std::vector<Frame>& frames,
                                   const RenderConfig& cfg) const {
  require(!frames.empty(), "embed_video: no frames");
  VecF acc = VecF::Zero(dim_);
  for (const auto& f : frames) acc += embed(f, cfg);
  return acc / static_cast<float>(frames.size());
}

int SemanticEmbedder::nearest_factor(const Eigen::Ref<const VecF>& v) const {
  const float n = v.norm();
  if (!(n > 0)) return 0;
  Eigen::Index best = 0;
  (code_table_.transpose() * v).maxCoeff(&best);
  return static_cast<int>(best);
}

float cosine(const Eigen::Ref<const VecF>& a, const Eigen::Ref<const VecF>& b) {
  const double na = a.cast<double>().norm(), nb = b.cast<double>().norm();
  if (!(na > 0) || !(nb > 0)) return 0.0f;
  return static_cast<float>(a.cast<double>().dot(b.cast<double>()) / (na * nb));
}

}  // namespace mshot
