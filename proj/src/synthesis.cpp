#include "mshot/synthesis.hpp"

#include "mshot/io.hpp"
#include "mshot/json_util.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mshot {

std::string to_string(Protocol p) {
  return p == Protocol::kWebVidSyn ? "webvid-syn" : "cc2017-syn";
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "webvid-syn") return Protocol::kWebVidSyn;
  if (s == "cc2017-syn") return Protocol::kCc2017Syn;
  throw InvalidArgument("unknown protocol: " + s + " (expected webvid-syn or cc2017-syn)");
}

SynthConfig SynthConfig::defaults(Protocol p) {
  SynthConfig c;
  c.protocol = p;
  if (p == Protocol::kWebVidSyn) {
    c.total_seconds = 4.0;
    c.ratios = {{0, 5}, {2, 3}, {3, 2}};
    c.require_two_shots = false;
    c.scan.n_scans = 5;
    c.scan.tr_seconds = 0.8;
  } else {
    c.total_seconds = 6.0;
    c.ratios = {{1, 3}, {2, 2}, {3, 1}};
    c.require_two_shots = true;
    c.scan.n_scans = 4;
    c.scan.tr_seconds = 1.5;
  }
  return c;
}

void SynthConfig::validate() const {
  space.validate();
  hrf.validate();
  require(total_seconds > 0, "total_seconds must be positive");
  require(fps > 0, "fps must be positive");
  require(scan.n_scans >= 1, "n_scans must be >= 1");
  require(scan.tr_seconds > 0, "tr_seconds must be positive");
  require(scan.noise_sigma >= 0, "noise_sigma must be non-negative");
  require(embed_dim >= 2, "embed_dim must be >= 2");
  require(pool_size >= 2, "pool_size must be >= 2");
  require(!ratios.empty(), "ratio list is empty");
  for (const auto& r : ratios) {
    require(!r.empty(), "empty ratio tuple");
    int sum = 0, zeros = 0, nonzero = 0;
    for (int v : r) {
      require(v >= 0, "ratio entries must be non-negative");
      sum += v;
      zeros += v == 0;
      nonzero += v > 0;
    }
    require(sum == scan.n_scans, "ratio entries must sum to the scan count M");
    require(zeros <= 1, "at most one zero entry per ratio");
    if (require_two_shots) require(nonzero == 2, "protocol requires exactly two shots per sample");
  }
}

Frame SourceClip::frame(int t, const FactorSpace& space, const RenderConfig& cfg) const {
  require(t >= 0 && t < n_frames, "clip frame index out of range");
  return render_frame(factor, t, space, cfg);
}

ClipPool make_clip_pool(const SynthConfig& cfg, const Lexicon& lex, int size, std::uint64_t seed) {
  require(size >= 1, "clip pool size must be >= 1");
  Rng rng(seed);
  ClipPool pool;
  pool.reserve(size);
  const int frames = static_cast<int>(std::lround(cfg.total_seconds * cfg.fps));
  for (int i = 0; i < size; ++i) {
    SourceClip c;
    c.factor = sample_shot_factor(cfg.space, rng);
    c.duration_seconds = cfg.total_seconds;
    c.n_frames = std::max(1, frames);
    c.caption = lex.caption_of(c.factor);
    pool.push_back(std::move(c));
  }
  return pool;
}

BoundaryVector bounds_from_ratio(const Ratio& r) {
  int m = 0;
  for (int v : r) m += v;
  require(m >= 1, "ratio must cover at least one scan");
  BoundaryVector b(static_cast<std::size_t>(m - 1), 0);
  int prefix = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    prefix += r[k];
    if (r[k] > 0 && prefix < m) b[static_cast<std::size_t>(prefix - 1)] = 1;
  }
  return b;
}

int keyframe_index(int first, int last) {
  require(last >= first, "empty frame segment");
  return (first + last) / 2;
}

Frame extract_keyframe(const std::vector<Frame>& frames, int first, int last) {
  require(!frames.empty(), "extract_keyframe: no frames");
  require(first >= 0 && last < static_cast<int>(frames.size()), "extract_keyframe: range out of bounds");
  return frames[keyframe_index(first, last)];
}

std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& split, int index) {
  return derive_seed(global_seed, hash_tag("sample/" + split), static_cast<std::uint64_t>(index));
}

namespace {

SyntheticSample make_sample(const ClipPool& pool, const SynthConfig& cfg, const Lexicon& lex,
                            const SemanticEmbedder& embedder, int ratio_index, int id,
                            std::uint64_t seed) {
  Rng rng(seed);
  const Ratio& ratio = cfg.ratios[ratio_index];
  const int m = cfg.scan.n_scans;

  std::vector<int> entries;
  for (int v : ratio)
    if (v > 0) entries.push_back(v);

  // Distinct clips with distinct factors: identical factors would make the
  // boundary unobservable.
  std::vector<int> clips;
  std::set<int> used_factors;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    int attempts = 0;
    for (;;) {
      require(++attempts < 10000, "clip pool lacks enough distinct factors");
      const int c = static_cast<int>(uniform_index(rng, pool.size()));
      const int f = cfg.space.index_of(pool[c].factor);
      if (std::find(clips.begin(), clips.end(), c) != clips.end() || used_factors.count(f)) continue;
      clips.push_back(c);
      used_factors.insert(f);
      break;
    }
  }

  ShotTimeline timeline;
  for (std::size_t k = 0; k < entries.size(); ++k)
    timeline.shots.push_back(
        {pool[clips[k]].factor, cfg.total_seconds * entries[k] / static_cast<double>(m)});

  SyntheticSample s;
  s.id = id;
  s.seed = seed;
  s.ratio_index = ratio_index;
  s.scans = simulate_scans(timeline, embedder, cfg.hrf, cfg.scan, rng);
  s.gt_bounds = bounds_from_ratio(ratio);

  double cum = 0.0;
  int frame_begin = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    cum += timeline.shots[k].duration_seconds;
    const int frame_end = static_cast<int>(std::lround(cum * cfg.fps));
    require(frame_end > frame_begin, "shot shorter than one frame at the configured fps");
    const SourceClip& clip = pool[clips[k]];
    ShotRecord r;
    r.factor = clip.factor;
    r.caption = lex.caption_of(clip.factor);
    r.clip_index = clips[k];
    r.frame_begin = frame_begin;
    r.frame_end = frame_end;
    r.keyframe_index = keyframe_index(frame_begin, frame_end - 1);
    // Clips are cropped from their start, so local time = global - begin.
    r.keyframe = clip.frame(std::min(r.keyframe_index - frame_begin, clip.n_frames - 1), cfg.space,
                            cfg.render);
    s.shots.push_back(std::move(r));
    frame_begin = frame_end;
  }
  return s;
}

void check_protocol(const SynthConfig& cfg, Protocol p, int m, double total, double tr) {
  require(cfg.protocol == p, "config protocol does not match " + to_string(p));
  require(cfg.scan.n_scans == m, to_string(p) + " requires M=" + std::to_string(m));
  require(std::abs(cfg.total_seconds - total) < 1e-9, to_string(p) + " duration mismatch");
  require(std::abs(cfg.scan.tr_seconds - tr) < 1e-9, to_string(p) + " tr mismatch");
}

}  // namespace

DatasetManifest synthesize(const ClipPool& pool, int n_samples, const SynthConfig& cfg,
                           const std::string& split, std::uint64_t global_seed, int threads) {
  cfg.validate();
  require(pool.size() >= 2, "clip pool must contain at least 2 clips");
  require(n_samples >= 1, "n_samples must be >= 1");
  require(split == "train" || split == "test", "split must be train or test");

  const Lexicon lex(cfg.space);
  const SemanticEmbedder embedder(cfg.space, cfg.embed_dim, cfg.codebook_seed, cfg.attribute_share);

  // Balanced ratio schedule: counts differ by at most one.
  const int n_ratios = static_cast<int>(cfg.ratios.size());
  std::vector<int> schedule(n_samples);
  for (int i = 0; i < n_samples; ++i) schedule[i] = i % n_ratios;
  Rng sched_rng(derive_seed(global_seed, hash_tag("schedule/" + split)));
  shuffle(schedule.begin(), schedule.end(), sched_rng);

  DatasetManifest m;
  m.split = split;
  m.global_seed = global_seed;
  m.config = cfg;
  m.lexicon = lex.words();
  m.samples.resize(n_samples);
  parallel_for(static_cast<std::size_t>(n_samples), threads, [&](std::size_t i) {
    const int id = static_cast<int>(i);
    m.samples[i] =
        make_sample(pool, cfg, lex, embedder, schedule[i], id, sample_seed(global_seed, split, id));
  });
  m.ratio_counts.assign(n_ratios, 0);
  for (int r : schedule) ++m.ratio_counts[r];
  return m;
}

DatasetManifest synthesize_webvid_style(const ClipPool& pool, int n_samples, SynthConfig cfg,
                                        const std::string& split, std::uint64_t global_seed,
                                        int threads) {
  check_protocol(cfg, Protocol::kWebVidSyn, 5, 4.0, 0.8);
  return synthesize(pool, n_samples, cfg, split, global_seed, threads);
}

DatasetManifest synthesize_cc2017_style(const ClipPool& pool, int n_samples, SynthConfig cfg,
                                        const std::string& split, std::uint64_t global_seed,
                                        int threads) {
  check_protocol(cfg, Protocol::kCc2017Syn, 4, 6.0, 1.5);
  require(cfg.require_two_shots, "cc2017-syn samples are always two-shot");
  return synthesize(pool, n_samples, cfg, split, global_seed, threads);
}

// ---------------------------------------------------------------------------
// Container

namespace {

std::string record_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "records/%06d.rec", id);
  return buf;
}

}  // namespace

void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  using json = nlohmann::ordered_json;
  json doc;
  doc["format"] = "mshot-dataset";
  doc["version"] = m.version;
  doc["split"] = m.split;
  doc["global_seed"] = m.global_seed;
  doc["config"] = synth_config_to_json(m.config);
  doc["lexicon"] = m.lexicon;
  doc["ratio_counts"] = m.ratio_counts;
  json samples = json::array();
  for (const auto& s : m.samples) {
    std::string bytes;
    const int n_shots = static_cast<int>(s.shots.size());
    const int h = m.config.render.height, w = m.config.render.width;
    json header;
    header["format"] = "mshot-record";
    header["sample_id"] = s.id;
    header["dtype"] = "f32le";
    header["scans"] = {s.scans.n_scans(), s.scans.dim()};
    header["keyframes"] = {n_shots, h, w};
    bytes = header.dump() + "\n";
    const std::size_t scans_offset = bytes.size();
    append_matrix(bytes, s.scans.emb);
    const std::size_t kf_offset = bytes.size();
    for (const auto& shot : s.shots) append_matrix(bytes, shot.keyframe.pixels);
    const std::string rel = record_name(s.id);
    write_file(dir / rel, bytes);

    json e;
    e["id"] = s.id;
    e["seed"] = s.seed;
    e["record"] = rel;
    e["ratio_index"] = s.ratio_index;
    e["gt_bounds"] = to_bitstring(s.gt_bounds);
    e["tr_seconds"] = s.scans.tr_seconds;
    e["noise_sigma"] = s.scans.noise_sigma;
    e["scans_offset"] = scans_offset;
    e["keyframes_offset"] = kf_offset;
    e["bytes"] = bytes.size();
    json shots = json::array();
    for (const auto& shot : s.shots) {
      json j;
      j["factor"] = {shot.factor.object_id, shot.factor.color_id, shot.factor.motion_id};
      j["caption"] = shot.caption.text;
      j["tokens"] = shot.caption.tokens;
      j["clip"] = shot.clip_index;
      j["frames"] = {shot.frame_begin, shot.frame_end};
      j["keyframe"] = shot.keyframe_index;
      shots.push_back(std::move(j));
    }
    e["shots"] = std::move(shots);
    samples.push_back(std::move(e));
  }
  doc["samples"] = std::move(samples);
  write_file(dir / "manifest.json", doc.dump(1) + "\n");
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  using json = nlohmann::ordered_json;
  const std::string text = read_file(dir / "manifest.json");
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
  try {
    if (doc.value("format", "") != "mshot-dataset") throw FormatError("manifest.json: not a dataset manifest");
    const int version = doc.at("version").get<int>();
    if (version != DatasetManifest::kVersion)
      throw UnsupportedVersion("manifest.json: unsupported version " + std::to_string(version) +
                               " (expected " + std::to_string(DatasetManifest::kVersion) + ")");
    DatasetManifest m;
    m.version = version;
    m.split = doc.at("split").get<std::string>();
    m.global_seed = doc.at("global_seed").get<std::uint64_t>();
    m.config = synth_config_from_json(doc.at("config"));
    m.lexicon = doc.at("lexicon").get<std::vector<std::string>>();
    m.ratio_counts = doc.at("ratio_counts").get<std::vector<int>>();
    const Lexicon lex(m.config.space);
    if (lex.words() != m.lexicon) throw FormatError("manifest.json: lexicon does not match config");

    const int h = m.config.render.height, w = m.config.render.width;
    for (const auto& e : doc.at("samples")) {
      SyntheticSample s;
      s.id = e.at("id").get<int>();
      const std::string where = "sample " + std::to_string(s.id);
      s.seed = e.at("seed").get<std::uint64_t>();
      s.ratio_index = e.at("ratio_index").get<int>();
      s.gt_bounds = from_bitstring(e.at("gt_bounds").get<std::string>());
      s.scans.tr_seconds = e.at("tr_seconds").get<double>();
      s.scans.noise_sigma = e.at("noise_sigma").get<double>();
      const auto& shots = e.at("shots");
      const int n_shots = static_cast<int>(shots.size());
      if (count_shots(s.gt_bounds) != n_shots)
        throw FormatError(where + ": boundary count disagrees with shot list");

      const std::string rec = read_file(dir / e.at("record").get<std::string>());
      const std::size_t expect = e.at("bytes").get<std::size_t>();
      if (rec.size() != expect)
        throw FormatError(where + ": record truncated or corrupt (" + std::to_string(rec.size()) +
                          " of " + std::to_string(expect) + " bytes)");
      const auto nl = rec.find('\n');
      if (nl == std::string::npos) throw FormatError(where + ": record header missing");
      json header;
      try {
        header = json::parse(rec.substr(0, nl));
      } catch (const json::exception&) {
        throw FormatError(where + ": record header unparseable");
      }
      if (header.value("sample_id", -1) != s.id || header.value("dtype", "") != "f32le")
        throw FormatError(where + ": record header mismatch");
      const int m_scans = header.at("scans")[0].get<int>(), c = header.at("scans")[1].get<int>();
      if (m_scans != m.config.scan.n_scans || c != m.config.embed_dim ||
          header.at("keyframes")[0].get<int>() != n_shots ||
          header.at("keyframes")[1].get<int>() != h || header.at("keyframes")[2].get<int>() != w)
        throw FormatError(where + ": record shapes disagree with manifest");
      const std::size_t so = e.at("scans_offset").get<std::size_t>();
      const std::size_t ko = e.at("keyframes_offset").get<std::size_t>();
      if (so != nl + 1 || ko != so + 4ull * m_scans * c ||
          expect != ko + 4ull * n_shots * h * w)
        throw FormatError(where + ": record offsets inconsistent");
      s.scans.emb = read_matrix(rec.data() + so, m_scans, c);
      if (!s.scans.emb.allFinite()) throw FormatError(where + ": non-finite scan values");

      for (int k = 0; k < n_shots; ++k) {
        const auto& j = shots[k];
        ShotRecord r;
        r.factor = {j.at("factor")[0].get<int>(), j.at("factor")[1].get<int>(),
                    j.at("factor")[2].get<int>()};
        if (!m.config.space.contains(r.factor)) throw FormatError(where + ": factor out of range");
        r.caption = lex.from_tokens(j.at("tokens").get<std::vector<int>>());
        if (r.caption.text != j.at("caption").get<std::string>() ||
            !(r.caption == lex.caption_of(r.factor)))
          throw FormatError(where + ": caption does not match factor");
        r.clip_index = j.at("clip").get<int>();
        r.frame_begin = j.at("frames")[0].get<int>();
        r.frame_end = j.at("frames")[1].get<int>();
        r.keyframe_index = j.at("keyframe").get<int>();
        r.keyframe.pixels = read_matrix(rec.data() + ko + 4ull * k * h * w, h, w);
        s.shots.push_back(std::move(r));
      }
      m.samples.push_back(std::move(s));
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  } catch (const InvalidArgument& e) {
    throw FormatError("manifest.json: " + std::string(e.what()));
  }
}

}  // namespace mshot
