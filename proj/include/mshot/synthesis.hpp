#pragma once

// Multi-shot dataset synthesis from pools of single-shot clips, plus the
// on-disk dataset container (manifest + one record file per sample).

#include "mshot/fmri_sim.hpp"
#include "mshot/partition.hpp"
#include "mshot/synthworld.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mshot {

enum class Protocol { kWebVidSyn, kCc2017Syn };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

/// Integer split of the scan count across consecutive shots.
using Ratio = std::vector<int>;

struct SynthConfig {
  Protocol protocol = Protocol::kCc2017Syn;
  double total_seconds = 6.0;
  std::vector<Ratio> ratios;
  double fps = 6.0;
  bool require_two_shots = true;  // every sample must have exactly two shots

  FactorSpace space;
  RenderConfig render;
  int embed_dim = 64;
  std::uint64_t codebook_seed = 7;
  double attribute_share = 0.5;

  HrfParams hrf;
  ScanConfig scan;

  int pool_size = 2000;

  static SynthConfig defaults(Protocol p);
  void validate() const;
  int n_scans() const { return scan.n_scans; }
};

/// Single-shot source clip; frames are rendered from the factor on demand.
struct SourceClip {
  ShotFactor factor;
  double duration_seconds = 0.0;
  int n_frames = 0;
  Caption caption;

  Frame frame(int t, const FactorSpace& space, const RenderConfig& cfg) const;
};

using ClipPool = std::vector<SourceClip>;

ClipPool make_clip_pool(const SynthConfig& cfg, const Lexicon& lex, int size, std::uint64_t seed);

struct ShotRecord {
  ShotFactor factor;
  Caption caption;
  int clip_index = 0;
  int frame_begin = 0;  // half-open global frame range
  int frame_end = 0;
  int keyframe_index = 0;  // global frame index
  Frame keyframe;
};

struct SyntheticSample {
  int id = 0;
  std::uint64_t seed = 0;
  int ratio_index = 0;
  ScanSequence scans;
  BoundaryVector gt_bounds;
  std::vector<ShotRecord> shots;

  /// Scan rows covered by each shot (from the ratio), half-open.
  SegmentPartition gt_partition() const { return partition_from(gt_bounds); }
};

/// Ground-truth boundary bits for a ratio: a 1 after every nonzero prefix
/// sum except the last.
BoundaryVector bounds_from_ratio(const Ratio& r);

/// Middle frame of an inclusive frame range, floor((first + last) / 2).
Frame extract_keyframe(const std::vector<Frame>& frames, int first, int last);
int keyframe_index(int first, int last);

struct DatasetManifest {
  static constexpr int kVersion = 1;

  int version = kVersion;
  std::string split;  // "train" | "test"
  std::uint64_t global_seed = 0;
  SynthConfig config;
  std::vector<std::string> lexicon;
  std::vector<SyntheticSample> samples;
  std::vector<int> ratio_counts;

  int n_samples() const { return static_cast<int>(samples.size()); }
};

/// Per-sample seed; includes the split so train/test seeds never collide.
std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& split, int index);

DatasetManifest synthesize(const ClipPool& pool, int n_samples, const SynthConfig& cfg,
                           const std::string& split, std::uint64_t global_seed, int threads = 1);

DatasetManifest synthesize_webvid_style(const ClipPool& pool, int n_samples, SynthConfig cfg,
                                        const std::string& split, std::uint64_t global_seed,
                                        int threads = 1);
DatasetManifest synthesize_cc2017_style(const ClipPool& pool, int n_samples, SynthConfig cfg,
                                        const std::string& split, std::uint64_t global_seed,
                                        int threads = 1);

/// Writes manifest.json and records/NNNNNN.rec under dir.
void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir);
/// Reads and validates the manifest and every record.
DatasetManifest read_manifest(const std::filesystem::path& dir);

}  // namespace mshot
