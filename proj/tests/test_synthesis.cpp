#include "doctest.h"
#include "test_support.hpp"

#include "mshot/synthesis.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace mshot;
namespace fs = std::filesystem;

TEST_CASE("ratio boundaries and keyframes") {
  CHECK(bounds_from_ratio({1, 3}) == BoundaryVector{1, 0, 0});
  CHECK(bounds_from_ratio({2, 2}) == BoundaryVector{0, 1, 0});
  CHECK(bounds_from_ratio({3, 1}) == BoundaryVector{0, 0, 1});
  CHECK(bounds_from_ratio({0, 5}) == BoundaryVector{0, 0, 0, 0});
  CHECK(bounds_from_ratio({2, 3}) == BoundaryVector{0, 1, 0, 0});
  CHECK(count_shots(bounds_from_ratio({0, 5})) == 1);

  CHECK(keyframe_index(0, 9) == 4);
  CHECK(keyframe_index(3, 7) == 5);
  CHECK(keyframe_index(2, 2) == 2);
  CHECK_THROWS_AS(keyframe_index(3, 2), InvalidArgument);
}

TEST_CASE("config validation") {
  auto cfg = SynthConfig::defaults(Protocol::kCc2017Syn);
  CHECK_NOTHROW(cfg.validate());
  cfg.ratios.push_back({4, 0});
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = SynthConfig::defaults(Protocol::kCc2017Syn);
  cfg.ratios.push_back({1, 1});
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  CHECK(protocol_from_string(to_string(Protocol::kWebVidSyn)) == Protocol::kWebVidSyn);
  CHECK_THROWS_AS(protocol_from_string("hcp"), InvalidArgument);
}

TEST_CASE("cc2017-style samples") {
  const auto cfg = SynthConfig::defaults(Protocol::kCc2017Syn);
  const Lexicon lex(cfg.space);
  const ClipPool pool = make_clip_pool(cfg, lex, 200, 11);
  const auto m = synthesize_cc2017_style(pool, 300, cfg, "train", 5);
  REQUIRE(m.n_samples() == 300);
  for (int c : m.ratio_counts) CHECK(c == 100);
  for (const auto& s : m.samples) {
    CHECK(s.scans.n_scans() == 4);
    CHECK(s.scans.dim() == cfg.embed_dim);
    REQUIRE(s.shots.size() == 2);
    CHECK(count_shots(s.gt_bounds) == 2);
    CHECK(s.gt_bounds == bounds_from_ratio(cfg.ratios[s.ratio_index]));
    CHECK(s.shots[0].clip_index != s.shots[1].clip_index);
    CHECK_FALSE(s.shots[0].factor == s.shots[1].factor);
    CHECK(s.shots[0].frame_begin == 0);
    CHECK(s.shots[0].frame_end == s.shots[1].frame_begin);
    CHECK(s.shots[1].frame_end == 36);
    for (const auto& r : s.shots) {
      CHECK(r.keyframe_index == keyframe_index(r.frame_begin, r.frame_end - 1));
      CHECK(r.caption == lex.caption_of(r.factor));
      const auto parsed = parse_frame(r.keyframe, cfg.space, cfg.render);
      REQUIRE(parsed.has_value());
      CHECK(*parsed == r.factor);
    }
  }
  auto wrong = cfg;
  wrong.scan.tr_seconds = 2.0;
  CHECK_THROWS_AS(synthesize_cc2017_style(pool, 10, wrong, "train", 5), InvalidArgument);
}

TEST_CASE("webvid-style samples include single-shot videos") {
  const auto cfg = SynthConfig::defaults(Protocol::kWebVidSyn);
  const Lexicon lex(cfg.space);
  const ClipPool pool = make_clip_pool(cfg, lex, 100, 3);
  const auto m = synthesize_webvid_style(pool, 31, cfg, "test", 2);
  for (std::size_t r = 0; r < m.ratio_counts.size(); ++r) CHECK(std::abs(m.ratio_counts[r] - 31.0 / 3) < 1);
  for (const auto& s : m.samples) {
    CHECK(s.scans.n_scans() == 5);
    CHECK(static_cast<int>(s.shots.size()) == (s.ratio_index == 0 ? 1 : 2));
  }
}

TEST_CASE("ratio balance on a large draw") {
  auto cfg = SynthConfig::defaults(Protocol::kCc2017Syn);
  const Lexicon lex(cfg.space);
  const ClipPool pool = make_clip_pool(cfg, lex, 64, 1);
  const auto m = synthesize(pool, 20000, cfg, "train", 77);
  for (int c : m.ratio_counts) {
    CHECK(c >= 6666);
    CHECK(c <= 6667);
  }
  std::vector<int> seen(3, 0);
  for (const auto& s : m.samples) ++seen[s.ratio_index];
  CHECK(seen == m.ratio_counts);
}

TEST_CASE("seeding and split hygiene") {
  const auto cfg = SynthConfig::defaults(Protocol::kCc2017Syn);
  const Lexicon lex(cfg.space);
  const ClipPool pool = make_clip_pool(cfg, lex, 100, 4);
  const auto a = synthesize(pool, 20, cfg, "train", 9);
  const auto b = synthesize(pool, 20, cfg, "train", 9, 3);
  for (int i = 0; i < 20; ++i) {
    CHECK(a.samples[i].scans.emb == b.samples[i].scans.emb);
    CHECK(a.samples[i].ratio_index == b.samples[i].ratio_index);
  }
  std::set<std::uint64_t> seeds;
  for (const char* split : {"train", "test"})
    for (int i = 0; i < 1000; ++i) seeds.insert(sample_seed(9, split, i));
  CHECK(seeds.size() == 2000);
  CHECK_THROWS_AS(synthesize(pool, 5, cfg, "val", 9), InvalidArgument);
}

TEST_CASE("manifest round trip and corruption") {
  const auto cfg = SynthConfig::defaults(Protocol::kCc2017Syn);
  const Lexicon lex(cfg.space);
  const ClipPool pool = make_clip_pool(cfg, lex, 50, 2);
  const auto m = synthesize(pool, 12, cfg, "test", 3);
  const fs::path dir = testing::scratch_dir("synthesis_manifest");
  write_manifest(m, dir);
  const auto r = read_manifest(dir);
  REQUIRE(r.n_samples() == m.n_samples());
  CHECK(r.split == "test");
  CHECK(r.ratio_counts == m.ratio_counts);
  for (int i = 0; i < m.n_samples(); ++i) {
    CHECK(r.samples[i].scans.emb == m.samples[i].scans.emb);
    CHECK(r.samples[i].gt_bounds == m.samples[i].gt_bounds);
    REQUIRE(r.samples[i].shots.size() == m.samples[i].shots.size());
    for (std::size_t k = 0; k < m.samples[i].shots.size(); ++k) {
      CHECK(r.samples[i].shots[k].keyframe == m.samples[i].shots[k].keyframe);
      CHECK(r.samples[i].shots[k].caption == m.samples[i].shots[k].caption);
    }
  }

  SUBCASE("truncated record names the sample") {
    const fs::path rec = dir / "records" / "000007.rec";
    fs::resize_file(rec, fs::file_size(rec) / 2);
    try {
      read_manifest(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("sample 7") != std::string::npos);
    }
  }
  SUBCASE("future version") {
    std::ifstream in(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    in.close();
    const auto pos = text.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"version\": 9");
    std::ofstream(dir / "manifest.json") << text;
    CHECK_THROWS_AS(read_manifest(dir), UnsupportedVersion);
  }
}
