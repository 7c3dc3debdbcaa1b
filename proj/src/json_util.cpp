#include "mshot/json_util.hpp"

namespace mshot {

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw InvalidArgument(where + ": unknown key '" + it.key() + "'");
  }
}

Json synth_config_to_json(const SynthConfig& c) {
  Json j;
  j["protocol"] = to_string(c.protocol);
  j["total_seconds"] = c.total_seconds;
  j["ratios"] = c.ratios;
  j["fps"] = c.fps;
  j["require_two_shots"] = c.require_two_shots;
  j["factors"] = {{"objects", c.space.n_objects},
                  {"colors", c.space.n_colors},
                  {"motions", c.space.n_motions}};
  j["render"] = {{"height", c.render.height}, {"width", c.render.width}, {"speed", c.render.speed}};
  j["embed_dim"] = c.embed_dim;
  j["codebook_seed"] = c.codebook_seed;
  j["attribute_share"] = c.attribute_share;
  j["hrf"] = {{"a1", c.hrf.a1},
              {"b1", c.hrf.b1},
              {"a2", c.hrf.a2},
              {"b2", c.hrf.b2},
              {"undershoot_ratio", c.hrf.undershoot_ratio},
              {"support_seconds", c.hrf.support_seconds}};
  j["scan"] = {{"tr_seconds", c.scan.tr_seconds},
               {"n_scans", c.scan.n_scans},
               {"noise_sigma", c.scan.noise_sigma},
               {"dt", c.scan.dt},
               {"offset_seconds", c.scan.offset_seconds},
               {"timing", c.scan.timing == ScanTiming::kMidpoint ? "midpoint" : "end"}};
  j["pool_size"] = c.pool_size;
  return j;
}

SynthConfig synth_config_from_json(const Json& j) {
  const std::string w = "synth";
  check_keys(j,
             {"protocol", "total_seconds", "ratios", "fps", "require_two_shots", "factors", "render",
              "embed_dim", "codebook_seed", "attribute_share", "hrf", "scan", "pool_size"},
             w);
  std::string proto = "cc2017-syn";
  read_opt(j, "protocol", proto, w);
  SynthConfig c = SynthConfig::defaults(protocol_from_string(proto));
  read_opt(j, "total_seconds", c.total_seconds, w);
  read_opt(j, "ratios", c.ratios, w);
  read_opt(j, "fps", c.fps, w);
  read_opt(j, "require_two_shots", c.require_two_shots, w);
  if (j.contains("factors")) {
    const Json& f = j.at("factors");
    check_keys(f, {"objects", "colors", "motions"}, w + ".factors");
    read_opt(f, "objects", c.space.n_objects, w + ".factors");
    read_opt(f, "colors", c.space.n_colors, w + ".factors");
    read_opt(f, "motions", c.space.n_motions, w + ".factors");
  }
  if (j.contains("render")) {
    const Json& r = j.at("render");
    check_keys(r, {"height", "width", "speed"}, w + ".render");
    read_opt(r, "height", c.render.height, w + ".render");
    read_opt(r, "width", c.render.width, w + ".render");
    read_opt(r, "speed", c.render.speed, w + ".render");
  }
  read_opt(j, "embed_dim", c.embed_dim, w);
  read_opt(j, "codebook_seed", c.codebook_seed, w);
  read_opt(j, "attribute_share", c.attribute_share, w);
  if (j.contains("hrf")) {
    const Json& h = j.at("hrf");
    const std::string hw = w + ".hrf";
    check_keys(h, {"a1", "b1", "a2", "b2", "undershoot_ratio", "support_seconds"}, hw);
    read_opt(h, "a1", c.hrf.a1, hw);
    read_opt(h, "b1", c.hrf.b1, hw);
    read_opt(h, "a2", c.hrf.a2, hw);
    read_opt(h, "b2", c.hrf.b2, hw);
    read_opt(h, "undershoot_ratio", c.hrf.undershoot_ratio, hw);
    read_opt(h, "support_seconds", c.hrf.support_seconds, hw);
  }
  if (j.contains("scan")) {
    const Json& s = j.at("scan");
    const std::string sw = w + ".scan";
    check_keys(s, {"tr_seconds", "n_scans", "noise_sigma", "dt", "offset_seconds", "timing"}, sw);
    read_opt(s, "tr_seconds", c.scan.tr_seconds, sw);
    read_opt(s, "n_scans", c.scan.n_scans, sw);
    read_opt(s, "noise_sigma", c.scan.noise_sigma, sw);
    read_opt(s, "dt", c.scan.dt, sw);
    read_opt(s, "offset_seconds", c.scan.offset_seconds, sw);
    std::string timing = c.scan.timing == ScanTiming::kMidpoint ? "midpoint" : "end";
    read_opt(s, "timing", timing, sw);
    if (timing == "end") c.scan.timing = ScanTiming::kEndOfInterval;
    else if (timing == "midpoint") c.scan.timing = ScanTiming::kMidpoint;
    else throw InvalidArgument(sw + ".timing: expected end or midpoint");
  }
  read_opt(j, "pool_size", c.pool_size, w);
  return c;
}

}  // namespace mshot
