#include "mshot/experiment.hpp"

#include "mshot/io.hpp"

#include <chrono>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mshot {

namespace fs = std::filesystem;

namespace {

constexpr int kReportVersion = 1;

Json parse_json_text(const std::string& text, const std::string& where) {
  try {
    return Json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(where + ": " + e.what());
  }
}

Json read_json_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw InvalidArgument(what + " not found: " + path.string());
  return parse_json_text(read_file(path), path.string());
}

std::string hash_doc(const Json& j) { return fnv1a_hex(j.dump()); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Json eval_to_json(const ExperimentConfig& c) {
  Json e;
  e["tau"] = c.eval.tau;
  e["segmentation"] = to_string(c.segmentation);
  if (c.decoder)
    e["decoder"] = *c.decoder;
  else
    e["decoder"] = "auto";
  e["prompt"] = to_string(c.eval.prompt);
  e["n_ways"] = c.eval.n_ways;
  e["top_k"] = c.eval.top_k;
  e["trials"] = c.eval.trials;
  return e;
}

struct Datasets {
  DatasetManifest train, test;
};

fs::path train_split_dir(const ExperimentConfig& c) { return c.data_dir() / "train"; }
fs::path test_split_dir(const ExperimentConfig& c) { return c.data_dir() / "test"; }

void require_dataset(const ExperimentConfig& c, const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw InvalidArgument("dataset missing at " + dir.string() + " (run synth first)");
  const Json stamp = read_json_file(c.data_dir() / run_files::kDataStamp, "dataset stamp");
  if (stamp.value("data_hash", "") != data_hash(c))
    throw InvalidArgument("dataset at " + c.data_dir().string() +
                          " was synthesized from a different config (run synth again)");
}

SemanticEmbedder make_embedder(const SynthConfig& s) {
  return SemanticEmbedder(s.space, s.embed_dim, s.codebook_seed, s.attribute_share);
}

std::vector<Example> load_train_examples(const ExperimentConfig& c) {
  require_dataset(c, train_split_dir(c));
  const DatasetManifest m = read_manifest(train_split_dir(c));
  const Lexicon lex(c.synth.space);
  return make_examples(m, make_embedder(c.synth), lex);
}

Json history_json(const std::vector<EpochLog>& history) {
  Json h = Json::array();
  for (const auto& e : history)
    h.push_back({{"epoch", e.epoch},
                 {"total", e.total},
                 {"probe", e.probe},
                 {"sbp", e.terms.sbp},
                 {"caption", e.terms.caption},
                 {"align", e.terms.align},
                 {"mse", e.terms.mse}});
  return h;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json sample_json(const SampleResult& s) {
  Json j;
  j["id"] = s.id;
  j["ratio_index"] = s.ratio_index;
  j["gt_bounds"] = s.gt_bounds;
  j["pred_bounds"] = s.pred_bounds;
  j["acc"] = optional_json(s.acc);
  j["ari"] = optional_json(s.ari);
  j["nmi"] = optional_json(s.nmi);
  j["caption_sim"] = s.caption_sim;
  j["caption_sim_video"] = s.caption_sim_video;
  j["exact"] = s.exact;
  j["ssim"] = s.ssim;
  j["nway_frame"] = s.nway_frame;
  j["nway_video"] = s.nway_video;
  Json shots = Json::array();
  for (const auto& sh : s.shots)
    shots.push_back({{"segment", sh.segment},
                     {"gt_caption", sh.gt_caption},
                     {"pred_caption", sh.pred_caption},
                     {"caption_sim", sh.caption_sim},
                     {"exact", sh.exact},
                     {"ssim", sh.ssim}});
  j["shots"] = std::move(shots);
  return j;
}

std::string fmt(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string pad(const std::string& s, std::size_t w) {
  // the ± sign is two bytes but one column
  std::size_t cols = 0;
  for (unsigned char ch : s) cols += (ch & 0xC0) != 0x80;
  return s + std::string(w > cols ? w - cols : 0, ' ');
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

Segmentation segmentation_from_string(const std::string& s) {
  if (s == "auto") return Segmentation::kAuto;
  if (s == "predicted") return Segmentation::kPredicted;
  if (s == "oracle") return Segmentation::kOracle;
  if (s == "none") return Segmentation::kNone;
  throw InvalidArgument("unknown segmentation '" + s + "' (auto | predicted | oracle | none)");
}

std::string to_string(Segmentation s) {
  switch (s) {
    case Segmentation::kAuto: return "auto";
    case Segmentation::kPredicted: return "predicted";
    case Segmentation::kOracle: return "oracle";
    case Segmentation::kNone: return "none";
  }
  return "auto";
}

ExperimentConfig ExperimentConfig::defaults(Protocol p) {
  ExperimentConfig c;
  c.synth = SynthConfig::defaults(p);
  c.synth.scan.noise_sigma = 0.05;
  c.train.epochs = 40;
  return c;
}

void ExperimentConfig::resolve() {
  const Lexicon lex(synth.space);
  model.input_dim = synth.embed_dim;
  model.vocab = lex.vocab_size();
  train.seed = seed;
  train.objective.on = losses;
  train.objective.pooling = pooling;
  train.objective.instruction = lex.instruction_tokens();
  if (segmentation == Segmentation::kAuto)
    segmentation = losses.sbp ? Segmentation::kPredicted : Segmentation::kNone;
  if (!decoder) decoder = losses.caption;
  eval.pooling = pooling;
  eval.seed = seed;
  eval.threads = threads;
  eval.segmented = segmentation != Segmentation::kNone;
  eval.oracle = segmentation == Segmentation::kOracle;
  eval.decoder_active = *decoder;
}

void ExperimentConfig::validate() const {
  require(!name.empty(), "name: must not be empty");
  require(threads >= 1, "threads: must be >= 1");
  synth.validate();
  require(data_sizes.n_train >= 1, "data.n_train: must be >= 1");
  require(data_sizes.n_test >= 1, "data.n_test: must be >= 1");
  require(data_sizes.test_pool >= 2, "data.test_pool: must be >= 2");
  require(checkpoint_every >= 0, "train.checkpoint_every: must be >= 0");
  require(losses.sbp || losses.caption || losses.align || losses.mse,
          "losses: at least one term must be enabled");
  require(segmentation != Segmentation::kPredicted || losses.sbp,
          "eval.segmentation: 'predicted' needs the sbp loss");
  model.validate();
  train.validate();
  eval.validate();
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  j["protocol"] = to_string(c.synth.protocol);
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["paths"] = {{"out", c.out.generic_string()}, {"data", c.data.generic_string()}};
  Json s = synth_config_to_json(c.synth);
  s.erase("protocol");
  j["synth"] = std::move(s);
  j["data"] = {{"n_train", c.data_sizes.n_train},
               {"n_test", c.data_sizes.n_test},
               {"test_pool", c.data_sizes.test_pool}};
  j["model"] = {{"encoder_hidden", c.model.encoder_hidden},
                {"memory_temperature", c.model.memory_temperature},
                {"hidden_d", c.model.hidden_d},
                {"head", to_string(c.model.head)},
                {"token_dim", c.model.token_dim},
                {"decoder_hidden", c.model.decoder_hidden},
                {"temperature_init", c.model.temperature_init}};
  j["losses"] = {{"sbp", c.losses.sbp},
                 {"caption", c.losses.caption},
                 {"align", c.losses.align},
                 {"mse", c.losses.mse},
                 {"weight_mode", to_string(c.model.weight_mode)},
                 {"pooling", to_string(c.pooling)}};
  const TrainConfig& t = c.train;
  j["train"] = {{"lr", t.adam.lr},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"eps", t.adam.eps},
                {"clip_norm", t.adam.clip_norm},
                {"epochs", t.epochs},
                {"batch", t.batch},
                {"train_encoder", t.train_encoder},
                {"train_sbp", t.train_sbp},
                {"train_decoder", t.train_decoder},
                {"diffusion_steps", t.diffusion_steps},
                {"diffusion_hidden", t.diffusion_hidden},
                {"diffusion_seed", t.diffusion_seed},
                {"probe_size", t.probe_size},
                {"checkpoint_every", c.checkpoint_every}};
  j["eval"] = eval_to_json(c);
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  check_keys(j, {"name", "protocol", "seed", "threads", "paths", "synth", "data", "model", "losses",
                 "train", "eval"},
             "config");
  std::string protocol = "cc2017-syn";
  read_opt(j, "protocol", protocol, "config");
  ExperimentConfig c = ExperimentConfig::defaults(protocol_from_string(protocol));
  read_opt(j, "name", c.name, "config");
  read_opt(j, "seed", c.seed, "config");
  read_opt(j, "threads", c.threads, "config");
  if (j.contains("paths")) {
    const Json& p = j.at("paths");
    check_keys(p, {"out", "data"}, "paths");
    std::string out = c.out.string(), data = c.data.string();
    read_opt(p, "out", out, "paths");
    read_opt(p, "data", data, "paths");
    c.out = out;
    c.data = data;
  }
  Json s = synth_config_to_json(c.synth);
  if (j.contains("synth")) {
    if (!j.at("synth").is_object()) throw InvalidArgument("synth: expected an object");
    if (j.at("synth").contains("protocol"))
      throw InvalidArgument("synth: unknown key 'protocol' (set it at the top level)");
    s.merge_patch(j.at("synth"));
  }
  c.synth = synth_config_from_json(s);
  if (j.contains("data")) {
    const Json& d = j.at("data");
    check_keys(d, {"n_train", "n_test", "test_pool"}, "data");
    read_opt(d, "n_train", c.data_sizes.n_train, "data");
    read_opt(d, "n_test", c.data_sizes.n_test, "data");
    read_opt(d, "test_pool", c.data_sizes.test_pool, "data");
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    check_keys(m, {"encoder_hidden", "memory_temperature", "hidden_d", "head", "token_dim",
                   "decoder_hidden", "temperature_init"},
               "model");
    read_opt(m, "encoder_hidden", c.model.encoder_hidden, "model");
    read_opt(m, "memory_temperature", c.model.memory_temperature, "model");
    read_opt(m, "hidden_d", c.model.hidden_d, "model");
    std::string head = to_string(c.model.head);
    read_opt(m, "head", head, "model");
    c.model.head = head_mode_from_string(head);
    read_opt(m, "token_dim", c.model.token_dim, "model");
    read_opt(m, "decoder_hidden", c.model.decoder_hidden, "model");
    read_opt(m, "temperature_init", c.model.temperature_init, "model");
  }
  if (j.contains("losses")) {
    const Json& l = j.at("losses");
    check_keys(l, {"sbp", "caption", "align", "mse", "weight_mode", "pooling"}, "losses");
    read_opt(l, "sbp", c.losses.sbp, "losses");
    read_opt(l, "caption", c.losses.caption, "losses");
    read_opt(l, "align", c.losses.align, "losses");
    read_opt(l, "mse", c.losses.mse, "losses");
    std::string wm = to_string(c.model.weight_mode), pool = to_string(c.pooling);
    read_opt(l, "weight_mode", wm, "losses");
    read_opt(l, "pooling", pool, "losses");
    c.model.weight_mode = weight_mode_from_string(wm);
    c.pooling = pooling_from_string(pool);
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    check_keys(t, {"lr", "beta1", "beta2", "eps", "clip_norm", "epochs", "batch", "train_encoder",
                   "train_sbp", "train_decoder", "diffusion_steps", "diffusion_hidden",
                   "diffusion_seed", "probe_size", "checkpoint_every"},
               "train");
    read_opt(t, "lr", c.train.adam.lr, "train");
    read_opt(t, "beta1", c.train.adam.beta1, "train");
    read_opt(t, "beta2", c.train.adam.beta2, "train");
    read_opt(t, "eps", c.train.adam.eps, "train");
    read_opt(t, "clip_norm", c.train.adam.clip_norm, "train");
    read_opt(t, "epochs", c.train.epochs, "train");
    read_opt(t, "batch", c.train.batch, "train");
    read_opt(t, "train_encoder", c.train.train_encoder, "train");
    read_opt(t, "train_sbp", c.train.train_sbp, "train");
    read_opt(t, "train_decoder", c.train.train_decoder, "train");
    read_opt(t, "diffusion_steps", c.train.diffusion_steps, "train");
    read_opt(t, "diffusion_hidden", c.train.diffusion_hidden, "train");
    read_opt(t, "diffusion_seed", c.train.diffusion_seed, "train");
    read_opt(t, "probe_size", c.train.probe_size, "train");
    read_opt(t, "checkpoint_every", c.checkpoint_every, "train");
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    check_keys(e, {"tau", "segmentation", "decoder", "prompt", "n_ways", "top_k", "trials"}, "eval");
    read_opt(e, "tau", c.eval.tau, "eval");
    std::string seg = to_string(c.segmentation), prompt = to_string(c.eval.prompt);
    read_opt(e, "segmentation", seg, "eval");
    read_opt(e, "prompt", prompt, "eval");
    c.segmentation = segmentation_from_string(seg);
    c.eval.prompt = prompt_mode_from_string(prompt);
    if (e.contains("decoder")) {
      const Json& d = e.at("decoder");
      if (d.is_boolean())
        c.decoder = d.get<bool>();
      else if (d.is_string() && d.get<std::string>() == "auto")
        c.decoder.reset();
      else
        throw InvalidArgument("eval.decoder: expected true, false or \"auto\"");
    }
    read_opt(e, "n_ways", c.eval.n_ways, "eval");
    read_opt(e, "top_k", c.eval.top_k, "eval");
    read_opt(e, "trials", c.eval.trials, "eval");
  }
  c.resolve();
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  return config_from_json(read_json_file(path, "config file"));
}

std::string config_hash(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j.erase("paths");
  j.erase("threads");
  return hash_doc(j);
}

std::string data_hash(const ExperimentConfig& c) {
  const Json j = config_to_json(c);
  return hash_doc({{"protocol", j["protocol"]}, {"seed", j["seed"]}, {"synth", j["synth"]},
                   {"data", j["data"]}});
}

std::string train_hash(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  for (const char* k : {"paths", "threads", "name", "eval"}) j.erase(k);
  return hash_doc(j);
}

void write_resolved_config(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j["config_hash"] = config_hash(c);
  write_file(c.out / run_files::kResolvedConfig, j.dump(2) + "\n");
}

SynthSummary run_synth(const ExperimentConfig& c, std::ostream& log) {
  const fs::path dir = c.data_dir();
  DirLock lock(dir);
  SynthSummary summary;
  const fs::path stamp_path = dir / run_files::kDataStamp;
  const std::string dh = data_hash(c);
  if (fs::exists(stamp_path) && fs::exists(train_split_dir(c) / "manifest.json") &&
      fs::exists(test_split_dir(c) / "manifest.json")) {
    const Json stamp = read_json_file(stamp_path, "dataset stamp");
    if (stamp.value("data_hash", "") == dh) {
      summary.reused = true;
      summary.train_ratio_counts = stamp.at("train_ratio_counts").get<std::vector<int>>();
      summary.test_ratio_counts = stamp.at("test_ratio_counts").get<std::vector<int>>();
      log << "dataset " << dir.string() << " up to date (" << dh << ")\n";
      return summary;
    }
  }
  const Lexicon lex(c.synth.space);
  const ClipPool train_pool =
      make_clip_pool(c.synth, lex, c.synth.pool_size, derive_seed(c.seed, hash_tag("pool/train")));
  const ClipPool test_pool = make_clip_pool(c.synth, lex, c.data_sizes.test_pool,
                                            derive_seed(c.seed, hash_tag("pool/test")));
  const DatasetManifest train =
      synthesize(train_pool, c.data_sizes.n_train, c.synth, "train", c.seed, c.threads);
  const DatasetManifest test =
      synthesize(test_pool, c.data_sizes.n_test, c.synth, "test", c.seed, c.threads);
  fs::remove(stamp_path);
  write_manifest(train, train_split_dir(c));
  write_manifest(test, test_split_dir(c));
  // validation pass over what was written
  read_manifest(train_split_dir(c));
  read_manifest(test_split_dir(c));
  summary.train_ratio_counts = train.ratio_counts;
  summary.test_ratio_counts = test.ratio_counts;
  Json stamp = {{"format", "mshot-dataset-stamp"},
                {"data_hash", dh},
                {"train_ratio_counts", train.ratio_counts},
                {"test_ratio_counts", test.ratio_counts}};
  write_file(stamp_path, stamp.dump(2) + "\n");
  auto counts = [&](const std::vector<int>& v) {
    std::string s;
    for (std::size_t r = 0; r < v.size(); ++r) {
      Json ratio = c.synth.ratios[r];
      s += (r ? "  " : "") + ratio.dump() + ":" + std::to_string(v[r]);
    }
    return s;
  };
  log << "synthesized " << train.n_samples() << " train / " << test.n_samples()
      << " test samples into " << dir.string() << "\n";
  log << "  train ratios " << counts(train.ratio_counts) << "\n";
  log << "  test ratios  " << counts(test.ratio_counts) << "\n";
  return summary;
}

TrainState run_train(const ExperimentConfig& c, const std::optional<fs::path>& resume,
                     std::ostream& log) {
  const std::vector<Example> data = load_train_examples(c);
  DirLock lock(c.out);
  write_resolved_config(c);
  const std::string hash = config_hash(c);
  TrainState state;
  if (resume) {
    if (!fs::exists(*resume)) throw InvalidArgument("checkpoint not found: " + resume->string());
    try {
      state = load_checkpoint(*resume, c.model, c.train.adam);
    } catch (const UnsupportedVersion&) {
      throw;
    } catch (const FormatError& e) {
      throw InvalidArgument(std::string("checkpoint incompatible with config: ") + e.what());
    }
    require(state.seed == c.seed, "checkpoint seed differs from config seed");
    log << "resuming from " << resume->string() << " at epoch " << state.epoch << "\n";
  } else {
    state = init_state(c.model, c.train, data);
  }
  const auto t0 = std::chrono::steady_clock::now();
  train(state, data, c.train, [&](const TrainState& s) {
    const EpochLog& e = s.history.back();
    log << "epoch " << e.epoch << "/" << c.train.epochs << "  loss " << fmt(e.total, 4) << "  sbp "
        << fmt(e.terms.sbp, 4) << "  caption " << fmt(e.terms.caption, 4) << "  align "
        << fmt(e.terms.align, 4) << "  mse " << fmt(e.terms.mse, 4) << "  probe "
        << fmt(e.probe, 4) << "\n";
    log.flush();
    const std::string bytes = encode_checkpoint(s, hash);
    write_file(c.out / run_files::kCheckpoint, bytes);
    if (c.checkpoint_every > 0 && s.epoch % c.checkpoint_every == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", s.epoch);
      write_file(c.out / "checkpoints" / name, bytes);
    }
  });
  if (state.history.empty() || state.epoch == 0)
    write_file(c.out / run_files::kCheckpoint, encode_checkpoint(state, hash));
  const Json report = make_report(c, state.history, nullptr,
                                  {{"train_seconds", seconds_since(t0)}});
  write_file(c.out / run_files::kReport, report.dump(2) + "\n");
  return state;
}

Json run_eval(const ExperimentConfig& c, const std::optional<fs::path>& checkpoint,
              std::ostream& log) {
  require_dataset(c, test_split_dir(c));
  const fs::path ckpt = checkpoint ? *checkpoint : c.out / run_files::kCheckpoint;
  if (!fs::exists(ckpt)) throw InvalidArgument("checkpoint not found: " + ckpt.string());
  TrainState state;
  try {
    state = load_checkpoint(ckpt, c.model, c.train.adam);
  } catch (const UnsupportedVersion&) {
    throw;
  } catch (const FormatError& e) {
    throw InvalidArgument(std::string("checkpoint incompatible with config: ") + e.what());
  }
  const DatasetManifest test = read_manifest(test_split_dir(c));
  DirLock lock(c.out);
  write_resolved_config(c);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalResult result = evaluate(state.params, test, c.eval);
  Json timings = {{"eval_seconds", seconds_since(t0)}};
  const fs::path report_path = c.out / run_files::kReport;
  if (fs::exists(report_path)) {
    try {
      const Json old = parse_json_text(read_file(report_path), report_path.string());
      if (old.contains("timings") && old["timings"].contains("train_seconds"))
        timings["train_seconds"] = old["timings"]["train_seconds"];
    } catch (const InvalidArgument&) {
    }
  }
  const Json report = make_report(c, state.history, &result, timings);
  write_file(report_path, report.dump(2) + "\n");
  const RenderedReport r = render_report(report);
  write_file(c.out / run_files::kReportText, r.text);
  write_file(c.out / run_files::kReportCsv, r.csv);
  log << r.text;
  return report;
}

Json make_report(const ExperimentConfig& c, const std::vector<EpochLog>& history,
                 const EvalResult* result, const Json& timings) {
  Json r;
  r["format"] = "mshot-report";
  r["version"] = kReportVersion;
  r["name"] = c.name;
  r["config_hash"] = config_hash(c);
  r["history"] = history_json(history);
  Json table = Json::array();
  Json samples = Json::array();
  if (result) {
    for (const auto& row : result->table)
      table.push_back({{"metric", row.name},
                       {"mean", row.stats.mean},
                       {"stderr", row.stats.stderr_},
                       {"n", row.n}});
    for (const auto& s : result->samples) samples.push_back(sample_json(s));
  }
  r["table"] = std::move(table);
  r["samples"] = std::move(samples);
  r["timings"] = timings;
  r["content_hash"] = report_content_hash(r);
  return r;
}

std::string report_content_hash(const Json& report) {
  Json j = report;
  j.erase("timings");
  j.erase("content_hash");
  return hash_doc(j);
}

void verify_report(const Json& report) {
  if (!report.is_object() || report.value("format", "") != "mshot-report")
    throw FormatError("report: not an mshot report");
  if (report.value("version", 0) != kReportVersion)
    throw UnsupportedVersion("report: unsupported version");
  if (!report.contains("content_hash") || !report["content_hash"].is_string())
    throw FormatError("report: missing content hash");
  if (report["content_hash"].get<std::string>() != report_content_hash(report))
    throw FormatError("report integrity check failed: content hash mismatch");
}

RenderedReport render_report(const Json& report) {
  verify_report(report);
  RenderedReport out;
  std::ostringstream text;
  text << "run " << report.at("name").get<std::string>() << "  config "
       << report.at("config_hash").get<std::string>() << "\n";
  const Json& hist = report.at("history");
  if (!hist.empty()) {
    const Json& last = hist.back();
    text << "epochs " << last.at("epoch").get<int>() << "  final loss "
         << fmt(last.at("total").get<double>(), 4) << "  probe "
         << fmt(last.at("probe").get<double>(), 4) << "\n";
  }
  const Json& table = report.at("table");
  std::size_t w = 6;
  for (const auto& row : table) w = std::max(w, row.at("metric").get<std::string>().size());
  text << pad("metric", w + 2) << pad("value", 16) << "n\n";
  std::ostringstream csv;
  csv << "metric,mean,stderr,n\n";
  for (const auto& row : table) {
    const std::string name = row.at("metric").get<std::string>();
    const MeanStderr st{row.at("mean").is_number() ? row.at("mean").get<double>() : NAN,
                        row.at("stderr").is_number() ? row.at("stderr").get<double>() : NAN};
    text << pad(name, w + 2) << pad(format_mean_stderr(st), 16) << row.at("n").get<int>() << "\n";
    csv << csv_field(name) << "," << fmt(st.mean, 6) << "," << fmt(st.stderr_, 6) << ","
        << row.at("n").get<int>() << "\n";
  }
  out.text = text.str();
  out.csv = csv.str();
  return out;
}

RenderedReport cmd_report(const fs::path& dir) {
  const fs::path path = dir / run_files::kReport;
  if (!fs::exists(path)) throw InvalidArgument("no report in " + dir.string());
  Json report;
  try {
    report = Json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report: unparseable " + path.string());
  }
  verify_report(report);
  const fs::path resolved = dir / run_files::kResolvedConfig;
  if (fs::exists(resolved)) {
    const Json cfg = read_json_file(resolved, "resolved config");
    if (cfg.value("config_hash", "") != report.value("config_hash", ""))
      throw FormatError("report integrity check failed: config hash differs from " +
                        resolved.string());
  }
  const RenderedReport r = render_report(report);
  write_file(dir / run_files::kReportText, r.text);
  write_file(dir / run_files::kReportCsv, r.csv);
  return r;
}

AblationSpec ablation_from_json(const Json& j, const fs::path& base_dir) {
  check_keys(j, {"name", "base", "runs", "metrics"}, "ablation");
  AblationSpec spec;
  spec.name = j.value("name", "ablation");
  if (j.contains("base")) {
    const Json& b = j.at("base");
    if (b.is_string())
      spec.base = read_json_file(base_dir / b.get<std::string>(), "ablation base config");
    else if (b.is_object())
      spec.base = b;
    else
      throw InvalidArgument("ablation.base: expected a path or an object");
  } else {
    spec.base = Json::object();
  }
  if (!j.contains("runs") || !j.at("runs").is_array() || j.at("runs").empty())
    throw InvalidArgument("ablation.runs: expected a non-empty array");
  for (const auto& r : j.at("runs")) {
    check_keys(r, {"name", "override"}, "ablation.runs[]");
    if (!r.contains("name") || !r.at("name").is_string())
      throw InvalidArgument("ablation.runs[]: every run needs a name");
    AblationRun run{r.at("name").get<std::string>(), r.value("override", Json::object())};
    for (const auto& other : spec.runs)
      if (other.name == run.name) throw InvalidArgument("ablation: duplicate run name " + run.name);
    if (run.name.find_first_of("/\\") != std::string::npos || run.name == "." || run.name == ".." ||
        run.name == "data")
      throw InvalidArgument("ablation: invalid run name " + run.name);
    spec.runs.push_back(std::move(run));
  }
  read_opt(j, "metrics", spec.metrics, "ablation");
  return spec;
}

AblationSpec load_ablation(const fs::path& path) {
  return ablation_from_json(read_json_file(path, "ablation spec"), path.parent_path());
}

ExperimentConfig ablation_run_config(const AblationSpec& spec, const AblationRun& run,
                                     const fs::path& out, const Json& flags) {
  Json j = spec.base;
  j.merge_patch(run.overrides);
  j.merge_patch(flags);
  j["name"] = run.name;
  j["paths"] = {{"out", (out / run.name).generic_string()}, {"data", ""}};
  ExperimentConfig c = config_from_json(j);
  c.data = out / "data" / data_hash(c);
  return c;
}

Json run_ablation(const AblationSpec& spec, const fs::path& out, const Json& flags,
                  std::ostream& log) {
  std::vector<ExperimentConfig> configs;
  for (const auto& run : spec.runs) configs.push_back(ablation_run_config(spec, run, out, flags));
  DirLock lock(out);
  std::vector<std::pair<std::string, fs::path>> trained;  // train hash -> run dir
  Json runs = Json::array();
  for (const auto& c : configs) {
    log << "== " << c.name << "\n";
    run_synth(c, log);
    const std::string th = train_hash(c);
    const fs::path* prior = nullptr;
    for (const auto& [h, dir] : trained)
      if (h == th) prior = &dir;
    if (prior) {
      log << "reusing checkpoint of " << prior->string() << "\n";
      fs::create_directories(c.out);
      write_file(c.out / run_files::kCheckpoint, read_file(*prior / run_files::kCheckpoint));
      write_file(c.out / run_files::kReport, read_file(*prior / run_files::kReport));
    } else {
      run_train(c, std::nullopt, log);
      trained.emplace_back(th, c.out);
    }
    const Json report = run_eval(c, std::nullopt, log);
    runs.push_back({{"name", c.name},
                    {"config_hash", report.at("config_hash")},
                    {"table", report.at("table")}});
  }
  Json a;
  a["format"] = "mshot-ablation";
  a["version"] = kReportVersion;
  a["name"] = spec.name;
  a["metrics"] = spec.metrics;
  a["runs"] = std::move(runs);
  a["content_hash"] = report_content_hash(a);
  write_file(out / "ablation.json", a.dump(2) + "\n");
  const RenderedReport r = render_ablation(a);
  write_file(out / "ablation.txt", r.text);
  write_file(out / "ablation.csv", r.csv);
  log << r.text;
  return a;
}

RenderedReport render_ablation(const Json& a) {
  if (a.value("format", "") != "mshot-ablation") throw FormatError("not an ablation document");
  if (a.value("content_hash", "") != report_content_hash(a))
    throw FormatError("ablation integrity check failed: content hash mismatch");
  std::vector<std::string> metrics = a.at("metrics").get<std::vector<std::string>>();
  if (metrics.empty())
    for (const auto& row : a.at("runs").at(0).at("table"))
      metrics.push_back(row.at("metric").get<std::string>());
  std::size_t w = 3;
  for (const auto& run : a.at("runs")) w = std::max(w, run.at("name").get<std::string>().size());
  std::ostringstream text, csv;
  text << "ablation " << a.at("name").get<std::string>() << "\n" << pad("run", w + 2);
  for (const auto& m : metrics) text << pad(m, std::max<std::size_t>(m.size(), 14) + 2);
  text << "\n";
  csv << "run,metric,mean,stderr,n\n";
  for (const auto& run : a.at("runs")) {
    const std::string name = run.at("name").get<std::string>();
    text << pad(name, w + 2);
    for (const auto& m : metrics) {
      std::string cell = "-";
      for (const auto& row : run.at("table"))
        if (row.at("metric").get<std::string>() == m) {
          const MeanStderr st{row.at("mean").is_number() ? row.at("mean").get<double>() : NAN,
                              row.at("stderr").is_number() ? row.at("stderr").get<double>() : NAN};
          cell = format_mean_stderr(st);
          csv << csv_field(name) << "," << csv_field(m) << "," << fmt(st.mean, 6) << ","
              << fmt(st.stderr_, 6) << "," << row.at("n").get<int>() << "\n";
        }
      text << pad(cell, std::max<std::size_t>(m.size(), 14) + 2);
    }
    text << "\n";
  }
  return {text.str(), csv.str()};
}

}  // namespace mshot
