#include "mshot/train.hpp"

#include "mshot/io.hpp"
#include "mshot/json_util.hpp"

#include <cmath>
#include <numeric>

namespace mshot {

namespace {

constexpr int kCheckpointVersion = 1;

void zero_frozen(Model& g, const TrainConfig& cfg) {
  if (!cfg.train_encoder) g.encoder.for_each([](const std::string&, MatF& m) { m.setZero(); });
  if (!cfg.train_sbp) g.sbp.for_each([](const std::string&, MatF& m) { m.setZero(); });
  if (!cfg.train_decoder) g.decoder.for_each([](const std::string&, MatF& m) { m.setZero(); });
  if (!cfg.objective.on.align) g.log_temperature.setZero();
}

Json terms_json(const LossTerms& t) {
  return {{"sbp", t.sbp}, {"caption", t.caption}, {"align", t.align}, {"mse", t.mse}};
}

LossTerms terms_from(const Json& j) {
  return {j.at("sbp").get<double>(), j.at("caption").get<double>(), j.at("align").get<double>(),
          j.at("mse").get<double>()};
}

}  // namespace

void TrainConfig::validate() const {
  require(adam.lr > 0, "train: lr must be positive");
  require(epochs >= 0, "train: epochs must be >= 0");
  require(batch >= 1, "train: batch must be >= 1");
  require(diffusion_steps >= 1, "train: diffusion_steps must be >= 1");
  require(probe_size >= 1, "train: probe_size must be >= 1");
  require(!objective.instruction.empty(), "train: decoder instruction tokens missing");
}

TrainState init_state(const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const std::vector<Example>& data) {
  TrainState s;
  s.seed = tcfg.seed;
  s.params = make_model<float>(mcfg, tcfg.seed);
  if (mcfg.memory_temperature > 0) attach_memory(s.params, data, mcfg.memory_temperature);
  s.optimizer = Adam<Model>(s.params, tcfg.adam);
  return s;
}

DiffusionToy<float> make_toy(const ModelConfig& mcfg, const TrainConfig& tcfg) {
  return DiffusionToy<float>::make(mcfg.input_dim, tcfg.diffusion_seed, tcfg.diffusion_steps,
                                   tcfg.diffusion_hidden);
}

double probe_loss(const Model& p, const std::vector<Example>& data, const TrainConfig& cfg,
                  const DiffusionToy<float>& toy) {
  std::vector<const Example*> batch;
  for (int i = 0; i < std::min<int>(cfg.probe_size, static_cast<int>(data.size())); ++i)
    batch.push_back(&data[i]);
  return batch_objective<float>(p, batch, cfg.objective, toy,
                                derive_seed(cfg.seed, hash_tag("probe")));
}

void train(TrainState& state, const std::vector<Example>& data, const TrainConfig& cfg,
           const std::function<void(const TrainState&)>& on_epoch) {
  cfg.validate();
  require(!data.empty(), "train: dataset is empty");
  const DiffusionToy<float> toy =
      DiffusionToy<float>::make(state.params.decoder.embed_dim(), cfg.diffusion_seed,
                                cfg.diffusion_steps, cfg.diffusion_hidden);
  const int n = static_cast<int>(data.size());
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, hash_tag("epoch"), static_cast<std::uint64_t>(epoch)));
    shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch + 1;
    int batches = 0;
    for (int b0 = 0; b0 < n; b0 += cfg.batch) {
      std::vector<const Example*> batch;
      for (int k = b0; k < std::min(n, b0 + cfg.batch); ++k) batch.push_back(&data[order[k]]);
      Model grad = zeros_like(state.params);
      LossTerms terms;
      const double loss = batch_objective<float>(
          state.params, batch, cfg.objective, toy,
          derive_seed(cfg.seed, hash_tag("step"), static_cast<std::uint64_t>(state.step)), &terms,
          &grad);
      if (!std::isfinite(loss) || !params_finite(grad))
        throw NumericalError("non-finite loss at step " + std::to_string(state.step), state.step);
      zero_frozen(grad, cfg);
      state.optimizer.step(state.params, grad);
      state.params.weights.project();
      if (!params_finite(state.params))
        throw NumericalError("non-finite parameters at step " + std::to_string(state.step),
                             state.step);
      ++state.step;
      ++batches;
      log.terms.sbp += terms.sbp;
      log.terms.caption += terms.caption;
      log.terms.align += terms.align;
      log.terms.mse += terms.mse;
      log.total += loss;
    }
    log.terms.sbp /= batches;
    log.terms.caption /= batches;
    log.terms.align /= batches;
    log.terms.mse /= batches;
    log.total /= batches;
    log.probe = probe_loss(state.params, data, cfg, toy);
    state.history.push_back(log);
    state.epoch = epoch + 1;
    if (on_epoch) on_epoch(state);
  }
}

TrainState train_sbp(const std::vector<Example>& data, const ModelConfig& mcfg, TrainConfig cfg) {
  cfg.objective.on = LossSwitches{true, false, false, false};
  cfg.train_decoder = false;
  TrainState s = init_state(mcfg, cfg, data);
  train(s, data, cfg);
  return s;
}

std::string encode_checkpoint(const TrainState& s, const std::string& config_hash) {
  Model params = s.params;
  Adam<Model> opt = s.optimizer;
  const auto p = refs_of(params);
  const auto m = refs_of(opt.first_moment());
  const auto v = refs_of(opt.second_moment());
  Json h;
  h["format"] = "mshot-checkpoint";
  h["version"] = kCheckpointVersion;
  h["dtype"] = "f32le";
  h["epoch"] = s.epoch;
  h["step"] = s.step;
  h["seed"] = s.seed;
  h["adam_steps"] = opt.steps();
  h["config_hash"] = config_hash;
  Json tensors = Json::array();
  for (std::size_t k = 0; k < p.size(); ++k)
    tensors.push_back({p.names[k], p.mats[k]->rows(), p.mats[k]->cols()});
  h["tensors"] = std::move(tensors);
  const MatF& mem = s.params.encoder.memory;
  h["memory"] = {{"rows", mem.rows()}, {"cols", mem.cols()},
                 {"temperature", s.params.encoder.memory_temperature}};
  Json hist = Json::array();
  for (const auto& e : s.history)
    hist.push_back(
        {{"epoch", e.epoch}, {"terms", terms_json(e.terms)}, {"total", e.total}, {"probe", e.probe}});
  h["history"] = std::move(hist);
  std::string out = h.dump() + "\n";
  for (const auto* set : {&p, &m, &v})
    for (auto* mat : set->mats) append_matrix(out, *mat);
  append_matrix(out, mem);
  return out;
}

TrainState decode_checkpoint(const std::string& bytes, const ModelConfig& mcfg,
                             const AdamConfig& adam, std::string* config_hash) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("checkpoint: missing header");
  Json h;
  try {
    h = Json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception&) {
    throw FormatError("checkpoint: unparseable header");
  }
  try {
    if (h.value("format", "") != "mshot-checkpoint") throw FormatError("checkpoint: wrong format tag");
    const int version = h.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw UnsupportedVersion("checkpoint: unsupported version " + std::to_string(version));
    TrainState s;
    s.seed = h.at("seed").get<std::uint64_t>();
    s.params = make_model<float>(mcfg, s.seed);
    s.optimizer = Adam<Model>(s.params, adam);
    s.epoch = h.at("epoch").get<int>();
    s.step = h.at("step").get<long>();
    s.optimizer.set_steps(h.at("adam_steps").get<long>());
    if (config_hash) *config_hash = h.at("config_hash").get<std::string>();
    for (const auto& e : h.at("history"))
      s.history.push_back({e.at("epoch").get<int>(), terms_from(e.at("terms")),
                           e.at("total").get<double>(), e.at("probe").get<double>()});
    auto p = refs_of(s.params);
    auto m = refs_of(s.optimizer.first_moment());
    auto v = refs_of(s.optimizer.second_moment());
    const Json& tensors = h.at("tensors");
    if (tensors.size() != p.size()) throw FormatError("checkpoint: tensor count does not match model");
    std::size_t expect = nl + 1;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (tensors[k][0].get<std::string>() != p.names[k] ||
          tensors[k][1].get<Eigen::Index>() != p.mats[k]->rows() ||
          tensors[k][2].get<Eigen::Index>() != p.mats[k]->cols())
        throw FormatError("checkpoint: tensor " + p.names[k] + " does not match model dims");
      expect += 3 * 4 * static_cast<std::size_t>(p.mats[k]->size());
    }
    const Json& mj = h.at("memory");
    const auto mem_rows = mj.at("rows").get<Eigen::Index>();
    const auto mem_cols = mj.at("cols").get<Eigen::Index>();
    if (mem_rows < 0 || (mem_rows > 0 && mem_cols != mcfg.input_dim))
      throw FormatError("checkpoint: encoder memory does not match model dims");
    expect += 4 * static_cast<std::size_t>(mem_rows * mem_cols);
    if (bytes.size() != expect) throw FormatError("checkpoint: truncated or oversized payload");
    std::size_t off = nl + 1;
    for (auto* set : {&p, &m, &v})
      for (auto* mat : set->mats) {
        *mat = read_matrix(bytes.data() + off, mat->rows(), mat->cols());
        off += 4 * static_cast<std::size_t>(mat->size());
      }
    s.params.encoder.memory = read_matrix(bytes.data() + off, mem_rows, mem_cols);
    s.params.encoder.memory_temperature = mj.at("temperature").get<float>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: " + std::string(e.what()));
  }
}

void save_checkpoint(const TrainState& s, const std::string& config_hash,
                     const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(s, config_hash));
}

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& mcfg,
                           const AdamConfig& adam, std::string* config_hash) {
  return decode_checkpoint(read_file(path), mcfg, adam, config_hash);
}

}  // namespace mshot
