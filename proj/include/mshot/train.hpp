#pragma once

// Joint training loop over precomputed examples, with per-epoch
// checkpoints that resume bit-exactly.

#include "mshot/model.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace mshot {

struct TrainConfig {
  AdamConfig adam;
  int epochs = 20;
  int batch = 32;
  std::uint64_t seed = 1;
  Objective objective;
  bool train_encoder = true;
  bool train_sbp = true;
  bool train_decoder = true;
  int diffusion_steps = 50;
  int diffusion_hidden = 64;
  std::uint64_t diffusion_seed = 11;
  int probe_size = 32;  // fixed leading examples whose loss is logged per epoch

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  LossTerms terms;  // means over the epoch's batches
  double total = 0.0;
  double probe = 0.0;
};

struct TrainState {
  Model params;
  Adam<Model> optimizer;
  int epoch = 0;  // completed epochs
  long step = 0;
  std::uint64_t seed = 0;
  std::vector<EpochLog> history;
};

/// Fresh state; the encoder memory (when enabled) is built from `data`.
TrainState init_state(const ModelConfig& mcfg, const TrainConfig& tcfg,
                      const std::vector<Example>& data);

/// Runs epochs [state.epoch, cfg.epochs). `on_epoch` sees each finished
/// epoch after the state has been updated (checkpoint hook). Throws
/// NumericalError with the step index on a non-finite loss.
void train(TrainState& state, const std::vector<Example>& data, const TrainConfig& cfg,
           const std::function<void(const TrainState&)>& on_epoch = {});

/// Boundary-predictor-only training: all auxiliary terms switched off.
TrainState train_sbp(const std::vector<Example>& data, const ModelConfig& mcfg, TrainConfig cfg);

DiffusionToy<float> make_toy(const ModelConfig& mcfg, const TrainConfig& tcfg);

/// Loss of a fixed batch with a fixed noise stream; used for monitoring.
double probe_loss(const Model& p, const std::vector<Example>& data, const TrainConfig& cfg,
                  const DiffusionToy<float>& toy);

std::string encode_checkpoint(const TrainState& s, const std::string& config_hash);
/// Restores a checkpoint into a state shaped by mcfg; throws FormatError on
/// shape or format mismatch and UnsupportedVersion on a version mismatch.
TrainState decode_checkpoint(const std::string& bytes, const ModelConfig& mcfg,
                             const AdamConfig& adam, std::string* config_hash = nullptr);

void save_checkpoint(const TrainState& s, const std::string& config_hash,
                     const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& mcfg,
                           const AdamConfig& adam, std::string* config_hash = nullptr);

}  // namespace mshot
