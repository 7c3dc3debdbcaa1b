// mshot: synthesize datasets, train, evaluate, run ablation grids and render
// reports from a JSON experiment config.

#include "mshot/experiment.hpp"
#include "mshot/io.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <optional>
#include <string>

namespace {

using mshot::Json;

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kNumerical = 4 };

struct Flags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<double> lr;
  std::optional<int> epochs;
  std::optional<int> batch;
  std::optional<int> hidden_d;
  bool oracle = false;

  Json patch() const {
    Json j = Json::object();
    if (seed) j["seed"] = *seed;
    if (out) j["paths"]["out"] = *out;
    if (threads) j["threads"] = *threads;
    if (lr) j["train"]["lr"] = *lr;
    if (epochs) j["train"]["epochs"] = *epochs;
    if (batch) j["train"]["batch"] = *batch;
    if (hidden_d) j["model"]["hidden_d"] = *hidden_d;
    if (oracle) j["eval"]["segmentation"] = "oracle";
    return j;
  }
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--seed", f.seed, "Global seed");
  cmd->add_option("--out", f.out, "Run directory");
  cmd->add_option("--threads", f.threads, "Worker threads for synthesis and evaluation")
      ->check(CLI::PositiveNumber);
}

void add_train_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--epochs", f.epochs, "Training epochs");
  cmd->add_option("--batch", f.batch, "Batch size");
  cmd->add_option("--hidden-d", f.hidden_d, "Boundary predictor width d");
}

mshot::ExperimentConfig load(const std::string& path, const Flags& f) {
  Json j;
  {
    if (!std::filesystem::exists(path))
      throw mshot::InvalidArgument("config file not found: " + path);
    try {
      j = Json::parse(mshot::read_file(path), nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw mshot::InvalidArgument(path + ": " + e.what());
    }
  }
  j.merge_patch(f.patch());
  return mshot::config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-shot decoding experiments on synthetic scan data"};
  app.require_subcommand(1);
  Flags flags;
  std::string config_path, run_dir;
  std::optional<std::string> resume, checkpoint;

  auto* synth = app.add_subcommand("synth", "Synthesize train and test datasets");
  synth->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(synth, flags);

  auto* train = app.add_subcommand("train", "Train on the synthesized train split");
  train->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(train, flags);
  add_train_flags(train, flags);
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  eval->add_option("config", config_path, "Experiment config (JSON)")->required();
  add_common(eval, flags);
  add_train_flags(eval, flags);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/model.ckpt)");
  eval->add_flag("--oracle", flags.oracle, "Use ground-truth boundaries");

  auto* ablate = app.add_subcommand("ablate", "Run every configuration of an ablation spec");
  ablate->add_option("spec", config_path, "Ablation spec (JSON)")->required();
  ablate->add_option("--out", flags.out, "Output directory")->required();
  ablate->add_option("--seed", flags.seed, "Global seed");
  ablate->add_option("--threads", flags.threads, "Worker threads")->check(CLI::PositiveNumber);
  add_train_flags(ablate, flags);

  auto* report = app.add_subcommand("report", "Render a run's report as text and CSV");
  report->add_option("run_dir", run_dir, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (synth->parsed()) {
      const auto cfg = load(config_path, flags);
      mshot::write_resolved_config(cfg);
      mshot::run_synth(cfg, std::cout);
    } else if (train->parsed()) {
      const auto cfg = load(config_path, flags);
      mshot::run_train(cfg, resume ? std::optional<std::filesystem::path>(*resume) : std::nullopt,
                       std::cout);
    } else if (eval->parsed()) {
      const auto cfg = load(config_path, flags);
      mshot::run_eval(cfg,
                      checkpoint ? std::optional<std::filesystem::path>(*checkpoint) : std::nullopt,
                      std::cout);
    } else if (ablate->parsed()) {
      const auto spec = mshot::load_ablation(config_path);
      Json patch = flags.patch();
      patch.erase("paths");
      mshot::run_ablation(spec, *flags.out, patch, std::cout);
    } else if (report->parsed()) {
      const auto r = mshot::cmd_report(run_dir);
      std::cout << r.text;
    }
  } catch (const mshot::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const mshot::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const mshot::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const mshot::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kOk;
}
