#pragma once

// Config-driven experiment runner: dataset synthesis, training, evaluation,
// ablation grids and report rendering over a run directory.

#include "mshot/evaluate.hpp"
#include "mshot/json_util.hpp"
#include "mshot/train.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mshot {

struct DataConfig {
  int n_train = 2000;
  int n_test = 200;
  int test_pool = 400;
};

/// How test sequences are segmented at evaluation.
enum class Segmentation { kAuto, kPredicted, kOracle, kNone };

Segmentation segmentation_from_string(const std::string& s);
std::string to_string(Segmentation s);

struct ExperimentConfig {
  std::string name = "run";
  std::uint64_t seed = 1;
  int threads = 1;
  std::filesystem::path out = "runs/run";
  std::filesystem::path data;  // empty: <out>/data

  SynthConfig synth;
  DataConfig data_sizes;
  ModelConfig model;
  LossSwitches losses;
  Pooling pooling = Pooling::kMean;
  TrainConfig train;
  int checkpoint_every = 0;  // keep epoch snapshots every k epochs; 0 keeps only the latest

  EvalConfig eval;
  Segmentation segmentation = Segmentation::kAuto;  // auto: predicted when sbp is on, else none
  std::optional<bool> decoder;                      // unset: on when the caption term is on

  static ExperimentConfig defaults(Protocol p);

  /// Fills derived fields (vocabulary, input width, auto settings).
  void resolve();
  void validate() const;

  std::filesystem::path data_dir() const { return data.empty() ? out / "data" : data; }
};

Json config_to_json(const ExperimentConfig& c);
/// Starts from the protocol defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a of the resolved config document.
std::string config_hash(const ExperimentConfig& c);
/// Hash of the fields that determine the datasets.
std::string data_hash(const ExperimentConfig& c);
/// Hash of the fields that determine training (everything but evaluation).
std::string train_hash(const ExperimentConfig& c);

namespace run_files {
inline constexpr const char* kResolvedConfig = "config.resolved.json";
inline constexpr const char* kCheckpoint = "model.ckpt";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kReportText = "report.txt";
inline constexpr const char* kReportCsv = "report.csv";
inline constexpr const char* kDataStamp = "dataset.json";
}  // namespace run_files

/// Writes the resolved config next to the run outputs.
void write_resolved_config(const ExperimentConfig& c);

struct SynthSummary {
  bool reused = false;
  std::vector<int> train_ratio_counts;
  std::vector<int> test_ratio_counts;
};

/// Synthesizes train and test splits under data_dir(); an existing dataset
/// with a matching stamp is reused.
SynthSummary run_synth(const ExperimentConfig& c, std::ostream& log);

/// Trains from scratch or from `resume`; writes the checkpoint and a report
/// holding the loss curves. Throws InvalidArgument when the dataset is missing.
TrainState run_train(const ExperimentConfig& c, const std::optional<std::filesystem::path>& resume,
                     std::ostream& log);

/// Evaluates a checkpoint (default <out>/model.ckpt) on the test split and
/// writes report.json plus the rendered tables.
Json run_eval(const ExperimentConfig& c, const std::optional<std::filesystem::path>& checkpoint,
              std::ostream& log);

/// Report document; `content_hash` covers everything except timings.
Json make_report(const ExperimentConfig& c, const std::vector<EpochLog>& history,
                 const EvalResult* result, const Json& timings);
std::string report_content_hash(const Json& report);
/// Throws FormatError when the stored hash does not match the content.
void verify_report(const Json& report);

struct RenderedReport {
  std::string text;
  std::string csv;
};

RenderedReport render_report(const Json& report);
/// Reads and verifies <dir>/report.json and writes report.txt and report.csv.
RenderedReport cmd_report(const std::filesystem::path& dir);

/// One run of an ablation grid: a partial config merged over the base.
struct AblationRun {
  std::string name;
  Json overrides;
};

struct AblationSpec {
  std::string name;
  Json base;  // partial experiment config
  std::vector<AblationRun> runs;
  std::vector<std::string> metrics;  // rows of the comparison table
};

AblationSpec ablation_from_json(const Json& j, const std::filesystem::path& base_dir);
AblationSpec load_ablation(const std::filesystem::path& path);

/// Config of one run: base, then run overrides, then `flags` (CLI overrides).
ExperimentConfig ablation_run_config(const AblationSpec& spec, const AblationRun& run,
                                     const std::filesystem::path& out, const Json& flags);

/// Runs every configuration under out/<run name>, sharing datasets and
/// reusing checkpoints of runs with identical training settings. Writes
/// out/ablation.json, ablation.txt and ablation.csv.
Json run_ablation(const AblationSpec& spec, const std::filesystem::path& out, const Json& flags,
                  std::ostream& log);

RenderedReport render_ablation(const Json& ablation);

}  // namespace mshot
