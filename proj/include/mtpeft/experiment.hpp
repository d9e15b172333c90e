#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtpeft/backbone.hpp"
#include "mtpeft/data/jsonl.hpp"
#include "mtpeft/data/synthetic.hpp"
#include "mtpeft/mtl.hpp"
#include "mtpeft/peft.hpp"
#include "mtpeft/report.hpp"
#include "mtpeft/trainer.hpp"

namespace mtpeft {

inline constexpr int kConfigFormatVersion = 1;
inline constexpr const char* kOutputRootEnv = "MTPEFT_OUTPUT_ROOT";

enum class Precision { float32, float64 };
std::string to_string(Precision p);
Precision parse_precision(const std::string& s);

// One experiment: a model, its tasks and how to train it. Tasks without file
// paths are drawn from the synthetic generator by name.
struct ExperimentConfig {
  int format_version = kConfigFormatVersion;
  std::string name = "run";
  std::uint64_t seed = 42;
  Precision precision = Precision::float32;
  BackboneConfig backbone;
  std::optional<PeftConfig> peft;
  LossWeighting loss_weighting = LossWeighting::learnable;
  TrainConfig train;  // train.mode is the experiment mode
  double head_dropout = 0.1;
  std::optional<data::SyntheticSpec> synthetic;
  std::optional<std::uint64_t> data_seed;  // synthetic generator seed; defaults to `seed`
  std::vector<data::TaskSpec> tasks;
  std::string output_dir;  // empty: <output root>/<name>

  bool task_is_synthetic(const data::TaskSpec& t) const { return t.train_path.empty(); }
  std::uint64_t synthetic_seed() const { return data_seed.value_or(seed); }
  // Throws ConfigError naming the field; checks that referenced files exist.
  void validate() const;
};

// Parse errors carry "<source>:<line>:<column>" as the field.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source = "<config>");
// Relative dataset paths resolve against the config file's directory.
ExperimentConfig load_experiment_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& c);

std::string default_output_root();
std::string resolve_output_dir(const ExperimentConfig& c);

struct ExperimentData {
  SplitData splits;
  std::vector<data::DatasetSummary> summaries;
};

ExperimentData load_experiment_data(const ExperimentConfig& c);

struct RunArtifacts {
  RunReport report;
  std::string report_path;
  std::string checkpoint_path;
  std::string summary_path;
};

// Trains, then writes report.json, checkpoint.bin and summary.md under dir.
RunArtifacts run_experiment(const ExperimentConfig& c, const std::string& dir, std::ostream* log = nullptr);

// Rebuilds the model recorded in a checkpoint and scores one task split.
struct EvalResult {
  std::string task;
  std::string split;
  TaskScore score;
};
EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& task, const std::string& split);

// Census of the configured model without training (both denominators).
struct ParamsReport {
  std::string name;
  std::string mode;
  std::string peft_method;
  CensusRecord census;
  Index backbone_closed_form = 0;
};
ParamsReport params_report(const ExperimentConfig& c);
nlohmann::json to_json(const ParamsReport& r);
std::string to_markdown(const ParamsReport& r);

std::string run_summary_markdown(const RunReport& r);

}  // namespace mtpeft
