#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtpeft/data/dataset.hpp"

namespace mtpeft {

using data::Index;

struct TaskScore {
  std::string metric;
  double value = 0.0;
  double loss = 0.0;
  double batch_mrr = -1.0;  // retrieval only; pools of per_task_batch
  Index samples = 0;
};

struct EpochRecord {
  Index epoch = 0;
  Index updates = 0;  // cumulative optimizer steps at the end of the epoch
  std::map<std::string, double> train_loss;
  std::map<std::string, TaskScore> valid;
  double valid_loss = 0.0;  // uniform mean over tasks
  std::vector<double> alpha;
  double min_alpha = 0.0;
};

struct CensusRecord {
  Index total = 0;
  Index trainable = 0;
  Index peft = 0;
  Index heads = 0;
  double trainable_percent = 0.0;  // all trainable / whole model
  double peft_percent = 0.0;       // PEFT modules only / whole model
};

struct RunReport {
  std::string name;
  std::string mode;
  std::string peft_method;  // empty in full mode
  std::string loss_weighting;
  std::string precision;
  std::uint64_t seed = 0;
  std::vector<data::TaskSpec> tasks;
  Index per_task_batch = 0;
  Index global_batch_size = 0;
  Index max_seq_len = 0;
  Index steps_per_epoch = 0;
  std::vector<EpochRecord> epochs;
  Index best_epoch = -1;
  double best_valid_loss = 0.0;
  Index updates_to_best = 0;
  Index tokens_to_best = 0;
  Index total_updates = 0;
  bool early_stopped = false;
  std::map<std::string, TaskScore> test;
  CensusRecord census;
  double wall_clock_seconds = 0.0;

  std::vector<std::string> task_names() const;
  // Mean of the test metrics across tasks.
  double macro_score() const;
};

nlohmann::json to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);

// updates_to_best x global batch x max_seq_len.
Index token_cost(const RunReport& r);
Index token_cost(Index updates, Index global_batch, Index seq_len);

// Report without wall-clock fields, for reproducibility comparisons.
nlohmann::json deterministic_view(const RunReport& r);

}  // namespace mtpeft
