#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtpeft/experiment.hpp"
#include "mtpeft/report.hpp"

namespace mtpeft {

// One table row: a single report, or several single-task reports read
// together as the SFT counterpart of a multi-task run.
struct CompareEntry {
  std::string label;
  std::vector<RunReport> runs;

  bool composite() const { return runs.size() > 1; }
  bool single_task() const;  // every run trains one task
  std::vector<std::string> task_names() const;  // sorted
  double score(const std::string& task) const;
  double macro_score() const;
  Index total_parameters() const;
  Index trainable_parameters() const;
  Index peft_parameters() const;
  double trainable_percent() const;  // summed over runs
  double peft_percent() const;
  Index tokens_to_best() const;  // summed over runs
  Index updates_to_best() const;
};

// Reads reports; throws ValueError when two runs of one entry share a task.
CompareEntry load_compare_entry(const std::vector<std::string>& report_paths, const std::string& label = "");
CompareEntry make_compare_entry(std::vector<RunReport> runs, const std::string& label = "");

struct CompareRow {
  std::string label;
  bool baseline = false;
  std::string kind;  // "mft" or "sft"
  std::map<std::string, double> score;
  std::map<std::string, double> delta_pp;  // 100 * (score - baseline score)
  double macro = 0.0;
  double macro_delta_pp = 0.0;
  double trainable_percent = 0.0;
  double peft_percent = 0.0;
  Index updates_to_best = 0;
  Index tokens_to_best = 0;
};

struct TokenRatio {
  std::string sft;
  std::string mft;
  double ratio = 0.0;  // SFT tokens / MFT tokens
};

struct ComparisonReport {
  std::vector<std::string> tasks;
  std::string baseline;
  std::vector<CompareRow> rows;  // baseline first
  std::vector<TokenRatio> sft_mft_ratios;
};

// Throws ValueError when an entry's task set differs from the baseline's.
ComparisonReport compare_runs(const std::vector<CompareEntry>& entries, const CompareEntry& baseline);

// Gain/loss marker for a delta in pp.
std::string direction_marker(double delta_pp);

nlohmann::json to_json(const ComparisonReport& r);
std::string to_markdown(const ComparisonReport& r);

// Pairwise grid: every unordered task pair, each task alone and all tasks.
struct GridRun {
  std::string name;
  std::vector<std::string> tasks;
  ExperimentConfig config;
};

std::vector<GridRun> plan_pairwise(const ExperimentConfig& base, const std::optional<PeftMethod>& method);

struct GridOutcome {
  std::string name;
  std::vector<std::string> tasks;
  bool ok = false;
  int exit_code = 0;
  std::string report_path;
  std::optional<RunReport> report;
};

struct GridRowCell {
  std::string label;  // partner task, "single" or "all"
  std::optional<double> score;  // empty when the run failed
};

struct GridRow {
  std::string task;
  std::vector<GridRowCell> pairings;  // one per partner
  GridRowCell single;
  GridRowCell all;
};

struct GridReport {
  std::vector<std::string> tasks;
  std::vector<GridOutcome> runs;
  std::vector<GridRow> rows;
  bool all_ok() const;
};

GridReport build_grid_report(const std::vector<std::string>& tasks, std::vector<GridOutcome> runs);
nlohmann::json to_json(const GridReport& r);
std::string to_markdown(const GridReport& r);

}  // namespace mtpeft
