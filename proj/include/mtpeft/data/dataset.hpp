#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mtpeft/data/tokenizer.hpp"

namespace mtpeft::data {

enum class TaskKind { binary_classification, pair_classification, retrieval };
enum class Metric { f1, accuracy, mrr };
enum class Schema { single_function, code_pair_with_index, query_code };

std::string to_string(TaskKind k);
std::string to_string(Metric m);
std::string to_string(Schema s);
TaskKind parse_task_kind(const std::string& s);
Metric parse_metric(const std::string& s);
Schema parse_schema(const std::string& s);

struct TaskSpec {
  int task_id = 0;
  std::string name;
  TaskKind kind = TaskKind::binary_classification;
  Metric metric = Metric::f1;
  Schema schema = Schema::single_function;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string index_path;  // index-to-code map for code_pair_with_index

  bool is_retrieval() const { return kind == TaskKind::retrieval; }
  // Metric and schema must agree with the kind.
  void validate() const;
};

// Dense ids 0..K-1 in order, unique names.
void validate_task_list(const std::vector<TaskSpec>& tasks);

struct Sample {
  int task_id = 0;
  std::vector<Index> input_ids;
  std::vector<Index> second_input_ids;  // retrieval code side
  int label = 0;
};

struct TaskDataset {
  int task_id = 0;
  std::string name;
  std::vector<Sample> samples;

  Index size() const { return static_cast<Index>(samples.size()); }
};

class ConcatenatedDataset {
 public:
  explicit ConcatenatedDataset(std::vector<TaskDataset> tasks);

  std::size_t num_tasks() const { return tasks_.size(); }
  Index size() const { return offsets_.back(); }
  const TaskDataset& task(std::size_t t) const { return tasks_.at(t); }
  const std::vector<TaskDataset>& tasks() const { return tasks_; }
  Index max_task_size() const;

  Index global_index(std::size_t task, Index local) const;
  std::pair<std::size_t, Index> locate(Index global) const;
  const Sample& at(Index global) const;

 private:
  std::vector<TaskDataset> tasks_;
  std::vector<Index> offsets_;  // offsets_[t] = first global index of task t
};

struct SubBatch {
  int task_id = 0;
  std::vector<Index> indices;  // local indices into the task's dataset
};

struct MultiTaskBatch {
  std::vector<SubBatch> sub_batches;
  std::vector<int> task_order;
};

// One sub-batch per task per step, in task order. Each task walks a shuffled
// permutation of its samples; on exhaustion it starts a fresh permutation with
// a derived seed. An epoch is ceil(max_size / per_task_batch) steps, and every
// task restarts its traversal at the beginning of each epoch.
class RoundRobinSampler {
 public:
  RoundRobinSampler(const ConcatenatedDataset& data, Index per_task_batch, std::uint64_t seed);

  Index steps_per_epoch() const { return steps_; }
  Index per_task_batch() const { return batch_; }
  std::vector<MultiTaskBatch> epoch(Index epoch_index) const;

 private:
  std::vector<Index> sizes_;
  std::vector<int> ids_;
  Index batch_;
  Index steps_;
  std::uint64_t seed_;
};

// Fixed-size chunks of a split in order, used for evaluation.
std::vector<std::vector<Index>> sequential_chunks(Index size, Index chunk);

}  // namespace mtpeft::data
