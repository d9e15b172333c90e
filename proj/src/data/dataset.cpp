#include "mtpeft/data/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "mtpeft/error.hpp"
#include "mtpeft/rng.hpp"

namespace mtpeft::data {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::binary_classification: return "binary_classification";
    case TaskKind::pair_classification: return "pair_classification";
    case TaskKind::retrieval: return "retrieval";
  }
  return "?";
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::f1: return "f1";
    case Metric::accuracy: return "accuracy";
    case Metric::mrr: return "mrr";
  }
  return "?";
}

std::string to_string(Schema s) {
  switch (s) {
    case Schema::single_function: return "single_function";
    case Schema::code_pair_with_index: return "code_pair_with_index";
    case Schema::query_code: return "query_code";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  for (auto k : {TaskKind::binary_classification, TaskKind::pair_classification, TaskKind::retrieval}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("task.kind", "unknown task kind '" + s + "'");
}

Metric parse_metric(const std::string& s) {
  for (auto m : {Metric::f1, Metric::accuracy, Metric::mrr}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("task.metric", "unknown metric '" + s + "'");
}

Schema parse_schema(const std::string& s) {
  for (auto v : {Schema::single_function, Schema::code_pair_with_index, Schema::query_code}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("task.schema", "unknown schema '" + s + "'");
}

void TaskSpec::validate() const {
  if (name.empty()) throw ConfigError("task.name", "task name must be nonempty");
  if ((kind == TaskKind::retrieval) != (metric == Metric::mrr)) {
    throw ConfigError("task.metric", "task '" + name + "': mrr is the metric of retrieval tasks only");
  }
  const Schema expected = kind == TaskKind::retrieval             ? Schema::query_code
                          : kind == TaskKind::pair_classification ? Schema::code_pair_with_index
                                                                  : Schema::single_function;
  if (schema != expected) {
    throw ConfigError("task.schema", "task '" + name + "': kind " + to_string(kind) + " reads schema " + to_string(expected));
  }
}

void validate_task_list(const std::vector<TaskSpec>& tasks) {
  if (tasks.empty()) throw ConfigError("tasks", "at least one task is required");
  std::set<std::string> names;
  std::set<int> ids;
  for (const auto& t : tasks) {
    t.validate();
    if (!ids.insert(t.task_id).second) throw ConfigError("tasks", "duplicate task_id " + std::to_string(t.task_id));
    if (!names.insert(t.name).second) throw ConfigError("tasks", "duplicate task name '" + t.name + "'");
  }
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].task_id != static_cast<int>(i)) {
      throw ConfigError("tasks", "task ids must be dense 0..K-1 in order; position " + std::to_string(i) + " has id " +
                                     std::to_string(tasks[i].task_id));
    }
  }
}

ConcatenatedDataset::ConcatenatedDataset(std::vector<TaskDataset> tasks) : tasks_(std::move(tasks)) {
  offsets_.push_back(0);
  for (const auto& t : tasks_) offsets_.push_back(offsets_.back() + t.size());
}

Index ConcatenatedDataset::max_task_size() const {
  Index m = 0;
  for (const auto& t : tasks_) m = std::max(m, t.size());
  return m;
}

Index ConcatenatedDataset::global_index(std::size_t task, Index local) const {
  if (task >= tasks_.size() || local < 0 || local >= tasks_[task].size()) {
    throw ValueError("global_index: (" + std::to_string(task) + ", " + std::to_string(local) + ") out of range");
  }
  return offsets_[task] + local;
}

std::pair<std::size_t, Index> ConcatenatedDataset::locate(Index global) const {
  if (global < 0 || global >= size()) throw ValueError("locate: index " + std::to_string(global) + " out of range");
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global);
  const auto task = static_cast<std::size_t>(it - offsets_.begin() - 1);
  return {task, global - offsets_[task]};
}

const Sample& ConcatenatedDataset::at(Index global) const {
  auto [t, local] = locate(global);
  return tasks_[t].samples[static_cast<std::size_t>(local)];
}

RoundRobinSampler::RoundRobinSampler(const ConcatenatedDataset& data, Index per_task_batch, std::uint64_t seed)
    : batch_(per_task_batch), seed_(seed) {
  if (per_task_batch < 1) throw ValueError("round_robin: per_task_batch must be >= 1");
  if (data.num_tasks() == 0) throw DataError("round_robin: no tasks");
  for (const auto& t : data.tasks()) {
    if (t.size() == 0) throw DataError("round_robin: task '" + t.name + "' has no samples");
    sizes_.push_back(t.size());
    ids_.push_back(t.task_id);
  }
  steps_ = (data.max_task_size() + batch_ - 1) / batch_;
}

std::vector<MultiTaskBatch> RoundRobinSampler::epoch(Index epoch_index) const {
  std::vector<MultiTaskBatch> out(static_cast<std::size_t>(steps_));
  for (auto& b : out) {
    b.task_order = ids_;
    b.sub_batches.resize(ids_.size());
  }
  for (std::size_t t = 0; t < sizes_.size(); ++t) {
    std::vector<Index> order(static_cast<std::size_t>(sizes_[t]));
    std::uint64_t traversal = 0;
    std::size_t cursor = order.size();  // forces a shuffle on first draw
    for (auto& b : out) {
      auto& sub = b.sub_batches[t];
      sub.task_id = ids_[t];
      sub.indices.reserve(static_cast<std::size_t>(batch_));
      for (Index k = 0; k < batch_; ++k) {
        if (cursor == order.size()) {
          std::iota(order.begin(), order.end(), Index{0});
          const std::uint64_t key = derive_seed(derive_seed(derive_seed(seed_, static_cast<std::uint64_t>(epoch_index)), t),
                                                traversal++);
          std::mt19937_64 engine(key);
          std::shuffle(order.begin(), order.end(), engine);
          cursor = 0;
        }
        sub.indices.push_back(order[cursor++]);
      }
    }
  }
  return out;
}

std::vector<std::vector<Index>> sequential_chunks(Index size, Index chunk) {
  if (chunk < 1) throw ValueError("sequential_chunks: chunk must be >= 1");
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < size; start += chunk) {
    std::vector<Index> c;
    for (Index i = start; i < std::min(size, start + chunk); ++i) c.push_back(i);
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace mtpeft::data
