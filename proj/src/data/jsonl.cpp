#include "mtpeft/data/jsonl.hpp"

#include <fstream>
#include <optional>
#include <unordered_map>

#include <json.hpp>

#include "mtpeft/error.hpp"

namespace mtpeft::data {

using nlohmann::json;

namespace {

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r\n") == std::string::npos; }

std::optional<std::string> id_field(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  return std::nullopt;
}

std::optional<int> binary_label(const json& j, const char* key) {
  if (!j.contains(key)) return std::nullopt;
  const auto& v = j.at(key);
  if (v.is_boolean()) return v.get<bool>() ? 1 : 0;
  if (v.is_number_integer()) {
    const auto x = v.get<long long>();
    if (x == 0 || x == 1) return static_cast<int>(x);
  }
  return std::nullopt;
}

std::optional<std::string> string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) return std::nullopt;
  return j.at(key).get<std::string>();
}

std::unordered_map<std::string, std::string> load_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read index file '" + path + "'");
  std::unordered_map<std::string, std::string> map;
  std::string line;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) continue;
    auto idx = id_field(j, "idx");
    auto func = string_field(j, "func");
    if (idx && func) map.emplace(*idx, *func);
  }
  if (map.empty()) throw DataError("index file '" + path + "' has no usable entries");
  return map;
}

}  // namespace

RecordFile load_jsonl_task(const std::string& path, Schema schema, const std::string& index_path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset file '" + path + "'");
  std::unordered_map<std::string, std::string> index;
  if (schema == Schema::code_pair_with_index) {
    if (index_path.empty()) throw DataError("schema code_pair_with_index needs an index file for '" + path + "'");
    index = load_index(index_path);
  }
  RecordFile out;
  out.path = path;
  std::string line;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    ++out.lines;
    auto j = json::parse(line, nullptr, false);
    std::optional<TextRecord> rec;
    if (!j.is_discarded() && j.is_object()) {
      switch (schema) {
        case Schema::single_function: {
          auto func = string_field(j, "func");
          auto target = binary_label(j, "target");
          if (func && target) rec = TextRecord{*func, "", *target};
          break;
        }
        case Schema::code_pair_with_index: {
          auto a = id_field(j, "idx1");
          auto b = id_field(j, "idx2");
          auto label = binary_label(j, "label");
          if (a && b && label && index.count(*a) && index.count(*b)) rec = TextRecord{index.at(*a), index.at(*b), *label};
          break;
        }
        case Schema::query_code: {
          auto query = string_field(j, "query");
          if (!query) query = string_field(j, "docstring");
          auto code = string_field(j, "code");
          if (query && code) rec = TextRecord{*query, *code, 0};
          break;
        }
      }
    }
    if (rec) {
      out.records.push_back(std::move(*rec));
    } else {
      ++out.malformed;
    }
  }
  if (out.lines == 0) throw DataError("dataset file '" + path + "' is empty");
  if (2 * out.malformed > out.lines) {
    throw DataError("dataset file '" + path + "': " + std::to_string(out.malformed) + " of " + std::to_string(out.lines) +
                    " lines are malformed");
  }
  return out;
}

std::string DatasetSummary::to_json() const {
  json j{{"task", task}, {"split", split}, {"kept", kept}, {"skipped", skipped}, {"malformed", malformed},
         {"filtered", filtered}};
  return j.dump();
}

Sample make_sample(const TaskSpec& task, const TextRecord& record, Index max_seq_len) {
  Sample s;
  s.task_id = task.task_id;
  s.label = record.label;
  switch (task.kind) {
    case TaskKind::binary_classification:
      s.input_ids = tokenize(record.first, max_seq_len);
      break;
    case TaskKind::pair_classification:
      s.input_ids = encode_pair(record.first, record.second, max_seq_len);
      break;
    case TaskKind::retrieval:
      s.input_ids = tokenize(record.first, max_seq_len);
      s.second_input_ids = tokenize(record.second, max_seq_len);
      break;
  }
  return s;
}

TaskDataset build_task_dataset(const TaskSpec& task, const std::vector<TextRecord>& records, Index max_seq_len,
                               DatasetSummary* summary) {
  TaskDataset ds;
  ds.task_id = task.task_id;
  ds.name = task.name;
  Index filtered = 0;
  const bool two_sided = task.kind != TaskKind::binary_classification;
  for (const auto& r : records) {
    if (r.first.empty() || (two_sided && r.second.empty())) {
      ++filtered;
      continue;
    }
    ds.samples.push_back(make_sample(task, r, max_seq_len));
  }
  if (summary) {
    summary->task = task.name;
    summary->kept = ds.size();
    summary->filtered = filtered;
    summary->skipped = summary->malformed + filtered;
  }
  return ds;
}

void write_jsonl_task(const std::string& path, Schema schema, const std::vector<TextRecord>& records,
                      const std::string& index_path, bool append_index, Index* next_index) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  std::ofstream index;
  Index local_next = 0;
  Index& next = next_index ? *next_index : local_next;
  if (schema == Schema::code_pair_with_index) {
    index.open(index_path, append_index ? std::ios::app : std::ios::trunc);
    if (!index) throw DataError("cannot write '" + index_path + "'");
  }
  for (const auto& r : records) {
    json j;
    switch (schema) {
      case Schema::single_function:
        j = {{"func", r.first}, {"target", r.label}};
        break;
      case Schema::code_pair_with_index: {
        const Index a = next++, b = next++;
        index << json{{"idx", std::to_string(a)}, {"func", r.first}}.dump() << '\n';
        index << json{{"idx", std::to_string(b)}, {"func", r.second}}.dump() << '\n';
        j = {{"idx1", std::to_string(a)}, {"idx2", std::to_string(b)}, {"label", r.label}};
        break;
      }
      case Schema::query_code:
        j = {{"query", r.first}, {"code", r.second}};
        break;
    }
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace mtpeft::data
