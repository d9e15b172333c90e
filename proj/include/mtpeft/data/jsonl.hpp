#pragma once

#include <string>
#include <vector>

#include "mtpeft/data/dataset.hpp"

namespace mtpeft::data {

// Schema-agnostic text form of one example. single_function uses `first`;
// code_pair_with_index uses both codes; query_code has query in `first`, code in `second`.
struct TextRecord {
  std::string first;
  std::string second;
  int label = 0;
};

struct RecordFile {
  std::string path;
  std::vector<TextRecord> records;
  Index lines = 0;
  Index malformed = 0;
};

// Reads one split. Blank lines are ignored; malformed lines are counted and skipped.
// Throws DataError if the file is unreadable, has no records, or more than half
// of its lines are malformed. code_pair_with_index also needs the index map file.
RecordFile load_jsonl_task(const std::string& path, Schema schema, const std::string& index_path = "");

struct DatasetSummary {
  std::string task;
  std::string split;
  Index kept = 0;
  Index skipped = 0;    // malformed + filtered
  Index malformed = 0;
  Index filtered = 0;   // empty after tokenization

  std::string to_json() const;
};

// Tokenizes records into samples, dropping those with an empty text field.
TaskDataset build_task_dataset(const TaskSpec& task, const std::vector<TextRecord>& records, Index max_seq_len,
                               DatasetSummary* summary = nullptr);

Sample make_sample(const TaskSpec& task, const TextRecord& record, Index max_seq_len);

// Writes a split in the canonical layout of `schema`. For code_pair_with_index,
// codes are appended to `index_path` (created when `append_index` is false) and
// referenced by id from the pair file; `next_index` carries ids across splits.
void write_jsonl_task(const std::string& path, Schema schema, const std::vector<TextRecord>& records,
                      const std::string& index_path = "", bool append_index = false, Index* next_index = nullptr);

}  // namespace mtpeft::data
