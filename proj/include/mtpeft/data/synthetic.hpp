#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mtpeft/data/jsonl.hpp"

namespace mtpeft::data {

// Desk-scale stand-ins for the four code tasks. A "code" string mixes
// uppercase keyword characters (a few per code), lowercase identifier
// characters and punctuation.
struct SyntheticSpec {
  Index train_size = 1000;
  Index valid_size = 200;
  Index test_size = 200;
  Index code_length = 30;
  Index keywords_per_code = 4;
  Index query_keywords = 3;
  Index keyword_vocab = 26;     // distinct keyword characters across the corpus
  Index identifier_vocab = 26;  // distinct identifier characters across the corpus
  double keyword_rate = 0.3;
  double identifier_rate = 0.4;  // the rest is punctuation
  double rename_rate = 0.5;  // share of identifier characters renamed in clone positives
  double flaky_noise = 0.1;  // label flip probability
  std::string bug_motif = "#!";
  std::string flaky_motifs = "$%^&";

  void validate() const;
};

struct SyntheticSplits {
  TaskSpec spec;
  std::vector<TextRecord> train, valid, test;

  const std::vector<TextRecord>& split(const std::string& name) const;
};

// Task ids 0..3: clone (pairs, F1), defect (accuracy), flaky (F1), search (MRR).
std::vector<TaskSpec> synthetic_task_specs();

std::array<SyntheticSplits, 4> generate_synthetic_tasks(const SyntheticSpec& spec, std::uint64_t seed);

// Writes <dir>/<task>_<split>.jsonl (plus clone_index.jsonl) and returns the
// task specs pointing at those files.
std::vector<TaskSpec> write_synthetic_tasks(const std::array<SyntheticSplits, 4>& tasks, const std::string& dir);

}  // namespace mtpeft::data
