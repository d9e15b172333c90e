#include "mtpeft/data/synthetic.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "mtpeft/error.hpp"
#include "mtpeft/rng.hpp"

namespace mtpeft::data {

namespace {

constexpr std::string_view kPunct = "(){};=+-*<>,.";
constexpr std::string_view kLower = "abcdefghijklmnopqrstuvwxyz";
constexpr std::string_view kUpper = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
constexpr std::uint64_t kCloneTag = 0xC10E, kDefectTag = 0xDEFEC7, kFlakyTag = 0xF1A4, kSearchTag = 0x5EA4C;

constexpr Index kIdentifiersPerCode = 5;

using Engine = std::mt19937_64;

std::string pick_distinct(std::string_view alphabet, Index n, Engine& rng) {
  std::string pool(alphabet);
  std::shuffle(pool.begin(), pool.end(), rng);
  return pool.substr(0, static_cast<std::size_t>(n));
}

struct Code {
  std::string text;
  std::string keywords;
  std::string identifiers;
};

Code random_code(const SyntheticSpec& spec, Engine& rng) {
  Code c;
  c.keywords = pick_distinct(kUpper.substr(0, static_cast<std::size_t>(spec.keyword_vocab)), spec.keywords_per_code, rng);
  c.identifiers = pick_distinct(kLower.substr(0, static_cast<std::size_t>(spec.identifier_vocab)), kIdentifiersPerCode, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto pick = [&](std::string_view s) { return s[std::uniform_int_distribution<std::size_t>(0, s.size() - 1)(rng)]; };
  for (Index i = 0; i < spec.code_length; ++i) {
    const double r = u(rng);
    c.text.push_back(r < spec.keyword_rate                          ? pick(c.keywords)
                     : r < spec.keyword_rate + spec.identifier_rate ? pick(c.identifiers)
                                                                     : pick(kPunct));
  }
  // Every keyword appears at least once.
  std::vector<std::size_t> pos(c.text.size());
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::shuffle(pos.begin(), pos.end(), rng);
  for (std::size_t k = 0; k < c.keywords.size(); ++k) c.text[pos[k]] = c.keywords[k];
  return c;
}

std::string rename_identifiers(const Code& c, const SyntheticSpec& spec, Engine& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::string fresh;
  for (char ch : kLower.substr(0, static_cast<std::size_t>(spec.identifier_vocab))) {
    if (c.identifiers.find(ch) == std::string::npos) fresh.push_back(ch);
  }
  std::shuffle(fresh.begin(), fresh.end(), rng);
  std::array<char, 256> map{};
  std::size_t next = 0;
  for (char ch : c.identifiers) map[static_cast<unsigned char>(ch)] = u(rng) < spec.rename_rate ? fresh[next++] : ch;
  std::string out = c.text;
  for (char& ch : out) {
    if (map[static_cast<unsigned char>(ch)] != 0) ch = map[static_cast<unsigned char>(ch)];
  }
  return out;
}

void plant(std::string& text, const std::string& motif, Engine& rng) {
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, text.size() - motif.size())(rng);
  text.replace(start, motif.size(), motif);
}

using Generator = TextRecord (*)(const SyntheticSpec&, Engine&);

TextRecord clone_record(const SyntheticSpec& spec, Engine& rng) {
  const Code src = random_code(spec, rng);
  const int label = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
  return {src.text, label ? rename_identifiers(src, spec, rng) : random_code(spec, rng).text, label};
}

TextRecord defect_record(const SyntheticSpec& spec, Engine& rng) {
  Code c = random_code(spec, rng);
  const int label = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
  if (label) plant(c.text, spec.bug_motif, rng);
  return {c.text, "", label};
}

TextRecord flaky_record(const SyntheticSpec& spec, Engine& rng) {
  Code c = random_code(spec, rng);
  const bool flaky = std::bernoulli_distribution(0.5)(rng);
  if (flaky) {
    const Index count = std::uniform_int_distribution<Index>(1, 2)(rng);
    for (Index i = 0; i < count; ++i) {
      const auto m = std::uniform_int_distribution<std::size_t>(0, spec.flaky_motifs.size() - 1)(rng);
      plant(c.text, std::string(1, spec.flaky_motifs[m]), rng);
    }
  }
  const bool flip = std::bernoulli_distribution(spec.flaky_noise)(rng);
  return {c.text, "", (flaky != flip) ? 1 : 0};
}

TextRecord search_record(const SyntheticSpec& spec, Engine& rng) {
  const Code c = random_code(spec, rng);
  std::string query = c.keywords;
  std::shuffle(query.begin(), query.end(), rng);
  query.resize(static_cast<std::size_t>(spec.query_keywords));
  return {query, c.text, 0};
}

std::vector<TextRecord> generate(Generator gen, const SyntheticSpec& spec, Index n, std::uint64_t seed) {
  Engine rng(seed);
  std::vector<TextRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(gen(spec, rng));
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  for (auto [name, v] : {std::pair{"train_size", train_size}, {"valid_size", valid_size}, {"test_size", test_size}}) {
    if (v < 32) throw ConfigError(std::string("synthetic.") + name, "each split needs at least 32 samples");
  }
  if (keywords_per_code < 1 || keywords_per_code > 26) throw ConfigError("synthetic.keywords_per_code", "must lie in [1, 26]");
  if (query_keywords < 1 || query_keywords > keywords_per_code) {
    throw ConfigError("synthetic.query_keywords", "must lie in [1, keywords_per_code]");
  }
  if (code_length < keywords_per_code + static_cast<Index>(bug_motif.size())) {
    throw ConfigError("synthetic.code_length", "too short for the keywords and the bug motif");
  }
  if (keyword_vocab < keywords_per_code || keyword_vocab > 26) {
    throw ConfigError("synthetic.keyword_vocab", "must lie in [keywords_per_code, 26]");
  }
  // Renaming needs fresh identifier characters outside the code's own five.
  if (identifier_vocab < 2 * kIdentifiersPerCode || identifier_vocab > 26) {
    throw ConfigError("synthetic.identifier_vocab", "must lie in [10, 26]");
  }
  if (keyword_rate < 0.0 || identifier_rate < 0.0 || keyword_rate + identifier_rate > 1.0) {
    throw ConfigError("synthetic.keyword_rate", "keyword_rate and identifier_rate must be nonnegative with sum <= 1");
  }
  if (rename_rate < 0.0 || rename_rate > 1.0) throw ConfigError("synthetic.rename_rate", "must lie in [0, 1]");
  if (flaky_noise < 0.0 || flaky_noise >= 0.5) throw ConfigError("synthetic.flaky_noise", "must lie in [0, 0.5)");
  if (bug_motif.empty()) throw ConfigError("synthetic.bug_motif", "must be nonempty");
  if (flaky_motifs.empty()) throw ConfigError("synthetic.flaky_motifs", "must be nonempty");
}

const std::vector<TextRecord>& SyntheticSplits::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw ValueError("unknown split '" + name + "'");
}

std::vector<TaskSpec> synthetic_task_specs() {
  std::vector<TaskSpec> t(4);
  t[0] = {0, "clone", TaskKind::pair_classification, Metric::f1, Schema::code_pair_with_index, "", "", "", ""};
  t[1] = {1, "defect", TaskKind::binary_classification, Metric::accuracy, Schema::single_function, "", "", "", ""};
  t[2] = {2, "flaky", TaskKind::binary_classification, Metric::f1, Schema::single_function, "", "", "", ""};
  t[3] = {3, "search", TaskKind::retrieval, Metric::mrr, Schema::query_code, "", "", "", ""};
  return t;
}

std::array<SyntheticSplits, 4> generate_synthetic_tasks(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto specs = synthetic_task_specs();
  const std::array<std::pair<Generator, std::uint64_t>, 4> gens{
      {{clone_record, kCloneTag}, {defect_record, kDefectTag}, {flaky_record, kFlakyTag}, {search_record, kSearchTag}}};
  std::array<SyntheticSplits, 4> out;
  for (std::size_t t = 0; t < 4; ++t) {
    const auto base = derive_seed(seed, gens[t].second);
    out[t].spec = specs[t];
    out[t].train = generate(gens[t].first, spec, spec.train_size, derive_seed(base, 0));
    out[t].valid = generate(gens[t].first, spec, spec.valid_size, derive_seed(base, 1));
    out[t].test = generate(gens[t].first, spec, spec.test_size, derive_seed(base, 2));
  }
  return out;
}

std::vector<TaskSpec> write_synthetic_tasks(const std::array<SyntheticSplits, 4>& tasks, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir + "': " + ec.message());
  std::vector<TaskSpec> specs;
  for (const auto& t : tasks) {
    TaskSpec s = t.spec;
    auto path = [&](const std::string& split) { return (std::filesystem::path(dir) / (s.name + "_" + split + ".jsonl")).string(); };
    s.train_path = path("train");
    s.valid_path = path("valid");
    s.test_path = path("test");
    Index next = 0;
    if (s.schema == Schema::code_pair_with_index) s.index_path = (std::filesystem::path(dir) / (s.name + "_index.jsonl")).string();
    write_jsonl_task(s.train_path, s.schema, t.train, s.index_path, false, &next);
    write_jsonl_task(s.valid_path, s.schema, t.valid, s.index_path, true, &next);
    write_jsonl_task(s.test_path, s.schema, t.test, s.index_path, true, &next);
    specs.push_back(std::move(s));
  }
  return specs;
}

}  // namespace mtpeft::data
