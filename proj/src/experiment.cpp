#include "mtpeft/experiment.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mtpeft/checkpoint.hpp"

namespace mtpeft {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& s) {
  if (s == "float32") return Precision::float32;
  if (s == "float64") return Precision::float64;
  throw ConfigError("precision", "expected 'float32' or 'float64', got '" + s + "'");
}

namespace {

// ConfigError's what() already embeds the field; keep only the message part.
std::string message_of(const ConfigError& e) {
  const std::string w = e.what();
  const auto prefix = e.field() + ": ";
  return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

// Walks one JSON object, remembering the dotted path for diagnostics and
// rejecting keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
          if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) {
            throw ConfigError(field(key), "must be non-negative");
          }
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError(field(key), "expected a number");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError(field(key), "expected a string");
      }
      out = v.get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  template <typename E, typename Parse>
  void get_enum(const std::string& key, E& out, Parse parse) {
    if (!has(key)) return;
    std::string s;
    get(key, s);
    try {
      out = parse(s);
    } catch (const ConfigError& e) {
      throw ConfigError(field(key), message_of(e));
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(field(k), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void rethrow_under(const std::string& field, Fn fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(field, message_of(e));
  }
}

BackboneConfig read_backbone(Reader r) {
  BackboneConfig b;
  if (r.has("preset")) {
    std::string preset;
    r.get("preset", preset);
    if (preset == "reference_base") {
      b = BackboneConfig::reference_base();
    } else if (preset != "desk") {
      throw ConfigError(r.field("preset"), "expected 'desk' or 'reference_base', got '" + preset + "'");
    }
  }
  r.get_enum("architecture", b.architecture, parse_architecture);
  r.get("n_layers", b.n_layers);
  r.get("d_model", b.d_model);
  r.get("n_heads", b.n_heads);
  r.get("d_ffn", b.d_ffn);
  r.get("vocab_size", b.vocab_size);
  r.get("max_seq_len", b.max_seq_len);
  r.get("pad_id", b.pad_id);
  r.get("dropout", b.dropout);
  r.get("init_std", b.init_std);
  r.finish();
  return b;
}

PeftConfig read_peft(Reader r) {
  PeftConfig p;
  r.get_enum("method", p.method, parse_peft_method);
  r.get("bottleneck_r", p.bottleneck_r);
  r.get("lora_rank", p.lora_rank);
  if (r.has("lora_targets")) {
    const auto& arr = r.at("lora_targets");
    if (!arr.is_array()) throw ConfigError(r.field("lora_targets"), "expected an array");
    p.lora_targets.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto f = r.field("lora_targets") + "[" + std::to_string(i) + "]";
      if (!arr[i].is_string()) throw ConfigError(f, "expected a string");
      rethrow_under(f, [&] { p.lora_targets.push_back(parse_lora_target(arr[i].get<std::string>())); });
    }
  }
  r.get("lora_scaling", p.lora_scaling);
  r.get("prefix_length", p.prefix_length);
  r.get("prefix_reparam_width", p.prefix_reparam_width);
  r.finish();
  return p;
}

void read_train(Reader r, TrainConfig& t, bool& lr_set) {
  lr_set = r.has("learning_rate");
  r.get("learning_rate", t.learning_rate);
  r.get("adam_beta1", t.adam_beta1);
  r.get("adam_beta2", t.adam_beta2);
  r.get("epsilon", t.epsilon);
  r.get("weight_decay", t.weight_decay);
  r.get("per_task_batch", t.per_task_batch);
  r.get("max_epochs", t.max_epochs);
  r.get("early_stop_patience", t.early_stop_patience);
  r.get("max_seq_len", t.max_seq_len);
  r.get("temperature", t.temperature);
  r.get("eval_batch", t.eval_batch);
  r.get("max_steps", t.max_steps);
  r.finish();
}

data::SyntheticSpec read_synthetic(Reader r, std::optional<std::uint64_t>& seed) {
  data::SyntheticSpec s;
  if (r.has("seed")) {
    std::uint64_t v = 0;
    r.get("seed", v);
    seed = v;
  }
  r.get("train_size", s.train_size);
  r.get("valid_size", s.valid_size);
  r.get("test_size", s.test_size);
  r.get("code_length", s.code_length);
  r.get("keywords_per_code", s.keywords_per_code);
  r.get("query_keywords", s.query_keywords);
  r.get("keyword_vocab", s.keyword_vocab);
  r.get("identifier_vocab", s.identifier_vocab);
  r.get("keyword_rate", s.keyword_rate);
  r.get("identifier_rate", s.identifier_rate);
  r.get("rename_rate", s.rename_rate);
  r.get("flaky_noise", s.flaky_noise);
  r.get("bug_motif", s.bug_motif);
  r.get("flaky_motifs", s.flaky_motifs);
  r.finish();
  return s;
}

std::optional<data::TaskSpec> synthetic_by_name(const std::string& name) {
  for (const auto& t : data::synthetic_task_specs()) {
    if (t.name == name) return t;
  }
  return std::nullopt;
}

std::string resolve_path(const std::string& p, const std::string& base) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

data::TaskSpec read_task(const json& j, const std::string& field, int position, const std::string& base) {
  if (j.is_string()) {
    auto t = synthetic_by_name(j.get<std::string>());
    if (!t) throw ConfigError(field, "'" + j.get<std::string>() + "' is not a synthetic task (clone, defect, flaky, search); give paths");
    t->task_id = position;
    return *t;
  }
  Reader r(j, field);
  data::TaskSpec t;
  r.get("name", t.name);
  if (t.name.empty()) throw ConfigError(r.field("name"), "task name must be nonempty");
  t.task_id = position;
  r.get("id", t.task_id);
  const bool has_paths = r.has("train");
  if (!has_paths) {
    auto s = synthetic_by_name(t.name);
    if (!s) throw ConfigError(r.field("train"), "task '" + t.name + "' has no train path and is not a synthetic task");
    t.kind = s->kind;
    t.metric = s->metric;
    t.schema = s->schema;
  }
  r.get_enum("kind", t.kind, data::parse_task_kind);
  r.get_enum("metric", t.metric, data::parse_metric);
  r.get_enum("schema", t.schema, data::parse_schema);
  if (has_paths) {
    r.get("train", t.train_path);
    r.get("valid", t.valid_path);
    r.get("test", t.test_path);
    r.get("index", t.index_path);
    for (auto* p : {&t.train_path, &t.valid_path, &t.test_path, &t.index_path}) *p = resolve_path(*p, base);
  }
  r.finish();
  rethrow_under(field, [&] { t.validate(); });
  return t;
}

ExperimentConfig config_from_json(const json& root, const std::string& base) {
  Reader r(root, "");
  ExperimentConfig c;
  if (!r.has("format_version")) throw ConfigError("format_version", "missing; this build reads version " + std::to_string(kConfigFormatVersion));
  r.get("format_version", c.format_version);
  if (c.format_version != kConfigFormatVersion) {
    throw ConfigError("format_version", "unsupported version " + std::to_string(c.format_version) + "; this build reads " +
                                            std::to_string(kConfigFormatVersion));
  }
  r.get("name", c.name);
  r.get("seed", c.seed);
  r.get_enum("precision", c.precision, parse_precision);
  r.get_enum("mode", c.train.mode, parse_train_mode);
  if (r.has("backbone")) c.backbone = read_backbone(Reader(r.at("backbone"), "backbone"));
  if (r.has("peft")) {
    if (!r.at("peft").is_null()) c.peft = read_peft(Reader(r.at("peft"), "peft"));
  } else if (c.train.mode == TrainMode::peft) {
    c.peft = PeftConfig{};
  }
  r.get_enum("loss_weighting", c.loss_weighting, parse_loss_weighting);
  r.get("head_dropout", c.head_dropout);
  bool lr_set = false;
  if (r.has("train")) read_train(Reader(r.at("train"), "train"), c.train, lr_set);
  if (!lr_set) c.train.learning_rate = TrainConfig::default_learning_rate(c.train.mode);
  c.train.seed = c.seed;
  if (r.has("synthetic")) c.synthetic = read_synthetic(Reader(r.at("synthetic"), "synthetic"), c.data_seed);
  if (!r.has("tasks")) throw ConfigError("tasks", "missing");
  const auto& tasks = r.at("tasks");
  if (!tasks.is_array()) throw ConfigError("tasks", "expected an array");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    c.tasks.push_back(read_task(tasks[i], "tasks[" + std::to_string(i) + "]", static_cast<int>(i), base));
  }
  r.get("output_dir", c.output_dir);
  c.output_dir = resolve_path(c.output_dir, base);
  r.finish();
  return c;
}

std::pair<Index, Index> line_column(const std::string& text, std::size_t byte) {
  Index line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

json task_config_json(const ExperimentConfig& c, const data::TaskSpec& t) {
  json j{{"name", t.name}, {"id", t.task_id}, {"kind", data::to_string(t.kind)}, {"metric", data::to_string(t.metric)},
         {"schema", data::to_string(t.schema)}};
  if (!c.task_is_synthetic(t)) {
    j["train"] = t.train_path;
    j["valid"] = t.valid_path;
    j["test"] = t.test_path;
    if (!t.index_path.empty()) j["index"] = t.index_path;
  }
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (format_version != kConfigFormatVersion) throw ConfigError("format_version", "unsupported version");
  if (name.empty()) throw ConfigError("name", "must be nonempty");
  backbone.validate();
  train.validate();
  if (train.mode == TrainMode::peft && !peft) throw ConfigError("peft", "peft mode needs a peft block");
  if (peft) peft->validate();
  if (head_dropout < 0.0 || head_dropout >= 1.0) throw ConfigError("head_dropout", "must lie in [0, 1)");
  if (train.max_seq_len > backbone.max_seq_len) {
    throw ConfigError("train.max_seq_len", "exceeds backbone.max_seq_len (" + std::to_string(backbone.max_seq_len) + ")");
  }
  if (synthetic) synthetic->validate();
  data::validate_task_list(tasks);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    const auto f = "tasks[" + std::to_string(i) + "]";
    if (task_is_synthetic(t)) continue;
    const std::pair<const char*, const std::string*> paths[] = {
        {"train", &t.train_path}, {"valid", &t.valid_path}, {"test", &t.test_path}, {"index", &t.index_path}};
    for (const auto& [key, p] : paths) {
      if (p->empty()) {
        if (std::string(key) != "index" || t.schema == data::Schema::code_pair_with_index) {
          throw ConfigError(f + "." + key, "path is required");
        }
        continue;
      }
      if (!fs::exists(*p)) throw ConfigError(f + "." + key, "dataset path '" + *p + "' does not exist");
    }
  }
}

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col), e.what());
  }
  return config_from_json(root, "");
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot read config file");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col), e.what());
  }
  auto base = fs::absolute(path).parent_path().string();
  return config_from_json(root, base);
}

json to_json(const ExperimentConfig& c) {
  const auto& b = c.backbone;
  json j{{"format_version", c.format_version},
         {"name", c.name},
         {"seed", c.seed},
         {"precision", to_string(c.precision)},
         {"mode", to_string(c.train.mode)},
         {"backbone",
          {{"architecture", to_string(b.architecture)},
           {"n_layers", b.n_layers},
           {"d_model", b.d_model},
           {"n_heads", b.n_heads},
           {"d_ffn", b.d_ffn},
           {"vocab_size", b.vocab_size},
           {"max_seq_len", b.max_seq_len},
           {"pad_id", b.pad_id},
           {"dropout", b.dropout},
           {"init_std", b.init_std}}},
         {"loss_weighting", to_string(c.loss_weighting)},
         {"head_dropout", c.head_dropout}};
  if (c.peft) {
    const auto& p = *c.peft;
    json targets = json::array();
    for (auto t : p.lora_targets) targets.push_back(to_string(t));
    j["peft"] = {{"method", to_string(p.method)},
                 {"bottleneck_r", p.bottleneck_r},
                 {"lora_rank", p.lora_rank},
                 {"lora_targets", targets},
                 {"lora_scaling", p.lora_scaling},
                 {"prefix_length", p.prefix_length},
                 {"prefix_reparam_width", p.prefix_reparam_width}};
  } else {
    j["peft"] = nullptr;
  }
  const auto& t = c.train;
  j["train"] = {{"learning_rate", t.learning_rate}, {"adam_beta1", t.adam_beta1},
                {"adam_beta2", t.adam_beta2},       {"epsilon", t.epsilon},
                {"weight_decay", t.weight_decay},   {"per_task_batch", t.per_task_batch},
                {"max_epochs", t.max_epochs},       {"early_stop_patience", t.early_stop_patience},
                {"max_seq_len", t.max_seq_len},     {"temperature", t.temperature},
                {"eval_batch", t.eval_batch},       {"max_steps", t.max_steps}};
  if (c.synthetic) {
    const auto& s = *c.synthetic;
    j["synthetic"] = {{"seed", c.synthetic_seed()},
                      {"train_size", s.train_size},
                      {"valid_size", s.valid_size},
                      {"test_size", s.test_size},
                      {"code_length", s.code_length},
                      {"keywords_per_code", s.keywords_per_code},
                      {"query_keywords", s.query_keywords},
                      {"keyword_vocab", s.keyword_vocab},
                      {"identifier_vocab", s.identifier_vocab},
                      {"keyword_rate", s.keyword_rate},
                      {"identifier_rate", s.identifier_rate},
                      {"rename_rate", s.rename_rate},
                      {"flaky_noise", s.flaky_noise},
                      {"bug_motif", s.bug_motif},
                      {"flaky_motifs", s.flaky_motifs}};
  } else if (c.data_seed) {
    j["synthetic"] = {{"seed", *c.data_seed}};
  }
  json tasks = json::array();
  for (const auto& task : c.tasks) tasks.push_back(task_config_json(c, task));
  j["tasks"] = tasks;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  return j;
}

std::string default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::string(env) : std::string("runs");
}

std::string resolve_output_dir(const ExperimentConfig& c) {
  if (!c.output_dir.empty()) return c.output_dir;
  return (fs::path(default_output_root()) / c.name).string();
}

ExperimentData load_experiment_data(const ExperimentConfig& c) {
  const Index seq = c.train.max_seq_len;
  std::vector<data::TaskDataset> train, valid, test;
  std::vector<data::DatasetSummary> summaries;
  std::optional<std::array<data::SyntheticSplits, 4>> synth;
  auto add = [&](const data::TaskSpec& t, const std::string& split, const std::vector<data::TextRecord>& records,
                 Index malformed, std::vector<data::TaskDataset>& dst) {
    data::DatasetSummary s;
    dst.push_back(data::build_task_dataset(t, records, seq, &s));
    s.task = t.name;
    s.split = split;
    s.malformed = malformed;
    s.skipped = s.malformed + s.filtered;
    if (dst.back().size() == 0) throw DataError("task '" + t.name + "' has no usable " + split + " samples");
    summaries.push_back(s);
  };
  for (const auto& t : c.tasks) {
    if (c.task_is_synthetic(t)) {
      if (!synth) synth = data::generate_synthetic_tasks(c.synthetic.value_or(data::SyntheticSpec{}), c.synthetic_seed());
      const data::SyntheticSplits* src = nullptr;
      for (const auto& s : *synth) {
        if (s.spec.name == t.name) src = &s;
      }
      if (!src) throw ConfigError("tasks", "'" + t.name + "' is not a synthetic task");
      add(t, "train", src->train, 0, train);
      add(t, "valid", src->valid, 0, valid);
      add(t, "test", src->test, 0, test);
    } else {
      const std::pair<std::string, std::vector<data::TaskDataset>*> splits[] = {
          {"train", &train}, {"valid", &valid}, {"test", &test}};
      for (const auto& [split, dst] : splits) {
        const auto& path = split == "train" ? t.train_path : split == "valid" ? t.valid_path : t.test_path;
        if (!fs::exists(path)) throw DataError("dataset path '" + path + "' does not exist");
        auto file = data::load_jsonl_task(path, t.schema, t.index_path);
        add(t, split, file.records, file.malformed, *dst);
      }
    }
  }
  return ExperimentData{SplitData{data::ConcatenatedDataset(std::move(train)), data::ConcatenatedDataset(std::move(valid)),
                                  data::ConcatenatedDataset(std::move(test))},
                        std::move(summaries)};
}

namespace {

template <typename Scalar>
MultiTaskModel<Scalar> build_model(const ExperimentConfig& c) {
  return build_multitask_model<Scalar>(c.backbone, c.train.mode, c.train.mode == TrainMode::peft ? c.peft : std::nullopt,
                                       c.tasks, c.loss_weighting, c.seed, c.head_dropout);
}

template <typename Scalar>
RunReport train_and_save(const ExperimentConfig& c, const ExperimentData& d, const std::string& ckpt, std::ostream* log) {
  auto model = build_model<Scalar>(c);
  TrainHooks hooks;
  hooks.log = log;
  auto rep = train(model, d.splits, c.train, hooks);
  save_checkpoint(ckpt, model.registry(), to_json(c));
  return rep;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

std::string fixed(double v, int digits) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

}  // namespace

RunArtifacts run_experiment(const ExperimentConfig& c, const std::string& dir, std::ostream* log) {
  c.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory '" + dir + "'");
  const auto data = load_experiment_data(c);
  RunArtifacts a;
  a.report_path = (fs::path(dir) / "report.json").string();
  a.checkpoint_path = (fs::path(dir) / "checkpoint.bin").string();
  a.summary_path = (fs::path(dir) / "summary.md").string();
  a.report = c.precision == Precision::float32 ? train_and_save<float>(c, data, a.checkpoint_path, log)
                                               : train_and_save<double>(c, data, a.checkpoint_path, log);
  a.report.name = c.name;
  a.report.peft_method = c.train.mode == TrainMode::peft && c.peft ? to_string(c.peft->method) : "";
  auto j = to_json(a.report);
  j["config"] = to_json(c);
  json summaries = json::array();
  for (const auto& s : data.summaries) summaries.push_back(json::parse(s.to_json()));
  j["datasets"] = summaries;
  write_text(a.report_path, j.dump(2) + "\n");
  write_text(a.summary_path, run_summary_markdown(a.report));
  return a;
}

namespace {

template <typename Scalar>
TaskScore eval_loaded(const ExperimentConfig& c, const std::string& path, const data::TaskDataset& split) {
  auto model = build_model<Scalar>(c);
  load_checkpoint(path, model.registry());
  return evaluate(model, split, c.train);
}

}  // namespace

EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& task, const std::string& split) {
  if (split != "train" && split != "valid" && split != "test") {
    throw ValueError("split must be train, valid or test, got '" + split + "'");
  }
  const auto header = read_checkpoint_header(checkpoint_path);
  auto c = config_from_json(header.meta, "");
  bool found = false;
  for (const auto& t : c.tasks) found = found || t.name == task;
  if (!found) throw ValueError("checkpoint has no task '" + task + "'");
  const auto d = load_experiment_data(c);
  const auto& cat = split == "train" ? d.splits.train : split == "valid" ? d.splits.valid : d.splits.test;
  const data::TaskDataset* ds = nullptr;
  for (const auto& t : cat.tasks()) {
    if (t.name == task) ds = &t;
  }
  EvalResult r{task, split, {}};
  r.score = header.dtype == "float32" ? eval_loaded<float>(c, checkpoint_path, *ds) : eval_loaded<double>(c, checkpoint_path, *ds);
  return r;
}

ParamsReport params_report(const ExperimentConfig& c) {
  c.backbone.validate();
  if (c.peft) c.peft->validate();
  ParamsReport r;
  r.name = c.name;
  r.mode = to_string(c.train.mode);
  r.peft_method = c.train.mode == TrainMode::peft && c.peft ? to_string(c.peft->method) : "";
  // float keeps the reference-size census within memory.
  r.census = census_record(build_model<float>(c).registry());
  r.backbone_closed_form = c.backbone.closed_form_parameter_count();
  return r;
}

json to_json(const ParamsReport& r) {
  return {{"name", r.name},
          {"mode", r.mode},
          {"peft_method", r.peft_method},
          {"backbone_closed_form", r.backbone_closed_form},
          {"total", r.census.total},
          {"trainable", r.census.trainable},
          {"peft", r.census.peft},
          {"heads", r.census.heads},
          {"trainable_percent", r.census.trainable_percent},
          {"peft_percent", r.census.peft_percent}};
}

std::string to_markdown(const ParamsReport& r) {
  std::ostringstream o;
  o << "| run | mode | method | total | trainable | trainable % | peft % |\n";
  o << "|---|---|---|---:|---:|---:|---:|\n";
  o << "| " << r.name << " | " << r.mode << " | " << (r.peft_method.empty() ? "-" : r.peft_method) << " | " << r.census.total
    << " | " << r.census.trainable << " | " << fixed(r.census.trainable_percent, 2) << " | " << fixed(r.census.peft_percent, 2)
    << " |\n";
  return o.str();
}

std::string run_summary_markdown(const RunReport& r) {
  std::ostringstream o;
  o << "# " << r.name << "\n\n";
  o << "- mode: " << r.mode << (r.peft_method.empty() ? "" : " (" + r.peft_method + ")") << "\n";
  o << "- loss weighting: " << r.loss_weighting << "\n";
  o << "- precision: " << r.precision << ", seed " << r.seed << "\n";
  o << "- batch: " << r.per_task_batch << " per task, " << r.global_batch_size << " global, sequence " << r.max_seq_len << "\n";
  o << "- best epoch " << r.best_epoch << " of " << r.epochs.size() << (r.early_stopped ? " (early stop)" : "")
    << ", updates to best " << r.updates_to_best << ", tokens to best " << r.tokens_to_best << "\n";
  o << "- trainable " << r.census.trainable << " / " << r.census.total << " (" << fixed(r.census.trainable_percent, 2)
    << "%), PEFT modules " << fixed(r.census.peft_percent, 2) << "%\n\n";
  o << "| task | metric | test | batch MRR | test loss |\n|---|---|---:|---:|---:|\n";
  for (const auto& t : r.tasks) {
    const auto it = r.test.find(t.name);
    if (it == r.test.end()) continue;
    const auto& s = it->second;
    o << "| " << t.name << " | " << s.metric << " | " << fixed(s.value, 4) << " | "
      << (s.batch_mrr >= 0.0 ? fixed(s.batch_mrr, 4) : "-") << " | " << fixed(s.loss, 4) << " |\n";
  }
  o << "\nmacro mean: " << fixed(r.macro_score(), 4) << "\n";
  return o.str();
}

}  // namespace mtpeft
