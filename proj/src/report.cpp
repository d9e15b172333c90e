#include "mtpeft/report.hpp"

#include "mtpeft/error.hpp"

namespace mtpeft {

using nlohmann::json;

namespace {

json score_json(const TaskScore& s) {
  json j{{"metric", s.metric}, {"value", s.value}, {"loss", s.loss}, {"samples", s.samples}};
  if (s.batch_mrr >= 0.0) j["batch_mrr"] = s.batch_mrr;
  return j;
}

TaskScore score_from(const json& j) {
  TaskScore s;
  s.metric = j.at("metric").get<std::string>();
  s.value = j.at("value").get<double>();
  s.loss = j.value("loss", 0.0);
  s.samples = j.value("samples", Index{0});
  s.batch_mrr = j.value("batch_mrr", -1.0);
  return s;
}

json task_json(const data::TaskSpec& t) {
  return {{"id", t.task_id}, {"name", t.name}, {"kind", data::to_string(t.kind)}, {"metric", data::to_string(t.metric)}};
}

}  // namespace

std::vector<std::string> RunReport::task_names() const {
  std::vector<std::string> out;
  for (const auto& t : tasks) out.push_back(t.name);
  return out;
}

double RunReport::macro_score() const {
  if (test.empty()) throw ValueError("macro_score: report has no test scores");
  double s = 0.0;
  for (const auto& [name, score] : test) s += score.value;
  return s / double(test.size());
}

json to_json(const RunReport& r) {
  json tasks = json::array();
  for (const auto& t : r.tasks) tasks.push_back(task_json(t));
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json valid = json::object();
    for (const auto& [k, v] : e.valid) valid[k] = score_json(v);
    epochs.push_back({{"epoch", e.epoch},
                      {"updates", e.updates},
                      {"train_loss", e.train_loss},
                      {"valid", valid},
                      {"valid_loss", e.valid_loss},
                      {"alpha", e.alpha},
                      {"min_alpha", e.min_alpha}});
  }
  json test = json::object();
  for (const auto& [k, v] : r.test) test[k] = score_json(v);
  return {{"format_version", 1},
          {"name", r.name},
          {"mode", r.mode},
          {"peft_method", r.peft_method},
          {"loss_weighting", r.loss_weighting},
          {"precision", r.precision},
          {"seed", r.seed},
          {"tasks", tasks},
          {"per_task_batch", r.per_task_batch},
          {"global_batch_size", r.global_batch_size},
          {"batch_size_semantics", "global = tasks x per_task_batch"},
          {"max_seq_len", r.max_seq_len},
          {"steps_per_epoch", r.steps_per_epoch},
          {"epochs", epochs},
          {"early_stop_aggregate", "uniform mean of per-task validation losses"},
          {"early_stopped", r.early_stopped},
          {"best_epoch", r.best_epoch},
          {"best_valid_loss", r.best_valid_loss},
          {"updates_to_best", r.updates_to_best},
          {"tokens_to_best", r.tokens_to_best},
          {"total_updates", r.total_updates},
          {"test", test},
          {"census",
           {{"total", r.census.total},
            {"trainable", r.census.trainable},
            {"peft", r.census.peft},
            {"heads", r.census.heads},
            {"trainable_percent", r.census.trainable_percent},
            {"peft_percent", r.census.peft_percent}}},
          {"wall_clock_seconds", r.wall_clock_seconds}};
}

RunReport run_report_from_json(const json& j) {
  try {
    RunReport r;
    r.name = j.at("name").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.peft_method = j.value("peft_method", std::string());
    r.loss_weighting = j.value("loss_weighting", std::string());
    r.precision = j.value("precision", std::string());
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& t : j.at("tasks")) {
      data::TaskSpec s;
      s.task_id = t.at("id").get<int>();
      s.name = t.at("name").get<std::string>();
      s.kind = data::parse_task_kind(t.at("kind").get<std::string>());
      s.metric = data::parse_metric(t.at("metric").get<std::string>());
      r.tasks.push_back(s);
    }
    r.per_task_batch = j.at("per_task_batch").get<Index>();
    r.global_batch_size = j.at("global_batch_size").get<Index>();
    r.max_seq_len = j.at("max_seq_len").get<Index>();
    r.steps_per_epoch = j.value("steps_per_epoch", Index{0});
    for (const auto& e : j.value("epochs", json::array())) {
      EpochRecord rec;
      rec.epoch = e.at("epoch").get<Index>();
      rec.updates = e.at("updates").get<Index>();
      rec.train_loss = e.at("train_loss").get<std::map<std::string, double>>();
      for (const auto& [k, v] : e.at("valid").items()) rec.valid[k] = score_from(v);
      rec.valid_loss = e.at("valid_loss").get<double>();
      rec.alpha = e.at("alpha").get<std::vector<double>>();
      rec.min_alpha = e.at("min_alpha").get<double>();
      r.epochs.push_back(std::move(rec));
    }
    r.early_stopped = j.value("early_stopped", false);
    r.best_epoch = j.at("best_epoch").get<Index>();
    r.best_valid_loss = j.at("best_valid_loss").get<double>();
    r.updates_to_best = j.at("updates_to_best").get<Index>();
    r.tokens_to_best = j.at("tokens_to_best").get<Index>();
    r.total_updates = j.value("total_updates", r.updates_to_best);
    for (const auto& [k, v] : j.at("test").items()) r.test[k] = score_from(v);
    if (j.contains("census")) {
      const auto& c = j.at("census");
      r.census = {c.at("total").get<Index>(),          c.at("trainable").get<Index>(),
                  c.at("peft").get<Index>(),           c.at("heads").get<Index>(),
                  c.at("trainable_percent").get<double>(), c.at("peft_percent").get<double>()};
    }
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw ConfigError("report", std::string("malformed run report: ") + e.what());
  }
}

Index token_cost(Index updates, Index global_batch, Index seq_len) { return updates * global_batch * seq_len; }

Index token_cost(const RunReport& r) { return token_cost(r.updates_to_best, r.global_batch_size, r.max_seq_len); }

json deterministic_view(const RunReport& r) {
  auto j = to_json(r);
  j.erase("wall_clock_seconds");
  return j;
}

}  // namespace mtpeft
