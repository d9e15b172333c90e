#include "mtpeft/compare.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace mtpeft {

using nlohmann::json;

namespace {

std::string fixed2(double v) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(2);
  // Avoid "-0.00" for deltas that round to zero.
  if (v > -0.005 && v < 0.005) v = 0.0;
  ss << v;
  return ss.str();
}

std::string signed2(double v) {
  const auto s = fixed2(v);
  return (s[0] != '-' && s != "0.00") ? "+" + s : s;
}

RunReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read report '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("report '" + path + "' is not valid JSON: " + e.what());
  }
  return run_report_from_json(j);
}

std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? sep : "") + v[i];
  return out;
}

}  // namespace

bool CompareEntry::single_task() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunReport& r) { return r.tasks.size() == 1; });
}

std::vector<std::string> CompareEntry::task_names() const {
  std::vector<std::string> out;
  for (const auto& r : runs)
    for (const auto& t : r.tasks) out.push_back(t.name);
  std::sort(out.begin(), out.end());
  return out;
}

double CompareEntry::score(const std::string& task) const {
  for (const auto& r : runs) {
    const auto it = r.test.find(task);
    if (it != r.test.end()) return it->second.value;
  }
  throw ValueError("entry '" + label + "' has no test score for task '" + task + "'");
}

double CompareEntry::macro_score() const {
  const auto names = task_names();
  double s = 0.0;
  for (const auto& n : names) s += score(n);
  return s / double(names.size());
}

Index CompareEntry::total_parameters() const {
  Index n = 0;
  for (const auto& r : runs) n += r.census.total;
  return n;
}

Index CompareEntry::trainable_parameters() const {
  Index n = 0;
  for (const auto& r : runs) n += r.census.trainable;
  return n;
}

Index CompareEntry::peft_parameters() const {
  Index n = 0;
  for (const auto& r : runs) n += r.census.peft;
  return n;
}

double CompareEntry::trainable_percent() const {
  const auto t = total_parameters();
  return t ? 100.0 * double(trainable_parameters()) / double(t) : 0.0;
}

double CompareEntry::peft_percent() const {
  const auto t = total_parameters();
  return t ? 100.0 * double(peft_parameters()) / double(t) : 0.0;
}

Index CompareEntry::tokens_to_best() const {
  Index n = 0;
  for (const auto& r : runs) n += r.tokens_to_best;
  return n;
}

Index CompareEntry::updates_to_best() const {
  Index n = 0;
  for (const auto& r : runs) n += r.updates_to_best;
  return n;
}

CompareEntry make_compare_entry(std::vector<RunReport> runs, const std::string& label) {
  if (runs.empty()) throw ValueError("compare entry needs at least one report");
  CompareEntry e;
  e.runs = std::move(runs);
  if (!label.empty()) {
    e.label = label;
  } else {
    std::vector<std::string> names;
    for (const auto& r : e.runs) names.push_back(r.name);
    e.label = join(names, "+");
  }
  std::set<std::string> seen;
  for (const auto& r : e.runs) {
    for (const auto& t : r.tasks) {
      if (!seen.insert(t.name).second) throw ValueError("entry '" + e.label + "': task '" + t.name + "' appears in two reports");
    }
  }
  return e;
}

CompareEntry load_compare_entry(const std::vector<std::string>& report_paths, const std::string& label) {
  std::vector<RunReport> runs;
  for (const auto& p : report_paths) runs.push_back(read_report(p));
  return make_compare_entry(std::move(runs), label);
}

std::string direction_marker(double delta_pp) {
  const auto s = fixed2(delta_pp);
  if (s == "0.00") return "=";
  return delta_pp > 0.0 ? "↑" : "↓";
}

ComparisonReport compare_runs(const std::vector<CompareEntry>& entries, const CompareEntry& baseline) {
  ComparisonReport rep;
  rep.tasks = baseline.task_names();
  rep.baseline = baseline.label;
  auto row_of = [&](const CompareEntry& e, bool is_base) {
    if (e.task_names() != rep.tasks) {
      throw ValueError("compare: '" + e.label + "' covers tasks {" + join(e.task_names(), ", ") + "}, baseline '" +
                       baseline.label + "' covers {" + join(rep.tasks, ", ") + "}");
    }
    CompareRow row;
    row.label = e.label;
    row.baseline = is_base;
    row.kind = e.single_task() ? "sft" : "mft";
    for (const auto& t : rep.tasks) {
      row.score[t] = e.score(t);
      row.delta_pp[t] = 100.0 * (e.score(t) - baseline.score(t));
    }
    row.macro = e.macro_score();
    row.macro_delta_pp = 100.0 * (row.macro - baseline.macro_score());
    row.trainable_percent = e.trainable_percent();
    row.peft_percent = e.peft_percent();
    row.updates_to_best = e.updates_to_best();
    row.tokens_to_best = e.tokens_to_best();
    return row;
  };
  rep.rows.push_back(row_of(baseline, true));
  for (const auto& e : entries) rep.rows.push_back(row_of(e, false));
  if (rep.rows.size() < 2) throw ValueError("compare needs at least two reports");
  for (const auto& s : rep.rows) {
    if (s.kind != "sft") continue;
    for (const auto& m : rep.rows) {
      if (m.kind != "mft" || m.tokens_to_best == 0) continue;
      rep.sft_mft_ratios.push_back({s.label, m.label, double(s.tokens_to_best) / double(m.tokens_to_best)});
    }
  }
  return rep;
}

json to_json(const ComparisonReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json markers = json::object();
    for (const auto& [t, d] : row.delta_pp) markers[t] = direction_marker(d);
    rows.push_back({{"label", row.label},
                    {"baseline", row.baseline},
                    {"kind", row.kind},
                    {"score", row.score},
                    {"delta_pp", row.delta_pp},
                    {"direction", markers},
                    {"macro", row.macro},
                    {"macro_delta_pp", row.macro_delta_pp},
                    {"trainable_percent", row.trainable_percent},
                    {"peft_percent", row.peft_percent},
                    {"updates_to_best", row.updates_to_best},
                    {"tokens_to_best", row.tokens_to_best}});
  }
  json ratios = json::array();
  for (const auto& x : r.sft_mft_ratios) ratios.push_back({{"sft", x.sft}, {"mft", x.mft}, {"ratio", x.ratio}});
  return {{"format_version", 1},
          {"tasks", r.tasks},
          {"baseline", r.baseline},
          {"delta_unit", "percentage points, score minus baseline score"},
          {"rows", rows},
          {"sft_mft_token_ratios", ratios}};
}

std::string to_markdown(const ComparisonReport& r) {
  std::ostringstream o;
  o << "| run | kind | Trainable% |";
  for (const auto& t : r.tasks) o << " " << t << " |";
  o << " macro | tokens to best |\n|---|---|---:|";
  for (std::size_t i = 0; i < r.tasks.size(); ++i) o << "---:|";
  o << "---:|---:|\n";
  for (const auto& row : r.rows) {
    o << "| " << row.label << (row.baseline ? " (baseline)" : "") << " | " << row.kind << " | " << fixed2(row.trainable_percent)
      << " |";
    for (const auto& t : r.tasks) {
      o << " " << fixed2(100.0 * row.score.at(t));
      if (!row.baseline) {
        const double d = row.delta_pp.at(t);
        o << " (" << signed2(d) << " " << direction_marker(d) << ")";
      }
      o << " |";
    }
    o << " " << fixed2(100.0 * row.macro);
    if (!row.baseline) o << " (" << signed2(row.macro_delta_pp) << " " << direction_marker(row.macro_delta_pp) << ")";
    o << " | " << row.tokens_to_best << " |\n";
  }
  if (!r.sft_mft_ratios.empty()) {
    o << "\n| SFT | MFT | SFT/MFT tokens |\n|---|---|---:|\n";
    for (const auto& x : r.sft_mft_ratios) o << "| " << x.sft << " | " << x.mft << " | " << fixed2(x.ratio) << " |\n";
  }
  o << "\nScores in %, deltas in pp against the baseline.\n";
  return o.str();
}

std::vector<GridRun> plan_pairwise(const ExperimentConfig& base, const std::optional<PeftMethod>& method) {
  if (base.tasks.size() != 4) {
    throw ConfigError("tasks", "pairwise grid needs exactly 4 tasks, config has " + std::to_string(base.tasks.size()));
  }
  ExperimentConfig proto = base;
  if (method) {
    proto.train.mode = TrainMode::peft;
    if (!proto.peft) proto.peft = PeftConfig{};
    proto.peft->method = *method;
  }
  auto make = [&](const std::string& suffix, const std::vector<std::size_t>& idx) {
    GridRun g;
    g.config = proto;
    g.config.tasks.clear();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto t = base.tasks[idx[k]];
      t.task_id = static_cast<int>(k);
      g.config.tasks.push_back(t);
      g.tasks.push_back(t.name);
    }
    g.name = base.name + "_" + suffix;
    g.config.name = g.name;
    g.config.output_dir.clear();
    return g;
  };
  std::vector<GridRun> out;
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = a + 1; b < 4; ++b)
      out.push_back(make("pair_" + base.tasks[a].name + "_" + base.tasks[b].name, {a, b}));
  for (std::size_t a = 0; a < 4; ++a) out.push_back(make("single_" + base.tasks[a].name, {a}));
  out.push_back(make("all", {0, 1, 2, 3}));
  return out;
}

bool GridReport::all_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const GridOutcome& g) { return g.ok; });
}

GridReport build_grid_report(const std::vector<std::string>& tasks, std::vector<GridOutcome> runs) {
  GridReport rep;
  rep.tasks = tasks;
  rep.runs = std::move(runs);
  auto score_in = [&](const std::string& task, const std::vector<std::string>& set) -> std::optional<double> {
    for (const auto& g : rep.runs) {
      auto a = g.tasks, b = set;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (a != b) continue;
      if (!g.ok || !g.report) return std::nullopt;
      const auto it = g.report->test.find(task);
      if (it == g.report->test.end()) return std::nullopt;
      return it->second.value;
    }
    return std::nullopt;
  };
  for (const auto& t : tasks) {
    GridRow row;
    row.task = t;
    for (const auto& p : tasks) {
      if (p != t) row.pairings.push_back({p, score_in(t, {t, p})});
    }
    row.single = {"single", score_in(t, {t})};
    row.all = {"all", score_in(t, tasks)};
    rep.rows.push_back(row);
  }
  return rep;
}

json to_json(const GridReport& r) {
  auto cell = [](const GridRowCell& c) { return c.score ? json(*c.score) : json(nullptr); };
  json runs = json::array();
  for (const auto& g : r.runs) {
    runs.push_back({{"name", g.name},
                    {"tasks", g.tasks},
                    {"status", g.ok ? "ok" : "failed"},
                    {"exit_code", g.exit_code},
                    {"report", g.report_path}});
  }
  json rows = json::array();
  for (const auto& row : r.rows) {
    json pairs = json::object();
    for (const auto& c : row.pairings) pairs[c.label] = cell(c);
    rows.push_back({{"task", row.task}, {"pairings", pairs}, {"single", cell(row.single)}, {"all", cell(row.all)}});
  }
  return {{"format_version", 1}, {"tasks", r.tasks}, {"runs", runs}, {"rows", rows}, {"all_ok", r.all_ok()}};
}

std::string to_markdown(const GridReport& r) {
  auto cell = [](const GridRowCell& c) { return c.score ? fixed2(100.0 * *c.score) : std::string("failed"); };
  std::ostringstream o;
  o << "| task | pairing 1 | pairing 2 | pairing 3 | single | all |\n|---|---|---|---|---:|---:|\n";
  for (const auto& row : r.rows) {
    o << "| " << row.task << " |";
    for (const auto& c : row.pairings) o << " " << c.label << ": " << cell(c) << " |";
    o << " " << cell(row.single) << " | " << cell(row.all) << " |\n";
  }
  o << "\n| run | tasks | status |\n|---|---|---|\n";
  for (const auto& g : r.runs) o << "| " << g.name << " | " << join(g.tasks, ", ") << " | " << (g.ok ? "ok" : "failed") << " |\n";
  return o.str();
}

}  // namespace mtpeft
