// mtpeft: train, evaluate and compare multi-task PEFT runs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtpeft/compare.hpp"
#include "mtpeft/experiment.hpp"
#include "mtpeft/process.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mtpeft;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kRunFailed = 4 };

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create directory '" + dir.string() + "'");
  const auto probe = dir / ".mtpeft_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw Error("directory '" + dir.string() + "' is not writable");
  }
  fs::remove(probe, ec);
}

ExperimentConfig load_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto c = load_experiment_config(path);
  if (seed) {
    c.seed = *seed;
    c.train.seed = *seed;
  }
  return c;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(',', start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

int cmd_train(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out) {
  auto c = load_with_seed(config, seed);
  if (!out.empty()) c.output_dir = out;
  const auto dir = resolve_output_dir(c);
  auto a = run_experiment(c, dir, &std::cerr);
  std::cout << run_summary_markdown(a.report) << "\n"
            << "report: " << a.report_path << "\ncheckpoint: " << a.checkpoint_path << "\nsummary: " << a.summary_path
            << "\n";
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& task, const std::string& split, const std::string& out) {
  const auto r = evaluate_checkpoint(checkpoint, task, split);
  json j{{"checkpoint", checkpoint}, {"task", r.task}, {"split", r.split}, {"metric", r.score.metric},
         {"value", r.score.value}, {"loss", r.score.loss}, {"samples", r.score.samples}};
  if (r.score.batch_mrr >= 0.0) j["batch_mrr"] = r.score.batch_mrr;
  std::cout << j.dump(2) << "\n";
  if (!out.empty()) write_file(out, j.dump(2) + "\n");
  return kOk;
}

int cmd_compare(const std::vector<std::string>& reports, const std::string& baseline, const std::string& out) {
  std::vector<CompareEntry> entries;
  for (const auto& r : reports) entries.push_back(load_compare_entry(split_commas(r)));
  const auto base = load_compare_entry(split_commas(baseline));
  const auto rep = compare_runs(entries, base);
  const auto dir = out.empty() ? fs::path(default_output_root()) / "compare" : fs::path(out);
  ensure_dir(dir);
  write_file(dir / "comparison.json", to_json(rep).dump(2) + "\n");
  write_file(dir / "comparison.md", to_markdown(rep));
  std::cout << to_markdown(rep) << "\nwritten: " << (dir / "comparison.json").string() << ", "
            << (dir / "comparison.md").string() << "\n";
  return kOk;
}

int cmd_pairwise(const std::string& config, const std::string& method, const std::optional<std::uint64_t>& seed, int jobs,
                 const std::string& out) {
  const auto base = load_with_seed(config, seed);
  base.validate();
  std::optional<PeftMethod> m;
  if (!method.empty()) m = parse_peft_method(method);
  const fs::path root = out.empty() ? fs::path(default_output_root()) / (base.name + "_pairwise") : fs::path(out);
  ensure_dir(root / "configs");
  const auto plan = plan_pairwise(base, m);
  const auto exe = self_executable();
  std::vector<ProcessSpec> specs;
  std::vector<fs::path> run_dirs;
  for (const auto& g : plan) {
    const auto run_dir = fs::absolute(root / g.name);
    ensure_dir(run_dir);
    auto c = g.config;
    c.output_dir = run_dir.string();
    const auto cfg_path = fs::absolute(root / "configs" / (g.name + ".json"));
    write_file(cfg_path, to_json(c).dump(2) + "\n");
    specs.push_back({{exe, "train", "--config", cfg_path.string()}, (run_dir / "train.log").string()});
    run_dirs.push_back(run_dir);
  }
  std::cerr << "pairwise: " << specs.size() << " runs, " << jobs << " at a time, under " << root.string() << "\n";
  const auto codes = run_processes(specs, jobs);
  std::vector<GridOutcome> outcomes;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    GridOutcome o;
    o.name = plan[i].name;
    o.tasks = plan[i].tasks;
    o.exit_code = codes[i];
    o.report_path = (run_dirs[i] / "report.json").string();
    if (codes[i] == 0) {
      try {
        o.report = load_compare_entry({o.report_path}).runs.front();
        o.ok = true;
      } catch (const std::exception& e) {
        std::cerr << "pairwise: " << o.name << ": " << e.what() << "\n";
      }
    }
    if (!o.ok) std::cerr << "pairwise: run " << o.name << " failed (exit " << codes[i] << "), see " << specs[i].log_path << "\n";
    outcomes.push_back(std::move(o));
  }
  std::vector<std::string> tasks;
  for (const auto& t : base.tasks) tasks.push_back(t.name);
  const auto grid = build_grid_report(tasks, std::move(outcomes));
  write_file(root / "grid.json", to_json(grid).dump(2) + "\n");
  write_file(root / "grid.md", to_markdown(grid));
  std::cout << to_markdown(grid);
  return grid.all_ok() ? kOk : kRunFailed;
}

int cmd_params(const std::string& config, const std::string& out) {
  const auto c = load_experiment_config(config);
  const auto r = params_report(c);
  std::cout << to_markdown(r) << "\n" << to_json(r).dump(2) << "\n";
  if (!out.empty()) {
    ensure_dir(out);
    write_file(fs::path(out) / "params.json", to_json(r).dump(2) + "\n");
    write_file(fs::path(out) / "params.md", to_markdown(r));
  }
  return kOk;
}

int cmd_gen_synthetic(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out) {
  data::SyntheticSpec spec;
  std::uint64_t s = 42;
  if (!config.empty()) {
    const auto c = load_experiment_config(config);
    spec = c.synthetic.value_or(spec);
    s = c.synthetic_seed();
  }
  if (seed) s = *seed;
  const fs::path dir = out.empty() ? fs::path(default_output_root()) / "synthetic" : fs::path(out);
  ensure_dir(dir);
  const auto specs = data::write_synthetic_tasks(data::generate_synthetic_tasks(spec, s), dir.string());
  for (const auto& t : specs) std::cout << t.name << ": " << t.train_path << ", " << t.valid_path << ", " << t.test_path << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task parameter-efficient fine-tuning runs"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, task, split = "test", baseline, method;
  std::vector<std::string> reports;
  std::optional<std::uint64_t> seed;
  int jobs = 1;

  auto* train = app.add_subcommand("train", "Train one configuration and write report, checkpoint and summary");
  train->add_option("--config", config, "Experiment config (JSON)")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out, "Output directory (default: $" + std::string(kOutputRootEnv) + "/<name>)");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on one task split");
  eval->add_option("--checkpoint", checkpoint, "checkpoint.bin written by train")->required();
  eval->add_option("--task", task, "Task name")->required();
  eval->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));
  eval->add_option("--out", out, "Also write the JSON result here");

  auto* compare = app.add_subcommand("compare", "Compare run reports against a baseline");
  compare->add_option("reports", reports, "Report paths; comma-join single-task reports to form one SFT row")->required();
  compare->add_option("--baseline", baseline, "Baseline report (comma-joined for an SFT group)")->required();
  compare->add_option("--out", out, "Directory for comparison.json and comparison.md");

  auto* pairwise = app.add_subcommand("pairwise", "Run the pairwise grid: 6 pairs, 4 single-task runs, 1 all-task run");
  pairwise->add_option("--config", config, "4-task experiment config")->required();
  pairwise->add_option("--method", method, "PEFT method override");
  pairwise->add_option("--seed", seed, "Override the config seed");
  pairwise->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  pairwise->add_option("--out", out, "Grid directory");

  auto* params = app.add_subcommand("params", "Trainable-parameter census without training");
  params->add_option("--config", config, "Experiment config")->required();
  params->add_option("--out", out, "Directory for params.json and params.md");

  auto* gen = app.add_subcommand("gen-synthetic", "Write the four synthetic task datasets as JSONL");
  gen->add_option("--config", config, "Config whose synthetic block to use");
  gen->add_option("--seed", seed, "Generator seed");
  gen->add_option("--out", out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config, seed, out);
    if (*eval) return cmd_eval(checkpoint, task, split, out);
    if (*compare) return cmd_compare(reports, baseline, out);
    if (*pairwise) return cmd_pairwise(config, method, seed, jobs, out);
    if (*params) return cmd_params(config, out);
    if (*gen) return cmd_gen_synthetic(config, seed, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
