// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any selected criterion fails. Usage: acceptance [criterion...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "mtpeft/autograd/gradcheck.hpp"
#include "mtpeft/checkpoint.hpp"
#include "mtpeft/compare.hpp"
#include "mtpeft/experiment.hpp"
#include "mtpeft/metrics.hpp"
#include "mtpeft/process.hpp"

using namespace mtpeft;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.precision(2);
  s << std::scientific << v;
  return s.str();
}

fs::path config_path(const std::string& name) { return fs::path(MTPEFT_SOURCE_DIR) / "configs" / name; }

fs::path work_dir(const std::string& name) {
  auto p = fs::absolute("acceptance_runs") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double cpu_seconds() { return double(std::clock()) / CLOCKS_PER_SEC; }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

int run_cli(const std::vector<std::string>& args, const fs::path& log) {
  std::vector<std::string> argv{MTPEFT_CLI};
  argv.insert(argv.end(), args.begin(), args.end());
  return run_processes({{argv, log.string()}}, 1).front();
}

BackboneConfig tiny_backbone(Architecture arch = Architecture::encoder_only) {
  BackboneConfig c;
  c.architecture = arch;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.max_seq_len = 24;
  c.dropout = 0.0;
  return c;
}

data::SyntheticSpec small_synthetic() {
  data::SyntheticSpec s;
  s.train_size = 64;
  s.valid_size = 32;
  s.test_size = 32;
  s.code_length = 10;
  s.keywords_per_code = 3;
  s.query_keywords = 2;
  return s;
}

data::ConcatenatedDataset synthetic_train(const std::vector<data::TaskSpec>& tasks, Index seq, std::uint64_t seed) {
  const auto suite = data::generate_synthetic_tasks(small_synthetic(), seed);
  std::vector<data::TaskDataset> out;
  for (const auto& t : tasks) {
    for (const auto& s : suite) {
      if (s.spec.name == t.name) out.push_back(data::build_task_dataset(t, s.train, seq));
    }
  }
  return data::ConcatenatedDataset(std::move(out));
}

// 1. Trainable fractions on the reference-size backbone.
Outcome criterion_1() {
  struct Case {
    const char* config;
    double target;
    double tol;
  };
  const Case cases[] = {{"reference_serial.json", 1.85, 0.3}, {"reference_parallel.json", 0.93, 0.2}, {"reference_lora.json", 0.46, 0.1}};
  Outcome o{true, ""};
  for (const auto& c : cases) {
    const auto cfg = load_experiment_config(config_path(c.config).string());
    const auto r = params_report(cfg);
    // PEFT-only fraction recomputed from the raw counts.
    const double pct = 100.0 * double(r.census.peft) / double(r.census.total);
    const bool ok = std::abs(pct - c.target) <= c.tol && r.census.total > 120'000'000 && r.census.total < 130'000'000;
    o.pass = o.pass && ok;
    o.detail += std::string(c.config) + " " + fmt(pct, 2) + "% (target " + fmt(c.target, 2) + " +/- " + fmt(c.tol, 1) + "); ";
  }
  const auto full = params_report(load_experiment_config(config_path("reference_full.json").string()));
  const bool full_ok = full.census.trainable == full.census.total && fmt(full.census.trainable_percent, 2) == "100.00";
  o.pass = o.pass && full_ok;
  o.detail += "full " + fmt(full.census.trainable_percent, 2) + "% of " + std::to_string(full.census.total);
  return o;
}

ExperimentConfig controlled_config(const std::string& name, std::vector<std::string> tasks, Index per_task_batch, Index steps) {
  auto c = parse_experiment_config(R"({"format_version": 1, "tasks": ["clone"]})");
  c.name = name;
  c.backbone = tiny_backbone();
  c.backbone.max_seq_len = 32;
  c.peft = PeftConfig{};
  c.peft->bottleneck_r = 4;
  c.train.learning_rate = 1e-3;
  c.train.max_seq_len = 32;
  c.train.per_task_batch = per_task_batch;
  c.train.max_epochs = 1;
  c.train.max_steps = steps;
  c.synthetic = small_synthetic();
  c.tasks.clear();
  for (const auto& t : tasks) c.tasks.push_back(parse_experiment_config(json{{"format_version", 1}, {"tasks", {t}}}.dump()).tasks[0]);
  for (std::size_t i = 0; i < c.tasks.size(); ++i) c.tasks[i].task_id = static_cast<int>(i);
  return c;
}

// 2. Token cost of a fixed-update run and the SFT/MFT ratio through the CLI.
Outcome criterion_2() {
  const auto dir = work_dir("c2");
  const Index U = 7;
  const auto fixed = run_experiment(controlled_config("fixed", {"clone", "defect", "search"}, 4, U), (dir / "fixed").string());
  const auto& r = fixed.report;
  const Index expected = U * (4 * 3) * 32;
  bool ok = r.updates_to_best == U && r.global_batch_size == 12 && r.tokens_to_best == expected;

  // MFT: 5 updates at global batch 8. SFT: 6 + 4 updates at batch 8. Same sequence length.
  const auto mft = run_experiment(controlled_config("mft", {"clone", "defect"}, 4, 5), (dir / "mft").string());
  const auto sft_a = run_experiment(controlled_config("sft_clone", {"clone"}, 8, 6), (dir / "sft_clone").string());
  const auto sft_b = run_experiment(controlled_config("sft_defect", {"defect"}, 8, 4), (dir / "sft_defect").string());
  const int code = run_cli({"compare", sft_a.report_path + "," + sft_b.report_path, "--baseline", mft.report_path, "--out",
                            (dir / "compare").string()},
                           dir / "compare.log");
  double ratio = -1.0;
  if (code == 0) {
    const auto j = read_json(dir / "compare" / "comparison.json");
    const auto& ratios = j.at("sft_mft_token_ratios");
    if (ratios.size() == 1) ratio = ratios[0].at("ratio").get<double>();
  }
  ok = ok && code == 0 && ratio == 2.0;
  return {ok, "U=" + std::to_string(U) + " tokens " + std::to_string(r.tokens_to_best) + " (expected " +
                  std::to_string(expected) + "); SFT/MFT ratio " + fmt(ratio, 6) + " (compare exit " + std::to_string(code) + ")"};
}

// Oracle for the weighted loss: sum_k softmax(theta)_k * l_k.
double weighted_oracle(const ag::Vec<double>& theta, const std::vector<double>& l) {
  double z = 0.0, s = 0.0;
  for (Index k = 0; k < theta.size(); ++k) z += std::exp(theta[k]);
  for (Index k = 0; k < theta.size(); ++k) s += std::exp(theta[k]) / z * l[static_cast<std::size_t>(k)];
  return s;
}

// 3. theta = 0 gives uniform weights and the mean loss; dL/dtheta matches FD.
Outcome criterion_3() {
  using T = Tensor<double>;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> loss_dist(0.01, 5.0);
  std::normal_distribution<double> theta_dist(0.0, 1.0);
  double worst_alpha = 0.0, worst_mean = 0.0, worst_fd = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index K = 1 + static_cast<Index>(trial % 6);
    std::vector<double> l;
    std::vector<T> lt;
    for (Index k = 0; k < K; ++k) {
      l.push_back(loss_dist(rng));
      lt.push_back(T::scalar(l.back()));
    }
    LossWeights<double> zero{T::zeros({K}, true)};
    for (double a : zero.alpha()) worst_alpha = std::max(worst_alpha, std::abs(a - 1.0 / double(K)));
    double mean = 0.0;
    for (double v : l) mean += v / double(K);
    worst_mean = std::max(worst_mean, std::abs(combine_losses(lt, zero).item() - mean));

    for (bool at_zero : {true, false}) {
      LossWeights<double> w{T::zeros({K}, true)};
      if (!at_zero) {
        for (Index k = 0; k < K; ++k) w.theta.mutable_value()[k] = theta_dist(rng);
      }
      w.theta.zero_grad();
      combine_losses(lt, w).backward();
      const auto r = ag::finite_difference_check<double>([&](const ag::Vec<double>& th) { return weighted_oracle(th, l); },
                                                         w.theta.value(), w.theta.grad(), 1e-6);
      worst_fd = std::max(worst_fd, r.max_rel_error);
    }
  }

  // The same identity through a real model: theta starts at zero.
  auto tasks = data::synthetic_task_specs();
  auto model = build_multitask_model<double>(tiny_backbone(), TrainMode::peft, PeftConfig{}, tasks, LossWeighting::learnable, 42);
  const auto ds = synthetic_train(tasks, 16, 5);
  data::RoundRobinSampler sampler(ds, 4, 1);
  const auto fwd = model.forward(sampler.epoch(0)[0], ds, false, nullptr, 0.05);
  double mean = 0.0;
  for (const auto& x : fwd.losses) mean += x.item() / double(fwd.losses.size());
  const double model_gap = std::abs(model.combined_loss(fwd).item() - mean);

  const bool ok = worst_alpha <= 1e-12 && worst_mean <= 1e-12 && model_gap <= 1e-12 && worst_fd < 1e-6;
  return {ok, "max |alpha - 1/K| " + sci(worst_alpha) + ", max |L - mean| " + sci(worst_mean) + " (model " + sci(model_gap) +
                  "), max FD rel err " + sci(worst_fd)};
}

// Gradient check of the combined loss w.r.t. the selected parameters after
// nudging them off their init so zero-initialised factors do not hide terms.
double model_gradcheck(MultiTaskModel<double>& model, const std::function<bool(const nn::Parameter<double>&)>& select,
                       std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<Tensor<double>> inputs;
  for (auto& p : model.registry().params()) {
    if (!select(p)) continue;
    Tensor<double> t = p.tensor;
    if (!p.frozen()) {
      for (Index i = 0; i < t.numel(); ++i) t.mutable_value()[i] += noise(rng);
    }
    inputs.push_back(t);
  }
  const auto tasks = model.tasks();
  const auto ds = synthetic_train(tasks, 12, seed);
  data::RoundRobinSampler sampler(ds, 3, seed);
  const auto batch = sampler.epoch(0)[0];
  const auto r = ag::check_graph_gradients<double>(
      [&] { return model.combined_loss(model.forward(batch, ds, false, nullptr, 0.5)); }, inputs);
  return r.max_rel_error;
}

// 4. Finite-difference suite: every PEFT type, both heads, backbone blocks, combined loss.
Outcome criterion_4() {
  const auto tasks = data::synthetic_task_specs();
  std::string detail;
  double worst = 0.0;
  for (auto method : {PeftMethod::serial_adapter, PeftMethod::parallel_adapter, PeftMethod::lora, PeftMethod::prefix}) {
    PeftConfig pc;
    pc.method = method;
    pc.bottleneck_r = 4;
    pc.lora_rank = 2;
    pc.lora_targets = {LoraTarget::query, LoraTarget::key, LoraTarget::value};
    pc.prefix_length = 3;
    pc.prefix_reparam_width = 8;
    auto m = build_multitask_model<double>(tiny_backbone(), TrainMode::peft, pc, tasks, LossWeighting::learnable, 11);
    // PEFT modules, classification and retrieval heads, theta.
    const double e = model_gradcheck(m, [](const auto& p) { return !p.frozen(); }, 21);
    worst = std::max(worst, e);
    detail += to_string(method) + " " + sci(e) + ", ";
  }
  for (auto arch : {Architecture::encoder_only, Architecture::decoder_only}) {
    auto m = build_multitask_model<double>(tiny_backbone(arch), TrainMode::full, std::nullopt, tasks, LossWeighting::learnable, 12);
    const double e = model_gradcheck(
        m, [](const auto& p) { return nn::starts_with(p.name, "backbone.layer") || nn::starts_with(p.name, "backbone.embeddings.norm") ||
                                      nn::starts_with(p.name, "backbone.final_norm"); },
        22);
    worst = std::max(worst, e);
    detail += to_string(arch) + " blocks " + sci(e) + ", ";
  }
  detail += "worst " + sci(worst);
  return {worst < 1e-4, detail};
}

TokenBatch random_tokens(Index batch, Index seq, std::mt19937_64& rng) {
  TokenBatch t{batch, seq, {}};
  std::uniform_int_distribution<Index> byte(0, 255);
  std::uniform_int_distribution<Index> tail(0, seq / 2);
  for (Index b = 0; b < batch; ++b) {
    const Index pad = tail(rng);
    for (Index s = 0; s < seq; ++s) t.ids.push_back(s == 0 ? data::kBos : s >= seq - pad ? data::kPad : byte(rng));
  }
  return t;
}

// 5. Injection leaves outputs bit-identical at init.
Outcome criterion_5() {
  std::mt19937_64 rng(5);
  Index checked = 0, mismatched = 0;
  for (auto arch : {Architecture::encoder_only, Architecture::decoder_only}) {
    for (auto method : {PeftMethod::serial_adapter, PeftMethod::parallel_adapter, PeftMethod::lora}) {
      BackboneConfig cfg;  // desk default: 4 layers, d = 128
      cfg.architecture = arch;
      Backbone<double> model(cfg, 42);
      std::vector<TokenBatch> inputs;
      std::vector<ag::Vec<double>> hidden, pooled;
      for (int i = 0; i < 20; ++i) {
        inputs.push_back(random_tokens(2, 24, rng));
        const auto out = model.encode(inputs.back(), false);
        hidden.push_back(out.hidden.value());
        pooled.push_back(out.pooled.value());
      }
      PeftConfig pc;
      pc.method = method;
      inject_peft(model, pc);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        const auto out = model.encode(inputs[i], false);
        ++checked;
        if (out.hidden.value() != hidden[i] || out.pooled.value() != pooled[i]) ++mismatched;
      }
    }
  }
  return {mismatched == 0, std::to_string(checked) + " encoder/decoder x serial/parallel/lora inputs, " +
                               std::to_string(mismatched) + " differ"};
}

std::vector<ag::Vec<double>> values_of(const nn::ParameterRegistry<double>& reg) {
  std::vector<ag::Vec<double>> out;
  for (const auto& p : reg.params()) out.push_back(p.tensor.value());
  return out;
}

SplitData small_split(const std::vector<data::TaskSpec>& tasks, Index seq) {
  const auto suite = data::generate_synthetic_tasks(small_synthetic(), 6);
  std::vector<data::TaskDataset> tr, va, te;
  for (const auto& t : tasks) {
    for (const auto& s : suite) {
      if (s.spec.name != t.name) continue;
      tr.push_back(data::build_task_dataset(t, s.train, seq));
      va.push_back(data::build_task_dataset(t, s.valid, seq));
      te.push_back(data::build_task_dataset(t, s.test, seq));
    }
  }
  return {data::ConcatenatedDataset(tr), data::ConcatenatedDataset(va), data::ConcatenatedDataset(te)};
}

// 6. 50 PEFT steps leave the backbone bit-identical; full mode moves every layer.
Outcome criterion_6() {
  const auto tasks = data::synthetic_task_specs();
  const Index seq = 32;
  const auto split = small_split(tasks, seq);
  BackboneConfig bb;
  bb.max_seq_len = seq;
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.per_task_batch = 4;
  tc.max_seq_len = seq;
  tc.max_steps = 50;
  tc.max_epochs = 100;
  tc.early_stop_patience = 100;
  std::string detail;
  bool ok = true;
  for (auto method : {PeftMethod::serial_adapter, PeftMethod::parallel_adapter, PeftMethod::lora, PeftMethod::prefix}) {
    PeftConfig pc;
    pc.method = method;
    auto m = build_multitask_model<double>(bb, TrainMode::peft, pc, tasks, LossWeighting::learnable, 42);
    const auto before = values_of(m.registry());
    tc.mode = TrainMode::peft;
    const auto rep = train(m, split, tc);
    const auto after = values_of(m.registry());
    Index frozen_changed = 0, trainable_changed = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& p = m.registry().params()[i];
      if (nn::starts_with(p.name, Backbone<double>::kPrefix)) {
        frozen_changed += before[i] != after[i];
      } else {
        trainable_changed += before[i] != after[i];
      }
    }
    ok = ok && rep.total_updates == 50 && frozen_changed == 0 && trainable_changed > 0;
    detail += to_string(method) + ": " + std::to_string(frozen_changed) + " backbone tensors changed; ";
  }
  auto m = build_multitask_model<double>(bb, TrainMode::full, std::nullopt, tasks, LossWeighting::learnable, 42);
  const auto before = values_of(m.registry());
  tc.mode = TrainMode::full;
  tc.learning_rate = 2e-5;
  train(m, split, tc);
  const auto after = values_of(m.registry());
  Index layers_moved = 0;
  for (Index layer = 0; layer < bb.n_layers; ++layer) {
    const auto prefix = std::string(Backbone<double>::kPrefix) + "layer" + std::to_string(layer) + ".";
    bool moved = false;
    for (std::size_t i = 0; i < before.size(); ++i) {
      moved = moved || (nn::starts_with(m.registry().params()[i].name, prefix) && before[i] != after[i]);
    }
    layers_moved += moved;
  }
  ok = ok && layers_moved == bb.n_layers;
  detail += "full: " + std::to_string(layers_moved) + "/" + std::to_string(bb.n_layers) + " layers changed";
  return {ok, detail};
}

// 7. Round-robin sampler properties over 50 random configurations.
Outcome criterion_7() {
  std::mt19937_64 rng(7);
  int failures = 0;
  std::string first_failure;
  auto fail = [&](int trial, const std::string& what) {
    if (failures++ == 0) first_failure = "trial " + std::to_string(trial) + ": " + what;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const int K = 1 + static_cast<int>(rng() % 4);
    const Index batch = 1 + static_cast<Index>(rng() % 16);
    std::vector<Index> sizes;
    std::vector<data::TaskDataset> tasks;
    for (int t = 0; t < K; ++t) {
      // Sizes at least one batch, so a single sub-batch never spans two traversals.
      sizes.push_back(batch + static_cast<Index>(rng() % 300));
      data::TaskDataset d;
      d.task_id = t;
      d.name = "t" + std::to_string(t);
      d.samples.resize(static_cast<std::size_t>(sizes.back()));
      for (auto& s : d.samples) s.task_id = t;
      tasks.push_back(std::move(d));
    }
    const data::ConcatenatedDataset ds(std::move(tasks));
    const data::RoundRobinSampler sampler(ds, batch, rng());
    const Index max_size = *std::max_element(sizes.begin(), sizes.end());
    const Index expected_steps = (max_size + batch - 1) / batch;
    const auto batches = sampler.epoch(static_cast<Index>(rng() % 4));
    if (static_cast<Index>(batches.size()) != expected_steps) fail(trial, "epoch length");
    std::vector<std::vector<Index>> draws(static_cast<std::size_t>(K));
    for (const auto& b : batches) {
      if (static_cast<int>(b.sub_batches.size()) != K || static_cast<int>(b.task_order.size()) != K) fail(trial, "sub-batch count");
      for (int t = 0; t < K && t < static_cast<int>(b.sub_batches.size()); ++t) {
        const auto& sb = b.sub_batches[static_cast<std::size_t>(t)];
        if (sb.task_id != t || b.task_order[static_cast<std::size_t>(t)] != t) fail(trial, "task order");
        if (static_cast<Index>(sb.indices.size()) != batch) fail(trial, "sub-batch size");
        draws[static_cast<std::size_t>(t)].insert(draws[static_cast<std::size_t>(t)].end(), sb.indices.begin(), sb.indices.end());
      }
    }
    for (int t = 0; t < K; ++t) {
      const Index n = sizes[static_cast<std::size_t>(t)];
      const auto& d = draws[static_cast<std::size_t>(t)];
      // Completed traversals are permutations of the task.
      const Index complete = static_cast<Index>(d.size()) / n;
      for (Index c = 0; c < complete; ++c) {
        std::vector<Index> chunk(d.begin() + c * n, d.begin() + (c + 1) * n);
        std::sort(chunk.begin(), chunk.end());
        for (Index i = 0; i < n; ++i) {
          if (chunk[static_cast<std::size_t>(i)] != i) {
            fail(trial, "traversal is not a permutation");
            break;
          }
        }
      }
      // Traversal count: ceil(max_size / n), up to the final partial traversal.
      const Index expected = (max_size + n - 1) / n;
      const Index touched = (static_cast<Index>(d.size()) + n - 1) / n;
      if (touched < expected || touched > expected + 1) fail(trial, "oversampling count");
      std::map<Index, Index> seen;
      for (Index i : d) ++seen[i];
      for (const auto& [i, c] : seen) {
        if (c < complete || c > touched) fail(trial, "per-sample count");
      }
      if (static_cast<Index>(seen.size()) != n) fail(trial, "sample coverage");
    }
  }
  return {failures == 0, "50 configurations, " + std::to_string(failures) + " violations" +
                             (first_failure.empty() ? "" : " (first: " + first_failure + ")")};
}

double oracle_f1(const std::vector<int>& p, const std::vector<int>& y) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    tp += p[i] == 1 && y[i] == 1;
    fp += p[i] == 1 && y[i] == 0;
    fn += p[i] == 0 && y[i] == 1;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

// Reciprocal rank of the true code counting strictly better codes, plus ties
// with a lower index.
double oracle_mrr(const RowMatD& q, const RowMatD& c) {
  double total = 0;
  for (Index i = 0; i < q.rows(); ++i) {
    const double truth = q.row(i).dot(c.row(i));
    Index rank = 1;
    for (Index j = 0; j < c.rows(); ++j) {
      const double s = q.row(i).dot(c.row(j));
      if (s > truth || (s == truth && j < i)) ++rank;
    }
    total += 1.0 / double(rank);
  }
  return total / double(q.rows());
}

// 8. Metrics against brute force; random-embedding MRR.
Outcome criterion_8() {
  std::mt19937_64 rng(8);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 50)(rng);
    std::vector<int> p(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    for (auto& v : p) v = static_cast<int>(rng() % 2);
    for (auto& v : y) v = static_cast<int>(rng() % 2);
    double agree = 0;
    for (int i = 0; i < n; ++i) agree += p[static_cast<std::size_t>(i)] == y[static_cast<std::size_t>(i)];
    mismatches += f1_score(p, y) != oracle_f1(p, y);
    mismatches += accuracy(p, y) != agree / n;
    // Unit-norm rows so cosine scores equal the raw dot products.
    const Index m = std::uniform_int_distribution<Index>(1, 16)(rng);
    RowMatD q(m, 3), c(m, 3);
    for (Index i = 0; i < q.size(); ++i) q.data()[i] = double(std::uniform_int_distribution<int>(-2, 2)(rng));
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = double(std::uniform_int_distribution<int>(-2, 2)(rng));
    for (Index i = 0; i < m; ++i) {
      if (q.row(i).squaredNorm() == 0) q(i, 0) = 1;
      if (c.row(i).squaredNorm() == 0) c(i, 0) = 1;
    }
    mismatches += compute_mrr(q, c) != oracle_mrr(q, c);
  }
  const Index n = 100;
  double h = 0.0;
  for (Index k = 1; k <= n; ++k) h += 1.0 / double(k);
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 g(1000 + seed);
    std::normal_distribution<double> dist;
    RowMatD q(n, 32), c(n, 32);
    for (Index i = 0; i < q.size(); ++i) q.data()[i] = dist(g);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = dist(g);
    mean += compute_mrr(q, c) / 20.0;
  }
  const bool ok = mismatches == 0 && std::abs(mean - 0.052) <= 0.02 && std::abs(h / double(n) - 0.052) < 0.001;
  return {ok, "3000 oracle comparisons, " + std::to_string(mismatches) + " mismatches; random MRR mean over 20 seeds " +
                  fmt(mean) + " (H_100/100 = " + fmt(h / double(n)) + ")"};
}

// 9. Desk-scale learning: MFT and four SFT runs with serial adapters.
Outcome criterion_9() {
  const auto dir = work_dir("c9");
  const std::map<std::string, double> floor{{"clone", 0.9}, {"defect", 0.9}, {"flaky", 0.75}, {"search", 0.5}};
  auto score_of = [](const RunReport& r, const std::string& task) {
    const auto& s = r.test.at(task);
    return task == "search" ? s.batch_mrr : s.value;
  };
  const double cpu0 = cpu_seconds();
  const auto wall0 = std::chrono::steady_clock::now();
  const auto mft_cfg = load_experiment_config(config_path("synthetic_mft_serial.json").string());
  const auto mft = run_experiment(mft_cfg, (dir / "mft").string());
  const double mft_cpu = cpu_seconds() - cpu0;
  bool ok = true;
  std::string detail = "MFT";
  for (const auto& [task, min] : floor) {
    const double v = score_of(mft.report, task);
    ok = ok && v >= min;
    detail += " " + task + " " + fmt(v, 3);
  }
  std::vector<std::string> sft_reports;
  detail += "; SFT";
  for (const auto& [task, min] : floor) {
    const auto cfg = load_experiment_config(config_path("synthetic_sft_serial_" + task + ".json").string());
    const auto sft = run_experiment(cfg, (dir / ("sft_" + task)).string());
    const double v = score_of(sft.report, task);
    ok = ok && v >= min;
    detail += " " + task + " " + fmt(v, 3);
    sft_reports.push_back(sft.report_path);
  }
  const double cpu = cpu_seconds() - cpu0;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  std::string group;
  for (const auto& p : sft_reports) group += (group.empty() ? "" : ",") + p;
  const int code = run_cli({"compare", group, "--baseline", mft.report_path, "--out", (dir / "compare").string()},
                           dir / "compare.log");
  const bool report_ok = code == 0 && fs::exists(dir / "compare" / "comparison.md") && fs::exists(dir / "compare" / "comparison.json");
  ok = ok && report_ok && cpu <= 15.0 * 60.0;
  detail += "; CPU " + fmt(cpu, 0) + " s (MFT " + fmt(mft_cpu, 0) + " s, wall " + fmt(wall, 0) + " s, budget 900 s); comparison " +
            (report_ok ? "written" : "failed");
  return {ok, detail};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 10. Two seed-42 pipeline runs agree bit for bit.
Outcome criterion_10() {
  const auto dir = work_dir("c10");
  auto cfg = load_experiment_config(config_path("synthetic_mft_serial.json").string());
  cfg.seed = 42;
  cfg.train.seed = 42;
  cfg.synthetic->train_size = 600;
  cfg.synthetic->valid_size = 100;
  cfg.synthetic->test_size = 100;
  cfg.train.max_epochs = 2;
  const auto a = run_experiment(cfg, (dir / "a").string());
  const auto b = run_experiment(cfg, (dir / "b").string());
  auto strip = [](json j) {
    j.erase("wall_clock_seconds");
    return j;
  };
  const bool reports = strip(read_json(a.report_path)) == strip(read_json(b.report_path));
  const bool trajectories = deterministic_view(a.report).at("epochs") == deterministic_view(b.report).at("epochs");
  const bool checkpoints = file_bytes(a.checkpoint_path) == file_bytes(b.checkpoint_path);
  const bool summaries = file_bytes(a.summary_path) == file_bytes(b.summary_path);
  return {reports && trajectories && checkpoints && summaries,
          std::to_string(a.report.epochs.size()) + " epochs, " + std::to_string(a.report.total_updates) +
              " updates; report " + (reports ? "identical" : "differs") + ", trajectories " +
              (trajectories ? "identical" : "differ") + ", checkpoint " + (checkpoints ? "identical" : "differs") +
              ", summary " + (summaries ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},  {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}, {10, criterion_10}};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << fmt(secs, 1) << " s]"
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
