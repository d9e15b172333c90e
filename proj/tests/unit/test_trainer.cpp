#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mtpeft/autograd/gradcheck.hpp"
#include "mtpeft/checkpoint.hpp"
#include "mtpeft/data/synthetic.hpp"
#include "mtpeft/trainer.hpp"

using namespace mtpeft;
using ag::Vec;
using T = Tensor<double>;

namespace {

BackboneConfig tiny() {
  BackboneConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.vocab_size = data::kVocabSize;
  c.max_seq_len = 24;
  c.pad_id = data::kPad;
  c.dropout = 0.1;
  return c;
}

constexpr Index kLen = 24;

data::SyntheticSpec small_spec() {
  data::SyntheticSpec s;
  s.train_size = 64;
  s.valid_size = 32;
  s.test_size = 32;
  s.code_length = 10;
  s.keywords_per_code = 3;
  s.query_keywords = 2;
  return s;
}

// Defect (id 0) and search (id 1) from the synthetic suite.
SplitData two_task_data(std::vector<data::TaskSpec>& specs) {
  auto suite = data::generate_synthetic_tasks(small_spec(), 7);
  std::vector<data::TaskDataset> tr, va, te;
  specs.clear();
  for (int src : {1, 3}) {
    auto s = suite[static_cast<std::size_t>(src)].spec;
    s.task_id = static_cast<int>(specs.size());
    specs.push_back(s);
    tr.push_back(data::build_task_dataset(s, suite[static_cast<std::size_t>(src)].train, kLen));
    va.push_back(data::build_task_dataset(s, suite[static_cast<std::size_t>(src)].valid, kLen));
    te.push_back(data::build_task_dataset(s, suite[static_cast<std::size_t>(src)].test, kLen));
  }
  return {data::ConcatenatedDataset(tr), data::ConcatenatedDataset(va), data::ConcatenatedDataset(te)};
}

TrainConfig quick_config(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  c.learning_rate = 1e-2;
  c.per_task_batch = 8;
  c.max_epochs = 2;
  c.max_seq_len = kLen;
  c.eval_batch = 16;
  return c;
}

template <typename Scalar>
std::vector<Vec<Scalar>> all_values(const nn::ParameterRegistry<Scalar>& reg) {
  std::vector<Vec<Scalar>> out;
  for (const auto& p : reg.params()) out.push_back(p.tensor.value());
  return out;
}

// Sets grad(p) = g through a linear loss sum(p * g).
void set_grad(nn::ParameterRegistry<double>& reg, const std::vector<std::pair<std::string, Vec<double>>>& grads) {
  reg.zero_grad();
  T total = T::scalar(0.0);
  for (const auto& [name, g] : grads) {
    const auto& p = reg.at(name);
    total = ag::add(total, ag::sum(ag::mul(p.tensor, T(p.tensor.shape(), g))));
  }
  total.backward();
}

// Brute-force references.
double oracle_f1(const std::vector<int>& p, const std::vector<int>& y) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 1 && y[i] == 1) tp += 1;
    if (p[i] == 1 && y[i] == 0) fp += 1;
    if (p[i] == 0 && y[i] == 1) fn += 1;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

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

}  // namespace

TEST_CASE("adam first step moves by lr against the gradient sign") {
  nn::ParameterRegistry<double> reg;
  reg.add("w", T({3}, Vec<double>::Zero(3)));
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  Adam<double> adam(cfg);
  Vec<double> g(3);
  g << 2.5, -0.003, 40.0;
  set_grad(reg, {{"w", g}});
  adam.step(reg);
  const auto& w = reg.at("w").tensor.value();
  for (Index i = 0; i < 3; ++i) CHECK(w[i] == doctest::Approx(-0.01 * (g[i] > 0 ? 1 : -1)).epsilon(1e-5));
}

TEST_CASE("adam leaves a parameter with zero gradient unchanged") {
  nn::ParameterRegistry<double> reg;
  Vec<double> init(2);
  init << 1.5, -2.0;
  reg.add("w", T({2}, init));
  TrainConfig cfg;
  Adam<double> adam(cfg);
  for (int i = 0; i < 5; ++i) {
    set_grad(reg, {{"w", Vec<double>::Zero(2)}});
    adam.step(reg);
  }
  CHECK(reg.at("w").tensor.value() == init);
}

TEST_CASE("adam decreases a convex quadratic monotonically after warm-in") {
  nn::ParameterRegistry<double> reg;
  Vec<double> init(4);
  init << 3.0, -2.0, 1.0, 0.5;
  reg.add("w", T({4}, init));
  Vec<double> curvature(4);
  curvature << 1.0, 4.0, 0.5, 2.0;
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  Adam<double> adam(cfg);
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    const auto& w = reg.at("w").tensor.value();
    losses.push_back(0.5 * (curvature.array() * w.array().square()).sum());
    set_grad(reg, {{"w", Vec<double>(curvature.array() * w.array())}});
    adam.step(reg);
  }
  for (std::size_t i = 10; i < 60; ++i) CHECK(losses[i + 1] < losses[i]);
  CHECK(losses.back() < 0.05 * losses.front());
}

TEST_CASE("adam reports a non-finite gradient by parameter name") {
  nn::ParameterRegistry<double> reg;
  reg.add("layer.weight", T({2}, Vec<double>::Zero(2)));
  Adam<double> adam(TrainConfig{});
  Vec<double> g(2);
  g << 1.0, std::nan("");
  set_grad(reg, {{"layer.weight", g}});
  try {
    adam.step(reg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer.weight") != std::string::npos);
  }
}

TEST_CASE("adam skips frozen parameters and never decays theta") {
  nn::ParameterRegistry<double> reg;
  reg.add("x", T({2}, Vec<double>::Constant(2, 1.0)));
  reg.add(std::string(kThetaName), T({2}, Vec<double>::Constant(2, 1.0)));
  reg.add("frozen", T({2}, Vec<double>::Constant(2, 1.0)));
  reg.set_frozen([](const std::string& n) { return n == "frozen"; }, true);
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.5;
  Adam<double> adam(cfg);
  set_grad(reg, {{"x", Vec<double>::Zero(2)}, {std::string(kThetaName), Vec<double>::Zero(2)}});
  adam.step(reg);
  CHECK(reg.at("x").tensor.value()[0] == doctest::Approx(0.95));
  CHECK(reg.at(std::string(kThetaName)).tensor.value()[0] == 1.0);
  CHECK(reg.at("frozen").tensor.value()[0] == 1.0);
}

TEST_CASE("early stopping with patience 1 on worsening loss stops after epoch 2") {
  EarlyStopping s{1};
  CHECK(s.observe(1, 1.0));
  CHECK_FALSE(s.stop());
  CHECK_FALSE(s.observe(2, 1.1));
  CHECK(s.stop());
  CHECK(s.best_epoch == 1);

  EarlyStopping p2{2};
  p2.observe(1, 1.0);
  p2.observe(2, 1.5);
  CHECK_FALSE(p2.stop());
  CHECK(p2.observe(3, 0.5));
  CHECK(p2.bad_epochs == 0);
}

TEST_CASE("peft training leaves the backbone bit-identical; full training changes every layer") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  {
    auto model = build_multitask_model<double>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 42);
    const auto before = all_values(model.registry());
    auto cfg = quick_config(TrainMode::peft);
    cfg.max_steps = 50;
    cfg.max_epochs = 100;
    cfg.early_stop_patience = 100;
    const auto rep = train(model, data, cfg);
    CHECK(rep.total_updates == 50);
    const auto after = all_values(model.registry());
    Index changed_trainable = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      const auto& p = model.registry().params()[i];
      if (p.name.rfind(Backbone<double>::kPrefix, 0) == 0) {
        CHECK_MESSAGE(before[i] == after[i], p.name);
      } else if (before[i] != after[i]) {
        ++changed_trainable;
      }
    }
    CHECK(changed_trainable > 0);
  }
  {
    auto model = build_multitask_model<double>(tiny(), TrainMode::full, std::nullopt, specs, LossWeighting::learnable, 42);
    const auto before = all_values(model.registry());
    auto cfg = quick_config(TrainMode::full);
    cfg.max_steps = 50;
    cfg.max_epochs = 100;
    cfg.early_stop_patience = 100;
    train(model, data, cfg);
    const auto after = all_values(model.registry());
    for (int layer = 0; layer < tiny().n_layers; ++layer) {
      const std::string prefix = std::string(Backbone<double>::kPrefix) + "layer" + std::to_string(layer) + ".";
      bool any = false;
      for (std::size_t i = 0; i < before.size(); ++i) {
        if (model.registry().params()[i].name.rfind(prefix, 0) == 0 && before[i] != after[i]) any = true;
      }
      CHECK_MESSAGE(any, prefix);
    }
  }
}

TEST_CASE("same seed reproduces the run report") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  auto run = [&] {
    auto model = build_multitask_model<float>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 42);
    return deterministic_view(train(model, data, quick_config(TrainMode::peft)));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a == b);
  CHECK(a.at("epochs").size() == 2);
}

TEST_CASE("divergence raises a numeric error carrying the step") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  auto model = build_multitask_model<double>(tiny(), TrainMode::full, std::nullopt, specs, LossWeighting::learnable, 42);
  auto cfg = quick_config(TrainMode::full);
  cfg.learning_rate = 1e5;
  cfg.max_epochs = 20;
  cfg.early_stop_patience = 20;
  try {
    train(model, data, cfg);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(e.step() >= 1);
  }
}

TEST_CASE("evaluate aligns every logit with its sample") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  auto model = build_multitask_model<double>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 42);
  const auto& split = data.valid.task(0);
  TrainConfig cfg;
  cfg.eval_batch = 5;  // chunks that do not divide the split
  const auto& head = model.head(0);
  std::vector<const std::vector<Index>*> rows;
  for (const auto& s : split.samples) rows.push_back(&s.input_ids);
  const RowMatD chunked = embed_rows(model, head, rows, cfg.eval_batch);
  REQUIRE(chunked.rows() == split.size());
  REQUIRE(chunked.cols() == 1);
  for (Index i = 0; i < split.size(); ++i) {
    const auto one = head(model.pool({rows[static_cast<std::size_t>(i)]}, false, nullptr), false, nullptr);
    CHECK(chunked(i, 0) == doctest::Approx(one.value()[0]).epsilon(1e-12));
  }
  CHECK_THROWS_AS(evaluate(model, data::TaskDataset{0, "defect", {}}, cfg), DataError);
}

TEST_CASE("metric examples") {
  // TP=2, FP=1, FN=1.
  const std::vector<int> p{1, 1, 1, 0, 0}, y{1, 1, 0, 1, 0};
  CHECK(f1_score(p, y) == doctest::Approx(2.0 / 3.0));
  CHECK(accuracy(y, y) == 1.0);
  CHECK(f1_score(std::vector<int>{0, 0}, std::vector<int>{0, 0}) == 0.0);

  // True codes at ranks 1, 2 and 4.
  RowMatD q(3, 1), c(4, 1);
  q << 1, 1, 1;
  c << 4, 3, 2, 1;
  const std::vector<Index> truth{0, 1, 3};
  CHECK(compute_mrr(q, c, truth) == doctest::Approx((1 + 0.5 + 0.25) / 3).epsilon(1e-12));

  RowMatD one = RowMatD::Constant(1, 3, 0.7);
  CHECK(compute_mrr(one, one) == 1.0);
  CHECK(compute_mrr(RowMatD::Identity(5, 5), RowMatD::Identity(5, 5)) == 1.0);
  CHECK(random_mrr_expectation(100) == doctest::Approx(0.0519).epsilon(0.01));
}

TEST_CASE("metrics match brute-force oracles on 1000 random cases") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 40)(rng);
    std::vector<int> p(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      p[static_cast<std::size_t>(i)] = int(rng() % 2);
      y[static_cast<std::size_t>(i)] = int(rng() % 2);
    }
    CHECK(f1_score(p, y) == oracle_f1(p, y));
    double agree = 0;
    for (int i = 0; i < n; ++i) agree += p[static_cast<std::size_t>(i)] == y[static_cast<std::size_t>(i)];
    CHECK(accuracy(p, y) == agree / n);

    // Integer-valued embeddings force ties.
    const Index m = std::uniform_int_distribution<Index>(1, 12)(rng), d = 3;
    RowMatD q(m, d), c(m, d);
    for (Index i = 0; i < m * d; ++i) {
      q.data()[i] = double(std::uniform_int_distribution<int>(-2, 2)(rng));
      c.data()[i] = double(std::uniform_int_distribution<int>(-2, 2)(rng));
    }
    CHECK(compute_mrr(q, c) == oracle_mrr(q, c));
  }
}

TEST_CASE("random embeddings give MRR near H_n / n over 20 seeds") {
  const Index n = 100;
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist;
    RowMatD q(n, 16), c(n, 16);
    for (Index i = 0; i < q.size(); ++i) q.data()[i] = dist(rng);
    for (Index i = 0; i < c.size(); ++i) c.data()[i] = dist(rng);
    mean += compute_mrr(q, c) / 20.0;
  }
  double h = 0.0;
  for (Index k = 1; k <= n; ++k) h += 1.0 / double(k);
  CHECK(random_mrr_expectation(n) == doctest::Approx(h / double(n)).epsilon(1e-14));
  CHECK(std::abs(mean - h / double(n)) < 0.02);
}

TEST_CASE("token cost") {
  CHECK(token_cost(10, 8, 512) == 40960);
  CHECK(token_cost(0, 8, 512) == 0);
  RunReport r;
  r.updates_to_best = 10;
  r.global_batch_size = 8;
  r.max_seq_len = 512;
  CHECK(token_cost(r) == 40960);
}

TEST_CASE("run report json round trip") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  auto model = build_multitask_model<float>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::uniform, 42);
  auto cfg = quick_config(TrainMode::peft);
  cfg.max_epochs = 1;
  auto rep = train(model, data, cfg);
  rep.name = "rt";
  const auto back = run_report_from_json(to_json(rep));
  CHECK(to_json(back) == to_json(rep));
  CHECK(rep.tokens_to_best == rep.updates_to_best * 2 * cfg.per_task_batch * kLen);
  CHECK_THROWS_AS(run_report_from_json(nlohmann::json{{"name", "x"}}), ConfigError);
}

TEST_CASE("checkpoint round trip reproduces metrics bit-identically") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  auto model = build_multitask_model<float>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 42);
  auto cfg = quick_config(TrainMode::peft);
  cfg.max_epochs = 1;
  train(model, data, cfg);
  const auto path = (std::filesystem::temp_directory_path() / "mtpeft_test_ckpt.bin").string();
  save_checkpoint(path, model.registry(), {{"note", "unit"}});

  auto fresh = build_multitask_model<float>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 99);
  const auto header = load_checkpoint(path, fresh.registry());
  CHECK(header.meta.at("note") == "unit");
  CHECK(header.dtype == "float32");
  CHECK(all_values(fresh.registry()) == all_values(model.registry()));
  for (std::size_t i = 0; i < fresh.registry().size(); ++i) {
    CHECK(fresh.registry().params()[i].frozen() == model.registry().params()[i].frozen());
  }
  for (std::size_t t = 0; t < specs.size(); ++t) {
    const auto a = evaluate(model, data.test.task(t), cfg);
    const auto b = evaluate(fresh, data.test.task(t), cfg);
    CHECK(a.value == b.value);
    CHECK(a.loss == b.loss);
  }

  // Float32 archive into a float64 model converts exactly.
  auto wide = build_multitask_model<double>(tiny(), TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 5);
  load_checkpoint(path, wide.registry());
  CHECK(wide.registry().params()[0].tensor.value()[0] == double(model.registry().params()[0].tensor.value()[0]));

  // A differently shaped model is rejected.
  auto other = tiny();
  other.d_ffn = 48;
  auto mismatched = build_multitask_model<float>(other, TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 5);
  CHECK_THROWS(load_checkpoint(path, mismatched.registry()));
  std::filesystem::remove(path);
  CHECK_THROWS(read_checkpoint_header(path));
}

TEST_CASE("end-to-end combined loss gradient matches finite differences") {
  std::vector<data::TaskSpec> specs;
  auto data = two_task_data(specs);
  auto cfg = tiny();
  cfg.dropout = 0.0;
  auto model = build_multitask_model<double>(cfg, TrainMode::peft, PeftConfig{}, specs, LossWeighting::learnable, 42);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (const auto& p : model.registry().params()) {
    if (p.frozen()) continue;
    T t = p.tensor;
    for (Index i = 0; i < t.numel(); ++i) t.mutable_value()[i] += noise(rng);
  }
  data::RoundRobinSampler sampler(data.train, 4, 3);
  const auto batch = sampler.epoch(0).front();
  auto loss_fn = [&] { return model.combined_loss(model.forward(batch, data.train, false, nullptr, 0.05)); };
  model.registry().zero_grad();
  loss_fn().backward();
  std::uniform_real_distribution<double> pick(0.0, 1.0);
  double worst = 0.0;
  const double h = 1e-5;
  for (const auto& p : model.registry().params()) {
    if (p.frozen()) continue;
    const Vec<double> g = p.tensor.grad();
    T t = p.tensor;
    for (int k = 0; k < 3; ++k) {
      const auto i = static_cast<Index>(pick(rng) * double(t.numel()));
      const double orig = t.value()[i];
      t.mutable_value()[i] = orig + h;
      const double up = loss_fn().item();
      t.mutable_value()[i] = orig - h;
      const double down = loss_fn().item();
      t.mutable_value()[i] = orig;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
    }
  }
  CHECK(worst < 1e-3);
}
