#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtpeft/metrics.hpp"
#include "mtpeft/mtl.hpp"
#include "mtpeft/report.hpp"

namespace mtpeft {

struct TrainConfig {
  TrainMode mode = TrainMode::peft;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled; never applied to theta
  Index per_task_batch = 16;
  Index max_epochs = 10;
  Index early_stop_patience = 2;
  std::uint64_t seed = 42;
  Index max_seq_len = 128;
  double temperature = 0.05;
  Index eval_batch = 64;
  Index max_steps = 0;  // stop after this many updates when > 0

  static double default_learning_rate(TrainMode mode) { return mode == TrainMode::full ? 2e-5 : 1e-4; }
  void validate() const;
};

// Bias-corrected Adam over the registry's trainable parameters. State is keyed
// by parameter name; parameters that received no gradient see a zero gradient.
template <typename Scalar>
class Adam {
 public:
  explicit Adam(const TrainConfig& c) : lr_(c.learning_rate), b1_(c.adam_beta1), b2_(c.adam_beta2), eps_(c.epsilon), wd_(c.weight_decay) {}

  Index steps() const { return t_; }

  void step(nn::ParameterRegistry<Scalar>& reg) {
    for (const auto& p : reg.params()) {
      if (p.frozen() || !p.tensor.has_grad()) continue;
      if (!p.tensor.grad().allFinite()) throw NumericError("adam: non-finite gradient in parameter '" + p.name + "'", t_);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    for (const auto& p : reg.params()) {
      if (p.frozen()) continue;
      auto& st = state_[p.name];
      Tensor<Scalar> param = p.tensor;
      auto& w = param.mutable_value();
      if (st.m.size() != w.size()) {
        st.m = ag::Vec<Scalar>::Zero(w.size());
        st.v = ag::Vec<Scalar>::Zero(w.size());
      }
      if (p.tensor.has_grad()) {
        const auto g = p.tensor.grad();
        st.m = Scalar(b1_) * st.m + Scalar(1.0 - b1_) * g;
        st.v = Scalar(b2_) * st.v + Scalar(1.0 - b2_) * g.cwiseProduct(g);
      } else {
        st.m *= Scalar(b1_);
        st.v *= Scalar(b2_);
      }
      const Scalar step = Scalar(lr_ / c1);
      const Scalar root_c2 = Scalar(std::sqrt(c2));
      w.array() -= step * st.m.array() / (st.v.array().sqrt() / root_c2 + Scalar(eps_));
      if (wd_ > 0.0 && p.name != kThetaName) w *= Scalar(1.0 - lr_ * wd_);
    }
  }

 private:
  struct State {
    ag::Vec<Scalar> m, v;
  };
  double lr_, b1_, b2_, eps_, wd_;
  Index t_ = 0;
  std::map<std::string, State> state_;
};

struct SplitData {
  data::ConcatenatedDataset train;
  data::ConcatenatedDataset valid;
  data::ConcatenatedDataset test;
};

// Pooled rows of `rows` in chunks of `chunk`, eval mode, as a double matrix.
template <typename Scalar>
RowMatD embed_rows(const MultiTaskModel<Scalar>& model, const TaskHead<Scalar>& head,
                   const std::vector<const std::vector<Index>*>& rows, Index chunk) {
  RowMatD out;
  Index filled = 0;
  for (std::size_t start = 0; start < rows.size(); start += static_cast<std::size_t>(chunk)) {
    std::vector<const std::vector<Index>*> part(rows.begin() + start,
                                                rows.begin() + std::min(rows.size(), start + static_cast<std::size_t>(chunk)));
    auto y = head(model.pool(part, false, nullptr), false, nullptr);
    // Classification logits are rank 1 ([n]); treat them as one column.
    const Index n = y.dim(0);
    const Index cols = y.numel() / n;
    const auto m = ag::ConstMatMap<Scalar>(y.value().data(), n, cols);
    if (filled == 0) out.resize(static_cast<Index>(rows.size()), cols);
    out.middleRows(filled, n) = m.template cast<double>();
    filled += n;
  }
  return out;
}

// Metric and mean loss of one task on one split (eval mode, no dropout).
template <typename Scalar>
TaskScore evaluate(const MultiTaskModel<Scalar>& model, const data::TaskDataset& split, const TrainConfig& config) {
  const auto& head = model.head(split.task_id);
  if (split.size() == 0) throw DataError("evaluate: split of task '" + split.name + "' is empty");
  TaskScore score;
  score.metric = data::to_string(head.spec.metric);
  score.samples = split.size();
  std::vector<const std::vector<Index>*> first, second;
  for (const auto& s : split.samples) {
    first.push_back(&s.input_ids);
    second.push_back(&s.second_input_ids);
  }
  if (head.spec.is_retrieval()) {
    const RowMatD q = embed_rows(model, head, first, config.eval_batch);
    const RowMatD c = embed_rows(model, head, second, config.eval_batch);
    const RowMatD qn = normalized_rows(q), cn = normalized_rows(c);
    score.value = compute_mrr(qn, cn);
    // In-batch loss and MRR over consecutive pools of per_task_batch.
    double loss_sum = 0.0, mrr_sum = 0.0;
    Index pools = 0;
    for (const auto& pool : data::sequential_chunks(split.size(), config.per_task_batch)) {
      const Index n = static_cast<Index>(pool.size());
      if (n < 2) continue;
      const Index start = pool.front();
      mrr_sum += compute_mrr(qn.middleRows(start, n), cn.middleRows(start, n));
      const RowMatD sims = qn.middleRows(start, n) * cn.middleRows(start, n).transpose() / config.temperature;
      for (Index i = 0; i < n; ++i) {
        const double m = sims.row(i).maxCoeff();
        loss_sum += (m + std::log((sims.row(i).array() - m).exp().sum()) - sims(i, i)) / double(n);
      }
      ++pools;
    }
    if (pools == 0) throw DataError("evaluate: retrieval split of '" + split.name + "' needs at least 2 samples");
    score.loss = loss_sum / double(pools);
    score.batch_mrr = mrr_sum / double(pools);
    return score;
  }
  const RowMatD logits = embed_rows(model, head, first, config.eval_batch);
  std::vector<int> preds, labels;
  double loss_sum = 0.0;
  for (Index i = 0; i < split.size(); ++i) {
    const double z = logits(i, 0);
    const int y = split.samples[static_cast<std::size_t>(i)].label;
    preds.push_back(z > 0.0 ? 1 : 0);
    labels.push_back(y);
    loss_sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  score.loss = loss_sum / double(split.size());
  score.value = head.spec.metric == data::Metric::accuracy ? accuracy(preds, labels) : f1_score(preds, labels);
  return score;
}

template <typename Scalar>
std::map<std::string, TaskScore> evaluate_all(const MultiTaskModel<Scalar>& model, const data::ConcatenatedDataset& split,
                                              const TrainConfig& config) {
  std::map<std::string, TaskScore> out;
  for (const auto& t : split.tasks()) out[t.name] = evaluate(model, t, config);
  return out;
}

struct TrainHooks {
  std::ostream* log = nullptr;
  // Called after each optimizer step with the cumulative step count.
  std::function<void(Index)> on_step;
};

template <typename Scalar>
CensusRecord census_record(const nn::ParameterRegistry<Scalar>& reg) {
  const auto r = trainable_report(reg);
  return {r.total, r.trainable, r.peft, r.heads, r.trainable_percent(), r.peft_percent()};
}

namespace detail {

template <typename Scalar>
std::vector<ag::Vec<Scalar>> snapshot_trainable(const nn::ParameterRegistry<Scalar>& reg) {
  std::vector<ag::Vec<Scalar>> out;
  for (const auto& p : reg.params()) out.push_back(p.frozen() ? ag::Vec<Scalar>() : p.tensor.value());
  return out;
}

template <typename Scalar>
void restore_trainable(nn::ParameterRegistry<Scalar>& reg, const std::vector<ag::Vec<Scalar>>& snap) {
  for (std::size_t i = 0; i < reg.params().size(); ++i) {
    const auto& p = reg.params()[i];
    if (p.frozen()) continue;
    Tensor<Scalar> t = p.tensor;
    t.mutable_value() = snap[i];
  }
}

void log_line(std::ostream* log, const std::string& line);

}  // namespace detail

// Tracks the best validation loss; stop() turns true once `patience`
// consecutive epochs fail to improve on it.
struct EarlyStopping {
  Index patience = 2;
  double best = std::numeric_limits<double>::infinity();
  Index best_epoch = -1;
  Index bad_epochs = 0;

  // Returns true when `loss` is a new best.
  bool observe(Index epoch, double loss) {
    if (loss < best) {
      best = loss;
      best_epoch = epoch;
      bad_epochs = 0;
      return true;
    }
    ++bad_epochs;
    return false;
  }
  bool stop() const { return bad_epochs >= patience; }
};

inline constexpr double kDivergenceThreshold = 1e6;
inline constexpr double kAlphaCollapseWarning = 0.01;

// Round-robin training with combined loss, per-epoch validation, early
// stopping on the uniform mean validation loss and best-checkpoint restore.
template <typename Scalar>
RunReport train(MultiTaskModel<Scalar>& model, const SplitData& data, const TrainConfig& config,
                const TrainHooks& hooks = {}) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  rep.mode = to_string(config.mode);
  rep.loss_weighting = to_string(model.weighting());
  rep.precision = sizeof(Scalar) == 4 ? "float32" : "float64";
  rep.seed = config.seed;
  rep.tasks = model.tasks();
  rep.per_task_batch = config.per_task_batch;
  rep.global_batch_size = config.per_task_batch * static_cast<Index>(model.num_tasks());
  rep.max_seq_len = config.max_seq_len;
  rep.census = census_record(model.registry());

  data::RoundRobinSampler sampler(data.train, config.per_task_batch, derive_seed(config.seed, 0x5A3B1E));
  rep.steps_per_epoch = sampler.steps_per_epoch();
  CounterRng rng(derive_seed(config.seed, 0xD409));
  Adam<Scalar> adam(config);
  auto& reg = model.registry();
  reg.zero_grad();
  const auto names = model.task_names();

  EarlyStopping stopper{config.early_stop_patience};
  auto best_params = detail::snapshot_trainable(reg);
  bool step_cap = false;
  for (Index epoch = 0; epoch < config.max_epochs && !step_cap; ++epoch) {
    std::vector<double> loss_sum(names.size(), 0.0);
    Index batches = 0;
    for (const auto& batch : sampler.epoch(epoch)) {
      auto fwd = model.forward(batch, data.train, true, &rng, config.temperature);
      auto loss = model.combined_loss(fwd);
      const double v = static_cast<double>(loss.item());
      if (!std::isfinite(v) || v > kDivergenceThreshold) {
        throw NumericError("train: loss diverged (" + std::to_string(v) + ") at step " + std::to_string(adam.steps()),
                           adam.steps());
      }
      loss.backward();
      adam.step(reg);
      reg.zero_grad();
      for (std::size_t k = 0; k < names.size(); ++k) loss_sum[k] += static_cast<double>(fwd.losses[k].item());
      ++batches;
      if (hooks.on_step) hooks.on_step(adam.steps());
      if (config.max_steps > 0 && adam.steps() >= config.max_steps) {
        step_cap = true;
        break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.updates = adam.steps();
    for (std::size_t k = 0; k < names.size(); ++k) rec.train_loss[names[k]] = loss_sum[k] / double(std::max<Index>(batches, 1));
    rec.valid = evaluate_all(model, data.valid, config);
    for (const auto& [name, s] : rec.valid) rec.valid_loss += s.loss;
    rec.valid_loss /= double(rec.valid.size());
    rec.alpha = model.loss_weights().alpha();
    rec.min_alpha = *std::min_element(rec.alpha.begin(), rec.alpha.end());
    if (rec.min_alpha < kAlphaCollapseWarning) {
      warn("loss weight collapse: min alpha " + std::to_string(rec.min_alpha) + " after epoch " + std::to_string(rec.epoch));
    }
    std::string line = "epoch " + std::to_string(rec.epoch) + " updates " + std::to_string(rec.updates) + " valid_loss " +
                       std::to_string(rec.valid_loss);
    for (const auto& [name, s] : rec.valid) line += " " + name + "=" + std::to_string(s.value);
    detail::log_line(hooks.log, line);
    rep.epochs.push_back(rec);
    if (stopper.observe(rec.epoch, rec.valid_loss)) {
      rep.best_epoch = rec.epoch;
      rep.best_valid_loss = rec.valid_loss;
      rep.updates_to_best = rec.updates;
      best_params = detail::snapshot_trainable(reg);
    } else if (stopper.stop()) {
      rep.early_stopped = true;
      break;
    }
  }
  rep.total_updates = adam.steps();
  detail::restore_trainable(reg, best_params);
  rep.tokens_to_best = token_cost(rep);
  rep.test = evaluate_all(model, data.test, config);
  rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace mtpeft
