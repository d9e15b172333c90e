#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtpeft/backbone.hpp"
#include "mtpeft/data/dataset.hpp"
#include "mtpeft/inject.hpp"

namespace mtpeft {

enum class TrainMode { full, peft };
enum class LossWeighting { learnable, uniform };

std::string to_string(TrainMode m);
std::string to_string(LossWeighting w);
TrainMode parse_train_mode(const std::string& s);
LossWeighting parse_loss_weighting(const std::string& s);

inline constexpr const char* kHeadPrefix = "heads.";
inline constexpr const char* kThetaName = "loss_weights.theta";

// d -> d/2 -> 1 with relu and dropout between the two layers.
template <typename Scalar>
struct ClassificationHead {
  nn::Linear<Scalar> hidden;
  nn::Linear<Scalar> output;
  double dropout = 0.1;

  static ClassificationHead make(nn::ParameterRegistry<Scalar>& reg, const std::string& name, Index d, double stddev,
                                 std::mt19937_64& engine, double dropout = 0.1) {
    if (d < 2) throw ValueError("classification head: d_model must be at least 2");
    return {nn::Linear<Scalar>::make(reg, name + ".hidden", d, d / 2, stddev, engine),
            nn::Linear<Scalar>::make(reg, name + ".output", d / 2, 1, stddev, engine), dropout};
  }

  // One logit per row, shape [n].
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool train, CounterRng* rng) const {
    auto h = ag::relu(hidden(x));
    if (train && dropout > 0.0) {
      if (rng == nullptr) throw ValueError("classification head: training with dropout needs an rng");
      h = ag::dropout(h, dropout, true, rng->next_stream());
    }
    auto logits = output(h);
    return ag::reshape(logits, {logits.dim(0)});
  }
};

template <typename Scalar>
struct RetrievalHead {
  static constexpr Index kWidth = 512;
  nn::Linear<Scalar> projection;

  static RetrievalHead make(nn::ParameterRegistry<Scalar>& reg, const std::string& name, Index d, double stddev,
                            std::mt19937_64& engine) {
    return {nn::Linear<Scalar>::make(reg, name + ".projection", d, kWidth, stddev, engine)};
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return projection(x); }
};

// theta in R^K; alpha = softmax(theta).
template <typename Scalar>
struct LossWeights {
  Tensor<Scalar> theta;

  Index size() const { return theta.numel(); }
  std::vector<double> alpha() const {
    const auto& t = theta.value();
    const Scalar m = t.maxCoeff();
    ag::Vec<Scalar> e = (t.array() - m).exp().matrix();
    e /= e.sum();
    return std::vector<double>(e.data(), e.data() + e.size());
  }
};

// Mean binary cross-entropy of logits [n] against 0/1 labels.
template <typename Scalar>
Tensor<Scalar> classification_loss(const Tensor<Scalar>& logits, std::span<const int> labels) {
  std::vector<Scalar> targets;
  targets.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ValueError("classification_loss: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " is not 0 or 1");
    }
    targets.push_back(static_cast<Scalar>(labels[i]));
  }
  return ag::bce_with_logits(logits, std::span<const Scalar>(targets));
}

// In-batch InfoNCE from queries to codes over cosine similarity / temperature.
template <typename Scalar>
Tensor<Scalar> retrieval_loss(const Tensor<Scalar>& query_emb, const Tensor<Scalar>& code_emb, double temperature) {
  if (query_emb.rank() != 2 || query_emb.shape() != code_emb.shape()) {
    throw ShapeError("retrieval_loss", query_emb.shape(), code_emb.shape(), "query and code embeddings must match");
  }
  const Index n = query_emb.dim(0);
  if (n < 2) throw ValueError("retrieval_loss: need at least 2 pairs for in-batch negatives, got " + std::to_string(n));
  if (!(temperature > 0.0)) throw ValueError("retrieval_loss: temperature must be positive");
  auto sims = ag::matmul_nt(ag::normalize_rows(query_emb), ag::normalize_rows(code_emb));
  std::vector<Index> diag(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = i;
  return ag::cross_entropy(ag::scale(sims, static_cast<Scalar>(1.0 / temperature)), std::span<const Index>(diag));
}

// sum_k softmax(theta)_k * L_k.
template <typename Scalar>
Tensor<Scalar> combine_losses(const std::vector<Tensor<Scalar>>& losses, const LossWeights<Scalar>& weights,
                              const std::vector<std::string>& task_names = {}) {
  if (losses.empty()) throw ValueError("combine_losses: no task losses");
  if (static_cast<Index>(losses.size()) != weights.size()) {
    throw ShapeError("combine_losses", Shape{static_cast<Index>(losses.size())}, weights.theta.shape(),
                     "one loss per task weight");
  }
  for (std::size_t k = 0; k < losses.size(); ++k) {
    const double v = static_cast<double>(losses[k].item());
    if (!std::isfinite(v)) {
      const std::string who = k < task_names.size() ? "'" + task_names[k] + "'" : std::to_string(k);
      throw NumericError("combine_losses: loss of task " + who + " is not finite");
    }
  }
  auto alpha = ag::softmax(weights.theta, 0);
  return ag::sum(ag::mul(alpha, ag::stack_scalars(losses)));
}

template <typename Scalar>
struct TaskHead {
  data::TaskSpec spec;
  std::optional<ClassificationHead<Scalar>> classification;
  std::optional<RetrievalHead<Scalar>> retrieval;

  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool train, CounterRng* rng) const {
    return classification ? (*classification)(x, train, rng) : (*retrieval)(x);
  }
};

template <typename Scalar>
struct TaskForward {
  std::vector<Tensor<Scalar>> losses;   // one per task, in task order
  std::vector<Tensor<Scalar>> outputs;  // head outputs per task
};

// Shared backbone, one head per task, learnable loss weights. Heads and theta
// live in the backbone's registry so one census covers the whole model.
template <typename Scalar>
class MultiTaskModel {
 public:
  MultiTaskModel(Backbone<Scalar> backbone, std::vector<data::TaskSpec> tasks, LossWeighting weighting,
                 double head_dropout = 0.1)
      : backbone_(std::move(backbone)), weighting_(weighting) {
    if (tasks.empty()) throw ValueError("build_multitask_model: no tasks");
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (tasks[i].task_id == tasks[j].task_id) {
          throw ValueError("build_multitask_model: duplicate task_id " + std::to_string(tasks[i].task_id));
        }
      }
    }
    auto& reg = backbone_.registry();
    auto& engine = backbone_.init_engine();
    const Index d = backbone_.config().d_model;
    const double s = backbone_.config().init_std;
    for (auto& t : tasks) {
      TaskHead<Scalar> h;
      const std::string name = std::string(kHeadPrefix) + t.name;
      if (t.kind == data::TaskKind::retrieval) {
        h.retrieval = RetrievalHead<Scalar>::make(reg, name, d, s, engine);
      } else {
        h.classification = ClassificationHead<Scalar>::make(reg, name, d, s, engine, head_dropout);
      }
      h.spec = std::move(t);
      heads_.push_back(std::move(h));
    }
    weights_.theta = reg.add(kThetaName, Tensor<Scalar>::zeros({static_cast<Index>(heads_.size())}));
    if (weighting_ == LossWeighting::uniform) reg.set_frozen([](const std::string& n) { return n == kThetaName; }, true);
  }

  Backbone<Scalar>& backbone() { return backbone_; }
  const Backbone<Scalar>& backbone() const { return backbone_; }
  nn::ParameterRegistry<Scalar>& registry() { return backbone_.registry(); }
  const nn::ParameterRegistry<Scalar>& registry() const { return backbone_.registry(); }
  const std::vector<TaskHead<Scalar>>& heads() const { return heads_; }
  const LossWeights<Scalar>& loss_weights() const { return weights_; }
  LossWeighting weighting() const { return weighting_; }
  std::size_t num_tasks() const { return heads_.size(); }

  std::vector<data::TaskSpec> tasks() const {
    std::vector<data::TaskSpec> out;
    for (const auto& h : heads_) out.push_back(h.spec);
    return out;
  }

  std::vector<std::string> task_names() const {
    std::vector<std::string> out;
    for (const auto& h : heads_) out.push_back(h.spec.name);
    return out;
  }

  std::size_t head_position(int task_id) const {
    for (std::size_t i = 0; i < heads_.size(); ++i) {
      if (heads_[i].spec.task_id == task_id) return i;
    }
    throw ValueError("unknown task_id " + std::to_string(task_id));
  }

  const TaskHead<Scalar>& head(int task_id) const { return heads_[head_position(task_id)]; }

  // Slices pooled rows by task order and applies each task's head to its rows only.
  std::vector<Tensor<Scalar>> route(const Tensor<Scalar>& pooled, const std::vector<int>& task_order,
                                    const std::vector<Index>& sub_batch_sizes, bool train = false,
                                    CounterRng* rng = nullptr) const {
    if (task_order.size() != sub_batch_sizes.size()) {
      throw ShapeError("route", Shape{static_cast<Index>(task_order.size())},
                       Shape{static_cast<Index>(sub_batch_sizes.size())}, "one size per task");
    }
    Index total = 0;
    for (Index n : sub_batch_sizes) {
      if (n < 1) throw ValueError("route: every task needs at least one row");
      total += n;
    }
    if (pooled.rank() != 2 || pooled.dim(0) != total) {
      throw ShapeError("route", pooled.shape(), Shape{total}, "sub-batch sizes must sum to the batch");
    }
    std::vector<Tensor<Scalar>> out;
    Index start = 0;
    for (std::size_t k = 0; k < task_order.size(); ++k) {
      const auto& h = head(task_order[k]);
      const Index n = sub_batch_sizes[k];
      out.push_back(h(ag::slice(pooled, 0, start, start + n), train, rng));
      start += n;
    }
    return out;
  }

  // Pooled rows for a list of samples; rows are trimmed to the longest
  // non-pad prefix in the group since trailing padding never reaches the pooled row.
  Tensor<Scalar> pool(const std::vector<const std::vector<Index>*>& rows, bool train, CounterRng* rng) const {
    Index width = 1;
    for (const auto* r : rows) width = std::max(width, data::content_length(*r));
    TokenBatch tb{static_cast<Index>(rows.size()), width, {}};
    tb.ids.reserve(rows.size() * static_cast<std::size_t>(width));
    for (const auto* r : rows) tb.ids.insert(tb.ids.end(), r->begin(), r->begin() + width);
    return backbone_.encode(tb, train, rng).pooled;
  }

  // Per-task losses of one global batch. Retrieval tasks contribute their
  // query rows followed by their code rows.
  TaskForward<Scalar> forward(const data::MultiTaskBatch& batch, const data::ConcatenatedDataset& data, bool train,
                              CounterRng* rng, double temperature) const {
    std::vector<Tensor<Scalar>> pooled_parts;
    std::vector<Index> sizes;
    for (std::size_t k = 0; k < batch.task_order.size(); ++k) {
      const auto& sub = batch.sub_batches[k];
      const auto& ds = data.task(task_index(data, sub.task_id));
      std::vector<const std::vector<Index>*> first, second;
      for (Index i : sub.indices) {
        const auto& s = ds.samples.at(static_cast<std::size_t>(i));
        first.push_back(&s.input_ids);
        second.push_back(&s.second_input_ids);
      }
      pooled_parts.push_back(pool(first, train, rng));
      Index rows = static_cast<Index>(first.size());
      if (head(sub.task_id).spec.is_retrieval()) {
        pooled_parts.push_back(pool(second, train, rng));
        rows *= 2;
      }
      sizes.push_back(rows);
    }
    auto pooled = pooled_parts.size() == 1 ? pooled_parts[0] : ag::concat(pooled_parts, 0);
    TaskForward<Scalar> out;
    out.outputs = route(pooled, batch.task_order, sizes, train, rng);
    out.losses.resize(heads_.size());
    for (std::size_t k = 0; k < batch.task_order.size(); ++k) {
      const auto& sub = batch.sub_batches[k];
      const auto pos = head_position(sub.task_id);
      const auto& y = out.outputs[k];
      if (heads_[pos].spec.is_retrieval()) {
        const Index n = y.dim(0) / 2;
        out.losses[pos] = retrieval_loss(ag::slice(y, 0, 0, n), ag::slice(y, 0, n, 2 * n), temperature);
      } else {
        const auto& ds = data.task(task_index(data, sub.task_id));
        std::vector<int> labels;
        for (Index i : sub.indices) labels.push_back(ds.samples.at(static_cast<std::size_t>(i)).label);
        out.losses[pos] = classification_loss(y, std::span<const int>(labels));
      }
    }
    for (std::size_t k = 0; k < heads_.size(); ++k) {
      if (!out.losses[k].defined()) throw ValueError("forward: batch has no sub-batch for task '" + heads_[k].spec.name + "'");
    }
    return out;
  }

  Tensor<Scalar> combined_loss(const TaskForward<Scalar>& f) const { return combine_losses(f.losses, weights_, task_names()); }

 private:
  static std::size_t task_index(const data::ConcatenatedDataset& data, int task_id) {
    for (std::size_t t = 0; t < data.num_tasks(); ++t) {
      if (data.task(t).task_id == task_id) return t;
    }
    throw ValueError("no dataset for task_id " + std::to_string(task_id));
  }

  Backbone<Scalar> backbone_;
  std::vector<TaskHead<Scalar>> heads_;
  LossWeights<Scalar> weights_;
  LossWeighting weighting_;
};

// Builds the backbone, injects PEFT modules in peft mode, then attaches heads
// and theta (always trainable unless weighting is uniform).
template <typename Scalar>
MultiTaskModel<Scalar> build_multitask_model(const BackboneConfig& backbone, TrainMode mode,
                                             const std::optional<PeftConfig>& peft, std::vector<data::TaskSpec> tasks,
                                             LossWeighting weighting, std::uint64_t seed, double head_dropout = 0.1) {
  Backbone<Scalar> bb(backbone, seed);
  if (mode == TrainMode::peft) {
    if (!peft) throw ConfigError("peft", "peft mode needs a PEFT configuration");
    inject_peft(bb, *peft);
  }
  return MultiTaskModel<Scalar>(std::move(bb), std::move(tasks), weighting, head_dropout);
}

// Both Trainable% variants: all trainable parameters over the whole model, and
// PEFT modules alone over the whole model.
struct TrainableReport {
  Index total = 0;
  Index trainable = 0;
  Index peft = 0;
  Index heads = 0;

  double trainable_percent() const { return total ? 100.0 * double(trainable) / double(total) : 0.0; }
  double peft_percent() const { return total ? 100.0 * double(peft) / double(total) : 0.0; }
};

template <typename Scalar>
TrainableReport trainable_report(const nn::ParameterRegistry<Scalar>& reg) {
  TrainableReport r;
  r.total = reg.total_elements();
  r.trainable = reg.census_trainable().count;
  r.peft = reg.census_prefix(kPeftPrefix).count;
  r.heads = reg.census_prefix(kHeadPrefix).count;
  return r;
}

}  // namespace mtpeft
