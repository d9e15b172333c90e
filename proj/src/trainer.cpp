#include "mtpeft/trainer.hpp"

#include <ostream>

namespace mtpeft {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0) throw ConfigError("train.adam_beta1", "must lie in [0, 1)");
  if (adam_beta2 < 0.0 || adam_beta2 >= 1.0) throw ConfigError("train.adam_beta2", "must lie in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("train.epsilon", "must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay", "must be non-negative");
  if (per_task_batch < 1) throw ConfigError("train.per_task_batch", "must be at least 1");
  if (max_epochs < 1) throw ConfigError("train.max_epochs", "must be at least 1");
  if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience", "must be at least 1");
  if (max_seq_len < 2) throw ConfigError("train.max_seq_len", "must be at least 2");
  if (!(temperature > 0.0)) throw ConfigError("train.temperature", "must be positive");
  if (eval_batch < 1) throw ConfigError("train.eval_batch", "must be at least 1");
  if (max_steps < 0) throw ConfigError("train.max_steps", "must be non-negative");
}

namespace detail {

void log_line(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

}  // namespace detail

}  // namespace mtpeft
