#include "mtpeft/mtl.hpp"

namespace mtpeft {

std::string to_string(TrainMode m) { return m == TrainMode::full ? "full" : "peft"; }

std::string to_string(LossWeighting w) { return w == LossWeighting::learnable ? "learnable" : "uniform"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "full") return TrainMode::full;
  if (s == "peft") return TrainMode::peft;
  throw ConfigError("mode", "expected 'full' or 'peft', got '" + s + "'");
}

LossWeighting parse_loss_weighting(const std::string& s) {
  if (s == "learnable") return LossWeighting::learnable;
  if (s == "uniform") return LossWeighting::uniform;
  throw ConfigError("loss_weighting", "expected 'learnable' or 'uniform', got '" + s + "'");
}

}  // namespace mtpeft
