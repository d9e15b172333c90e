#include "mtpeft/error.hpp"

#include <sstream>

namespace mtpeft {

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {
std::string shape_message(const std::string& op, const Shape& lhs, const Shape& rhs,
                          const std::string& detail) {
  std::string msg = op + ": incompatible shapes " + shape_str(lhs) + " and " + shape_str(rhs);
  if (!detail.empty()) msg += " (" + detail + ")";
  return msg;
}
}  // namespace

ShapeError::ShapeError(std::string op, Shape lhs, Shape rhs, const std::string& detail)
    : Error(shape_message(op, lhs, rhs, detail)),
      op_(std::move(op)),
      lhs_(std::move(lhs)),
      rhs_(std::move(rhs)) {}

ConfigError::ConfigError(std::string field, const std::string& message)
    : Error(field + ": " + message), field_(std::move(field)) {}

}  // namespace mtpeft
