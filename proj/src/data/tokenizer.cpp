#include "mtpeft/data/tokenizer.hpp"

#include <algorithm>
#include <string>

#include "mtpeft/error.hpp"

namespace mtpeft::data {

namespace {

void check_max_len(Index max_len) {
  if (max_len < 2) throw ValueError("tokenize: max_len must be at least 2, got " + std::to_string(max_len));
}

void append_bytes(std::vector<Index>& out, std::string_view text, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<unsigned char>(text[i]));
}

}  // namespace

std::vector<Index> tokenize(std::string_view text, Index max_len) {
  check_max_len(max_len);
  std::vector<Index> ids;
  ids.reserve(static_cast<std::size_t>(max_len));
  ids.push_back(kBos);
  append_bytes(ids, text, std::min(text.size(), static_cast<std::size_t>(max_len - 1)));
  ids.resize(static_cast<std::size_t>(max_len), kPad);
  return ids;
}

std::vector<Index> encode_pair(std::string_view a, std::string_view b, Index max_len) {
  check_max_len(max_len);
  const std::size_t budget = static_cast<std::size_t>(max_len - 2);
  std::size_t keep_a = a.size(), keep_b = b.size();
  if (keep_a + keep_b > budget) {
    keep_a = budget * a.size() / (a.size() + b.size());
    keep_b = std::min(b.size(), budget - keep_a);
    keep_a = std::min(a.size(), budget - keep_b);
  }
  std::vector<Index> ids;
  ids.reserve(static_cast<std::size_t>(max_len));
  ids.push_back(kBos);
  append_bytes(ids, a, keep_a);
  ids.push_back(kSep);
  append_bytes(ids, b, keep_b);
  ids.resize(static_cast<std::size_t>(max_len), kPad);
  return ids;
}

Index content_length(const std::vector<Index>& ids) {
  auto it = std::find(ids.begin(), ids.end(), kPad);
  return static_cast<Index>(it - ids.begin());
}

}  // namespace mtpeft::data
