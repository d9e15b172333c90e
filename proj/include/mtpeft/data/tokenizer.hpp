#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mtpeft::data {

using Eigen::Index;

// Byte-level vocabulary: ids 0-255 are raw bytes, followed by three specials.
inline constexpr Index kPad = 256;
inline constexpr Index kBos = 257;
inline constexpr Index kSep = 258;
inline constexpr Index kVocabSize = 259;

// BOS + bytes, truncated to max_len, then padded with PAD to exactly max_len.
std::vector<Index> tokenize(std::string_view text, Index max_len);

// BOS a SEP b PAD...; when both segments do not fit, each keeps a share of
// the budget proportional to its length.
std::vector<Index> encode_pair(std::string_view a, std::string_view b, Index max_len);

// Number of leading non-pad ids.
Index content_length(const std::vector<Index>& ids);

}  // namespace mtpeft::data
