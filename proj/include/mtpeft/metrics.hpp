#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>

namespace mtpeft {

using Eigen::Index;
using RowMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Confusion {
  Index tp = 0, fp = 0, tn = 0, fn = 0;
};

Confusion confusion(std::span<const int> predictions, std::span<const int> labels);

// F1 of the positive class; 0 when there are no true, predicted or actual positives.
double f1_score(std::span<const int> predictions, std::span<const int> labels);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

// Query i's true code is truth[i] (identity when empty). Codes are ranked by
// dot product, descending; equal scores keep ascending code index order.
double compute_mrr(const RowMatD& queries, const RowMatD& codes, std::span<const Index> truth = {});

// Mean of 1/rank under a uniformly random ranking of n items: H_n / n.
double random_mrr_expectation(Index n);

// Rows scaled to unit L2 norm (zero rows stay zero).
RowMatD normalized_rows(const RowMatD& x);

}  // namespace mtpeft
