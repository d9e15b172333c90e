#include "mtpeft/metrics.hpp"

#include <string>

#include "mtpeft/error.hpp"

namespace mtpeft {

Confusion confusion(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ShapeError("confusion", Shape{static_cast<Index>(predictions.size())}, Shape{static_cast<Index>(labels.size())});
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool p = predictions[i] != 0, y = labels[i] != 0;
    if (p && y) ++c.tp;
    else if (p) ++c.fp;
    else if (y) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(std::span<const int> predictions, std::span<const int> labels) {
  const auto c = confusion(predictions, labels);
  const Index denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * double(c.tp) / double(denom);
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  const auto c = confusion(predictions, labels);
  const Index n = c.tp + c.fp + c.tn + c.fn;
  if (n == 0) throw ValueError("accuracy: no predictions");
  return double(c.tp + c.tn) / double(n);
}

double compute_mrr(const RowMatD& queries, const RowMatD& codes, std::span<const Index> truth) {
  const Index n = queries.rows();
  if (n == 0) throw ValueError("compute_mrr: no queries");
  if (queries.cols() != codes.cols()) {
    throw ShapeError("compute_mrr", Shape{queries.rows(), queries.cols()}, Shape{codes.rows(), codes.cols()});
  }
  if (!truth.empty() && static_cast<Index>(truth.size()) != n) {
    throw ShapeError("compute_mrr", Shape{n}, Shape{static_cast<Index>(truth.size())}, "one true code per query");
  }
  if (truth.empty() && codes.rows() != n) {
    throw ShapeError("compute_mrr", Shape{n}, Shape{codes.rows()}, "identity pairing needs one code per query");
  }
  const RowMatD scores = queries * codes.transpose();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Index t = truth.empty() ? i : truth[static_cast<std::size_t>(i)];
    if (t < 0 || t >= codes.rows()) throw ValueError("compute_mrr: true code index out of range");
    const double s = scores(i, t);
    Index rank = 1;
    for (Index j = 0; j < codes.rows(); ++j) {
      if (scores(i, j) > s || (scores(i, j) == s && j < t)) ++rank;
    }
    total += 1.0 / double(rank);
  }
  return total / double(n);
}

double random_mrr_expectation(Index n) {
  if (n < 1) throw ValueError("random_mrr_expectation: n must be >= 1");
  double h = 0.0;
  for (Index k = 1; k <= n; ++k) h += 1.0 / double(k);
  return h / double(n);
}

RowMatD normalized_rows(const RowMatD& x) {
  RowMatD out = x;
  for (Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) out.row(i) /= norm;
  }
  return out;
}

}  // namespace mtpeft
