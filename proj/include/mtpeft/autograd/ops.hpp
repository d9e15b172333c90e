#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <type_traits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mtpeft/autograd/tensor.hpp"
#include "mtpeft/rng.hpp"

namespace mtpeft::ag {

namespace detail {

inline Index normalize_axis(Index axis, Index rank, const char* op) {
  const Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ValueError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return a;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// outer * axis * inner decomposition used by concat/slice/softmax.
struct AxisSplit {
  Index outer = 1;
  Index len = 1;
  Index inner = 1;
};

inline AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.len = shape[static_cast<std::size_t>(axis)];
  for (Index i = axis + 1; i < static_cast<Index>(shape.size()); ++i) s.inner *= shape[static_cast<std::size_t>(i)];
  return s;
}

template <typename Scalar>
MatMap<Scalar> as_matrix(Vec<Scalar>& v, Index cols) {
  return MatMap<Scalar>(v.data(), cols == 0 ? 0 : v.size() / cols, cols);
}

template <typename Scalar>
ConstMatMap<Scalar> as_matrix(const Vec<Scalar>& v, Index cols) {
  return ConstMatMap<Scalar>(v.data(), cols == 0 ? 0 : v.size() / cols, cols);
}

enum class Binary { add, sub, mul };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Binary kind, const char* op) {
  if (!is_suffix(b.shape(), a.shape())) {
    if ((kind == Binary::add || kind == Binary::mul) && is_suffix(a.shape(), b.shape())) {
      return binary(b, a, kind, op);
    }
    throw ShapeError(op, a.shape(), b.shape(), "shapes must match or broadcast along leading dims");
  }
  const Index inner = b.numel();
  Vec<Scalar> out(a.numel());
  auto A = as_matrix(a.value(), inner);
  auto O = as_matrix(out, inner);
  const auto brow = b.value().transpose();
  switch (kind) {
    case Binary::add: O = A.rowwise() + brow; break;
    case Binary::sub: O = A.rowwise() - brow; break;
    case Binary::mul: O = A.array().rowwise() * brow.array(); break;
  }
  return make_result<Scalar>(a.shape(), std::move(out), {a, b}, op, [kind, inner](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    auto G = as_matrix(static_cast<const Vec<Scalar>&>(self.grad), inner);
    if (pa.requires_grad) {
      auto GA = as_matrix(pa.grad_buffer(), inner);
      if (kind == Binary::mul) {
        GA.array() += G.array().rowwise() * pb.value.transpose().array();
      } else {
        GA += G;
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      if (kind == Binary::mul) {
        auto A = as_matrix(static_cast<const Vec<Scalar>&>(pa.value), inner);
        gb += (G.array() * A.array()).colwise().sum().transpose().matrix();
      } else if (kind == Binary::sub) {
        gb -= G.colwise().sum().transpose();
      } else {
        gb += G.colwise().sum().transpose();
      }
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic. b may be a trailing-suffix shape of a (bias-style
// broadcast across leading dims); add/mul also accept the mirrored case.

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::Binary::add, "add");
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::Binary::sub, "sub");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::Binary::mul, "mul");
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Tensor<Scalar> operator*(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return mul(a, b); }

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  Vec<Scalar> out = x.value() * factor;
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "scale", [factor](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad * factor;
  });
}

template <typename Scalar>
Tensor<Scalar> neg(const Tensor<Scalar>& x) { return scale(x, Scalar(-1)); }

// ---------------------------------------------------------------------------
// Matrix products.
//
// matmul(a, b):    a[..., m, k] x b[k, n]          -> [..., m, n]   (b shared)
//                  a[B..., m, k] x b[B..., k, n]   -> [B..., m, n]  (batched)
// matmul_nt(a, b): same with b's last two dims transposed (a x b^T).

namespace detail {

template <typename Scalar>
Tensor<Scalar> matmul_impl(const Tensor<Scalar>& a, const Tensor<Scalar>& b, bool transpose_b, const char* op) {
  if (a.rank() < 1 || b.rank() < 2) throw ShapeError(op, a.shape(), b.shape(), "need rank >= 1 and rank >= 2");
  const Index k = a.shape().back();
  const Index bk = transpose_b ? b.shape().back() : b.shape()[b.shape().size() - 2];
  const Index n = transpose_b ? b.shape()[b.shape().size() - 2] : b.shape().back();
  if (k != bk) throw ShapeError(op, a.shape(), b.shape(), "inner dimensions differ");

  if (b.rank() == 2) {
    Shape out_shape = a.shape();
    out_shape.back() = n;
    const Index rows = k == 0 ? 0 : a.numel() / k;
    Vec<Scalar> out(rows * n);
    auto A = as_matrix(a.value(), k);
    ConstMatMap<Scalar> B(b.value().data(), b.dim(0), b.dim(1));
    MatMap<Scalar> O(out.data(), rows, n);
    if (transpose_b) O.noalias() = A * B.transpose();
    else O.noalias() = A * B;
    return make_result<Scalar>(std::move(out_shape), std::move(out), {a, b}, op,
                               [k, n, rows, transpose_b](Node<Scalar>& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      ConstMatMap<Scalar> G(self.grad.data(), rows, n);
      ConstMatMap<Scalar> B(pb.value.data(), pb.shape[0], pb.shape[1]);
      if (pa.requires_grad) {
        MatMap<Scalar> GA(pa.grad_buffer().data(), rows, k);
        if (transpose_b) GA.noalias() += G * B;
        else GA.noalias() += G * B.transpose();
      }
      if (pb.requires_grad) {
        ConstMatMap<Scalar> A(pa.value.data(), rows, k);
        MatMap<Scalar> GB(pb.grad_buffer().data(), pb.shape[0], pb.shape[1]);
        if (transpose_b) GB.noalias() += G.transpose() * A;
        else GB.noalias() += A.transpose() * G;
      }
    });
  }

  // Batched: leading dims must agree exactly.
  if (a.rank() != b.rank()) throw ShapeError(op, a.shape(), b.shape(), "batched operands need equal rank");
  const Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  const Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  if (lead_a != lead_b) throw ShapeError(op, a.shape(), b.shape(), "batch dimensions differ");
  const Index batch = numel(lead_a);
  const Index m = a.shape()[a.shape().size() - 2];
  Shape out_shape = a.shape();
  out_shape.back() = n;
  Vec<Scalar> out(batch * m * n);
  const Index b_rows = transpose_b ? n : k;
  const Index b_cols = transpose_b ? k : n;
  for (Index i = 0; i < batch; ++i) {
    ConstMatMap<Scalar> A(a.value().data() + i * m * k, m, k);
    ConstMatMap<Scalar> B(b.value().data() + i * b_rows * b_cols, b_rows, b_cols);
    MatMap<Scalar> O(out.data() + i * m * n, m, n);
    if (transpose_b) O.noalias() = A * B.transpose();
    else O.noalias() = A * B;
  }
  return make_result<Scalar>(std::move(out_shape), std::move(out), {a, b}, op,
                             [batch, m, k, n, b_rows, b_cols, transpose_b](Node<Scalar>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    Scalar* ga = pa.requires_grad ? pa.grad_buffer().data() : nullptr;
    Scalar* gb = pb.requires_grad ? pb.grad_buffer().data() : nullptr;
    for (Index i = 0; i < batch; ++i) {
      ConstMatMap<Scalar> G(self.grad.data() + i * m * n, m, n);
      ConstMatMap<Scalar> A(pa.value.data() + i * m * k, m, k);
      ConstMatMap<Scalar> B(pb.value.data() + i * b_rows * b_cols, b_rows, b_cols);
      if (ga) {
        MatMap<Scalar> GA(ga + i * m * k, m, k);
        if (transpose_b) GA.noalias() += G * B;
        else GA.noalias() += G * B.transpose();
      }
      if (gb) {
        MatMap<Scalar> GB(gb + i * b_rows * b_cols, b_rows, b_cols);
        if (transpose_b) GB.noalias() += G.transpose() * A;
        else GB.noalias() += A.transpose() * G;
      }
    }
  });
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::matmul_impl(a, b, false, "matmul");
}

template <typename Scalar>
Tensor<Scalar> matmul_nt(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::matmul_impl(a, b, true, "matmul_nt");
}

// ---------------------------------------------------------------------------
// Shape manipulation. All of these copy; nothing aliases.

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  Index infer = -1;
  Index known = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape", x.shape(), shape, "at most one -1");
      infer = static_cast<Index>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || x.numel() % known != 0) throw ShapeError("reshape", x.shape(), shape);
    shape[static_cast<std::size_t>(infer)] = x.numel() / known;
  }
  if (numel(shape) != x.numel()) throw ShapeError("reshape", x.shape(), shape, "element count differs");
  return detail::make_result<Scalar>(std::move(shape), x.value(), {x}, "reshape", [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad;
  });
}

template <typename Scalar>
Tensor<Scalar> permute(const Tensor<Scalar>& x, std::vector<Index> perm) {
  const Index r = x.rank();
  if (static_cast<Index>(perm.size()) != r) throw ShapeError("permute", x.shape(), Shape(perm.begin(), perm.end()));
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (Index p : perm) {
    if (p < 0 || p >= r || used[static_cast<std::size_t>(p)]) {
      throw ValueError("permute: invalid permutation for shape " + shape_str(x.shape()));
    }
    used[static_cast<std::size_t>(p)] = true;
  }
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<Index> in_strides(static_cast<std::size_t>(r), 1);
  for (Index i = r - 2; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * x.shape()[static_cast<std::size_t>(i + 1)];
  }
  std::vector<Index> stride(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    stride[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
  }
  // src[k] is the input offset of output element k.
  auto gather_index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(x.numel()));
  {
    std::vector<Index> counter(static_cast<std::size_t>(r), 0);
    Index offset = 0;
    for (Index k = 0; k < x.numel(); ++k) {
      (*gather_index)[static_cast<std::size_t>(k)] = offset;
      for (Index d = r - 1; d >= 0; --d) {
        auto du = static_cast<std::size_t>(d);
        ++counter[du];
        offset += stride[du];
        if (counter[du] < out_shape[du]) break;
        offset -= stride[du] * counter[du];
        counter[du] = 0;
      }
    }
  }
  Vec<Scalar> out(x.numel());
  for (Index k = 0; k < x.numel(); ++k) out[k] = x.value()[(*gather_index)[static_cast<std::size_t>(k)]];
  return detail::make_result<Scalar>(std::move(out_shape), std::move(out), {x}, "permute",
                                     [gather_index](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (Index k = 0; k < self.grad.size(); ++k) g[(*gather_index)[static_cast<std::size_t>(k)]] += self.grad[k];
  });
}

// Swaps the last two dimensions.
template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& x) {
  if (x.rank() < 2) throw ShapeError("transpose", x.shape(), Shape{}, "need rank >= 2");
  std::vector<Index> perm(static_cast<std::size_t>(x.rank()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, std::move(perm));
}

template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  const Index ax = detail::normalize_axis(axis, static_cast<Index>(ref.size()), "concat");
  Shape out_shape = ref;
  out_shape[static_cast<std::size_t>(ax)] = 0;
  std::vector<Index> lens;
  for (const auto& p : parts) {
    Shape a = p.shape();
    Shape b = ref;
    if (a.size() != b.size()) throw ShapeError("concat", ref, p.shape(), "rank differs");
    a[static_cast<std::size_t>(ax)] = b[static_cast<std::size_t>(ax)] = 0;
    if (a != b) throw ShapeError("concat", ref, p.shape(), "non-concat dims differ");
    lens.push_back(p.shape()[static_cast<std::size_t>(ax)]);
    out_shape[static_cast<std::size_t>(ax)] += lens.back();
  }
  const auto split = detail::split_at(out_shape, ax);
  const Index total_len = split.len;
  Vec<Scalar> out(numel(out_shape));
  Index pos = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Index block = lens[i] * split.inner;
    for (Index o = 0; o < split.outer; ++o) {
      out.segment(o * total_len * split.inner + pos * split.inner, block) = parts[i].value().segment(o * block, block);
    }
    pos += lens[i];
  }
  return detail::make_result<Scalar>(std::move(out_shape), std::move(out), parts, "concat",
                                     [lens, split, total_len](Node<Scalar>& self) {
    Index pos = 0;
    for (std::size_t i = 0; i < lens.size(); ++i) {
      auto& p = *self.parents[i];
      const Index block = lens[i] * split.inner;
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (Index o = 0; o < split.outer; ++o) {
          g.segment(o * block, block) += self.grad.segment(o * total_len * split.inner + pos * split.inner, block);
        }
      }
      pos += lens[i];
    }
  });
}

// Half-open range [start, end) along axis.
template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& x, Index axis, Index start, Index end) {
  const Index ax = detail::normalize_axis(axis, x.rank(), "slice");
  const Index len = x.shape()[static_cast<std::size_t>(ax)];
  if (start < 0 || end > len || start > end) {
    throw ValueError("slice: range [" + std::to_string(start) + ", " + std::to_string(end) + ") out of bounds for " +
                     shape_str(x.shape()));
  }
  const auto split = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(ax)] = end - start;
  const Index block = (end - start) * split.inner;
  Vec<Scalar> out(split.outer * block);
  for (Index o = 0; o < split.outer; ++o) {
    out.segment(o * block, block) = x.value().segment(o * len * split.inner + start * split.inner, block);
  }
  return detail::make_result<Scalar>(std::move(out_shape), std::move(out), {x}, "slice",
                                     [split, block, len, start](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (Index o = 0; o < split.outer; ++o) {
      g.segment(o * len * split.inner + start * split.inner, block) += self.grad.segment(o * block, block);
    }
  });
}

// Inserts a new axis of size n by repetition (backward sums over it).
template <typename Scalar>
Tensor<Scalar> expand(const Tensor<Scalar>& x, Index axis, Index n) {
  const Index r = x.rank();
  const Index ax = axis < 0 ? axis + r + 1 : axis;
  if (ax < 0 || ax > r) throw ValueError("expand: axis out of range for " + shape_str(x.shape()));
  if (n < 0) throw ValueError("expand: negative repeat count");
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + ax, n);
  Index outer = 1;
  for (Index i = 0; i < ax; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  const Index inner = outer == 0 ? 0 : x.numel() / outer;
  Vec<Scalar> out(outer * n * inner);
  for (Index o = 0; o < outer; ++o) {
    for (Index j = 0; j < n; ++j) out.segment((o * n + j) * inner, inner) = x.value().segment(o * inner, inner);
  }
  return detail::make_result<Scalar>(std::move(out_shape), std::move(out), {x}, "expand",
                                     [outer, n, inner](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (Index o = 0; o < outer; ++o) {
      for (Index j = 0; j < n; ++j) g.segment(o * inner, inner) += self.grad.segment((o * n + j) * inner, inner);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions to a scalar.

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Vec<Scalar> out = Vec<Scalar>::Constant(1, x.value().sum());
  return detail::make_result<Scalar>(Shape{}, std::move(out), {x}, "sum", [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad[0];
  });
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  if (x.numel() == 0) throw ShapeError("mean", x.shape(), Shape{}, "empty tensor");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.numel());
  Vec<Scalar> out = Vec<Scalar>::Constant(1, x.value().sum() * inv);
  return detail::make_result<Scalar>(Shape{}, std::move(out), {x}, "mean", [inv](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad[0] * inv;
  });
}

// Packs scalar tensors into a vector [K].
template <typename Scalar>
Tensor<Scalar> stack_scalars(const std::vector<Tensor<Scalar>>& scalars) {
  std::vector<Tensor<Scalar>> parts;
  parts.reserve(scalars.size());
  for (const auto& s : scalars) {
    if (s.numel() != 1) throw ShapeError("stack_scalars", s.shape(), Shape{}, "expected scalar");
    parts.push_back(reshape(s, Shape{1}));
  }
  return concat(parts, 0);
}

// ---------------------------------------------------------------------------
// Activations.

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Vec<Scalar> out = x.value().cwiseMax(Scalar(0));
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "relu", [](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    p.grad_buffer().array() += (p.value.array() > Scalar(0)).select(self.grad.array(), Scalar(0));
  });
}

// Exact (erf) GELU.
template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& x) {
  const Scalar inv_sqrt2 = Scalar(0.70710678118654752440);
  auto erf = [](Scalar v) { return std::erf(v); };
  Vec<Scalar> out =
      (x.value().array() * (Scalar(0.5) * (Scalar(1) + (x.value().array() * inv_sqrt2).unaryExpr(erf)))).matrix();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "gelu", [inv_sqrt2](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    const Scalar inv_sqrt_2pi = Scalar(0.39894228040143267794);
    auto v = p.value.array();
    auto cdf = Scalar(0.5) * (Scalar(1) + (v * inv_sqrt2).unaryExpr([](Scalar t) { return std::erf(t); }));
    auto pdf = inv_sqrt_2pi * (Scalar(-0.5) * v.square()).exp();
    p.grad_buffer().array() += self.grad.array() * (cdf + v * pdf);
  });
}

template <typename Scalar>
Tensor<Scalar> tanh(const Tensor<Scalar>& x) {
  Vec<Scalar> out = x.value().array().tanh().matrix();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "tanh", [](Node<Scalar>& self) {
    self.parents[0]->grad_buffer().array() += self.grad.array() * (Scalar(1) - self.value.array().square());
  });
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1) {
  if (x.rank() == 0) throw ValueError("softmax: scalar input has no axis");
  const Index ax = detail::normalize_axis(axis, x.rank(), "softmax");
  const auto s = detail::split_at(x.shape(), ax);
  Vec<Scalar> out(x.numel());
  for (Index o = 0; o < s.outer; ++o) {
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.len * s.inner + i;
      Eigen::Map<const Vec<Scalar>, 0, Eigen::InnerStride<>> in(x.value().data() + base, s.len, Eigen::InnerStride<>(s.inner));
      Eigen::Map<Vec<Scalar>, 0, Eigen::InnerStride<>> y(out.data() + base, s.len, Eigen::InnerStride<>(s.inner));
      const Scalar mx = s.len ? in.maxCoeff() : Scalar(0);
      y = (in.array() - mx).exp().matrix();
      y /= y.sum();
    }
  }
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "softmax", [s](Node<Scalar>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (Index o = 0; o < s.outer; ++o) {
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.len * s.inner + i;
        Eigen::InnerStride<> st(s.inner);
        Eigen::Map<const Vec<Scalar>, 0, Eigen::InnerStride<>> y(self.value.data() + base, s.len, st);
        Eigen::Map<const Vec<Scalar>, 0, Eigen::InnerStride<>> dy(self.grad.data() + base, s.len, st);
        Eigen::Map<Vec<Scalar>, 0, Eigen::InnerStride<>> dx(g.data() + base, s.len, st);
        const Scalar dot = y.dot(dy);
        dx.array() += y.array() * (dy.array() - dot);
      }
    }
  });
}

// Softmax over the last axis of scores[B, H, Sq, Sk] after adding mask[B, Sq, Sk]
// (shared by all heads). Masked entries should hold a large negative number.
template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& scores, const RowMat<Scalar>& mask) {
  if (scores.rank() != 4) throw ShapeError("masked_softmax", scores.shape(), Shape{mask.rows(), mask.cols()});
  const Index batch = scores.dim(0), heads = scores.dim(1), sq = scores.dim(2), sk = scores.dim(3);
  if (mask.rows() != batch * sq || mask.cols() != sk) {
    throw ShapeError("masked_softmax", scores.shape(), Shape{mask.rows(), mask.cols()}, "mask must be [B*Sq, Sk]");
  }
  Vec<Scalar> out(scores.numel());
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const Index off = ((b * heads + h) * sq) * sk;
      ConstMatMap<Scalar> in(scores.value().data() + off, sq, sk);
      MatMap<Scalar> y(out.data() + off, sq, sk);
      y = in + mask.middleRows(b * sq, sq);
      for (Index r = 0; r < sq; ++r) {
        const Scalar mx = y.row(r).maxCoeff();
        y.row(r) = (y.row(r).array() - mx).exp().matrix();
        y.row(r) /= y.row(r).sum();
      }
    }
  }
  return detail::make_result<Scalar>(scores.shape(), std::move(out), {scores}, "masked_softmax",
                                     [sk](Node<Scalar>& self) {
    auto Y = detail::as_matrix(static_cast<const Vec<Scalar>&>(self.value), sk);
    auto DY = detail::as_matrix(static_cast<const Vec<Scalar>&>(self.grad), sk);
    auto DX = detail::as_matrix(self.parents[0]->grad_buffer(), sk);
    Vec<Scalar> dots = (Y.array() * DY.array()).rowwise().sum().matrix();
    DX.array() += Y.array() * (DY.array().colwise() - dots.array());
  });
}

// Normalises over the last axis, then applies gain and bias (both [d]).
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain, const Tensor<Scalar>& bias,
                          Scalar eps = Scalar(1e-5)) {
  if (x.rank() < 1) throw ShapeError("layer_norm", x.shape(), gain.shape());
  const Index d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm", x.shape(), gain.shape(), "gain/bias must be [last dim]");
  }
  auto X = detail::as_matrix(x.value(), d);
  const Index rows = X.rows();
  auto xhat = std::make_shared<RowMat<Scalar>>(rows, d);
  auto inv_std = std::make_shared<Vec<Scalar>>(rows);
  for (Index r = 0; r < rows; ++r) {
    const Scalar mu = X.row(r).mean();
    const Scalar var = (X.row(r).array() - mu).square().mean();
    (*inv_std)[r] = Scalar(1) / std::sqrt(var + eps);
    xhat->row(r) = (X.row(r).array() - mu) * (*inv_std)[r];
  }
  Vec<Scalar> out(x.numel());
  auto O = detail::as_matrix(out, d);
  O = (xhat->array().rowwise() * gain.value().transpose().array()).rowwise() + bias.value().transpose().array();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
                                     [d, xhat, inv_std](Node<Scalar>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    auto G = detail::as_matrix(static_cast<const Vec<Scalar>&>(self.grad), d);
    if (pg.requires_grad) pg.grad_buffer() += (G.array() * xhat->array()).colwise().sum().transpose().matrix();
    if (pb.requires_grad) pb.grad_buffer() += G.colwise().sum().transpose();
    if (px.requires_grad) {
      auto GX = detail::as_matrix(px.grad_buffer(), d);
      RowMat<Scalar> dxhat = G.array().rowwise() * pg.value.transpose().array();
      Vec<Scalar> m1 = dxhat.rowwise().mean();
      Vec<Scalar> m2 = (dxhat.array() * xhat->array()).rowwise().mean().matrix();
      GX.array() += ((dxhat.array().colwise() - m1.array()) - xhat->array().colwise() * m2.array()).colwise() *
                    inv_std->array();
    }
  });
}

// Inverted dropout keyed by a counter-based stream: identical stream => identical mask.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, double rate, bool train, std::uint64_t stream) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ValueError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  if (!train || rate == 0.0) return x;
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Vec<Scalar>>(x.numel());
  for (Index i = 0; i < x.numel(); ++i) {
    (*mask)[i] = CounterRng::uniform(stream, static_cast<std::uint64_t>(i)) < rate ? Scalar(0) : keep_scale;
  }
  Vec<Scalar> out = x.value().cwiseProduct(*mask);
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "dropout", [mask](Node<Scalar>& self) {
    self.parents[0]->grad_buffer() += self.grad.cwiseProduct(*mask);
  });
}

// Row-wise L2 normalisation over the last axis: x / sqrt(|x|^2 + eps).
template <typename Scalar>
Tensor<Scalar> normalize_rows(const Tensor<Scalar>& x, Scalar eps = Scalar(1e-12)) {
  const Index d = x.rank() ? x.shape().back() : 1;
  auto X = detail::as_matrix(x.value(), d);
  auto inv = std::make_shared<Vec<Scalar>>((X.rowwise().squaredNorm().array() + eps).rsqrt().matrix());
  Vec<Scalar> out(x.numel());
  detail::as_matrix(out, d) = X.array().colwise() * inv->array();
  return detail::make_result<Scalar>(x.shape(), std::move(out), {x}, "normalize_rows", [d, inv](Node<Scalar>& self) {
    auto Y = detail::as_matrix(static_cast<const Vec<Scalar>&>(self.value), d);
    auto G = detail::as_matrix(static_cast<const Vec<Scalar>&>(self.grad), d);
    auto GX = detail::as_matrix(self.parents[0]->grad_buffer(), d);
    Vec<Scalar> dots = (Y.array() * G.array()).rowwise().sum().matrix();
    GX.array() += (G.array() - Y.array().colwise() * dots.array()).colwise() * inv->array();
  });
}

// ---------------------------------------------------------------------------
// Row gathers.

// rows(x)[ids]: x viewed as [rows, last dim]. Backward scatters into the rows.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, std::span<const Index> ids, const char* op = "gather_rows") {
  if (x.rank() < 1) throw ShapeError(op, x.shape(), Shape{});
  const Index d = x.shape().back();
  auto X = x.matrix();
  auto idx = std::make_shared<std::vector<Index>>(ids.begin(), ids.end());
  Vec<Scalar> out(static_cast<Index>(idx->size()) * d);
  auto O = detail::as_matrix(out, d);
  for (std::size_t i = 0; i < idx->size(); ++i) {
    const Index id = (*idx)[i];
    if (id < 0 || id >= X.rows()) {
      throw ValueError(std::string(op) + ": id " + std::to_string(id) + " at position " + std::to_string(i) +
                       " outside [0, " + std::to_string(X.rows()) + ")");
    }
    O.row(static_cast<Index>(i)) = X.row(id);
  }
  return detail::make_result<Scalar>(Shape{static_cast<Index>(idx->size()), d}, std::move(out), {x}, op,
                                     [d, idx](Node<Scalar>& self) {
    auto G = detail::as_matrix(static_cast<const Vec<Scalar>&>(self.grad), d);
    auto GX = detail::as_matrix(self.parents[0]->grad_buffer(), d);
    for (std::size_t i = 0; i < idx->size(); ++i) GX.row((*idx)[i]) += G.row(static_cast<Index>(i));
  });
}

template <typename Scalar>
Tensor<Scalar> embedding_lookup(const Tensor<Scalar>& table, std::span<const Index> ids) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup", table.shape(), Shape{Index(ids.size())}, "table must be 2-D");
  return gather_rows(table, ids, "embedding_lookup");
}

// ---------------------------------------------------------------------------
// Losses (mean over the batch).

// Binary cross-entropy on raw logits; targets must be 0 or 1.
template <typename Scalar>
Tensor<Scalar> bce_with_logits(const Tensor<Scalar>& logits, std::span<const std::type_identity_t<Scalar>> targets) {
  const Index n = logits.numel();
  if (static_cast<Index>(targets.size()) != n) {
    throw ShapeError("bce_with_logits", logits.shape(), Shape{static_cast<Index>(targets.size())});
  }
  if (n == 0) throw ShapeError("bce_with_logits", logits.shape(), Shape{0}, "empty batch");
  auto y = std::make_shared<Vec<Scalar>>(n);
  for (Index i = 0; i < n; ++i) {
    const Scalar t = targets[static_cast<std::size_t>(i)];
    if (t != Scalar(0) && t != Scalar(1)) throw ValueError("bce_with_logits: target at " + std::to_string(i) + " is not 0/1");
    (*y)[i] = t;
  }
  const auto z = logits.value().array();
  // max(z, 0) - z*y + log(1 + exp(-|z|))
  const Scalar loss = (z.max(Scalar(0)) - z * y->array() + (-z.abs()).exp().log1p()).sum() / static_cast<Scalar>(n);
  return detail::make_result<Scalar>(Shape{}, Vec<Scalar>::Constant(1, loss), {logits}, "bce_with_logits",
                                     [y, n](Node<Scalar>& self) {
    auto& p = *self.parents[0];
    auto z = p.value.array();
    // Stable sigmoid.
    Vec<Scalar> sig = (z >= Scalar(0)).select(Scalar(1) / (Scalar(1) + (-z).exp()), z.exp() / (Scalar(1) + z.exp())).matrix();
    p.grad_buffer() += (sig - *y) * (self.grad[0] / static_cast<Scalar>(n));
  });
}

// Categorical cross-entropy: logits [n, C], targets in [0, C).
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const Index> targets) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy", logits.shape(), Shape{Index(targets.size())}, "logits must be [n, C]");
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(targets.size()) != n) throw ShapeError("cross_entropy", logits.shape(), Shape{Index(targets.size())});
  if (n == 0) throw ShapeError("cross_entropy", logits.shape(), Shape{0}, "empty batch");
  auto tgt = std::make_shared<std::vector<Index>>(targets.begin(), targets.end());
  auto L = logits.matrix();
  auto probs = std::make_shared<RowMat<Scalar>>(n, c);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Index t = (*tgt)[static_cast<std::size_t>(i)];
    if (t < 0 || t >= c) throw ValueError("cross_entropy: target " + std::to_string(t) + " at " + std::to_string(i) + " out of range");
    const Scalar mx = L.row(i).maxCoeff();
    probs->row(i) = (L.row(i).array() - mx).exp().matrix();
    const Scalar z = probs->row(i).sum();
    probs->row(i) /= z;
    total += std::log(z) + mx - L(i, t);
  }
  return detail::make_result<Scalar>(Shape{}, Vec<Scalar>::Constant(1, total / static_cast<Scalar>(n)), {logits},
                                     "cross_entropy", [tgt, probs, n, c](Node<Scalar>& self) {
    auto G = detail::as_matrix(self.parents[0]->grad_buffer(), c);
    const Scalar s = self.grad[0] / static_cast<Scalar>(n);
    G += *probs * s;
    for (Index i = 0; i < n; ++i) G(i, (*tgt)[static_cast<std::size_t>(i)]) -= s;
  });
}

}  // namespace mtpeft::ag
