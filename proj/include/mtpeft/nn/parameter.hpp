#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mtpeft/autograd/ops.hpp"

namespace mtpeft::nn {

using ag::Index;
using ag::Tensor;
using ag::Vec;

// A named leaf tensor. Frozen parameters have requires_grad off, so no graph
// built on top of them ever accumulates a gradient into them.
template <typename Scalar>
struct Parameter {
  std::string name;
  Tensor<Scalar> tensor;

  bool frozen() const { return !tensor.requires_grad(); }
  Index numel() const { return tensor.numel(); }
};

struct Census {
  Index count = 0;
  Index total = 0;
  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(count) / static_cast<double>(total); }
  double percent() const { return 100.0 * fraction(); }
};

inline bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

template <typename Scalar>
class ParameterRegistry {
 public:
  Tensor<Scalar> add(const std::string& name, Tensor<Scalar> tensor) {
    if (index_.count(name)) throw ValueError("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, params_.size());
    params_.push_back({name, tensor});
    return tensor;
  }

  const std::vector<Parameter<Scalar>>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Parameter<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("unknown parameter: " + name);
    return params_[it->second];
  }

  // Sets the flag on every matching parameter; returns how many changed state.
  std::size_t set_frozen(const std::function<bool(const std::string&)>& filter, bool frozen) {
    std::size_t changed = 0;
    for (auto& p : params_) {
      if (!filter(p.name)) continue;
      if (p.frozen() != frozen) ++changed;
      p.tensor.set_requires_grad(!frozen);
    }
    return changed;
  }

  std::size_t count_matching(const std::function<bool(const std::string&)>& filter) const {
    std::size_t n = 0;
    for (const auto& p : params_) n += filter(p.name) ? 1 : 0;
    return n;
  }

  Index total_elements() const {
    Index n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  Census census_all() const { return {total_elements(), total_elements()}; }

  Census census_trainable() const {
    Census c{0, total_elements()};
    for (const auto& p : params_) c.count += p.frozen() ? 0 : p.numel();
    return c;
  }

  Census census_prefix(std::string_view prefix) const {
    Census c{0, total_elements()};
    for (const auto& p : params_) c.count += starts_with(p.name, prefix) ? p.numel() : 0;
    return c;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Deterministic initialisers. All draws come from one engine per build so the
// registration order fixes the values.
template <typename Scalar>
Tensor<Scalar> normal_tensor(Shape shape, double stddev, std::mt19937_64& engine) {
  std::normal_distribution<double> dist(0.0, stddev);
  Vec<Scalar> v(ag::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(engine));
  return Tensor<Scalar>(std::move(shape), std::move(v));
}

template <typename Scalar>
Tensor<Scalar> uniform_tensor(Shape shape, double bound, std::mt19937_64& engine) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Vec<Scalar> v(ag::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(engine));
  return Tensor<Scalar>(std::move(shape), std::move(v));
}

// y = x W^T + b with W stored [out, in].
template <typename Scalar>
struct Linear {
  Tensor<Scalar> weight;
  Tensor<Scalar> bias;

  static Linear make(ParameterRegistry<Scalar>& reg, const std::string& name, Index in, Index out, double stddev,
                     std::mt19937_64& engine) {
    Linear l;
    l.weight = reg.add(name + ".weight", normal_tensor<Scalar>({out, in}, stddev, engine));
    l.bias = reg.add(name + ".bias", Tensor<Scalar>::zeros({out}));
    return l;
  }

  Index in_features() const { return weight.dim(1); }
  Index out_features() const { return weight.dim(0); }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return ag::add(ag::matmul_nt(x, weight), bias); }
};

template <typename Scalar>
struct LayerNorm {
  Tensor<Scalar> gain;
  Tensor<Scalar> bias;
  Scalar eps = Scalar(1e-5);

  static LayerNorm make(ParameterRegistry<Scalar>& reg, const std::string& name, Index d) {
    LayerNorm ln;
    ln.gain = reg.add(name + ".weight", Tensor<Scalar>::constant({d}, Scalar(1)));
    ln.bias = reg.add(name + ".bias", Tensor<Scalar>::zeros({d}));
    return ln;
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return ag::layer_norm(x, gain, bias, eps); }
};

}  // namespace mtpeft::nn
