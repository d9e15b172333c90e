#include <cmath>
#include <random>

#include "doctest.h"
#include "mtpeft/autograd/gradcheck.hpp"
#include "mtpeft/inject.hpp"

using namespace mtpeft;
using namespace mtpeft::ag;
using T = Tensor<double>;

namespace {

T random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Vec<double> v(ag::numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return T(std::move(shape), std::move(v), requires_grad);
}

BottleneckAdapter<double> random_adapter(Index d, Index r, std::mt19937_64& rng, bool zero_up = false) {
  BottleneckAdapter<double> a;
  a.w_down = random_tensor({d, r}, rng, true);
  a.b_down = random_tensor({r}, rng, true, 0.1);
  a.w_up = zero_up ? T::zeros({r, d}, true) : random_tensor({r, d}, rng, true);
  a.b_up = zero_up ? T::zeros({d}, true) : random_tensor({d}, rng, true, 0.1);
  return a;
}

BackboneConfig tiny(Architecture arch = Architecture::encoder_only) {
  BackboneConfig c;
  c.architecture = arch;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.vocab_size = 40;
  c.max_seq_len = 24;
  c.pad_id = 0;
  c.dropout = 0.0;
  return c;
}

TokenBatch random_tokens(Index batch, Index seq, std::mt19937_64& rng) {
  TokenBatch t{batch, seq, {}};
  std::uniform_int_distribution<Index> d(1, 39);
  std::uniform_int_distribution<Index> pad(0, seq / 3);
  for (Index b = 0; b < batch; ++b) {
    const Index tail = pad(rng);
    for (Index s = 0; s < seq; ++s) t.ids.push_back(s >= seq - tail ? 0 : d(rng));
  }
  return t;
}

}  // namespace

TEST_CASE("serial adapter") {
  std::mt19937_64 rng(1);
  auto zero = random_adapter(6, 3, rng, true);
  auto h = random_tensor({4, 6}, rng);
  CHECK(apply_serial_adapter(h, zero).value() == h.value());

  BottleneckAdapter<double> a;
  a.w_down = T::from_rows({{1}, {2}});
  a.b_down = T::zeros({1});
  a.w_up = T::from_rows({{0.5, -0.5}});
  a.b_up = T::zeros({2});
  auto out = apply_serial_adapter(T::from_rows({{1, 1}}), a);
  CHECK(out[0] == 2.5);
  CHECK(out[1] == -0.5);

  auto m = random_adapter(8, 4, rng);
  auto x = random_tensor({3, 8}, rng);
  auto res = check_graph_gradients<double>([&] { return sum(apply_serial_adapter(x, m)); }, {m.w_down});
  CHECK(res.max_rel_error < 1e-4);
  auto all = check_graph_gradients<double>([&] { return sum(mul(apply_serial_adapter(x, m), apply_serial_adapter(x, m))); },
                                           {m.w_down, m.b_down, m.w_up, m.b_up});
  CHECK(all.max_rel_error < 1e-4);

  CHECK_THROWS_AS(apply_serial_adapter(random_tensor({2, 5}, rng), m), ShapeError);
}

TEST_CASE("parallel adapter") {
  std::mt19937_64 rng(2);
  auto zero = random_adapter(6, 3, rng, true);
  auto in = random_tensor({5, 6}, rng);
  auto sub_out = random_tensor({5, 6}, rng);
  CHECK(apply_parallel_adapter(in, sub_out, zero).value() == sub_out.value());

  // Identity sublayer: parallel and serial coincide.
  auto m = random_adapter(6, 3, rng);
  for (int trial = 0; trial < 5; ++trial) {
    auto h = random_tensor({4, 6}, rng);
    CHECK(apply_parallel_adapter(h, h, m).value() == apply_serial_adapter(h, m).value());
  }

  auto res = check_graph_gradients<double>(
      [&] { return sum(mul(apply_parallel_adapter(in, sub_out, m), sub_out)); }, {m.w_down, m.b_down, m.w_up, m.b_up});
  CHECK(res.max_rel_error < 1e-4);
  CHECK_THROWS_AS(apply_parallel_adapter(in, random_tensor({5, 4}, rng), m), ShapeError);
}

TEST_CASE("lora") {
  std::mt19937_64 rng(3);
  auto w = random_tensor({6, 6}, rng);
  auto x = random_tensor({3, 6}, rng);
  LoraModule<double> zero{random_tensor({2, 6}, rng, true), T::zeros({6, 2}, true), 1.0};
  CHECK(apply_lora(x, w, zero).value() == matmul_nt(x, w).value());

  // Full rank: equals the dense additive update.
  LoraModule<double> full{random_tensor({6, 6}, rng, true), random_tensor({6, 6}, rng, true), 1.0};
  auto delta = matmul(full.b, full.a);
  auto dense = matmul_nt(x, add(w, delta));
  CHECK((apply_lora(x, w, full).value() - dense.value()).cwiseAbs().maxCoeff() < 1e-12);

  LoraModule<double> hand{T::from_rows({{1, 0}}), T::from_rows({{1}, {0}}), 1.0};
  auto out = apply_lora(T::from_rows({{1, 2}}), T::from_rows({{1, 0}, {0, 1}}), hand);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 2.0);

  nn::ParameterRegistry<double> reg;
  std::mt19937_64 eng(0);
  CHECK_THROWS_AS(LoraModule<double>::make(reg, "l", 4, 4, 5, 1.0, eng), ValueError);
  LoraModule<double> too_wide{random_tensor({7, 6}, rng), random_tensor({6, 7}, rng), 1.0};
  CHECK_THROWS_AS(apply_lora(x, w, too_wide), ValueError);

  LoraModule<double> m{random_tensor({2, 6}, rng, true), random_tensor({6, 2}, rng, true), 0.5};
  auto res = check_graph_gradients<double>([&] { return sum(mul(apply_lora(x, w, m), apply_lora(x, w, m))); }, {m.a, m.b});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("prefix") {
  std::mt19937_64 rng(4);
  nn::ParameterRegistry<double> reg;
  std::mt19937_64 eng(1);
  auto keys = random_tensor({2, 4, 5, 8}, rng);
  auto values = random_tensor({2, 4, 5, 8}, rng);

  auto empty = PrefixModule<double>::make(reg, "p0", 0, 32, 3, 16, eng);
  auto same = apply_prefix(keys, values, empty, 1);
  CHECK(same.keys.value() == keys.value());
  CHECK(same.values.value() == values.value());

  auto pm = PrefixModule<double>::make(reg, "p20", 20, 32, 3, 16, eng);
  auto kv = apply_prefix(keys, values, pm, 2);
  CHECK(kv.keys.shape() == Shape{2, 4, 25, 8});
  CHECK(kv.values.shape() == Shape{2, 4, 25, 8});
  // Original keys follow the prefixes untouched.
  CHECK(slice(kv.keys, 2, 20, 25).value() == keys.value());
  CHECK_THROWS_AS(apply_prefix(keys, values, pm, 3), ValueError);

  auto grad = check_graph_gradients<double>(
      [&] {
        auto out = apply_prefix(keys, values, pm, 1);
        return sum(mul(out.keys, out.values));
      },
      {pm.embedding, pm.hidden.weight, pm.output.weight});
  CHECK(grad.max_rel_error < 1e-4);
}

TEST_CASE("prefix with vanishing attention mass approaches the no-prefix output") {
  // One head, queries all along +e0; prefix keys along -e0 get ~zero weight.
  std::mt19937_64 rng(5);
  const Index S = 4, dh = 4, P = 3;
  auto q = random_tensor({1, 1, S, dh}, rng);
  q.mutable_value() = q.value().cwiseAbs();
  auto k = random_tensor({1, 1, S, dh}, rng, false, 0.1);
  auto v = random_tensor({1, 1, S, dh}, rng);
  auto attend = [&](const T& keys, const T& values) {
    RowMat<double> mask = RowMat<double>::Zero(S, keys.dim(2));
    return matmul(masked_softmax(matmul_nt(q, keys), mask), values);
  };
  auto base = attend(k, v);
  double prev = 1e9;
  for (double strength : {1.0, 10.0, 100.0}) {
    Vec<double> kp = Vec<double>::Constant(P * dh, -strength);
    auto pre = prepend_prefix(k, v, T({P, dh}, kp), T({P, dh}, Vec<double>::Constant(P * dh, 5.0)));
    const double gap = (attend(pre.keys, pre.values).value() - base.value()).cwiseAbs().maxCoeff();
    CHECK(gap < prev);
    prev = gap;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("injection is an identity at init") {
  std::mt19937_64 rng(6);
  for (auto arch : {Architecture::encoder_only, Architecture::decoder_only}) {
    for (auto method : {PeftMethod::serial_adapter, PeftMethod::parallel_adapter, PeftMethod::lora}) {
      Backbone<double> model(tiny(arch), 21);
      std::vector<TokenBatch> inputs;
      std::vector<Vec<double>> before;
      for (int i = 0; i < 20; ++i) {
        inputs.push_back(random_tokens(2, 12, rng));
        before.push_back(model.encode(inputs.back(), false).hidden.value());
      }
      PeftConfig pc;
      pc.method = method;
      pc.bottleneck_r = 4;
      pc.lora_rank = 2;
      inject_peft(model, pc);
      for (int i = 0; i < 20; ++i) CHECK(model.encode(inputs[static_cast<std::size_t>(i)], false).hidden.value() == before[static_cast<std::size_t>(i)]);
    }
  }
}

TEST_CASE("injection layout and freeze partition") {
  PeftConfig serial;
  serial.bottleneck_r = 4;
  Backbone<double> s(tiny(), 1);
  auto sum_s = inject_peft(s, serial);
  CHECK(sum_s.modules == 4);
  CHECK(s.blocks()[0].attn_adapter.has_value());
  CHECK(s.blocks()[0].ffn_adapter.has_value());
  CHECK(s.registry().census_trainable().count == s.registry().census_prefix("peft.").count);
  CHECK(s.registry().census_prefix("peft.").count == sum_s.parameters);
  for (const auto& p : s.registry().params()) CHECK(p.frozen() == nn::starts_with(p.name, "backbone."));
  CHECK_THROWS_AS(inject_peft(s, serial), ValueError);

  PeftConfig par = serial;
  par.method = PeftMethod::parallel_adapter;
  Backbone<double> p(tiny(), 1);
  auto sum_p = inject_peft(p, par);
  CHECK(sum_p.modules == 2);
  CHECK(2 * sum_p.parameters == sum_s.parameters);

  PeftConfig lora;
  lora.method = PeftMethod::lora;
  lora.lora_rank = 2;
  Backbone<double> l(tiny(), 1);
  auto sum_l = inject_peft(l, lora);
  CHECK(sum_l.modules == 4);
  CHECK(sum_l.parameters == 2 * 2 * (2 * 16 * 2));
  CHECK(l.blocks()[1].lora_q.has_value());
  CHECK_FALSE(l.blocks()[1].lora_k.has_value());

  PeftConfig pre;
  pre.method = PeftMethod::prefix;
  pre.prefix_length = 5;
  pre.prefix_reparam_width = 8;
  Backbone<double> x(tiny(), 1);
  auto sum_x = inject_peft(x, pre);
  CHECK(sum_x.parameters == 5 * 16 + (16 * 8 + 8) + (8 * 2 * 2 * 16 + 2 * 2 * 16));
}

TEST_CASE("capacity doubles with bottleneck and rank") {
  auto count = [](PeftConfig pc) {
    Backbone<double> m(tiny(), 1);
    return inject_peft(m, pc).parameters;
  };
  const Index d = 16, layers = 2;
  PeftConfig a;
  a.bottleneck_r = 4;
  PeftConfig a2 = a;
  a2.bottleneck_r = 8;
  // Everything but the d-wide up-bias scales with r.
  CHECK(count(a2) - count(a) == 2 * layers * (2 * d * 4 + 4));
  CHECK(count(a2) > count(a));

  PeftConfig l;
  l.method = PeftMethod::lora;
  l.lora_rank = 3;
  PeftConfig l2 = l;
  l2.lora_rank = 6;
  CHECK(count(l2) == 2 * count(l));
}

TEST_CASE("prefix attends to every prefix position") {
  auto cfg = tiny();
  Backbone<double> model(cfg, 4);
  PeftConfig pc;
  pc.method = PeftMethod::prefix;
  pc.prefix_length = 3;
  pc.prefix_reparam_width = 8;
  inject_peft(model, pc);
  std::mt19937_64 rng(2);
  auto toks = random_tokens(2, 10, rng);
  CHECK_NOTHROW(model.encode(toks, false));
  // Gradient reaches the prefix parameters through every layer.
  sum(model.encode(toks, false).pooled).backward();
  CHECK(model.prefix()->embedding.has_grad());
  CHECK(model.prefix()->embedding.grad().cwiseAbs().maxCoeff() > 0.0);
}
