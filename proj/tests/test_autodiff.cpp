#include <cmath>

#include "airway/autodiff.hpp"
#include "airway/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace airway;
using namespace airway::ad;

namespace {

TensorData<double> random_tensor(Shape sh, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  TensorData<double> t = TensorData<double>::zeros(sh);
  CounterRng rng(seed, "ad-test");
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = rng.uniform(lo, hi);
  return t;
}

using F = std::function<Value<double>(Tape<double>&, const std::vector<Value<double>>&)>;

double check(const F& f, std::vector<TensorData<double>> inputs) {
  const GradCheckReport r = grad_check(f, std::move(inputs));
  CHECK(r.checked > 0);
  return r.max_rel_error;
}

}  // namespace

TEST_CASE("analytic basics: tanh and identity conv") {
  Tape<double> t;
  TensorData<double> zero = TensorData<double>::zeros(Shape{1});
  Value<double> x = t.leaf(zero, true);
  Value<double> y = ad::tanh(x);
  CHECK(y.array()[0] == 0.0);
  t.backward(y);
  CHECK(t.grad(x.node())[0] == 1.0);  // d tanh / dx at 0

  // conv3d with a 1x1x1 identity kernel reproduces the input
  Tape<double> t2;
  TensorData<double> img = random_tensor(Shape{1, 1, 3, 3, 3}, 1);
  TensorData<double> w = TensorData<double>::zeros(Shape{1, 1, 1, 1, 1});
  w.data[0] = 1.0;
  Value<double> out = conv3d(t2.leaf(img, false), t2.leaf(w, false),
                             t2.leaf(TensorData<double>::zeros(Shape{1}), false), {1, 0});
  for (Eigen::Index i = 0; i < img.data.size(); ++i) CHECK(out.array()[i] == img.data[i]);
}

TEST_CASE("conv3d forward equals nested-loop oracle bit-for-bit in 64-bit mode") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TensorData<double> x = random_tensor(Shape{2, 3, 4, 4, 4}, seed * 10 + 1);
    const TensorData<double> w = random_tensor(Shape{4, 3, 2, 2, 2}, seed * 10 + 2);
    const TensorData<double> b = random_tensor(Shape{4}, seed * 10 + 3);
    for (auto [stride, pad] : {std::pair{1, 0}, {1, 1}, {2, 1}}) {
      Tape<double> t;
      Value<double> out = conv3d(t.leaf(x, false), t.leaf(w, false), t.leaf(b, false),
                                 Conv3dOpts{stride, pad});
      const TensorData<double> ref = oracles::conv3d_reference(x, w, b, stride, pad);
      REQUIRE(out.shape() == ref.shape);
      for (Eigen::Index i = 0; i < ref.data.size(); ++i) {
        CHECK(out.array()[i] == ref.data[i]);  // bitwise equality
      }
    }
  }
}

TEST_CASE("conv3d float path agrees with double path") {
  const TensorData<double> x = random_tensor(Shape{1, 2, 5, 5, 5}, 42);
  const TensorData<double> w = random_tensor(Shape{3, 2, 3, 3, 3}, 43);
  const TensorData<double> b = random_tensor(Shape{3}, 44);
  Tape<double> td;
  Value<double> outd =
      conv3d(td.leaf(x, false), td.leaf(w, false), td.leaf(b, false), Conv3dOpts{1, 1});
  Tape<float> tf;
  Value<float> outf = conv3d(tf.leaf(x.cast<float>(), false), tf.leaf(w.cast<float>(), false),
                             tf.leaf(b.cast<float>(), false), Conv3dOpts{1, 1});
  for (Eigen::Index i = 0; i < outd.array().size(); ++i) {
    CHECK(outf.array()[i] == doctest::Approx(outd.array()[i]).epsilon(2e-5));
  }
}

TEST_CASE("gradients: elementwise, reductions, activations") {
  const Shape sh{2, 3};
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(mul(in[0], in[1]));
        },
        {random_tensor(sh, 1), random_tensor(sh, 2)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(ad::div(in[0], in[1]));
        },
        {random_tensor(sh, 3), random_tensor(sh, 4, 0.5, 1.5)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(sub(add(in[0], in[1]), mul_scalar(in[0], 0.3)));
        },
        {random_tensor(sh, 5), random_tensor(sh, 6)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) { return mean(in[0]); },
        {random_tensor(sh, 7)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(ad::tanh(in[0]));
        },
        {random_tensor(sh, 8)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(sigmoid(in[0]));
        },
        {random_tensor(sh, 9)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(leaky_relu(in[0], 0.2));
        },
        {random_tensor(sh, 10)}) < 1e-4);
  CHECK(check([](Tape<double>&, const std::vector<Value<double>>& in) {
          Value<double> s = softmax_last(in[0]);
          return ad::sum(mul(s, s));
        },
        {random_tensor(Shape{3, 4}, 11)}) < 1e-4);
}

TEST_CASE("leaky_relu kink at exactly zero is skipped and reported") {
  TensorData<double> x = TensorData<double>::zeros(Shape{3});
  x.data << -0.5, 0.0, 0.5;  // middle element sits on the kink
  const GradCheckReport r = grad_check(
      [](Tape<double>&, const std::vector<Value<double>>& in) {
        return ad::sum(leaky_relu(in[0], 0.2));
      },
      {x});
  CHECK(r.skipped_kinks == 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("gradients: conv3d wrt input, weight and bias") {
  for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}}) {
    const int s = stride, p = pad;
    const double err = check(
        [s, p](Tape<double>&, const std::vector<Value<double>>& in) {
          return ad::sum(conv3d(in[0], in[1], in[2], Conv3dOpts{s, p}));
        },
        {random_tensor(Shape{1, 2, 4, 4, 4}, 20), random_tensor(Shape{3, 2, 3, 3, 3}, 21),
         random_tensor(Shape{3}, 22)});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("gradients: pooling (inputs jittered off ties), upsample, patchify, permute") {
  // distinct values avoid argmax ties at the +-eps probes
  TensorData<double> x = TensorData<double>::zeros(Shape{1, 1, 4, 4, 4});
  CounterRng rng(23, "pool");
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    x.data[i] = static_cast<double>(i) * 0.05 + rng.uniform(-0.01, 0.01);
  }
  for (auto kind : {0, 1, 2}) {
    const double err = check(
        [kind](Tape<double>&, const std::vector<Value<double>>& in) {
          const PoolOpts o{2, 2, 0};
          Value<double> v = kind == 0   ? max_pool3d(in[0], o)
                            : kind == 1 ? min_pool3d(in[0], o)
                                        : avg_pool3d(in[0], o);
          return ad::sum(mul(v, v));
        },
        {x});
    CHECK(err < 1e-4);
  }
  // same-padded max pool (the discriminator-input dilation shape)
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              return ad::sum(max_pool3d(in[0], PoolOpts{5, 1, 2}));
            },
            {x}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> u = upsample_nearest2x(in[0]);
              return ad::sum(mul(u, u));
            },
            {random_tensor(Shape{1, 2, 2, 2, 2}, 24)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> tokens = patchify3d(in[0], 2, 2, 2);
              return ad::sum(mul(tokens, tokens));
            },
            {random_tensor(Shape{1, 2, 4, 4, 4}, 25)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> p = permute(in[0], {2, 0, 1});
              return ad::sum(mul(p, p));
            },
            {random_tensor(Shape{2, 3, 4}, 26)}) < 1e-4);
}

TEST_CASE("pooling values: max/min/avg on a known block") {
  Tape<double> t;
  TensorData<double> x = TensorData<double>::zeros(Shape{1, 1, 2, 2, 2});
  x.data << 1, 2, 3, 4, 5, 6, 7, 8;
  const PoolOpts o{2, 2, 0};
  CHECK(max_pool3d(t.leaf(x, false), o).array()[0] == 8.0);
  CHECK(min_pool3d(t.leaf(x, false), o).array()[0] == 1.0);
  CHECK(avg_pool3d(t.leaf(x, false), o).array()[0] == doctest::Approx(4.5));
}

TEST_CASE("gradients: linear, matmul, norms, losses") {
  // a plain linear layer is quadratic in every argument: error well under 1e-6
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              return ad::sum(linear(in[0], in[1], in[2]));
            },
            {random_tensor(Shape{3, 4}, 29), random_tensor(Shape{2, 4}, 129),
             random_tensor(Shape{2}, 229)}) < 1e-6);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> y = linear(in[0], in[1], in[2]);
              return ad::sum(mul(y, y));
            },
            {random_tensor(Shape{3, 4}, 30), random_tensor(Shape{2, 4}, 31),
             random_tensor(Shape{2}, 32)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              return ad::sum(matmul(in[0], in[1]));
            },
            {random_tensor(Shape{2, 3, 4}, 33), random_tensor(Shape{2, 4, 2}, 34)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              return ad::sum(matmul_nt(in[0], in[1]));
            },
            {random_tensor(Shape{2, 3, 4}, 35), random_tensor(Shape{2, 5, 4}, 36)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> y = layer_norm(in[0], in[1], in[2]);
              return ad::sum(mul(y, y));
            },
            {random_tensor(Shape{3, 5}, 37), random_tensor(Shape{5}, 38, 0.5, 1.5),
             random_tensor(Shape{5}, 39)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> y = instance_norm(in[0], in[1], in[2]);
              return ad::sum(mul(y, y));
            },
            {random_tensor(Shape{2, 3, 2, 2, 2}, 40), random_tensor(Shape{3}, 41, 0.5, 1.5),
             random_tensor(Shape{3}, 42)}) < 1e-4);
  CHECK(check(
            [](Tape<double>& t, const std::vector<Value<double>>& in) {
              TensorData<double> targets = TensorData<double>::zeros(in[0].shape());
              for (Eigen::Index i = 0; i < targets.data.size(); ++i) targets.data[i] = i % 2;
              return bce_with_logits_mean(in[0], t.leaf(targets, false));
            },
            {random_tensor(Shape{2, 3}, 43)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              return l1_mean(in[0], in[1]);
            },
            {random_tensor(Shape{2, 3}, 44), random_tensor(Shape{2, 3}, 45)}) < 1e-4);
}

TEST_CASE("bce with logits at 0 gives ln 2; capped logits behave") {
  Tape<double> t;
  TensorData<double> logits = TensorData<double>::zeros(Shape{4});
  TensorData<double> ones = TensorData<double>::zeros(Shape{4});
  ones.data.setConstant(1.0);
  Value<double> v = bce_with_logits_mean(t.leaf(logits, false), t.leaf(ones, false));
  CHECK(v.array()[0] == doctest::Approx(std::log(2.0)));

  TensorData<double> strong = TensorData<double>::zeros(Shape{1});
  TensorData<double> one = TensorData<double>::zeros(Shape{1});
  one.data[0] = 1.0;
  strong.data[0] = 20.0;
  Value<double> good = bce_with_logits_mean(t.leaf(strong, false), t.leaf(one, false));
  CHECK(good.array()[0] < 1e-8);
  strong.data[0] = -20.0;
  Value<double> bad = bce_with_logits_mean(t.leaf(strong, false), t.leaf(one, false));
  CHECK(bad.array()[0] == doctest::Approx(20.0));
}

TEST_CASE("multi-head attention: singleton softmax, uniform case, gradients") {
  const int D = 6, H = 2;
  auto weights = [&](std::uint64_t seed) {
    return std::vector<TensorData<double>>{
        random_tensor(Shape{D, D}, seed + 1), random_tensor(Shape{D}, seed + 2),
        random_tensor(Shape{D, D}, seed + 3), random_tensor(Shape{D}, seed + 4),
        random_tensor(Shape{D, D}, seed + 5), random_tensor(Shape{D}, seed + 6),
        random_tensor(Shape{D, D}, seed + 7), random_tensor(Shape{D}, seed + 8)};
  };

  SUBCASE("single token: output equals projected value") {
    Tape<double> t;
    auto w = weights(100);
    const TensorData<double> x = random_tensor(Shape{1, 1, D}, 50);
    std::vector<Value<double>> wv;
    for (const auto& p : w) wv.push_back(t.leaf(p, false));
    Value<double> out = multi_head_attention(t.leaf(x, false), wv[0], wv[1], wv[2], wv[3], wv[4],
                                             wv[5], wv[6], wv[7], H);
    // attention over one token is the identity: out = Wo (Wv x + bv) + bo
    Value<double> v = linear(t.leaf(x, false), wv[4], wv[5]);
    Value<double> expect = linear(v, wv[6], wv[7]);
    for (Eigen::Index i = 0; i < out.array().size(); ++i) {
      CHECK(out.array()[i] == doctest::Approx(expect.array()[i]).epsilon(1e-12));
    }
  }

  SUBCASE("zero query/key projections give uniform attention = token mean") {
    Tape<double> t;
    auto w = weights(200);
    w[0].data.setZero();  // wq
    w[1].data.setZero();  // bq
    w[2].data.setZero();  // wk
    w[3].data.setZero();  // bk
    const int T = 4;
    const TensorData<double> x = random_tensor(Shape{1, T, D}, 51);
    std::vector<Value<double>> wv;
    for (const auto& p : w) wv.push_back(t.leaf(p, false));
    Value<double> out = multi_head_attention(t.leaf(x, false), wv[0], wv[1], wv[2], wv[3], wv[4],
                                             wv[5], wv[6], wv[7], H);
    // expected: mean over tokens of x, then value + output projections
    TensorData<double> xmean = TensorData<double>::zeros(Shape{1, 1, D});
    for (int tok = 0; tok < T; ++tok)
      for (int i = 0; i < D; ++i) xmean.data[i] += x.data[tok * D + i] / T;
    Value<double> vmean = linear(t.leaf(xmean, false), wv[4], wv[5]);
    Value<double> expect = linear(vmean, wv[6], wv[7]);
    for (int tok = 0; tok < T; ++tok)
      for (int i = 0; i < D; ++i) {
        CHECK(out.array()[tok * D + i] == doctest::Approx(expect.array()[i]).epsilon(1e-9));
      }
  }

  SUBCASE("gradient check of the full attention block") {
    auto w = weights(300);
    std::vector<TensorData<double>> inputs{random_tensor(Shape{1, 4, D}, 52)};
    for (auto& p : w) inputs.push_back(p);
    const double err = check(
        [H](Tape<double>&, const std::vector<Value<double>>& in) {
          Value<double> out = multi_head_attention(in[0], in[1], in[2], in[3], in[4], in[5],
                                                   in[6], in[7], in[8], H);
          return ad::sum(mul(out, out));
        },
        inputs);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("diamond graph: shared subexpressions accumulate gradients") {
  Tape<double> t;
  TensorData<double> xd = TensorData<double>::zeros(Shape{1});
  xd.data[0] = 0.7;
  Value<double> x = t.leaf(xd, true);
  Value<double> a = mul_scalar(x, 2.0);
  Value<double> y = add(mul(a, a), a);  // y = 4x^2 + 2x -> dy/dx = 8x + 2
  t.backward(y);
  CHECK(t.grad(x.node())[0] == doctest::Approx(8.0 * 0.7 + 2.0).epsilon(1e-12));
}

TEST_CASE("token ops: concat, select, tile") {
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> c = concat_tokens(in[0], in[1]);
              return ad::sum(mul(c, c));
            },
            {random_tensor(Shape{2, 1, 3}, 60), random_tensor(Shape{2, 4, 3}, 61)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> s = select_token(in[0], 0);
              return ad::sum(mul(s, s));
            },
            {random_tensor(Shape{2, 3, 4}, 62)}) < 1e-4);
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> s = tile_batch(in[0], 3);
              return ad::sum(mul(s, s));
            },
            {random_tensor(Shape{1, 2, 4}, 63)}) < 1e-4);
}

TEST_CASE("concat_channels values and gradients") {
  CHECK(check(
            [](Tape<double>&, const std::vector<Value<double>>& in) {
              Value<double> c = concat_channels(in[0], in[1]);
              return ad::sum(mul(c, c));
            },
            {random_tensor(Shape{2, 2, 2, 2, 2}, 64), random_tensor(Shape{2, 3, 2, 2, 2}, 65)}) <
        1e-4);
  Tape<double> t;
  Value<double> a = t.leaf(random_tensor(Shape{1, 1, 1, 1, 2}, 66), false);
  Value<double> b = t.leaf(random_tensor(Shape{1, 1, 1, 1, 2}, 67), false);
  Value<double> c = concat_channels(a, b);
  CHECK(c.shape() == Shape{1, 2, 1, 1, 2});
  CHECK(c.array()[0] == a.array()[0]);
  CHECK(c.array()[2] == b.array()[0]);
}

TEST_CASE("detach blocks gradients") {
  Tape<double> t;
  TensorData<double> xd = TensorData<double>::zeros(Shape{2});
  xd.data << 0.3, -0.8;
  Value<double> x = t.leaf(xd, true);
  Value<double> y = ad::sum(mul(detach(x), x));
  t.backward(y);
  // d/dx (c * x) = c where c = detach(x) values
  CHECK(t.grad(x.node())[0] == doctest::Approx(0.3));
  CHECK(t.grad(x.node())[1] == doctest::Approx(-0.8));
}

TEST_CASE("shape errors name the operator") {
  Tape<double> t;
  Value<double> a = t.leaf(random_tensor(Shape{2, 3}, 70), false);
  Value<double> b = t.leaf(random_tensor(Shape{3, 2}, 71), false);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
  CHECK_THROWS_AS(ad::div(a, b), ShapeError);
  Value<double> x5 = t.leaf(random_tensor(Shape{1, 2, 4, 4, 4}, 72), false);
  Value<double> wbad = t.leaf(random_tensor(Shape{3, 5, 3, 3, 3}, 73), false);
  Value<double> bias = t.leaf(random_tensor(Shape{3}, 74), false);
  CHECK_THROWS_WITH_AS(conv3d(x5, wbad, bias, {1, 1}), doctest::Contains("conv3d"), ShapeError);
  CHECK_THROWS_AS(patchify3d(x5, 3, 4, 4), ShapeError);
  CHECK_THROWS_AS(multi_head_attention(a, a, a, a, a, a, a, a, a, 5), ShapeError);
}

TEST_CASE("backward requires scalar loss") {
  Tape<double> t;
  Value<double> a = t.leaf(random_tensor(Shape{2, 2}, 80), true);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
}
