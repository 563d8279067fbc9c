#include <cmath>

#include "airway/losses.hpp"
#include "airway/metrics.hpp"
#include "airway/morphology.hpp"
#include "airway/nets.hpp"
#include "airway/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace airway;
using namespace airway::ad;

namespace {

TensorData<float> tensor_of(const Mask3& m) {
  TensorData<float> t = TensorData<float>::zeros(Shape{1, 1, m.dims.nz, m.dims.ny, m.dims.nx});
  for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i];
  return t;
}

TensorData<double> random01(Shape sh, std::uint64_t seed) {
  TensorData<double> t = TensorData<double>::zeros(sh);
  CounterRng rng(seed, "loss-test");
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = rng.uniform(0.05, 0.95);
  return t;
}

Mask3 thin_line(int n) {
  Mask3 m(Dims{n + 2, 5, 5});
  for (int x = 1; x <= n; ++x) m.at(x, 2, 2) = 1;
  return m;
}

}  // namespace

TEST_CASE("soft dice: perfect and inverted predictions") {
  Tape<float> t;
  TensorData<float> gt = TensorData<float>::zeros(Shape{2, 2, 2});
  gt.data << 1, 0, 1, 0, 1, 0, 1, 0;
  TensorData<float> inv = TensorData<float>::zeros(Shape{2, 2, 2});
  for (Eigen::Index i = 0; i < gt.data.size(); ++i) inv.data[i] = 1.0f - gt.data[i];

  CHECK(soft_dice_loss(t.leaf(gt, false), t.leaf(gt, false)).array()[0] ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(soft_dice_loss(t.leaf(inv, false), t.leaf(gt, false)).array()[0] ==
        doctest::Approx(1.0).epsilon(1e-6));
  // both all-zero -> smoothed to loss 0
  TensorData<float> zero = TensorData<float>::zeros(Shape{2, 2, 2});
  CHECK(soft_dice_loss(t.leaf(zero, false), t.leaf(zero, false)).array()[0] ==
        doctest::Approx(0.0));
}

TEST_CASE("soft dice: hand-evaluated squared-denominator value") {
  // pred uniform 0.5 over 8 voxels, gt = 4 ones: Dice = 2*(0.5*4)/(8*0.25+4) = 2/3
  Tape<float> t;
  TensorData<float> pred = TensorData<float>::zeros(Shape{8});
  pred.data.setConstant(0.5f);
  TensorData<float> gt = TensorData<float>::zeros(Shape{8});
  for (int i = 0; i < 4; ++i) gt.data[i] = 1.0f;
  CHECK(soft_dice_loss(t.leaf(pred, false), t.leaf(gt, false)).array()[0] ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("soft clDice: perfect thin line scores ~0") {
  const Mask3 line = thin_line(10);
  Tape<float> t;
  Value<float> p = t.leaf(tensor_of(line), false);
  Value<float> g = t.leaf(tensor_of(line), false);
  CHECK(soft_cl_dice_loss(p, g, 5).array()[0] < 1e-3);
}

TEST_CASE("soft clDice tolerates boundary thickness where soft dice does not") {
  const Mask3 line = thin_line(12);
  const Mask3 gt = dilate(line, {1});
  const Mask3 pred = dilate(gt, {1});
  Tape<float> t;
  Value<float> p = t.leaf(tensor_of(pred), false);
  Value<float> g = t.leaf(tensor_of(gt), false);
  const float cl = soft_cl_dice_loss(p, g, 5).array()[0];
  const float dice = soft_dice_loss(p, g).array()[0];
  CHECK(cl < 0.05f);
  CHECK(dice > 0.2f);
}

TEST_CASE("soft clDice agrees with hard clDice on binary tube fixtures") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    // tube pairs with breaks: corrupt-ish fixtures via random erasure
    Mask3 gt = dilate(thin_line(14), {1});
    Mask3 pred = gt;
    CounterRng rng(seed, "cldice-fixture");
    // remove a short mid-span chunk
    const int cut = 4 + static_cast<int>(rng.uniform_int(0, 5));
    for (int x = cut; x < cut + 3; ++x)
      for (int y = 0; y < 5; ++y)
        for (int z = 0; z < 5; ++z) pred.at(x, y, z) = 0;
    const ClDiceResult hard = cl_dice(pred, gt);
    Tape<float> t;
    const float soft =
        1.0f - soft_cl_dice_loss(t.leaf(tensor_of(pred), false), t.leaf(tensor_of(gt), false), 5)
                   .array()[0];
    CHECK(std::abs(soft - hard.value) < 0.05);
  }
}

TEST_CASE("l_d reductions: alpha_cl=0 is exactly soft dice; 0.5 is the mean; perfect = 0") {
  const Mask3 gt = dilate(thin_line(8), {1});
  Mask3 pred = gt;
  pred.at(4, 2, 2) = 0;
  Tape<float> t;
  Value<float> p = t.leaf(tensor_of(pred), false);
  Value<float> g = t.leaf(tensor_of(gt), false);
  const float dice = soft_dice_loss(p, g).array()[0];
  const float cl = soft_cl_dice_loss(p, g, 5).array()[0];
  CHECK(l_d(p, g, 0.0, 5).array()[0] == doctest::Approx(dice).epsilon(1e-7));
  CHECK(l_d(p, g, 0.5, 5).array()[0] == doctest::Approx(0.5 * (dice + cl)).epsilon(1e-6));
  Value<float> perfect = t.leaf(tensor_of(gt), false);
  CHECK(l_d(perfect, g, 0.3, 5).array()[0] == doctest::Approx(0.0).epsilon(1e-5));
  CHECK_THROWS_AS(l_d(p, g, 0.7, 5), DomainError);
}

TEST_CASE("CCF loss: all-ones 0, all-zeros 1, half coverage 0.5") {
  const Mask3 line = thin_line(10);
  Tape<float> t;
  Value<float> cl = t.leaf(tensor_of(line), false);
  TensorData<float> ones = TensorData<float>::zeros(tensor_of(line).shape);
  ones.data.setOnes();
  TensorData<float> half = TensorData<float>::zeros(tensor_of(line).shape);
  half.data.setConstant(0.5f);
  CHECK(l_ccf(t.leaf(ones, false), cl).array()[0] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(l_ccf(t.leaf(TensorData<float>::zeros(ones.shape), false), cl).array()[0] ==
        doctest::Approx(1.0).epsilon(1e-5));
  CHECK(l_ccf(t.leaf(half, false), cl).array()[0] == doctest::Approx(0.5).epsilon(1e-5));
}

TEST_CASE("CCF loss is monotone: superset prediction never scores worse") {
  const Mask3 line = thin_line(10);
  Tape<float> t;
  Value<float> cl = t.leaf(tensor_of(line), false);
  CounterRng rng(3, "ccf");
  TensorData<float> small = TensorData<float>::zeros(tensor_of(line).shape);
  for (Eigen::Index i = 0; i < small.data.size(); ++i) {
    small.data[i] = static_cast<float>(rng.uniform(0, 0.5));
  }
  TensorData<float> big = small;
  for (Eigen::Index i = 0; i < big.data.size(); ++i) big.data[i] += 0.25f;
  CHECK(l_ccf(t.leaf(big, false), cl).array()[0] <= l_ccf(t.leaf(small, false), cl).array()[0]);
}

TEST_CASE("layer and total losses: weighted sums exactly as written") {
  LossWeights w;
  w.alpha = 1;
  w.beta = 0;
  w.gamma = 0;
  w.delta = 0;
  w.phi = {0.25, 0.25, 0.25, 1.0};

  Tape<float> t;
  auto scalar = [&](float v) {
    ArrayX<float> a(1);
    a[0] = v;
    return t.leaf(TensorData<float>(Shape::scalar(), a), false);
  };
  const std::vector<Value<float>> parts{scalar(0.4f), scalar(0.3f), scalar(0.2f), scalar(0.1f)};
  CHECK(total_loss(parts, w).array()[0] == doctest::Approx(0.325));

  LossWeights zero = w;
  zero.alpha = zero.beta = zero.gamma = zero.delta = 0;
  const Mask3 gt = thin_line(6);
  Value<float> pred_tanh = t.leaf(TensorData<float>::zeros(tensor_of(gt).shape), false);
  Value<float> gt_v = t.leaf(tensor_of(gt), false);
  CHECK(layer_loss(pred_tanh, gt_v, gt_v, std::nullopt, zero).array()[0] == 0.0f);

  // alpha=1, others 0 -> exactly the L1 term between (tanh+1)/2 and gt
  Value<float> p01 = mul_scalar(add_scalar(pred_tanh, 1.0f), 0.5f);
  const float l1 = l1_mean(p01, gt_v).array()[0];
  CHECK(layer_loss(pred_tanh, gt_v, gt_v, std::nullopt, w).array()[0] ==
        doctest::Approx(l1).epsilon(1e-7));

  LossWeights bad = w;
  bad.phi = {1.0};
  CHECK_THROWS_AS(total_loss(parts, bad), DomainError);
}

TEST_CASE("adversarial losses: constant-zero discriminator gives ln2 terms") {
  Tape<float> t;
  TensorData<float> in = TensorData<float>::zeros(Shape{1, 4});
  Value<float> real = t.leaf(in, false);
  Value<float> fake = t.leaf(in, false);
  auto disc = [&](Value<float> x) { return mul_scalar(x, 0.0f); };  // logit 0 everywhere
  const AdvLosses<float> adv = adversarial_losses<float>(disc, real, fake);
  CHECK(adv.d_loss.array()[0] == doctest::Approx(2.0 * std::log(2.0)));
  CHECK(adv.g_loss.array()[0] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("adversarial losses: perfect separation at capped logits") {
  Tape<float> t;
  ArrayX<float> plus(1), minus(1);
  plus[0] = 20.0f;
  minus[0] = -20.0f;
  // disc returns +20 for the real input and -20 for anything else, by keying
  // on the input value itself
  auto disc = [&](Value<float> x) {
    return x.array()[0] > 0.5f ? t.leaf(TensorData<float>(Shape{1}, plus), false)
                               : t.leaf(TensorData<float>(Shape{1}, minus), false);
  };
  ArrayX<float> one(1), zero(1);
  one[0] = 1.0f;
  zero[0] = 0.0f;
  Value<float> real = t.leaf(TensorData<float>(Shape{1}, one), false);
  Value<float> fake = t.leaf(TensorData<float>(Shape{1}, zero), false);
  const AdvLosses<float> adv = adversarial_losses<float>(disc, real, fake);
  CHECK(adv.d_loss.array()[0] < 1e-6);
  CHECK(adv.g_loss.array()[0] == doctest::Approx(20.0));
}

TEST_CASE("adversarial d_loss does not leak gradient into the generator branch") {
  Tape<float> t;
  TensorData<float> fake_src = TensorData<float>::zeros(Shape{2});
  fake_src.data << 0.3f, 0.7f;
  Value<float> gen_out = t.leaf(fake_src, true);  // stands in for G output
  Value<float> real = t.leaf(TensorData<float>(Shape{2}, ArrayX<float>::Ones(2)), false);
  auto disc = [&](Value<float> x) { return mul_scalar(x, 2.0f); };
  const AdvLosses<float> adv = adversarial_losses<float>(disc, real, gen_out);
  t.backward(adv.d_loss);
  CHECK_FALSE(t.has_grad(gen_out.node()));  // fake branch was detached

  Tape<float> t2;
  Value<float> gen_out2 = t2.leaf(fake_src, true);
  Value<float> real2 = t2.leaf(TensorData<float>(Shape{2}, ArrayX<float>::Ones(2)), false);
  auto disc2 = [&](Value<float> x) { return mul_scalar(x, 2.0f); };
  const AdvLosses<float> adv2 = adversarial_losses<float>(disc2, real2, gen_out2);
  t2.backward(adv2.g_loss);
  CHECK(t2.has_grad(gen_out2.node()));  // g_loss does flow to the generator
}

TEST_CASE("gradient checks for every loss in 64-bit mode") {
  const Shape sh{1, 1, 4, 4, 4};
  const TensorData<double> pred = random01(sh, 1);
  TensorData<double> gt = TensorData<double>::zeros(sh);
  CounterRng rng(2, "loss-gt");
  for (Eigen::Index i = 0; i < gt.data.size(); ++i) gt.data[i] = rng.bernoulli(0.4);

  auto check = [&](auto f) {
    const GradCheckReport r = grad_check(f, {pred});
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-4);
  };
  check([&](Tape<double>& t, const std::vector<Value<double>>& in) {
    return soft_dice_loss(in[0], t.leaf(gt, false));
  });
  check([&](Tape<double>& t, const std::vector<Value<double>>& in) {
    return soft_cl_dice_loss(in[0], t.leaf(gt, false), 3);
  });
  check([&](Tape<double>& t, const std::vector<Value<double>>& in) {
    return l_d(in[0], t.leaf(gt, false), 0.5, 3);
  });
  check([&](Tape<double>& t, const std::vector<Value<double>>& in) {
    return l_ccf(in[0], t.leaf(gt, false));
  });
  check([&](Tape<double>& t, const std::vector<Value<double>>& in) {
    LossWeights w;
    w.phi = {1.0};
    return total_loss(std::vector<Value<double>>{layer_loss(
                          in[0], t.leaf(gt, false), t.leaf(gt, false), std::nullopt, w)},
                      w);
  });
}

TEST_CASE("loss weights validate their ranges") {
  LossWeights w;
  w.alpha_cl = 0.6;
  CHECK_THROWS_AS(w.validate(), DomainError);
  w.alpha_cl = 0.5;
  w.delta = 1.5;
  CHECK_THROWS_AS(w.validate(), DomainError);
  w.delta = 0.1;
  CHECK_NOTHROW(w.validate());
  const nlohmann::json j = w.to_json();
  const LossWeights back = LossWeights::from_json(j);
  CHECK(back.alpha_cl == w.alpha_cl);
  CHECK(back.phi == w.phi);
}

TEST_CASE("all losses stay finite on extreme soft inputs") {
  Tape<float> t;
  const Shape sh{1, 1, 4, 4, 4};
  for (float fill : {0.0f, 1.0f}) {
    TensorData<float> p = TensorData<float>::zeros(sh);
    p.data.setConstant(fill);
    for (float gfill : {0.0f, 1.0f}) {
      TensorData<float> g = TensorData<float>::zeros(sh);
      g.data.setConstant(gfill);
      Value<float> pv = t.leaf(p, false);
      Value<float> gv = t.leaf(g, false);
      CHECK(std::isfinite(soft_dice_loss(pv, gv).array()[0]));
      CHECK(std::isfinite(soft_cl_dice_loss(pv, gv, 3).array()[0]));
      CHECK(std::isfinite(l_ccf(pv, gv).array()[0]));
    }
  }
}
