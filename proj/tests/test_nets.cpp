#include <cmath>

#include "airway/morphology.hpp"
#include "airway/nets.hpp"
#include "airway/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace airway;
using namespace airway::ad;

namespace {

TensorData<float> random_input(Shape sh, std::uint64_t seed) {
  TensorData<float> t = TensorData<float>::zeros(sh);
  CounterRng rng(seed, "net-test");
  for (Eigen::Index i = 0; i < t.data.size(); ++i) {
    t.data[i] = static_cast<float>(rng.uniform(0, 1));
  }
  return t;
}

}  // namespace

TEST_CASE("generator shapes: levels=3 on 16^3 gives final 16^3 plus aux at 8^3 and 4^3") {
  GeneratorConfig cfg = GeneratorConfig::toy();
  Generator<float> gen(cfg, 1);
  Tape<float> t;
  auto outs = gen.forward(t, t.leaf(random_input(Shape{1, 2, 16, 16, 16}, 1), false));
  CHECK(outs.final_out.shape() == Shape{1, 1, 16, 16, 16});
  REQUIRE(outs.aux.size() == 2);
  CHECK(outs.aux[0].shape() == Shape{1, 1, 4, 4, 4});  // deepest first
  CHECK(outs.aux[1].shape() == Shape{1, 1, 8, 8, 8});
  CHECK(outs.supervision().size() == 3);
}

TEST_CASE("generator rejects dims not divisible by 2^(levels-1)") {
  Generator<float> gen(GeneratorConfig::toy(), 1);
  Tape<float> t;
  CHECK_THROWS_AS(gen.forward(t, t.leaf(random_input(Shape{1, 2, 10, 16, 16}, 2), false)),
                  ShapeError);
}

TEST_CASE("zero-weight generator emits exactly 0 (empty mask under strict threshold)") {
  Generator<float> gen(GeneratorConfig::toy(), 3);
  for (auto& p : gen.params().items()) p->value.setZero();
  Tape<float> t;
  auto outs = gen.forward(t, t.leaf(random_input(Shape{1, 2, 8, 8, 8}, 3), false));
  for (Eigen::Index i = 0; i < outs.final_out.array().size(); ++i) {
    CHECK(outs.final_out.array()[i] == 0.0f);
    CHECK_FALSE(outs.final_out.array()[i] > 0.0f);  // thresholded mask stays empty
  }
}

TEST_CASE("generator output strictly inside (-1, 1)") {
  Generator<float> gen(GeneratorConfig::toy(), 4);
  Tape<float> t;
  auto outs = gen.forward(t, t.leaf(random_input(Shape{2, 2, 8, 8, 8}, 4), false));
  for (const auto& v : outs.supervision()) {
    for (Eigen::Index i = 0; i < v.array().size(); ++i) {
      CHECK(std::abs(v.array()[i]) < 1.0f);
    }
  }
}

TEST_CASE("receptive field recurrence: paper config = 70, toy config = 16") {
  CHECK(receptive_field(PatchDiscriminatorConfig::paper()) == 70);
  CHECK(receptive_field(PatchDiscriminatorConfig::toy()) == 16);
}

TEST_CASE("patch discriminator: empirical receptive field matches the recurrence") {
  const PatchDiscriminatorConfig cfg = PatchDiscriminatorConfig::toy();
  PatchDiscriminator<float> disc(cfg, 5);
  const int n = 32;
  Tape<float> t;
  Value<float> input = t.leaf(random_input(Shape{1, 1, n, n, n}, 5), true);
  Value<float> logits = disc.forward(t, input);
  const Shape& os = logits.shape();
  // backprop from one central score-map element; the input-gradient support
  // is that element's receptive field
  ArrayX<float> seed_grad = ArrayX<float>::Zero(os.numel());
  const int oc = os[2] / 2;
  seed_grad[(std::int64_t(oc) * os[3] + oc) * os[4] + oc] = 1.0f;
  Value<float> target = t.leaf(TensorData<float>(os, seed_grad), false);
  t.backward(ad::sum(mul(logits, target)));
  const ArrayX<float>& g = t.grad(input.node());
  int min_x = n, max_x = -1, min_y = n, max_y = -1, min_z = n, max_z = -1;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (std::abs(g[(std::int64_t(z) * n + y) * n + x]) > 0) {
          min_x = std::min(min_x, x); max_x = std::max(max_x, x);
          min_y = std::min(min_y, y); max_y = std::max(max_y, y);
          min_z = std::min(min_z, z); max_z = std::max(max_z, z);
        }
      }
  const int rf = receptive_field(cfg);
  // interior element: support equals the receptive field exactly
  CHECK(max_x - min_x + 1 == rf);
  CHECK(max_y - min_y + 1 == rf);
  CHECK(max_z - min_z + 1 == rf);
}

TEST_CASE("patch discriminator: score map is spatial and follows the conv shape recurrence") {
  const PatchDiscriminatorConfig cfg = PatchDiscriminatorConfig::toy();
  PatchDiscriminator<float> disc(cfg, 6);
  auto expected_extent = [&](int n) {
    for (int s : cfg.strides) n = (n + 2 - cfg.kernel) / s + 1;
    return n;
  };
  Tape<float> t;
  Value<float> s16 = disc.forward(t, t.leaf(random_input(Shape{1, 1, 16, 16, 16}, 6), false));
  Value<float> s32 = disc.forward(t, t.leaf(random_input(Shape{1, 1, 32, 32, 32}, 7), false));
  CHECK(s16.shape().rank() == 5);
  CHECK(s16.shape()[1] == 1);
  CHECK(s16.shape()[2] > 1);  // spatial map, not a scalar
  for (int axis : {2, 3, 4}) {
    CHECK(s16.shape()[axis] == expected_extent(16));
    CHECK(s32.shape()[axis] == expected_extent(32));
  }
  // fully convolutional: larger inputs mean more score elements
  CHECK(s32.shape()[2] > s16.shape()[2]);
}

TEST_CASE("patch discriminator rejects inputs below the receptive field") {
  PatchDiscriminator<float> disc(PatchDiscriminatorConfig::toy(), 8);
  Tape<float> t;
  CHECK_THROWS_AS(disc.forward(t, t.leaf(random_input(Shape{1, 1, 8, 8, 8}, 8), false)),
                  ShapeError);
}

TEST_CASE("vit discriminator: token arithmetic and logit shape") {
  ViTDiscriminatorConfig cfg = ViTDiscriminatorConfig::toy();
  ViTDiscriminator<float> disc(cfg, 9);
  CHECK(disc.token_count(16, 16, 16) == 8);
  Tape<float> t;
  Value<float> logit = disc.forward(t, t.leaf(random_input(Shape{2, 1, 16, 16, 16}, 9), false));
  CHECK(logit.shape() == Shape{2, 1});
  // 8 tokens + class token -> 9 positional embeddings
  Param<float>* pos = disc.params().find("pos_embed_9");
  REQUIRE(pos != nullptr);
  CHECK(pos->shape == Shape{1, 9, cfg.hidden});
}

TEST_CASE("vit discriminator rejects non-divisible dims naming the axis") {
  ViTDiscriminator<float> disc(ViTDiscriminatorConfig::toy(), 10);
  Tape<float> t;
  CHECK_THROWS_WITH_AS(
      disc.forward(t, t.leaf(random_input(Shape{1, 1, 16, 12, 16}, 10), false)),
      doctest::Contains("y"), ShapeError);
}

TEST_CASE("vit discriminator is positionally sensitive unless embeddings are zeroed") {
  ViTDiscriminatorConfig cfg = ViTDiscriminatorConfig::toy();
  ViTDiscriminator<float> disc(cfg, 11);
  TensorData<float> a = random_input(Shape{1, 1, 16, 16, 16}, 11);
  // swap the contents of patch 0 and patch 1 (adjacent x patches)
  TensorData<float> b = a;
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const std::int64_t i0 = (std::int64_t(z) * 16 + y) * 16 + x;
        const std::int64_t i1 = (std::int64_t(z) * 16 + y) * 16 + x + 8;
        std::swap(b.data[i0], b.data[i1]);
      }
  {
    Tape<float> t;
    Value<float> la = disc.forward(t, t.leaf(a, false));
    Value<float> lb = disc.forward(t, t.leaf(b, false));
    CHECK(la.array()[0] != lb.array()[0]);
  }
  {
    // zero the positional table: permuting patches no longer matters
    Param<float>* pos = disc.params().find("pos_embed_9");
    REQUIRE(pos != nullptr);
    pos->value.setZero();
    Tape<float> t;
    Value<float> la = disc.forward(t, t.leaf(a, false));
    Value<float> lb = disc.forward(t, t.leaf(b, false));
    CHECK(la.array()[0] == doctest::Approx(lb.array()[0]).epsilon(1e-5));
  }
}

TEST_CASE("vit paper config instantiates with the stated capacity") {
  const ViTDiscriminatorConfig cfg = ViTDiscriminatorConfig::paper();
  CHECK(cfg.layers == 12);
  CHECK(cfg.hidden == 768);
  CHECK(cfg.mlp == 3072);
  CHECK(cfg.heads == 12);
  CHECK(cfg.patch_y == 38);  // literal paper patch dims
  CHECK(ViTDiscriminatorConfig::paper_tiling().patch_y == 32);  // 38 does not divide 96
}

TEST_CASE("prepare_disc_input: binary label matches morphology dilation bit-for-bit") {
  const Mask3 label = oracles::random_mask(Dims{9, 9, 9}, 0.05, 13);
  const Mask3 dilated = dilate(label, {2});
  TensorData<float> ct = random_input(Shape{1, 1, 9, 9, 9}, 13);
  TensorData<float> soft = TensorData<float>::zeros(Shape{1, 1, 9, 9, 9});
  for (std::size_t i = 0; i < label.data.size(); ++i) soft.data[i] = label.data[i];

  Tape<float> t;
  Value<float> out = prepare_disc_input(t.leaf(ct, false), t.leaf(soft, false));
  for (std::int64_t i = 0; i < dilated.dims.count(); ++i) {
    const float expect = dilated.data[static_cast<std::size_t>(i)] ? ct.data[i] : 0.0f;
    CHECK(out.array()[i] == expect);
  }
}

TEST_CASE("prepare_disc_input: zero label -> zero input; radius pinning") {
  Tape<float> t;
  TensorData<float> ct = random_input(Shape{1, 1, 7, 7, 7}, 14);
  Value<float> zero = t.leaf(TensorData<float>::zeros(Shape{1, 1, 7, 7, 7}), false);
  Value<float> out = prepare_disc_input(t.leaf(ct, false), zero);
  for (Eigen::Index i = 0; i < out.array().size(); ++i) CHECK(out.array()[i] == 0.0f);

  CHECK_THROWS_AS(prepare_disc_input(t.leaf(ct, false), zero, 3), DomainError);
  CHECK_NOTHROW(prepare_disc_input(t.leaf(ct, false), zero, 3, true));
}

TEST_CASE("generator init is deterministic per seed and name-keyed") {
  Generator<float> a(GeneratorConfig::toy(), 7);
  Generator<float> b(GeneratorConfig::toy(), 7);
  Generator<float> c(GeneratorConfig::toy(), 8);
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    CHECK(a.params().items()[i]->value.isApprox(b.params().items()[i]->value));
  }
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    any_diff = any_diff || !a.params().items()[i]->value.isApprox(c.params().items()[i]->value);
  }
  CHECK(any_diff);
}
