#include "airway/metrics.hpp"
#include "airway/morphology.hpp"
#include "airway/refine.hpp"
#include "airway/rng.hpp"
#include "airway/skeleton.hpp"
#include "airway/synth.hpp"
#include "airway/train.hpp"
#include "doctest.h"

using namespace airway;

namespace {

RefineConfig small_cfg() {
  RefineConfig cfg;
  cfg.patch_dims = {16, 16, 16};
  return cfg;
}

SynthCase small_case(std::uint64_t seed) {
  TreeSpec ts;
  ts.dims = {32, 32, 32};
  ts.depth = 1;
  ts.root_radius = 2.0;
  ts.branch_length_min = 8;
  ts.branch_length_max = 10;
  ts.seed = seed;
  return generate(ts);
}

}  // namespace

TEST_CASE("zero-weight generator refines to an empty mask (strict threshold at 0)") {
  Generator<float> gen(GeneratorConfig::toy(), 1);
  for (auto& p : gen.params().items()) p->value.setZero();
  const SynthCase c = small_case(1);
  const Mask3 out = refine_case(c.image, corrupt(c.gt, {}), gen, small_cfg());
  CHECK(out.dims == c.image.dims);
  CHECK(out.popcount() == 0);
}

TEST_CASE("refine is deterministic and independent of patch-level parallelism") {
  Generator<float> gen(GeneratorConfig::toy(), 2);
  const SynthCase c = small_case(2);
  CorruptionSpec cs;
  cs.breakage_count = 1;
  cs.breakage_gap = 3;
  cs.seed = 3;
  const Mask3 prelim = corrupt(c.gt, cs);

  RefineConfig serial = small_cfg();
  serial.threads = 1;
  RefineConfig threaded = small_cfg();
  threaded.threads = 4;
  const Mask3 a = refine_case(c.image, prelim, gen, serial);
  const Mask3 b = refine_case(c.image, prelim, gen, threaded);
  const Mask3 again = refine_case(c.image, prelim, gen, serial);
  CHECK(a.data == b.data);
  CHECK(a.data == again.data);
}

TEST_CASE("refine output is a single component post-LCC; --no-lcc may keep more") {
  Generator<float> gen(GeneratorConfig::toy(), 3);
  const SynthCase c = small_case(4);
  const Mask3 prelim = corrupt(c.gt, {});
  RefineConfig cfg = small_cfg();
  const Mask3 out = refine_case(c.image, prelim, gen, cfg);
  if (out.popcount() > 0) {
    CHECK(connected_components(out, 26).count == 1);
  }

  cfg.apply_lcc = false;
  const Mask3 raw = refine_case(c.image, prelim, gen, cfg);
  // LCC never adds voxels
  const Mask3 lcc = largest_component(raw, 26);
  for (std::size_t i = 0; i < lcc.data.size(); ++i) {
    if (lcc.data[i]) CHECK(raw.data[i] == 1);
  }
}

TEST_CASE("refine pads cases smaller than the patch and crops back") {
  Generator<float> gen(GeneratorConfig::toy(), 4);
  TreeSpec ts;
  ts.dims = {12, 12, 20};  // smaller than the 16^3 patch on two axes
  ts.depth = 0;
  ts.root_radius = 1.5;
  ts.branch_length_min = 8;
  ts.branch_length_max = 10;
  ts.seed = 5;
  const SynthCase c = generate(ts);
  const Mask3 out = refine_case(c.image, corrupt(c.gt, {}), gen, small_cfg());
  CHECK(out.dims == c.image.dims);
}

TEST_CASE("stitched soft output lies in the tanh range and LCC never adds voxels") {
  Generator<float> gen(GeneratorConfig::toy(), 5);
  const SynthCase c = small_case(6);
  const Mask3 prelim = corrupt(c.gt, {});
  const Volume3 soft = refine_soft(c.image, prelim, gen, small_cfg());
  for (float f : soft.data) {
    CHECK(f >= -1.0f);
    CHECK(f <= 1.0f);
  }
  const Mask3 out = refine_case(c.image, prelim, gen, small_cfg());
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    if (out.data[i]) CHECK(soft.data[i] > 0.0f);
  }
}

TEST_CASE("refine rejects mismatched ct/preliminary dims") {
  Generator<float> gen(GeneratorConfig::toy(), 6);
  const SynthCase c = small_case(7);
  Mask3 wrong(Dims{16, 16, 16});
  CHECK_THROWS_AS(refine_case(c.image, wrong, gen, small_cfg()), ShapeError);
}

TEST_CASE("trained checkpoint repairs a breakage: components 2 -> 1, DLR increases") {
  // tiny single-tube dataset with one cut each; the supervised stack alone
  // learns the repair in a couple hundred steps
  Dataset data;
  for (int i = 0; i < 3; ++i) {
    const SynthCase c = small_case(100 + static_cast<std::uint64_t>(i));
    CorruptionSpec cs;
    cs.breakage_count = 1;
    cs.breakage_gap = 4;
    cs.seed = 200 + static_cast<std::uint64_t>(i);
    TrainCaseData item;
    item.id = "tube_" + std::to_string(i);
    item.ct = c.image;
    item.gt = c.gt;
    item.prelim = corrupt(c.gt, cs);
    item.centreline = skeletonize(c.gt).mask;
    for (std::int64_t k = 0; k < c.gt.dims.count(); ++k) {
      if (c.gt.data[k]) item.fg_voxels.push_back(k);
    }
    data.push_back(std::move(item));
  }

  TrainConfig cfg;
  cfg.epochs = 1000;
  cfg.max_steps = 200;
  cfg.decay_epochs = {};
  cfg.batch_size = 2;
  cfg.patch_dims = {16, 16, 16};
  cfg.seed = 77;
  cfg.gen = GeneratorConfig::toy();
  cfg.weights.delta = 0.0;
  cfg.weights.phi = {0.5, 0.75, 1.0};
  cfg.checkpoint_every = 1 << 20;
  Trainer trainer(cfg, data);
  for (int s = 0; s < 200; ++s) trainer.step(s / 2, s % 2);

  // held-out corrupted tube
  const SynthCase held = small_case(500);
  CorruptionSpec cs;
  cs.breakage_count = 1;
  cs.breakage_gap = 4;
  cs.seed = 600;
  const Mask3 prelim = corrupt(held.gt, cs);
  REQUIRE(connected_components(prelim, 26).count == 2);
  const double prelim_dlr = tree_metrics(prelim, held.gt).dlr;

  const Mask3 refined = refine_case(held.image, prelim, trainer.generator(), small_cfg());
  CHECK(connected_components(refined, 26).count == 1);
  CHECK(tree_metrics(refined, held.gt).dlr > prelim_dlr);
}

TEST_CASE("binary-vote stitch mode is available and deterministic") {
  Generator<float> gen(GeneratorConfig::toy(), 7);
  const SynthCase c = small_case(8);
  const Mask3 prelim = corrupt(c.gt, {});
  RefineConfig cfg = small_cfg();
  cfg.stitch_mode = StitchMode::BinaryVote;
  const Mask3 a = refine_case(c.image, prelim, gen, cfg);
  const Mask3 b = refine_case(c.image, prelim, gen, cfg);
  CHECK(a.data == b.data);
}
