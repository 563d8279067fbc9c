#include "airway/refine.hpp"

#include <algorithm>

#include "airway/morphology.hpp"
#include "airway/parallel.hpp"

namespace airway {

using namespace ad;

namespace {

Volume3 mask_as_volume(const Mask3& m) {
  Volume3 v(m.dims, m.spacing);
  for (std::size_t i = 0; i < m.data.size(); ++i) v.data[i] = static_cast<float>(m.data[i]);
  return v;
}

}  // namespace

Volume3 refine_soft(const Volume3& ct, const Mask3& preliminary, Generator<float>& gen,
                    const RefineConfig& cfg) {
  if (!(ct.dims == preliminary.dims)) throw ShapeError("refine: ct/preliminary dims differ");
  const Dims orig = ct.dims;
  const Dims target{std::max(orig.nx, cfg.patch_dims.px), std::max(orig.ny, cfg.patch_dims.py),
                    std::max(orig.nz, cfg.patch_dims.pz)};
  const Volume3 ct_p = reflect_pad(ct, target);
  const Volume3 pre_p = reflect_pad(mask_as_volume(preliminary), target);

  const PatchGrid grid = PatchGrid::make(ct_p.dims, cfg.patch_dims);
  const auto ct_patches = extract(ct_p, grid);
  const auto pre_patches = extract(pre_p, grid);

  std::vector<std::pair<PatchOrigin, Volume3>> soft(grid.origins.size());
  const PatchDims pd = cfg.patch_dims;
  const std::int64_t spatial = std::int64_t(pd.px) * pd.py * pd.pz;
  parallel_for(static_cast<int>(grid.origins.size()), cfg.threads, [&](int i) {
    Tape<float> tape;
    TensorData<float> in = TensorData<float>::zeros(Shape{1, 2, pd.pz, pd.py, pd.px});
    for (std::int64_t k = 0; k < spatial; ++k) {
      in.data[k] = ct_patches[static_cast<std::size_t>(i)].second.data[static_cast<std::size_t>(k)];
      in.data[spatial + k] =
          pre_patches[static_cast<std::size_t>(i)].second.data[static_cast<std::size_t>(k)];
    }
    auto outs = gen.forward(tape, tape.leaf(std::move(in), false), /*frozen=*/true);
    Volume3 patch(Dims{pd.px, pd.py, pd.pz}, ct.spacing);
    for (std::int64_t k = 0; k < spatial; ++k) {
      patch.data[static_cast<std::size_t>(k)] = outs.final_out.array()[k];
    }
    soft[static_cast<std::size_t>(i)] = {grid.origins[static_cast<std::size_t>(i)],
                                         std::move(patch)};
  });

  Volume3 stitched = stitch(soft, ct_p.dims, cfg.stitch_mode);
  stitched.spacing = ct.spacing;
  if (!(ct_p.dims == orig)) stitched = crop(stitched, orig);
  return stitched;
}

Mask3 refine_case(const Volume3& ct, const Mask3& preliminary, Generator<float>& gen,
                  const RefineConfig& cfg) {
  const Volume3 soft = refine_soft(ct, preliminary, gen, cfg);
  Mask3 out(soft.dims, ct.spacing);
  for (std::size_t i = 0; i < soft.data.size(); ++i) {
    out.data[i] = soft.data[i] > 0.0f ? 1 : 0;  // tanh domain, threshold fixed at 0
  }
  if (cfg.apply_lcc) out = largest_component(out, 26);
  return out;
}

}  // namespace airway
