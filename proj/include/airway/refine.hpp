#pragma once

#include <string>

#include "airway/nets.hpp"
#include "airway/patching.hpp"
#include "airway/volume.hpp"

namespace airway {

struct RefineConfig {
  PatchDims patch_dims{24, 24, 24};
  StitchMode stitch_mode = StitchMode::Mean;
  bool apply_lcc = true;   // largest connected component postprocess (26)
  int threads = 1;         // patch inference parallelism; result-invariant
};

/// Deployment path: sliding-window generator inference with 50% overlap,
/// stitching in the tanh domain, threshold at 0, then largest connected
/// component. Cases smaller than the patch are reflect-padded and cropped
/// back afterwards. Deterministic regardless of `threads`.
Mask3 refine_case(const Volume3& ct, const Mask3& preliminary, Generator<float>& gen,
                  const RefineConfig& cfg);

/// The stitched soft (tanh-domain) output before threshold/LCC; exposed for
/// diagnostics and tests.
Volume3 refine_soft(const Volume3& ct, const Mask3& preliminary, Generator<float>& gen,
                    const RefineConfig& cfg);

}  // namespace airway
