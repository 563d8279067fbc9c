#pragma once

#include <utility>
#include <vector>

#include "airway/volume.hpp"

namespace airway {

struct PatchDims {
  int px = 0, py = 0, pz = 0;
  bool operator==(const PatchDims&) const = default;
};

struct PatchOrigin {
  int x = 0, y = 0, z = 0;
};

/// Sliding-window grid with 50% overlap: stride is exactly half the patch
/// size per axis; the last window is clamped to end at the volume boundary.
struct PatchGrid {
  PatchDims patch;
  Dims source;
  std::vector<PatchOrigin> origins;

  static PatchGrid make(Dims source, PatchDims patch);
};

enum class StitchMode { Mean, BinaryVote };

std::vector<std::pair<PatchOrigin, Volume3>> extract(const Volume3& vol, const PatchGrid& grid);

/// Recombine soft patches into a full volume. Mean mode averages every
/// contribution; BinaryVote thresholds each patch at 0 and takes a majority
/// per voxel (ties count as foreground).
Volume3 stitch(const std::vector<std::pair<PatchOrigin, Volume3>>& patches, Dims full_dims,
               StitchMode mode = StitchMode::Mean);

/// Reflect-pad a volume up to at least the given dims (used when a case is
/// smaller than the patch size); `crop` undoes it.
Volume3 reflect_pad(const Volume3& v, Dims target);
Volume3 crop(const Volume3& v, Dims target);

}  // namespace airway
