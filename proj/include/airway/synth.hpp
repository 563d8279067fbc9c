#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "airway/volume.hpp"

namespace airway {

/// Branching-tube phantom: a binary tree of sphere-swept segments. Segment
/// lengths are sampled from `branch_length` and scaled like the radius
/// (decay^generation), keeping length/diameter roughly constant.
struct TreeSpec {
  Dims dims{48, 48, 48};
  int depth = 3;                   // bifurcation generations
  double root_radius = 2.5;        // voxels
  double radius_decay = 0.75;      // per generation, in (0,1)
  double branch_length_min = 10.0;
  double branch_length_max = 14.0;
  double angle_min_deg = 25.0;     // bifurcation half-angle range
  double angle_max_deg = 40.0;
  std::uint64_t seed = 0;
};

struct CorruptionSpec {
  int breakage_count = 0;
  int breakage_gap = 4;             // voxels of centreline removed per cut
  double branch_deletion_prob = 0;  // applied to terminal branches
  double boundary_noise_prob = 0;
  std::uint64_t seed = 0;
};

struct SynthCase {
  Volume3 image;  // CT-like intensities rescaled to [0,1]
  Mask3 gt;
};

/// Deterministic given the seed. The ground truth is a single 26-connected
/// component; the image shows dark lumen, bright walls, noisy parenchyma.
SynthCase generate(const TreeSpec& spec);

/// Degrade a ground-truth mask into a "preliminary segmentation": cut
/// breakage gaps at interior branch positions, delete terminal branches,
/// and jitter the boundary. Output voxels are a subset of the input plus
/// boundary-noise voxels. Deterministic given the seed.
Mask3 corrupt(const Mask3& gt, const CorruptionSpec& spec);

}  // namespace airway
