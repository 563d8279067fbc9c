#pragma once

#include <cstdint>
#include <vector>

#include "airway/volume.hpp"

namespace airway {

/// Cubic (box) structuring element of Chebyshev radius `radius`.
/// The 5x5x5 kernel used for discriminator input dilation is radius 2.
struct StructuringElement {
  int radius = 0;
};

/// Box dilation: output voxel is 1 iff any input voxel within the
/// Chebyshev-radius box is 1. Borders clip.
Mask3 dilate(const Mask3& m, StructuringElement se);

struct ComponentLabels {
  std::vector<std::int32_t> labels;  // 0 = background, components 1..K
  std::vector<std::int64_t> sizes;   // sizes[k-1] = voxel count of component k
  int count = 0;                     // K
};

/// Two-pass union-find labeling. Labels are assigned in scan order
/// (x fastest), so component 1 contains the smallest foreground index.
ComponentLabels connected_components(const Mask3& m, int connectivity);

/// Keep only the largest connected component (ties: smallest label id,
/// i.e. the component whose minimum linear voxel index is smallest).
Mask3 largest_component(const Mask3& m, int connectivity = 26);

}  // namespace airway
