#pragma once

// Independent oracles for derived expected values. These deliberately avoid
// the library's implementation paths: flood fill instead of union-find,
// per-voxel neighborhood scans instead of separable dilation, nested loops
// instead of GEMM convolution, full sign enumeration instead of the DP.

#include <cstdint>
#include <span>
#include <vector>

#include "airway/autodiff.hpp"
#include "airway/volume.hpp"

namespace oracles {

/// BFS flood-fill component count.
int flood_fill_components(const airway::Mask3& m, int connectivity);

/// Box dilation by scanning the full Chebyshev neighborhood of each voxel.
airway::Mask3 brute_force_dilate(const airway::Mask3& m, int radius);

struct OverlapCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
};
OverlapCounts enumerate_overlap(const airway::Mask3& pred, const airway::Mask3& gt);

/// Direct convolution, canonical accumulation order (c, kz, ky, kx).
airway::ad::TensorData<double> conv3d_reference(const airway::ad::TensorData<double>& x,
                                                const airway::ad::TensorData<double>& w,
                                                const airway::ad::TensorData<double>& bias,
                                                int stride, int pad);

/// Two-sided Wilcoxon p by enumerating all 2^n sign assignments (n <= ~16).
double wilcoxon_enumerate_p(std::span<const double> a, std::span<const double> b);

/// Seeded random mask over the given dims with foreground probability p.
airway::Mask3 random_mask(airway::Dims dims, double p, std::uint64_t seed);

/// Straight tube fixture along an axis, given centre, radius; plus tree
/// fixtures used by several suites.
airway::Mask3 straight_tube(airway::Dims dims, int radius, airway::Axis axis);

}  // namespace oracles
