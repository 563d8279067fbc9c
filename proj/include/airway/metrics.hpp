#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "airway/skeleton.hpp"
#include "airway/volume.hpp"

namespace airway {

struct MetricReport {
  double iou = 0.0;
  double dice = 0.0;
  double precision = 0.0;
  std::optional<double> leakage;  // unset when gt is empty
  std::optional<double> amr;      // unset when gt is empty
  std::int64_t tp = 0, fp = 0, fn = 0;
};

/// Voxel-overlap metrics. Leakage = FP / |gt|, AMR = FN / |gt|; both are
/// left unset (never silently 0) when the ground truth is empty.
MetricReport overlap_metrics(const Mask3& pred, const Mask3& gt);

struct ClDiceResult {
  double value = 0.0;
  double t_prec = 0.0;
  double t_sens = 0.0;
  bool degenerate = false;  // one of the skeletons was empty
};

/// Centreline Dice: harmonic mean of topology precision and sensitivity,
/// computed with hard skeletons (topological thinning).
ClDiceResult cl_dice(const Mask3& pred, const Mask3& gt);

/// Fraction of ground-truth centreline voxels covered by the prediction.
double continuity_score(const Mask3& pred, const Skeleton& gt_centreline);

struct TreeMetrics {
  double dlr = 0.0;
  double dbr = 0.0;
  double detected_length = 0.0;  // L_X
  double total_length = 0.0;     // L_Y
  int detected_branches = 0;     // N_X
  int total_branches = 0;        // N_Y
};

/// Detected length ratio / detected branch ratio over the ground-truth
/// centreline tree. A centreline voxel is detected iff it lies inside
/// `pred`; detected length accumulates chamfer step costs of detected
/// consecutive pairs. A branch is detected iff the covered fraction of its
/// nearest-branch region is >= 0.8.
TreeMetrics tree_metrics(const Mask3& pred, const Mask3& gt);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;
  int n_effective = 0;  // pairs remaining after dropping zero differences
  bool exact = false;
};

/// Two-sided Wilcoxon signed-rank test over paired samples. Exact null
/// distribution for n <= 25, normal approximation with continuity and tie
/// correction beyond. Requires >= 5 nonzero differences; all-zero
/// differences degenerate to p = 1.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

}  // namespace airway
