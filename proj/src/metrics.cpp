#include "airway/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace airway {

MetricReport overlap_metrics(const Mask3& pred, const Mask3& gt) {
  if (!(pred.dims == gt.dims)) throw ShapeError("overlap_metrics: dims mismatch");
  MetricReport r;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool g = gt.data[i] != 0;
    r.tp += p && g;
    r.fp += p && !g;
    r.fn += !p && g;
  }
  const std::int64_t uni = r.tp + r.fp + r.fn;
  r.iou = uni > 0 ? static_cast<double>(r.tp) / static_cast<double>(uni) : 1.0;
  r.dice = uni > 0 ? 2.0 * static_cast<double>(r.tp) / static_cast<double>(uni + r.tp) : 1.0;
  r.precision = (r.tp + r.fp) > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
  const std::int64_t gt_count = r.tp + r.fn;
  if (gt_count > 0) {
    r.leakage = static_cast<double>(r.fp) / static_cast<double>(gt_count);
    r.amr = static_cast<double>(r.fn) / static_cast<double>(gt_count);
  }
  return r;
}

ClDiceResult cl_dice(const Mask3& pred, const Mask3& gt) {
  if (!(pred.dims == gt.dims)) throw ShapeError("cl_dice: dims mismatch");
  const Mask3 sp = skeletonize(pred).mask;
  const Mask3 sl = skeletonize(gt).mask;

  std::int64_t sp_count = 0, sl_count = 0, sp_in_gt = 0, sl_in_pred = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    sp_count += sp.data[i];
    sl_count += sl.data[i];
    sp_in_gt += sp.data[i] && gt.data[i];
    sl_in_pred += sl.data[i] && pred.data[i];
  }

  ClDiceResult r;
  if (sp_count == 0 || sl_count == 0) {
    r.degenerate = true;
    return r;
  }
  r.t_prec = static_cast<double>(sp_in_gt) / static_cast<double>(sp_count);
  r.t_sens = static_cast<double>(sl_in_pred) / static_cast<double>(sl_count);
  const double denom = r.t_prec + r.t_sens;
  r.value = denom > 0 ? 2.0 * r.t_prec * r.t_sens / denom : 0.0;
  return r;
}

double continuity_score(const Mask3& pred, const Skeleton& gt_centreline) {
  const Mask3& cl = gt_centreline.mask;
  if (!(pred.dims == cl.dims)) throw ShapeError("continuity_score: dims mismatch");
  std::int64_t total = 0, covered = 0;
  for (std::size_t i = 0; i < cl.data.size(); ++i) {
    if (!cl.data[i]) continue;
    ++total;
    covered += pred.data[i] != 0;
  }
  if (total == 0) throw DomainError("continuity_score: empty centreline");
  return static_cast<double>(covered) / static_cast<double>(total);
}

TreeMetrics tree_metrics(const Mask3& pred, const Mask3& gt) {
  if (!(pred.dims == gt.dims)) throw ShapeError("tree_metrics: dims mismatch");
  const Skeleton skel = skeletonize(gt);
  if (skel.mask.empty_mask()) throw DomainError("tree_metrics: ground truth has empty skeleton");
  const TreeGraph tree = decompose(skel, gt.spacing);

  TreeMetrics r;
  r.total_branches = static_cast<int>(tree.branches.size());

  auto coord = [&](std::int64_t i) {
    const Dims& d = gt.dims;
    return std::array<int, 3>{static_cast<int>(i % d.nx), static_cast<int>((i / d.nx) % d.ny),
                              static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny))};
  };
  for (const TreeBranch& br : tree.branches) {
    for (std::size_t k = 1; k < br.voxels.size(); ++k) {
      const auto a = coord(br.voxels[k - 1]);
      const auto b = coord(br.voxels[k]);
      const double dx = (a[0] - b[0]) * gt.spacing.sx;
      const double dy = (a[1] - b[1]) * gt.spacing.sy;
      const double dz = (a[2] - b[2]) * gt.spacing.sz;
      const double cost = std::sqrt(dx * dx + dy * dy + dz * dz);
      r.total_length += cost;
      if (pred.data[br.voxels[k - 1]] && pred.data[br.voxels[k]]) {
        r.detected_length += cost;
      }
    }
  }
  r.dlr = r.total_length > 0 ? r.detected_length / r.total_length : 0.0;

  const std::vector<std::int32_t> regions = branch_regions(gt, tree);
  std::vector<std::int64_t> region_size(tree.branches.size() + 1, 0);
  std::vector<std::int64_t> region_covered(tree.branches.size() + 1, 0);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i] == 0) continue;
    ++region_size[regions[i]];
    region_covered[regions[i]] += pred.data[i] != 0;
  }
  for (std::size_t b = 1; b < region_size.size(); ++b) {
    if (region_size[b] == 0) continue;
    const double ratio = static_cast<double>(region_covered[b]) / static_cast<double>(region_size[b]);
    if (ratio >= 0.8) ++r.detected_branches;
  }
  r.dbr = r.total_branches > 0
              ? static_cast<double>(r.detected_branches) / static_cast<double>(r.total_branches)
              : 0.0;
  return r;
}

namespace {

double normal_sf_two_sided(double z) {
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: sample lengths differ");
  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }

  WilcoxonResult r;
  r.n_effective = static_cast<int>(diffs.size());
  if (diffs.empty()) {
    r.p_value = 1.0;  // degenerate: all paired differences are zero
    r.exact = true;
    return r;
  }
  if (r.n_effective < 5) {
    throw DomainError("wilcoxon: need >= 5 nonzero differences");
  }

  const int n = r.n_effective;
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int i, int j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });

  // Average ranks for ties, kept integral by doubling.
  std::vector<std::int64_t> rank2(n, 0);
  std::vector<std::int64_t> tie_sizes;
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const std::int64_t avg2 = (static_cast<std::int64_t>(i) + 1 + j + 1);  // 2 * mean rank
    for (int k = i; k <= j; ++k) rank2[order[k]] = avg2;
    tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }

  std::int64_t w_plus2 = 0, w_minus2 = 0;
  for (int k = 0; k < n; ++k) {
    if (diffs[k] > 0) w_plus2 += rank2[k];
    else w_minus2 += rank2[k];
  }
  r.statistic = 0.5 * static_cast<double>(std::min(w_plus2, w_minus2));

  if (n <= 25) {
    // Exact null distribution of W+ (in doubled-rank units) by subset DP;
    // equivalent to enumerating all 2^n sign assignments.
    const std::int64_t max2 = std::accumulate(rank2.begin(), rank2.end(), std::int64_t{0});
    std::vector<std::uint64_t> count(static_cast<std::size_t>(max2) + 1, 0);
    count[0] = 1;
    for (int k = 0; k < n; ++k) {
      for (std::int64_t s = max2; s >= rank2[k]; --s) {
        count[s] += count[s - rank2[k]];
      }
    }
    const double total = std::ldexp(1.0, n);  // 2^n
    double cdf_low = 0.0, cdf_high = 0.0;
    for (std::int64_t s = 0; s <= max2; ++s) {
      if (s <= w_plus2) cdf_low += static_cast<double>(count[s]);
      if (s >= w_plus2) cdf_high += static_cast<double>(count[s]);
    }
    r.p_value = std::min(1.0, 2.0 * std::min(cdf_low, cdf_high) / total);
    r.exact = true;
  } else {
    const double w = 0.5 * static_cast<double>(w_plus2);
    const double mean = n * (n + 1) / 4.0;
    double var = n * (n + 1) * (2.0 * n + 1) / 24.0;
    for (std::int64_t t : tie_sizes) {
      var -= static_cast<double>(t * t * t - t) / 48.0;
    }
    const double correction = w > mean ? -0.5 : (w < mean ? 0.5 : 0.0);
    const double z = (w - mean + correction) / std::sqrt(var);
    r.p_value = std::min(1.0, normal_sf_two_sided(z));
    r.exact = false;
  }
  return r;
}

}  // namespace airway
