#include "airway/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "airway/morphology.hpp"
#include "airway/rng.hpp"
#include "airway/skeleton.hpp"

namespace airway {

namespace {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
};

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double angle) {
  // Rodrigues rotation, axis must be unit length.
  const double c = std::cos(angle), s = std::sin(angle);
  return v * c + axis.cross(v) * s + axis * (axis.dot(v) * (1.0 - c));
}

struct Segment {
  Vec3 a, b;
  double radius = 1.0;
  int generation = 0;
  int parent = -1;  // index into the segment list
};

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.dot(ab);
  double t = len2 > 0 ? (p - a).dot(ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

bool segment_fits(const Segment& s, const Dims& d) {
  for (double t = 0.0; t <= 1.0; t += 0.125) {
    const Vec3 p = s.a + (s.b - s.a) * t;
    if (p.x - s.radius < 0.5 || p.x + s.radius > d.nx - 1.5) return false;
    if (p.y - s.radius < 0.5 || p.y + s.radius > d.ny - 1.5) return false;
    if (p.z - s.radius < 0.5 || p.z + s.radius > d.nz - 1.5) return false;
  }
  return true;
}

// Minimum distance between two segments, sampled along both.
double segment_gap(const Segment& s, const Segment& o) {
  double best = 1e30;
  for (double t = 0.0; t <= 1.0; t += 0.1) {
    const Vec3 p = s.a + (s.b - s.a) * t;
    best = std::min(best, point_segment_distance(p, o.a, o.b));
  }
  return best;
}

bool collides(const Segment& cand, const std::vector<Segment>& placed, int parent) {
  for (int i = 0; i < static_cast<int>(placed.size()); ++i) {
    // Parent, siblings and grandparent legitimately touch near the junction.
    if (i == parent || placed[i].parent == parent ||
        (parent >= 0 && placed[parent].parent == i)) {
      continue;
    }
    const double clearance = cand.radius + placed[i].radius + 1.5;
    if (segment_gap(cand, placed[i]) < clearance) return true;
  }
  return false;
}

std::vector<Segment> layout_tree(const TreeSpec& spec) {
  CounterRng rng(spec.seed, "layout");
  const Dims d = spec.dims;

  std::vector<Segment> segments;
  struct Pending {
    Vec3 start, dir;
    int generation;
    int parent;
    Vec3 split_normal;  // normal of the parent's bifurcation plane
  };
  std::vector<Pending> queue;

  const Vec3 root_start{d.nx / 2.0, d.ny / 2.0, 2.0 + spec.root_radius};
  const double tilt = rng.uniform(0.0, 0.08);
  const double tilt_az = rng.uniform(0.0, 2.0 * M_PI);
  const Vec3 root_dir =
      Vec3{std::sin(tilt) * std::cos(tilt_az), std::sin(tilt) * std::sin(tilt_az), std::cos(tilt)}
          .normalized();
  queue.push_back({root_start, root_dir, 0, -1, Vec3{1, 0, 0}});

  while (!queue.empty()) {
    const Pending p = queue.front();
    queue.erase(queue.begin());

    const double decay = std::pow(spec.radius_decay, p.generation);
    const double radius = std::max(1.0, spec.root_radius * decay);
    const double base_len = rng.uniform(spec.branch_length_min, spec.branch_length_max);
    const double length = std::max(4.0, base_len * decay);

    Segment seg;
    bool ok = false;
    Vec3 dir = p.dir;
    for (int attempt = 0; attempt < 48 && !ok; ++attempt) {
      seg = Segment{p.start, p.start + dir * length, radius, p.generation, p.parent};
      if (segment_fits(seg, d) && !collides(seg, segments, p.parent)) {
        ok = true;
        break;
      }
      // Deterministic retry: nudge toward the volume centre axis and shrink.
      const Vec3 centre{d.nx / 2.0, d.ny / 2.0, p.start.z + length};
      const Vec3 inward = (centre - p.start).normalized();
      const double blend = 0.25 + 0.05 * attempt;
      dir = (dir * (1.0 - blend) + inward * blend).normalized();
      seg.b = p.start + dir * std::max(4.0, length * (1.0 - 0.05 * attempt));
    }
    if (!ok) {
      throw DomainError("synthetic tree does not fit: generation " +
                        std::to_string(p.generation) + " out of bounds");
    }
    const int self = static_cast<int>(segments.size());
    segments.push_back(seg);

    if (p.generation < spec.depth) {
      // Children bifurcate in a plane that alternates between generations.
      Vec3 axis = p.split_normal - dir * p.split_normal.dot(dir);
      if (axis.norm() < 0.1) {
        axis = Vec3{0, 1, 0} - dir * dir.y;
      }
      axis = axis.normalized();
      const double az_jitter = rng.uniform(-0.3, 0.3);
      axis = rotate_about(axis, dir, az_jitter).normalized();

      const double a1 = rng.uniform(spec.angle_min_deg, spec.angle_max_deg) * M_PI / 180.0;
      const double a2 = rng.uniform(spec.angle_min_deg, spec.angle_max_deg) * M_PI / 180.0;
      const Vec3 d1 = rotate_about(dir, axis, a1).normalized();
      const Vec3 d2 = rotate_about(dir, axis, -a2).normalized();
      // Next generation splits roughly perpendicular to this plane.
      const Vec3 next_normal = dir.cross(axis).normalized();
      queue.push_back({seg.b, d1, p.generation + 1, self, next_normal});
      queue.push_back({seg.b, d2, p.generation + 1, self, next_normal});
    }
  }
  return segments;
}

}  // namespace

SynthCase generate(const TreeSpec& spec) {
  if (spec.radius_decay <= 0.0 || spec.radius_decay >= 1.0) {
    throw DomainError("generate: radius_decay must lie in (0,1)");
  }
  if (spec.depth < 0 || spec.root_radius < 1.0) {
    throw DomainError("generate: depth must be >= 0 and root_radius >= 1");
  }
  const std::vector<Segment> segments = layout_tree(spec);
  const Dims d = spec.dims;

  SynthCase out;
  out.gt = Mask3(d);
  out.image = Volume3(d);

  // Signed distance to the union of capsules (negative inside the lumen).
  std::vector<float> surface_dist(static_cast<std::size_t>(d.count()),
                                  std::numeric_limits<float>::max());
  for (const Segment& s : segments) {
    const double pad = s.radius + 2.5;  // room for the wall shell
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.x, s.b.x) - pad)));
    const int x1 = std::min(d.nx - 1, static_cast<int>(std::ceil(std::max(s.a.x, s.b.x) + pad)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.y, s.b.y) - pad)));
    const int y1 = std::min(d.ny - 1, static_cast<int>(std::ceil(std::max(s.a.y, s.b.y) + pad)));
    const int z0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.z, s.b.z) - pad)));
    const int z1 = std::min(d.nz - 1, static_cast<int>(std::ceil(std::max(s.a.z, s.b.z) + pad)));
    for (int z = z0; z <= z1; ++z)
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dist =
              point_segment_distance({double(x), double(y), double(z)}, s.a, s.b) - s.radius;
          const std::int64_t i = out.gt.index(x, y, z);
          surface_dist[i] = std::min(surface_dist[i], static_cast<float>(dist));
        }
  }

  const std::uint64_t image_stream = CounterRng::fnv1a("image");
  constexpr double kWall = 1.5;  // wall shell thickness in voxels
  for (std::int64_t i = 0; i < d.count(); ++i) {
    const float dist = surface_dist[i];
    // Per-voxel stream independent of iteration order.
    CounterRng per_voxel(spec.seed, image_stream + static_cast<std::uint64_t>(i));
    double hu;
    if (dist <= 0.0f) {
      out.gt.data[i] = 1;
      hu = per_voxel.normal(-1000.0, 50.0);
    } else if (dist <= kWall) {
      hu = per_voxel.normal(100.0, 50.0);
    } else {
      hu = per_voxel.normal(-850.0, 80.0);
    }
    const double rescaled = (hu - (-1100.0)) / (200.0 - (-1100.0));
    out.image.data[i] = static_cast<float>(std::clamp(rescaled, 0.0, 1.0));
  }
  return out;
}

namespace {

// Map every foreground voxel to its nearest skeleton voxel (index into cl).
std::vector<std::int32_t> nearest_centreline(const Mask3& gt,
                                             const std::vector<std::int64_t>& cl) {
  const Dims d = gt.dims;
  auto coord = [&](std::int64_t i) {
    return std::array<int, 3>{static_cast<int>(i % d.nx), static_cast<int>((i / d.nx) % d.ny),
                              static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny))};
  };
  std::vector<std::array<int, 3>> cl_coords(cl.size());
  for (std::size_t k = 0; k < cl.size(); ++k) cl_coords[k] = coord(cl[k]);

  std::vector<std::int32_t> nearest(gt.data.size(), -1);
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::int64_t i = gt.index(x, y, z);
        if (!gt.data[i]) continue;
        double best = 1e30;
        std::int32_t best_k = -1;
        for (std::size_t k = 0; k < cl_coords.size(); ++k) {
          const double dx = x - cl_coords[k][0];
          const double dy = y - cl_coords[k][1];
          const double dz = z - cl_coords[k][2];
          const double dist = dx * dx + dy * dy + dz * dz;
          if (dist < best) {
            best = dist;
            best_k = static_cast<std::int32_t>(k);
          }
        }
        nearest[i] = best_k;
      }
  return nearest;
}

}  // namespace

Mask3 corrupt(const Mask3& gt, const CorruptionSpec& spec) {
  if (gt.empty_mask()) throw DomainError("corrupt: empty ground truth");
  if (spec.branch_deletion_prob < 0 || spec.branch_deletion_prob > 1 ||
      spec.boundary_noise_prob < 0 || spec.boundary_noise_prob > 1) {
    throw DomainError("corrupt: probabilities must lie in [0,1]");
  }
  if (spec.breakage_gap < 1) throw DomainError("corrupt: breakage_gap must be >= 1");

  const Skeleton skel = skeletonize(gt);
  const TreeGraph tree = decompose(skel, gt.spacing);
  const Dims d = gt.dims;

  // Flatten the centreline with (branch, polyline position) bookkeeping.
  std::vector<std::int64_t> cl;
  std::vector<std::int32_t> cl_branch;
  std::vector<std::int32_t> cl_pos;
  {
    std::vector<std::uint8_t> seen(gt.data.size(), 0);
    for (const TreeBranch& br : tree.branches) {
      for (std::size_t k = 0; k < br.voxels.size(); ++k) {
        if (seen[br.voxels[k]]) continue;  // junction voxels stay with the first branch
        seen[br.voxels[k]] = 1;
        cl.push_back(br.voxels[k]);
        cl_branch.push_back(br.id);
        cl_pos.push_back(static_cast<std::int32_t>(k));
      }
    }
    // Isolated skeleton voxels: keep them assigned to no branch.
    for (const TreeNode& n : tree.nodes) {
      for (std::int64_t v : n.voxels) {
        if (!seen[v]) {
          seen[v] = 1;
          cl.push_back(v);
          cl_branch.push_back(0);
          cl_pos.push_back(0);
        }
      }
    }
  }
  const std::vector<std::int32_t> nearest = nearest_centreline(gt, cl);

  Mask3 out = gt;

  // --- Breakages -----------------------------------------------------------
  CounterRng break_rng(spec.seed, "breakage");
  const int margin = 2;  // keep cuts at least this far from junction voxels
  struct Cut {
    std::int32_t branch;
    std::int32_t lo, hi;  // polyline positions removed (inclusive)
  };
  std::vector<std::pair<std::int32_t, std::int32_t>> candidates;  // (branch id, centre pos)
  for (const TreeBranch& br : tree.branches) {
    const int size = static_cast<int>(br.voxels.size());
    for (int k = margin + spec.breakage_gap / 2; k + margin + spec.breakage_gap / 2 < size; ++k) {
      candidates.emplace_back(br.id, k);
    }
  }
  if (spec.breakage_count > static_cast<int>(candidates.size())) {
    throw DomainError("corrupt: breakage_count exceeds available interior positions (" +
                      std::to_string(candidates.size()) + ")");
  }
  std::vector<Cut> cuts;
  for (int c = 0; c < spec.breakage_count; ++c) {
    const std::size_t pick = static_cast<std::size_t>(
        break_rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1));
    const auto [branch, pos] = candidates[pick];
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
    cuts.push_back({branch, pos - spec.breakage_gap / 2, pos + (spec.breakage_gap - 1) / 2});
  }

  // --- Terminal-branch deletion -------------------------------------------
  // Terminal branches touch an endpoint node; the thickest such branch is
  // treated as the tree root and never deleted.
  CounterRng del_rng(spec.seed, "branch-deletion");
  std::vector<std::uint8_t> branch_deleted(tree.branches.size() + 1, 0);
  {
    std::vector<std::uint8_t> is_endpoint_node(tree.nodes.size() + 1, 0);
    for (const TreeNode& n : tree.nodes) {
      if (n.kind == TreeNode::Kind::Endpoint) is_endpoint_node[n.id] = 1;
    }
    auto local_thickness = [&](std::int64_t i) {
      const int cx = static_cast<int>(i % d.nx);
      const int cy = static_cast<int>((i / d.nx) % d.ny);
      const int cz = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
      for (int ring = 0; ring < 16; ++ring) {
        for (int dz = -ring; dz <= ring; ++dz)
          for (int dy = -ring; dy <= ring; ++dy)
            for (int dx = -ring; dx <= ring; ++dx) {
              if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
              const int x = cx + dx, y = cy + dy, z = cz + dz;
              if (x < 0 || y < 0 || z < 0 || x >= d.nx || y >= d.ny || z >= d.nz) return ring;
              if (!gt.at(x, y, z)) return ring;
            }
      }
      return 16;
    };
    std::vector<int> terminal_ids;
    double best_thickness = -1.0;
    int root_branch = 0;
    for (const TreeBranch& br : tree.branches) {
      if (!is_endpoint_node[br.node_a] && !is_endpoint_node[br.node_b]) continue;
      terminal_ids.push_back(br.id);
      double mean = 0.0;
      for (std::int64_t v : br.voxels) mean += local_thickness(v);
      mean /= static_cast<double>(br.voxels.size());
      if (mean > best_thickness) {
        best_thickness = mean;
        root_branch = br.id;
      }
    }
    for (int id : terminal_ids) {
      const bool roll = del_rng.bernoulli(spec.branch_deletion_prob);
      if (id == root_branch) continue;  // keep the rng stream aligned regardless
      if (roll) branch_deleted[id] = 1;
    }
  }

  // Apply cuts and deletions through the nearest-centreline assignment, so
  // each removal takes out the full tube thickness.
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::int64_t i = gt.index(x, y, z);
        if (!gt.data[i]) continue;
        const std::int32_t k = nearest[i];
        if (k < 0) continue;
        const std::int32_t branch = cl_branch[k];
        const std::int32_t pos = cl_pos[k];
        if (branch > 0 && branch_deleted[branch]) {
          out.data[i] = 0;
          continue;
        }
        for (const Cut& cut : cuts) {
          if (cut.branch == branch && pos >= cut.lo && pos <= cut.hi) {
            out.data[i] = 0;
            break;
          }
        }
      }

  // --- Boundary noise -------------------------------------------------------
  if (spec.boundary_noise_prob > 0.0) {
    const Mask3 grown = dilate(out, StructuringElement{1});
    const std::uint64_t boundary_stream = CounterRng::fnv1a("boundary-noise");
    Mask3 jittered = out;
    for (std::int64_t i = 0; i < d.count(); ++i) {
      CounterRng vox(spec.seed, boundary_stream + static_cast<std::uint64_t>(i));
      if (!out.data[i] && grown.data[i]) {
        if (vox.bernoulli(spec.boundary_noise_prob)) jittered.data[i] = 1;
      } else if (out.data[i]) {
        // surface voxel: any 6-neighbour background
        const int x = static_cast<int>(i % d.nx);
        const int y = static_cast<int>((i / d.nx) % d.ny);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
        bool surface = false;
        const int offs[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
        for (const auto& o : offs) {
          const int sx = x + o[0], sy = y + o[1], sz = z + o[2];
          if (sx < 0 || sy < 0 || sz < 0 || sx >= d.nx || sy >= d.ny || sz >= d.nz ||
              !out.at(sx, sy, sz)) {
            surface = true;
            break;
          }
        }
        if (surface && vox.bernoulli(spec.boundary_noise_prob)) jittered.data[i] = 0;
      }
    }
    out = std::move(jittered);
  }
  return out;
}

}  // namespace airway
