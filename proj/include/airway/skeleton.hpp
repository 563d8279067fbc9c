#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "airway/volume.hpp"

namespace airway {

/// One-voxel-wide centreline mask produced by topological thinning.
struct Skeleton {
  Mask3 mask;
  Dims source_dims;
};

/// Topology-preserving 3-D thinning (26-connected object, 6-connected
/// background). Iterates the six face directions per pass, deleting simple
/// border points (Euler-invariant, locally 26-connected, not endpoints)
/// with a sequential recheck, until stable. Deterministic scan order.
Skeleton skeletonize(const Mask3& m);

struct TreeNode {
  enum class Kind { Endpoint, Branchpoint, Isolated, CycleRoot };
  int id = 0;
  Kind kind = Kind::Endpoint;
  std::vector<std::int64_t> voxels;  // linear indices; >1 for junction clusters
};

struct TreeBranch {
  int id = 0;        // 1-based
  int node_a = 0;    // TreeNode ids
  int node_b = 0;
  std::vector<std::int64_t> voxels;  // polyline incl. attach voxels at both ends
  double length = 0.0;               // chamfer steps scaled by spacing
};

struct TreeGraph {
  Dims dims;
  Spacing spacing;
  std::vector<TreeNode> nodes;
  std::vector<TreeBranch> branches;
  int component_count = 0;
  int isolated_voxels = 0;  // single-voxel components (zero-branch)

  double total_length() const;
  std::string to_json() const;
};

/// Decompose a thin skeleton into nodes (endpoints, branch-point clusters)
/// and branch polylines with Euclidean step lengths.
TreeGraph decompose(const Skeleton& s, Spacing spacing);

/// Assign every foreground voxel of `gt` the id (1-based) of the branch with
/// the nearest centreline voxel; ties go to the smaller branch id.
/// Background voxels get 0.
std::vector<std::int32_t> branch_regions(const Mask3& gt, const TreeGraph& tree);

/// Euler characteristic of the cubical complex spanned by foreground voxels
/// (vertices - edges + faces - cubes). Used as a topology oracle in tests.
std::int64_t euler_characteristic(const Mask3& m);

}  // namespace airway
