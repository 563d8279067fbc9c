#include "airway/skeleton.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "airway/morphology.hpp"

namespace airway {

namespace {

// Neighborhood bit layout: bit i = offset (dx,dy,dz), i = (dx+1) + 3(dy+1) + 9(dz+1).
// Bit 13 is the center voxel.
constexpr int kCenterBit = 13;

constexpr int bit_of(int dx, int dy, int dz) {
  return (dx + 1) + 3 * (dy + 1) + 9 * (dz + 1);
}

struct NeighborTables {
  // For each of the 8 cube corners: the 7 neighbor voxels sharing that vertex.
  std::array<std::uint32_t, 8> corner;
  // For each of the 12 cube edges: the 3 neighbor voxels sharing that edge.
  std::array<std::uint32_t, 12> edge;
  // For each of the 6 cube faces: the 1 neighbor voxel sharing that face.
  std::array<std::uint32_t, 6> face;
  // 26-adjacency between neighborhood positions (Chebyshev distance <= 1).
  std::array<std::uint32_t, 27> adj;

  NeighborTables() {
    corner.fill(0);
    edge.fill(0);
    face.fill(0);
    adj.fill(0);

    int c = 0;
    for (int a : {0, 1})
      for (int b : {0, 1})
        for (int g : {0, 1}) {
          std::uint32_t m = 0;
          for (int dx : {2 * a - 1, 0})
            for (int dy : {2 * b - 1, 0})
              for (int dz : {2 * g - 1, 0}) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                m |= 1u << bit_of(dx, dy, dz);
              }
          corner[c++] = m;
        }

    int e = 0;
    // Edges parallel to x, indexed by (b,g); sharing cubes differ in y/z only.
    for (int b : {0, 1})
      for (int g : {0, 1}) {
        std::uint32_t m = 0;
        for (int dy : {2 * b - 1, 0})
          for (int dz : {2 * g - 1, 0}) {
            if (dy == 0 && dz == 0) continue;
            m |= 1u << bit_of(0, dy, dz);
          }
        edge[e++] = m;
      }
    for (int a : {0, 1})  // parallel to y
      for (int g : {0, 1}) {
        std::uint32_t m = 0;
        for (int dx : {2 * a - 1, 0})
          for (int dz : {2 * g - 1, 0}) {
            if (dx == 0 && dz == 0) continue;
            m |= 1u << bit_of(dx, 0, dz);
          }
        edge[e++] = m;
      }
    for (int a : {0, 1})  // parallel to z
      for (int b : {0, 1}) {
        std::uint32_t m = 0;
        for (int dx : {2 * a - 1, 0})
          for (int dy : {2 * b - 1, 0}) {
            if (dx == 0 && dy == 0) continue;
            m |= 1u << bit_of(dx, dy, 0);
          }
        edge[e++] = m;
      }

    int f = 0;
    for (auto [dx, dy, dz] : std::array<std::array<int, 3>, 6>{
             {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}}) {
      face[f++] = 1u << bit_of(dx, dy, dz);
    }

    for (int i = 0; i < 27; ++i) {
      const int ix = i % 3 - 1, iy = (i / 3) % 3 - 1, iz = i / 9 - 1;
      for (int j = 0; j < 27; ++j) {
        if (i == j) continue;
        const int jx = j % 3 - 1, jy = (j / 3) % 3 - 1, jz = j / 9 - 1;
        if (std::abs(ix - jx) <= 1 && std::abs(iy - jy) <= 1 && std::abs(iz - jz) <= 1) {
          adj[i] |= 1u << j;
        }
      }
    }
  }
};

const NeighborTables& tables() {
  static const NeighborTables t;
  return t;
}

// Foreground configuration of the 3x3x3 neighborhood as a 27-bit mask.
std::uint32_t gather(const std::vector<std::uint8_t>& fg, const Dims& d, int x, int y, int z) {
  std::uint32_t m = 0;
  for (int dz = -1; dz <= 1; ++dz) {
    const int sz = z + dz;
    if (sz < 0 || sz >= d.nz) continue;
    for (int dy = -1; dy <= 1; ++dy) {
      const int sy = y + dy;
      if (sy < 0 || sy >= d.ny) continue;
      const std::int64_t row = static_cast<std::int64_t>(d.nx) * (sy + static_cast<std::int64_t>(d.ny) * sz);
      for (int dx = -1; dx <= 1; ++dx) {
        const int sx = x + dx;
        if (sx < 0 || sx >= d.nx) continue;
        if (fg[row + sx]) m |= 1u << bit_of(dx, dy, dz);
      }
    }
  }
  return m;
}

// Change of the Euler characteristic if the center voxel were deleted:
// cells (vertices/edges/faces) of the center cube that no other foreground
// cube shares disappear together with the cube itself.
int euler_delta(std::uint32_t cfg) {
  const NeighborTables& t = tables();
  int v_excl = 0, e_excl = 0, f_excl = 0;
  for (std::uint32_t m : t.corner)
    if ((cfg & m) == 0) ++v_excl;
  for (std::uint32_t m : t.edge)
    if ((cfg & m) == 0) ++e_excl;
  for (std::uint32_t m : t.face)
    if ((cfg & m) == 0) ++f_excl;
  return -v_excl + e_excl - f_excl + 1;
}

// Number of 26-connected components among the foreground neighbors
// (center excluded), with adjacency restricted to the neighborhood.
int neighbor_components(std::uint32_t cfg) {
  const NeighborTables& t = tables();
  std::uint32_t rest = cfg & ~(1u << kCenterBit);
  int comps = 0;
  while (rest) {
    ++comps;
    std::uint32_t frontier = rest & (~rest + 1);  // lowest set bit
    std::uint32_t comp = 0;
    while (frontier) {
      comp |= frontier;
      std::uint32_t grow = 0;
      std::uint32_t f = frontier;
      while (f) {
        const int i = std::countr_zero(f);
        f &= f - 1;
        grow |= t.adj[i];
      }
      frontier = grow & rest & ~comp;
    }
    rest &= ~comp;
  }
  return comps;
}

bool is_endpoint(std::uint32_t cfg) {
  return std::popcount(cfg & ~(1u << kCenterBit)) == 1;
}

bool is_simple(std::uint32_t cfg) {
  return euler_delta(cfg) == 0 && neighbor_components(cfg) == 1;
}

constexpr std::array<std::array<int, 3>, 6> kDirections = {
    {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}}};

}  // namespace

Skeleton skeletonize(const Mask3& m) {
  const Dims d = m.dims;
  std::vector<std::uint8_t> fg = m.data;

  std::vector<std::int64_t> candidates;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& dir : kDirections) {
      candidates.clear();
      for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
          for (int x = 0; x < d.nx; ++x) {
            const std::int64_t i = m.index(x, y, z);
            if (!fg[i]) continue;
            const int bx = x + dir[0], by = y + dir[1], bz = z + dir[2];
            const bool border = bx < 0 || by < 0 || bz < 0 || bx >= d.nx || by >= d.ny ||
                                bz >= d.nz || !fg[m.index(bx, by, bz)];
            if (!border) continue;
            const std::uint32_t cfg = gather(fg, d, x, y, z);
            if (is_endpoint(cfg)) continue;
            if (is_simple(cfg)) candidates.push_back(i);
          }
      // Sequential recheck: earlier deletions in this sub-pass may have
      // changed a candidate's neighborhood.
      for (std::int64_t i : candidates) {
        const int x = static_cast<int>(i % d.nx);
        const int y = static_cast<int>((i / d.nx) % d.ny);
        const int z = static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny));
        const std::uint32_t cfg = gather(fg, d, x, y, z);
        if (is_endpoint(cfg)) continue;
        if (!is_simple(cfg)) continue;
        fg[i] = 0;
        changed = true;
      }
    }
  }

  Skeleton s;
  s.source_dims = d;
  s.mask = Mask3(d, m.spacing);
  s.mask.data = std::move(fg);
  return s;
}

std::int64_t euler_characteristic(const Mask3& m) {
  const Dims d = m.dims;
  // Count cells of the cubical complex on the (nx+1)^3 lattice: a cell is
  // present iff at least one incident foreground voxel exists.
  auto fg = [&](int x, int y, int z) -> bool {
    if (x < 0 || y < 0 || z < 0 || x >= d.nx || y >= d.ny || z >= d.nz) return false;
    return m.at(x, y, z) != 0;
  };
  std::int64_t v = 0, e = 0, f = 0, c = 0;
  for (int z = 0; z <= d.nz; ++z)
    for (int y = 0; y <= d.ny; ++y)
      for (int x = 0; x <= d.nx; ++x) {
        // vertex (x,y,z): incident cubes are (x-1..x, y-1..y, z-1..z)
        bool any = false;
        for (int a : {x - 1, x})
          for (int b : {y - 1, y})
            for (int g : {z - 1, z}) any = any || fg(a, b, g);
        if (any) ++v;
        // edges along x / y / z starting at this vertex
        if (x < d.nx) {
          bool ae = false;
          for (int b : {y - 1, y})
            for (int g : {z - 1, z}) ae = ae || fg(x, b, g);
          if (ae) ++e;
        }
        if (y < d.ny) {
          bool ae = false;
          for (int a : {x - 1, x})
            for (int g : {z - 1, z}) ae = ae || fg(a, y, g);
          if (ae) ++e;
        }
        if (z < d.nz) {
          bool ae = false;
          for (int a : {x - 1, x})
            for (int b : {y - 1, y}) ae = ae || fg(a, b, z);
          if (ae) ++e;
        }
        // faces normal to z / y / x
        if (x < d.nx && y < d.ny) {
          if (fg(x, y, z - 1) || fg(x, y, z)) ++f;
        }
        if (x < d.nx && z < d.nz) {
          if (fg(x, y - 1, z) || fg(x, y, z)) ++f;
        }
        if (y < d.ny && z < d.nz) {
          if (fg(x - 1, y, z) || fg(x, y, z)) ++f;
        }
        if (x < d.nx && y < d.ny && z < d.nz) {
          if (fg(x, y, z)) ++c;
        }
      }
  return v - e + f - c;
}

namespace {

struct Coord {
  int x, y, z;
};

Coord coord_of(std::int64_t i, const Dims& d) {
  return {static_cast<int>(i % d.nx), static_cast<int>((i / d.nx) % d.ny),
          static_cast<int>(i / (static_cast<std::int64_t>(d.nx) * d.ny))};
}

double step_cost(const Coord& a, const Coord& b, const Spacing& s) {
  const double dx = (a.x - b.x) * s.sx;
  const double dy = (a.y - b.y) * s.sy;
  const double dz = (a.z - b.z) * s.sz;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

double polyline_length(const std::vector<std::int64_t>& voxels, const Dims& d, const Spacing& s) {
  double len = 0.0;
  for (std::size_t k = 1; k < voxels.size(); ++k) {
    len += step_cost(coord_of(voxels[k - 1], d), coord_of(voxels[k], d), s);
  }
  return len;
}

}  // namespace

double TreeGraph::total_length() const {
  double t = 0.0;
  for (const auto& b : branches) t += b.length;
  return t;
}

TreeGraph decompose(const Skeleton& s, Spacing spacing) {
  const Mask3& sk = s.mask;
  const Dims d = sk.dims;

  TreeGraph tree;
  tree.dims = d;
  tree.spacing = spacing;
  tree.component_count = connected_components(sk, 26).count;

  // Degree = number of 26-neighbors in the skeleton.
  std::vector<std::int64_t> fg_index;
  std::vector<std::int8_t> degree(sk.data.size(), -1);
  std::vector<std::vector<std::int64_t>> nbrs(sk.data.size());
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::int64_t i = sk.index(x, y, z);
        if (!sk.data[i]) continue;
        fg_index.push_back(i);
        std::vector<std::int64_t> ns;
        for (int dz = -1; dz <= 1; ++dz)
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dx == 0 && dy == 0 && dz == 0) continue;
              const int sx = x + dx, sy = y + dy, sz = z + dz;
              if (sx < 0 || sy < 0 || sz < 0 || sx >= d.nx || sy >= d.ny || sz >= d.nz) continue;
              const std::int64_t j = sk.index(sx, sy, sz);
              if (sk.data[j]) ns.push_back(j);
            }
        degree[i] = static_cast<std::int8_t>(ns.size());
        nbrs[i] = std::move(ns);
      }

  // Node ids per voxel: 0 = none (regular), >0 = node id.
  std::vector<std::int32_t> node_of(sk.data.size(), 0);
  auto add_node = [&](TreeNode::Kind kind) -> TreeNode& {
    tree.nodes.push_back(TreeNode{static_cast<int>(tree.nodes.size()) + 1, kind, {}});
    return tree.nodes.back();
  };

  // Branch-point clusters: 26-components of {degree >= 3}.
  for (std::int64_t seed : fg_index) {
    if (degree[seed] < 3 || node_of[seed] != 0) continue;
    TreeNode& node = add_node(TreeNode::Kind::Branchpoint);
    std::vector<std::int64_t> stack{seed};
    node_of[seed] = node.id;
    while (!stack.empty()) {
      const std::int64_t v = stack.back();
      stack.pop_back();
      node.voxels.push_back(v);
      for (std::int64_t u : nbrs[v]) {
        if (degree[u] >= 3 && node_of[u] == 0) {
          node_of[u] = node.id;
          stack.push_back(u);
        }
      }
    }
    std::sort(node.voxels.begin(), node.voxels.end());
  }
  // Endpoints and isolated voxels.
  for (std::int64_t i : fg_index) {
    if (degree[i] == 1) {
      TreeNode& node = add_node(TreeNode::Kind::Endpoint);
      node.voxels.push_back(i);
      node_of[i] = node.id;
    } else if (degree[i] == 0) {
      TreeNode& node = add_node(TreeNode::Kind::Isolated);
      node.voxels.push_back(i);
      node_of[i] = node.id;
      ++tree.isolated_voxels;
    }
  }

  std::vector<std::uint8_t> visited(sk.data.size(), 0);  // regular voxels only
  std::set<std::pair<std::int64_t, std::int64_t>> direct;  // node-node adjacencies used

  auto add_branch = [&](std::vector<std::int64_t> voxels, int na, int nb) {
    TreeBranch br;
    br.id = static_cast<int>(tree.branches.size()) + 1;
    br.node_a = na;
    br.node_b = nb;
    br.length = polyline_length(voxels, d, spacing);
    br.voxels = std::move(voxels);
    tree.branches.push_back(std::move(br));
  };

  // Walk from every node voxel into adjacent regular chains.
  for (const TreeNode& node : tree.nodes) {
    for (std::int64_t v : node.voxels) {
      for (std::int64_t u : nbrs[v]) {
        if (node_of[u] != 0) {
          // Direct node-node contact (zero interior voxels).
          if (node_of[u] == node.id) continue;
          const auto key = std::minmax(v, u);
          if (direct.emplace(key.first, key.second).second) {
            add_branch({v, u}, node.id, node_of[u]);
          }
          continue;
        }
        if (visited[u]) continue;
        std::vector<std::int64_t> poly{v, u};
        visited[u] = 1;
        std::int64_t prev = v, cur = u;
        int endpoint_node = 0;
        while (true) {
          std::int64_t next = -1;
          for (std::int64_t w : nbrs[cur]) {
            if (w == prev) continue;
            if (node_of[w] != 0) {
              // Prefer terminating at a node over continuing the chain.
              next = w;
              break;
            }
            if (next < 0 && !visited[w]) next = w;
          }
          if (next < 0) break;  // dead end (should not happen on thin input)
          poly.push_back(next);
          if (node_of[next] != 0) {
            endpoint_node = node_of[next];
            break;
          }
          visited[next] = 1;
          prev = cur;
          cur = next;
        }
        add_branch(std::move(poly), node.id, endpoint_node);
      }
    }
  }

  // Pure cycles: leftover unvisited regular voxels.
  for (std::int64_t i : fg_index) {
    if (degree[i] != 2 || visited[i] || node_of[i] != 0) continue;
    TreeNode& root = add_node(TreeNode::Kind::CycleRoot);
    root.voxels.push_back(i);
    node_of[i] = root.id;
    std::vector<std::int64_t> poly{i};
    std::int64_t prev = i, cur = nbrs[i][0];
    while (cur != i) {
      poly.push_back(cur);
      visited[cur] = 1;
      std::int64_t next = -1;
      for (std::int64_t w : nbrs[cur]) {
        if (w != prev) {
          next = w;
          break;
        }
      }
      prev = cur;
      cur = next;
    }
    poly.push_back(i);
    add_branch(std::move(poly), root.id, root.id);
  }

  return tree;
}

std::vector<std::int32_t> branch_regions(const Mask3& gt, const TreeGraph& tree) {
  const Dims d = gt.dims;
  std::vector<std::int32_t> region(gt.data.size(), 0);
  if (tree.branches.empty()) return region;

  struct ClVoxel {
    Coord c;
    std::int32_t branch;
  };
  std::vector<ClVoxel> cl;
  for (const auto& br : tree.branches) {
    for (std::int64_t v : br.voxels) cl.push_back({coord_of(v, d), br.id});
  }

  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::int64_t i = gt.index(x, y, z);
        if (!gt.data[i]) continue;
        double best = std::numeric_limits<double>::infinity();
        std::int32_t best_id = 0;
        for (const auto& v : cl) {
          const double dx = (x - v.c.x) * gt.spacing.sx;
          const double dy = (y - v.c.y) * gt.spacing.sy;
          const double dz = (z - v.c.z) * gt.spacing.sz;
          const double dist = dx * dx + dy * dy + dz * dz;
          if (dist < best || (dist == best && v.branch < best_id)) {
            best = dist;
            best_id = v.branch;
          }
        }
        region[i] = best_id;
      }
  return region;
}

std::string TreeGraph::to_json() const {
  std::ostringstream os;
  os << "{\n  \"component_count\": " << component_count
     << ",\n  \"isolated_voxels\": " << isolated_voxels << ",\n  \"nodes\": [";
  auto coord_json = [&](std::int64_t i) {
    const Coord c = coord_of(i, dims);
    std::ostringstream cs;
    cs << "[" << c.x << "," << c.y << "," << c.z << "]";
    return cs.str();
  };
  const char* kind_names[] = {"endpoint", "branchpoint", "isolated", "cycle_root"};
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    os << (n ? "," : "") << "\n    {\"id\": " << nodes[n].id << ", \"kind\": \""
       << kind_names[static_cast<int>(nodes[n].kind)] << "\", \"voxels\": [";
    for (std::size_t k = 0; k < nodes[n].voxels.size(); ++k) {
      os << (k ? "," : "") << coord_json(nodes[n].voxels[k]);
    }
    os << "]}";
  }
  os << "\n  ],\n  \"branches\": [";
  for (std::size_t b = 0; b < branches.size(); ++b) {
    os << (b ? "," : "") << "\n    {\"id\": " << branches[b].id << ", \"nodes\": ["
       << branches[b].node_a << "," << branches[b].node_b << "], \"length\": " << branches[b].length
       << ", \"voxels\": [";
    for (std::size_t k = 0; k < branches[b].voxels.size(); ++k) {
      os << (k ? "," : "") << coord_json(branches[b].voxels[k]);
    }
    os << "]}";
  }
  os << "\n  ]\n}\n";
  return os.str();
}

}  // namespace airway
