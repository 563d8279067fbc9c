#include "airway/morphology.hpp"

#include <algorithm>
#include <numeric>

namespace airway {

namespace {

// 1-D sliding OR along one axis; clips at borders.
void dilate_axis(const Mask3& in, Mask3& out, int radius, Axis axis) {
  const Dims d = in.dims;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        std::uint8_t v = 0;
        for (int o = -radius; o <= radius && !v; ++o) {
          int sx = x, sy = y, sz = z;
          switch (axis) {
            case Axis::X: sx = x + o; break;
            case Axis::Y: sy = y + o; break;
            case Axis::Z: sz = z + o; break;
          }
          if (sx < 0 || sy < 0 || sz < 0 || sx >= d.nx || sy >= d.ny || sz >= d.nz) continue;
          v = in.at(sx, sy, sz);
        }
        out.at(x, y, z) = v;
      }
}

struct UnionFind {
  std::vector<std::int32_t> parent;

  std::int32_t make() {
    parent.push_back(static_cast<std::int32_t>(parent.size()));
    return parent.back();
  }
  std::int32_t find(std::int32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent[b] = a;  // keep the earlier provisional label as root
    else parent[a] = b;
  }
};

// Offsets of already-scanned neighbors (negative half-space in scan order).
std::vector<std::array<int, 3>> prior_neighbors(int connectivity) {
  std::vector<std::array<int, 3>> offs;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (connectivity == 6 && manhattan > 1) continue;
        if (connectivity == 18 && manhattan > 2) continue;
        // scan order: z, then y, then x
        if (dz < 0 || (dz == 0 && dy < 0) || (dz == 0 && dy == 0 && dx < 0)) {
          offs.push_back({dx, dy, dz});
        }
      }
  return offs;
}

}  // namespace

Mask3 dilate(const Mask3& m, StructuringElement se) {
  if (se.radius == 0) return m;
  // Box dilation is separable: OR along x, then y, then z.
  Mask3 a(m.dims, m.spacing), b(m.dims, m.spacing);
  dilate_axis(m, a, se.radius, Axis::X);
  dilate_axis(a, b, se.radius, Axis::Y);
  dilate_axis(b, a, se.radius, Axis::Z);
  return a;
}

ComponentLabels connected_components(const Mask3& m, int connectivity) {
  if (connectivity != 6 && connectivity != 18 && connectivity != 26) {
    throw DomainError("connected_components: connectivity must be 6, 18 or 26");
  }
  const Dims d = m.dims;
  const auto offs = prior_neighbors(connectivity);

  ComponentLabels out;
  out.labels.assign(static_cast<std::size_t>(d.count()), 0);
  std::vector<std::int32_t> provisional(static_cast<std::size_t>(d.count()), -1);
  UnionFind uf;

  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const std::int64_t i = m.index(x, y, z);
        if (!m.data[i]) continue;
        std::int32_t lbl = -1;
        for (const auto& o : offs) {
          const int sx = x + o[0], sy = y + o[1], sz = z + o[2];
          if (sx < 0 || sy < 0 || sz < 0 || sx >= d.nx || sy >= d.ny || sz >= d.nz) continue;
          const std::int64_t j = m.index(sx, sy, sz);
          if (!m.data[j]) continue;
          const std::int32_t nl = provisional[j];
          if (lbl < 0) lbl = nl;
          else if (nl != lbl) uf.unite(lbl, nl);
        }
        if (lbl < 0) lbl = uf.make();
        provisional[i] = lbl;
      }

  // Compress roots to consecutive labels 1..K in first-occurrence order.
  std::vector<std::int32_t> root_to_label(uf.parent.size(), 0);
  for (std::int64_t i = 0; i < d.count(); ++i) {
    if (provisional[i] < 0) continue;
    const std::int32_t r = uf.find(provisional[i]);
    if (root_to_label[r] == 0) {
      root_to_label[r] = ++out.count;
      out.sizes.push_back(0);
    }
    out.labels[i] = root_to_label[r];
    ++out.sizes[root_to_label[r] - 1];
  }
  return out;
}

Mask3 largest_component(const Mask3& m, int connectivity) {
  const ComponentLabels cc = connected_components(m, connectivity);
  if (cc.count == 0) return Mask3(m.dims, m.spacing);
  // max_element returns the first maximum, which is the smallest label id
  // and therefore the component with the smallest minimum linear index.
  const auto it = std::max_element(cc.sizes.begin(), cc.sizes.end());
  const std::int32_t keep = static_cast<std::int32_t>(it - cc.sizes.begin()) + 1;
  Mask3 out(m.dims, m.spacing);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = cc.labels[i] == keep ? 1 : 0;
  }
  return out;
}

}  // namespace airway
