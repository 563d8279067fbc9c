#include "airway/patching.hpp"

#include <algorithm>

namespace airway {

namespace {

std::vector<int> axis_origins(int size, int patch) {
  if (patch > size) throw ShapeError("patch larger than volume axis");
  if (patch % 2 != 0 && patch != size) {
    throw ShapeError("patch dim must be even for 50% overlap strides");
  }
  const int stride = std::max(1, patch / 2);
  std::vector<int> origins;
  for (int o = 0;; o += stride) {
    if (o + patch >= size) {
      origins.push_back(size - patch);  // clamp the last window to the boundary
      break;
    }
    origins.push_back(o);
  }
  return origins;
}

}  // namespace

PatchGrid PatchGrid::make(Dims source, PatchDims patch) {
  PatchGrid g;
  g.patch = patch;
  g.source = source;
  const auto xs = axis_origins(source.nx, patch.px);
  const auto ys = axis_origins(source.ny, patch.py);
  const auto zs = axis_origins(source.nz, patch.pz);
  for (int z : zs)
    for (int y : ys)
      for (int x : xs) g.origins.push_back({x, y, z});
  return g;
}

std::vector<std::pair<PatchOrigin, Volume3>> extract(const Volume3& vol, const PatchGrid& grid) {
  if (!(vol.dims == grid.source)) throw ShapeError("extract: grid built for different dims");
  std::vector<std::pair<PatchOrigin, Volume3>> out;
  out.reserve(grid.origins.size());
  for (const PatchOrigin& o : grid.origins) {
    Volume3 p(Dims{grid.patch.px, grid.patch.py, grid.patch.pz}, vol.spacing);
    for (int z = 0; z < grid.patch.pz; ++z)
      for (int y = 0; y < grid.patch.py; ++y)
        for (int x = 0; x < grid.patch.px; ++x) {
          p.at(x, y, z) = vol.at(o.x + x, o.y + y, o.z + z);
        }
    out.emplace_back(o, std::move(p));
  }
  return out;
}

Volume3 stitch(const std::vector<std::pair<PatchOrigin, Volume3>>& patches, Dims full_dims,
               StitchMode mode) {
  std::vector<double> acc(static_cast<std::size_t>(full_dims.count()), 0.0);
  std::vector<std::int32_t> cnt(static_cast<std::size_t>(full_dims.count()), 0);
  Volume3 out(full_dims);
  for (const auto& [o, p] : patches) {
    const Dims pd = p.dims;
    if (o.x < 0 || o.y < 0 || o.z < 0 || o.x + pd.nx > full_dims.nx ||
        o.y + pd.ny > full_dims.ny || o.z + pd.nz > full_dims.nz) {
      throw ShapeError("stitch: patch origin out of bounds");
    }
    for (int z = 0; z < pd.nz; ++z)
      for (int y = 0; y < pd.ny; ++y)
        for (int x = 0; x < pd.nx; ++x) {
          const std::int64_t i = out.index(o.x + x, o.y + y, o.z + z);
          const float v = p.at(x, y, z);
          acc[i] += mode == StitchMode::Mean ? static_cast<double>(v) : (v > 0.0f ? 1.0 : 0.0);
          ++cnt[i];
        }
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (cnt[i] == 0) throw ShapeError("stitch: uncovered voxel");
    if (mode == StitchMode::Mean) {
      out.data[i] = static_cast<float>(acc[i] / cnt[i]);
    } else {
      // majority vote, ties -> foreground
      out.data[i] = 2.0 * acc[i] >= cnt[i] ? 1.0f : 0.0f;
    }
  }
  return out;
}

Volume3 reflect_pad(const Volume3& v, Dims target) {
  const Dims d = v.dims;
  const Dims t{std::max(d.nx, target.nx), std::max(d.ny, target.ny), std::max(d.nz, target.nz)};
  if (t == d) return v;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i %= period;
    return i < n ? i : period - i;
  };
  Volume3 out(t, v.spacing);
  for (int z = 0; z < t.nz; ++z)
    for (int y = 0; y < t.ny; ++y)
      for (int x = 0; x < t.nx; ++x) {
        out.at(x, y, z) = v.at(reflect(x, d.nx), reflect(y, d.ny), reflect(z, d.nz));
      }
  return out;
}

Volume3 crop(const Volume3& v, Dims target) {
  if (target.nx > v.dims.nx || target.ny > v.dims.ny || target.nz > v.dims.nz) {
    throw ShapeError("crop: target larger than volume");
  }
  Volume3 out(target, v.spacing);
  for (int z = 0; z < target.nz; ++z)
    for (int y = 0; y < target.ny; ++y)
      for (int x = 0; x < target.nx; ++x) out.at(x, y, z) = v.at(x, y, z);
  return out;
}

}  // namespace airway
