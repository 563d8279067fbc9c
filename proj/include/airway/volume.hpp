#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "airway/errors.hpp"

namespace airway {

struct Dims {
  int nx = 0, ny = 0, nz = 0;

  std::int64_t count() const {
    return static_cast<std::int64_t>(nx) * ny * nz;
  }
  bool operator==(const Dims&) const = default;
};

struct Spacing {
  double sx = 1.0, sy = 1.0, sz = 1.0;
  bool operator==(const Spacing&) const = default;
};

enum class Axis { X, Y, Z };

/// Dense scalar 3-D grid, x-fastest ordering, 32-bit floats.
class Volume3 {
 public:
  Volume3() = default;
  Volume3(Dims d, Spacing s = {})
      : dims(d), spacing(s), data(static_cast<std::size_t>(d.count()), 0.0f) {}

  Dims dims;
  Spacing spacing;
  std::vector<float> data;

  std::int64_t index(int x, int y, int z) const {
    return x + static_cast<std::int64_t>(dims.nx) * (y + static_cast<std::int64_t>(dims.ny) * z);
  }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
};

/// Dense binary 3-D grid; same indexing as Volume3, one byte per voxel.
class Mask3 {
 public:
  Mask3() = default;
  Mask3(Dims d, Spacing s = {})
      : dims(d), spacing(s), data(static_cast<std::size_t>(d.count()), 0) {}

  Dims dims;
  Spacing spacing;
  std::vector<std::uint8_t> data;

  std::int64_t index(int x, int y, int z) const {
    return x + static_cast<std::int64_t>(dims.nx) * (y + static_cast<std::int64_t>(dims.ny) * z);
  }
  std::uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  std::uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }

  std::int64_t popcount() const;
  bool empty_mask() const { return popcount() == 0; }
};

/// output[i] = v[i] * m[i]; dims must match.
Volume3 elementwise_product(const Volume3& v, const Mask3& m);

/// Index reversal along X or Y. Z is never flipped (axial convention).
Volume3 flip(const Volume3& v, Axis axis);
Mask3 flip(const Mask3& m, Axis axis);

// Raw on-disk format: `<name>.vol` holds the little-endian payload,
// `<name>.vol.json` the sidecar {"dims":[nx,ny,nz],"dtype":"f32"|"u8","spacing":[sx,sy,sz]}.
void write_raw(const Volume3& v, const std::string& path);
void write_raw(const Mask3& m, const std::string& path);

std::variant<Volume3, Mask3> read_raw(const std::string& path);
Volume3 read_raw_volume(const std::string& path);
Mask3 read_raw_mask(const std::string& path);

}  // namespace airway
