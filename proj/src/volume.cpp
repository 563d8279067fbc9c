#include "airway/volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace airway {

namespace {

using nlohmann::json;

template <class Grid>
Grid flip_impl(const Grid& g, Axis axis) {
  if (axis == Axis::Z) {
    throw DomainError("flip: axis z is not flipped (axial convention)");
  }
  Grid out(g.dims, g.spacing);
  const Dims d = g.dims;
  for (int z = 0; z < d.nz; ++z)
    for (int y = 0; y < d.ny; ++y)
      for (int x = 0; x < d.nx; ++x) {
        const int sx = axis == Axis::X ? d.nx - 1 - x : x;
        const int sy = axis == Axis::Y ? d.ny - 1 - y : y;
        out.at(x, y, z) = g.at(sx, sy, z);
      }
  return out;
}

json read_sidecar(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw IoError("missing sidecar: " + path + ".json");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("bad sidecar " + path + ".json: " + e.what());
  }
  if (!j.contains("dims") || !j.contains("dtype")) {
    throw IoError("sidecar missing dims/dtype: " + path + ".json");
  }
  return j;
}

struct RawHeader {
  Dims dims;
  Spacing spacing;
  std::string dtype;
};

RawHeader parse_header(const json& j, const std::string& path) {
  RawHeader h;
  const auto& dims = j.at("dims");
  if (!dims.is_array() || dims.size() != 3) {
    throw IoError("sidecar dims must be [nx,ny,nz]: " + path);
  }
  h.dims = {dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
  if (h.dims.nx <= 0 || h.dims.ny <= 0 || h.dims.nz <= 0) {
    throw IoError("sidecar dims must be positive: " + path);
  }
  h.dtype = j.at("dtype").get<std::string>();
  if (j.contains("spacing")) {
    const auto& s = j.at("spacing");
    if (!s.is_array() || s.size() != 3) {
      throw IoError("sidecar spacing must be [sx,sy,sz]: " + path);
    }
    h.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  }
  return h;
}

std::vector<char> read_payload(const std::string& path, std::int64_t expected_bytes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing payload: " + path);
  in.seekg(0, std::ios::end);
  const std::int64_t size = in.tellg();
  if (size != expected_bytes) {
    throw IoError("payload length mismatch for " + path + ": got " + std::to_string(size) +
                  " bytes, expected " + std::to_string(expected_bytes));
  }
  in.seekg(0);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  in.read(bytes.data(), size);
  if (!in) throw IoError("short read: " + path);
  return bytes;
}

void write_sidecar(const std::string& path, Dims d, Spacing s, const char* dtype) {
  json j;
  j["dims"] = {d.nx, d.ny, d.nz};
  j["dtype"] = dtype;
  j["spacing"] = {s.sx, s.sy, s.sz};
  std::ofstream out(path + ".json");
  if (!out) throw IoError("cannot write sidecar: " + path + ".json");
  out << j.dump(2) << "\n";
}

void write_payload(const std::string& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write payload: " + path);
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write: " + path);
}

}  // namespace

std::int64_t Mask3::popcount() const {
  std::int64_t n = 0;
  for (std::uint8_t v : data) n += v;
  return n;
}

Volume3 elementwise_product(const Volume3& v, const Mask3& m) {
  if (!(v.dims == m.dims)) {
    throw ShapeError("elementwise_product: dims mismatch");
  }
  Volume3 out(v.dims, v.spacing);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    out.data[i] = m.data[i] ? v.data[i] : 0.0f;
  }
  return out;
}

Volume3 flip(const Volume3& v, Axis axis) { return flip_impl(v, axis); }
Mask3 flip(const Mask3& m, Axis axis) { return flip_impl(m, axis); }

void write_raw(const Volume3& v, const std::string& path) {
  write_sidecar(path, v.dims, v.spacing, "f32");
  write_payload(path, v.data.data(), v.data.size() * sizeof(float));
}

void write_raw(const Mask3& m, const std::string& path) {
  write_sidecar(path, m.dims, m.spacing, "u8");
  write_payload(path, m.data.data(), m.data.size());
}

Volume3 read_raw_volume(const std::string& path) {
  auto v = read_raw(path);
  if (!std::holds_alternative<Volume3>(v)) {
    throw IoError("expected f32 volume: " + path);
  }
  return std::get<Volume3>(std::move(v));
}

Mask3 read_raw_mask(const std::string& path) {
  auto v = read_raw(path);
  if (!std::holds_alternative<Mask3>(v)) {
    throw IoError("expected u8 mask: " + path);
  }
  return std::get<Mask3>(std::move(v));
}

std::variant<Volume3, Mask3> read_raw(const std::string& path) {
  const RawHeader h = parse_header(read_sidecar(path), path);
  const std::int64_t n = h.dims.count();
  if (h.dtype == "f32") {
    const auto bytes = read_payload(path, n * 4);
    Volume3 v(h.dims, h.spacing);
    std::memcpy(v.data.data(), bytes.data(), bytes.size());
    for (float f : v.data) {
      if (!std::isfinite(f)) throw DomainError("non-finite float in " + path);
    }
    return v;
  }
  if (h.dtype == "u8") {
    const auto bytes = read_payload(path, n);
    Mask3 m(h.dims, h.spacing);
    std::memcpy(m.data.data(), bytes.data(), bytes.size());
    for (std::uint8_t b : m.data) {
      if (b > 1) throw DomainError("mask byte outside {0,1} in " + path);
    }
    return m;
  }
  throw IoError("unknown dtype '" + h.dtype + "' in sidecar of " + path);
}

}  // namespace airway
