#include "airway/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace airway {

using nlohmann::json;

const ad::TensorData<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : entries) {
    if (n == name) return &t;
  }
  return nullptr;
}

void Checkpoint::add(const std::string& name, ad::TensorData<float> t) {
  if (find(name)) throw ConfigError("checkpoint: duplicate entry " + name);
  entries.emplace_back(name, std::move(t));
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json manifest;
  manifest["format"] = "airway-ckpt-1";
  manifest["meta"] = ckpt.meta;
  json params = json::array();
  for (const auto& [name, t] : ckpt.entries) {
    json e;
    e["name"] = name;
    json shape = json::array();
    for (int i = 0; i < t.shape.rank(); ++i) shape.push_back(t.shape[i]);
    e["shape"] = shape;
    params.push_back(e);
  }
  manifest["params"] = params;
  const std::string m = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  const std::uint64_t len = m.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& [name, t] : ckpt.entries) {
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in || len == 0 || len > (1ull << 30)) throw IoError("bad checkpoint header: " + path);
  std::string m(len, '\0');
  in.read(m.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint manifest: " + path);

  json manifest;
  try {
    manifest = json::parse(m);
  } catch (const json::exception& e) {
    throw IoError("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "airway-ckpt-1") {
    throw ConfigError("unknown checkpoint format in " + path);
  }

  Checkpoint ckpt;
  ckpt.meta = manifest.value("meta", json::object());
  for (const auto& e : manifest.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    const auto& shape_json = e.at("shape");
    ad::Shape shape;
    switch (shape_json.size()) {
      case 0: shape = ad::Shape::scalar(); break;
      case 1: shape = ad::Shape{shape_json[0].get<int>()}; break;
      case 2: shape = ad::Shape{shape_json[0].get<int>(), shape_json[1].get<int>()}; break;
      case 3:
        shape = ad::Shape{shape_json[0].get<int>(), shape_json[1].get<int>(),
                          shape_json[2].get<int>()};
        break;
      case 4:
        shape = ad::Shape{shape_json[0].get<int>(), shape_json[1].get<int>(),
                          shape_json[2].get<int>(), shape_json[3].get<int>()};
        break;
      case 5:
        shape = ad::Shape{shape_json[0].get<int>(), shape_json[1].get<int>(),
                          shape_json[2].get<int>(), shape_json[3].get<int>(),
                          shape_json[4].get<int>()};
        break;
      default: throw ConfigError("checkpoint: rank > 5 for " + name);
    }
    ad::TensorData<float> t = ad::TensorData<float>::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint payload at " + name);
    ckpt.entries.emplace_back(name, std::move(t));
  }
  return ckpt;
}

}  // namespace airway
