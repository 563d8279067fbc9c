#pragma once

#include <string>
#include <utility>
#include <vector>

#include "airway/autodiff.hpp"
#include "json.hpp"

namespace airway {

/// On-disk checkpoint: an 8-byte little-endian manifest length, the JSON
/// manifest (entry names + shapes, plus free-form "meta"), then one
/// little-endian f32 payload per entry in manifest order.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, ad::TensorData<float>>> entries;

  const ad::TensorData<float>* find(const std::string& name) const;
  void add(const std::string& name, ad::TensorData<float> t);

  template <class S>
  void add_store(const std::string& prefix, const ad::ParamStore<S>& store) {
    for (const auto& p : store.items()) {
      add(prefix + p->name,
          ad::TensorData<float>(p->shape, p->value.template cast<float>()));
    }
  }
  /// Fill a pre-built store from entries; errors name the missing or
  /// mismatched parameter. With create_missing, checkpoint entries under the
  /// prefix that the store lacks are added (lazily-created parameters such as
  /// positional embedding tables).
  template <class S>
  void load_store(const std::string& prefix, ad::ParamStore<S>& store,
                  bool create_missing = false) const {
    for (auto& p : store.items()) {
      const ad::TensorData<float>* t = find(prefix + p->name);
      if (!t) throw ConfigError("checkpoint: missing parameter " + prefix + p->name);
      if (t->shape != p->shape) {
        throw ConfigError("checkpoint: shape mismatch for " + prefix + p->name + ": file " +
                          t->shape.str() + " vs model " + p->shape.str());
      }
      p->value = t->data.template cast<S>();
    }
    if (!create_missing) return;
    for (const auto& [name, t] : entries) {
      if (name.rfind(prefix, 0) != 0) continue;
      const std::string local = name.substr(prefix.size());
      if (store.find(local)) continue;
      ad::Param<S>& p = store.add(local, t.shape);
      p.value = t.data.template cast<S>();
    }
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace airway
