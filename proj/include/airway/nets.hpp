#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "airway/autodiff.hpp"
#include "json.hpp"

namespace airway {

struct GeneratorConfig {
  int in_channels = 2;  // CT + preliminary mask
  int levels = 4;       // resolutions incl. bottleneck; halves dims per level
  int base_channels = 8;
  double lrelu_slope = 0.1;

  static GeneratorConfig toy() {
    GeneratorConfig c;
    c.levels = 3;
    c.base_channels = 8;
    return c;
  }
  /// Aux heads sit at 1/2, 1/4, ... resolution; at most 3 plus the final head.
  int aux_heads() const { return std::min(3, levels - 1); }
  int supervision_count() const { return aux_heads() + 1; }

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

struct PatchDiscriminatorConfig {
  int in_channels = 1;
  int kernel = 4;
  std::vector<int> strides = {2, 2, 2, 1, 1};  // one conv layer per entry
  int base_channels = 64;
  int max_channel_factor = 8;
  double lrelu_slope = 0.2;

  int layers() const { return static_cast<int>(strides.size()); }

  static PatchDiscriminatorConfig paper() { return {}; }
  static PatchDiscriminatorConfig toy() {
    PatchDiscriminatorConfig c;
    c.strides = {2, 1, 1};
    c.base_channels = 8;
    return c;
  }

  nlohmann::json to_json() const;
  static PatchDiscriminatorConfig from_json(const nlohmann::json& j);
};

/// Receptive field of one score-map element, by the standard recurrence
/// r <- r + (k-1) * prod(earlier strides).
int receptive_field(const PatchDiscriminatorConfig& cfg);

struct ViTDiscriminatorConfig {
  int layers = 12;
  int hidden = 768;
  int mlp = 3072;
  int heads = 12;
  int patch_x = 32, patch_y = 38, patch_z = 36;
  double lrelu_slope = 0.2;  // MLP head activation; also used inside blocks
  int in_channels = 1;

  static ViTDiscriminatorConfig paper() { return {}; }
  /// Paper config adjusted to tile 128x96x144 inputs: patch_y 38 does not
  /// divide 96, so it is replaced by 32 (the nearest divisor).
  static ViTDiscriminatorConfig paper_tiling() {
    ViTDiscriminatorConfig c;
    c.patch_y = 32;
    return c;
  }
  static ViTDiscriminatorConfig toy() {
    ViTDiscriminatorConfig c;
    c.layers = 2;
    c.hidden = 64;
    c.mlp = 128;
    c.heads = 4;
    c.patch_x = c.patch_y = c.patch_z = 8;
    return c;
  }

  nlohmann::json to_json() const;
  static ViTDiscriminatorConfig from_json(const nlohmann::json& j);
};

/// 3-D U-Net with multi-scale supervision. Input (B, in_channels, Z, Y, X),
/// dims divisible by 2^(levels-1). Outputs are tanh-activated; the refined
/// mask is `final > 0`.
template <class S>
class Generator {
 public:
  Generator(GeneratorConfig cfg, std::uint64_t seed);

  struct Outputs {
    ad::Value<S> final_out;           // full resolution
    std::vector<ad::Value<S>> aux;    // deepest first (1/2^k ... 1/2)
    /// Supervision order for the layer-weighted total: deepest aux -> final.
    std::vector<ad::Value<S>> supervision() const {
      std::vector<ad::Value<S>> v = aux;
      v.push_back(final_out);
      return v;
    }
  };

  /// With frozen = true, parameters enter the tape as constants: gradients
  /// still flow to the input but never to the weights (inference, or
  /// evaluating a discriminator inside the generator objective).
  Outputs forward(ad::Tape<S>& tape, ad::Value<S> input, bool frozen = false);
  ad::ParamStore<S>& params() { return params_; }
  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  ad::ParamStore<S> params_;
};

/// Markovian (PatchGAN) discriminator: fully convolutional, emits a spatial
/// logit map; each element judges one receptive-field patch.
template <class S>
class PatchDiscriminator {
 public:
  PatchDiscriminator(PatchDiscriminatorConfig cfg, std::uint64_t seed);

  ad::Value<S> forward(ad::Tape<S>& tape, ad::Value<S> input, bool frozen = false);
  ad::ParamStore<S>& params() { return params_; }
  const PatchDiscriminatorConfig& config() const { return cfg_; }

 private:
  PatchDiscriminatorConfig cfg_;
  ad::ParamStore<S> params_;
};

/// ViT discriminator: patchify -> linear embed -> learned positional
/// embeddings (+ class token) -> pre-LN transformer stack -> class-token MLP
/// head -> one real/fake logit per volume, shaped (B, 1).
template <class S>
class ViTDiscriminator {
 public:
  ViTDiscriminator(ViTDiscriminatorConfig cfg, std::uint64_t seed);

  ad::Value<S> forward(ad::Tape<S>& tape, ad::Value<S> input, bool frozen = false);
  ad::ParamStore<S>& params() { return params_; }
  const ViTDiscriminatorConfig& config() const { return cfg_; }
  int token_count(int z, int y, int x) const;

 private:
  ViTDiscriminatorConfig cfg_;
  std::uint64_t seed_ = 0;
  ad::ParamStore<S> params_;
};

/// Discriminator input conditioning: differentiable dilation of the soft
/// label (max-pool, window 2*radius+1, stride 1, same padding) multiplied
/// elementwise by the CT. Radius is pinned to 2 (the 5x5x5 kernel) unless
/// explicitly overridden.
template <class S>
ad::Value<S> prepare_disc_input(ad::Value<S> ct, ad::Value<S> soft_label, int radius = 2,
                                bool allow_nonstandard_radius = false);

}  // namespace airway
