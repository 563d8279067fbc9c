#include "airway/nets.hpp"

#include <algorithm>
#include <cmath>

#include "airway/rng.hpp"

namespace airway {

using nlohmann::json;
using namespace ad;

namespace {

/// Fan-in-scaled uniform init, stream keyed by (seed, parameter name) so the
/// draw is independent of creation order.
template <class S>
void init_uniform(Param<S>& p, std::uint64_t seed, double fan_in) {
  CounterRng rng(seed, p.name);
  const double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) {
    p.value[i] = static_cast<S>(rng.uniform(-bound, bound));
  }
}

template <class S>
void init_norm(Param<S>& scale, Param<S>& shift) {
  scale.value.setOnes();
  shift.value.setZero();
}

template <class S>
struct ConvBlockParams {
  Param<S>* w = nullptr;
  Param<S>* b = nullptr;
  Param<S>* norm_scale = nullptr;  // null -> no normalization
  Param<S>* norm_shift = nullptr;
};

template <class S>
ConvBlockParams<S> add_conv(ParamStore<S>& store, const std::string& name, int cin, int cout,
                            int k, std::uint64_t seed, bool with_norm) {
  ConvBlockParams<S> p;
  p.w = &store.add(name + ".w", Shape{cout, cin, k, k, k});
  p.b = &store.add(name + ".b", Shape{cout});
  init_uniform(*p.w, seed, double(cin) * k * k * k);
  if (with_norm) {
    p.norm_scale = &store.add(name + ".norm.scale", Shape{cout});
    p.norm_shift = &store.add(name + ".norm.shift", Shape{cout});
    init_norm(*p.norm_scale, *p.norm_shift);
  }
  return p;
}

template <class S>
Value<S> param_leaf(Tape<S>& t, Param<S>& p, bool frozen) {
  if (frozen) return t.leaf(TensorData<S>(p.shape, p.value), false);
  return t.leaf_param(p);
}

template <class S>
Value<S> conv_in_lrelu(Tape<S>& t, Value<S> x, ParamStore<S>& store, const std::string& name,
                       Conv3dOpts opts, double slope, bool frozen, bool with_norm = true) {
  Param<S>* w = store.find(name + ".w");
  Param<S>* b = store.find(name + ".b");
  Value<S> y = conv3d(x, param_leaf(t, *w, frozen), param_leaf(t, *b, frozen), opts);
  if (with_norm) {
    y = instance_norm(y, param_leaf(t, *store.find(name + ".norm.scale"), frozen),
                      param_leaf(t, *store.find(name + ".norm.shift"), frozen));
  }
  return leaky_relu(y, static_cast<S>(slope));
}

int channels_at(int base, int level) { return base << level; }

}  // namespace

// --- Generator ---------------------------------------------------------------

template <class S>
Generator<S>::Generator(GeneratorConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.levels < 2) throw ConfigError("generator: levels must be >= 2");
  if (cfg.base_channels < 1 || cfg.in_channels < 1) {
    throw ConfigError("generator: channels must be positive");
  }
  const int L = cfg.levels;
  for (int lvl = 0; lvl < L; ++lvl) {
    const int ch = channels_at(cfg.base_channels, lvl);
    const int cin = lvl == 0 ? cfg.in_channels : channels_at(cfg.base_channels, lvl - 1);
    add_conv(params_, "enc" + std::to_string(lvl) + ".conv1", cin, ch, 3, seed, true);
    add_conv(params_, "enc" + std::to_string(lvl) + ".conv2", ch, ch, 3, seed, true);
  }
  for (int lvl = L - 2; lvl >= 0; --lvl) {
    const int ch = channels_at(cfg.base_channels, lvl);
    const int ch_below = channels_at(cfg.base_channels, lvl + 1);
    add_conv(params_, "dec" + std::to_string(lvl) + ".up", ch_below, ch, 3, seed, true);
    add_conv(params_, "dec" + std::to_string(lvl) + ".conv1", 2 * ch, ch, 3, seed, true);
    add_conv(params_, "dec" + std::to_string(lvl) + ".conv2", ch, ch, 3, seed, true);
  }
  add_conv(params_, "head.final", cfg.base_channels, 1, 1, seed, false);
  for (int i = 1; i <= cfg.aux_heads(); ++i) {
    add_conv(params_, "head.aux" + std::to_string(i),
             channels_at(cfg.base_channels, i), 1, 1, seed, false);
  }
}

template <class S>
typename Generator<S>::Outputs Generator<S>::forward(Tape<S>& t, Value<S> input, bool frozen) {
  const Shape& sh = input.shape();
  if (sh.rank() != 5 || sh[1] != cfg_.in_channels) {
    throw ShapeError("generator: input must be (B," + std::to_string(cfg_.in_channels) +
                     ",Z,Y,X), got " + sh.str());
  }
  const int div = 1 << (cfg_.levels - 1);
  for (int axis : {2, 3, 4}) {
    if (sh[axis] % div != 0) {
      throw ShapeError("generator: input dims " + sh.str() + " not divisible by " +
                       std::to_string(div));
    }
  }
  const Conv3dOpts same3{1, 1};
  const double slope = cfg_.lrelu_slope;

  std::vector<Value<S>> skips;
  Value<S> x = input;
  for (int lvl = 0; lvl < cfg_.levels; ++lvl) {
    if (lvl > 0) x = max_pool3d(x, PoolOpts{2, 2, 0});
    const std::string base = "enc" + std::to_string(lvl);
    x = conv_in_lrelu(t, x, params_, base + ".conv1", same3, slope, frozen);
    x = conv_in_lrelu(t, x, params_, base + ".conv2", same3, slope, frozen);
    skips.push_back(x);
  }

  // Decoder features indexed by level; level L-1 is the bottleneck itself.
  std::vector<Value<S>> dec_features(cfg_.levels);
  dec_features[cfg_.levels - 1] = x;
  for (int lvl = cfg_.levels - 2; lvl >= 0; --lvl) {
    const std::string base = "dec" + std::to_string(lvl);
    Value<S> up = upsample_nearest2x(dec_features[lvl + 1]);
    up = conv_in_lrelu(t, up, params_, base + ".up", same3, slope, frozen);
    Value<S> cat = concat_channels(up, skips[lvl]);
    Value<S> y = conv_in_lrelu(t, cat, params_, base + ".conv1", same3, slope, frozen);
    y = conv_in_lrelu(t, y, params_, base + ".conv2", same3, slope, frozen);
    dec_features[lvl] = y;
  }

  Outputs out;
  {
    Param<S>* w = params_.find("head.final.w");
    Param<S>* b = params_.find("head.final.b");
    out.final_out = ad::tanh(conv3d(dec_features[0], param_leaf(t, *w, frozen),
                                    param_leaf(t, *b, frozen), Conv3dOpts{1, 0}));
  }
  // Deepest aux first, so supervision order is layer1 (coarsest) .. final.
  for (int i = cfg_.aux_heads(); i >= 1; --i) {
    Param<S>* w = params_.find("head.aux" + std::to_string(i) + ".w");
    Param<S>* b = params_.find("head.aux" + std::to_string(i) + ".b");
    out.aux.push_back(ad::tanh(conv3d(dec_features[i], param_leaf(t, *w, frozen),
                                      param_leaf(t, *b, frozen), Conv3dOpts{1, 0})));
  }
  return out;
}

// --- PatchDiscriminator --------------------------------------------------------

int receptive_field(const PatchDiscriminatorConfig& cfg) {
  int rf = 1;
  int jump = 1;
  for (int s : cfg.strides) {
    rf += (cfg.kernel - 1) * jump;
    jump *= s;
  }
  return rf;
}

template <class S>
PatchDiscriminator<S>::PatchDiscriminator(PatchDiscriminatorConfig cfg, std::uint64_t seed)
    : cfg_(cfg) {
  if (cfg.layers() < 1) throw ConfigError("patch discriminator: needs at least one layer");
  int cin = cfg.in_channels;
  for (int i = 0; i < cfg.layers(); ++i) {
    const bool last = i == cfg.layers() - 1;
    const int cout =
        last ? 1
             : std::min(cfg.base_channels << i, cfg.base_channels * cfg.max_channel_factor);
    // No normalization anywhere: spatially-coupled statistics would break the
    // Markovian property (each score must depend on its receptive field only).
    add_conv(params_, "disc" + std::to_string(i), cin, cout, cfg.kernel, seed, false);
    cin = cout;
  }
}

template <class S>
Value<S> PatchDiscriminator<S>::forward(Tape<S>& t, Value<S> input, bool frozen) {
  const Shape& sh = input.shape();
  if (sh.rank() != 5 || sh[1] != cfg_.in_channels) {
    throw ShapeError("patch discriminator: input must be (B," + std::to_string(cfg_.in_channels) +
                     ",Z,Y,X), got " + sh.str());
  }
  const int rf = receptive_field(cfg_);
  for (int axis : {2, 3, 4}) {
    if (sh[axis] < rf) {
      throw ShapeError("patch discriminator: input " + sh.str() +
                       " smaller than receptive field " + std::to_string(rf));
    }
  }
  Value<S> x = input;
  for (int i = 0; i < cfg_.layers(); ++i) {
    const bool last = i == cfg_.layers() - 1;
    const std::string name = "disc" + std::to_string(i);
    Param<S>* w = params_.find(name + ".w");
    Param<S>* b = params_.find(name + ".b");
    x = conv3d(x, param_leaf(t, *w, frozen), param_leaf(t, *b, frozen),
               Conv3dOpts{cfg_.strides[i], 1});
    if (!last) {
      if (Param<S>* scale = params_.find(name + ".norm.scale")) {
        x = instance_norm(x, param_leaf(t, *scale, frozen),
                          param_leaf(t, *params_.find(name + ".norm.shift"), frozen));
      }
      x = leaky_relu(x, static_cast<S>(cfg_.lrelu_slope));
    }
  }
  return x;
}

// --- ViTDiscriminator -----------------------------------------------------------

template <class S>
ViTDiscriminator<S>::ViTDiscriminator(ViTDiscriminatorConfig cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  if (cfg.hidden % cfg.heads != 0) {
    throw ConfigError("vit discriminator: hidden must be divisible by heads");
  }
  const int feat = cfg.in_channels * cfg.patch_x * cfg.patch_y * cfg.patch_z;
  auto dense = [&](const std::string& name, int out_dim, int in_dim) {
    Param<S>& w = params_.add(name + ".w", Shape{out_dim, in_dim});
    Param<S>& b = params_.add(name + ".b", Shape{out_dim});
    init_uniform(w, seed, in_dim);
    init_uniform(b, seed, in_dim);
  };
  dense("embed", cfg.hidden, feat);
  {
    Param<S>& cls = params_.add("class_token", Shape{1, 1, cfg.hidden});
    init_uniform(cls, seed, cfg.hidden);
  }
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string base = "block" + std::to_string(l);
    Param<S>& s1 = params_.add(base + ".ln1.scale", Shape{cfg.hidden});
    Param<S>& h1 = params_.add(base + ".ln1.shift", Shape{cfg.hidden});
    init_norm(s1, h1);
    dense(base + ".wq", cfg.hidden, cfg.hidden);
    dense(base + ".wk", cfg.hidden, cfg.hidden);
    dense(base + ".wv", cfg.hidden, cfg.hidden);
    dense(base + ".wo", cfg.hidden, cfg.hidden);
    Param<S>& s2 = params_.add(base + ".ln2.scale", Shape{cfg.hidden});
    Param<S>& h2 = params_.add(base + ".ln2.shift", Shape{cfg.hidden});
    init_norm(s2, h2);
    dense(base + ".mlp1", cfg.mlp, cfg.hidden);
    dense(base + ".mlp2", cfg.hidden, cfg.mlp);
  }
  Param<S>& sf = params_.add("ln_final.scale", Shape{cfg.hidden});
  Param<S>& hf = params_.add("ln_final.shift", Shape{cfg.hidden});
  init_norm(sf, hf);
  dense("head1", cfg.hidden, cfg.hidden);
  dense("head2", 1, cfg.hidden);
}

template <class S>
int ViTDiscriminator<S>::token_count(int z, int y, int x) const {
  return (z / cfg_.patch_z) * (y / cfg_.patch_y) * (x / cfg_.patch_x);
}

template <class S>
Value<S> ViTDiscriminator<S>::forward(Tape<S>& t, Value<S> input, bool frozen) {
  const Shape& sh = input.shape();
  if (sh.rank() != 5 || sh[1] != cfg_.in_channels) {
    throw ShapeError("vit discriminator: input must be (B,C,Z,Y,X), got " + sh.str());
  }
  const int B = sh[0];
  // patchify3d reports the offending axes on divisibility violations.
  Value<S> tokens = patchify3d(input, cfg_.patch_x, cfg_.patch_y, cfg_.patch_z);
  const int T = tokens.shape()[1];

  auto dense = [&](Value<S> v, const std::string& name) {
    return linear(v, param_leaf(t, *params_.find(name + ".w"), frozen),
                  param_leaf(t, *params_.find(name + ".b"), frozen));
  };
  auto ln = [&](Value<S> v, const std::string& name) {
    return layer_norm(v, param_leaf(t, *params_.find(name + ".scale"), frozen),
                      param_leaf(t, *params_.find(name + ".shift"), frozen));
  };

  Value<S> x = dense(tokens, "embed");  // (B, T, hidden)
  Value<S> cls = tile_batch(param_leaf(t, *params_.find("class_token"), frozen), B);
  x = concat_tokens(cls, x);  // class token first -> (B, T+1, hidden)

  // Learned positional embeddings, one per token incl. the class token.
  // Created on first use for the given token count (checkpoint loading
  // restores them via create_missing).
  {
    const std::string name = "pos_embed_" + std::to_string(T + 1);
    Param<S>* pos = params_.find(name);
    if (!pos) {
      pos = &params_.add(name, Shape{1, T + 1, cfg_.hidden});
      CounterRng rng(seed_, name);
      for (Eigen::Index i = 0; i < pos->value.size(); ++i) {
        pos->value[i] = static_cast<S>(rng.uniform(-0.02, 0.02));
      }
    }
    x = add(x, tile_batch(param_leaf(t, *pos, frozen), B));
  }

  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string base = "block" + std::to_string(l);
    Value<S> h = ln(x, base + ".ln1");
    auto pl = [&](const std::string& n) { return param_leaf(t, *params_.find(n), frozen); };
    Value<S> attn = multi_head_attention(h, pl(base + ".wq.w"), pl(base + ".wq.b"),
                                         pl(base + ".wk.w"), pl(base + ".wk.b"),
                                         pl(base + ".wv.w"), pl(base + ".wv.b"),
                                         pl(base + ".wo.w"), pl(base + ".wo.b"), cfg_.heads);
    x = add(x, attn);
    Value<S> m = ln(x, base + ".ln2");
    m = dense(m, base + ".mlp1");
    m = leaky_relu(m, static_cast<S>(cfg_.lrelu_slope));
    m = dense(m, base + ".mlp2");
    x = add(x, m);
  }

  x = ln(x, "ln_final");
  Value<S> cls_out = select_token(x, 0);  // (B, hidden)
  Value<S> h = dense(cls_out, "head1");
  h = leaky_relu(h, static_cast<S>(cfg_.lrelu_slope));
  return dense(h, "head2");  // (B, 1) logit
}

// --- prepare_disc_input ----------------------------------------------------------

template <class S>
Value<S> prepare_disc_input(Value<S> ct, Value<S> soft_label, int radius,
                            bool allow_nonstandard_radius) {
  if (radius != 2 && !allow_nonstandard_radius) {
    throw DomainError("prepare_disc_input: dilation radius is pinned to 2 (5x5x5 kernel); "
                      "override explicitly to change it");
  }
  if (ct.shape() != soft_label.shape()) {
    throw ShapeError("prepare_disc_input: shape mismatch " + ct.shape().str() + " vs " +
                     soft_label.shape().str());
  }
  Value<S> dilated = max_pool3d(soft_label, PoolOpts{2 * radius + 1, 1, radius});
  return mul(ct, dilated);
}

// --- config JSON -------------------------------------------------------------

json GeneratorConfig::to_json() const {
  return json{{"in_channels", in_channels},
              {"levels", levels},
              {"base_channels", base_channels},
              {"lrelu_slope", lrelu_slope}};
}

GeneratorConfig GeneratorConfig::from_json(const json& j) {
  GeneratorConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.levels = j.value("levels", c.levels);
  c.base_channels = j.value("base_channels", c.base_channels);
  c.lrelu_slope = j.value("lrelu_slope", c.lrelu_slope);
  return c;
}

json PatchDiscriminatorConfig::to_json() const {
  return json{{"in_channels", in_channels}, {"kernel", kernel},
              {"strides", strides},         {"base_channels", base_channels},
              {"max_channel_factor", max_channel_factor}, {"lrelu_slope", lrelu_slope}};
}

PatchDiscriminatorConfig PatchDiscriminatorConfig::from_json(const json& j) {
  PatchDiscriminatorConfig c;
  c.in_channels = j.value("in_channels", c.in_channels);
  c.kernel = j.value("kernel", c.kernel);
  if (j.contains("strides")) c.strides = j.at("strides").get<std::vector<int>>();
  c.base_channels = j.value("base_channels", c.base_channels);
  c.max_channel_factor = j.value("max_channel_factor", c.max_channel_factor);
  c.lrelu_slope = j.value("lrelu_slope", c.lrelu_slope);
  return c;
}

json ViTDiscriminatorConfig::to_json() const {
  return json{{"layers", layers}, {"hidden", hidden}, {"mlp", mlp},
              {"heads", heads},   {"patch_x", patch_x}, {"patch_y", patch_y},
              {"patch_z", patch_z}, {"lrelu_slope", lrelu_slope}};
}

ViTDiscriminatorConfig ViTDiscriminatorConfig::from_json(const json& j) {
  ViTDiscriminatorConfig c;
  c.layers = j.value("layers", c.layers);
  c.hidden = j.value("hidden", c.hidden);
  c.mlp = j.value("mlp", c.mlp);
  c.heads = j.value("heads", c.heads);
  c.patch_x = j.value("patch_x", c.patch_x);
  c.patch_y = j.value("patch_y", c.patch_y);
  c.patch_z = j.value("patch_z", c.patch_z);
  c.lrelu_slope = j.value("lrelu_slope", c.lrelu_slope);
  return c;
}

template class Generator<float>;
template class Generator<double>;
template class PatchDiscriminator<float>;
template class PatchDiscriminator<double>;
template class ViTDiscriminator<float>;
template class ViTDiscriminator<double>;

template Value<float> prepare_disc_input<float>(Value<float>, Value<float>, int, bool);
template Value<double> prepare_disc_input<double>(Value<double>, Value<double>, int, bool);

}  // namespace airway
