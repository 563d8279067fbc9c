#include "airway/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "airway/rng.hpp"
#include "airway/skeleton.hpp"

namespace airway {

using namespace ad;
using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (g_lr <= 0 || d_lr <= 0) throw ConfigError("train: learning rates must be positive");
  for (std::size_t i = 1; i < decay_epochs.size(); ++i) {
    if (decay_epochs[i] <= decay_epochs[i - 1]) {
      throw ConfigError("train: decay epochs must be strictly increasing");
    }
  }
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("train: flip_prob must lie in [0,1]");
  if (disc_kind != "patch" && disc_kind != "vit") {
    throw ConfigError("train: disc_kind must be 'patch' or 'vit'");
  }
  weights.validate();
  if (static_cast<int>(weights.phi.size()) != gen.supervision_count()) {
    throw ConfigError("train: phi has " + std::to_string(weights.phi.size()) +
                      " weights but the generator emits " +
                      std::to_string(gen.supervision_count()) + " supervision outputs");
  }
}

json TrainConfig::to_json() const {
  return json{{"epochs", epochs},
              {"g_lr", g_lr},
              {"decay_epochs", decay_epochs},
              {"g_betas", {g_beta1, g_beta2}},
              {"d_lr", d_lr},
              {"d_betas", {d_beta1, d_beta2}},
              {"batch_size", batch_size},
              {"flip_prob", flip_prob},
              {"fg_crop_prob", fg_crop_prob},
              {"seed", seed},
              {"disc_kind", disc_kind},
              {"weights", weights.to_json()},
              {"patch_dims", {patch_dims.px, patch_dims.py, patch_dims.pz}},
              {"checkpoint_every", checkpoint_every},
              {"balance_guard", balance_guard},
              {"max_steps", max_steps},
              {"generator", gen.to_json()},
              {"patch_discriminator", patch_disc.to_json()},
              {"vit_discriminator", vit_disc.to_json()}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.g_lr = j.value("g_lr", c.g_lr);
  if (j.contains("decay_epochs")) c.decay_epochs = j.at("decay_epochs").get<std::vector<int>>();
  if (j.contains("g_betas")) {
    c.g_beta1 = j.at("g_betas")[0].get<double>();
    c.g_beta2 = j.at("g_betas")[1].get<double>();
  }
  c.d_lr = j.value("d_lr", c.d_lr);
  if (j.contains("d_betas")) {
    c.d_beta1 = j.at("d_betas")[0].get<double>();
    c.d_beta2 = j.at("d_betas")[1].get<double>();
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.fg_crop_prob = j.value("fg_crop_prob", c.fg_crop_prob);
  c.seed = j.value("seed", c.seed);
  c.disc_kind = j.value("disc_kind", c.disc_kind);
  if (j.contains("weights")) c.weights = LossWeights::from_json(j.at("weights"));
  if (j.contains("patch_dims")) {
    const auto& p = j.at("patch_dims");
    c.patch_dims = {p[0].get<int>(), p[1].get<int>(), p[2].get<int>()};
  }
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.balance_guard = j.value("balance_guard", c.balance_guard);
  c.max_steps = j.value("max_steps", c.max_steps);
  if (j.contains("generator")) c.gen = GeneratorConfig::from_json(j.at("generator"));
  if (j.contains("patch_discriminator")) {
    c.patch_disc = PatchDiscriminatorConfig::from_json(j.at("patch_discriminator"));
  }
  if (j.contains("vit_discriminator")) {
    c.vit_disc = ViTDiscriminatorConfig::from_json(j.at("vit_discriminator"));
  }
  return c;
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw DomainError("lr_at: epoch out of range");
  double lr = cfg.g_lr;
  for (int e : cfg.decay_epochs) {
    if (epoch >= e) lr *= 0.5;
  }
  return lr;
}

// --- Adam ---------------------------------------------------------------------

template <class S>
Adam<S>::Adam(ParamStore<S>& store, double beta1, double beta2, double eps)
    : store_(&store), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : store.items()) {
    m_.push_back(ArrayX<S>::Zero(p->value.size()));
    v_.push_back(ArrayX<S>::Zero(p->value.size()));
  }
}

template <class S>
void Adam<S>::step(double lr) {
  // Parameters created after construction (lazy positional tables) get
  // fresh state here.
  while (m_.size() < store_->items().size()) {
    const auto& p = store_->items()[m_.size()];
    m_.push_back(ArrayX<S>::Zero(p->value.size()));
    v_.push_back(ArrayX<S>::Zero(p->value.size()));
  }
  ++t_;
  const S b1 = static_cast<S>(b1_), b2 = static_cast<S>(b2_);
  const S corr1 = static_cast<S>(1.0 - std::pow(b1_, static_cast<double>(t_)));
  const S corr2 = static_cast<S>(1.0 - std::pow(b2_, static_cast<double>(t_)));
  for (std::size_t i = 0; i < store_->items().size(); ++i) {
    Param<S>& p = *store_->items()[i];
    if (p.grad.size() == 0) p.grad = ArrayX<S>::Zero(p.value.size());
    m_[i] = b1 * m_[i] + (S(1) - b1) * p.grad;
    v_[i] = b2 * v_[i] + (S(1) - b2) * p.grad.square();
    const auto mhat = m_[i] / corr1;
    const auto vhat = v_[i] / corr2;
    p.value -= static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(eps_));
  }
}

template <class S>
void Adam<S>::add_to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const {
  for (std::size_t i = 0; i < store_->items().size() && i < m_.size(); ++i) {
    const Param<S>& p = *store_->items()[i];
    ckpt.add(prefix + "m." + p.name,
             TensorData<float>(p.shape, m_[i].template cast<float>()));
    ckpt.add(prefix + "v." + p.name,
             TensorData<float>(p.shape, v_[i].template cast<float>()));
  }
  ckpt.meta[prefix + "t"] = t_;
}

template <class S>
void Adam<S>::load_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
  while (m_.size() < store_->items().size()) {
    const auto& p = store_->items()[m_.size()];
    m_.push_back(ArrayX<S>::Zero(p->value.size()));
    v_.push_back(ArrayX<S>::Zero(p->value.size()));
  }
  for (std::size_t i = 0; i < store_->items().size(); ++i) {
    const Param<S>& p = *store_->items()[i];
    const auto* m = ckpt.find(prefix + "m." + p.name);
    const auto* v = ckpt.find(prefix + "v." + p.name);
    if (!m || !v) throw ConfigError("checkpoint: missing optimizer state for " + p.name);
    m_[i] = m->data.template cast<S>();
    v_[i] = v->data.template cast<S>();
  }
  if (!ckpt.meta.contains(prefix + "t")) throw ConfigError("checkpoint: missing " + prefix + "t");
  t_ = ckpt.meta.at(prefix + "t").get<std::int64_t>();
}

template class Adam<float>;
template class Adam<double>;

// --- dataset --------------------------------------------------------------------

Dataset load_dataset(const std::string& dir, bool need_prelim) {
  const fs::path root(dir);
  const fs::path manifest_path = root / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing dataset manifest: " + manifest_path.string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("bad dataset manifest: " + std::string(e.what()));
  }
  Dataset data;
  for (const auto& c : manifest.at("cases")) {
    TrainCaseData item;
    item.id = c.at("id").get<std::string>();
    try {
      item.ct = read_raw_volume((root / c.at("image").get<std::string>()).string());
      item.gt = read_raw_mask((root / c.at("gt").get<std::string>()).string());
      if (c.contains("prelim")) {
        item.prelim = read_raw_mask((root / c.at("prelim").get<std::string>()).string());
      } else if (need_prelim) {
        throw IoError("case " + item.id + " has no preliminary mask; run `corrupt` first");
      }
    } catch (const Error& e) {
      throw IoError("case " + item.id + ": " + e.what());
    }
    if (!(item.ct.dims == item.gt.dims)) {
      throw ShapeError("case " + item.id + ": image/gt dims differ");
    }
    item.centreline = skeletonize(item.gt).mask;
    for (std::int64_t i = 0; i < item.gt.dims.count(); ++i) {
      if (item.gt.data[i]) item.fg_voxels.push_back(i);
    }
    data.push_back(std::move(item));
  }
  if (data.empty()) throw IoError("dataset manifest lists no cases");
  return data;
}

// --- trainer --------------------------------------------------------------------

Trainer::Trainer(TrainConfig cfg, Dataset data) : cfg_(cfg), data_(std::move(data)) {
  cfg_.validate();
  if (data_.empty()) throw ConfigError("trainer: empty dataset");
  for (const auto& c : data_) {
    if (c.prelim.data.empty()) throw ConfigError("trainer: case " + c.id + " lacks prelim");
    if (c.ct.dims.nx < cfg_.patch_dims.px || c.ct.dims.ny < cfg_.patch_dims.py ||
        c.ct.dims.nz < cfg_.patch_dims.pz) {
      throw ConfigError("trainer: case " + c.id + " smaller than patch dims");
    }
  }
  gen_ = std::make_unique<Generator<float>>(cfg_.gen, CounterRng::mix(cfg_.seed, 1));
  patch_disc_ =
      std::make_unique<PatchDiscriminator<float>>(cfg_.patch_disc, CounterRng::mix(cfg_.seed, 2));
  vit_disc_ =
      std::make_unique<ViTDiscriminator<float>>(cfg_.vit_disc, CounterRng::mix(cfg_.seed, 3));
  g_opt_ = std::make_unique<Adam<float>>(gen_->params(), cfg_.g_beta1, cfg_.g_beta2);
  if (cfg_.disc_kind == "patch") {
    d_opt_ = std::make_unique<Adam<float>>(patch_disc_->params(), cfg_.d_beta1, cfg_.d_beta2);
  } else {
    d_opt_ = std::make_unique<Adam<float>>(vit_disc_->params(), cfg_.d_beta1, cfg_.d_beta2);
  }
}

Trainer::~Trainer() = default;

int Trainer::steps_per_epoch() const {
  return static_cast<int>((data_.size() + cfg_.batch_size - 1) / cfg_.batch_size);
}

Value<float> Trainer::disc_forward(Tape<float>& t, Value<float> input, bool frozen) {
  if (cfg_.disc_kind == "patch") return patch_disc_->forward(t, input, frozen);
  return vit_disc_->forward(t, input, frozen);
}

Trainer::Batch Trainer::assemble_batch(int epoch, int step_in_epoch) const {
  const int B = cfg_.batch_size;
  const PatchDims pd = cfg_.patch_dims;
  const Shape in_shape{B, 2, pd.pz, pd.py, pd.px};
  const Shape one_shape{B, 1, pd.pz, pd.py, pd.px};
  Batch batch;
  batch.input = TensorData<float>::zeros(in_shape);
  batch.ct = TensorData<float>::zeros(one_shape);
  batch.gt = TensorData<float>::zeros(one_shape);
  batch.cl = TensorData<float>::zeros(one_shape);

  // Seeded per-epoch shuffle of case order.
  std::vector<int> order(data_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  {
    CounterRng shuffle(cfg_.seed, CounterRng::fnv1a("shuffle") + static_cast<std::uint64_t>(epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      std::swap(order[i], order[shuffle.uniform_int(0, i)]);
    }
  }

  const std::int64_t spatial = std::int64_t(pd.px) * pd.py * pd.pz;
  for (int slot = 0; slot < B; ++slot) {
    CounterRng rng(cfg_.seed, CounterRng::fnv1a("sample") +
                                  (static_cast<std::uint64_t>(epoch) << 32) +
                                  static_cast<std::uint64_t>(step_in_epoch) * 64 +
                                  static_cast<std::uint64_t>(slot));
    const TrainCaseData& c =
        data_[order[(static_cast<std::size_t>(step_in_epoch) * B + slot) % data_.size()]];
    const Dims d = c.ct.dims;

    int ox, oy, oz;
    if (!c.fg_voxels.empty() && rng.bernoulli(cfg_.fg_crop_prob)) {
      const std::int64_t centre =
          c.fg_voxels[static_cast<std::size_t>(rng.uniform_int(0, c.fg_voxels.size() - 1))];
      const int cx = static_cast<int>(centre % d.nx);
      const int cy = static_cast<int>((centre / d.nx) % d.ny);
      const int cz = static_cast<int>(centre / (std::int64_t(d.nx) * d.ny));
      ox = std::clamp(cx - pd.px / 2, 0, d.nx - pd.px);
      oy = std::clamp(cy - pd.py / 2, 0, d.ny - pd.py);
      oz = std::clamp(cz - pd.pz / 2, 0, d.nz - pd.pz);
    } else {
      ox = static_cast<int>(rng.uniform_int(0, d.nx - pd.px));
      oy = static_cast<int>(rng.uniform_int(0, d.ny - pd.py));
      oz = static_cast<int>(rng.uniform_int(0, d.nz - pd.pz));
    }
    const bool fx = rng.bernoulli(cfg_.flip_prob);
    const bool fy = rng.bernoulli(cfg_.flip_prob);

    float* in_ct = batch.input.data.data() + (std::int64_t(slot) * 2) * spatial;
    float* in_pre = in_ct + spatial;
    float* ct = batch.ct.data.data() + std::int64_t(slot) * spatial;
    float* gt = batch.gt.data.data() + std::int64_t(slot) * spatial;
    float* cl = batch.cl.data.data() + std::int64_t(slot) * spatial;
    std::int64_t k = 0;
    for (int z = 0; z < pd.pz; ++z)
      for (int y = 0; y < pd.py; ++y)
        for (int x = 0; x < pd.px; ++x, ++k) {
          const int sx = ox + (fx ? pd.px - 1 - x : x);
          const int sy = oy + (fy ? pd.py - 1 - y : y);
          const int sz = oz + z;
          const std::int64_t si = c.ct.index(sx, sy, sz);
          in_ct[k] = c.ct.data[si];
          in_pre[k] = static_cast<float>(c.prelim.data[si]);
          ct[k] = c.ct.data[si];
          gt[k] = static_cast<float>(c.gt.data[si]);
          cl[k] = static_cast<float>(c.centreline.data[si]);
        }
  }
  return batch;
}

namespace {

// Max-pool downsample (factor 2) of a non-grad tensor, for multi-scale
// supervision targets.
TensorData<float> downsample_max2(const TensorData<float>& t) {
  Tape<float> scratch;
  Value<float> v = max_pool3d(scratch.leaf(t, false), PoolOpts{2, 2, 0});
  return TensorData<float>(v.shape(), v.array());
}

}  // namespace

StepMetrics Trainer::step(int epoch, int step_in_epoch) {
  StepMetrics metrics;
  metrics.lr_g = lr_at(std::min(epoch, cfg_.epochs - 1), cfg_);
  const bool adversarial = cfg_.weights.delta > 0.0;
  const Batch batch = assemble_batch(epoch, step_in_epoch);

  gen_->params().zero_grads();
  patch_disc_->params().zero_grads();
  vit_disc_->params().zero_grads();

  // Generator forward (gradients flow to G parameters).
  Tape<float> tg;
  Value<float> input = tg.leaf(batch.input, false);
  auto outs = gen_->forward(tg, input);
  Value<float> p01 = mul_scalar(add_scalar(outs.final_out, 1.0f), 0.5f);

  // --- discriminator phase: backprop on D first -----------------------------
  {
    Tape<float> td;
    Value<float> ct_d = td.leaf(batch.ct, false);
    Value<float> gt_d = td.leaf(batch.gt, false);
    Value<float> fake_d = td.leaf(TensorData<float>(p01.shape(), p01.array()), false);
    Value<float> real_in = prepare_disc_input(ct_d, gt_d);
    Value<float> fake_in = prepare_disc_input(ct_d, fake_d);
    Value<float> real_logits = disc_forward(td, real_in, false);
    Value<float> fake_logits = disc_forward(td, fake_in, false);
    auto target = [&](Value<float> like, float v) {
      return td.leaf(TensorData<float>(like.shape(),
                                       ArrayX<float>::Constant(like.shape().numel(), v)),
                     false);
    };
    Value<float> d_loss = add(bce_with_logits_mean(real_logits, target(real_logits, 1.0f)),
                              bce_with_logits_mean(fake_logits, target(fake_logits, 0.0f)));
    metrics.d_loss = d_loss.array()[0];
    metrics.d_acc = discriminator_accuracy(real_logits, fake_logits);
    td.backward(d_loss);
    metrics.events.push_back("d_backward");

    bool guard_blocks = false;
    if (cfg_.balance_guard) {
      if (std::abs(metrics.d_acc - 1.0) < 0.01) ++guard_streak_;
      else guard_streak_ = 0;
      guard_blocks = guard_streak_ >= 50;
    }
    if (adversarial && !guard_blocks) {
      d_opt_->step(cfg_.d_lr);
      metrics.d_updated = true;
      metrics.events.push_back("d_update");
    }
  }

  // --- generator phase: fresh D evaluation past the D update ----------------
  metrics.events.push_back("g_forward_for_loss");
  std::optional<Value<float>> adv_term;
  if (adversarial) {
    Value<float> ct_g = tg.leaf(batch.ct, false);
    Value<float> fake_in = prepare_disc_input(ct_g, p01);
    Value<float> fake_logits = disc_forward(tg, fake_in, /*frozen=*/true);
    auto ones = tg.leaf(TensorData<float>(fake_logits.shape(),
                                          ArrayX<float>::Constant(fake_logits.shape().numel(), 1.0f)),
                        false);
    adv_term = bce_with_logits_mean(fake_logits, ones);
    metrics.adv = adv_term->array()[0];
  }

  const std::vector<Value<float>> supervision = outs.supervision();
  std::vector<TensorData<float>> gt_levels{batch.gt};
  std::vector<TensorData<float>> cl_levels{batch.cl};
  for (int i = 1; i < cfg_.gen.supervision_count(); ++i) {
    gt_levels.push_back(downsample_max2(gt_levels.back()));
    cl_levels.push_back(downsample_max2(cl_levels.back()));
  }
  // supervision is ordered deepest aux .. final; levels above are ordered
  // full-res .. deepest, so index from the back.
  std::vector<Value<float>> layer_losses;
  for (std::size_t j = 0; j + 1 < supervision.size(); ++j) {
    const std::size_t level = supervision.size() - 1 - j;  // depth of layer j
    Value<float> gt_j = tg.leaf(gt_levels[level], false);
    Value<float> cl_j = tg.leaf(cl_levels[level], false);
    layer_losses.push_back(layer_loss(supervision[j], gt_j, cl_j, std::nullopt, cfg_.weights));
  }
  {
    // Final layer built from its components so they double as diagnostics.
    const LossWeights& w = cfg_.weights;
    Value<float> gt_f = tg.leaf(batch.gt, false);
    Value<float> cl_f = tg.leaf(batch.cl, false);
    Value<float> l1 = l1_mean(p01, gt_f);
    Value<float> ccf = l_ccf(p01, cl_f);
    Value<float> ld = l_d(p01, gt_f, w.alpha_cl, w.cl_iters);
    metrics.l1 = l1.array()[0];
    metrics.ccf = ccf.array()[0];
    metrics.ld = ld.array()[0];
    Value<float> final_loss =
        add(add(mul_scalar(l1, static_cast<float>(w.alpha)),
                mul_scalar(ccf, static_cast<float>(w.beta))),
            mul_scalar(ld, static_cast<float>(w.gamma)));
    if (adv_term) {
      final_loss = add(final_loss, mul_scalar(*adv_term, static_cast<float>(w.delta)));
    }
    layer_losses.push_back(final_loss);
  }
  Value<float> total = total_loss(layer_losses, cfg_.weights);
  metrics.g_total = total.array()[0];

  if (!std::isfinite(metrics.g_total) || !std::isfinite(metrics.d_loss)) {
    throw Error("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                std::to_string(step_in_epoch) + "; last good checkpoint: " + last_checkpoint_);
  }

  tg.backward(total);
  g_opt_->step(metrics.lr_g);
  metrics.events.push_back("g_update");
  return metrics;
}

void Trainer::save_checkpoint_file(const std::string& path, int next_epoch) const {
  Checkpoint ckpt;
  ckpt.meta["epoch_next"] = next_epoch;
  ckpt.meta["seed"] = cfg_.seed;
  ckpt.meta["disc_kind"] = cfg_.disc_kind;
  ckpt.meta["generator"] = cfg_.gen.to_json();
  ckpt.add_store("gen.", gen_->params());
  if (cfg_.disc_kind == "patch") {
    ckpt.add_store("disc.", patch_disc_->params());
  } else {
    ckpt.add_store("disc.", vit_disc_->params());
  }
  g_opt_->add_to_checkpoint(ckpt, "opt.g.");
  d_opt_->add_to_checkpoint(ckpt, "opt.d.");
  save_checkpoint(path, ckpt);
}

void Trainer::load_checkpoint_file(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("disc_kind", "") != cfg_.disc_kind) {
    throw ConfigError("checkpoint disc_kind differs from config");
  }
  ckpt.load_store("gen.", gen_->params());
  if (cfg_.disc_kind == "patch") {
    ckpt.load_store("disc.", patch_disc_->params());
  } else {
    ckpt.load_store("disc.", vit_disc_->params(), /*create_missing=*/true);
  }
  g_opt_->load_from_checkpoint(ckpt, "opt.g.");
  d_opt_->load_from_checkpoint(ckpt, "opt.d.");
  start_epoch_ = ckpt.meta.value("epoch_next", 0);
  last_checkpoint_ = path;
}

void Trainer::run(const std::string& out_dir) {
  fs::create_directories(out_dir);
  {
    json resolved = cfg_.to_json();
    resolved["dataset_cases"] = data_.size();
    std::ofstream cfg_out(fs::path(out_dir) / "config.resolved.json");
    cfg_out << resolved.dump(2) << "\n";
  }
  const fs::path log_path = fs::path(out_dir) / "log.csv";
  std::ofstream log(log_path, start_epoch_ == 0 ? std::ios::trunc : std::ios::app);
  if (start_epoch_ == 0) {
    log << "# schema=1\n";
    log << "epoch,g_total,l1,ccf,ld,adv,d_loss,d_acc,lr_g\n";
  }

  const int spe = steps_per_epoch();
  int global_step = start_epoch_ * spe;
  char row[256];
  for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
    StepMetrics mean;
    int steps = 0;
    for (int s = 0; s < spe; ++s) {
      if (cfg_.max_steps > 0 && global_step >= cfg_.max_steps) break;
      const StepMetrics m = step(epoch, s);
      mean.g_total += m.g_total;
      mean.l1 += m.l1;
      mean.ccf += m.ccf;
      mean.ld += m.ld;
      mean.adv += m.adv;
      mean.d_loss += m.d_loss;
      mean.d_acc += m.d_acc;
      mean.lr_g = m.lr_g;
      ++steps;
      ++global_step;
    }
    if (steps == 0) break;
    const double inv = 1.0 / steps;
    std::snprintf(row, sizeof(row), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", epoch,
                  mean.g_total * inv, mean.l1 * inv, mean.ccf * inv, mean.ld * inv,
                  mean.adv * inv, mean.d_loss * inv, mean.d_acc * inv, mean.lr_g);
    log << row;
    log.flush();

    const bool last_epoch =
        epoch + 1 == cfg_.epochs || (cfg_.max_steps > 0 && global_step >= cfg_.max_steps);
    if ((epoch + 1) % cfg_.checkpoint_every == 0 && !last_epoch) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_e%04d.bin", epoch + 1);
      const std::string p = (fs::path(out_dir) / name).string();
      save_checkpoint_file(p, epoch + 1);
      last_checkpoint_ = p;
    }
    if (last_epoch) break;
  }
  const std::string final_path = (fs::path(out_dir) / "ckpt_final.bin").string();
  save_checkpoint_file(final_path, cfg_.epochs);
  last_checkpoint_ = final_path;
}

}  // namespace airway
