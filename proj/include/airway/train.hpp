#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "airway/autodiff.hpp"
#include "airway/checkpoint.hpp"
#include "airway/losses.hpp"
#include "airway/nets.hpp"
#include "airway/patching.hpp"
#include "airway/volume.hpp"
#include "json.hpp"

namespace airway {

struct TrainConfig {
  int epochs = 150;
  double g_lr = 0.001;
  std::vector<int> decay_epochs = {50, 80, 100, 120};  // halve at each
  double g_beta1 = 0.9, g_beta2 = 0.999;
  double d_lr = 0.001;
  double d_beta1 = 0.5, d_beta2 = 0.999;
  int batch_size = 2;
  double flip_prob = 0.5;
  double fg_crop_prob = 0.9;  // crops centred on a foreground voxel
  std::uint64_t seed = 0;
  std::string disc_kind = "patch";  // "patch" | "vit"
  LossWeights weights;
  PatchDims patch_dims{24, 24, 24};
  int checkpoint_every = 50;  // epochs
  bool balance_guard = false;
  int max_steps = 0;  // 0 = run all epochs; otherwise stop after this many steps
  GeneratorConfig gen = GeneratorConfig::toy();
  PatchDiscriminatorConfig patch_disc = PatchDiscriminatorConfig::toy();
  ViTDiscriminatorConfig vit_disc = ViTDiscriminatorConfig::toy();

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Piecewise-constant halving schedule for the generator learning rate.
double lr_at(int epoch, const TrainConfig& cfg);

template <class S>
class Adam {
 public:
  Adam(ad::ParamStore<S>& store, double beta1, double beta2, double eps = 1e-8);

  void step(double lr);
  std::int64_t t() const { return t_; }

  void add_to_checkpoint(Checkpoint& ckpt, const std::string& prefix) const;
  void load_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix);

 private:
  ad::ParamStore<S>* store_;
  double b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<ad::ArrayX<S>> m_, v_;
};

struct TrainCaseData {
  std::string id;
  Volume3 ct;
  Mask3 prelim;
  Mask3 gt;
  Mask3 centreline;  // hard skeleton of gt, computed at load time
  std::vector<std::int64_t> fg_voxels;
};

using Dataset = std::vector<TrainCaseData>;

/// Load a dataset directory written by `synth`/`corrupt` (manifest.json with
/// per-case image/gt/prelim paths). Computes centrelines and foreground lists.
Dataset load_dataset(const std::string& dir, bool need_prelim = true);

struct StepMetrics {
  double g_total = 0, l1 = 0, ccf = 0, ld = 0, adv = 0;
  double d_loss = 0, d_acc = 0;
  double lr_g = 0;
  bool d_updated = false;
  std::vector<std::string> events;  // step-phase ordering instrumentation
};

/// Adversarial training loop: per step, backpropagation runs on the
/// discriminator first, then the generator objective is computed against the
/// freshly updated discriminator.
class Trainer {
 public:
  Trainer(TrainConfig cfg, Dataset data);
  ~Trainer();

  StepMetrics step(int epoch, int step_in_epoch);
  /// Full run: writes log.csv, config.resolved.json and ckpt_*.bin under
  /// out_dir. Resumable via load_checkpoint_file.
  void run(const std::string& out_dir);

  void save_checkpoint_file(const std::string& path, int next_epoch) const;
  void load_checkpoint_file(const std::string& path);

  Generator<float>& generator() { return *gen_; }
  const TrainConfig& config() const { return cfg_; }
  int start_epoch() const { return start_epoch_; }
  int steps_per_epoch() const;

 private:
  struct Batch {
    ad::TensorData<float> input;  // (B, 2, Z, Y, X): CT + preliminary
    ad::TensorData<float> ct;     // (B, 1, Z, Y, X)
    ad::TensorData<float> gt;     // (B, 1, Z, Y, X) in {0,1}
    ad::TensorData<float> cl;     // (B, 1, Z, Y, X) in {0,1}
  };
  Batch assemble_batch(int epoch, int step_in_epoch) const;
  ad::Value<float> disc_forward(ad::Tape<float>& t, ad::Value<float> input, bool frozen);

  TrainConfig cfg_;
  Dataset data_;
  std::unique_ptr<Generator<float>> gen_;
  std::unique_ptr<PatchDiscriminator<float>> patch_disc_;
  std::unique_ptr<ViTDiscriminator<float>> vit_disc_;
  std::unique_ptr<Adam<float>> g_opt_;
  std::unique_ptr<Adam<float>> d_opt_;
  int start_epoch_ = 0;
  int guard_streak_ = 0;
  std::string last_checkpoint_ = "(none)";
};

}  // namespace airway
