#pragma once

#include <optional>
#include <string>
#include <vector>

#include "airway/patching.hpp"
#include "airway/synth.hpp"

namespace airway::cli {

struct SynthArgs {
  int count = 1;
  Dims dims{48, 48, 48};
  int depth = 3;
  double root_radius = 2.5;
  double radius_decay = 0.75;
  double length_min = 10.0;
  double length_max = 14.0;
  double angle_min = 25.0;
  double angle_max = 40.0;
  std::uint64_t seed = 0;
  std::string out;
  int threads = 2;
};
int cmd_synth(const SynthArgs& args);

struct CorruptArgs {
  std::string in;
  std::string spec_path;
  std::string out;
  std::uint64_t seed = 0;
};
int cmd_corrupt(const CorruptArgs& args);

struct TrainArgs {
  std::string data;
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  std::string resume;
  std::string gen_config_path;   // overrides the generator section
  std::string disc_kind;         // "patch" | "vit"; overrides the config
  std::string disc_config_path;  // overrides the selected discriminator section
};
int cmd_train(const TrainArgs& args);

struct RefineArgs {
  std::string ct_path;
  std::string mask_path;
  std::string ckpt_path;
  std::string out;
  PatchDims patch_dims{128, 96, 144};
  double overlap = 0.5;
  std::string stitch_mode = "mean";
  bool no_lcc = false;
  int threads = 2;
};
int cmd_refine(const RefineArgs& args);

struct EvalArgs {
  std::string pred;           // file or directory
  std::string gt;             // file, or dataset dir with manifest.json
  std::string compare;        // optional second prediction set for the paired test
  std::string pred_suffix = ".refined.vol";
  bool use_prelim = false;    // evaluate the dataset's preliminary masks
  std::string out_csv;
  std::string summary_json;
  int threads = 2;
};
int cmd_eval(const EvalArgs& args);

struct GradcheckArgs {
  std::string only;  // comma-separated name filter; empty = all
};
int cmd_gradcheck(const GradcheckArgs& args);

struct AblateArgs {
  std::string preset = "table4";
  bool toy = false;
  std::uint64_t seed = 0;
  std::string out;
  std::string data;  // optional pre-built dataset
  int steps = 0;     // 0 = preset default
};
int cmd_ablate(const AblateArgs& args);

struct ReportArgs {
  std::string eval_csv;
  std::string train_log;
  std::string tree_mask;  // mask volume whose skeleton tree is exported as JSON
  std::string out_dir;
};
int cmd_report(const ReportArgs& args);

}  // namespace airway::cli
