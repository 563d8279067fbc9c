// airway: synthesize tubular phantoms, corrupt them into preliminary
// segmentations, train the adversarial refinement model, run sliding-window
// refinement, and evaluate topology-aware metrics.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "airway/errors.hpp"
#include "commands.hpp"

namespace {

using namespace airway;
using namespace airway::cli;

bool parse_triple(const std::string& s, int out[3]) {
  return std::sscanf(s.c_str(), "%d,%d,%d", &out[0], &out[1], &out[2]) == 3;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"airway segmentation refinement toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  std::string synth_dims = "48,48,48";
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate synthetic branching-tube cases");
  synth_cmd->add_option("--count", synth.count, "number of cases")->required();
  synth_cmd->add_option("--dims", synth_dims, "volume dims NX,NY,NZ (default 48,48,48)");
  synth_cmd->add_option("--depth", synth.depth, "bifurcation generations (default 3)");
  synth_cmd->add_option("--root-radius", synth.root_radius, "trunk radius in voxels");
  synth_cmd->add_option("--radius-decay", synth.radius_decay, "radius decay per generation");
  synth_cmd->add_option("--length-min", synth.length_min, "segment length lower bound");
  synth_cmd->add_option("--length-max", synth.length_max, "segment length upper bound");
  synth_cmd->add_option("--angle-min", synth.angle_min, "bifurcation half-angle min (deg)");
  synth_cmd->add_option("--angle-max", synth.angle_max, "bifurcation half-angle max (deg)");
  synth_cmd->add_option("--seed", synth.seed, "random seed")->required();
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--threads", synth.threads, "worker threads");

  CorruptArgs cor;
  CLI::App* cor_cmd =
      app.add_subcommand("corrupt", "degrade ground truth into preliminary segmentations");
  cor_cmd->add_option("--in", cor.in, "dataset directory")->required();
  cor_cmd->add_option("--spec", cor.spec_path, "corruption spec JSON");
  cor_cmd->add_option("--out", cor.out, "output directory (default: in place)");
  cor_cmd->add_option("--seed", cor.seed, "random seed")->required();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train the refinement GAN");
  train_cmd->add_option("--data", train.data, "dataset directory")->required();
  train_cmd->add_option("--config", train.config_path, "train config JSON");
  train_cmd->add_option("--out", train.out, "run directory")->required();
  train_cmd->add_option("--seed", train.seed, "random seed")->required();
  train_cmd->add_option("--resume", train.resume, "checkpoint to resume from");
  train_cmd->add_option("--gen-config", train.gen_config_path, "generator config JSON");
  train_cmd->add_option("--disc", train.disc_kind, "discriminator kind: patch | vit");
  train_cmd->add_option("--disc-config", train.disc_config_path, "discriminator config JSON");

  RefineArgs refine;
  std::string refine_dims = "128,96,144";
  CLI::App* refine_cmd = app.add_subcommand("refine", "refine one case with a trained model");
  refine_cmd->add_option("--ct", refine.ct_path, "CT volume (.vol)")->required();
  refine_cmd->add_option("--mask", refine.mask_path, "preliminary mask (.vol)")->required();
  refine_cmd->add_option("--ckpt", refine.ckpt_path, "checkpoint file")->required();
  refine_cmd->add_option("--out", refine.out, "output mask path")->required();
  refine_cmd->add_option("--patch-dims", refine_dims, "patch dims PX,PY,PZ (default 128,96,144)");
  refine_cmd->add_option("--overlap", refine.overlap, "sliding-window overlap (only 0.5)");
  refine_cmd->add_option("--stitch-mode", refine.stitch_mode, "mean | binary-vote");
  refine_cmd->add_flag("--no-lcc", refine.no_lcc, "skip largest-component postprocess");
  refine_cmd->add_option("--threads", refine.threads, "patch inference threads");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "compute the seven evaluation metrics");
  eval_cmd->add_option("--pred", eval.pred, "prediction mask or directory");
  eval_cmd->add_option("--gt", eval.gt, "ground-truth mask or dataset directory")->required();
  eval_cmd->add_option("--compare", eval.compare, "second prediction dir for the paired test");
  eval_cmd->add_option("--pred-suffix", eval.pred_suffix, "prediction filename suffix");
  eval_cmd->add_flag("--use-prelim", eval.use_prelim, "evaluate the dataset's preliminary masks");
  eval_cmd->add_option("--out", eval.out_csv, "CSV output path");
  eval_cmd->add_option("--summary", eval.summary_json, "JSON summary output path");
  eval_cmd->add_option("--threads", eval.threads, "worker threads");

  GradcheckArgs grad;
  bool grad_all = false;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient certification");
  grad_cmd->add_flag("--all", grad_all, "run every check (default)");
  grad_cmd->add_option("--only", grad.only, "substring filter on check names");

  AblateArgs ablate;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the ablation-grid presets");
  ablate_cmd->add_option("--preset", ablate.preset, "preset name (table4)");
  ablate_cmd->add_flag("--toy", ablate.toy, "toy-scale budget");
  ablate_cmd->add_option("--seed", ablate.seed, "random seed")->required();
  ablate_cmd->add_option("--out", ablate.out, "output directory")->required();
  ablate_cmd->add_option("--data", ablate.data, "pre-built dataset directory");
  ablate_cmd->add_option("--steps", ablate.steps, "training steps per config");

  ReportArgs report;
  CLI::App* report_cmd = app.add_subcommand("report", "render SVG reports from eval/train outputs");
  report_cmd->add_option("--eval", report.eval_csv, "eval CSV");
  report_cmd->add_option("--train", report.train_log, "train log CSV");
  report_cmd->add_option("--tree", report.tree_mask,
                         "mask volume; exports its skeleton tree as JSON");
  report_cmd->add_option("--out", report.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error code=usage msg=\"%s\"\n", e.what());
    return 2;
  }

  if (synth_cmd->parsed()) {
    int d[3];
    if (!parse_triple(synth_dims, d)) throw ConfigError("synth: bad --dims");
    synth.dims = {d[0], d[1], d[2]};
    return cmd_synth(synth);
  }
  if (cor_cmd->parsed()) return cmd_corrupt(cor);
  if (train_cmd->parsed()) return cmd_train(train);
  if (refine_cmd->parsed()) {
    int d[3];
    if (!parse_triple(refine_dims, d)) throw ConfigError("refine: bad --patch-dims");
    refine.patch_dims = {d[0], d[1], d[2]};
    return cmd_refine(refine);
  }
  if (eval_cmd->parsed()) return cmd_eval(eval);
  if (grad_cmd->parsed()) return cmd_gradcheck(grad);
  if (ablate_cmd->parsed()) return cmd_ablate(ablate);
  if (report_cmd->parsed()) return cmd_report(report);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const airway::IoError& e) {
    std::fprintf(stderr, "error code=io msg=\"%s\"\n", e.what());
    return 3;
  } catch (const airway::ShapeError& e) {
    std::fprintf(stderr, "error code=shape msg=\"%s\"\n", e.what());
    return 4;
  } catch (const airway::ConfigError& e) {
    std::fprintf(stderr, "error code=config msg=\"%s\"\n", e.what());
    return 4;
  } catch (const airway::DomainError& e) {
    std::fprintf(stderr, "error code=domain msg=\"%s\"\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error code=internal msg=\"%s\"\n", e.what());
    return 1;
  }
}
