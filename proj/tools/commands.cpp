#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "airway/checkpoint.hpp"
#include "airway/gradcheck_suite.hpp"
#include "airway/metrics.hpp"
#include "airway/morphology.hpp"
#include "airway/parallel.hpp"
#include "airway/refine.hpp"
#include "airway/rng.hpp"
#include "airway/skeleton.hpp"
#include "airway/train.hpp"
#include "json.hpp"
#include "svg_report.hpp"

namespace airway::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ull;
    }
    if (in.eof()) break;
  }
  return h;
}

class ManifestWriter {
 public:
  ManifestWriter(std::string command, json config, std::uint64_t seed)
      : command_(std::move(command)), config_(std::move(config)), seed_(seed),
        start_(std::chrono::steady_clock::now()) {}

  void add_input(const std::string& path) { inputs_.push_back(path); }
  void add_output(const std::string& path) { outputs_.push_back(path); }

  void write(const std::string& path) const {
    json m;
    m["command"] = command_;
    m["config"] = config_;
    m["seed"] = seed_;
    m["tool_version"] = kToolVersion;
    json in = json::object();
    for (const auto& p : inputs_) {
      char h[24];
      std::snprintf(h, sizeof(h), "%016llx",
                    static_cast<unsigned long long>(hash_file(p)));
      in[p] = h;
    }
    m["input_hashes"] = in;
    m["outputs"] = outputs_;
    m["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write run manifest: " + path);
    out << m.dump(2) << "\n";
  }

 private:
  std::string command_;
  json config_;
  std::uint64_t seed_;
  std::vector<std::string> inputs_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_;
};

json dataset_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw IoError("missing dataset manifest in " + dir);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("bad dataset manifest: " + std::string(e.what()));
  }
  return j;
}

std::string case_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "case_%04d", i);
  return buf;
}

struct MetricRowValues {
  std::string id;
  MetricReport overlap;
  TreeMetrics tree;
};

MetricRowValues evaluate_pair(const std::string& id, const Mask3& pred, const Mask3& gt) {
  MetricRowValues row;
  row.id = id;
  row.overlap = overlap_metrics(pred, gt);
  row.tree = tree_metrics(pred, gt);
  return row;
}

void write_eval_csv(const std::string& path, const std::vector<MetricRowValues>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write csv: " + path);
  out << "# schema=1\n";
  out << "case_id,iou,dice,dlr,dbr,precision,leakage,amr\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.id.c_str(),
                  r.overlap.iou, r.overlap.dice, r.tree.dlr, r.tree.dbr, r.overlap.precision,
                  r.overlap.leakage.value_or(std::nan("")),
                  r.overlap.amr.value_or(std::nan("")));
    out << buf;
  }
}

json summarize(const std::vector<MetricRowValues>& rows) {
  auto stats = [&](auto getter) {
    double mean = 0, sq = 0;
    int n = 0;
    for (const auto& r : rows) {
      const std::optional<double> v = getter(r);
      if (!v || std::isnan(*v)) continue;
      mean += *v;
      sq += *v * *v;
      ++n;
    }
    json j;
    if (n == 0) return j;
    mean /= n;
    const double var = std::max(0.0, sq / n - mean * mean);
    j["mean"] = mean;
    j["std"] = std::sqrt(var);
    j["n"] = n;
    return j;
  };
  json s;
  s["iou"] = stats([](const MetricRowValues& r) { return std::optional<double>(r.overlap.iou); });
  s["dice"] = stats([](const MetricRowValues& r) { return std::optional<double>(r.overlap.dice); });
  s["dlr"] = stats([](const MetricRowValues& r) { return std::optional<double>(r.tree.dlr); });
  s["dbr"] = stats([](const MetricRowValues& r) { return std::optional<double>(r.tree.dbr); });
  s["precision"] =
      stats([](const MetricRowValues& r) { return std::optional<double>(r.overlap.precision); });
  s["leakage"] = stats([](const MetricRowValues& r) { return r.overlap.leakage; });
  s["amr"] = stats([](const MetricRowValues& r) { return r.overlap.amr; });
  return s;
}

std::vector<double> metric_vector(const MetricRowValues& r) {
  return {r.overlap.iou,
          r.overlap.dice,
          r.tree.dlr,
          r.tree.dbr,
          r.overlap.precision,
          r.overlap.leakage.value_or(std::nan("")),
          r.overlap.amr.value_or(std::nan(""))};
}

}  // namespace

// --- synth ---------------------------------------------------------------------

int cmd_synth(const SynthArgs& args) {
  TreeSpec base;
  base.dims = args.dims;
  base.depth = args.depth;
  base.root_radius = args.root_radius;
  base.radius_decay = args.radius_decay;
  base.branch_length_min = args.length_min;
  base.branch_length_max = args.length_max;
  base.angle_min_deg = args.angle_min;
  base.angle_max_deg = args.angle_max;

  json config{{"count", args.count},
              {"dims", {args.dims.nx, args.dims.ny, args.dims.nz}},
              {"depth", args.depth},
              {"root_radius", args.root_radius},
              {"radius_decay", args.radius_decay},
              {"branch_length", {args.length_min, args.length_max}},
              {"branching_angle", {args.angle_min, args.angle_max}}};
  ManifestWriter manifest("synth", config, args.seed);

  fs::create_directories(args.out);
  std::vector<json> cases(static_cast<std::size_t>(args.count));
  parallel_for(args.count, args.threads, [&](int i) {
    TreeSpec spec = base;
    spec.seed = CounterRng::mix(args.seed, static_cast<std::uint64_t>(i));
    const SynthCase c = generate(spec);
    const std::string id = case_name(i);
    write_raw(c.image, (fs::path(args.out) / (id + ".vol")).string());
    write_raw(c.gt, (fs::path(args.out) / (id + ".mask.vol")).string());
    cases[static_cast<std::size_t>(i)] =
        json{{"id", id}, {"image", id + ".vol"}, {"gt", id + ".mask.vol"}};
  });

  json m;
  m["cases"] = cases;
  const std::string manifest_path = (fs::path(args.out) / "manifest.json").string();
  std::ofstream out(manifest_path);
  out << m.dump(2) << "\n";
  for (const auto& c : cases) {
    manifest.add_output((fs::path(args.out) / c.at("image").get<std::string>()).string());
  }
  manifest.add_output(manifest_path);
  manifest.write((fs::path(args.out) / "run_manifest.json").string());
  std::cout << "synth: wrote " << args.count << " cases to " << args.out << "\n";
  return 0;
}

// --- corrupt --------------------------------------------------------------------

int cmd_corrupt(const CorruptArgs& args) {
  CorruptionSpec spec;
  json spec_json = json::object();
  if (!args.spec_path.empty()) {
    std::ifstream in(args.spec_path);
    if (!in) throw IoError("missing corruption spec: " + args.spec_path);
    in >> spec_json;
    spec.breakage_count = spec_json.value("breakage_count", spec.breakage_count);
    spec.breakage_gap = spec_json.value("breakage_gap", spec.breakage_gap);
    spec.branch_deletion_prob = spec_json.value("branch_deletion_prob", spec.branch_deletion_prob);
    spec.boundary_noise_prob = spec_json.value("boundary_noise_prob", spec.boundary_noise_prob);
  }
  const std::string out_dir = args.out.empty() ? args.in : args.out;
  fs::create_directories(out_dir);

  ManifestWriter manifest("corrupt", spec_json, args.seed);
  manifest.add_input((fs::path(args.in) / "manifest.json").string());

  json in_manifest = dataset_manifest(args.in);
  json out_cases = json::array();
  for (const auto& c : in_manifest.at("cases")) {
    const std::string id = c.at("id").get<std::string>();
    const std::string gt_rel = c.at("gt").get<std::string>();
    const Mask3 gt = read_raw_mask((fs::path(args.in) / gt_rel).string());
    CorruptionSpec cs = spec;
    cs.seed = CounterRng::mix(args.seed, CounterRng::fnv1a(id));
    const Mask3 prelim = corrupt(gt, cs);
    const std::string prelim_name = id + ".prelim.vol";
    write_raw(prelim, (fs::path(out_dir) / prelim_name).string());

    json oc = c;
    if (out_dir != args.in) {
      // re-anchor image/gt paths relative to the output directory
      for (const char* key : {"image", "gt"}) {
        const fs::path abs = fs::absolute(fs::path(args.in) / c.at(key).get<std::string>());
        oc[key] = fs::relative(abs, fs::absolute(out_dir)).string();
      }
    }
    oc["prelim"] = prelim_name;
    out_cases.push_back(oc);
    manifest.add_output((fs::path(out_dir) / prelim_name).string());
  }
  json m;
  m["cases"] = out_cases;
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream out(manifest_path);
  out << m.dump(2) << "\n";
  manifest.add_output(manifest_path);
  manifest.write((fs::path(out_dir) / "run_manifest.corrupt.json").string());
  std::cout << "corrupt: wrote preliminary masks for " << out_cases.size() << " cases to "
            << out_dir << "\n";
  return 0;
}

// --- train ----------------------------------------------------------------------

int cmd_train(const TrainArgs& args) {
  TrainConfig cfg;
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw IoError("missing train config: " + args.config_path);
    json j;
    in >> j;
    cfg = TrainConfig::from_json(j);
  }
  auto load_json = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing config: " + path);
    json j;
    in >> j;
    return j;
  };
  if (!args.gen_config_path.empty()) {
    cfg.gen = GeneratorConfig::from_json(load_json(args.gen_config_path));
  }
  if (!args.disc_kind.empty()) cfg.disc_kind = args.disc_kind;
  if (!args.disc_config_path.empty()) {
    const json j = load_json(args.disc_config_path);
    if (cfg.disc_kind == "vit") cfg.vit_disc = ViTDiscriminatorConfig::from_json(j);
    else cfg.patch_disc = PatchDiscriminatorConfig::from_json(j);
  }
  cfg.seed = args.seed;
  cfg.validate();

  ManifestWriter manifest("train", cfg.to_json(), args.seed);
  manifest.add_input((fs::path(args.data) / "manifest.json").string());

  Dataset data = load_dataset(args.data);
  Trainer trainer(cfg, std::move(data));
  if (!args.resume.empty()) {
    trainer.load_checkpoint_file(args.resume);
    manifest.add_input(args.resume);
  }
  trainer.run(args.out);
  manifest.add_output((fs::path(args.out) / "log.csv").string());
  manifest.add_output((fs::path(args.out) / "ckpt_final.bin").string());
  manifest.write((fs::path(args.out) / "run_manifest.json").string());
  std::cout << "train: finished; artifacts in " << args.out << "\n";
  return 0;
}

// --- refine ---------------------------------------------------------------------

int cmd_refine(const RefineArgs& args) {
  if (args.overlap != 0.5) {
    throw ConfigError("refine: only 50% overlap is supported (--overlap 0.5)");
  }
  RefineConfig cfg;
  cfg.patch_dims = args.patch_dims;
  cfg.apply_lcc = !args.no_lcc;
  cfg.threads = args.threads;
  if (args.stitch_mode == "mean") cfg.stitch_mode = StitchMode::Mean;
  else if (args.stitch_mode == "binary-vote") cfg.stitch_mode = StitchMode::BinaryVote;
  else throw ConfigError("refine: --stitch-mode must be mean or binary-vote");

  json config{{"patch_dims", {args.patch_dims.px, args.patch_dims.py, args.patch_dims.pz}},
              {"stitch_mode", args.stitch_mode},
              {"lcc", cfg.apply_lcc}};
  ManifestWriter manifest("refine", config, 0);
  manifest.add_input(args.ct_path);
  manifest.add_input(args.mask_path);
  manifest.add_input(args.ckpt_path);

  const Checkpoint ckpt = load_checkpoint(args.ckpt_path);
  GeneratorConfig gen_cfg = GeneratorConfig::toy();
  if (ckpt.meta.contains("generator")) {
    gen_cfg = GeneratorConfig::from_json(ckpt.meta.at("generator"));
  }
  Generator<float> gen(gen_cfg, 0);
  ckpt.load_store("gen.", gen.params());

  const Volume3 ct = read_raw_volume(args.ct_path);
  const Mask3 prelim = read_raw_mask(args.mask_path);
  const Mask3 refined = refine_case(ct, prelim, gen, cfg);
  write_raw(refined, args.out);
  manifest.add_output(args.out);
  manifest.write(args.out + ".run.json");
  std::cout << "refine: wrote " << args.out << " (" << refined.popcount() << " voxels)\n";
  return 0;
}

// --- eval -----------------------------------------------------------------------

namespace {

std::vector<MetricRowValues> eval_directory(const EvalArgs& args, const std::string& pred_dir,
                                            std::vector<std::string>* inputs) {
  const json manifest = dataset_manifest(args.gt);
  std::vector<json> cases(manifest.at("cases").begin(), manifest.at("cases").end());
  std::vector<MetricRowValues> rows(cases.size());
  parallel_for(static_cast<int>(cases.size()), args.threads, [&](int i) {
    const json& c = cases[static_cast<std::size_t>(i)];
    const std::string id = c.at("id").get<std::string>();
    const Mask3 gt = read_raw_mask((fs::path(args.gt) / c.at("gt").get<std::string>()).string());
    std::string pred_path;
    if (args.use_prelim) {
      if (!c.contains("prelim")) throw IoError("case " + id + " has no preliminary mask");
      pred_path = (fs::path(args.gt) / c.at("prelim").get<std::string>()).string();
    } else {
      pred_path = (fs::path(pred_dir) / (id + args.pred_suffix)).string();
    }
    const Mask3 pred = read_raw_mask(pred_path);
    rows[static_cast<std::size_t>(i)] = evaluate_pair(id, pred, gt);
  });
  if (inputs) {
    for (const auto& c : cases) {
      inputs->push_back((fs::path(args.gt) / c.at("gt").get<std::string>()).string());
    }
  }
  return rows;
}

}  // namespace

int cmd_eval(const EvalArgs& args) {
  json config{{"pred", args.pred}, {"gt", args.gt}, {"use_prelim", args.use_prelim}};
  ManifestWriter manifest("eval", config, 0);

  std::vector<MetricRowValues> rows;
  std::vector<std::string> inputs;
  const bool dir_mode = fs::is_directory(args.gt);
  if (dir_mode) {
    rows = eval_directory(args, args.pred, &inputs);
  } else {
    const Mask3 pred = read_raw_mask(args.pred);
    const Mask3 gt = read_raw_mask(args.gt);
    rows.push_back(evaluate_pair("case", pred, gt));
    inputs = {args.pred, args.gt};
  }
  for (const auto& p : inputs) manifest.add_input(p);

  if (!args.out_csv.empty()) {
    write_eval_csv(args.out_csv, rows);
    manifest.add_output(args.out_csv);
  } else {
    // one line per case on stdout
    for (const auto& r : rows) {
      std::printf("%s iou=%.4f dice=%.4f dlr=%.4f dbr=%.4f precision=%.4f leakage=%.4f amr=%.4f\n",
                  r.id.c_str(), r.overlap.iou, r.overlap.dice, r.tree.dlr, r.tree.dbr,
                  r.overlap.precision, r.overlap.leakage.value_or(std::nan("")),
                  r.overlap.amr.value_or(std::nan("")));
    }
  }

  json summary = summarize(rows);
  if (!args.compare.empty()) {
    if (!dir_mode) throw ConfigError("eval: --compare needs directory mode");
    EvalArgs cmp_args = args;
    cmp_args.use_prelim = false;
    const std::vector<MetricRowValues> cmp = eval_directory(cmp_args, args.compare, nullptr);
    if (cmp.size() != rows.size()) throw ConfigError("eval: --compare case count differs");
    json tests = json::object();
    const char* names[] = {"iou", "dice", "dlr", "dbr", "precision", "leakage", "amr"};
    for (int m = 0; m < 7; ++m) {
      std::vector<double> a, b;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double va = metric_vector(rows[i])[static_cast<std::size_t>(m)];
        const double vb = metric_vector(cmp[i])[static_cast<std::size_t>(m)];
        if (!std::isnan(va) && !std::isnan(vb)) {
          a.push_back(va);
          b.push_back(vb);
        }
      }
      try {
        const WilcoxonResult w = wilcoxon_signed_rank(a, b);
        tests[names[m]] = json{{"p_value", w.p_value},
                               {"statistic", w.statistic},
                               {"n", w.n_effective},
                               {"exact", w.exact}};
      } catch (const DomainError& e) {
        tests[names[m]] = json{{"error", e.what()}};
      }
    }
    summary["wilcoxon_vs_compare"] = tests;
  }
  if (!args.summary_json.empty()) {
    std::ofstream out(args.summary_json);
    out << summary.dump(2) << "\n";
    manifest.add_output(args.summary_json);
    manifest.write(args.summary_json + ".run.json");
  } else if (!args.out_csv.empty()) {
    manifest.write(args.out_csv + ".run.json");
  }
  return 0;
}

// --- gradcheck --------------------------------------------------------------------

int cmd_gradcheck(const GradcheckArgs& args) {
  const std::vector<GradCheckCase> cases = run_gradcheck_suite();
  bool all_ok = true;
  std::printf("%-28s %12s %8s %6s  %s\n", "operator", "max_rel_err", "checked", "kinks", "status");
  for (const auto& c : cases) {
    if (!args.only.empty() && args.only.find(c.name) == std::string::npos) continue;
    const bool ok = c.passed();
    all_ok = all_ok && ok;
    std::printf("%-28s %12.3e %8lld %6lld  %s\n", c.name.c_str(), c.report.max_rel_error,
                static_cast<long long>(c.report.checked),
                static_cast<long long>(c.report.skipped_kinks), ok ? "ok" : "FAIL");
  }
  return all_ok ? 0 : 1;
}

// --- ablate ----------------------------------------------------------------------

namespace {

struct AblationConfig {
  std::string name;
  bool cl_dice = false;
  bool ccf = false;
  bool multi_scale = false;
  std::string disc_kind = "patch";
};

std::vector<AblationConfig> table4_presets() {
  return {{"BL", false, false, false, "patch"},
          {"BL+clDice", true, false, false, "patch"},
          {"BL+ccf", false, true, false, "patch"},
          {"BL+ccf+multi-scale", false, true, true, "patch"},
          {"BL+clDice+multi-scale", true, false, true, "patch"},
          {"BL+ccf+clDice+multi-scale", true, true, true, "patch"},
          {"BL(ViT)+ccf+clDice+multi-scale", true, true, true, "vit"}};
}

}  // namespace

int cmd_ablate(const AblateArgs& args) {
  if (args.preset != "table4") throw ConfigError("ablate: unknown preset " + args.preset);
  fs::create_directories(args.out);
  ManifestWriter manifest("ablate", json{{"preset", args.preset}, {"toy", args.toy}}, args.seed);

  // Data: supplied, or synthesized here at toy scale.
  std::string data_dir = args.data;
  if (data_dir.empty()) {
    data_dir = (fs::path(args.out) / "data").string();
    SynthArgs synth;
    synth.count = 12;
    synth.dims = {40, 40, 40};
    synth.depth = 2;
    synth.root_radius = 2.2;
    synth.seed = CounterRng::mix(args.seed, 0xab1a7e);
    synth.out = data_dir;
    cmd_synth(synth);
    CorruptArgs cor;
    cor.in = data_dir;
    cor.seed = CounterRng::mix(args.seed, 0xc0442);
    json spec{{"breakage_count", 1}, {"breakage_gap", 4}, {"branch_deletion_prob", 0.3}};
    const std::string spec_path = (fs::path(args.out) / "corruption.json").string();
    std::ofstream(spec_path) << spec.dump() << "\n";
    cor.spec_path = spec_path;
    cmd_corrupt(cor);
  }
  Dataset all = load_dataset(data_dir);
  const std::size_t n_eval = std::max<std::size_t>(2, all.size() / 4);
  Dataset eval_set(all.end() - static_cast<std::ptrdiff_t>(n_eval), all.end());
  Dataset train_set(all.begin(), all.end() - static_cast<std::ptrdiff_t>(n_eval));

  const int steps = args.steps > 0 ? args.steps : (args.toy ? 250 : 800);
  const std::string csv_path = (fs::path(args.out) / "ablation.csv").string();
  std::ofstream csv(csv_path);
  csv << "# schema=1\n";
  csv << "config,iou,dice,dlr,dbr,precision,leakage,amr\n";

  for (const AblationConfig& ab : table4_presets()) {
    TrainConfig cfg;
    cfg.gen = GeneratorConfig::toy();
    cfg.patch_disc = PatchDiscriminatorConfig::toy();
    cfg.vit_disc = ViTDiscriminatorConfig::toy();
    cfg.patch_dims = {16, 16, 16};
    cfg.batch_size = 2;
    cfg.seed = CounterRng::mix(args.seed, CounterRng::fnv1a(ab.name));
    cfg.disc_kind = ab.disc_kind;
    cfg.max_steps = steps;
    cfg.epochs = 10000;  // bounded by max_steps
    cfg.decay_epochs = {};
    cfg.checkpoint_every = 1 << 20;
    cfg.weights.alpha = 1.0;
    cfg.weights.gamma = 1.0;
    cfg.weights.delta = 0.1;
    cfg.weights.alpha_cl = ab.cl_dice ? 0.5 : 0.0;
    cfg.weights.beta = ab.ccf ? 1.0 : 0.0;
    cfg.weights.phi = ab.multi_scale ? std::vector<double>{0.5, 0.75, 1.0}
                                     : std::vector<double>{0.0, 0.0, 1.0};

    Trainer trainer(cfg, train_set);
    const std::string run_dir = (fs::path(args.out) / ("run_" + std::to_string(&ab - &table4_presets()[0]))).string();
    trainer.run(run_dir);

    RefineConfig rc;
    rc.patch_dims = cfg.patch_dims;
    std::vector<MetricRowValues> rows;
    for (const auto& c : eval_set) {
      const Mask3 refined = refine_case(c.ct, c.prelim, trainer.generator(), rc);
      rows.push_back(evaluate_pair(c.id, refined, c.gt));
    }
    const json s = summarize(rows);
    auto mean_of = [&](const char* key) {
      return s.contains(key) && s.at(key).contains("mean") ? s.at(key).at("mean").get<double>()
                                                           : std::nan("");
    };
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", ab.name.c_str(),
                  mean_of("iou"), mean_of("dice"), mean_of("dlr"), mean_of("dbr"),
                  mean_of("precision"), mean_of("leakage"), mean_of("amr"));
    csv << buf;
    csv.flush();
    std::cout << "ablate: " << ab.name << " done\n";
  }
  manifest.add_output(csv_path);
  manifest.write((fs::path(args.out) / "run_manifest.json").string());
  std::cout << "ablate: wrote " << csv_path << "\n";
  return 0;
}

// --- report ----------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("missing csv: " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace

int cmd_report(const ReportArgs& args) {
  fs::create_directories(args.out_dir);
  ManifestWriter manifest("report", json{{"eval", args.eval_csv}, {"train", args.train_log}}, 0);

  if (!args.eval_csv.empty()) {
    manifest.add_input(args.eval_csv);
    const auto rows = read_csv(args.eval_csv);
    if (rows.empty()) throw ConfigError("report: empty eval csv");
    std::vector<report::EvalRow> eval_rows;
    for (std::size_t i = 1; i < rows.size(); ++i) {  // skip header row
      report::EvalRow r;
      r.case_id = rows[i][0];
      for (std::size_t c = 1; c < rows[i].size(); ++c) {
        try {
          r.values.push_back(std::stod(rows[i][c]));
        } catch (...) {
          r.values.push_back(std::nan(""));
        }
      }
      eval_rows.push_back(std::move(r));
    }
    const std::string svg = (fs::path(args.out_dir) / "eval_report.svg").string();
    report::write_eval_svg(svg, eval_rows);
    manifest.add_output(svg);
    std::cout << "report: wrote " << svg << "\n";
  }
  if (!args.tree_mask.empty()) {
    manifest.add_input(args.tree_mask);
    const Mask3 m = read_raw_mask(args.tree_mask);
    const Skeleton s = skeletonize(m);
    const TreeGraph tree = decompose(s, m.spacing);
    const std::string path = (fs::path(args.out_dir) / "tree.json").string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << tree.to_json();
    manifest.add_output(path);
    std::cout << "report: wrote " << path << " (" << tree.branches.size() << " branches)\n";
  }
  if (!args.train_log.empty()) {
    manifest.add_input(args.train_log);
    const auto rows = read_csv(args.train_log);
    if (rows.size() < 2) throw ConfigError("report: train log too short");
    // header: epoch,g_total,l1,ccf,ld,adv,d_loss,d_acc,lr_g
    std::vector<report::Series> series;
    for (std::size_t c = 1; c < rows[0].size() && c < 9; ++c) {
      report::Series s;
      s.name = rows[0][c];
      for (std::size_t i = 1; i < rows.size(); ++i) {
        try {
          s.values.push_back(std::stod(rows[i][c]));
        } catch (...) {
          s.values.push_back(std::nan(""));
        }
      }
      series.push_back(std::move(s));
    }
    const std::string svg = (fs::path(args.out_dir) / "train_curves.svg").string();
    report::write_curves_svg(svg, series);
    manifest.add_output(svg);
    std::cout << "report: wrote " << svg << "\n";
  }
  manifest.write((fs::path(args.out_dir) / "run_manifest.report.json").string());
  return 0;
}

}  // namespace airway::cli
