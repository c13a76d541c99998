#pragma once

// Command-line front end. Five subcommands sharing one config mechanism:
// defaults in code, then --config file, then key=value overrides, then the
// dedicated flags. Failures print a single machine-parsable line of the
// form "error category=<cat>: <message>" and exit nonzero (2 for usage).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "handmim/config.hpp"
#include "handmim/data.hpp"
#include "handmim/evaluate.hpp"
#include "handmim/finetune.hpp"
#include "handmim/plot.hpp"
#include "handmim/pretrain.hpp"

namespace handmim {

inline const char* cli_usage() {
  return
      "usage: handmim <command> [options] [key=value ...]\n"
      "\n"
      "commands:\n"
      "  gen-data   --out DIR [--n N] [--seed S]        write a synthetic labeled dataset\n"
      "  pretrain   --data DIR|--crops DIR --out DIR    masked self-distillation pre-training\n"
      "  finetune   --data DIR --out DIR                train the mesh regression head\n"
      "             [--pretrained CKPT] [--freeze-blocks N]\n"
      "  eval       --data DIR --checkpoint CKPT --out DIR   metrics + predictions\n"
      "  plot       --in DIR [--out DIR]                render AUC curves to PNG\n"
      "\n"
      "common options:\n"
      "  --config FILE    key = value lines, '#' comments\n"
      "  --seed N         overrides config key 'seed'\n"
      "  --ablate pose|patch|recon   zero one pre-training loss weight (repeatable)\n"
      "  key=value        override any config key directly\n"
      "\n"
      "config keys (defaults in parentheses):\n"
      "  vit (toy)                     backbone preset: toy|small|base|large\n"
      "  seed (0)                      run seed\n"
      "  optimizer.lr (2e-3 pretrain, 4e-5 finetune)\n"
      "  optimizer.weight_decay (0)   optimizer.batch_size (32/16)\n"
      "  optimizer.epochs (50/10)     optimizer.warmup_epochs (5, finetune)\n"
      "  loss.w_pose/.w_patch/.w_recon (1)    pre-training loss weights\n"
      "  loss.w_mano/.w_vert/.w_kpt (1)       fine-tuning loss weights\n"
      "  mask.ratio_min (0.1)  mask.ratio_max (0.5)\n"
      "  ema.base (0.996)  ema.final (1.0)\n"
      "  distill.temp_student (0.1)  distill.temp_teacher (0.04)\n"
      "  distill.center_momentum (0.9)  pseudo.k (128)  proj.hidden (64 toy)\n"
      "  head.iters (3)  head.hidden (64)  head.init_depth (0.4)\n"
      "  crop.margin (1.3)  freeze_blocks (0)\n"
      "  data.n (50)  data.image_size (224)  checkpoint.every (0)\n";
}

struct CliArgs {
  std::string command;
  Config config;
  std::optional<std::string> out, data, crops, checkpoint, pretrained, in;
  std::vector<std::string> ablate;

  static CliArgs parse(const std::vector<std::string>& argv) {
    CliArgs a;
    HM_CHECK(!argv.empty(), UsageError, "missing command; run with --help");
    a.command = argv[0];
    std::vector<std::pair<std::string, std::string>> flag_overrides;
    std::size_t i = 1;
    auto need_value = [&](const std::string& flag) {
      HM_CHECK(i + 1 < argv.size(), UsageError, flag + " requires a value");
      return argv[++i];
    };
    for (; i < argv.size(); ++i) {
      const std::string& arg = argv[i];
      if (arg == "--config") {
        a.config.merge_file(need_value(arg));
      } else if (arg == "--out") {
        a.out = need_value(arg);
      } else if (arg == "--data") {
        a.data = need_value(arg);
      } else if (arg == "--crops") {
        a.crops = need_value(arg);
      } else if (arg == "--checkpoint") {
        a.checkpoint = need_value(arg);
      } else if (arg == "--pretrained") {
        a.pretrained = need_value(arg);
      } else if (arg == "--in") {
        a.in = need_value(arg);
      } else if (arg == "--seed") {
        flag_overrides.emplace_back("seed", need_value(arg));
      } else if (arg == "--n") {
        flag_overrides.emplace_back("data.n", need_value(arg));
      } else if (arg == "--freeze-blocks") {
        flag_overrides.emplace_back("freeze_blocks", need_value(arg));
      } else if (arg == "--ablate") {
        std::string which = need_value(arg);
        HM_CHECK(which == "pose" || which == "patch" || which == "recon", UsageError,
                 "--ablate takes pose, patch or recon");
        a.ablate.push_back(which);
      } else if (arg.rfind("--", 0) == 0) {
        throw UsageError("unknown flag '" + arg + "'");
      } else if (arg.find('=') != std::string::npos) {
        a.config.apply_override(arg);
      } else {
        throw UsageError("unexpected argument '" + arg + "'");
      }
    }
    for (const auto& [k, v] : flag_overrides) a.config.set(k, v);
    for (const std::string& which : a.ablate) a.config.set("loss.w_" + which, "0");
    return a;
  }

  std::string require_out() const {
    HM_CHECK(out.has_value(), UsageError, command + " requires --out");
    return *out;
  }
  std::string require_data() const {
    HM_CHECK(data.has_value(), UsageError, command + " requires --data");
    return *data;
  }
};

inline void write_effective_config(const Config& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream out((fs::path(dir) / "config.txt").string());
  HM_CHECK(out.good(), IoError, "cannot write config under " + dir);
  for (const auto& [k, v] : c.kv) out << k << " = " << v << "\n";
}

inline int cmd_gen_data(const CliArgs& a) {
  std::string out_dir = a.require_out();
  int n = a.config.geti("data.n", 50);
  HM_CHECK(n > 0, ConfigError, "gen-data: data.n must be positive");
  SynthConfig sc;
  sc.image_size = a.config.geti("data.image_size", sc.image_size);
  sc.cam.cx = sc.cam.cy = sc.image_size / 2.0;
  sc.min_depth = a.config.getd("data.min_depth", sc.min_depth);
  sc.distractors = a.config.geti("data.distractors", sc.distractors);
  Rng rng(static_cast<std::uint64_t>(a.config.geti("seed", 0)));
  HandModelData hand = make_synhand();
  std::vector<HandSample> samples;
  samples.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) samples.push_back(synth_sample(hand, sc, rng));
  save_dataset(out_dir, samples);
  write_effective_config(a.config, out_dir);
  std::printf("gen-data: wrote %d samples to %s\n", n, out_dir.c_str());
  return 0;
}

// Square crops around the labeled hand, sized for the backbone; used when
// pretraining straight from a labeled dataset directory.
inline std::vector<Image> dataset_crops(const Dataset& data, int out_size, double margin) {
  std::vector<Image> crops;
  crops.reserve(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) {
    Mat uv = project_value(data.xyz[static_cast<std::size_t>(i)],
                           data.cams[static_cast<std::size_t>(i)]);
    double x0 = uv.col(0).minCoeff(), x1 = uv.col(0).maxCoeff();
    double y0 = uv.col(1).minCoeff(), y1 = uv.col(1).maxCoeff();
    double side = margin * std::max(x1 - x0, y1 - y0);
    HM_CHECK(side > 1.0, DataError, "pretrain crops: degenerate extent in frame " +
                                        std::to_string(i));
    crops.push_back(extract_crop(data.load_rgb(i), 0.5 * (x0 + x1), 0.5 * (y0 + y1), side,
                                 out_size));
  }
  return crops;
}

inline int cmd_pretrain(const CliArgs& a) {
  std::string out_dir = a.require_out();
  PretrainConfig cfg = PretrainConfig::from_config(a.config);
  std::vector<Image> crops;
  if (a.crops.has_value()) {
    CropSet set = CropSet::open(*a.crops);
    HM_CHECK(set.out_size == cfg.vit.image_size, ConfigError,
             "pretrain: crop size " + std::to_string(set.out_size) +
                 " does not match backbone input " + std::to_string(cfg.vit.image_size));
    for (int i = 0; i < set.size(); ++i) crops.push_back(set.load_crop(i));
  } else {
    Dataset data = Dataset::open(a.require_data());
    crops = dataset_crops(data, cfg.vit.image_size, a.config.getd("crop.margin", 1.3));
  }
  PretrainState st = init_pretrain(cfg, static_cast<long long>(crops.size()));
  write_effective_config(a.config, out_dir);
  std::vector<EpochStats> history = run_pretrain(st, crops, out_dir, a.config);
  const EpochStats& last = history.back();
  std::printf("pretrain: %d epochs over %zu crops, final total %.6f (pose %.6f patch %.6f "
              "recon %.6f), checkpoint in %s\n",
              st.cfg.epochs, crops.size(), last.total, last.pose, last.patch, last.recon,
              out_dir.c_str());
  return 0;
}

inline int cmd_finetune(const CliArgs& a) {
  std::string out_dir = a.require_out();
  FinetuneConfig cfg = FinetuneConfig::from_config(a.config);
  Dataset data = Dataset::open(a.require_data());
  HandModelData hand = make_synhand();
  std::vector<FinetuneSample> samples =
      prepare_finetune_samples(data, cfg.vit.image_size, cfg.crop_margin);
  std::optional<Checkpoint> pre;
  if (a.pretrained.has_value()) {
    pre = Checkpoint::load(*a.pretrained);
    HM_CHECK(pre->kind == "pretrain", IoError,
             *a.pretrained + ": expected a pretrain checkpoint, found '" + pre->kind + "'");
  }
  FinetuneState st = init_finetune(cfg, hand, pre.has_value() ? &*pre : nullptr);
  write_effective_config(a.config, out_dir);
  std::vector<FinetuneEpochStats> history = run_finetune(st, samples, out_dir, a.config);
  std::printf("finetune: %d epochs over %zu samples, final total %.6f, checkpoint in %s\n",
              st.cfg.epochs, samples.size(), history.back().total, out_dir.c_str());
  return 0;
}

inline int cmd_eval(const CliArgs& a) {
  HM_CHECK(a.checkpoint.has_value(), UsageError, "eval requires --checkpoint");
  std::string out_dir = a.require_out();
  Checkpoint ck = Checkpoint::load(*a.checkpoint);
  HM_CHECK(ck.kind == "finetune", IoError,
           *a.checkpoint + ": expected a finetune checkpoint, found '" + ck.kind + "'");
  Config merged = ck.config;
  for (const auto& [k, v] : a.config.kv) merged.set(k, v);
  FinetuneConfig cfg = FinetuneConfig::from_config(merged);
  HandModelData hand = make_synhand();
  Dataset data = Dataset::open(a.require_data());
  std::vector<FinetuneSample> samples =
      prepare_finetune_samples(data, cfg.vit.image_size, cfg.crop_margin);
  MetricReport r = run_evaluation(ck.student, cfg, hand, samples, out_dir);
  std::printf("eval: n=%d mpjpe_mm=%.4f pa_mpjpe_mm=%.4f mpvpe_mm=%.4f pa_mpvpe_mm=%.4f "
              "f@5=%.4f f@15=%.4f auc_joints=%.4f auc_verts=%.4f\n",
              r.n_samples, r.mpjpe_mm, r.pa_mpjpe_mm, r.mpvpe_mm, r.pa_mpvpe_mm, r.f5, r.f15,
              r.auc_joints, r.auc_verts);
  return 0;
}

inline int cmd_plot(const CliArgs& a) {
  HM_CHECK(a.in.has_value(), UsageError, "plot requires --in");
  std::string out_dir = a.out.has_value() ? *a.out : *a.in;
  plot_eval_dir(*a.in, out_dir);
  std::printf("plot: wrote auc_pose.png, auc_mesh.png, curves.csv to %s\n", out_dir.c_str());
  return 0;
}

inline int cli_main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    if (args.empty()) {
      std::fputs(cli_usage(), stderr);
      return 2;
    }
    if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
      std::fputs(cli_usage(), stdout);
      return 0;
    }
    CliArgs a = CliArgs::parse(args);
    if (a.command == "gen-data") return cmd_gen_data(a);
    if (a.command == "pretrain") return cmd_pretrain(a);
    if (a.command == "finetune") return cmd_finetune(a);
    if (a.command == "eval") return cmd_eval(a);
    if (a.command == "plot") return cmd_plot(a);
    throw UsageError("unknown command '" + a.command + "'; run with --help");
  } catch (const Error& e) {
    std::fprintf(stderr, "error category=%s: %s\n", category_name(e.category()), e.what());
    return e.category() == ErrorCategory::usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error category=internal: %s\n", e.what());
    return 1;
  }
}

}  // namespace handmim
