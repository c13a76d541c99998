#pragma once

// Supervised mesh regression on top of the backbone. Samples are fixed
// square crops around the labeled hand with intrinsics rewritten for the
// crop, so the head predicts in the original camera space while consuming
// backbone-sized images. Freezing excludes the patch embedding and the
// first N blocks from the optimizer entirely.

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "handmim/checkpoint.hpp"
#include "handmim/config.hpp"
#include "handmim/data.hpp"
#include "handmim/log.hpp"
#include "handmim/mesh_head.hpp"
#include "handmim/optim.hpp"
#include "handmim/vit.hpp"

namespace handmim {

struct FinetuneConfig {
  ViTConfig vit = ViTConfig::toy();
  MeshHeadConfig head{};
  FinetuneWeights weights{};
  AdamWConfig opt{4e-5, 0.9, 0.999, 1e-8, 0.0};
  int batch_size = 16;
  int epochs = 10;
  int warmup_epochs = 5;
  int freeze_blocks = 0;
  double crop_margin = 1.3;
  std::uint64_t seed = 0;

  void validate() const {
    vit.validate();
    head.validate();
    opt.validate();
    HM_CHECK(freeze_blocks >= 0 && freeze_blocks <= vit.depth, ConfigError,
             "finetune: freeze_blocks outside [0, depth]");
    HM_CHECK(batch_size > 0 && epochs > 0 && warmup_epochs >= 0, ConfigError,
             "finetune: bad batch/epoch counts");
    HM_CHECK(crop_margin >= 1.0, ConfigError, "finetune: crop margin below 1");
  }

  static FinetuneConfig from_config(const Config& c) {
    FinetuneConfig f;
    f.vit = ViTConfig::named(c.gets("vit", "toy"));
    f.head.iters = c.geti("head.iters", f.head.iters);
    f.head.hidden = c.geti("head.hidden", f.head.hidden);
    f.head.init_depth = c.getd("head.init_depth", f.head.init_depth);
    f.weights.param = c.getd("loss.w_mano", f.weights.param);
    f.weights.vert = c.getd("loss.w_vert", f.weights.vert);
    double w_kpt = c.getd("loss.w_kpt", 1.0);
    f.weights.kp3d = w_kpt * f.weights.kp3d;
    f.weights.kp2d = w_kpt * f.weights.kp2d;
    f.opt.lr = c.getd("optimizer.lr", 4e-5);
    f.opt.weight_decay = c.getd("optimizer.weight_decay", 0.0);
    f.batch_size = c.geti("optimizer.batch_size", f.batch_size);
    f.epochs = c.geti("optimizer.epochs", f.epochs);
    f.warmup_epochs = c.geti("optimizer.warmup_epochs", f.warmup_epochs);
    f.freeze_blocks = c.geti("freeze_blocks", 0);
    f.crop_margin = c.getd("crop.margin", f.crop_margin);
    f.seed = static_cast<std::uint64_t>(c.geti("seed", 0));
    f.validate();
    return f;
  }
};

struct FinetuneSample {
  Image crop;
  Camera cam;  // intrinsics rewritten for the crop
  FinetuneTarget target;
};

// Rewrites pinhole intrinsics for a square window (cx, cy, side) resampled
// to out_size pixels.
inline Camera crop_camera(const Camera& cam, double wx, double wy, double side, int out_size) {
  double s = static_cast<double>(out_size) / side;
  Camera out;
  out.fx = cam.fx * s;
  out.fy = cam.fy * s;
  out.cx = (cam.cx - (wx - side / 2.0)) * s;
  out.cy = (cam.cy - (wy - side / 2.0)) * s;
  return out;
}

inline std::vector<FinetuneSample> prepare_finetune_samples(const Dataset& data, int out_size,
                                                            double margin) {
  HM_CHECK(margin >= 1.0, ConfigError, "finetune crops: margin below 1");
  std::vector<FinetuneSample> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) {
    const Mat& kp3d = data.xyz[static_cast<std::size_t>(i)];
    const Camera& cam = data.cams[static_cast<std::size_t>(i)];
    Mat uv = project_value(kp3d, cam);
    double x0 = uv.col(0).minCoeff(), x1 = uv.col(0).maxCoeff();
    double y0 = uv.col(1).minCoeff(), y1 = uv.col(1).maxCoeff();
    double wx = 0.5 * (x0 + x1), wy = 0.5 * (y0 + y1);
    double side = margin * std::max(x1 - x0, y1 - y0);
    HM_CHECK(side > 1.0, DataError,
             "finetune crops: degenerate keypoint extent in frame " + std::to_string(i));

    FinetuneSample s;
    s.crop = extract_crop(data.load_rgb(i), wx, wy, side, out_size);
    s.cam = crop_camera(cam, wx, wy, side, out_size);
    s.target.theta = data.theta(i);
    s.target.beta = data.beta(i);
    s.target.verts = data.verts[static_cast<std::size_t>(i)];
    s.target.kp3d = kp3d;
    s.target.kp2d = project_value(kp3d, s.cam);
    out.push_back(std::move(s));
  }
  return out;
}

struct FinetuneState {
  FinetuneConfig cfg;
  HandModelData hand;
  ParamStore params;  // bb.* and mesh.*
  std::set<std::string> frozen;
  AdamW opt;
  Rng rng;
  long long step = 0;
  long long steps_per_epoch = 0;
};

// Backbone weights come from the pretraining TEACHER: the EMA branch is the
// stable network and the one evaluation uses.
inline FinetuneState init_finetune(const FinetuneConfig& cfg, const HandModelData& hand,
                                   const Checkpoint* pretrained) {
  cfg.validate();
  FinetuneState st{cfg, hand, ParamStore{}, {}, AdamW(cfg.opt), Rng(cfg.seed), 0, 0};
  init_backbone(st.params, "bb.", cfg.vit, st.rng);
  init_mesh_head(st.params, "mesh.", cfg.vit, cfg.head, hand, st.rng);

  if (pretrained != nullptr) {
    std::vector<std::string> missing, mismatched;
    for (auto& [name, p] : st.params.params) {
      if (name.rfind("bb.", 0) != 0) continue;
      if (!pretrained->teacher.has(name)) {
        missing.push_back(name);
        continue;
      }
      const Mat& src = pretrained->teacher.at(name);
      if (src.rows() != p.rows() || src.cols() != p.cols()) {
        mismatched.push_back(name + " (" + std::to_string(src.rows()) + "x" +
                             std::to_string(src.cols()) + " vs " + std::to_string(p.rows()) +
                             "x" + std::to_string(p.cols()) + ")");
        continue;
      }
      p = src;
    }
    if (!missing.empty() || !mismatched.empty()) {
      std::string msg = "checkpoint does not match the backbone:";
      for (const auto& n : missing) msg += " missing " + n + ";";
      for (const auto& n : mismatched) msg += " shape " + n + ";";
      throw IoError(msg);
    }
  }

  if (cfg.freeze_blocks >= 1) {
    st.frozen.insert("bb.patch_w");
    st.frozen.insert("bb.patch_b");
    st.frozen.insert("bb.pos");
    st.frozen.insert("bb.cls");
    for (int b = 0; b < cfg.freeze_blocks; ++b) {
      std::string prefix = "bb.blk" + std::to_string(b) + ".";
      for (const auto& key : st.params.keys())
        if (key.rfind(prefix, 0) == 0) st.frozen.insert(key);
    }
  }
  return st;
}

struct FinetuneStepStats {
  double param = 0.0, vert = 0.0, kp3d = 0.0, kp2d = 0.0, total = 0.0;
  double lr_scale = 1.0;
};

inline double warmup_scale(const FinetuneConfig& cfg, long long step, long long steps_per_epoch) {
  long long warm = cfg.warmup_epochs * std::max(1LL, steps_per_epoch);
  if (cfg.warmup_epochs <= 0 || warm <= 0) return 1.0;
  if (step >= warm) return 1.0;
  return static_cast<double>(step + 1) / static_cast<double>(warm);
}

inline FinetuneStepStats finetune_step(FinetuneState& st,
                                       const std::vector<const FinetuneSample*>& batch) {
  HM_CHECK(!batch.empty(), InvariantError, "finetune_step: empty batch");
  const FinetuneConfig& cfg = st.cfg;
  const double b = static_cast<double>(batch.size());
  std::map<std::string, Mat> grads;
  FinetuneStepStats stats;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const FinetuneSample& s = *batch[i];
    ad::Tape t;
    ad::Var toks = patch_tokens(t, s.crop, st.params, "bb.", cfg.vit, true);
    ad::Var seq = assemble_sequence(t, toks, st.params, "bb.", cfg.vit, true);
    BackboneOut out = run_backbone(t, seq, st.params, "bb.", cfg.vit, true);
    MeshOut mesh = run_mesh_head(t, out.cls, out.patches, st.params, "mesh.", cfg.vit, cfg.head,
                                 st.hand, s.cam, true);
    FinetuneLoss loss = finetune_loss(t, mesh, s.target, cfg.weights);
    HM_CHECK(std::isfinite(loss.total.val()(0, 0)), NumericError,
             "finetune: non-finite loss at step " + std::to_string(st.step) + " on batch item " +
                 std::to_string(i));
    t.backward(loss.total);
    for (auto& [name, g] : t.named_grads()) {
      auto it = grads.find(name);
      if (it == grads.end())
        grads[name] = g;
      else
        it->second += g;
    }
    stats.param += loss.param.val()(0, 0) / b;
    stats.vert += loss.vert.val()(0, 0) / b;
    stats.kp3d += loss.kp3d.val()(0, 0) / b;
    stats.kp2d += loss.kp2d.val()(0, 0) / b;
    stats.total += loss.total.val()(0, 0) / b;
  }

  for (const auto& name : st.frozen) grads.erase(name);
  for (auto& [name, g] : grads) g /= b;
  stats.lr_scale = warmup_scale(cfg, st.step, st.steps_per_epoch);
  st.opt.step(st.params, grads, stats.lr_scale);
  ++st.step;
  return stats;
}

struct FinetuneEpochStats {
  int epoch = 0;
  double param = 0.0, vert = 0.0, kp3d = 0.0, kp2d = 0.0, total = 0.0;
};

inline Checkpoint make_finetune_checkpoint(const FinetuneState& st, const Config& snapshot) {
  Checkpoint ck;
  ck.kind = "finetune";
  ck.config = snapshot;
  ck.step = st.step;
  ck.rng_state = st.rng.serialize();
  ck.student = st.params;
  ck.take_optimizer(st.opt);
  return ck;
}

inline FinetuneState restore_finetune(const Checkpoint& ck, const HandModelData& hand,
                                      long long steps_per_epoch) {
  HM_CHECK(ck.kind == "finetune", IoError, "restore_finetune: checkpoint kind is '" + ck.kind + "'");
  FinetuneConfig cfg = FinetuneConfig::from_config(ck.config);
  FinetuneState st = init_finetune(cfg, hand, nullptr);
  st.params = ck.student;
  ck.restore_optimizer(st.opt);
  st.step = ck.step;
  st.steps_per_epoch = steps_per_epoch;
  st.rng.deserialize(ck.rng_state);
  return st;
}

inline std::vector<FinetuneEpochStats> run_finetune(FinetuneState& st,
                                                    const std::vector<FinetuneSample>& samples,
                                                    const std::string& out_dir,
                                                    const Config& snapshot) {
  HM_CHECK(!samples.empty(), DataError, "finetune: no training samples");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream curves((fs::path(out_dir) / "curves.csv").string());
  HM_CHECK(curves.good(), IoError, "cannot write curves under " + out_dir);
  curves << "epoch,loss_param,loss_vert,loss_kp3d,loss_kp2d,loss_total\n";
  curves.precision(10);

  const int n = static_cast<int>(samples.size());
  st.steps_per_epoch = (n + st.cfg.batch_size - 1) / st.cfg.batch_size;
  std::vector<FinetuneEpochStats> history;
  for (int epoch = 1; epoch <= st.cfg.epochs; ++epoch) {
    std::vector<int> order = st.rng.permutation(n);
    FinetuneEpochStats es;
    es.epoch = epoch;
    int batches = 0;
    for (int start = 0; start < n; start += st.cfg.batch_size) {
      int stop = std::min(n, start + st.cfg.batch_size);
      std::vector<const FinetuneSample*> batch;
      for (int i = start; i < stop; ++i)
        batch.push_back(&samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
      FinetuneStepStats ss = finetune_step(st, batch);
      es.param += ss.param;
      es.vert += ss.vert;
      es.kp3d += ss.kp3d;
      es.kp2d += ss.kp2d;
      es.total += ss.total;
      ++batches;
    }
    es.param /= batches;
    es.vert /= batches;
    es.kp3d /= batches;
    es.kp2d /= batches;
    es.total /= batches;
    history.push_back(es);
    curves << epoch << ',' << es.param << ',' << es.vert << ',' << es.kp3d << ',' << es.kp2d
           << ',' << es.total << '\n';
    log_info("finetune epoch " + std::to_string(epoch) + "/" + std::to_string(st.cfg.epochs) +
             " total " + std::to_string(es.total));
  }
  make_finetune_checkpoint(st, snapshot).save((fs::path(out_dir) / "checkpoint.hma").string());
  return history;
}

}  // namespace handmim
