#pragma once

// Self-distillation pre-training loop. Per sample: two augmented views, one
// shared mask ratio with independent mask draws, a clean teacher pass and a
// masked student pass per view, then the cross-view class loss, the
// masked-position patch loss and the masked pixel reconstruction. Gradients
// are averaged over the batch, the student steps, the teacher follows by
// EMA, and the running centers absorb the batch's teacher statistics.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "handmim/augment.hpp"
#include "handmim/checkpoint.hpp"
#include "handmim/config.hpp"
#include "handmim/mim.hpp"
#include "handmim/optim.hpp"
#include "handmim/pose_align.hpp"
#include "handmim/recon.hpp"
#include "handmim/vit.hpp"

namespace handmim {

struct PretrainConfig {
  ViTConfig vit = ViTConfig::toy();
  DecoderConfig dec = DecoderConfig::toy();
  AugmentConfig aug{};
  int pseudo_k = 128;     // latent keypoints; class/patch projections are 2k wide
  int proj_hidden = 64;
  double mask_lo = 0.1, mask_hi = 0.5;
  double w_pose = 1.0, w_patch = 1.0, w_recon = 1.0;
  AdamWConfig opt{2e-3, 0.9, 0.999, 1e-8, 0.0};
  int batch_size = 32;
  int epochs = 50;
  double ema_base = 0.996, ema_final = 1.0;
  double temp_student = 0.1, temp_teacher = 0.04;
  double center_momentum = 0.9;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // epochs; 0 = final only

  int proj_dim() const { return 2 * pseudo_k; }

  void validate() const {
    vit.validate();
    dec.validate(vit);
    aug.validate();
    opt.validate();
    HM_CHECK(aug.out_size == vit.image_size, ConfigError,
             "pretrain: augmentation output size must match the backbone input size");
    HM_CHECK(pseudo_k > 0 && proj_hidden > 0, ConfigError, "pretrain: bad projection dims");
    HM_CHECK(mask_lo >= 0.0 && mask_hi < 1.0 && mask_lo <= mask_hi, ConfigError,
             "pretrain: mask ratio range outside [0,1)");
    HM_CHECK(temp_student > 0 && temp_teacher > 0, ConfigError, "pretrain: nonpositive temperature");
    HM_CHECK(center_momentum >= 0 && center_momentum <= 1, ConfigError,
             "pretrain: center momentum outside [0,1]");
    HM_CHECK(ema_base >= 0 && ema_base <= 1 && ema_final >= 0 && ema_final <= 1, ConfigError,
             "pretrain: EMA momentum outside [0,1]");
    HM_CHECK(batch_size > 0 && epochs > 0, ConfigError, "pretrain: bad batch/epoch counts");
  }

  static PretrainConfig from_config(const Config& c) {
    PretrainConfig p;
    std::string name = c.gets("vit", "toy");
    p.vit = ViTConfig::named(name);
    p.dec = name == "toy" ? DecoderConfig::toy() : DecoderConfig::full();
    p.aug.out_size = p.vit.image_size;
    p.aug.angle_max_deg = c.getd("augment.angle_max_deg", p.aug.angle_max_deg);
    p.aug.area_min = c.getd("augment.area_min", p.aug.area_min);
    p.aug.jitter = c.getd("augment.jitter", p.aug.jitter);
    p.aug.p_blur = c.getd("augment.p_blur", p.aug.p_blur);
    p.pseudo_k = c.geti("pseudo.k", p.pseudo_k);
    p.proj_hidden = c.geti("proj.hidden", name == "toy" ? 64 : 4 * p.vit.width);
    p.mask_lo = c.getd("mask.ratio_min", p.mask_lo);
    p.mask_hi = c.getd("mask.ratio_max", p.mask_hi);
    p.w_pose = c.getd("loss.w_pose", p.w_pose);
    p.w_patch = c.getd("loss.w_patch", p.w_patch);
    p.w_recon = c.getd("loss.w_recon", p.w_recon);
    p.opt.lr = c.getd("optimizer.lr", 2e-3);
    p.opt.weight_decay = c.getd("optimizer.weight_decay", 0.0);
    p.batch_size = c.geti("optimizer.batch_size", p.batch_size);
    p.epochs = c.geti("optimizer.epochs", p.epochs);
    p.ema_base = c.getd("ema.base", p.ema_base);
    p.ema_final = c.getd("ema.final", p.ema_final);
    p.temp_student = c.getd("distill.temp_student", p.temp_student);
    p.temp_teacher = c.getd("distill.temp_teacher", p.temp_teacher);
    p.center_momentum = c.getd("distill.center_momentum", p.center_momentum);
    p.seed = static_cast<std::uint64_t>(c.geti("seed", 0));
    p.checkpoint_every = c.geti("checkpoint.every", 0);
    p.validate();
    return p;
  }
};

struct PretrainState {
  PretrainConfig cfg;
  DistillState distill;
  AdamW opt;
  Rng rng;
  long long step = 0;        // optimizer steps taken
  long long total_steps = 0; // planned, drives the EMA schedule
};

// Scheduled teacher momentum: cosine from ema_base to ema_final.
inline double ema_momentum_at(const PretrainConfig& cfg, long long step, long long total) {
  if (total <= 0) return cfg.ema_base;
  double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return cfg.ema_final - (cfg.ema_final - cfg.ema_base) * 0.5 * (1.0 + std::cos(M_PI * f));
}

inline PretrainState init_pretrain(const PretrainConfig& cfg, long long n_train_images) {
  cfg.validate();
  PretrainState st{cfg, DistillState{}, AdamW(cfg.opt), Rng(cfg.seed), 0, 0};
  st.distill.temp_student = cfg.temp_student;
  st.distill.temp_teacher = cfg.temp_teacher;
  st.distill.center_momentum = cfg.center_momentum;
  st.distill.momentum = cfg.ema_base;

  init_backbone(st.distill.student, "bb.", cfg.vit, st.rng);
  init_mlp3(st.distill.student, "proj.", cfg.vit.width, cfg.proj_hidden, cfg.proj_dim(), st.rng);
  st.distill.student.add("mask_token", trunc_normal_mat(1, cfg.vit.width, st.rng));
  init_decoder(st.distill.student, "dec.", cfg.vit, cfg.dec, st.rng);

  // the teacher starts as an exact copy of the distilled subset
  for (const auto& [k, v] : st.distill.student.params)
    if (k.rfind("bb.", 0) == 0 || k.rfind("proj.", 0) == 0) st.distill.teacher.add(k, v);

  st.distill.center_pose = Mat::Zero(1, cfg.proj_dim());
  st.distill.center_patch = Mat::Zero(1, cfg.proj_dim());

  long long batches = (n_train_images + cfg.batch_size - 1) / cfg.batch_size;
  st.total_steps = batches * cfg.epochs;
  return st;
}

struct PretrainStepStats {
  double pose = 0.0, patch = 0.0, recon = 0.0, total = 0.0;
  double teacher_entropy = 0.0;  // mean entropy of the teacher class distribution
  double momentum = 0.0;         // EMA momentum used this step
};

// One optimizer step over a batch of source crops. `ids` names each image
// for diagnostics (dataset indices); pass {} to use positions.
inline PretrainStepStats pretrain_step(PretrainState& st, const std::vector<Image>& batch,
                                       const std::vector<int>& ids = {}) {
  HM_CHECK(!batch.empty(), InvariantError, "pretrain_step: empty batch");
  const PretrainConfig& cfg = st.cfg;
  const int n2 = cfg.vit.n_patches();
  const double b = static_cast<double>(batch.size());

  std::map<std::string, Mat> grads;
  Mat pose_logits(2 * static_cast<int>(batch.size()), cfg.proj_dim());
  Mat patch_logits(2 * n2 * static_cast<int>(batch.size()), cfg.proj_dim());
  PretrainStepStats stats;

  for (std::size_t s = 0; s < batch.size(); ++s) {
    int id = s < ids.size() ? ids[s] : static_cast<int>(s);
    ViewPair vp = generate_views(batch[s], st.rng, cfg.aug);
    double r = st.rng.uniform(cfg.mask_lo, cfg.mask_hi);  // shared by both views
    MaskSpec mask_u = sample_mask(n2, r, st.rng);
    MaskSpec mask_v = sample_mask(n2, r, st.rng);

    ad::Tape t;

    struct TeacherView {
      Mat aligned_cls;  // [1, 2k] source-frame class logits
      Mat patches;      // [n2, 2k]
    };
    auto teacher_pass = [&](const Image& im, const ViewTransform& xf) {
      ad::Var toks = patch_tokens(t, im, st.distill.teacher, "bb.", cfg.vit, false);
      ad::Var seq = assemble_sequence(t, toks, st.distill.teacher, "bb.", cfg.vit, false);
      BackboneOut out = run_backbone(t, seq, st.distill.teacher, "bb.", cfg.vit, false);
      ad::Var cls_proj = mlp3(t, out.cls, st.distill.teacher, "proj.", false);
      ad::Var patch_proj = mlp3(t, out.patches, st.distill.teacher, "proj.", false);
      return TeacherView{align_class(t, cls_proj, xf).val(), patch_proj.val()};
    };
    TeacherView tu = teacher_pass(vp.u, vp.xf_u);
    TeacherView tv = teacher_pass(vp.v, vp.xf_v);

    struct StudentView {
      ad::Var aligned_cls;
      ad::Var patches;
      ad::Var recon;
    };
    ad::Var mask_token = t.param(st.distill.student.at("mask_token"), "mask_token", true);
    auto student_pass = [&](const Image& im, const ViewTransform& xf, const MaskSpec& mask) {
      ad::Var toks = patch_tokens(t, im, st.distill.student, "bb.", cfg.vit, true);
      ad::Var masked = apply_mask(t, toks, mask, mask_token);
      ad::Var seq = assemble_sequence(t, masked, st.distill.student, "bb.", cfg.vit, true);
      BackboneOut out = run_backbone(t, seq, st.distill.student, "bb.", cfg.vit, true);
      ad::Var cls_proj = mlp3(t, out.cls, st.distill.student, "proj.", true);
      ad::Var patch_proj = mlp3(t, out.patches, st.distill.student, "proj.", true);
      ad::Var pred = run_decoder(t, out.taps, st.distill.student, "dec.", cfg.vit, cfg.dec, true);
      ad::Var rec = recon_loss(t, pred, im.pix, mask, cfg.vit);
      return StudentView{align_class(t, cls_proj, xf), patch_proj, rec};
    };
    StudentView su = student_pass(vp.u, vp.xf_u, mask_u);
    StudentView sv = student_pass(vp.v, vp.xf_v, mask_v);

    ad::Var l_pose = pose_loss(t, tu.aligned_cls, tv.aligned_cls, su.aligned_cls,
                               sv.aligned_cls, st.distill);
    ad::Var l_patch = ad::scale(
        ad::add(patch_loss(t, tu.patches, su.patches, mask_u, st.distill),
                patch_loss(t, tv.patches, sv.patches, mask_v, st.distill)),
        0.5);
    ad::Var l_recon = ad::scale(ad::add(su.recon, sv.recon), 0.5);
    ad::Var total = ad::add(
        ad::add(ad::scale(l_pose, cfg.w_pose), ad::scale(l_patch, cfg.w_patch)),
        ad::scale(l_recon, cfg.w_recon));

    HM_CHECK(std::isfinite(total.val()(0, 0)), NumericError,
             "pretrain: non-finite loss at step " + std::to_string(st.step) +
                 " on batch item " + std::to_string(s) + " (image id " + std::to_string(id) +
                 ")");
    t.backward(total);

    for (auto& [name, g] : t.named_grads()) {
      auto it = grads.find(name);
      if (it == grads.end())
        grads[name] = g;
      else
        it->second += g;
    }

    stats.pose += l_pose.val()(0, 0) / b;
    stats.patch += l_patch.val()(0, 0) / b;
    stats.recon += l_recon.val()(0, 0) / b;
    stats.total += total.val()(0, 0) / b;

    int si = 2 * static_cast<int>(s);
    pose_logits.row(si) = tu.aligned_cls.row(0);
    pose_logits.row(si + 1) = tv.aligned_cls.row(0);
    patch_logits.middleRows(si * n2, n2) = tu.patches;
    patch_logits.middleRows((si + 1) * n2, n2) = tv.patches;

    for (const Mat& logits : {tu.aligned_cls, tv.aligned_cls}) {
      Mat p = teacher_probs(logits, st.distill.center_pose, cfg.temp_teacher);
      double h = 0.0;
      for (int j = 0; j < p.cols(); ++j)
        if (p(0, j) > 0.0) h -= p(0, j) * std::log(p(0, j));
      stats.teacher_entropy += h / (2.0 * b);
    }
  }

  for (auto& [name, g] : grads) g /= b;
  st.opt.step(st.distill.student, grads);

  stats.momentum = ema_momentum_at(cfg, st.step, st.total_steps);
  ParamStore distilled;
  for (const auto& [k, v] : st.distill.teacher.params) distilled.add(k, st.distill.student.at(k));
  ema_update(st.distill.teacher, distilled, stats.momentum);

  center_update(st.distill.center_pose, pose_logits, cfg.center_momentum);
  center_update(st.distill.center_patch, patch_logits, cfg.center_momentum);

  ++st.step;
  return stats;
}

struct EpochStats {
  int epoch = 0;
  double pose = 0.0, patch = 0.0, recon = 0.0, total = 0.0;
  double teacher_entropy = 0.0;
};

inline Checkpoint make_pretrain_checkpoint(const PretrainState& st, const Config& snapshot) {
  Checkpoint ck;
  ck.kind = "pretrain";
  ck.config = snapshot;
  ck.step = st.step;
  ck.rng_state = st.rng.serialize();
  ck.student = st.distill.student;
  ck.teacher = st.distill.teacher;
  ck.center_pose = st.distill.center_pose;
  ck.center_patch = st.distill.center_patch;
  ck.take_optimizer(st.opt);
  return ck;
}

inline PretrainState restore_pretrain(const Checkpoint& ck, long long n_train_images) {
  HM_CHECK(ck.kind == "pretrain", IoError, "restore_pretrain: checkpoint kind is '" + ck.kind + "'");
  PretrainConfig cfg = PretrainConfig::from_config(ck.config);
  PretrainState st = init_pretrain(cfg, n_train_images);
  st.distill.student = ck.student;
  st.distill.teacher = ck.teacher;
  st.distill.center_pose = ck.center_pose;
  st.distill.center_patch = ck.center_patch;
  ck.restore_optimizer(st.opt);
  st.step = ck.step;
  st.rng.deserialize(ck.rng_state);
  return st;
}

// Full training run over a set of crops. Writes per-epoch means to
// `out_dir`/curves.csv and the final state to `out_dir`/checkpoint.hma.
inline std::vector<EpochStats> run_pretrain(PretrainState& st, const std::vector<Image>& crops,
                                            const std::string& out_dir,
                                            const Config& snapshot) {
  HM_CHECK(!crops.empty(), DataError, "pretrain: no training crops");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream curves((fs::path(out_dir) / "curves.csv").string());
  HM_CHECK(curves.good(), IoError, "cannot write curves under " + out_dir);
  curves << "epoch,loss_pose,loss_patch,loss_recon,loss_total,teacher_entropy\n";
  curves.precision(10);

  std::vector<EpochStats> history;
  const int n = static_cast<int>(crops.size());
  for (int epoch = 1; epoch <= st.cfg.epochs; ++epoch) {
    std::vector<int> order = st.rng.permutation(n);
    EpochStats es;
    es.epoch = epoch;
    int batches = 0;
    for (int start = 0; start < n; start += st.cfg.batch_size) {
      int stop = std::min(n, start + st.cfg.batch_size);
      std::vector<Image> batch;
      std::vector<int> ids;
      for (int i = start; i < stop; ++i) {
        batch.push_back(crops[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
        ids.push_back(order[static_cast<std::size_t>(i)]);
      }
      PretrainStepStats ss = pretrain_step(st, batch, ids);
      es.pose += ss.pose;
      es.patch += ss.patch;
      es.recon += ss.recon;
      es.total += ss.total;
      es.teacher_entropy += ss.teacher_entropy;
      ++batches;
    }
    es.pose /= batches;
    es.patch /= batches;
    es.recon /= batches;
    es.total /= batches;
    es.teacher_entropy /= batches;
    history.push_back(es);
    curves << epoch << ',' << es.pose << ',' << es.patch << ',' << es.recon << ',' << es.total
           << ',' << es.teacher_entropy << '\n';
    log_info("pretrain epoch " + std::to_string(epoch) + "/" + std::to_string(st.cfg.epochs) +
             " total " + std::to_string(es.total) + " entropy " +
             std::to_string(es.teacher_entropy));
    if (st.cfg.checkpoint_every > 0 && epoch % st.cfg.checkpoint_every == 0)
      make_pretrain_checkpoint(st, snapshot)
          .save((fs::path(out_dir) / "checkpoint.hma").string());
  }
  make_pretrain_checkpoint(st, snapshot).save((fs::path(out_dir) / "checkpoint.hma").string());
  return history;
}

}  // namespace handmim
