#pragma once

#include <string>
#include <vector>

#include "handmim/autodiff.hpp"
#include "handmim/error.hpp"
#include "handmim/log.hpp"
#include "handmim/mat.hpp"
#include "handmim/nn.hpp"
#include "handmim/rng.hpp"

// Masked self-distillation. A momentum teacher sees clean views, the
// student sees masked ones, and two cross-entropy losses tie them together:
// a cross-view loss on aligned class projections (each view's class
// distribution supervises the other view's student) and a parallel-view
// loss on masked patch projections (the clean teacher token supervises the
// masked student token at the same position). Teacher distributions are
// centered with a running mean and sharpened with a low temperature, the
// usual collapse guard.

namespace handmim {

struct MaskSpec {
  std::vector<std::uint8_t> bits;  // one per token, 1 = masked
  double ratio = 0.0;              // the requested ratio

  int n_tokens() const { return static_cast<int>(bits.size()); }
  int popcount() const {
    int n = 0;
    for (std::uint8_t b : bits) n += b;
    return n;
  }
};

// Uniformly samples exactly floor(r * n) masked positions.
inline MaskSpec sample_mask(int n_tokens, double r, Rng& rng) {
  HM_CHECK(n_tokens > 0, InvariantError, "sample_mask: no tokens");
  HM_CHECK(r >= 0.0 && r < 1.0, InvariantError,
           "sample_mask: ratio " + std::to_string(r) + " outside [0,1)");
  const int k = static_cast<int>(r * n_tokens);
  MaskSpec spec;
  spec.ratio = r;
  spec.bits.assign(static_cast<std::size_t>(n_tokens), 0);
  // Partial Fisher-Yates: the first k entries of a shuffled index array.
  std::vector<int> idx(static_cast<std::size_t>(n_tokens));
  for (int i = 0; i < n_tokens; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    int j = i + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n_tokens - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    spec.bits[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
  }
  return spec;
}

// Replaces masked token rows with the mask token; unmasked rows are
// bit-identical to the input.
inline Mat apply_mask(const Mat& tokens, const MaskSpec& spec, const Mat& mask_token) {
  HM_CHECK(tokens.rows() == spec.n_tokens(), InvariantError,
           "apply_mask: token count " + std::to_string(tokens.rows()) + " vs mask of " +
               std::to_string(spec.n_tokens()));
  HM_CHECK(mask_token.rows() == 1 && mask_token.cols() == tokens.cols(), InvariantError,
           "apply_mask: mask token shape mismatch");
  Mat out = tokens;
  for (int i = 0; i < tokens.rows(); ++i)
    if (spec.bits[static_cast<std::size_t>(i)]) out.row(i) = mask_token.row(0);
  return out;
}

// Tape version. Computes tokens*(1-m) + tile(mask_token)*m with exact 0/1
// weights, so unmasked rows stay bit-identical through the arithmetic.
inline ad::Var apply_mask(ad::Tape& t, ad::Var tokens, const MaskSpec& spec,
                          ad::Var mask_token) {
  HM_CHECK(tokens.rows() == spec.n_tokens(), InvariantError, "apply_mask: token count mismatch");
  const int n = tokens.rows();
  Mat m(n, 1), inv(n, 1);
  for (int i = 0; i < n; ++i) {
    m(i, 0) = spec.bits[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    inv(i, 0) = 1.0 - m(i, 0);
  }
  ad::Var kept = ad::mul_colvec(tokens, t.constant(inv));
  ad::Var filled = ad::mul_colvec(ad::tile_rows(mask_token, n), t.constant(m));
  return ad::add(kept, filled);
}

struct DistillState {
  ParamStore student;
  ParamStore teacher;
  Mat center_pose;   // [1, 2K]
  Mat center_patch;  // [1, D]
  double momentum = 0.996;      // teacher EMA momentum, scheduled by the trainer
  double temp_student = 0.1;
  double temp_teacher = 0.04;
  double center_momentum = 0.9;
};

// Centered, sharpened teacher distribution (eager; the teacher never takes
// gradients).
inline Mat teacher_probs(const Mat& logits, const Mat& center, double temp) {
  HM_CHECK(logits.cols() == center.cols() && center.rows() == 1, InvariantError,
           "teacher_probs: center shape mismatch");
  HM_CHECK(temp > 0, InvariantError, "teacher_probs: nonpositive temperature");
  Mat shifted = logits;
  shifted.rowwise() -= Eigen::RowVectorXd(center.row(0));
  return softmax_rows_val(shifted / temp);
}

// Cross entropy H(p, softmax(logits / temp)) summed over rows, divided by
// the row count: the student side stays on the tape.
inline ad::Var soft_cross_entropy(ad::Tape& t, const Mat& p, ad::Var student_logits,
                                  double temp) {
  HM_CHECK(p.rows() == student_logits.rows() && p.cols() == student_logits.cols(),
           InvariantError, "soft_cross_entropy: shape mismatch");
  ad::Var logq = ad::log_softmax_rows(ad::scale(student_logits, 1.0 / temp));
  ad::Var per_row = ad::neg(ad::rowwise_sum(ad::mul(t.constant(p), logq)));  // [r,1]
  return ad::scale(ad::sum(per_row), 1.0 / static_cast<double>(p.rows()));
}

// Cross-view class loss. All four inputs are aligned class projections
// ([1, 2K], already mapped back to the source frame): the teacher's view-u
// distribution supervises the student's view-v logits and vice versa.
inline ad::Var pose_loss(ad::Tape& t, const Mat& teacher_u, const Mat& teacher_v,
                         ad::Var student_u, ad::Var student_v, const DistillState& state) {
  Mat pu = teacher_probs(teacher_u, state.center_pose, state.temp_teacher);
  Mat pv = teacher_probs(teacher_v, state.center_pose, state.temp_teacher);
  ad::Var h_uv = soft_cross_entropy(t, pu, student_v, state.temp_student);
  ad::Var h_vu = soft_cross_entropy(t, pv, student_u, state.temp_student);
  return ad::add(h_uv, h_vu);
}

// Parallel-view patch loss for one view: clean teacher tokens supervise the
// masked student tokens at the masked positions only; mean over those
// positions. An empty mask contributes zero (and is logged as degenerate).
inline ad::Var patch_loss(ad::Tape& t, const Mat& teacher_tokens, ad::Var student_tokens,
                          const MaskSpec& mask, const DistillState& state) {
  HM_CHECK(teacher_tokens.rows() == student_tokens.rows() &&
               teacher_tokens.cols() == student_tokens.cols(),
           InvariantError, "patch_loss: token shape mismatch");
  HM_CHECK(teacher_tokens.rows() == mask.n_tokens(), InvariantError,
           "patch_loss: mask length mismatch");
  const int k = mask.popcount();
  if (k == 0) {
    log_debug("patch_loss: empty mask, contributing zero");
    return t.constant(0.0);
  }
  Mat p = teacher_probs(teacher_tokens, state.center_patch, state.temp_teacher);
  ad::Var logq = ad::log_softmax_rows(ad::scale(student_tokens, 1.0 / state.temp_student));
  ad::Var per_row = ad::neg(ad::rowwise_sum(ad::mul(t.constant(p), logq)));  // [n,1]
  Mat sel(mask.n_tokens(), 1);
  for (int i = 0; i < mask.n_tokens(); ++i)
    sel(i, 0) = mask.bits[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
  ad::Var masked = ad::mul(per_row, t.constant(sel));
  return ad::scale(ad::sum(masked), 1.0 / static_cast<double>(k));
}

// teacher <- m * teacher + (1 - m) * student, over every parameter. The two
// stores must hold identical key sets with identical shapes.
inline void ema_update(ParamStore& teacher, const ParamStore& student, double m) {
  HM_CHECK(m >= 0.0 && m <= 1.0, InvariantError, "ema_update: momentum outside [0,1]");
  HM_CHECK(teacher.count() == student.count(), InvariantError,
           "ema_update: parameter count mismatch");
  for (auto& [name, tmat] : teacher.params) {
    const Mat& smat = student.at(name);
    HM_CHECK(tmat.rows() == smat.rows() && tmat.cols() == smat.cols(), InvariantError,
             "ema_update: shape mismatch for '" + name + "'");
    tmat = m * tmat + (1.0 - m) * smat;
  }
}

// center <- momentum * center + (1 - momentum) * rowwise mean of the batch.
inline void center_update(Mat& center, const Mat& batch_logits, double momentum) {
  HM_CHECK(center.rows() == 1 && batch_logits.cols() == center.cols(), InvariantError,
           "center_update: shape mismatch");
  HM_CHECK(batch_logits.rows() > 0, InvariantError, "center_update: empty batch");
  HM_CHECK(momentum >= 0.0 && momentum <= 1.0, InvariantError,
           "center_update: momentum outside [0,1]");
  Mat mean = batch_logits.colwise().mean();
  center = momentum * center + (1.0 - momentum) * mean;
}

}  // namespace handmim
