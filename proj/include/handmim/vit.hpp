#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "handmim/autodiff.hpp"
#include "handmim/error.hpp"
#include "handmim/image.hpp"
#include "handmim/nn.hpp"

// Vision transformer backbone. Pre-norm blocks:
//
//   x = x + MHSA(LN(x));  x = x + FFN(LN(x))
//
// Sequence layout is [class token; patch tokens], class token at row 0.
// Patch embedding is a linear map on flattened patches plus learned
// positional rows; the positional row for the class token is added when the
// sequence is assembled, so patch-level masking can happen in between.
// Intermediate "tap" layers export their patch tokens for the pixel
// decoder. There is deliberately no final norm after the last block: heads
// carry their own input norms, and a depth-0 backbone is exactly the
// identity on its input sequence.

namespace handmim {

struct ViTConfig {
  int image_size = 64;
  int patch_size = 16;
  int depth = 4;
  int width = 64;
  int heads = 4;
  double mlp_ratio = 4.0;
  std::vector<int> taps = {1, 2, 3, 4};  // 1-based block indices

  int grid() const { return image_size / patch_size; }
  int n_patches() const { return grid() * grid(); }
  int seq_len() const { return n_patches() + 1; }
  int head_dim() const { return width / heads; }
  int mlp_dim() const { return static_cast<int>(width * mlp_ratio); }

  void validate() const {
    HM_CHECK(image_size > 0 && patch_size > 0, ConfigError, "vit: nonpositive sizes");
    HM_CHECK(image_size % patch_size == 0, ConfigError,
             "vit: image_size " + std::to_string(image_size) + " not divisible by patch_size " +
                 std::to_string(patch_size));
    HM_CHECK(width > 0 && heads > 0 && width % heads == 0, ConfigError,
             "vit: width " + std::to_string(width) + " not divisible by heads " +
                 std::to_string(heads));
    HM_CHECK(depth >= 0, ConfigError, "vit: negative depth");
    for (std::size_t i = 0; i < taps.size(); ++i) {
      HM_CHECK(taps[i] >= 1 && taps[i] <= depth, ConfigError,
               "vit: tap layer " + std::to_string(taps[i]) + " out of range [1," +
                   std::to_string(depth) + "]");
      HM_CHECK(i == 0 || taps[i] > taps[i - 1], ConfigError, "vit: taps must be increasing");
    }
  }

  static ViTConfig toy() { return ViTConfig{}; }
  static ViTConfig small() {
    return ViTConfig{224, 16, 12, 384, 6, 4.0, {3, 6, 9, 12}};
  }
  static ViTConfig base() {
    return ViTConfig{224, 16, 12, 768, 12, 4.0, {3, 6, 9, 12}};
  }
  static ViTConfig large() {
    return ViTConfig{224, 16, 24, 1024, 16, 4.0, {6, 12, 18, 24}};
  }

  static ViTConfig named(const std::string& name) {
    if (name == "toy") return toy();
    if (name == "small") return small();
    if (name == "base") return base();
    if (name == "large") return large();
    throw ConfigError("unknown vit config '" + name + "' (expected toy/small/base/large)");
  }
};

// Flattens each patch to a row: patch (gy, gx) -> row gy*grid + gx, column
// (py*patch + px)*3 + channel.
inline Mat image_patches(const Image& img, const ViTConfig& cfg) {
  HM_CHECK(img.w == cfg.image_size && img.h == cfg.image_size, InvariantError,
           "image_patches: image is " + std::to_string(img.w) + "x" + std::to_string(img.h) +
               ", config wants " + std::to_string(cfg.image_size));
  const int g = cfg.grid(), p = cfg.patch_size;
  Mat out(g * g, p * p * 3);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      int row = gy * g + gx;
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px) {
          int y = gy * p + py, x = gx * p + px;
          for (int c = 0; c < 3; ++c) out(row, (py * p + px) * 3 + c) = img.at(y, x, c);
        }
    }
  return out;
}

inline void init_backbone(ParamStore& ps, const std::string& prefix, const ViTConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  const int c = cfg.width;
  ps.add(prefix + "patch_w", trunc_normal_mat(cfg.patch_size * cfg.patch_size * 3, c, rng));
  ps.add(prefix + "patch_b", Mat::Zero(1, c));
  ps.add(prefix + "pos", trunc_normal_mat(cfg.seq_len(), c, rng));
  ps.add(prefix + "cls", trunc_normal_mat(1, c, rng));
  for (int b = 0; b < cfg.depth; ++b) {
    std::string bp = prefix + "blk" + std::to_string(b) + ".";
    ps.add(bp + "ln1_g", Mat::Ones(1, c));
    ps.add(bp + "ln1_b", Mat::Zero(1, c));
    ps.add(bp + "wq", trunc_normal_mat(c, c, rng));
    ps.add(bp + "bq", Mat::Zero(1, c));
    ps.add(bp + "wk", trunc_normal_mat(c, c, rng));
    ps.add(bp + "bk", Mat::Zero(1, c));
    ps.add(bp + "wv", trunc_normal_mat(c, c, rng));
    ps.add(bp + "bv", Mat::Zero(1, c));
    ps.add(bp + "wo", trunc_normal_mat(c, c, rng));
    ps.add(bp + "bo", Mat::Zero(1, c));
    ps.add(bp + "ln2_g", Mat::Ones(1, c));
    ps.add(bp + "ln2_b", Mat::Zero(1, c));
    ps.add(bp + "w1", trunc_normal_mat(c, cfg.mlp_dim(), rng));
    ps.add(bp + "b1", Mat::Zero(1, cfg.mlp_dim()));
    ps.add(bp + "w2", trunc_normal_mat(cfg.mlp_dim(), c, rng));
    ps.add(bp + "b2", Mat::Zero(1, c));
  }
}

// Scaled dot-product attention for one head on the tape.
inline ad::Var attention(ad::Tape& t, ad::Var q, ad::Var k, ad::Var v) {
  (void)t;
  double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  ad::Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), scale);
  return ad::matmul(ad::softmax_rows(scores), v);
}

// One pre-norm transformer block.
inline ad::Var transformer_block(ad::Tape& t, ad::Var x, const ParamStore& ps,
                                 const std::string& bp, const ViTConfig& cfg, bool trainable) {
  auto p = [&](const std::string& n) { return t.param(ps.at(bp + n), bp + n, trainable); };
  ad::Var h = layer_norm(t, x, p("ln1_g"), p("ln1_b"));
  ad::Var q = linear(t, h, p("wq"), p("bq"));
  ad::Var k = linear(t, h, p("wk"), p("bk"));
  ad::Var v = linear(t, h, p("wv"), p("bv"));
  const int dh = cfg.head_dim();
  std::vector<ad::Var> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int i = 0; i < cfg.heads; ++i) {
    ad::Var qh = ad::slice_cols(q, i * dh, dh);
    ad::Var kh = ad::slice_cols(k, i * dh, dh);
    ad::Var vh = ad::slice_cols(v, i * dh, dh);
    heads.push_back(attention(t, qh, kh, vh));
  }
  ad::Var attn_out = linear(t, ad::concat_cols(heads), p("wo"), p("bo"));
  x = ad::add(x, attn_out);
  ad::Var h2 = layer_norm(t, x, p("ln2_g"), p("ln2_b"));
  ad::Var f = ad::gelu(linear(t, h2, p("w1"), p("b1")));
  f = linear(t, f, p("w2"), p("b2"));
  return ad::add(x, f);
}

// Linear patch projection with positional rows for the patch tokens.
inline ad::Var patch_tokens(ad::Tape& t, const Image& img, const ParamStore& ps,
                            const std::string& prefix, const ViTConfig& cfg, bool trainable) {
  Mat patches = image_patches(img, cfg);
  ad::Var pvar = t.constant(std::move(patches));
  ad::Var w = t.param(ps.at(prefix + "patch_w"), prefix + "patch_w", trainable);
  ad::Var b = t.param(ps.at(prefix + "patch_b"), prefix + "patch_b", trainable);
  ad::Var pos = t.param(ps.at(prefix + "pos"), prefix + "pos", trainable);
  ad::Var emb = ad::add_rowvec(ad::matmul(pvar, w), b);
  return ad::add(emb, ad::slice_rows(pos, 1, cfg.n_patches()));
}

// Prepends class token (plus its positional row) to patch tokens.
inline ad::Var assemble_sequence(ad::Tape& t, ad::Var patch_toks, const ParamStore& ps,
                                 const std::string& prefix, const ViTConfig& cfg,
                                 bool trainable) {
  HM_CHECK(patch_toks.rows() == cfg.n_patches() && patch_toks.cols() == cfg.width,
           InvariantError, "assemble_sequence: patch tokens are " +
               std::to_string(patch_toks.rows()) + "x" + std::to_string(patch_toks.cols()));
  ad::Var cls = t.param(ps.at(prefix + "cls"), prefix + "cls", trainable);
  ad::Var pos = t.param(ps.at(prefix + "pos"), prefix + "pos", trainable);
  ad::Var cls_row = ad::add(cls, ad::slice_rows(pos, 0, 1));
  return ad::concat_rows({cls_row, patch_toks});
}

struct BackboneOut {
  ad::Var cls;                // [1, c]
  ad::Var patches;            // [n^2, c]
  std::vector<ad::Var> taps;  // patch tokens after each tap layer
};

inline BackboneOut run_backbone(ad::Tape& t, ad::Var seq, const ParamStore& ps,
                                const std::string& prefix, const ViTConfig& cfg,
                                bool trainable) {
  HM_CHECK(seq.rows() == cfg.seq_len() && seq.cols() == cfg.width, InvariantError,
           "run_backbone: sequence is " + std::to_string(seq.rows()) + "x" +
               std::to_string(seq.cols()) + ", config wants " + std::to_string(cfg.seq_len()) +
               "x" + std::to_string(cfg.width));
  BackboneOut out;
  ad::Var x = seq;
  for (int b = 0; b < cfg.depth; ++b) {
    x = transformer_block(t, x, ps, prefix + "blk" + std::to_string(b) + ".", cfg, trainable);
    if (std::find(cfg.taps.begin(), cfg.taps.end(), b + 1) != cfg.taps.end())
      out.taps.push_back(ad::slice_rows(x, 1, cfg.n_patches()));
  }
  out.cls = ad::slice_rows(x, 0, 1);
  out.patches = ad::slice_rows(x, 1, cfg.n_patches());
  return out;
}

// --------------------------------------------------------------------------
// Eager (value-level) entry points.

struct TokenSequence {
  Mat cls;                // [1, c]
  Mat patches;            // [n^2, c]
  std::vector<Mat> taps;  // [n^2, c] each
};

inline Mat patch_embed(const Image& img, const ParamStore& ps, const std::string& prefix,
                       const ViTConfig& cfg) {
  ad::Tape t;
  return patch_tokens(t, img, ps, prefix, cfg, false).val();
}

inline Mat mhsa(const Mat& q, const Mat& k, const Mat& v) {
  HM_CHECK(q.cols() == k.cols(), InvariantError, "mhsa: q/k width mismatch");
  HM_CHECK(k.rows() == v.rows(), InvariantError, "mhsa: k/v length mismatch");
  require_finite(q, "mhsa q");
  require_finite(k, "mhsa k");
  require_finite(v, "mhsa v");
  double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat scores = (q * k.transpose()) * scale;
  return softmax_rows_val(scores) * v;
}

// Runs the backbone on an already-assembled token sequence.
inline TokenSequence forward(const Mat& tokens, const ParamStore& ps, const std::string& prefix,
                             const ViTConfig& cfg) {
  ad::Tape t;
  BackboneOut out = run_backbone(t, t.constant(tokens), ps, prefix, cfg, false);
  TokenSequence seq;
  seq.cls = out.cls.val();
  seq.patches = out.patches.val();
  for (const ad::Var& v : out.taps) seq.taps.push_back(v.val());
  return seq;
}

}  // namespace handmim
