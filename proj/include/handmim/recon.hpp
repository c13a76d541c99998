#pragma once

// Pixel reconstruction branch: a small feature pyramid that upsamples tapped
// backbone layers back to image resolution with transposed convolutions, and
// the masked L1 objective that trains it. Only pixels belonging to masked
// patches contribute to the loss; visible patches are free.

#include <string>
#include <vector>

#include "handmim/autodiff.hpp"
#include "handmim/image.hpp"
#include "handmim/log.hpp"
#include "handmim/mim.hpp"
#include "handmim/nn.hpp"
#include "handmim/vit.hpp"

namespace handmim {

struct DecoderConfig {
  // Output channels per 2x stage, deepest first. The stage count must match
  // the tap count, and patch_size must equal 2^stages so the pyramid lands
  // exactly on the image grid.
  std::vector<int> channels = {32, 16, 8, 8};
  int out_channels = 3;

  int n_stages() const { return static_cast<int>(channels.size()); }

  void validate(const ViTConfig& vit) const {
    HM_CHECK(!channels.empty(), ConfigError, "decoder: no stages");
    for (int c : channels) HM_CHECK(c > 0, ConfigError, "decoder: nonpositive channel count");
    HM_CHECK(out_channels > 0, ConfigError, "decoder: nonpositive out_channels");
    HM_CHECK(static_cast<int>(vit.taps.size()) == n_stages(), ConfigError,
             "decoder: " + std::to_string(n_stages()) + " stages but " +
                 std::to_string(vit.taps.size()) + " backbone taps");
    int s = 1;
    for (int i = 0; i < n_stages(); ++i) s *= 2;
    HM_CHECK(s == vit.patch_size, ConfigError,
             "decoder: " + std::to_string(n_stages()) + " 2x stages cover " + std::to_string(s) +
                 " pixels per patch, patch_size is " + std::to_string(vit.patch_size));
  }

  static DecoderConfig toy() { return DecoderConfig{}; }
  static DecoderConfig full() { return DecoderConfig{{256, 128, 64, 32}, 3}; }
};

// Parameter names under `prefix`: stageI.fuse_w/fuse_b (tap fusion linear),
// stageI.up_w/up_b (2x transposed conv), head_w/head_b (per-pixel RGB linear).
inline void init_decoder(ParamStore& ps, const std::string& prefix, const ViTConfig& vit,
                         const DecoderConfig& dec, Rng& rng) {
  dec.validate(vit);
  for (int i = 0; i < dec.n_stages(); ++i) {
    std::string sp = prefix + "stage" + std::to_string(i) + ".";
    int in_dim = (i == 0) ? vit.width : dec.channels[static_cast<std::size_t>(i - 1)] + vit.width;
    int c = dec.channels[static_cast<std::size_t>(i)];
    ps.add(sp + "fuse_w", trunc_normal_mat(in_dim, c, rng));
    ps.add(sp + "fuse_b", Mat::Zero(1, c));
    ps.add(sp + "up_w", trunc_normal_mat(2 * 2 * c, c, rng));
    ps.add(sp + "up_b", Mat::Zero(1, c));
  }
  ps.add(prefix + "head_w", trunc_normal_mat(dec.channels.back(), dec.out_channels, rng));
  ps.add(prefix + "head_b", Mat::Zero(1, dec.out_channels));
}

// Runs the pyramid over the tapped layers (shallow to deep, as produced by
// run_backbone) and returns a [S*S, out_channels] raster with row y*S + x.
// The deepest tap seeds the pyramid at the patch grid; each later stage
// nearest-upsamples the next shallower tap to the current resolution, fuses
// it with a linear layer, and doubles the resolution with a stride-2
// transposed conv.
inline ad::Var run_decoder(ad::Tape& t, const std::vector<ad::Var>& taps, const ParamStore& ps,
                           const std::string& prefix, const ViTConfig& vit,
                           const DecoderConfig& dec, bool trainable) {
  dec.validate(vit);
  HM_CHECK(static_cast<int>(taps.size()) == dec.n_stages(), InvariantError,
           "run_decoder: expected " + std::to_string(dec.n_stages()) + " taps, got " +
               std::to_string(taps.size()));
  const int n = vit.grid();
  for (const ad::Var& tap : taps)
    HM_CHECK(tap.rows() == n * n && tap.cols() == vit.width, InvariantError,
             "run_decoder: tap is " + std::to_string(tap.rows()) + "x" +
                 std::to_string(tap.cols()));

  auto p = [&](const std::string& name) {
    return t.param(ps.at(prefix + name), prefix + name, trainable);
  };

  ad::Var x = taps.back();
  int side = n;
  for (int i = 0; i < dec.n_stages(); ++i) {
    std::string sp = "stage" + std::to_string(i) + ".";
    if (i > 0) {
      ad::Var tap = taps[static_cast<std::size_t>(dec.n_stages() - 1 - i)];
      ad::Var lifted = ad::nn_upsample(tap, n, n, side / n);
      x = ad::concat_cols({x, lifted});
    }
    x = ad::gelu(linear(t, x, p(sp + "fuse_w"), p(sp + "fuse_b")));
    int c = dec.channels[static_cast<std::size_t>(i)];
    x = ad::gelu(ad::conv_transpose2d(x, p(sp + "up_w"), p(sp + "up_b"), side, side, c, c,
                                      /*k=*/2, /*stride=*/2, /*pad=*/0));
    side *= 2;
  }
  HM_CHECK(side == vit.image_size, InvariantError, "run_decoder: pyramid missed the image size");
  return linear(t, x, p("head_w"), p("head_b"));
}

// Expands a per-patch mask to a per-pixel 0/1 column, [S*S, 1] with row y*S+x.
inline Mat pixel_mask(const MaskSpec& mask, const ViTConfig& vit) {
  HM_CHECK(mask.n_tokens() == vit.n_patches(), InvariantError,
           "pixel_mask: mask covers " + std::to_string(mask.n_tokens()) + " patches, grid has " +
               std::to_string(vit.n_patches()));
  const int s = vit.image_size, g = vit.grid(), ps = vit.patch_size;
  Mat m = Mat::Zero(s * s, 1);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      m(y * s + x, 0) = mask.bits[static_cast<std::size_t>((y / ps) * g + (x / ps))] ? 1.0 : 0.0;
  return m;
}

// Mean absolute error between prediction and target over masked pixels only.
// An empty mask yields a constant zero.
inline ad::Var recon_loss(ad::Tape& t, ad::Var pred, const Mat& target, const MaskSpec& mask,
                          const ViTConfig& vit) {
  const int s = vit.image_size;
  HM_CHECK(pred.rows() == s * s && target.rows() == s * s && pred.cols() == target.cols(),
           InvariantError, "recon_loss: prediction/target shape mismatch");
  int masked_patches = mask.popcount();
  if (masked_patches == 0) {
    log_debug("recon_loss: empty mask, loss is zero");
    return t.constant(Mat::Zero(1, 1));
  }
  Mat m = pixel_mask(mask, vit);
  double denom = static_cast<double>(masked_patches) * vit.patch_size * vit.patch_size *
                 static_cast<double>(pred.cols());
  ad::Var diff = ad::abs_(ad::sub(pred, t.constant(target)));
  return ad::scale(ad::sum(ad::mul_colvec(diff, t.constant(m))), 1.0 / denom);
}

}  // namespace handmim
