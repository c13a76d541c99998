#pragma once

#include <cmath>
#include <vector>

#include "handmim/error.hpp"
#include "handmim/image.hpp"
#include "handmim/rng.hpp"

// Cross-view augmentation. Each view is produced by a similarity transform
// (random resized crop + rotation) followed by photometric corruption.
//
// Geometry lives in a mathematical frame: x to the right, y up, origin at
// the bottom-left corner of the image, pixel (row r, col c) centered at
// (c + 0.5, H - r - 0.5). A point p in the source maps to the view as
//
//     q = R(p * gamma - offset)
//
// with R a CCW rotation, gamma = out_size / crop_side the scale, and the
// offset chosen so the crop center lands on the view center. The inverse
// map (view point back to source) is
//
//     p = (R^T q + offset) / gamma
//
// and is what both the renderer and the latent alignment use. Photometric
// parameters never enter these maps.

namespace handmim {

struct AugmentConfig {
  int out_size = 64;
  double angle_min_deg = 0.0, angle_max_deg = 150.0;  // open interval when sampling
  double area_min = 0.08, area_max = 1.0;
  double jitter = 0.4;        // brightness/contrast/saturation factor range 1 +- jitter
  double p_gray = 0.2;
  double p_blur = 0.5;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  double p_solarize = 0.2;
  double solarize_threshold = 0.5;

  void validate() const {
    HM_CHECK(out_size > 0, ConfigError, "augment: out_size must be positive");
    HM_CHECK(angle_min_deg >= 0 && angle_max_deg <= 360 && angle_min_deg <= angle_max_deg,
             ConfigError, "augment: bad angle range");
    HM_CHECK(area_min > 0 && area_max <= 1.0 && area_min < area_max, ConfigError,
             "augment: bad area range");
  }
};

struct PhotoParams {
  double brightness = 1.0, contrast = 1.0, saturation = 1.0;
  bool grayscale = false;
  bool blur = false;
  double blur_sigma = 0.0;
  bool solarize = false;
};

struct ViewTransform {
  // Geometric part.
  double angle = 0.0;   // radians, CCW
  double gamma = 1.0;   // scale factor out_size / crop_side
  double ox = 0.0, oy = 0.0;
  // Bookkeeping.
  int src_w = 0, src_h = 0, out_size = 0;
  std::uint64_t seed = 0;
  PhotoParams photo;

  Vec2 apply_geometric(const Vec2& p) const {
    double xs = p.x() * gamma - ox, ys = p.y() * gamma - oy;
    double c = std::cos(angle), s = std::sin(angle);
    return Vec2(c * xs - s * ys, s * xs + c * ys);
  }

  Vec2 invert_geometric(const Vec2& q) const {
    HM_CHECK(gamma > 0, InvariantError, "view transform: nonpositive scale");
    double c = std::cos(angle), s = std::sin(angle);
    double xr = c * q.x() + s * q.y();   // R^T q
    double yr = -s * q.x() + c * q.y();
    return Vec2((xr + ox) / gamma, (yr + oy) / gamma);
  }

  // Rebuilds the exact transform for (seed, source size, config); sampling
  // via an Rng just draws a fresh seed and delegates here.
  static ViewTransform from_seed(std::uint64_t seed, int src_w, int src_h,
                                 const AugmentConfig& cfg) {
    cfg.validate();
    HM_CHECK(src_w >= 2 && src_h >= 2, InvariantError, "augment: source image too small");
    Rng r(seed);
    ViewTransform xf;
    xf.seed = seed;
    xf.src_w = src_w;
    xf.src_h = src_h;
    xf.out_size = cfg.out_size;

    double angle_deg;
    do {
      angle_deg = r.uniform(cfg.angle_min_deg, cfg.angle_max_deg);
    } while (angle_deg <= cfg.angle_min_deg || angle_deg >= cfg.angle_max_deg);
    xf.angle = angle_deg * M_PI / 180.0;

    double area;
    do {
      area = r.uniform(cfg.area_min, cfg.area_max);
    } while (area <= cfg.area_min || area >= cfg.area_max);
    double side = std::sqrt(area) * std::min(src_w, src_h);
    if (side < 2.0) side = 2.0;
    xf.gamma = cfg.out_size / side;

    double x0 = r.uniform(0.0, src_w - side);
    double y0 = r.uniform(0.0, src_h - side);
    double cx = x0 + side / 2.0, cy = y0 + side / 2.0;
    // offset = gamma * center - R^T * view_center, so the crop center maps
    // to the view center.
    double half = cfg.out_size / 2.0;
    double c = std::cos(xf.angle), s = std::sin(xf.angle);
    xf.ox = xf.gamma * cx - (c * half + s * half);
    xf.oy = xf.gamma * cy - (-s * half + c * half);

    xf.photo.brightness = r.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    xf.photo.contrast = r.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    xf.photo.saturation = r.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    xf.photo.grayscale = r.bernoulli(cfg.p_gray);
    xf.photo.blur = r.bernoulli(cfg.p_blur);
    xf.photo.blur_sigma = r.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    xf.photo.solarize = r.bernoulli(cfg.p_solarize);
    return xf;
  }

  static ViewTransform sample(Rng& rng, int src_w, int src_h, const AugmentConfig& cfg) {
    return from_seed(rng.next_u64(), src_w, src_h, cfg);
  }
};

namespace detail {

inline double luma(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

inline void gaussian_blur_inplace(Image& img, double sigma) {
  if (sigma <= 0) return;
  int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;

  auto clampi = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  Mat tmp(img.pix.rows(), 3);
  // Horizontal pass.
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] *
               img.pix.row(y * img.w + clampi(x + i, 0, img.w - 1));
      tmp.row(y * img.w + x) = acc;
    }
  // Vertical pass.
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
      for (int i = -radius; i <= radius; ++i)
        acc += k[static_cast<std::size_t>(i + radius)] *
               tmp.row(clampi(y + i, 0, img.h - 1) * img.w + x);
      img.pix.row(y * img.w + x) = acc;
    }
}

}  // namespace detail

// Applies the photometric chain in a fixed order: brightness, contrast,
// saturation, grayscale, blur, solarize, final clamp to [0,1]. Neutral
// parameters leave the image bit-identical.
inline void apply_photometric(Image& img, const PhotoParams& p) {
  if (p.brightness != 1.0) img.pix *= p.brightness;
  if (p.contrast != 1.0) {
    double mean_l = 0;
    for (long i = 0; i < img.pix.rows(); ++i)
      mean_l += detail::luma(img.pix(i, 0), img.pix(i, 1), img.pix(i, 2));
    mean_l /= static_cast<double>(img.pix.rows());
    img.pix = p.contrast * img.pix + Mat::Constant(img.pix.rows(), 3, (1.0 - p.contrast) * mean_l);
  }
  if (p.saturation != 1.0 || p.grayscale) {
    for (long i = 0; i < img.pix.rows(); ++i) {
      double l = detail::luma(img.pix(i, 0), img.pix(i, 1), img.pix(i, 2));
      if (p.grayscale) {
        img.pix(i, 0) = img.pix(i, 1) = img.pix(i, 2) = l;
      } else {
        for (int c = 0; c < 3; ++c)
          img.pix(i, c) = p.saturation * img.pix(i, c) + (1.0 - p.saturation) * l;
      }
    }
  }
  if (p.blur) detail::gaussian_blur_inplace(img, p.blur_sigma);
  if (p.solarize) {
    for (long i = 0; i < img.pix.rows(); ++i)
      for (int c = 0; c < 3; ++c)
        if (img.pix(i, c) > 0.5) img.pix(i, c) = 1.0 - img.pix(i, c);
  }
  img.clamp01();
}

// Renders the view by pulling every output pixel back through the inverse
// map and sampling the source bilinearly (border-clamped), then applying
// the photometric chain.
inline Image render_view(const Image& src, const ViewTransform& xf) {
  HM_CHECK(src.valid(), InvariantError, "render_view: invalid source image");
  HM_CHECK(src.w == xf.src_w && src.h == xf.src_h, InvariantError,
           "render_view: transform was sampled for a different source size");
  const int S = xf.out_size;
  Image out(S, S);
  for (int r = 0; r < S; ++r)
    for (int x = 0; x < S; ++x) {
      Vec2 q(x + 0.5, S - r - 0.5);
      Vec2 p = xf.invert_geometric(q);
      double col = p.x() - 0.5;
      double row = src.h - p.y() - 0.5;
      out.pix.row(r * S + x) = src.sample(col, row);
    }
  apply_photometric(out, xf.photo);
  return out;
}

struct ViewPair {
  ViewTransform xf_u, xf_v;
  Image u, v;
};

inline ViewPair generate_views(const Image& img, Rng& rng, const AugmentConfig& cfg) {
  ViewPair vp;
  vp.xf_u = ViewTransform::sample(rng, img.w, img.h, cfg);
  vp.xf_v = ViewTransform::sample(rng, img.w, img.h, cfg);
  vp.u = render_view(img, vp.xf_u);
  vp.v = render_view(img, vp.xf_v);
  return vp;
}

}  // namespace handmim
