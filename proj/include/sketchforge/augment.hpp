#pragma once

// Online photometric augmentation of training photos: brightness, contrast,
// saturation and sharpness, each clamped back to [0, 1].

#include <algorithm>
#include <cmath>

#include "sketchforge/image.hpp"
#include "sketchforge/rng.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

struct AugmentConfig {
  bool brightness = true;
  bool contrast = true;
  bool saturation = true;
  bool sharpness = true;
  double brightness_delta = 0.2;  // additive offset drawn from [-delta, delta]
  double factor_lo = 0.8;         // multiplicative factors drawn from [lo, hi]
  double factor_hi = 1.2;

  bool any() const noexcept { return brightness || contrast || saturation || sharpness; }
};

// Identity values leave the photo untouched.
struct AugmentParams {
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double sharpness = 1.0;
};

inline AugmentParams sample_augment(const AugmentConfig& cfg, Rng& rng) {
  AugmentParams p;
  if (cfg.brightness) p.brightness = rng.uniform(-cfg.brightness_delta, cfg.brightness_delta);
  if (cfg.contrast) p.contrast = rng.uniform(cfg.factor_lo, cfg.factor_hi);
  if (cfg.saturation) p.saturation = rng.uniform(cfg.factor_lo, cfg.factor_hi);
  if (cfg.sharpness) p.sharpness = rng.uniform(cfg.factor_lo, cfg.factor_hi);
  return p;
}

namespace detail {

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// 3x3 smoothing kernel (center weight 5, neighbors 1) with edge replication.
inline Tensor smooth3(const Tensor& img) {
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor out(img.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 4.0 * img(c, y, x);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(H) - 1));
            const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(W) - 1));
            s += img(c, yy, xx);
          }
        out(c, y, x) = static_cast<float>(s / 13.0);
      }
  return out;
}

}  // namespace detail

inline Tensor apply_augment(const Tensor& photo, const AugmentParams& p) {
  detail::require_rank(photo, 3, "augment");
  Tensor img = photo;
  if (p.brightness != 0.0) {
    for (auto& v : img.data()) v = detail::clamp01(v + p.brightness);
  }
  if (p.contrast != 1.0) {
    double mean = 0.0;
    for (float v : img.data()) mean += v;
    mean /= static_cast<double>(img.size());
    for (auto& v : img.data()) v = detail::clamp01(mean + p.contrast * (v - mean));
  }
  if (p.saturation != 1.0 && img.dim(0) == 3) {
    const Tensor luma = to_gray(img);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < img.dim(1); ++y)
        for (std::size_t x = 0; x < img.dim(2); ++x) {
          const double l = luma(0, y, x);
          img(c, y, x) = detail::clamp01(l + p.saturation * (img(c, y, x) - l));
        }
  }
  if (p.sharpness != 1.0) {
    const Tensor blurred = detail::smooth3(img);
    for (std::size_t i = 0; i < img.size(); ++i) {
      img[i] = detail::clamp01(blurred[i] + p.sharpness * (img[i] - blurred[i]));
    }
  }
  return img;
}

inline Tensor augment(const Tensor& photo, const AugmentConfig& cfg, Rng& rng) {
  return apply_augment(photo, sample_augment(cfg, rng));
}

}  // namespace sketchforge
