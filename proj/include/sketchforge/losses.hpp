#pragma once

// Training objectives evaluated on plain tensors. The differentiable versions
// used during training live in autodiff.hpp and are checked against these.

#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sketchforge/error.hpp"
#include "sketchforge/features.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge {

struct LossWeights {
  double lambda_p = 1.0;
  double lambda_adv = 1e3;
  double lambda_tv = 1e-5;
  std::vector<int> layers{3, 4, 5};

  // Total-variation presets for the two benchmark reference sets.
  static constexpr double kTvCufs = 1e-5;
  static constexpr double kTvCufsf = 1e-2;

  void validate() const {
    if (lambda_p < 0 || lambda_adv < 0 || lambda_tv < 0) throw ShapeError("loss weights must be non-negative");
    if (layers.empty()) throw ShapeError("loss layer set must be non-empty");
    for (int l : layers)
      if (l < 1 || l > 5) throw ShapeError("loss layer out of range: " + std::to_string(l));
  }
};

// Unnormalized squared distance between the generated sketch's patches and the
// pseudo sketch feature patches, summed over patches and layers.
inline double pseudo_feature_loss(const FeatureSet& generated, const PseudoFeatures& pseudo,
                                  const std::vector<int>& layers) {
  double total = 0.0;
  for (int l : layers) {
    auto it = pseudo.find(l);
    if (it == pseudo.end()) throw ShapeError("pseudo_feature_loss: no pseudo feature at " + tap_name(l));
    const auto& target = it->second;
    const Tensor& fm = generated.at(l);
    const PatchGrid grid = PatchGrid::for_map(fm.dim(1), fm.dim(2), target.grid.k, l);
    if (grid.count() != target.grid.count() || grid.rows != target.grid.rows ||
        target.patches.dim(1) != fm.dim(0)) {
      throw ShapeError("pseudo_feature_loss: patch grid mismatch at " + tap_name(l));
    }
    const std::size_t k = grid.k, C = fm.dim(0);
    for (std::size_t j = 0; j < grid.count(); ++j) {
      auto [r0, c0] = grid.origin(j);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) {
            const double d = static_cast<double>(fm(c, r0 + a, c0 + b)) - target.patches(j, c, a, b);
            total += d * d;
          }
    }
  }
  return total;
}

inline double pseudo_feature_loss(const FeatureSet& generated, const PseudoFeatures& pseudo,
                                  const LossWeights& weights) {
  return pseudo_feature_loss(generated, pseudo, weights.layers);
}

// Sum of squared vertical and horizontal neighbor differences.
template <class T>
double tv_loss(const BasicTensor<T>& image) {
  detail::require_rank(image, 3, "tv_loss");
  double total = 0.0;
  for (std::size_t c = 0; c < image.dim(0); ++c)
    for (std::size_t u = 0; u < image.dim(1); ++u)
      for (std::size_t v = 0; v < image.dim(2); ++v) {
        const double x = image(c, u, v);
        if (u + 1 < image.dim(1)) total += (image(c, u + 1, v) - x) * (image(c, u + 1, v) - x);
        if (v + 1 < image.dim(2)) total += (image(c, u, v + 1) - x) * (image(c, u, v + 1) - x);
      }
  return total;
}

namespace detail {

// Mean of (s - target)^2 over every cell of every score map.
template <class T>
double mean_squared_offset(std::span<const BasicTensor<T>> scores, double target) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : scores) {
    for (T v : s.data()) sum += (v - target) * (v - target);
    n += s.size();
  }
  if (n == 0) throw ShapeError("lsgan loss: empty score set");
  return sum / static_cast<double>(n);
}

}  // namespace detail

template <class T>
double lsgan_d_loss(std::span<const BasicTensor<T>> real, std::span<const BasicTensor<T>> fake) {
  return 0.5 * detail::mean_squared_offset(real, 1.0) + 0.5 * detail::mean_squared_offset(fake, 0.0);
}

template <class T>
double lsgan_d_loss(const BasicTensor<T>& real, const BasicTensor<T>& fake) {
  return lsgan_d_loss<T>(std::span(&real, 1), std::span(&fake, 1));
}

template <class T>
double lsgan_g_loss(std::span<const BasicTensor<T>> fake) {
  return detail::mean_squared_offset(fake, 1.0);
}

template <class T>
double lsgan_g_loss(const BasicTensor<T>& fake) {
  return lsgan_g_loss<T>(std::span(&fake, 1));
}

namespace detail {

inline void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite loss component: ") + name);
}

}  // namespace detail

inline double generator_total(double l_p, double l_gan_g, double l_tv, const LossWeights& w) {
  detail::require_finite(l_p, "L_p");
  detail::require_finite(l_gan_g, "L_GAN_G");
  detail::require_finite(l_tv, "L_tv");
  return w.lambda_p * l_p + w.lambda_adv * l_gan_g + w.lambda_tv * l_tv;
}

inline double discriminator_total(double l_gan_d) {
  detail::require_finite(l_gan_d, "L_GAN_D");
  return l_gan_d;
}

}  // namespace sketchforge
