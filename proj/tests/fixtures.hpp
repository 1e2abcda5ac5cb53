#pragma once

// Procedural photo/sketch pairs. Each photo is a smooth random mix of
// Gaussian blobs and oriented gratings; its sketch is the inverted gradient
// magnitude of the photo's luma, so sketch content follows photo structure.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "sketchforge/image.hpp"
#include "sketchforge/patchmatch.hpp"
#include "sketchforge/rng.hpp"

namespace sketchforge::testing {

inline Tensor fixture_photo(std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  Tensor img({3, H, W});
  struct Blob { double y, x, s, amp[3]; };
  struct Wave { double fy, fx, phase, amp[3]; };
  std::vector<Blob> blobs(6);
  for (auto& b : blobs) {
    b = {rng.uniform(0, double(H)), rng.uniform(0, double(W)), rng.uniform(3, 12), {}};
    for (auto& a : b.amp) a = rng.uniform(-0.5, 0.5);
  }
  std::vector<Wave> waves(3);
  for (auto& w : waves) {
    const double theta = rng.uniform(0, std::numbers::pi), f = rng.uniform(0.1, 0.5);
    w = {f * std::sin(theta), f * std::cos(theta), rng.uniform(0, 2 * std::numbers::pi), {}};
    for (auto& a : w.amp) a = rng.uniform(-0.15, 0.15);
  }
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double v = 0.5;
        for (const auto& b : blobs) {
          const double d2 = (y - b.y) * (y - b.y) + (x - b.x) * (x - b.x);
          v += b.amp[c] * std::exp(-d2 / (2 * b.s * b.s));
        }
        for (const auto& w : waves) v += w.amp[c] * std::sin(w.fy * y + w.fx * x + w.phase);
        img(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return img;
}

inline Tensor fixture_sketch(const Tensor& photo) {
  const Tensor g = to_gray(photo);
  const std::size_t H = g.dim(1), W = g.dim(2);
  Tensor out({1, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const double dy = g(0, std::min(y + 1, H - 1), x) - g(0, y > 0 ? y - 1 : 0, x);
      const double dx = g(0, y, std::min(x + 1, W - 1)) - g(0, y, x > 0 ? x - 1 : 0);
      out(0, y, x) = static_cast<float>(std::clamp(1.0 - 4.0 * std::hypot(dx, dy), 0.0, 1.0));
    }
  return out;
}

inline std::vector<ReferenceInput> fixture_pairs(std::size_t n, std::size_t H, std::size_t W,
                                                 std::uint64_t seed = 100) {
  std::vector<ReferenceInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor photo = fixture_photo(H, W, seed + i);
    Tensor sketch = fixture_sketch(photo);
    out.push_back({std::move(photo), std::move(sketch), "pair" + std::to_string(i)});
  }
  return out;
}

// High-texture sketch (fine diagonal hatching, amplitude 0.08, period 5px, over
// darker 16px blocks) and a noisy copy standing in for a synthesized sketch
// (Gaussian noise, sigma 0.065). Bilateral smoothing of the noisy copy removes
// most noise and much of the hatching: SSIM rises, FSIM falls.
struct TexturePair {
  Tensor reference;
  Tensor noisy;
};

inline TexturePair noisy_texture_pair(std::uint64_t seed = 1, std::size_t H = 128, std::size_t W = 112) {
  Rng rng(seed);
  TexturePair p{Tensor({1, H, W}), Tensor({1, H, W})};
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double v = 0.75 + 0.08 * std::sin(2 * std::numbers::pi * (x + 0.5 * y) / 5.0);
      if ((x / 16 + y / 16) % 3 == 0) v -= 0.3;
      p.reference(0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      p.noisy(0, y, x) = static_cast<float>(std::clamp(v + 0.065 * rng.normal(), 0.0, 1.0));
    }
  return p;
}

}  // namespace sketchforge::testing
