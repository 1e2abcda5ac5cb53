#pragma once

#include <cmath>
#include <cstdint>

#include "sketchforge/rng.hpp"
#include "sketchforge/tensor.hpp"

namespace sketchforge::testing {

template <class T = float>
BasicTensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace sketchforge::testing

#include <filesystem>
#include <string>

#include "sketchforge/features.hpp"

namespace sketchforge::testing {

inline Extractor slim_extractor(std::uint64_t seed = 11, std::array<std::size_t, 5> widths = {4, 8, 8, 8, 8}) {
  return Extractor::random(ExtractorSpec::vgg19(widths), seed);
}

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("sketchforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace sketchforge::testing
