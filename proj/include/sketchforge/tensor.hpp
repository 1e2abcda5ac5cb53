#pragma once

// Dense row-major tensors and the handful of kernels the rest of the library is
// built on. Convolutions use the correlation convention (no kernel flip).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sketchforge/error.hpp"
#include "sketchforge/parallel.hpp"

namespace sketchforge {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <class T>
class BasicTensor {
 public:
  using value_type = T;

  // Empty placeholder (rank 0, no data). Every other constructor enforces the
  // rank 1-4, extents >= 1 invariant.
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 and rank-3 element access (no bounds checks).
  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& operator()(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  T& operator()(std::size_t k, std::size_t c, std::size_t i, std::size_t j) {
    return data_[((k * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }
  const T& operator()(std::size_t k, std::size_t c, std::size_t i, std::size_t j) const {
    return data_[((k * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  bool operator==(const BasicTensor&) const = default;

 private:
  void validate_shape() const {
    if (shape_.empty() || shape_.size() > 4) {
      throw ShapeError("tensor rank must be 1-4, got " + std::to_string(shape_.size()));
    }
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

namespace detail {

template <class T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

}  // namespace detail

// output[k,i,j] = sum_{c,a,b} input[c, i*s+a, j*s+b] * kernels[k,c,a,b]
template <class T>
BasicTensor<T> conv2d_valid(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                            std::size_t stride = 1) {
  detail::require_rank(input, 3, "conv2d_valid input");
  detail::require_rank(kernels, 4, "conv2d_valid kernels");
  if (stride == 0) throw ShapeError("conv2d_valid: stride must be positive");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t K = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != C) {
    throw ShapeError("conv2d_valid: kernel channels " + std::to_string(kernels.dim(1)) +
                     " differ from input channels " + std::to_string(C));
  }
  if (kh > H || kw > W) {
    throw ShapeError("conv2d_valid: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than input " + std::to_string(H) + "x" + std::to_string(W));
  }
  const std::size_t Ho = (H - kh) / stride + 1, Wo = (W - kw) / stride + 1;
  BasicTensor<T> out({K, Ho, Wo});
  const T* in = input.data().data();
  const T* ker = kernels.data().data();
  T* o = out.data().data();
  parallel_for(K, [&](std::size_t k) {
    T* plane = o + k * Ho * Wo;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t a = 0; a < kh; ++a) {
        for (std::size_t b = 0; b < kw; ++b) {
          const T w = ker[((k * C + c) * kh + a) * kw + b];
          for (std::size_t i = 0; i < Ho; ++i) {
            const T* row = in + (c * H + i * stride + a) * W + b;
            T* orow = plane + i * Wo;
            if (stride == 1) {
              for (std::size_t j = 0; j < Wo; ++j) orow[j] += w * row[j];
            } else {
              for (std::size_t j = 0; j < Wo; ++j) orow[j] += w * row[j * stride];
            }
          }
        }
      }
    }
  });
  return out;
}

// Zero padding of a C x H x W tensor on all four sides.
template <class T>
BasicTensor<T> pad2d(const BasicTensor<T>& input, std::size_t pad) {
  detail::require_rank(input, 3, "pad2d");
  if (pad == 0) return input;
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  BasicTensor<T> out({C, H + 2 * pad, W + 2 * pad});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      std::copy_n(&input(c, i, 0), W, &out(c, i + pad, pad));
  return out;
}

// Convolution with zero padding and a per-output-channel bias.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernels,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t pad) {
  BasicTensor<T> out = conv2d_valid(pad2d(input, pad), kernels, stride);
  if (bias.size() != out.dim(0)) {
    throw ShapeError("conv2d: bias length " + std::to_string(bias.size()) + " != output channels " +
                     std::to_string(out.dim(0)));
  }
  const std::size_t plane = out.dim(1) * out.dim(2);
  for (std::size_t k = 0; k < out.dim(0); ++k)
    for (std::size_t p = 0; p < plane; ++p) out[k * plane + p] += bias[k];
  return out;
}

// 2x2 max pooling, stride 2; odd extents keep a truncated edge window.
template <class T>
BasicTensor<T> max_pool2(const BasicTensor<T>& input) {
  detail::require_rank(input, 3, "max_pool2");
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  BasicTensor<T> out({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < Ho; ++i) {
      for (std::size_t j = 0; j < Wo; ++j) {
        T best = input(c, 2 * i, 2 * j);
        for (std::size_t a = 2 * i; a < std::min(H, 2 * i + 2); ++a)
          for (std::size_t b = 2 * j; b < std::min(W, 2 * j + 2); ++b) best = std::max(best, input(c, a, b));
        out(c, i, j) = best;
      }
    }
  }
  return out;
}

template <class T>
BasicTensor<T> relu(BasicTensor<T> input) {
  for (auto& v : input.data()) v = v > T{0} ? v : T{0};
  return input;
}

struct SymEigResult {
  std::vector<double> values;  // descending
  TensorD vectors;             // n x n, column i pairs with values[i]
};

// Symmetric eigendecomposition by cyclic Jacobi rotations.
inline SymEigResult eig_sym(const TensorD& matrix) {
  detail::require_rank(matrix, 2, "eig_sym");
  const std::size_t n = matrix.dim(0);
  if (matrix.dim(1) != n) throw ShapeError("eig_sym: matrix must be square, got " + to_string(matrix.shape()));
  double scale = 0.0;
  for (double v : matrix.data()) {
    if (!std::isfinite(v)) throw NumericError("eig_sym: non-finite matrix entry");
    scale = std::max(scale, std::abs(v));
  }
  TensorD a({n, n});
  double asym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      asym = std::max(asym, std::abs(matrix(i, j) - matrix(j, i)));
      a(i, j) = 0.5 * (matrix(i, j) + matrix(j, i));
    }
  }
  if (asym > 1e-8 * std::max(1.0, scale)) {
    throw ShapeError("eig_sym: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }
  TensorD v({n, n});
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-30 * std::max(1.0, scale * scale)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  SymEigResult result{std::vector<double>(n), TensorD({n, n})};
  for (std::size_t i = 0; i < n; ++i) {
    result.values[i] = a(order[i], order[i]);
    for (std::size_t k = 0; k < n; ++k) result.vectors(k, i) = v(k, order[i]);
  }
  return result;
}

}  // namespace sketchforge
