#pragma once

// Thin RAII wrapper over FFTW's 2-D complex transform. FFTW planning is not
// thread-safe, so plan creation and destruction go through one mutex;
// execution on distinct plans is safe.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <mutex>
#include <vector>

#include "sketchforge/error.hpp"

namespace sketchforge {

namespace detail {
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

class Fft2 {
 public:
  using Complex = std::complex<double>;

  Fft2(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) throw ShapeError("Fft2: empty extent");
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    buf_ = fftw_alloc_complex(rows * cols);
    const int r = static_cast<int>(rows), c = static_cast<int>(cols);
    fwd_ = fftw_plan_dft_2d(r, c, buf_, buf_, FFTW_FORWARD, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_2d(r, c, buf_, buf_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }

  ~Fft2() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(buf_);
  }

  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  // Unnormalized forward transform.
  std::vector<Complex> forward(const std::vector<Complex>& x) { return run(x, fwd_, 1.0); }

  // Inverse transform including the 1/(rows*cols) factor.
  std::vector<Complex> inverse(const std::vector<Complex>& x) {
    return run(x, inv_, 1.0 / static_cast<double>(rows_ * cols_));
  }

 private:
  std::vector<Complex> run(const std::vector<Complex>& x, fftw_plan plan, double scale) {
    if (x.size() != rows_ * cols_) throw ShapeError("Fft2: input size mismatch");
    static_assert(sizeof(Complex) == sizeof(fftw_complex));
    // std::complex<double> is layout-compatible with fftw_complex.
    auto* buf = reinterpret_cast<Complex*>(buf_);
    std::copy(x.begin(), x.end(), buf);
    fftw_execute(plan);
    std::vector<Complex> out(buf, buf + x.size());
    if (scale != 1.0)
      for (auto& v : out) v *= scale;
    return out;
  }

  std::size_t rows_, cols_;
  fftw_complex* buf_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

}  // namespace sketchforge
