#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>

#include <fftw3.h>

#include "dic/error.hpp"

namespace dic {

/// fftw_malloc'd array; alignment matches what the cached plans were built with.
template <typename T>
class FftBuffer {
 public:
  explicit FftBuffer(std::size_t n) : n_(n), p_(static_cast<T*>(fftw_malloc(sizeof(T) * n))) {
    if (!p_) throw std::bad_alloc();
  }
  ~FftBuffer() { fftw_free(p_); }
  FftBuffer(const FftBuffer&) = delete;
  FftBuffer& operator=(const FftBuffer&) = delete;

  T* data() noexcept { return p_; }
  const T* data() const noexcept { return p_; }
  T& operator[](std::size_t i) noexcept { return p_[i]; }
  const T& operator[](std::size_t i) const noexcept { return p_[i]; }
  std::size_t size() const noexcept { return n_; }

 private:
  std::size_t n_;
  T* p_;
};

/// Real-to-complex / complex-to-real 2D transforms of an n x n array.
/// Plans are created once per size; execution is thread-safe.
class Fft2D {
 public:
  static const Fft2D& get(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<Fft2D>> cache;
    std::lock_guard lock(mu);
    auto& slot = cache[n];
    if (!slot) slot.reset(new Fft2D(n));
    return *slot;
  }

  int n() const noexcept { return n_; }
  std::size_t spectrum_size() const noexcept { return static_cast<std::size_t>(n_) * (n_ / 2 + 1); }

  void forward(double* in, fftw_complex* out) const { fftw_execute_dft_r2c(fwd_, in, out); }
  /// Unnormalized inverse; destroys `in`.
  void inverse(fftw_complex* in, double* out) const { fftw_execute_dft_c2r(inv_, in, out); }

  ~Fft2D() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }
  Fft2D(const Fft2D&) = delete;
  Fft2D& operator=(const Fft2D&) = delete;

 private:
  explicit Fft2D(int n) : n_(n) {
    if (n < 1) fail(ErrorCode::InvalidArgument, "FFT size must be positive");
    FftBuffer<double> r(static_cast<std::size_t>(n) * n);
    FftBuffer<fftw_complex> c(spectrum_size());
    fwd_ = fftw_plan_dft_r2c_2d(n, n, r.data(), c.data(), FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_2d(n, n, c.data(), r.data(), FFTW_ESTIMATE);
  }

  int n_;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

}  // namespace dic
