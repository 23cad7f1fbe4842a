#pragma once

// Thin FFTW wrapper for 2-D complex DFTs. Plan creation is not thread-safe,
// so it is serialized; execution is not.

#include <complex>
#include <fftw3.h>
#include <mutex>
#include <vector>

#include "rdwn/tensor.hpp"

namespace rdwn::fft {

inline std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

/// In-place-style 2-D DFT of a real H x W grid; returns H*W complex values.
inline std::vector<std::complex<double>> dft2d(const double* data, int64_t H,
                                               int64_t W, int sign = FFTW_FORWARD) {
  std::vector<std::complex<double>> buf(H * W);
  for (int64_t i = 0; i < H * W; ++i) buf[i] = data[i];
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_2d((int)H, (int)W,
                            reinterpret_cast<fftw_complex*>(buf.data()),
                            reinterpret_cast<fftw_complex*>(buf.data()),
                            sign, FFTW_ESTIMATE);
  }
  if (!plan) throw Error("fft: plan creation failed");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  return buf;
}

/// Inverse DFT of a complex spectrum, returning the real part scaled by 1/(HW).
inline std::vector<double> idft2d_real(std::vector<std::complex<double>> spec,
                                       int64_t H, int64_t W) {
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    plan = fftw_plan_dft_2d((int)H, (int)W,
                            reinterpret_cast<fftw_complex*>(spec.data()),
                            reinterpret_cast<fftw_complex*>(spec.data()),
                            FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  if (!plan) throw Error("fft: plan creation failed");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fftw_destroy_plan(plan);
  }
  std::vector<double> out(H * W);
  const double inv = 1.0 / double(H * W);
  for (int64_t i = 0; i < H * W; ++i) out[i] = spec[i].real() * inv;
  return out;
}

/// Centered integer frequency: k in [-n/2, n/2) for index i.
inline int64_t centered_freq(int64_t i, int64_t n) {
  return i < (n + 1) / 2 ? i : i - n;
}

}  // namespace rdwn::fft
