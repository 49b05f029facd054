#pragma once

#include <complex>
#include <cstdint>
#include <vector>

namespace tessflow::fft {

using cplx = std::complex<double>;

// Forward unnormalized DFT: X[k] = sum_n x[n] exp(-2*pi*i*k*n/N).
// Radix-2 iterative transform for power-of-two lengths, direct evaluation
// with precomputed twiddles otherwise (array axes here are small).
void fft_inplace(std::vector<cplx>& x);

// Transforms every length-n lane of `data` along a strided axis.
// lanes are addressed as data[lane_base + i*stride] for i in [0,n).
void fft_axis(cplx* data, int64_t total, int64_t n, int64_t stride);

// fftshift index map for even or odd n: returns source bin for shifted bin s,
// so that shifted[s] = raw[shift_source(s, n)] puts DC at n/2.
inline int64_t shift_source(int64_t s, int64_t n) { return (s + n - n / 2 + n) % n; }

} // namespace tessflow::fft
