#include "tessflow/fft.hpp"

#include <cmath>

namespace tessflow::fft {

namespace {

bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_pow2(std::vector<cplx>& x) {
    const int64_t n = static_cast<int64_t>(x.size());
    // bit-reversal permutation
    for (int64_t i = 1, j = 0; i < n; ++i) {
        int64_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[static_cast<size_t>(i)], x[static_cast<size_t>(j)]);
    }
    for (int64_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        for (int64_t i = 0; i < n; i += len) {
            for (int64_t k = 0; k < len / 2; ++k) {
                const cplx w = std::polar(1.0, ang * static_cast<double>(k));
                cplx u = x[static_cast<size_t>(i + k)];
                cplx v = x[static_cast<size_t>(i + k + len / 2)] * w;
                x[static_cast<size_t>(i + k)] = u + v;
                x[static_cast<size_t>(i + k + len / 2)] = u - v;
            }
        }
    }
}

void dft_direct(std::vector<cplx>& x) {
    const int64_t n = static_cast<int64_t>(x.size());
    std::vector<cplx> tw(static_cast<size_t>(n));
    for (int64_t k = 0; k < n; ++k)
        tw[static_cast<size_t>(k)] = std::polar(1.0, -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n));
    std::vector<cplx> out(static_cast<size_t>(n), cplx(0.0, 0.0));
    for (int64_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (int64_t m = 0; m < n; ++m) acc += x[static_cast<size_t>(m)] * tw[static_cast<size_t>((k * m) % n)];
        out[static_cast<size_t>(k)] = acc;
    }
    x = std::move(out);
}

} // namespace

void fft_inplace(std::vector<cplx>& x) {
    if (x.size() <= 1) return;
    if (is_pow2(static_cast<int64_t>(x.size())))
        fft_pow2(x);
    else
        dft_direct(x);
}

void fft_axis(cplx* data, int64_t total, int64_t n, int64_t stride) {
    std::vector<cplx> lane(static_cast<size_t>(n));
    const int64_t block = n * stride;
    for (int64_t base = 0; base < total; base += block) {
        for (int64_t off = 0; off < stride; ++off) {
            for (int64_t i = 0; i < n; ++i) lane[static_cast<size_t>(i)] = data[base + off + i * stride];
            fft_inplace(lane);
            for (int64_t i = 0; i < n; ++i) data[base + off + i * stride] = lane[static_cast<size_t>(i)];
        }
    }
}

} // namespace tessflow::fft
