#include "tessflow/tesseract.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "tessflow/fft.hpp"
#include "tessflow/io.hpp"

namespace tessflow::tess {

using fft::cplx;

Tesseract build_tesseract(const sim::AdcCube& adc, const sim::RadarConfig& cfg) {
    const int64_t C = adc.channels, D = adc.chirps, Ns = adc.samples;
    if (C != cfg.num_channels() || D != cfg.num_chirps || Ns != cfg.num_samples)
        throw std::invalid_argument("build_tesseract: cube extents inconsistent with config");
    const int64_t A = cfg.azimuth_channels, E = cfg.elevation_channels;
    if (C != A * E)
        throw std::invalid_argument("build_tesseract: channel count does not factor as A_raw x E_raw");

    // reorder to [a][e][d][n]; channel c = i_az * E_raw + i_el
    std::vector<cplx> buf(static_cast<size_t>(A * E * D * Ns));
    for (int64_t a = 0; a < A; ++a)
        for (int64_t e = 0; e < E; ++e)
            for (int64_t d = 0; d < D; ++d)
                for (int64_t n = 0; n < Ns; ++n)
                    buf[static_cast<size_t>(((a * E + e) * D + d) * Ns + n)] =
                        adc.at(a * E + e, d, n);

    const int64_t total = A * E * D * Ns;
    fft::fft_axis(buf.data(), total, Ns, 1);          // fast time -> range
    fft::fft_axis(buf.data(), total, D, Ns);          // slow time -> Doppler
    fft::fft_axis(buf.data(), total, E, D * Ns);      // elevation channels
    fft::fft_axis(buf.data(), total, A, E * D * Ns);  // azimuth channels

    Tesseract t;
    t.grid = cfg.raw_grid();
    t.power = ad::Tensor::zeros({D, Ns, A, E});
    auto& p = t.power.raw_data();
    for (int64_t d = 0; d < D; ++d) {
        const int64_t ds = fft::shift_source(d, D);
        for (int64_t r = 0; r < Ns; ++r)
            for (int64_t a = 0; a < A; ++a) {
                const int64_t as = fft::shift_source(a, A);
                for (int64_t e = 0; e < E; ++e) {
                    const int64_t es = fft::shift_source(e, E);
                    const cplx v = buf[static_cast<size_t>(((as * E + es) * D + ds) * Ns + r)];
                    p[static_cast<size_t>(((d * Ns + r) * A + a) * E + e)] = std::norm(v);
                }
            }
    }
    return t;
}

Tesseract preprocess(const Tesseract& t, const PreprocessSpec& spec) {
    const int64_t D = t.D(), R = t.R(), A = t.A(), E = t.E();
    const int64_t Rout = R / 2, Aout = spec.azimuth_out, Eout = spec.elevation_out;
    if (Rout < 1 || A < 2 * Aout || E < Eout)
        throw std::invalid_argument("preprocess: raw extents smaller than target");

    const int64_t a_left = (A - 2 * Aout) / 2;
    const int64_t e_left = (E - Eout) / 2;

    Tesseract out;
    out.frame_id = t.frame_id;
    out.power = ad::Tensor::zeros({D, Rout, Aout, Eout});
    const auto& src = t.power.data();
    auto& dst = out.power.raw_data();
    for (int64_t d = 0; d < D; ++d)
        for (int64_t r = 0; r < Rout; ++r)
            for (int64_t a = 0; a < Aout; ++a)
                for (int64_t e = 0; e < Eout; ++e) {
                    const int64_t a0 = a_left + 2 * a, e0 = e_left + e;
                    const double v0 = src[static_cast<size_t>(((d * R + r) * A + a0) * E + e0)];
                    const double v1 = src[static_cast<size_t>(((d * R + r) * A + a0 + 1) * E + e0)];
                    dst[static_cast<size_t>(((d * Rout + r) * Aout + a) * Eout + e)] = 0.5 * (v0 + v1);
                }

    out.grid = t.grid;
    out.grid.range.count = Rout;
    out.grid.azimuth.min = t.grid.azimuth.value(a_left) + 0.5 * t.grid.azimuth.res;
    out.grid.azimuth.res = 2.0 * t.grid.azimuth.res;
    out.grid.azimuth.count = Aout;
    out.grid.elevation.min = t.grid.elevation.value(e_left);
    out.grid.elevation.count = Eout;
    return out;
}

Tesseract preprocess(const Tesseract& t) {
    if (t.A() == 107 && t.E() == 37) return preprocess(t, PreprocessSpec::paper());
    if (t.A() == 28 && t.E() == 10) return preprocess(t, PreprocessSpec::desk());
    throw std::invalid_argument("preprocess: no preset for these raw extents, pass a PreprocessSpec");
}

PlaneProjections project_planes(const Tesseract& t) {
    const int64_t D = t.D(), R = t.R(), A = t.A(), E = t.E();
    PlaneProjections out;
    out.ra = ad::Tensor::full({R, A}, -1.0);
    out.re = ad::Tensor::full({R, E}, -1.0);
    out.ae = ad::Tensor::full({A, E}, -1.0);
    auto& ra = out.ra.raw_data();
    auto& re = out.re.raw_data();
    auto& ae = out.ae.raw_data();
    const auto& p = t.power.data();
    for (int64_t d = 0; d < D; ++d)
        for (int64_t r = 0; r < R; ++r)
            for (int64_t a = 0; a < A; ++a)
                for (int64_t e = 0; e < E; ++e) {
                    const double v = p[static_cast<size_t>(((d * R + r) * A + a) * E + e)];
                    ra[static_cast<size_t>(r * A + a)] = std::max(ra[static_cast<size_t>(r * A + a)], v);
                    re[static_cast<size_t>(r * E + e)] = std::max(re[static_cast<size_t>(r * E + e)], v);
                    ae[static_cast<size_t>(a * E + e)] = std::max(ae[static_cast<size_t>(a * E + e)], v);
                }
    return out;
}

static const char kTessMagic[12] = {'T', 'E', 'S', 'S', 'F', 'L', 'O', 'W', '.', 'T', 'E', 'S'};

void write_tesseract(const Tesseract& t, std::ostream& os) {
    io::write_magic(os, kTessMagic, 1);
    io::write_u32(os, static_cast<uint32_t>(t.D()));
    io::write_u32(os, static_cast<uint32_t>(t.R()));
    io::write_u32(os, static_cast<uint32_t>(t.A()));
    io::write_u32(os, static_cast<uint32_t>(t.E()));
    io::write_f64(os, t.grid.range.min);
    io::write_f64(os, t.grid.range.res);
    io::write_f64(os, t.grid.azimuth.min);
    io::write_f64(os, t.grid.azimuth.res);
    io::write_f64(os, t.grid.elevation.min);
    io::write_f64(os, t.grid.elevation.res);
    io::write_f64(os, t.grid.doppler_res);
    io::write_f64(os, t.grid.frame_interval);
    for (double v : t.power.data()) io::write_f32(os, static_cast<float>(v));
}

Tesseract read_tesseract(std::istream& is) {
    uint32_t version = io::read_magic(is, kTessMagic);
    if (version != 1) throw io::FormatError("unsupported tesseract format version");
    Tesseract t;
    const int64_t D = io::read_u32(is);
    const int64_t R = io::read_u32(is);
    const int64_t A = io::read_u32(is);
    const int64_t E = io::read_u32(is);
    t.grid.range.min = io::read_f64(is);
    t.grid.range.res = io::read_f64(is);
    t.grid.azimuth.min = io::read_f64(is);
    t.grid.azimuth.res = io::read_f64(is);
    t.grid.elevation.min = io::read_f64(is);
    t.grid.elevation.res = io::read_f64(is);
    t.grid.doppler_res = io::read_f64(is);
    t.grid.frame_interval = io::read_f64(is);
    t.grid.range.count = R;
    t.grid.azimuth.count = A;
    t.grid.elevation.count = E;
    t.grid.doppler_count = D;
    std::vector<double> p(static_cast<size_t>(D * R * A * E));
    for (double& v : p) v = io::read_f32(is);
    t.power = ad::Tensor({D, R, A, E}, std::move(p));
    return t;
}

void save_tesseract(const Tesseract& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_tesseract(t, os);
}

Tesseract load_tesseract(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_tesseract(is);
}

} // namespace tessflow::tess
