#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "tessflow/fft.hpp"
#include "tessflow/io.hpp"
#include "tessflow/rng.hpp"
#include "tessflow/tesseract.hpp"

using namespace tessflow;
using namespace tessflow::sim;
using namespace tessflow::tess;

namespace {

// analytic (d,r,a,e) bin for a scatterer, mirroring the FFT physics:
// range bin r/dr, Doppler bin D/2 + v_r/dv, angle bins in sin space.
struct AnalyticBins {
    double d, r, a, e;
};

AnalyticBins analytic_bins(const RadarConfig& cfg, const Scatterer& s) {
    const double r = std::sqrt(s.position[0] * s.position[0] + s.position[1] * s.position[1] +
                               s.position[2] * s.position[2]);
    const double vr = (s.velocity[0] * s.position[0] + s.velocity[1] * s.position[1] +
                       s.velocity[2] * s.position[2]) /
                      r;
    const double az = std::atan2(s.position[1], s.position[0]);
    const double el = std::asin(s.position[2] / r);
    const double lambda = cfg.wavelength();
    const double half = lambda / 2.0;
    AnalyticBins b;
    b.r = r / cfg.range_resolution();
    b.d = double(cfg.num_chirps / 2) + vr / cfg.doppler_resolution();
    // u = sin(az)cos(el) for the azimuth line array, w = sin(el) for elevation
    b.a = double(cfg.azimuth_channels / 2) +
          double(cfg.azimuth_channels) * half * std::sin(az) * std::cos(el) / lambda;
    b.e = double(cfg.elevation_channels / 2) +
          double(cfg.elevation_channels) * half * std::sin(el) / lambda;
    return b;
}

} // namespace

TEST_CASE("fft: Parseval holds per transform within 1e-9 relative") {
    Rng rng(3);
    for (int64_t n : {16, 28, 10, 64, 37}) {
        std::vector<fft::cplx> x(static_cast<size_t>(n));
        double in_energy = 0;
        for (auto& v : x) {
            v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
            in_energy += std::norm(v);
        }
        auto y = x;
        fft::fft_inplace(y);
        double out_energy = 0;
        for (auto& v : y) out_energy += std::norm(v);
        CHECK(std::fabs(out_energy - double(n) * in_energy) / (double(n) * in_energy) < 1e-9);
    }
}

TEST_CASE("fft: matches direct DFT on power-of-two lengths") {
    Rng rng(5);
    const int64_t n = 32;
    std::vector<fft::cplx> x(static_cast<size_t>(n));
    for (auto& v : x) v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
    auto fast = x;
    fft::fft_inplace(fast);
    for (int64_t k = 0; k < n; ++k) {
        fft::cplx acc = 0;
        for (int64_t m = 0; m < n; ++m)
            acc += x[size_t(m)] * std::polar(1.0, -2.0 * M_PI * double(k * m) / double(n));
        CHECK(std::abs(acc - fast[size_t(k)]) < 1e-9);
    }
}

TEST_CASE("all-zero ADC gives the all-zero tesseract") {
    RadarConfig cfg = RadarConfig::desk_default();
    SceneSpec empty;
    empty.seed = 1;
    Tesseract t = build_tesseract(simulate_adc(empty, cfg, 0), cfg);
    for (double v : t.power.data()) CHECK(v == 0.0);
}

TEST_CASE("build_tesseract satisfies the Parseval identity") {
    RadarConfig cfg = RadarConfig::desk_default();
    cfg.noise_power = 0.3;
    SceneSpec scene;
    scene.seed = 11;
    scene.scatterers.push_back({{10, 1, 0.5}, {2, 0, 0}, 1.0});
    scene.scatterers.push_back({{30, -4, -1}, {-1, 1, 0}, 0.5});
    AdcCube cube = simulate_adc(scene, cfg, 0);
    double adc_energy = 0;
    for (const auto& v : cube.data) adc_energy += std::norm(v);
    Tesseract t = build_tesseract(cube, cfg);
    double tess_energy = 0;
    for (double v : t.power.data()) tess_energy += v;
    const double scale = double(cfg.num_samples * cfg.num_chirps * cfg.num_channels());
    CHECK(std::fabs(tess_energy - scale * adc_energy) / (scale * adc_energy) < 1e-9);
}

TEST_CASE("tesseract power is finite and nonnegative") {
    RadarConfig cfg = RadarConfig::desk_default();
    cfg.noise_power = 1.0;
    SceneSpec scene;
    scene.seed = 13;
    scene.scatterers.push_back({{20, 2, 1}, {1, 0, 0}, 1.5});
    Tesseract t = build_tesseract(simulate_adc(scene, cfg, 0), cfg);
    for (double v : t.power.data()) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
    }
}

TEST_CASE("single noiseless scatterer peaks within +-1 bin of the analytic cell") {
    RadarConfig cfg = RadarConfig::desk_default();
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        SceneSpec scene;
        scene.seed = 100 + uint64_t(trial);
        const double az = rng.uniform(-20, 20) * kDegToRad;
        const double el = rng.uniform(-12, 12) * kDegToRad;
        const double r = rng.uniform(6, 55);
        Vec3 pos{r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)};
        Vec3 u{pos[0] / r, pos[1] / r, pos[2] / r};
        const double vr = rng.uniform(-6, 6);
        Vec3 vel{vr * u[0], vr * u[1], vr * u[2]};
        scene.scatterers.push_back({pos, vel, 1.0});

        Tesseract t = build_tesseract(simulate_adc(scene, cfg, 0), cfg);
        const auto& p = t.power.data();
        int64_t best = 0;
        for (int64_t i = 1; i < t.power.size(); ++i)
            if (p[size_t(i)] > p[size_t(best)]) best = i;
        const int64_t E = t.E(), A = t.A(), R = t.R();
        const int64_t ei = best % E, ai = (best / E) % A, ri = (best / (E * A)) % R,
                      di = best / (E * A * R);
        AnalyticBins bins = analytic_bins(cfg, scene.scatterers[0]);
        CHECK(std::fabs(double(di) - bins.d) <= 1.0);
        CHECK(std::fabs(double(ri) - bins.r) <= 1.0);
        CHECK(std::fabs(double(ai) - bins.a) <= 1.0);
        CHECK(std::fabs(double(ei) - bins.e) <= 1.0);
    }
}

TEST_CASE("preprocess: desk raw extents reduce by the documented rules") {
    Tesseract t;
    t.power = ad::Tensor::zeros({16, 64, 28, 10});
    t.grid.range = {0.0, 1.0, 64};
    t.grid.azimuth = {-57.3, 4.09, 28};
    t.grid.elevation = {-57.3, 11.46, 10};
    t.grid.doppler_count = 16;
    t.grid.doppler_res = 1.0;
    t.grid.frame_interval = 0.1;
    Tesseract out = preprocess(t);
    CHECK(out.power.shape() == ad::Shape{16, 32, 12, 8});
    CHECK(out.grid.R() == 32);
    CHECK(out.grid.A() == 12);
    CHECK(out.grid.E() == 8);
    CHECK(out.grid.azimuth.res == doctest::Approx(2 * 4.09));

    // paper-scale extents map to the published input size
    Tesseract paper;
    paper.power = ad::Tensor::zeros({2, 256, 107, 37}); // Doppler extent free
    paper.grid.range = {0.0, 0.46, 256};
    paper.grid.azimuth = {-53.0, 1.0, 107};
    paper.grid.elevation = {-18.0, 1.0, 37};
    paper.grid.doppler_count = 2;
    paper.grid.doppler_res = 0.1;
    paper.grid.frame_interval = 0.1;
    Tesseract pout = preprocess(paper);
    CHECK(pout.power.shape() == ad::Shape{2, 128, 48, 32});

    Tesseract small;
    small.power = ad::Tensor::zeros({2, 4, 4, 4});
    small.grid = t.grid;
    CHECK_THROWS(preprocess(small, PreprocessSpec{12, 8}));
}

TEST_CASE("preprocess azimuth averaging matches the scalar rule and halves energy") {
    Rng rng(23);
    Tesseract t;
    t.power = ad::Tensor::uniform({4, 8, 28, 10}, rng, 0.0, 2.0);
    t.grid.range = {0.0, 1.0, 8};
    t.grid.azimuth = {-57.3, 4.09, 28};
    t.grid.elevation = {-57.3, 11.46, 10};
    t.grid.doppler_count = 4;
    t.grid.doppler_res = 1.0;
    t.grid.frame_interval = 0.1;
    Tesseract out = preprocess(t, PreprocessSpec{12, 8});
    // scalar re-evaluation
    const int64_t a_left = (28 - 24) / 2, e_left = (10 - 8) / 2;
    for (int64_t d = 0; d < 4; ++d)
        for (int64_t r = 0; r < 4; ++r)
            for (int64_t a = 0; a < 12; ++a)
                for (int64_t e = 0; e < 8; ++e) {
                    double expect = 0.5 * (t.power.at({d, r, a_left + 2 * a, e_left + e}) +
                                           t.power.at({d, r, a_left + 2 * a + 1, e_left + e}));
                    CHECK(out.power.at({d, r, a, e}) == expect);
                }
    // energy conservation up to the exact factor 2 across merged pairs
    double in_sum = 0, out_sum = 0;
    for (int64_t d = 0; d < 4; ++d)
        for (int64_t r = 0; r < 4; ++r)
            for (int64_t a = a_left; a < a_left + 24; ++a)
                for (int64_t e = e_left; e < e_left + 8; ++e)
                    in_sum += t.power.at({d, r, a, e});
    for (double v : out.power.data()) out_sum += v;
    CHECK(std::fabs(out_sum - 0.5 * in_sum) / in_sum < 1e-12);
}

TEST_CASE("plane projections: constants, single support, scalar oracle") {
    Tesseract t;
    t.power = ad::Tensor::full({3, 4, 5, 6}, 2.5);
    auto planes = project_planes(t);
    for (double v : planes.ra.data()) CHECK(v == 2.5);
    for (double v : planes.re.data()) CHECK(v == 2.5);
    for (double v : planes.ae.data()) CHECK(v == 2.5);

    Tesseract sparse;
    sparse.power = ad::Tensor::zeros({3, 4, 5, 6});
    sparse.power.raw_data()[size_t(((1 * 4 + 2) * 5 + 3) * 6 + 4)] = 7.0;
    auto sp = project_planes(sparse);
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t a = 0; a < 5; ++a)
            CHECK(sp.ra.at({r, a}) == ((r == 2 && a == 3) ? 7.0 : 0.0));
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t e = 0; e < 6; ++e)
            CHECK(sp.re.at({r, e}) == ((r == 2 && e == 4) ? 7.0 : 0.0));
    for (int64_t a = 0; a < 5; ++a)
        for (int64_t e = 0; e < 6; ++e)
            CHECK(sp.ae.at({a, e}) == ((a == 3 && e == 4) ? 7.0 : 0.0));

    Rng rng(29);
    Tesseract rt;
    rt.power = ad::Tensor::uniform({3, 4, 5, 6}, rng, 0, 1);
    auto rp = project_planes(rt);
    for (int64_t r = 0; r < 4; ++r)
        for (int64_t a = 0; a < 5; ++a) {
            double m = 0;
            for (int64_t d = 0; d < 3; ++d)
                for (int64_t e = 0; e < 6; ++e) m = std::max(m, rt.power.at({d, r, a, e}));
            CHECK(rp.ra.at({r, a}) == m);
        }
}

TEST_CASE("tesseract file round trip is bitwise for f32 payloads") {
    RadarConfig cfg = RadarConfig::desk_default();
    cfg.noise_power = 0.2;
    SceneSpec scene;
    scene.seed = 31;
    scene.scatterers.push_back({{18, -1, 0.5}, {1.5, 0, 0}, 1.0});
    Tesseract t = preprocess(build_tesseract(simulate_adc(scene, cfg, 0), cfg));
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_tesseract(t, ss);
    Tesseract back = read_tesseract(ss);
    CHECK(back.power.shape() == t.power.shape());
    CHECK(back.grid.azimuth.res == t.grid.azimuth.res);
    CHECK(back.grid.doppler_res == t.grid.doppler_res);
    for (int64_t i = 0; i < t.power.size(); ++i)
        CHECK(float(back.power.data()[size_t(i)]) == float(t.power.data()[size_t(i)]));

    std::stringstream corrupt(std::ios::in | std::ios::out | std::ios::binary);
    corrupt << "garbage garbage garbage";
    CHECK_THROWS_AS(read_tesseract(corrupt), io::FormatError);

    // truncated payload
    std::stringstream ss2(std::ios::in | std::ios::out | std::ios::binary);
    write_tesseract(t, ss2);
    std::string full = ss2.str();
    std::stringstream trunc(full.substr(0, full.size() / 2),
                            std::ios::in | std::ios::binary);
    CHECK_THROWS_AS(read_tesseract(trunc), io::FormatError);
}

TEST_CASE("golden header: format is little-endian with fixed magic") {
    Tesseract t;
    t.power = ad::Tensor::full({1, 1, 1, 1}, 1.0);
    t.grid.range = {0, 1, 1};
    t.grid.azimuth = {0, 1, 1};
    t.grid.elevation = {0, 1, 1};
    t.grid.doppler_count = 1;
    t.grid.doppler_res = 1;
    t.grid.frame_interval = 0.1;
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    write_tesseract(t, ss);
    std::string bytes = ss.str();
    REQUIRE(bytes.size() == 16 + 16 + 64 + 4);
    CHECK(bytes.substr(0, 12) == "TESSFLOW.TES");
    CHECK(bytes[12] == 1); // version u32 LE
    CHECK(bytes[13] == 0);
    CHECK(bytes[16] == 1); // D extent u32 LE
    // payload 1.0f little-endian = 00 00 80 3f
    CHECK(static_cast<unsigned char>(bytes[96]) == 0x00);
    CHECK(static_cast<unsigned char>(bytes[97]) == 0x00);
    CHECK(static_cast<unsigned char>(bytes[98]) == 0x80);
    CHECK(static_cast<unsigned char>(bytes[99]) == 0x3f);
}
