#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "tessflow/polar_grid.hpp"
#include "tessflow/radar_sim.hpp"

namespace tessflow::tess {

// 4D radar power volume over (Doppler, range, azimuth, elevation).
// Power is linear squared magnitude; dB only appears in reports.
struct Tesseract {
    ad::Tensor power; // [D,R,A,E], finite and >= 0
    PolarGrid grid;
    int64_t frame_id = 0;

    int64_t D() const { return power.extent(0); }
    int64_t R() const { return power.extent(1); }
    int64_t A() const { return power.extent(2); }
    int64_t E() const { return power.extent(3); }
};

// FFT chain: fast time -> range, slow time -> Doppler (center shifted), and
// the two factored virtual-array axes -> azimuth/elevation (center shifted).
// Output is squared magnitude with the raw grid attached.
Tesseract build_tesseract(const sim::AdcCube& adc, const sim::RadarConfig& cfg);

struct PreprocessSpec {
    int64_t azimuth_out = 0;
    int64_t elevation_out = 0;

    static PreprocessSpec paper() { return {48, 32}; } // 64x256x107x37 -> 64x128x48x32
    static PreprocessSpec desk() { return {12, 8} ; }  // 16x64x28x10  -> 16x32x12x8
};

// Range truncated to the first half, azimuth symmetrically clipped to
// 2*azimuth_out then pairwise averaged, elevation symmetrically clipped,
// Doppler untouched. Grid metadata is updated to match.
Tesseract preprocess(const Tesseract& t, const PreprocessSpec& spec);
// Preset selection by raw extents (107x37 -> paper, 28x10 -> desk).
Tesseract preprocess(const Tesseract& t);

struct PlaneProjections {
    ad::Tensor ra; // [R,A]
    ad::Tensor re; // [R,E]
    ad::Tensor ae; // [A,E]
};

// Maximum over the collapsed axes (Doppler always collapsed).
PlaneProjections project_planes(const Tesseract& t);

// ---- volume container format (also used for masks, flows, outputs) ----
void write_tesseract(const Tesseract& t, std::ostream& os);
Tesseract read_tesseract(std::istream& is);
void save_tesseract(const Tesseract& t, const std::string& path);
Tesseract load_tesseract(const std::string& path);

} // namespace tessflow::tess
