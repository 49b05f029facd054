#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tessflow/tensor.hpp"

namespace tessflow {

constexpr double kSpeedOfLight = 299792458.0;
constexpr double kDegToRad = M_PI / 180.0;

struct AxisSpec {
    double min = 0.0; // value of bin 0 center
    double res = 1.0; // value step per bin
    int64_t count = 0;

    double value(int64_t bin) const { return min + res * static_cast<double>(bin); }
    double to_bin(double v) const { return (v - min) / res; }
    double max() const { return value(count - 1); }
};

// Polar measurement grid of a (possibly preprocessed) tesseract.
// Angles are stored in degrees; Doppler bins map to radial velocity in m/s
// with bin D/2 at zero after the FFT shift.
struct PolarGrid {
    AxisSpec range;     // meters
    AxisSpec azimuth;   // degrees
    AxisSpec elevation; // degrees
    int64_t doppler_count = 0;
    double doppler_res = 0.0;    // m/s per Doppler bin
    double frame_interval = 0.0; // seconds between frames

    int64_t R() const { return range.count; }
    int64_t A() const { return azimuth.count; }
    int64_t E() const { return elevation.count; }
    int64_t D() const { return doppler_count; }

    double doppler_velocity(int64_t bin) const {
        return (static_cast<double>(bin) - static_cast<double>(doppler_count / 2)) * doppler_res;
    }
    std::vector<double> doppler_axis() const {
        std::vector<double> ax(static_cast<size_t>(doppler_count));
        for (int64_t d = 0; d < doppler_count; ++d) ax[static_cast<size_t>(d)] = doppler_velocity(d);
        return ax;
    }
};

// boresight is +x, azimuth rotates toward +y, elevation toward +z
inline std::array<double, 3> spherical_to_cart(double r, double az_deg, double el_deg) {
    const double a = az_deg * kDegToRad, e = el_deg * kDegToRad;
    return {r * std::cos(e) * std::cos(a), r * std::cos(e) * std::sin(a), r * std::sin(e)};
}

inline std::array<double, 3> cart_to_spherical(const std::array<double, 3>& p) {
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    const double az = std::atan2(p[1], p[0]) / kDegToRad;
    const double el = r > 0.0 ? std::asin(p[2] / r) / kDegToRad : 0.0;
    return {r, az, el};
}

inline std::array<double, 3> voxel_center(const PolarGrid& g, int64_t r, int64_t a, int64_t e) {
    return spherical_to_cart(g.range.value(r), g.azimuth.value(a), g.elevation.value(e));
}

// [3,R,A,E] with (range m, azimuth rad, elevation rad) per voxel
ad::Tensor polar_volume(const PolarGrid& g);
// [3,R,A,E] Cartesian voxel centers in meters
ad::Tensor cartesian_volume(const PolarGrid& g);
// [3,R,A,E] unit line-of-sight direction per voxel
ad::Tensor direction_volume(const PolarGrid& g);

} // namespace tessflow
