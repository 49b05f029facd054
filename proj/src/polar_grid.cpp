#include "tessflow/polar_grid.hpp"

namespace tessflow {

ad::Tensor polar_volume(const PolarGrid& g) {
    const int64_t R = g.R(), A = g.A(), E = g.E(), N = R * A * E;
    std::vector<double> d(static_cast<size_t>(3 * N));
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                const int64_t i = (r * A + a) * E + e;
                d[static_cast<size_t>(i)] = g.range.value(r);
                d[static_cast<size_t>(N + i)] = g.azimuth.value(a) * kDegToRad;
                d[static_cast<size_t>(2 * N + i)] = g.elevation.value(e) * kDegToRad;
            }
    return ad::Tensor({3, R, A, E}, std::move(d));
}

ad::Tensor cartesian_volume(const PolarGrid& g) {
    const int64_t R = g.R(), A = g.A(), E = g.E(), N = R * A * E;
    std::vector<double> d(static_cast<size_t>(3 * N));
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                const int64_t i = (r * A + a) * E + e;
                const auto p = voxel_center(g, r, a, e);
                d[static_cast<size_t>(i)] = p[0];
                d[static_cast<size_t>(N + i)] = p[1];
                d[static_cast<size_t>(2 * N + i)] = p[2];
            }
    return ad::Tensor({3, R, A, E}, std::move(d));
}

ad::Tensor direction_volume(const PolarGrid& g) {
    const int64_t R = g.R(), A = g.A(), E = g.E(), N = R * A * E;
    std::vector<double> d(static_cast<size_t>(3 * N));
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                const int64_t i = (r * A + a) * E + e;
                const auto u = spherical_to_cart(1.0, g.azimuth.value(a), g.elevation.value(e));
                d[static_cast<size_t>(i)] = u[0];
                d[static_cast<size_t>(N + i)] = u[1];
                d[static_cast<size_t>(2 * N + i)] = u[2];
            }
    return ad::Tensor({3, R, A, E}, std::move(d));
}

} // namespace tessflow
