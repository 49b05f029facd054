#pragma once

#include <cstdint>

#include "tessflow/tesseract.hpp"

namespace tessflow::cfar {

struct CfarConfig {
    int64_t num_background = 4; // background cells per side
    int64_t num_guard = 1;      // guard cells per side
    double pfa = 1e-6;
    int64_t rank = 0; // k-th ordered statistic (1-based); 0 = ceil(0.75*N)

    int64_t total_background() const { return 2 * num_background; }
    int64_t effective_rank() const;
    void validate() const;
};

// Scaling factor alpha solving Pfa = prod_{i=0}^{k-1} (N-i)/(N-i+alpha)
// for exponentially distributed background cells, bisected to 1e-12 relative.
double os_cfar_threshold_factor(const CfarConfig& cfg);

// direct evaluation of the false-alarm product formula at a given alpha
double os_cfar_pfa(const CfarConfig& cfg, double alpha);

// 1-D OS-CFAR along range per (azimuth, elevation) column of a
// Doppler-collapsed power volume [R,A,E]. Border cells use the truncated
// available window with the rank rescaled proportionally.
ad::Tensor os_cfar_detect(const ad::Tensor& power, const CfarConfig& cfg);

// max over Doppler: tesseract [D,R,A,E] -> [R,A,E]
ad::Tensor doppler_max_pool(const tess::Tesseract& t);

} // namespace tessflow::cfar
