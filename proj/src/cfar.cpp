#include "tessflow/cfar.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace tessflow::cfar {

int64_t CfarConfig::effective_rank() const {
    if (rank > 0) return rank;
    return static_cast<int64_t>(std::ceil(0.75 * static_cast<double>(total_background())));
}

void CfarConfig::validate() const {
    if (!(pfa > 0.0 && pfa < 1.0)) throw std::invalid_argument("cfar: pfa must lie in (0,1)");
    if (num_background < 1 || num_guard < 0) throw std::invalid_argument("cfar: bad window sizes");
    if (effective_rank() < 1 || effective_rank() > total_background())
        throw std::invalid_argument("cfar: rank must lie in [1, N]");
}

double os_cfar_pfa(const CfarConfig& cfg, double alpha) {
    const int64_t N = cfg.total_background();
    const int64_t k = cfg.effective_rank();
    double p = 1.0;
    for (int64_t i = 0; i < k; ++i) {
        const double ni = static_cast<double>(N - i);
        p *= ni / (ni + alpha);
    }
    return p;
}

double os_cfar_threshold_factor(const CfarConfig& cfg) {
    cfg.validate();
    double lo = 0.0, hi = 1e6;
    if (os_cfar_pfa(cfg, hi) > cfg.pfa)
        throw std::runtime_error("os_cfar_threshold_factor: no root in (0, 1e6)");
    // pfa(alpha) is strictly decreasing: pfa(0)=1 > target
    while (hi - lo > 1e-12 * std::max(1.0, hi)) {
        const double mid = 0.5 * (lo + hi);
        if (os_cfar_pfa(cfg, mid) > cfg.pfa)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

ad::Tensor os_cfar_detect(const ad::Tensor& power, const CfarConfig& cfg) {
    if (power.rank() != 3) throw std::invalid_argument("os_cfar_detect: power must be [R,A,E]");
    const double alpha = os_cfar_threshold_factor(cfg);
    const int64_t R = power.extent(0), A = power.extent(1), E = power.extent(2);
    const int64_t B = cfg.num_background, G = cfg.num_guard;
    const int64_t N_full = cfg.total_background();
    const int64_t k_full = cfg.effective_rank();

    ad::Tensor mask = ad::Tensor::zeros({R, A, E});
    auto& md = mask.raw_data();
    const auto& pd = power.data();
    std::vector<double> window;
    window.reserve(static_cast<size_t>(N_full));
    for (int64_t a = 0; a < A; ++a)
        for (int64_t e = 0; e < E; ++e) {
            for (int64_t r = 0; r < R; ++r) {
                window.clear();
                for (int64_t i = r - G - B; i <= r - G - 1; ++i)
                    if (i >= 0 && i < R) window.push_back(pd[static_cast<size_t>((i * A + a) * E + e)]);
                for (int64_t i = r + G + 1; i <= r + G + B; ++i)
                    if (i >= 0 && i < R) window.push_back(pd[static_cast<size_t>((i * A + a) * E + e)]);
                const int64_t n_avail = static_cast<int64_t>(window.size());
                if (n_avail == 0) continue;
                int64_t k = std::llround(static_cast<double>(k_full) * static_cast<double>(n_avail) /
                                         static_cast<double>(N_full));
                k = std::max<int64_t>(1, std::min(k, n_avail));
                std::nth_element(window.begin(), window.begin() + (k - 1), window.end());
                const double stat = window[static_cast<size_t>(k - 1)];
                const double cell = pd[static_cast<size_t>((r * A + a) * E + e)];
                if (cell > alpha * stat) md[static_cast<size_t>((r * A + a) * E + e)] = 1.0;
            }
        }
    return mask;
}

ad::Tensor doppler_max_pool(const tess::Tesseract& t) {
    const int64_t D = t.D(), R = t.R(), A = t.A(), E = t.E();
    ad::Tensor out = ad::Tensor::zeros({R, A, E});
    auto& od = out.raw_data();
    const auto& pd = t.power.data();
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                double m = pd[static_cast<size_t>(((0 * R + r) * A + a) * E + e)];
                for (int64_t d = 1; d < D; ++d)
                    m = std::max(m, pd[static_cast<size_t>(((d * R + r) * A + a) * E + e)]);
                od[static_cast<size_t>((r * A + a) * E + e)] = m;
            }
    return out;
}

} // namespace tessflow::cfar
