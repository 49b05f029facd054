#include "tessflow/radar_sim.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "tessflow/io.hpp"
#include "tessflow/rng.hpp"

namespace tessflow::sim {

using json = nlohmann::ordered_json;

namespace {

Vec3 add3(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub3(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

Vec3 matvec(const std::array<std::array<double, 3>, 3>& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

Vec3 matvec_t(const std::array<std::array<double, 3>, 3>& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2]};
}

} // namespace

Vec3 RadarConfig::virtual_position(int64_t channel) const {
    const int64_t nrx = static_cast<int64_t>(rx_positions.size());
    const Vec3& t = tx_positions[static_cast<size_t>(channel / nrx)];
    const Vec3& r = rx_positions[static_cast<size_t>(channel % nrx)];
    return add3(t, r);
}

void RadarConfig::validate() const {
    if (bandwidth <= 0 || chirp_duration <= 0 || carrier_frequency <= 0)
        throw std::invalid_argument("radar config: frequencies/durations must be positive");
    if (num_chirps <= 0 || num_samples <= 0)
        throw std::invalid_argument("radar config: frame extents must be positive");
    if (num_channels() != azimuth_channels * elevation_channels)
        throw std::invalid_argument("radar config: |tx|*|rx| must factor as A_raw x E_raw");
    if (frame_interval <= 0) throw std::invalid_argument("radar config: frame_interval must be positive");
}

RadarConfig RadarConfig::desk_default() {
    RadarConfig cfg;
    cfg.carrier_frequency = 77e9;
    cfg.bandwidth = 150e6; // 1 m range bins
    cfg.num_samples = 64;
    cfg.num_chirps = 16;
    // Doppler resolution ~1 m/s: dv = lambda / (2 * Tc * D)
    cfg.chirp_duration = cfg.wavelength() / (2.0 * 1.0 * static_cast<double>(cfg.num_chirps));
    cfg.azimuth_channels = 28;
    cfg.elevation_channels = 10;
    const double half_wl = cfg.wavelength() / 2.0;
    for (int64_t i = 0; i < cfg.azimuth_channels; ++i)
        cfg.tx_positions.push_back({0.0, static_cast<double>(i) * half_wl, 0.0});
    for (int64_t j = 0; j < cfg.elevation_channels; ++j)
        cfg.rx_positions.push_back({0.0, 0.0, static_cast<double>(j) * half_wl});
    cfg.frame_interval = 0.1;
    cfg.noise_power = 0.0;
    return cfg;
}

PolarGrid RadarConfig::raw_grid() const {
    PolarGrid g;
    g.range = {0.0, range_resolution(), num_samples};
    // FFT angle bins are uniform in sin-space; the grid stores the matching
    // uniform-degree axis (exact at broadside, sub-bin error inside the
    // preprocessed field of view).
    const double az_res_deg = std::asin(2.0 / static_cast<double>(azimuth_channels)) / kDegToRad;
    const double el_res_deg = std::asin(2.0 / static_cast<double>(elevation_channels)) / kDegToRad;
    g.azimuth = {-az_res_deg * static_cast<double>(azimuth_channels / 2), az_res_deg, azimuth_channels};
    g.elevation = {-el_res_deg * static_cast<double>(elevation_channels / 2), el_res_deg, elevation_channels};
    g.doppler_count = num_chirps;
    g.doppler_res = doppler_resolution();
    g.frame_interval = frame_interval;
    return g;
}

bool EgoMotion::is_identity() const {
    return translation[0] == 0 && translation[1] == 0 && translation[2] == 0 &&
           rotation_deg[0] == 0 && rotation_deg[1] == 0 && rotation_deg[2] == 0;
}

std::array<std::array<double, 3>, 3> EgoMotion::rotation_matrix() const {
    const double r = rotation_deg[0] * kDegToRad;
    const double p = rotation_deg[1] * kDegToRad;
    const double y = rotation_deg[2] * kDegToRad;
    const double cr = std::cos(r), sr = std::sin(r);
    const double cp = std::cos(p), sp = std::sin(p);
    const double cy = std::cos(y), sy = std::sin(y);
    // Rz(yaw) * Ry(pitch) * Rx(roll)
    return {{{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
             {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
             {-sp, cp * sr, cp * cr}}};
}

AdcCube simulate_adc(const SceneSpec& scene, const RadarConfig& cfg, int64_t frame) {
    cfg.validate();
    const int64_t C = cfg.num_channels(), D = cfg.num_chirps, Ns = cfg.num_samples;
    AdcCube cube;
    cube.channels = C;
    cube.chirps = D;
    cube.samples = Ns;
    cube.data.assign(static_cast<size_t>(C * D * Ns), {0.0, 0.0});

    const double lambda = cfg.wavelength();
    const double dr = cfg.range_resolution();
    const double dv = cfg.doppler_resolution();

    std::vector<Scatterer> emitters = scene.scatterers;
    if (cfg.multipath_ghosts) {
        // ground-mirror ghosts: reflected path appears below the surface
        for (const Scatterer& s : scene.scatterers) {
            Scatterer ghost = s;
            ghost.position[2] = -ghost.position[2];
            ghost.velocity[2] = -ghost.velocity[2];
            ghost.reflectivity *= cfg.ghost_attenuation;
            emitters.push_back(ghost);
        }
    }

    std::vector<std::complex<double>> chan_phase(static_cast<size_t>(C));
    std::vector<std::complex<double>> chirp_phase(static_cast<size_t>(D));
    std::vector<std::complex<double>> samp_phase(static_cast<size_t>(Ns));

    for (const Scatterer& s : emitters) {
        const double r = norm3(s.position);
        if (r <= 0.0) throw std::invalid_argument("simulate_adc: scatterer at the origin");
        const Vec3 u = scale3(s.position, 1.0 / r);
        const double v_radial = dot3(s.velocity, u);
        if (r >= cfg.max_range())
            throw std::invalid_argument("simulate_adc: scatterer beyond unambiguous range");
        if (std::fabs(v_radial) >= cfg.max_unambiguous_velocity())
            throw std::invalid_argument("simulate_adc: radial velocity beyond unambiguous window");

        // beat phase separates per axis: range over fast time, Doppler over
        // slow time, array steering over channel
        const double range_step = 2.0 * M_PI * (r / dr) / static_cast<double>(Ns);
        const double doppler_step = 2.0 * M_PI * (v_radial / dv) / static_cast<double>(D);
        const double static_phase = 4.0 * M_PI * r / lambda;
        for (int64_t n = 0; n < Ns; ++n)
            samp_phase[static_cast<size_t>(n)] = std::polar(1.0, range_step * static_cast<double>(n));
        for (int64_t m = 0; m < D; ++m)
            chirp_phase[static_cast<size_t>(m)] =
                std::polar(1.0, static_phase + doppler_step * static_cast<double>(m));
        for (int64_t c = 0; c < C; ++c)
            chan_phase[static_cast<size_t>(c)] =
                std::polar(s.reflectivity, 2.0 * M_PI * dot3(cfg.virtual_position(c), u) / lambda);

        for (int64_t c = 0; c < C; ++c) {
            const std::complex<double> pc = chan_phase[static_cast<size_t>(c)];
            for (int64_t m = 0; m < D; ++m) {
                const std::complex<double> pcm = pc * chirp_phase[static_cast<size_t>(m)];
                std::complex<double>* row = cube.data.data() + (c * D + m) * Ns;
                for (int64_t n = 0; n < Ns; ++n) row[n] += pcm * samp_phase[static_cast<size_t>(n)];
            }
        }
    }

    if (cfg.noise_power > 0.0) {
        Rng rng(derive_seed(scene.seed, 0xADC0ULL + static_cast<uint64_t>(frame)));
        const double sigma = std::sqrt(cfg.noise_power / 2.0);
        for (auto& v : cube.data) v += std::complex<double>(rng.normal(0, sigma), rng.normal(0, sigma));
    }
    return cube;
}

SceneSpec advance_scene(const SceneSpec& scene, double dt) {
    SceneSpec out = scene;
    if (dt == 0.0) return out;
    const auto rot = scene.rigid_ego_motion.rotation_matrix();
    const Vec3& t = scene.rigid_ego_motion.translation;
    for (Scatterer& s : out.scatterers) {
        Vec3 moved = add3(s.position, scale3(s.velocity, dt));
        s.position = matvec_t(rot, sub3(moved, t)); // re-express in the new radar frame
        s.velocity = matvec_t(rot, s.velocity);
    }
    return out;
}

std::vector<Vec3> cluster_points(const SceneSpec& scene, size_t scatterer_index) {
    constexpr int kPointsPerScatterer = 5;
    constexpr double kJitterSigma = 0.1;
    Rng rng(derive_seed(scene.seed, 0xC1A5ULL + static_cast<uint64_t>(scatterer_index)));
    std::vector<Vec3> pts;
    pts.reserve(kPointsPerScatterer);
    const Vec3& p = scene.scatterers[scatterer_index].position;
    for (int k = 0; k < kPointsPerScatterer; ++k) {
        Vec3 q{p[0] + rng.normal(0, kJitterSigma), p[1] + rng.normal(0, kJitterSigma),
               p[2] + rng.normal(0, kJitterSigma)};
        pts.push_back(q);
    }
    return pts;
}

GroundTruth ground_truth(const SceneSpec& src, const SceneSpec& tgt, const PolarGrid& grid) {
    if (src.scatterers.size() != tgt.scatterers.size())
        throw std::invalid_argument("ground_truth: scenes must share scatterer identity");
    const int64_t R = grid.R(), A = grid.A(), E = grid.E();
    GroundTruth gt;
    gt.occupancy = ad::Tensor::zeros({R, A, E});
    gt.flow = ad::Tensor::zeros({3, R, A, E});

    for (size_t i = 0; i < src.scatterers.size(); ++i) {
        auto pts = cluster_points(src, i);
        gt.gt_points.insert(gt.gt_points.end(), pts.begin(), pts.end());
    }

    constexpr double kNeighborhood = 0.5;
    auto& occ = gt.occupancy.raw_data();
    auto& flow = gt.flow.raw_data();
    const int64_t vox = R * A * E;
    for (int64_t r = 0; r < R; ++r)
        for (int64_t a = 0; a < A; ++a)
            for (int64_t e = 0; e < E; ++e) {
                const Vec3 center = voxel_center(grid, r, a, e);
                int near = 0;
                for (const Vec3& q : gt.gt_points) {
                    if (norm3(sub3(q, center)) <= kNeighborhood && ++near >= 3) break;
                }
                if (near < 3) continue;
                const int64_t vi = (r * A + a) * E + e;
                occ[static_cast<size_t>(vi)] = 1.0;

                // owner: nearest scatterer in the source frame
                size_t owner = 0;
                double best = std::numeric_limits<double>::infinity();
                for (size_t i = 0; i < src.scatterers.size(); ++i) {
                    double d = norm3(sub3(src.scatterers[i].position, center));
                    if (d < best) {
                        best = d;
                        owner = i;
                    }
                }
                const auto s0 = cart_to_spherical(src.scatterers[owner].position);
                const auto s1 = cart_to_spherical(tgt.scatterers[owner].position);
                flow[static_cast<size_t>(vi)] = (s1[0] - s0[0]) / grid.range.res;
                flow[static_cast<size_t>(vox + vi)] = (s1[1] - s0[1]) / grid.azimuth.res;
                flow[static_cast<size_t>(2 * vox + vi)] = (s1[2] - s0[2]) / grid.elevation.res;
            }
    return gt;
}

// ------------------------------------------------------------ serialization

std::string scene_to_json(const SceneSpec& scene) {
    json j;
    j["seed"] = scene.seed;
    j["ego_motion"] = {{"translation", scene.rigid_ego_motion.translation},
                       {"rotation_deg", scene.rigid_ego_motion.rotation_deg}};
    j["scatterers"] = json::array();
    for (const auto& s : scene.scatterers)
        j["scatterers"].push_back(
            {{"position", s.position}, {"velocity", s.velocity}, {"reflectivity", s.reflectivity}});
    return j.dump(2);
}

SceneSpec scene_from_json(const std::string& text) {
    json j = json::parse(text);
    SceneSpec scene;
    scene.seed = j.at("seed").get<uint64_t>();
    const auto& ego = j.at("ego_motion");
    scene.rigid_ego_motion.translation = ego.at("translation").get<Vec3>();
    scene.rigid_ego_motion.rotation_deg = ego.at("rotation_deg").get<Vec3>();
    for (const auto& js : j.at("scatterers")) {
        Scatterer s;
        s.position = js.at("position").get<Vec3>();
        s.velocity = js.at("velocity").get<Vec3>();
        s.reflectivity = js.at("reflectivity").get<double>();
        scene.scatterers.push_back(s);
    }
    return scene;
}

void save_scene(const SceneSpec& scene, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    os << scene_to_json(scene) << "\n";
}

SceneSpec load_scene(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return scene_from_json(ss.str());
}

static const char kAdcMagic[12] = {'T', 'E', 'S', 'S', 'F', 'L', 'O', 'W', '.', 'A', 'D', 'C'};

void write_adc(const AdcCube& cube, std::ostream& os) {
    io::write_magic(os, kAdcMagic, 1);
    io::write_u32(os, static_cast<uint32_t>(cube.channels));
    io::write_u32(os, static_cast<uint32_t>(cube.chirps));
    io::write_u32(os, static_cast<uint32_t>(cube.samples));
    for (const auto& v : cube.data) {
        io::write_f32(os, static_cast<float>(v.real()));
        io::write_f32(os, static_cast<float>(v.imag()));
    }
}

AdcCube read_adc(std::istream& is) {
    uint32_t version = io::read_magic(is, kAdcMagic);
    if (version != 1) throw io::FormatError("unsupported ADC format version");
    AdcCube cube;
    cube.channels = io::read_u32(is);
    cube.chirps = io::read_u32(is);
    cube.samples = io::read_u32(is);
    const int64_t n = cube.channels * cube.chirps * cube.samples;
    cube.data.resize(static_cast<size_t>(n));
    for (auto& v : cube.data) {
        double re = io::read_f32(is);
        double im = io::read_f32(is);
        v = {re, im};
    }
    return cube;
}

void save_adc(const AdcCube& cube, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_adc(cube, os);
}

AdcCube load_adc(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_adc(is);
}

} // namespace tessflow::sim
