#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tessflow/polar_grid.hpp"

namespace tessflow::sim {

using Vec3 = std::array<double, 3>;

struct RadarConfig {
    double carrier_frequency = 77e9; // Hz
    double bandwidth = 0.0;          // Hz
    double chirp_duration = 0.0;     // s
    int64_t num_chirps = 0;          // slow-time extent (source of D)
    int64_t num_samples = 0;         // fast-time extent (source of R)
    std::vector<Vec3> tx_positions;  // meters, radar frame
    std::vector<Vec3> rx_positions;
    int64_t azimuth_channels = 0;   // virtual-array azimuth factor A_raw
    int64_t elevation_channels = 0; // virtual-array elevation factor E_raw
    double frame_interval = 0.0;    // s between consecutive frames
    double noise_power = 0.0;       // linear, per complex sample
    bool multipath_ghosts = false;  // inject ground-mirrored ghost scatterers
    double ghost_attenuation = 0.2;

    double wavelength() const { return kSpeedOfLight / carrier_frequency; }
    double range_resolution() const { return kSpeedOfLight / (2.0 * bandwidth); }
    double max_range() const { return range_resolution() * static_cast<double>(num_samples); }
    double doppler_resolution() const {
        return wavelength() / (2.0 * chirp_duration * static_cast<double>(num_chirps));
    }
    double max_unambiguous_velocity() const { return wavelength() / (4.0 * chirp_duration); }
    int64_t num_channels() const {
        return static_cast<int64_t>(tx_positions.size() * rx_positions.size());
    }
    // virtual element position for channel c = i_tx * |rx| + i_rx
    Vec3 virtual_position(int64_t channel) const;
    void validate() const;

    // 28x10 virtual array at half-wavelength spacing, desk-scale frame sizes
    // (D=16 chirps, 64 fast-time samples), ~1 m/s Doppler resolution.
    static RadarConfig desk_default();

    // raw (unpreprocessed) grid implied by this configuration
    PolarGrid raw_grid() const;
};

struct Scatterer {
    Vec3 position;    // meters, radar frame
    Vec3 velocity;    // m/s, radar frame
    double reflectivity = 1.0; // linear amplitude
};

struct EgoMotion {
    Vec3 translation = {0, 0, 0};   // new radar origin in the old frame
    Vec3 rotation_deg = {0, 0, 0};  // roll, pitch, yaw applied as Rz(yaw)Ry(pitch)Rx(roll)

    bool is_identity() const;
    std::array<std::array<double, 3>, 3> rotation_matrix() const;
};

struct SceneSpec {
    std::vector<Scatterer> scatterers;
    EgoMotion rigid_ego_motion; // radar pose delta applied per frame step
    uint64_t seed = 0;
};

struct AdcCube {
    int64_t channels = 0, chirps = 0, samples = 0;
    std::vector<std::complex<double>> data; // [channel][chirp][sample]

    std::complex<double>& at(int64_t c, int64_t m, int64_t n) {
        return data[static_cast<size_t>((c * chirps + m) * samples + n)];
    }
    std::complex<double> at(int64_t c, int64_t m, int64_t n) const {
        return data[static_cast<size_t>((c * chirps + m) * samples + n)];
    }
};

// Sum of per-scatterer complex exponentials (stop-and-go FMCW beat model)
// plus circular complex Gaussian noise. Deterministic in (scene, cfg, frame).
// Positive Doppler means receding (radial velocity away from the radar).
AdcCube simulate_adc(const SceneSpec& scene, const RadarConfig& cfg, int64_t frame);

// Translates scatterers by velocity*dt, then re-expresses everything in the
// frame moved by the scene's ego delta (applied whenever dt != 0).
SceneSpec advance_scene(const SceneSpec& scene, double dt);

struct GroundTruth {
    ad::Tensor occupancy;           // [R,A,E], 0/1
    ad::Tensor flow;                // [3,R,A,E], (range,azimuth,elevation) bin units
    std::vector<Vec3> gt_points;    // source-frame synthetic points
};

// Occupancy: >= 3 cluster points within 0.5 m of the voxel center (each
// scatterer emits 5 seeded jittered points, sigma 0.1 m). Flow at occupied
// voxels is the owning (nearest) scatterer's displacement in bin units.
GroundTruth ground_truth(const SceneSpec& src, const SceneSpec& tgt, const PolarGrid& grid);

// per-scatterer cluster points used by the occupancy rule
std::vector<Vec3> cluster_points(const SceneSpec& scene, size_t scatterer_index);

// ---- serialization (External Interfaces) ----
std::string scene_to_json(const SceneSpec& scene);
SceneSpec scene_from_json(const std::string& text);
void save_scene(const SceneSpec& scene, const std::string& path);
SceneSpec load_scene(const std::string& path);

void write_adc(const AdcCube& cube, std::ostream& os);
AdcCube read_adc(std::istream& is);
void save_adc(const AdcCube& cube, const std::string& path);
AdcCube load_adc(const std::string& path);

} // namespace tessflow::sim
