#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sigprint/volume.hpp"

namespace sigprint {

struct ScaleSpaceParams {
    double base_sigma = 1.6;      // blur of the first level, in voxels
    int scales_per_octave = 3;    // s; kappa = 2^(1/s)
    int num_octaves = 0;          // 0 = auto (smallest octave dim >= 8)
    double contrast_threshold = 0.02;   // fraction of the robust intensity range
    double edge_ratio_threshold = 10.0; // max |eigenvalue| spread of the DoG Hessian

    double kappa() const { return std::pow(2.0, 1.0 / scales_per_octave); }
    /// Sigma of Gaussian level k within an octave, in that octave's voxels.
    double level_sigma(int level) const {
        return base_sigma * std::pow(kappa(), level);
    }
};

struct Octave {
    std::uint32_t downsample = 1;     // 2^octave_index
    std::vector<Volume> levels;       // scales_per_octave + 3 Gaussian levels
};

struct ScaleSpace {
    std::vector<Octave> octaves;
    ScaleSpaceParams params;
    double robust_range = 0.0;        // 1st..99th percentile span of the input
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

struct DogOctave {
    std::uint32_t downsample = 1;
    std::vector<Volume> levels;       // scales_per_octave + 2 DoG levels
};

struct DogStack {
    std::vector<DogOctave> octaves;
    ScaleSpaceParams params;
    double robust_range = 0.0;
};

struct Keypoint {
    std::array<double, 3> location{};  // base-grid voxel coordinates, continuous
    double sigma = 0.0;                // scale in base-grid voxels
    double dog_value = 0.0;            // signed DoG response at the refined extremum
    std::uint16_t octave_index = 0;
    std::uint16_t level_index = 0;     // interior DoG level (1..s)
};

/// Separable Gaussian blur with edge-replication padding.
Volume gaussian_blur(const Volume& v, double sigma, int threads = 1);

/// 1st..99th percentile span of the intensities.
double robust_intensity_range(const Volume& v);

ScaleSpace build_scale_space(const Volume& v, const ScaleSpaceParams& params,
                             int threads = 1);
DogStack compute_dog(const ScaleSpace& ss);
std::vector<Keypoint> detect_extrema(const DogStack& dog,
                                     const ScaleSpaceParams& params);
std::vector<Keypoint> reject_unstable(const std::vector<Keypoint>& candidates,
                                      const DogStack& dog,
                                      const ScaleSpaceParams& params);

} // namespace sigprint
