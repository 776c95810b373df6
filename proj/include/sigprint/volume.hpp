#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sigprint/errors.hpp"

namespace sigprint {

/// 3D scalar grid, row-major with x fastest. Immutable by convention
/// after construction; all operations below return new volumes.
struct Volume {
    std::array<std::uint32_t, 3> dims{0, 0, 0};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::array<double, 3> origin{0.0, 0.0, 0.0};
    std::vector<float> data;

    std::size_t size() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }
    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return data[index(x, y, z)];
    }
    float& at(std::uint32_t x, std::uint32_t y, std::uint32_t z) {
        return data[index(x, y, z)];
    }
    double mean_spacing() const {
        return (spacing[0] + spacing[1] + spacing[2]) / 3.0;
    }

    /// Trilinear sample at continuous voxel coordinates; 0 outside.
    float sample(double x, double y, double z) const;

    /// FNV-1a hash over dims, spacing, origin and raw data bytes.
    std::uint64_t checksum() const;
};

/// Rigid transform plus isotropic scaling, acting on physical (mm)
/// coordinates: p' = scale * R * p + translation.
struct SimilarityTransform {
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1}; // row-major
    double scale = 1.0;
    std::array<double, 3> translation{0.0, 0.0, 0.0};

    /// Throws if the rotation is not orthonormal with det +1 or scale <= 0.
    void validate() const;
    SimilarityTransform inverse() const;
    std::array<double, 3> apply(const std::array<double, 3>& p) const;
};

/// Rotation by angle (radians) about a unit axis (Rodrigues).
std::array<double, 9> rotation_about_axis(const std::array<double, 3>& axis,
                                          double angle);

/// Transform that rotates/scales about the physical center of the volume
/// and then translates. Keeps resampled content inside the grid.
SimilarityTransform similarity_about_center(const Volume& v,
                                            const std::array<double, 9>& rotation,
                                            double scale,
                                            const std::array<double, 3>& translation);

/// Parameters for the synthetic Gaussian-blob phantom generator.
struct PhantomSpec {
    std::uint64_t seed = 0;
    std::uint32_t num_blobs = 50;
    double blob_scale_min = 2.0;  // voxels, must be >= 1
    double blob_scale_max = 5.0;
    double intensity_lo = 0.5;
    double intensity_hi = 1.0;
    double noise_sigma = 0.0;
    std::array<std::uint32_t, 3> dims{48, 48, 48};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

enum class NanPolicy { Reject, ReplaceWithZero };

Volume load_volume(const std::string& path, NanPolicy policy = NanPolicy::Reject);
void save_volume(const Volume& v, const std::string& path);

Volume make_phantom(const PhantomSpec& spec);

/// Resample under the inverse mapping with trilinear interpolation;
/// out-of-domain voxels are 0. Output grid defaults to the input grid;
/// pass out_dims to change it (e.g. for upsampling).
Volume apply_transform(const Volume& v, const SimilarityTransform& t,
                       const std::array<std::uint32_t, 3>* out_dims = nullptr);

} // namespace sigprint
