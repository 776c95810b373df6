#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sigprint/scalespace.hpp"

namespace sigprint {

/// Local reference frame for a keypoint. Columns of `rotation` are the
/// patch axes expressed in volume coordinates (det +1).
struct Orientation {
    std::array<double, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1}; // row-major
    double peak_weight = 1.0; // relative histogram peak magnitude in [0,1]
};

/// Rank-ordered 64-element gradient histogram. Values are a permutation
/// of 0..63 (stable tie-break by index), so they always sum to 2016.
struct Descriptor {
    std::array<std::uint8_t, 64> values{};
    std::uint32_t keypoint_index = 0;
    std::uint8_t orientation_index = 0;
    std::array<float, 9> rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
};

struct Signature {
    std::string image_id;
    std::vector<Keypoint> keypoints;
    std::vector<Descriptor> descriptors;
    ScaleSpaceParams extraction_params;
    std::uint64_t source_checksum = 0;
};

using Patch = std::array<float, 11 * 11 * 11>;
using RawHistogram = std::array<double, 64>;

/// Dominant gradient orientations around a keypoint (at most 4). Empty
/// when the local gradient field is degenerate; such keypoints are dropped.
std::vector<Orientation> assign_orientations(const ScaleSpace& ss, const Keypoint& kp);

/// 11^3 patch over a cube of side 8*sigma in the orientation frame,
/// trilinearly sampled from the Gaussian level nearest kp.sigma.
Patch extract_patch(const ScaleSpace& ss, const Keypoint& kp, const Orientation& o);

/// 8 spatial octants x 8 gradient-sign octants, spatial-major.
RawHistogram encode_hog(const Patch& patch);

/// values[i] = #{j : raw[j] < raw[i] or (raw[j] == raw[i] and j < i)}.
std::array<std::uint8_t, 64> rank_order(const RawHistogram& raw);

Signature extract_signature(const Volume& volume, const ScaleSpaceParams& params,
                            const std::string& image_id = "", int threads = 1);

void save_signature(const Signature& sig, const std::string& path);
Signature load_signature(const std::string& path);

} // namespace sigprint
