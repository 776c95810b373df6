#include "sigprint/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sigprint/parallel.hpp"

namespace sigprint {

namespace {

// Face centers of a regular icosahedron (= dodecahedron vertices),
// normalized. 20 bins for the spherical gradient-direction histogram.
const std::array<std::array<double, 3>, 20>& icosa_faces() {
    static const std::array<std::array<double, 3>, 20> faces = [] {
        const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
        const double inv = 1.0 / phi;
        std::array<std::array<double, 3>, 20> f{{
            {1, 1, 1},   {1, 1, -1},   {1, -1, 1},   {1, -1, -1},
            {-1, 1, 1},  {-1, 1, -1},  {-1, -1, 1},  {-1, -1, -1},
            {0, inv, phi},  {0, inv, -phi},  {0, -inv, phi},  {0, -inv, -phi},
            {inv, phi, 0},  {inv, -phi, 0},  {-inv, phi, 0},  {-inv, -phi, 0},
            {phi, 0, inv},  {phi, 0, -inv},  {-phi, 0, inv},  {-phi, 0, -inv},
        }};
        for (auto& v : f) {
            const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
            for (double& c : v) c /= n;
        }
        return f;
    }();
    return faces;
}

std::array<double, 3> normalized(const std::array<double, 3>& v, double* norm_out = nullptr) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (norm_out) *norm_out = n;
    if (n < 1e-300) return {0, 0, 0};
    return {v[0] / n, v[1] / n, v[2] / n};
}

std::array<double, 3> cross(const std::array<double, 3>& a,
                            const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]};
}

double dot(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

// Gaussian level within the keypoint's octave whose sigma is nearest
// kp.sigma, plus the keypoint position in that octave's grid.
struct LevelRef {
    const Volume* level;
    double sigma_oct;
    std::array<double, 3> center;
};

LevelRef locate(const ScaleSpace& ss, const Keypoint& kp) {
    const Octave& oct = ss.octaves[kp.octave_index];
    const double ds = oct.downsample;
    const double sigma_oct = kp.sigma / ds;
    const double kappa = ss.params.kappa();
    int level = static_cast<int>(
        std::lround(std::log(sigma_oct / ss.params.base_sigma) / std::log(kappa)));
    level = std::clamp(level, 0, static_cast<int>(oct.levels.size()) - 1);
    return {&oct.levels[static_cast<std::size_t>(level)], sigma_oct,
            {kp.location[0] / ds, kp.location[1] / ds, kp.location[2] / ds}};
}

} // namespace

std::vector<Orientation> assign_orientations(const ScaleSpace& ss, const Keypoint& kp) {
    const LevelRef ref = locate(ss, kp);
    const Volume& vol = *ref.level;
    const double radius = 3.0 * ref.sigma_oct;
    const double window_var = 2.0 * (1.5 * ref.sigma_oct) * (1.5 * ref.sigma_oct);
    const auto& faces = icosa_faces();

    std::array<double, 20> hist{};
    struct GradSample {
        std::array<double, 3> dir;
        double weight;
    };
    std::vector<GradSample> samples;

    const std::int64_t x0 = std::max<std::int64_t>(1, std::llround(ref.center[0] - radius));
    const std::int64_t x1 = std::min<std::int64_t>(vol.dims[0] - 2, std::llround(ref.center[0] + radius));
    const std::int64_t y0 = std::max<std::int64_t>(1, std::llround(ref.center[1] - radius));
    const std::int64_t y1 = std::min<std::int64_t>(vol.dims[1] - 2, std::llround(ref.center[1] + radius));
    const std::int64_t z0 = std::max<std::int64_t>(1, std::llround(ref.center[2] - radius));
    const std::int64_t z1 = std::min<std::int64_t>(vol.dims[2] - 2, std::llround(ref.center[2] + radius));

    for (std::int64_t z = z0; z <= z1; ++z)
        for (std::int64_t y = y0; y <= y1; ++y)
            for (std::int64_t x = x0; x <= x1; ++x) {
                const double dx = x - ref.center[0];
                const double dy = y - ref.center[1];
                const double dz = z - ref.center[2];
                const double r2 = dx * dx + dy * dy + dz * dz;
                if (r2 > radius * radius) continue;
                auto ux = static_cast<std::uint32_t>(x);
                auto uy = static_cast<std::uint32_t>(y);
                auto uz = static_cast<std::uint32_t>(z);
                const std::array<double, 3> g = {
                    0.5 * (vol.at(ux + 1, uy, uz) - vol.at(ux - 1, uy, uz)),
                    0.5 * (vol.at(ux, uy + 1, uz) - vol.at(ux, uy - 1, uz)),
                    0.5 * (vol.at(ux, uy, uz + 1) - vol.at(ux, uy, uz - 1))};
                double mag;
                const std::array<double, 3> dir = normalized(g, &mag);
                if (mag < 1e-12) continue;
                const double w = mag * std::exp(-r2 / window_var);
                samples.push_back({dir, w});
                int best = 0;
                double best_dot = -2.0;
                for (int f = 0; f < 20; ++f) {
                    const double d = dot(dir, faces[f]);
                    if (d > best_dot) {
                        best_dot = d;
                        best = f;
                    }
                }
                hist[static_cast<std::size_t>(best)] += w;
            }

    const double max_w = *std::max_element(hist.begin(), hist.end());
    if (max_w < 1e-12) return {};  // degenerate gradient field

    std::vector<int> peaks;
    for (int f = 0; f < 20; ++f)
        if (hist[static_cast<std::size_t>(f)] >= 0.8 * max_w) peaks.push_back(f);
    std::sort(peaks.begin(), peaks.end(), [&](int a, int b) {
        if (hist[static_cast<std::size_t>(a)] != hist[static_cast<std::size_t>(b)])
            return hist[static_cast<std::size_t>(a)] > hist[static_cast<std::size_t>(b)];
        return a < b;
    });
    if (peaks.size() > 4) peaks.resize(4);

    std::vector<Orientation> out;
    for (int f : peaks) {
        // Primary axis: mean of gradient directions in a cone around the
        // peak face, re-centered once. Averaging over the cone instead of
        // the hard bin removes the face-boundary quantization noise.
        const double cone = std::cos(M_PI / 6.0);
        std::array<double, 3> primary = faces[static_cast<std::size_t>(f)];
        for (int pass = 0; pass < 2; ++pass) {
            std::array<double, 3> acc{};
            for (const GradSample& s : samples) {
                if (dot(s.dir, primary) < cone) continue;
                for (int i = 0; i < 3; ++i) acc[i] += s.weight * s.dir[i];
            }
            double n;
            const std::array<double, 3> mean = normalized(acc, &n);
            if (n < 1e-12) break;
            primary = mean;
        }

        // In-plane reference frame for the secondary-axis histogram,
        // anchored at the least-aligned coordinate axis (deterministic).
        int least = 0;
        double least_abs = std::abs(primary[0]);
        for (int i = 1; i < 3; ++i)
            if (std::abs(primary[i]) < least_abs) {
                least_abs = std::abs(primary[i]);
                least = i;
            }
        std::array<double, 3> e1{};
        e1[least] = 1.0;
        {
            const double p = dot(e1, primary);
            for (int i = 0; i < 3; ++i) e1[i] -= p * primary[i];
        }
        e1 = normalized(e1);
        const std::array<double, 3> e2 = cross(primary, e1);

        // Secondary axis: dominant direction of the gradients projected
        // onto the plane orthogonal to the primary, from a 36-bin angular
        // histogram weighted by the in-plane gradient magnitude.
        constexpr int kAngularBins = 36;
        std::array<double, kAngularBins> plane_hist{};
        std::array<std::array<double, 2>, kAngularBins> plane_vec{};
        for (const GradSample& s : samples) {
            const double u = dot(s.dir, e1);
            const double v = dot(s.dir, e2);
            const double in_plane = std::sqrt(u * u + v * v);
            if (in_plane < 1e-12) continue;
            const double w = s.weight * in_plane;
            double angle = std::atan2(v, u);
            if (angle < 0.0) angle += 2.0 * M_PI;
            int bin = static_cast<int>(angle / (2.0 * M_PI) * kAngularBins);
            if (bin >= kAngularBins) bin = kAngularBins - 1;
            plane_hist[static_cast<std::size_t>(bin)] += w;
            plane_vec[static_cast<std::size_t>(bin)][0] += w * (u / in_plane);
            plane_vec[static_cast<std::size_t>(bin)][1] += w * (v / in_plane);
        }
        int top = 0;
        for (int b = 1; b < kAngularBins; ++b)
            if (plane_hist[static_cast<std::size_t>(b)] >
                plane_hist[static_cast<std::size_t>(top)])
                top = b;

        std::array<double, 3> secondary;
        if (plane_hist[static_cast<std::size_t>(top)] < 1e-12) {
            secondary = e1; // isotropic in-plane field: deterministic fallback
        } else {
            // Vector mean over the top bin and its neighbors.
            double su = 0.0, sv = 0.0;
            for (int db = -1; db <= 1; ++db) {
                const int b = (top + db + kAngularBins) % kAngularBins;
                su += plane_vec[static_cast<std::size_t>(b)][0];
                sv += plane_vec[static_cast<std::size_t>(b)][1];
            }
            const double n = std::sqrt(su * su + sv * sv);
            if (n < 1e-12) {
                secondary = e1;
            } else {
                for (int i = 0; i < 3; ++i)
                    secondary[i] = (su * e1[i] + sv * e2[i]) / n;
            }
        }
        const std::array<double, 3> third = cross(primary, secondary);
        secondary = cross(third, primary);

        Orientation o;
        for (int i = 0; i < 3; ++i) {
            o.rotation[i * 3 + 0] = primary[i];
            o.rotation[i * 3 + 1] = secondary[i];
            o.rotation[i * 3 + 2] = third[i];
        }
        o.peak_weight = hist[static_cast<std::size_t>(f)] / max_w;
        out.push_back(o);
    }
    return out;
}

Patch extract_patch(const ScaleSpace& ss, const Keypoint& kp, const Orientation& o) {
    const LevelRef ref = locate(ss, kp);
    const double step = 8.0 * ref.sigma_oct / 10.0;
    Patch patch{};
    std::size_t idx = 0;
    for (int k = 0; k < 11; ++k)
        for (int j = 0; j < 11; ++j)
            for (int i = 0; i < 11; ++i, ++idx) {
                const double u = (i - 5) * step;
                const double v = (j - 5) * step;
                const double w = (k - 5) * step;
                const double px = ref.center[0] + o.rotation[0] * u +
                                  o.rotation[1] * v + o.rotation[2] * w;
                const double py = ref.center[1] + o.rotation[3] * u +
                                  o.rotation[4] * v + o.rotation[5] * w;
                const double pz = ref.center[2] + o.rotation[6] * u +
                                  o.rotation[7] * v + o.rotation[8] * w;
                patch[idx] = ref.level->sample(px, py, pz);
            }
    return patch;
}

RawHistogram encode_hog(const Patch& patch) {
    RawHistogram hist{};
    auto at = [&](int x, int y, int z) -> double {
        return patch[static_cast<std::size_t>((z * 11 + y) * 11 + x)];
    };
    for (int z = 1; z <= 9; ++z)
        for (int y = 1; y <= 9; ++y)
            for (int x = 1; x <= 9; ++x) {
                const double gx = 0.5 * (at(x + 1, y, z) - at(x - 1, y, z));
                const double gy = 0.5 * (at(x, y + 1, z) - at(x, y - 1, z));
                const double gz = 0.5 * (at(x, y, z + 1) - at(x, y, z - 1));
                const double mag = std::sqrt(gx * gx + gy * gy + gz * gz);
                if (mag == 0.0) continue;
                const int octant = 4 * (z >= 5) + 2 * (y >= 5) + (x >= 5);
                const int orient = 4 * (gz >= 0) + 2 * (gy >= 0) + (gx >= 0);
                hist[static_cast<std::size_t>(octant * 8 + orient)] += mag;
            }
    return hist;
}

std::array<std::uint8_t, 64> rank_order(const RawHistogram& raw) {
    std::array<std::uint8_t, 64> ranks{};
    for (int i = 0; i < 64; ++i) {
        int r = 0;
        for (int j = 0; j < 64; ++j)
            if (raw[static_cast<std::size_t>(j)] < raw[static_cast<std::size_t>(i)] ||
                (raw[static_cast<std::size_t>(j)] == raw[static_cast<std::size_t>(i)] && j < i))
                ++r;
        ranks[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(r);
    }
    return ranks;
}

Signature extract_signature(const Volume& volume, const ScaleSpaceParams& params,
                            const std::string& image_id, int threads) {
    Signature sig;
    sig.image_id = image_id;
    sig.source_checksum = volume.checksum();

    const ScaleSpace ss = build_scale_space(volume, params, threads);
    sig.extraction_params = ss.params;
    const DogStack dog = compute_dog(ss);
    const std::vector<Keypoint> candidates = detect_extrema(dog, ss.params);
    const std::vector<Keypoint> stable = reject_unstable(candidates, dog, ss.params);

    struct PerKeypoint {
        std::vector<Descriptor> descriptors;
    };
    std::vector<PerKeypoint> results(stable.size());
    parallel_for(stable.size(), threads, [&](std::size_t i) {
        const auto orientations = assign_orientations(ss, stable[i]);
        for (std::size_t oi = 0; oi < orientations.size(); ++oi) {
            const Patch patch = extract_patch(ss, stable[i], orientations[oi]);
            Descriptor d;
            d.values = rank_order(encode_hog(patch));
            d.orientation_index = static_cast<std::uint8_t>(oi);
            for (int c = 0; c < 9; ++c)
                d.rotation[static_cast<std::size_t>(c)] =
                    static_cast<float>(orientations[oi].rotation[static_cast<std::size_t>(c)]);
            results[i].descriptors.push_back(d);
        }
    });

    // Keypoints with a degenerate gradient field produced no orientations
    // and are dropped; descriptor indices refer to the compacted list.
    for (std::size_t i = 0; i < stable.size(); ++i) {
        if (results[i].descriptors.empty()) continue;
        const auto kp_index = static_cast<std::uint32_t>(sig.keypoints.size());
        sig.keypoints.push_back(stable[i]);
        for (Descriptor d : results[i].descriptors) {
            d.keypoint_index = kp_index;
            sig.descriptors.push_back(d);
        }
    }
    return sig;
}

namespace {

template <typename T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void save_signature(const Signature& sig, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoFailure("cannot open " + path + " for writing");
    os.write("SGS1", 4);
    put<std::uint32_t>(os, 1); // version
    put<std::uint32_t>(os, static_cast<std::uint32_t>(sig.image_id.size()));
    os.write(sig.image_id.data(), static_cast<std::streamsize>(sig.image_id.size()));
    put<std::uint64_t>(os, sig.source_checksum);

    const auto& p = sig.extraction_params;
    put<double>(os, p.base_sigma);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.scales_per_octave));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.num_octaves));
    put<double>(os, p.contrast_threshold);
    put<double>(os, p.edge_ratio_threshold);

    put<std::uint32_t>(os, static_cast<std::uint32_t>(sig.keypoints.size()));
    for (const Keypoint& kp : sig.keypoints) {
        for (int i = 0; i < 3; ++i) put<float>(os, static_cast<float>(kp.location[i]));
        put<float>(os, static_cast<float>(kp.sigma));
        put<float>(os, static_cast<float>(kp.dog_value));
        put<std::uint16_t>(os, kp.octave_index);
        put<std::uint16_t>(os, kp.level_index);
    }
    put<std::uint32_t>(os, static_cast<std::uint32_t>(sig.descriptors.size()));
    for (const Descriptor& d : sig.descriptors) {
        put<std::uint32_t>(os, d.keypoint_index);
        put<std::uint8_t>(os, d.orientation_index);
        os.write(reinterpret_cast<const char*>(d.values.data()), 64);
        for (int i = 0; i < 9; ++i) put<float>(os, d.rotation[static_cast<std::size_t>(i)]);
    }
    if (!os) throw IoFailure("write failed for " + path);
}

Signature load_signature(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoFailure("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SGS1", 4) != 0)
        throw UnknownFormat("not a signature file: " + path);
    const auto version = get<std::uint32_t>(is);
    if (version != 1) throw CorruptHeader("unsupported signature version");

    Signature sig;
    const auto id_len = get<std::uint32_t>(is);
    sig.image_id.resize(id_len);
    is.read(sig.image_id.data(), id_len);
    sig.source_checksum = get<std::uint64_t>(is);

    auto& p = sig.extraction_params;
    p.base_sigma = get<double>(is);
    p.scales_per_octave = static_cast<int>(get<std::uint32_t>(is));
    p.num_octaves = static_cast<int>(get<std::uint32_t>(is));
    p.contrast_threshold = get<double>(is);
    p.edge_ratio_threshold = get<double>(is);

    const auto num_kp = get<std::uint32_t>(is);
    sig.keypoints.resize(num_kp);
    for (Keypoint& kp : sig.keypoints) {
        for (int i = 0; i < 3; ++i) kp.location[i] = get<float>(is);
        kp.sigma = get<float>(is);
        kp.dog_value = get<float>(is);
        kp.octave_index = get<std::uint16_t>(is);
        kp.level_index = get<std::uint16_t>(is);
    }
    const auto num_desc = get<std::uint32_t>(is);
    sig.descriptors.resize(num_desc);
    for (Descriptor& d : sig.descriptors) {
        d.keypoint_index = get<std::uint32_t>(is);
        d.orientation_index = get<std::uint8_t>(is);
        is.read(reinterpret_cast<char*>(d.values.data()), 64);
        for (int i = 0; i < 9; ++i) d.rotation[static_cast<std::size_t>(i)] = get<float>(is);
        if (d.keypoint_index >= num_kp)
            throw CorruptHeader("descriptor keypoint_index out of range");
    }
    if (!is) throw CorruptHeader("signature file truncated");
    return sig;
}

} // namespace sigprint
