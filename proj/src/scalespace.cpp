#include "sigprint/scalespace.hpp"

#include <algorithm>
#include <cmath>

#include "sigprint/parallel.hpp"

namespace sigprint {

namespace {

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    for (double& x : k) x /= sum;
    return k;
}

// One separable pass along `axis` with edge replication.
void blur_axis(const Volume& in, Volume& out, const std::vector<double>& kernel,
               int axis, int threads) {
    const int radius = static_cast<int>(kernel.size() / 2);
    const std::int64_t n[3] = {in.dims[0], in.dims[1], in.dims[2]};
    const std::int64_t stride[3] = {1, n[0], n[0] * n[1]};
    const int a = axis, b = (axis + 1) % 3, c = (axis + 2) % 3;

    parallel_for(static_cast<std::size_t>(n[c]), threads, [&](std::size_t kc) {
        for (std::int64_t jb = 0; jb < n[b]; ++jb) {
            const std::int64_t base = static_cast<std::int64_t>(kc) * stride[c] + jb * stride[b];
            for (std::int64_t ia = 0; ia < n[a]; ++ia) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t) {
                    const std::int64_t s = std::clamp<std::int64_t>(ia + t, 0, n[a] - 1);
                    acc += kernel[t + radius] * in.data[base + s * stride[a]];
                }
                out.data[base + ia * stride[a]] = static_cast<float>(acc);
            }
        }
    });
}

Volume decimate(const Volume& v) {
    Volume out;
    for (int i = 0; i < 3; ++i) {
        out.dims[i] = (v.dims[i] + 1) / 2;
        out.spacing[i] = v.spacing[i] * 2.0;
        out.origin[i] = v.origin[i];
    }
    out.data.resize(out.size());
    for (std::uint32_t z = 0; z < out.dims[2]; ++z)
        for (std::uint32_t y = 0; y < out.dims[1]; ++y)
            for (std::uint32_t x = 0; x < out.dims[0]; ++x)
                out.at(x, y, z) = v.at(2 * x, 2 * y, 2 * z);
    return out;
}

double dog_at(const DogOctave& o, int l, std::int64_t x, std::int64_t y, std::int64_t z) {
    return o.levels[static_cast<std::size_t>(l)].at(
        static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
        static_cast<std::uint32_t>(z));
}

// Eigenvalues of a symmetric 3x3 matrix (trigonometric closed form).
std::array<double, 3> symmetric_eigenvalues(const std::array<double, 9>& a) {
    const double p1 = a[1] * a[1] + a[2] * a[2] + a[5] * a[5];
    const double q = (a[0] + a[4] + a[8]) / 3.0;
    if (p1 < 1e-30) return {a[0], a[4], a[8]};
    const double p2 = (a[0] - q) * (a[0] - q) + (a[4] - q) * (a[4] - q) +
                      (a[8] - q) * (a[8] - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    std::array<double, 9> b;
    for (int i = 0; i < 9; ++i) b[i] = a[i] / p;
    b[0] -= q / p;
    b[4] -= q / p;
    b[8] -= q / p;
    const double detb = b[0] * (b[4] * b[8] - b[5] * b[7]) -
                        b[1] * (b[3] * b[8] - b[5] * b[6]) +
                        b[2] * (b[3] * b[7] - b[4] * b[6]);
    const double r = std::clamp(detb / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double e1 = q + 2.0 * p * std::cos(phi);
    const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    return {e1, 3.0 * q - e1 - e3, e3};
}

// Solve a 4x4 linear system in place; returns false if singular.
bool solve4(std::array<double, 16>& m, std::array<double, 4>& rhs) {
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 4; ++r)
            if (std::abs(m[r * 4 + col]) > std::abs(m[pivot * 4 + col])) pivot = r;
        if (std::abs(m[pivot * 4 + col]) < 1e-12) return false;
        if (pivot != col) {
            for (int c = 0; c < 4; ++c) std::swap(m[col * 4 + c], m[pivot * 4 + c]);
            std::swap(rhs[col], rhs[pivot]);
        }
        const double inv = 1.0 / m[col * 4 + col];
        for (int r = 0; r < 4; ++r) {
            if (r == col) continue;
            const double f = m[r * 4 + col] * inv;
            for (int c = col; c < 4; ++c) m[r * 4 + c] -= f * m[col * 4 + c];
            rhs[r] -= f * rhs[col];
        }
    }
    for (int i = 0; i < 4; ++i) rhs[i] /= m[i * 4 + i];
    return true;
}

} // namespace

Volume gaussian_blur(const Volume& v, double sigma, int threads) {
    if (sigma < 1e-8) return v;
    const auto kernel = gaussian_kernel(sigma);
    Volume tmp = v;
    Volume out = v;
    blur_axis(v, tmp, kernel, 0, threads);
    blur_axis(tmp, out, kernel, 1, threads);
    blur_axis(out, tmp, kernel, 2, threads);
    return tmp;
}

double robust_intensity_range(const Volume& v) {
    std::vector<float> sorted(v.data);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const std::size_t lo = static_cast<std::size_t>(0.01 * (n - 1));
    const std::size_t hi = static_cast<std::size_t>(0.99 * (n - 1));
    return static_cast<double>(sorted[hi]) - static_cast<double>(sorted[lo]);
}

ScaleSpace build_scale_space(const Volume& v, const ScaleSpaceParams& params,
                             int threads) {
    const std::uint32_t min_dim = std::min({v.dims[0], v.dims[1], v.dims[2]});
    if (min_dim < 8) throw VolumeTooSmall("volume smaller than 8 voxels per axis");

    int num_octaves = params.num_octaves;
    if (num_octaves <= 0) {
        num_octaves = 1;
        std::uint32_t d = min_dim;
        while ((d + 1) / 2 >= 8) {
            d = (d + 1) / 2;
            ++num_octaves;
        }
    }

    ScaleSpace ss;
    ss.params = params;
    ss.params.num_octaves = num_octaves;
    ss.robust_range = robust_intensity_range(v);
    ss.spacing = v.spacing;

    const int s = params.scales_per_octave;
    const int levels_per_octave = s + 3;
    Volume base = v;
    for (int o = 0; o < num_octaves; ++o) {
        Octave oct;
        oct.downsample = 1u << o;
        oct.levels.reserve(levels_per_octave);
        // Level 0 carries base_sigma of blur relative to the octave base.
        oct.levels.push_back(gaussian_blur(base, params.base_sigma, threads));
        for (int k = 1; k < levels_per_octave; ++k) {
            const double prev = params.level_sigma(k - 1);
            const double cur = params.level_sigma(k);
            const double inc = std::sqrt(cur * cur - prev * prev);
            oct.levels.push_back(gaussian_blur(oct.levels[k - 1], inc, threads));
        }
        if (o + 1 < num_octaves) base = decimate(oct.levels[static_cast<std::size_t>(s)]);
        ss.octaves.push_back(std::move(oct));
    }
    return ss;
}

DogStack compute_dog(const ScaleSpace& ss) {
    DogStack dog;
    dog.params = ss.params;
    dog.robust_range = ss.robust_range;
    for (const auto& oct : ss.octaves) {
        DogOctave d;
        d.downsample = oct.downsample;
        for (std::size_t k = 0; k + 1 < oct.levels.size(); ++k) {
            Volume diff = oct.levels[k];
            const Volume& hi = oct.levels[k + 1];
            for (std::size_t i = 0; i < diff.data.size(); ++i)
                diff.data[i] = hi.data[i] - diff.data[i];
            d.levels.push_back(std::move(diff));
        }
        dog.octaves.push_back(std::move(d));
    }
    return dog;
}

std::vector<Keypoint> detect_extrema(const DogStack& dog,
                                     const ScaleSpaceParams& params) {
    const double threshold = params.contrast_threshold * dog.robust_range;
    std::vector<Keypoint> out;

    for (std::size_t oi = 0; oi < dog.octaves.size(); ++oi) {
        const DogOctave& oct = dog.octaves[oi];
        const int num_levels = static_cast<int>(oct.levels.size());
        for (int l = 1; l + 1 < num_levels; ++l) {
            const Volume& cur = oct.levels[static_cast<std::size_t>(l)];
            // Extrema closer than ceil(sigma) to the octave boundary are
            // dominated by padding and discarded.
            const std::int64_t border =
                std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                              std::ceil(params.level_sigma(l))));
            const std::int64_t nx = cur.dims[0], ny = cur.dims[1], nz = cur.dims[2];
            for (std::int64_t z = border; z < nz - border; ++z)
                for (std::int64_t y = border; y < ny - border; ++y)
                    for (std::int64_t x = border; x < nx - border; ++x) {
                        const double v = dog_at(oct, l, x, y, z);
                        if (std::abs(v) < 0.5 * threshold) continue;
                        bool is_max = true, is_min = true;
                        for (int dl = -1; dl <= 1 && (is_max || is_min); ++dl)
                            for (int dz = -1; dz <= 1 && (is_max || is_min); ++dz)
                                for (int dy = -1; dy <= 1 && (is_max || is_min); ++dy)
                                    for (int dx = -1; dx <= 1; ++dx) {
                                        if (dl == 0 && dz == 0 && dy == 0 && dx == 0)
                                            continue;
                                        const double n = dog_at(oct, l + dl, x + dx,
                                                                y + dy, z + dz);
                                        if (n >= v) is_max = false;
                                        if (n <= v) is_min = false;
                                        if (!is_max && !is_min) break;
                                    }
                        if (!is_max && !is_min) continue;

                        // One quadratic Taylor step in (x, y, z, scale).
                        auto d = [&](int dx, int dy, int dz, int dl) {
                            return dog_at(oct, l + dl, x + dx, y + dy, z + dz);
                        };
                        const std::array<double, 4> grad = {
                            0.5 * (d(1, 0, 0, 0) - d(-1, 0, 0, 0)),
                            0.5 * (d(0, 1, 0, 0) - d(0, -1, 0, 0)),
                            0.5 * (d(0, 0, 1, 0) - d(0, 0, -1, 0)),
                            0.5 * (d(0, 0, 0, 1) - d(0, 0, 0, -1))};
                        const double hxx = d(1, 0, 0, 0) + d(-1, 0, 0, 0) - 2 * v;
                        const double hyy = d(0, 1, 0, 0) + d(0, -1, 0, 0) - 2 * v;
                        const double hzz = d(0, 0, 1, 0) + d(0, 0, -1, 0) - 2 * v;
                        const double hll = d(0, 0, 0, 1) + d(0, 0, 0, -1) - 2 * v;
                        const double hxy = 0.25 * (d(1, 1, 0, 0) - d(-1, 1, 0, 0) -
                                                   d(1, -1, 0, 0) + d(-1, -1, 0, 0));
                        const double hxz = 0.25 * (d(1, 0, 1, 0) - d(-1, 0, 1, 0) -
                                                   d(1, 0, -1, 0) + d(-1, 0, -1, 0));
                        const double hyz = 0.25 * (d(0, 1, 1, 0) - d(0, -1, 1, 0) -
                                                   d(0, 1, -1, 0) + d(0, -1, -1, 0));
                        const double hxl = 0.25 * (d(1, 0, 0, 1) - d(-1, 0, 0, 1) -
                                                   d(1, 0, 0, -1) + d(-1, 0, 0, -1));
                        const double hyl = 0.25 * (d(0, 1, 0, 1) - d(0, -1, 0, 1) -
                                                   d(0, 1, 0, -1) + d(0, -1, 0, -1));
                        const double hzl = 0.25 * (d(0, 0, 1, 1) - d(0, 0, -1, 1) -
                                                   d(0, 0, 1, -1) + d(0, 0, -1, -1));
                        std::array<double, 16> h = {hxx, hxy, hxz, hxl,
                                                    hxy, hyy, hyz, hyl,
                                                    hxz, hyz, hzz, hzl,
                                                    hxl, hyl, hzl, hll};
                        std::array<double, 4> offset = {-grad[0], -grad[1], -grad[2],
                                                        -grad[3]};
                        if (!solve4(h, offset)) offset = {0, 0, 0, 0};
                        if (std::abs(offset[0]) > 0.6 || std::abs(offset[1]) > 0.6 ||
                            std::abs(offset[2]) > 0.6 || std::abs(offset[3]) > 0.6)
                            continue;
                        const double refined =
                            v + 0.5 * (grad[0] * offset[0] + grad[1] * offset[1] +
                                       grad[2] * offset[2] + grad[3] * offset[3]);
                        if (std::abs(refined) < threshold) continue;

                        Keypoint kp;
                        const double ds = oct.downsample;
                        kp.location = {(x + offset[0]) * ds, (y + offset[1]) * ds,
                                       (z + offset[2]) * ds};
                        kp.sigma = params.level_sigma(l) *
                                   std::pow(params.kappa(), offset[3]) * ds;
                        kp.dog_value = refined;
                        kp.octave_index = static_cast<std::uint16_t>(oi);
                        kp.level_index = static_cast<std::uint16_t>(l);
                        out.push_back(kp);
                    }
        }
    }
    std::sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) {
        if (a.octave_index != b.octave_index) return a.octave_index < b.octave_index;
        if (a.level_index != b.level_index) return a.level_index < b.level_index;
        if (a.location[2] != b.location[2]) return a.location[2] < b.location[2];
        if (a.location[1] != b.location[1]) return a.location[1] < b.location[1];
        return a.location[0] < b.location[0];
    });
    return out;
}

std::vector<Keypoint> reject_unstable(const std::vector<Keypoint>& candidates,
                                      const DogStack& dog,
                                      const ScaleSpaceParams& params) {
    std::vector<Keypoint> out;
    out.reserve(candidates.size());
    for (const Keypoint& kp : candidates) {
        const DogOctave& oct = dog.octaves[kp.octave_index];
        const Volume& level = oct.levels[kp.level_index];
        const double ds = oct.downsample;
        const std::int64_t x = std::llround(kp.location[0] / ds);
        const std::int64_t y = std::llround(kp.location[1] / ds);
        const std::int64_t z = std::llround(kp.location[2] / ds);
        if (x < 1 || y < 1 || z < 1 || x + 1 >= level.dims[0] ||
            y + 1 >= level.dims[1] || z + 1 >= level.dims[2])
            continue;
        auto d = [&](std::int64_t dx, std::int64_t dy, std::int64_t dz) {
            return dog_at(oct, kp.level_index, x + dx, y + dy, z + dz);
        };
        const double v = d(0, 0, 0);
        const double hxx = d(1, 0, 0) + d(-1, 0, 0) - 2 * v;
        const double hyy = d(0, 1, 0) + d(0, -1, 0) - 2 * v;
        const double hzz = d(0, 0, 1) + d(0, 0, -1) - 2 * v;
        const double hxy = 0.25 * (d(1, 1, 0) - d(-1, 1, 0) - d(1, -1, 0) + d(-1, -1, 0));
        const double hxz = 0.25 * (d(1, 0, 1) - d(-1, 0, 1) - d(1, 0, -1) + d(-1, 0, -1));
        const double hyz = 0.25 * (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1));
        const auto eig = symmetric_eigenvalues(
            {hxx, hxy, hxz, hxy, hyy, hyz, hxz, hyz, hzz});

        double max_abs = 0.0, min_abs = std::numeric_limits<double>::infinity();
        bool pos = false, neg = false;
        for (double e : eig) {
            max_abs = std::max(max_abs, std::abs(e));
            min_abs = std::min(min_abs, std::abs(e));
            if (e > 0) pos = true;
            if (e < 0) neg = true;
        }
        if (pos && neg) continue;           // saddle, not a true 3D extremum
        if (min_abs < 1e-12 * std::max(max_abs, 1e-300)) continue;  // flat direction
        if (max_abs / min_abs > params.edge_ratio_threshold) continue;
        out.push_back(kp);
    }
    return out;
}

} // namespace sigprint
