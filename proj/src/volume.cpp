#include "sigprint/volume.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "sigprint/checksum.hpp"
#include "sigprint/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

namespace sigprint {

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

void check_finite(Volume& v, NanPolicy policy) {
    for (float& x : v.data) {
        if (!std::isfinite(x)) {
            if (policy == NanPolicy::Reject)
                throw NonFinite("volume contains NaN/Inf values");
            x = 0.0f;
        }
    }
}

Volume load_sgv(std::istream& is, NanPolicy policy) {
    Volume v;
    for (int i = 0; i < 3; ++i) v.dims[i] = read_pod<std::uint32_t>(is);
    for (int i = 0; i < 3; ++i) v.spacing[i] = read_pod<double>(is);
    for (int i = 0; i < 3; ++i) v.origin[i] = read_pod<double>(is);
    if (!is) throw CorruptHeader("SGV header truncated");
    if (v.dims[0] == 0 || v.dims[1] == 0 || v.dims[2] == 0)
        throw CorruptHeader("SGV header has a zero dimension");
    if (v.spacing[0] <= 0 || v.spacing[1] <= 0 || v.spacing[2] <= 0)
        throw CorruptHeader("SGV header has non-positive spacing");
    v.data.resize(v.size());
    is.read(reinterpret_cast<char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (static_cast<std::size_t>(is.gcount()) != v.data.size() * sizeof(float))
        throw CorruptHeader("SGV data length does not match header dims");
    check_finite(v, policy);
    return v;
}

// Minimal NIfTI-1 reader: uncompressed single-file, little-endian,
// datatypes uint8/int16/int32/float32/float64, scl_slope/scl_inter
// applied, qform/sform ignored beyond pixdim spacing.
Volume load_nifti(std::istream& is, NanPolicy policy) {
    char hdr[348];
    is.read(hdr, 348);
    if (!is) throw CorruptHeader("NIfTI header truncated");
    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, hdr, 4);
    if (sizeof_hdr != 348)
        throw UnknownFormat("not a little-endian NIfTI-1 file");
    if (std::memcmp(hdr + 344, "n+1\0", 4) != 0)
        throw UnknownFormat("NIfTI magic is not n+1 (single-file)");

    std::int16_t dim[8];
    std::memcpy(dim, hdr + 40, sizeof(dim));
    if (dim[0] < 3 || dim[1] <= 0 || dim[2] <= 0 || dim[3] <= 0)
        throw CorruptHeader("NIfTI dims invalid or not 3D");
    for (int i = 4; i <= dim[0] && i < 8; ++i)
        if (dim[i] > 1) throw CorruptHeader("NIfTI volumes with >1 timepoint unsupported");

    std::int16_t datatype, bitpix;
    std::memcpy(&datatype, hdr + 70, 2);
    std::memcpy(&bitpix, hdr + 72, 2);
    float pixdim[8], vox_offset, scl_slope, scl_inter;
    std::memcpy(pixdim, hdr + 76, sizeof(pixdim));
    std::memcpy(&vox_offset, hdr + 108, 4);
    std::memcpy(&scl_slope, hdr + 112, 4);
    std::memcpy(&scl_inter, hdr + 116, 4);

    Volume v;
    v.dims = {static_cast<std::uint32_t>(dim[1]),
              static_cast<std::uint32_t>(dim[2]),
              static_cast<std::uint32_t>(dim[3])};
    for (int i = 0; i < 3; ++i) {
        v.spacing[i] = pixdim[i + 1] > 0 ? pixdim[i + 1] : 1.0;
    }
    const std::size_t n = v.size();
    v.data.resize(n);

    if (vox_offset < 348) throw CorruptHeader("NIfTI vox_offset below header size");
    is.seekg(static_cast<std::streamoff>(vox_offset), std::ios::beg);

    const double slope = (scl_slope == 0.0f) ? 1.0 : scl_slope;
    const double inter = scl_inter;
    auto convert = [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> raw(n);
        is.read(reinterpret_cast<char*>(raw.data()),
                static_cast<std::streamsize>(n * sizeof(T)));
        if (static_cast<std::size_t>(is.gcount()) != n * sizeof(T))
            throw CorruptHeader("NIfTI data truncated");
        for (std::size_t i = 0; i < n; ++i)
            v.data[i] = static_cast<float>(static_cast<double>(raw[i]) * slope + inter);
    };
    switch (datatype) {
        case 2: convert(std::uint8_t{}); break;   // DT_UINT8
        case 4: convert(std::int16_t{}); break;   // DT_INT16
        case 8: convert(std::int32_t{}); break;   // DT_INT32
        case 16: convert(float{}); break;         // DT_FLOAT32
        case 64: convert(double{}); break;        // DT_FLOAT64
        default:
            throw UnknownFormat("unsupported NIfTI datatype " + std::to_string(datatype));
    }
    check_finite(v, policy);
    return v;
}

} // namespace

float Volume::sample(double x, double y, double z) const {
    if (x < 0 || y < 0 || z < 0) return 0.0f;
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
    const std::int64_t z0 = static_cast<std::int64_t>(std::floor(z));
    if (x0 >= dims[0] || y0 >= dims[1] || z0 >= dims[2]) return 0.0f;
    const double fx = x - x0, fy = y - y0, fz = z - z0;

    auto tap = [&](std::int64_t xi, std::int64_t yi, std::int64_t zi) -> double {
        if (xi < 0 || yi < 0 || zi < 0 || xi >= dims[0] || yi >= dims[1] ||
            zi >= dims[2])
            return 0.0;
        return at(static_cast<std::uint32_t>(xi), static_cast<std::uint32_t>(yi),
                  static_cast<std::uint32_t>(zi));
    };
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) *
                                 (dz ? fz : 1.0 - fz);
                if (w > 0.0) acc += w * tap(x0 + dx, y0 + dy, z0 + dz);
            }
    return static_cast<float>(acc);
}

std::uint64_t Volume::checksum() const {
    std::uint64_t h = fnv1a64(dims.data(), sizeof(dims));
    h = fnv1a64(spacing.data(), sizeof(spacing), h);
    h = fnv1a64(origin.data(), sizeof(origin), h);
    return fnv1a64(data.data(), data.size() * sizeof(float), h);
}

void SimilarityTransform::validate() const {
    if (scale <= 0.0) throw Error("similarity transform scale must be positive");
    const auto& r = rotation;
    // R^T R == I within 1e-9
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (int k = 0; k < 3; ++k) dot += r[k * 3 + i] * r[k * 3 + j];
            const double expect = (i == j) ? 1.0 : 0.0;
            if (std::abs(dot - expect) > 1e-9)
                throw Error("rotation matrix is not orthonormal");
        }
    const double det = r[0] * (r[4] * r[8] - r[5] * r[7]) -
                       r[1] * (r[3] * r[8] - r[5] * r[6]) +
                       r[2] * (r[3] * r[7] - r[4] * r[6]);
    if (std::abs(det - 1.0) > 1e-9)
        throw Error("rotation matrix determinant is not +1");
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) inv.rotation[i * 3 + j] = rotation[j * 3 + i];
    // p = R^T (p' - t) / s
    for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += inv.rotation[i * 3 + j] * translation[j];
        inv.translation[i] = -acc / scale;
    }
    return inv;
}

std::array<double, 3> SimilarityTransform::apply(const std::array<double, 3>& p) const {
    std::array<double, 3> out;
    for (int i = 0; i < 3; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += rotation[i * 3 + j] * p[j];
        out[i] = scale * acc + translation[i];
    }
    return out;
}

std::array<double, 9> rotation_about_axis(const std::array<double, 3>& axis,
                                          double angle) {
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    const double ux = axis[0] / n, uy = axis[1] / n, uz = axis[2] / n;
    const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
    return {c + ux * ux * t,      ux * uy * t - uz * s, ux * uz * t + uy * s,
            uy * ux * t + uz * s, c + uy * uy * t,      uy * uz * t - ux * s,
            uz * ux * t - uy * s, uz * uy * t + ux * s, c + uz * uz * t};
}

SimilarityTransform similarity_about_center(const Volume& v,
                                            const std::array<double, 9>& rotation,
                                            double scale,
                                            const std::array<double, 3>& translation) {
    std::array<double, 3> c;
    for (int i = 0; i < 3; ++i)
        c[i] = v.origin[i] + 0.5 * (v.dims[i] - 1) * v.spacing[i];
    SimilarityTransform t;
    t.rotation = rotation;
    t.scale = scale;
    // p' = sR(p - c) + c + translation
    for (int i = 0; i < 3; ++i) {
        double rc = 0.0;
        for (int j = 0; j < 3; ++j) rc += rotation[i * 3 + j] * c[j];
        t.translation[i] = c[i] + translation[i] - scale * rc;
    }
    return t;
}

Volume load_volume(const std::string& path, NanPolicy policy) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoFailure("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is) throw UnknownFormat("file too short for any supported format: " + path);
    if (std::memcmp(magic, "SGV1", 4) == 0) return load_sgv(is, policy);
    // NIfTI-1 identifies via sizeof_hdr + magic inside the header.
    is.seekg(0, std::ios::beg);
    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, magic, 4);
    if (sizeof_hdr == 348) return load_nifti(is, policy);
    throw UnknownFormat("unrecognized magic bytes in " + path);
}

void save_volume(const Volume& v, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoFailure("cannot open " + path + " for writing");
    os.write("SGV1", 4);
    for (int i = 0; i < 3; ++i) write_pod(os, v.dims[i]);
    for (int i = 0; i < 3; ++i) write_pod(os, v.spacing[i]);
    for (int i = 0; i < 3; ++i) write_pod(os, v.origin[i]);
    os.write(reinterpret_cast<const char*>(v.data.data()),
             static_cast<std::streamsize>(v.data.size() * sizeof(float)));
    if (!os) throw IoFailure("write failed for " + path);
}

Volume make_phantom(const PhantomSpec& spec) {
    if (spec.blob_scale_min < 1.0)
        throw Error("blob_scale_min below 1 voxel is not detectable");
    Volume v;
    v.dims = spec.dims;
    v.spacing = spec.spacing;
    v.data.assign(v.size(), 0.0f);

    Rng rng(spec.seed);
    for (std::uint32_t b = 0; b < spec.num_blobs; ++b) {
        const double cx = rng.uniform(0.15, 0.85) * spec.dims[0];
        const double cy = rng.uniform(0.15, 0.85) * spec.dims[1];
        const double cz = rng.uniform(0.15, 0.85) * spec.dims[2];
        const double sigma = rng.uniform(spec.blob_scale_min, spec.blob_scale_max);
        const double amp = rng.uniform(spec.intensity_lo, spec.intensity_hi);
        const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
        const double r = 4.0 * sigma; // truncation radius
        const std::int64_t x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cx - r));
        const std::int64_t x1 = std::min<std::int64_t>(spec.dims[0] - 1, static_cast<std::int64_t>(cx + r));
        const std::int64_t y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cy - r));
        const std::int64_t y1 = std::min<std::int64_t>(spec.dims[1] - 1, static_cast<std::int64_t>(cy + r));
        const std::int64_t z0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(cz - r));
        const std::int64_t z1 = std::min<std::int64_t>(spec.dims[2] - 1, static_cast<std::int64_t>(cz + r));
        for (std::int64_t z = z0; z <= z1; ++z)
            for (std::int64_t y = y0; y <= y1; ++y)
                for (std::int64_t x = x0; x <= x1; ++x) {
                    const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) +
                                      (z - cz) * (z - cz);
                    v.at(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                         static_cast<std::uint32_t>(z)) +=
                        static_cast<float>(amp * std::exp(-d2 * inv2s2));
                }
    }
    if (spec.noise_sigma > 0.0) {
        for (float& x : v.data)
            x += static_cast<float>(rng.normal(0.0, spec.noise_sigma));
    }
    return v;
}

Volume apply_transform(const Volume& v, const SimilarityTransform& t,
                       const std::array<std::uint32_t, 3>* out_dims) {
    t.validate();
    const SimilarityTransform inv = t.inverse();
    Volume out;
    out.dims = out_dims ? *out_dims : v.dims;
    out.spacing = v.spacing;
    out.origin = v.origin;
    out.data.assign(out.size(), 0.0f);
    for (std::uint32_t z = 0; z < out.dims[2]; ++z)
        for (std::uint32_t y = 0; y < out.dims[1]; ++y)
            for (std::uint32_t x = 0; x < out.dims[0]; ++x) {
                const std::array<double, 3> p = {
                    out.origin[0] + x * out.spacing[0],
                    out.origin[1] + y * out.spacing[1],
                    out.origin[2] + z * out.spacing[2]};
                const std::array<double, 3> q = inv.apply(p);
                const double vx = (q[0] - v.origin[0]) / v.spacing[0];
                const double vy = (q[1] - v.origin[1]) / v.spacing[1];
                const double vz = (q[2] - v.origin[2]) / v.spacing[2];
                out.at(x, y, z) = v.sample(vx, vy, vz);
            }
    return out;
}

} // namespace sigprint
