#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sigprint/curation.hpp"
#include "sigprint/descriptor.hpp"
#include "sigprint/jaccard.hpp"
#include "sigprint/parallel.hpp"
#include "sigprint/volume.hpp"

namespace py = pybind11;
using namespace sigprint;

namespace {

py::array_t<float> volume_to_array(const Volume& v) {
    // z, y, x axis order; x is the fastest-moving index.
    py::array_t<float> arr({static_cast<py::ssize_t>(v.dims[2]),
                            static_cast<py::ssize_t>(v.dims[1]),
                            static_cast<py::ssize_t>(v.dims[0])});
    std::memcpy(arr.mutable_data(), v.data.data(), v.data.size() * sizeof(float));
    return arr;
}

Volume volume_from_array(py::array_t<float, py::array::c_style | py::array::forcecast> arr,
                         std::array<double, 3> spacing, std::array<double, 3> origin) {
    if (arr.ndim() != 3) throw Error("expected a 3-dimensional array");
    Volume v;
    v.dims = {static_cast<std::uint32_t>(arr.shape(2)),
              static_cast<std::uint32_t>(arr.shape(1)),
              static_cast<std::uint32_t>(arr.shape(0))};
    v.spacing = spacing;
    v.origin = origin;
    v.data.resize(v.size());
    std::memcpy(v.data.data(), arr.data(), v.data.size() * sizeof(float));
    return v;
}

py::array_t<std::uint8_t> descriptor_matrix(const Signature& sig) {
    py::array_t<std::uint8_t> arr({static_cast<py::ssize_t>(sig.descriptors.size()),
                                   static_cast<py::ssize_t>(64)});
    auto* out = arr.mutable_data();
    for (std::size_t i = 0; i < sig.descriptors.size(); ++i)
        std::memcpy(out + i * 64, sig.descriptors[i].values.data(), 64);
    return arr;
}

} // namespace

PYBIND11_MODULE(_sigprint, m) {
    m.doc() = "3D keypoint signatures and soft-Jaccard image collection curation";

    py::register_exception<Error>(m, "SigprintError");

    py::class_<Volume>(m, "Volume")
        .def_readonly("dims", &Volume::dims)
        .def_readwrite("spacing", &Volume::spacing)
        .def_readwrite("origin", &Volume::origin)
        .def_property_readonly("array", &volume_to_array)
        .def("checksum", &Volume::checksum)
        .def("__repr__", [](const Volume& v) {
            return "Volume(" + std::to_string(v.dims[0]) + "x" +
                   std::to_string(v.dims[1]) + "x" + std::to_string(v.dims[2]) + ")";
        });

    m.def("volume_from_array", &volume_from_array, py::arg("array"),
          py::arg("spacing") = std::array<double, 3>{1.0, 1.0, 1.0},
          py::arg("origin") = std::array<double, 3>{0.0, 0.0, 0.0},
          "Build a Volume from a (z, y, x) float array");

    py::class_<PhantomSpec>(m, "PhantomSpec")
        .def(py::init<>())
        .def_readwrite("seed", &PhantomSpec::seed)
        .def_readwrite("num_blobs", &PhantomSpec::num_blobs)
        .def_readwrite("blob_scale_min", &PhantomSpec::blob_scale_min)
        .def_readwrite("blob_scale_max", &PhantomSpec::blob_scale_max)
        .def_readwrite("intensity_lo", &PhantomSpec::intensity_lo)
        .def_readwrite("intensity_hi", &PhantomSpec::intensity_hi)
        .def_readwrite("noise_sigma", &PhantomSpec::noise_sigma)
        .def_readwrite("dims", &PhantomSpec::dims)
        .def_readwrite("spacing", &PhantomSpec::spacing);

    m.def("make_phantom", &make_phantom, py::arg("spec"));

    // Registered before load_volume so the default argument below can be
    // converted when the module initializes.
    py::enum_<NanPolicy>(m, "NanPolicy")
        .value("Reject", NanPolicy::Reject)
        .value("ReplaceWithZero", NanPolicy::ReplaceWithZero);

    m.def("load_volume", &load_volume, py::arg("path"),
          py::arg("policy") = NanPolicy::Reject);
    m.def("save_volume", &save_volume, py::arg("volume"), py::arg("path"));

    py::class_<SimilarityTransform>(m, "SimilarityTransform")
        .def(py::init<>())
        .def_readwrite("rotation", &SimilarityTransform::rotation)
        .def_readwrite("scale", &SimilarityTransform::scale)
        .def_readwrite("translation", &SimilarityTransform::translation)
        .def("inverse", &SimilarityTransform::inverse)
        .def("apply", &SimilarityTransform::apply);

    m.def("rotation_about_axis", &rotation_about_axis, py::arg("axis"), py::arg("angle"));
    m.def("similarity_about_center", &similarity_about_center, py::arg("volume"),
          py::arg("rotation"), py::arg("scale"), py::arg("translation"));
    m.def(
        "apply_transform",
        [](const Volume& v, const SimilarityTransform& t) { return apply_transform(v, t); },
        py::arg("volume"), py::arg("transform"));

    py::class_<ScaleSpaceParams>(m, "ScaleSpaceParams")
        .def(py::init<>())
        .def_readwrite("base_sigma", &ScaleSpaceParams::base_sigma)
        .def_readwrite("scales_per_octave", &ScaleSpaceParams::scales_per_octave)
        .def_readwrite("num_octaves", &ScaleSpaceParams::num_octaves)
        .def_readwrite("contrast_threshold", &ScaleSpaceParams::contrast_threshold)
        .def_readwrite("edge_ratio_threshold", &ScaleSpaceParams::edge_ratio_threshold);

    py::class_<Keypoint>(m, "Keypoint")
        .def_readonly("location", &Keypoint::location)
        .def_readonly("sigma", &Keypoint::sigma)
        .def_readonly("dog_value", &Keypoint::dog_value);

    py::class_<Signature>(m, "Signature")
        .def_readwrite("image_id", &Signature::image_id)
        .def_readonly("keypoints", &Signature::keypoints)
        .def_property_readonly("descriptors", &descriptor_matrix)
        .def_property_readonly("num_keypoints",
                               [](const Signature& s) { return s.keypoints.size(); })
        .def_property_readonly("num_descriptors",
                               [](const Signature& s) { return s.descriptors.size(); });

    m.def(
        "extract_signature",
        [](const Volume& v, const ScaleSpaceParams& p, const std::string& id, int threads) {
            return extract_signature(v, p, id, resolve_threads(threads));
        },
        py::arg("volume"), py::arg("params") = ScaleSpaceParams{},
        py::arg("image_id") = "", py::arg("threads") = 0);
    m.def("save_signature", &save_signature, py::arg("signature"), py::arg("path"));
    m.def("load_signature", &load_signature, py::arg("path"));

    py::enum_<MatchMode>(m, "MatchMode")
        .value("Soft", MatchMode::Soft)
        .value("Hard", MatchMode::Hard);

    py::class_<SoftJaccardParams>(m, "SoftJaccardParams")
        .def(py::init<>())
        .def_readwrite("k", &SoftJaccardParams::k)
        .def_readwrite("mode", &SoftJaccardParams::mode)
        .def_readwrite("checks", &SoftJaccardParams::checks);

    py::class_<PairScore>(m, "PairScore")
        .def_readonly("image_a", &PairScore::image_a)
        .def_readonly("image_b", &PairScore::image_b)
        .def_readonly("intersection", &PairScore::intersection)
        .def_readonly("jaccard", &PairScore::jaccard)
        .def_readonly("distance", &PairScore::distance);

    py::class_<SimilarityMatrix>(m, "SimilarityMatrix")
        .def_readonly("ids", &SimilarityMatrix::ids)
        .def_readonly("pairs", &SimilarityMatrix::pairs)
        .def("at", &SimilarityMatrix::at, py::return_value_policy::reference_internal);

    m.def(
        "pairwise_matrix",
        [](const std::vector<Signature>& sigs, const SoftJaccardParams& p,
           std::uint64_t seed, int threads) {
            return pairwise_matrix(sigs, p, seed, resolve_threads(threads));
        },
        py::arg("signatures"), py::arg("params") = SoftJaccardParams{},
        py::arg("seed") = 0, py::arg("threads") = 0);
    m.def("save_matrix_csv", &save_matrix_csv, py::arg("matrix"), py::arg("path"));
    m.def("load_matrix_csv", &load_matrix_csv, py::arg("path"));

    m.def("ks_two_sample", &ks_two_sample, py::arg("x"), py::arg("y"),
          "Two-sample Kolmogorov-Smirnov test; returns (D, p)");
}
