#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "sigprint/checksum.hpp"
#include "sigprint/curation.hpp"
#include "sigprint/descriptor.hpp"
#include "sigprint/jaccard.hpp"
#include "sigprint/parallel.hpp"
#include "sigprint/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sigprint;

namespace {

constexpr const char* kToolVersion = "1.0.0";

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoFailure("cannot open " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
        h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    return h;
}

void write_manifest(const std::string& artifact_path, json manifest,
                    bool with_timestamp) {
    manifest["tool_version"] = kToolVersion;
    if (with_timestamp) manifest["timestamp"] = iso_timestamp();
    std::ofstream os(artifact_path + ".manifest.json", std::ios::trunc);
    if (!os) throw IoFailure("cannot write manifest for " + artifact_path);
    os << manifest.dump(2) << '\n';
}

std::string num(double v) {
    if (std::isinf(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct CommonFlags {
    int threads = 0;
    bool no_timestamp = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--threads", flags.threads,
                    "Worker threads (default: all cores; SIGPRINT_THREADS overrides)");
    cmd->add_flag("--no-timestamp", flags.no_timestamp,
                  "Omit timestamps from manifests (for determinism checks)");
}

int cmd_phantom(const PhantomSpec& spec, const std::string& out,
                const CommonFlags& flags) {
    const Volume v = make_phantom(spec);
    save_volume(v, out);
    json manifest;
    manifest["command"] = "phantom";
    manifest["seed"] = spec.seed;
    manifest["params"] = {{"blobs", spec.num_blobs},
                          {"blob_scale_min", spec.blob_scale_min},
                          {"blob_scale_max", spec.blob_scale_max},
                          {"intensity_lo", spec.intensity_lo},
                          {"intensity_hi", spec.intensity_hi},
                          {"noise_sigma", spec.noise_sigma},
                          {"dims", spec.dims},
                          {"spacing", spec.spacing}};
    manifest["output_checksum"] = file_checksum(out);
    write_manifest(out, manifest, !flags.no_timestamp);
    std::cout << "wrote " << out << " (" << v.dims[0] << "x" << v.dims[1] << "x"
              << v.dims[2] << ")\n";
    return 0;
}

int cmd_extract(const std::string& volume_path, const std::string& out,
                std::string image_id, const ScaleSpaceParams& params,
                const CommonFlags& flags) {
    if (image_id.empty()) image_id = fs::path(volume_path).stem().string();
    const Volume v = load_volume(volume_path);
    const Signature sig =
        extract_signature(v, params, image_id, resolve_threads(flags.threads));
    save_signature(sig, out);
    json manifest;
    manifest["command"] = "extract";
    manifest["input"] = volume_path;
    manifest["input_checksum"] = file_checksum(volume_path);
    manifest["image_id"] = image_id;
    manifest["params"] = {{"base_sigma", sig.extraction_params.base_sigma},
                          {"scales_per_octave", sig.extraction_params.scales_per_octave},
                          {"num_octaves", sig.extraction_params.num_octaves},
                          {"contrast_threshold", sig.extraction_params.contrast_threshold},
                          {"edge_ratio_threshold", sig.extraction_params.edge_ratio_threshold}};
    manifest["output_checksum"] = file_checksum(out);
    write_manifest(out, manifest, !flags.no_timestamp);
    std::cout << sig.keypoints.size() << " keypoints, " << sig.descriptors.size()
              << " descriptors\n";
    return 0;
}

int cmd_pairwise(const std::vector<std::string>& inputs, const std::string& out,
                 const SoftJaccardParams& params, std::uint64_t seed,
                 const CommonFlags& flags) {
    std::vector<std::string> files;
    for (const std::string& input : inputs) {
        if (fs::is_directory(input)) {
            for (const auto& e : fs::directory_iterator(input))
                if (e.path().extension() == ".sgs") files.push_back(e.path().string());
        } else {
            files.push_back(input);
        }
    }
    std::sort(files.begin(), files.end());
    if (files.size() < 2)
        throw EmptyCollection("pairwise needs at least 2 signature files");

    std::vector<Signature> signatures;
    json input_checksums = json::object();
    for (const std::string& f : files) {
        signatures.push_back(load_signature(f));
        input_checksums[f] = file_checksum(f);
    }
    const SimilarityMatrix matrix = pairwise_matrix(
        signatures, params, seed, resolve_threads(flags.threads));
    save_matrix_csv(matrix, out);

    json manifest;
    manifest["command"] = "pairwise";
    manifest["seed"] = seed;
    manifest["params"] = {{"k", params.k},
                          {"mode", params.mode == MatchMode::Soft ? "soft" : "hard"},
                          {"symmetrize", params.symmetrize == Symmetrize::Mean ? "mean" : "none"},
                          {"checks", params.checks}};
    manifest["inputs"] = input_checksums;
    manifest["output_checksum"] = file_checksum(out);
    write_manifest(out, manifest, !flags.no_timestamp);
    std::cout << matrix.pairs.size() << " pairs over " << matrix.ids.size()
              << " images\n";
    return 0;
}

json distribution_to_json(const LabelDistribution& d) {
    json j = {{"label", to_string(d.label)}, {"count", d.count},
              {"infinite_count", d.infinite_count}, {"mean", d.mean},
              {"std", d.stddev}, {"min", d.min}, {"max", d.max}};
    if (!d.bucket.empty()) j["bucket"] = d.bucket;
    return j;
}

int cmd_curate(const std::string& matrix_path, const std::string& meta_path,
               const std::string& out_prefix, const OutlierRules& rules,
               double age_bucket, const CommonFlags& flags) {
    const SimilarityMatrix matrix = load_matrix_csv(matrix_path);
    const CohortMetadata meta = CohortMetadata::load_csv(meta_path);

    std::set<std::string> known;
    for (const ImageMetadata& m : meta.images) known.insert(m.image_id);
    std::vector<std::string> missing;
    for (const std::string& id : matrix.ids)
        if (!known.count(id)) missing.push_back(id);
    if (!missing.empty()) {
        std::string joined;
        for (const auto& id : missing) joined += (joined.empty() ? "" : ", ") + id;
        throw LabelCoverageGap("metadata missing for image ids: " + joined);
    }

    const PairLabelMap labels = label_pairs(meta);
    const auto distributions = summarize(matrix, labels, &meta, age_bucket);
    const OutlierReport report = flag_outliers(matrix, labels, rules);

    // KS tests between every pair of label distributions with finite samples.
    std::map<RelationshipLabel, std::vector<double>> samples;
    for (const PairScore& p : matrix.pairs) {
        if (std::isinf(p.distance)) continue;
        samples[labels.at(make_pair_key(p.image_a, p.image_b))].push_back(p.distance);
    }
    json ks_table = json::array();
    for (auto it = samples.begin(); it != samples.end(); ++it)
        for (auto jt = it; jt != samples.end(); ++jt) {
            const auto [d_stat, p_value] = ks_two_sample(it->second, jt->second);
            ks_table.push_back({{"a", to_string(it->first)},
                                {"b", to_string(jt->first)},
                                {"D", d_stat},
                                {"p", p_value}});
        }

    json out;
    out["matrix"] = matrix_path;
    out["matrix_checksum"] = file_checksum(matrix_path);
    out["rules"] = {{"sm_sigma", rules.sm_sigma},
                    {"ur_sigma", rules.ur_sigma},
                    {"duplicate_epsilon", rules.duplicate_epsilon},
                    {"sm_threshold", report.sm_threshold},
                    {"ur_threshold", report.ur_threshold}};
    out["distributions"] = json::array();
    for (const auto& d : distributions) out["distributions"].push_back(distribution_to_json(d));
    out["ks_tests"] = ks_table;
    out["flags"] = json::array();
    for (const OutlierFlag& f : report.flags)
        out["flags"].push_back({{"image_a", f.pair.first},
                                {"image_b", f.pair.second},
                                {"label", to_string(f.label)},
                                {"distance", std::isinf(f.distance) ? json("inf") : json(f.distance)},
                                {"verdict", to_string(f.verdict)}});

    const std::string json_path = out_prefix + ".json";
    {
        std::ofstream os(json_path, std::ios::trunc);
        if (!os) throw IoFailure("cannot write " + json_path);
        os << out.dump(2) << '\n';
    }
    const std::string text_path = out_prefix + ".txt";
    {
        std::ofstream os(text_path, std::ios::trunc);
        if (!os) throw IoFailure("cannot write " + text_path);
        os << "curation report for " << matrix_path << "\n\n";
        os << "label distributions (finite distances):\n";
        for (const auto& d : distributions) {
            os << "  " << to_string(d.label);
            if (!d.bucket.empty()) os << " [" << d.bucket << "]";
            os << ": n=" << d.count << " (+" << d.infinite_count << " inf)"
               << " mean=" << num(d.mean) << " std=" << num(d.stddev)
               << " min=" << num(d.min) << " max=" << num(d.max) << "\n";
        }
        os << "\nthresholds: same-like < " << num(report.sm_threshold)
           << ", unrelated-like > " << num(report.ur_threshold)
           << ", duplicate < " << num(rules.duplicate_epsilon) << "\n";
        os << "\nflags (" << report.flags.size() << "):\n";
        for (const OutlierFlag& f : report.flags)
            os << "  " << f.pair.first << "," << f.pair.second << " labeled "
               << to_string(f.label) << " d=" << num(f.distance) << " -> "
               << to_string(f.verdict) << "\n";
    }
    write_manifest(out_prefix, json{{"command", "curate"},
                                    {"matrix", matrix_path},
                                    {"matrix_checksum", file_checksum(matrix_path)},
                                    {"metadata", meta_path},
                                    {"metadata_checksum", file_checksum(meta_path)}},
                   !flags.no_timestamp);
    std::cout << report.flags.size() << " pairs flagged\n";
    return 0;
}

int cmd_selftest() {
    // Quick bundled property checks; the full suites live in the test tree.
    int failures = 0;
    auto check = [&](bool ok, const char* name) {
        std::cout << (ok ? "ok   " : "FAIL ") << name << "\n";
        if (!ok) ++failures;
    };

    // Rank invariance under a monotone map.
    {
        Rng rng(1);
        bool ok = true;
        for (int trial = 0; trial < 100 && ok; ++trial) {
            RawHistogram raw{};
            for (double& v : raw) v = rng.uniform();
            RawHistogram mapped{};
            for (int i = 0; i < 64; ++i) mapped[i] = 3.0 * raw[i] * raw[i] + 7.0;
            ok = rank_order(raw) == rank_order(mapped);
        }
        check(ok, "rank-order monotone invariance");
    }
    // SGV round-trip.
    {
        PhantomSpec spec;
        spec.seed = 42;
        spec.dims = {12, 12, 12};
        spec.num_blobs = 3;
        const Volume v = make_phantom(spec);
        const std::string tmp =
            (fs::temp_directory_path() / "sigprint_selftest.sgv").string();
        save_volume(v, tmp);
        const Volume w = load_volume(tmp);
        fs::remove(tmp);
        check(v.dims == w.dims && v.data == w.data, "volume round-trip");
    }
    // KS on identical samples.
    {
        const std::vector<double> x = {1.0, 2.0, 3.0};
        const auto [d, p] = ks_two_sample(x, x);
        check(d == 0.0 && p == 1.0, "ks identical samples");
    }
    return failures == 0 ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"3D keypoint signatures and soft-Jaccard dataset curation"};
    app.require_subcommand(1);

    CommonFlags flags;

    // phantom
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic blob volume");
    PhantomSpec spec;
    phantom->add_option("--seed", spec.seed, "RNG seed")->required();
    phantom->add_option("--blobs", spec.num_blobs, "Number of Gaussian blobs");
    phantom->add_option("--scale-min", spec.blob_scale_min, "Min blob sigma (voxels)");
    phantom->add_option("--scale-max", spec.blob_scale_max, "Max blob sigma (voxels)");
    phantom->add_option("--intensity-lo", spec.intensity_lo, "Min blob amplitude");
    phantom->add_option("--intensity-hi", spec.intensity_hi, "Max blob amplitude");
    phantom->add_option("--noise", spec.noise_sigma, "Additive Gaussian noise std");
    phantom->add_option("--dims", spec.dims, "Volume dims (nx ny nz)");
    std::string phantom_out;
    phantom->add_option("--out", phantom_out, "Output .sgv path")->required();
    add_common(phantom, flags);

    // extract
    auto* extract = app.add_subcommand("extract", "Extract a keypoint signature");
    std::string volume_path, extract_out, image_id;
    ScaleSpaceParams ssp;
    extract->add_option("volume", volume_path, "Input volume (.sgv or .nii)")->required();
    extract->add_option("--out", extract_out, "Output .sgs path")->required();
    extract->add_option("--id", image_id, "Image id (default: input stem)");
    extract->add_option("--base-sigma", ssp.base_sigma, "Base blur sigma");
    extract->add_option("--scales-per-octave", ssp.scales_per_octave, "Scales per octave");
    extract->add_option("--octaves", ssp.num_octaves, "Octave count (0 = auto)");
    extract->add_option("--contrast", ssp.contrast_threshold,
                        "Contrast threshold (fraction of robust range)");
    extract->add_option("--edge-ratio", ssp.edge_ratio_threshold,
                        "Hessian eigenvalue spread threshold");
    add_common(extract, flags);

    // pairwise
    auto* pairwise = app.add_subcommand("pairwise", "All-pairs soft Jaccard matrix");
    std::vector<std::string> pw_inputs;
    std::string pw_out, pw_mode = "soft";
    SoftJaccardParams jp;
    std::uint64_t pw_seed = 0;
    pairwise->add_option("inputs", pw_inputs, "Signature files or directories")
        ->required();
    pairwise->add_option("--out", pw_out, "Output CSV path")->required();
    pairwise->add_option("--k", jp.k, "Neighbors per query");
    pairwise->add_option("--mode", pw_mode, "soft | hard")
        ->check(CLI::IsMember({"soft", "hard"}));
    pairwise->add_option("--checks", jp.checks, "Leaf-visit budget per query");
    pairwise->add_option("--seed", pw_seed, "Forest RNG seed")->required();
    add_common(pairwise, flags);

    // curate
    auto* curate = app.add_subcommand("curate", "Flag label inconsistencies");
    std::string matrix_path, meta_path, out_prefix;
    OutlierRules rules;
    double age_bucket = 0.0;
    curate->add_option("--matrix", matrix_path, "Pairwise matrix CSV")->required();
    curate->add_option("--meta", meta_path, "Cohort metadata CSV")->required();
    curate->add_option("--out", out_prefix, "Output path prefix")->required();
    curate->add_option("--sm-sigma", rules.sm_sigma, "Rule (a) sigma multiplier");
    curate->add_option("--ur-sigma", rules.ur_sigma, "Rule (b) sigma multiplier");
    curate->add_option("--dup-eps", rules.duplicate_epsilon, "Duplicate distance epsilon");
    curate->add_option("--age-bucket", age_bucket,
                       "Group distributions by |age difference| bucket (years)");
    add_common(curate, flags);

    auto* selftest = app.add_subcommand("selftest", "Run bundled property checks");
    (void)selftest;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        app.exit(e);
        return 2;
    }

    try {
        if (phantom->parsed()) return cmd_phantom(spec, phantom_out, flags);
        if (extract->parsed())
            return cmd_extract(volume_path, extract_out, image_id, ssp, flags);
        if (pairwise->parsed()) {
            jp.mode = pw_mode == "hard" ? MatchMode::Hard : MatchMode::Soft;
            return cmd_pairwise(pw_inputs, pw_out, jp, pw_seed, flags);
        }
        if (curate->parsed())
            return cmd_curate(matrix_path, meta_path, out_prefix, rules, age_bucket, flags);
        if (selftest->parsed()) return cmd_selftest();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
