#include "sigprint/jaccard.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "sigprint/parallel.hpp"

namespace sigprint {

namespace {

std::uint32_t image_index_of(const KnnForest& forest, const std::string& image_id) {
    const auto& ids = forest.image_ids();
    for (std::uint32_t i = 0; i < ids.size(); ++i)
        if (ids[i] == image_id) return i;
    throw NotIndexed("image not indexed: " + image_id);
}

std::size_t entry_offset_of(const KnnForest& forest, std::uint32_t image) {
    std::size_t offset = 0;
    for (std::uint32_t i = 0; i < image; ++i)
        offset += forest.image_descriptor_count(i);
    return offset;
}

double match_weight(double distance, double alpha, MatchMode mode) {
    if (mode == MatchMode::Hard) return 1.0;
    const double z = distance / alpha;
    return std::exp(-0.5 * z * z);
}

std::string format_double(double v) {
    if (std::isinf(v)) return "inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

double jaccard_to_distance(double jaccard) {
    if (jaccard <= 0.0) return std::numeric_limits<double>::infinity();
    return -std::log(jaccard);
}

const PairScore& SimilarityMatrix::at(std::size_t i, std::size_t j) const {
    const std::string& a = ids[std::min(i, j)];
    const std::string& b = ids[std::max(i, j)];
    for (const PairScore& p : pairs)
        if (p.image_a == a && p.image_b == b) return p;
    throw Error("pair not present in matrix: " + a + "," + b);
}

double soft_intersection(const Signature& a, const Signature& b,
                         const KnnForest& forest, const BandwidthTable& bw,
                         const SoftJaccardParams& p) {
    const std::uint32_t ia = image_index_of(forest, a.image_id);
    const std::uint32_t ib = image_index_of(forest, b.image_id);
    const std::size_t offset_a = entry_offset_of(forest, ia);
    const std::size_t count_a = forest.image_descriptor_count(ia);
    if (bw.alpha.size() != forest.entries().size())
        throw NotIndexed("bandwidth table does not cover the forest entries");

    // Self overlap: every descriptor matches itself at distance 0.
    if (ia == ib) return static_cast<double>(count_a);

    double total = 0.0;
    for (std::size_t d = 0; d < count_a; ++d) {
        const std::size_t entry = offset_a + d;
        const auto matches = forest.query(entry, p.k, p.checks);
        double best = 0.0;
        for (const Match& m : matches) {
            if (m.neighbor.image_id != forest.image_ids()[ib]) continue;
            best = std::max(best,
                            match_weight(m.distance, bw.alpha[entry], p.mode));
            if (p.mode == MatchMode::Hard) break;
        }
        total += best;
    }
    return total;
}

namespace {

PairScore make_pair_score(const std::string& id_a, const std::string& id_b,
                          double inter_ab, double inter_ba, double size_a,
                          double size_b, const SoftJaccardParams& p) {
    if (size_a <= 0.0) throw EmptySignature("signature has no descriptors: " + id_a);
    if (size_b <= 0.0) throw EmptySignature("signature has no descriptors: " + id_b);
    const double inter = (p.symmetrize == Symmetrize::Mean)
                             ? 0.5 * (inter_ab + inter_ba)
                             : inter_ab;
    PairScore score;
    score.image_a = id_a;
    score.image_b = id_b;
    score.intersection = inter;
    const double denom = size_a + size_b - inter;
    score.jaccard = denom > 0.0 ? std::clamp(inter / denom, 0.0, 1.0) : 1.0;
    score.distance = jaccard_to_distance(score.jaccard);
    return score;
}

} // namespace

PairScore jaccard_score(const Signature& a, const Signature& b,
                        const KnnForest& forest, const BandwidthTable& bw,
                        const SoftJaccardParams& p) {
    const double inter_ab = soft_intersection(a, b, forest, bw, p);
    const double inter_ba = (p.symmetrize == Symmetrize::Mean)
                                ? soft_intersection(b, a, forest, bw, p)
                                : 0.0;
    return make_pair_score(a.image_id, b.image_id, inter_ab, inter_ba,
                           static_cast<double>(a.descriptors.size()),
                           static_cast<double>(b.descriptors.size()), p);
}

SimilarityMatrix pairwise_matrix(const std::vector<Signature>& signatures,
                                 const SoftJaccardParams& p, std::uint64_t seed,
                                 int threads, double bandwidth_epsilon_floor) {
    if (signatures.size() < 2)
        throw EmptyCollection("pairwise matrix needs at least 2 signatures");
    for (const Signature& s : signatures)
        if (s.descriptors.empty())
            throw EmptySignature("signature has no descriptors: " + s.image_id);

    const KnnForest forest(signatures, seed, {}, threads);
    const BandwidthTable bw =
        compute_bandwidths(forest, bandwidth_epsilon_floor, p.checks, threads);

    const std::size_t n = signatures.size();
    const std::size_t total = forest.entries().size();

    // One K-NN query per descriptor; per-query results are kept so the
    // aggregation below can run in a fixed order independent of threading.
    struct BestPerImage {
        std::vector<std::pair<std::uint32_t, double>> weights; // (image, max weight)
    };
    std::vector<BestPerImage> per_entry(total);
    std::unordered_map<std::string, std::uint32_t> id_to_index;
    for (std::uint32_t i = 0; i < forest.image_ids().size(); ++i)
        id_to_index[forest.image_ids()[i]] = i;

    parallel_for(total, threads, [&](std::size_t e) {
        const auto matches = forest.query(e, p.k, p.checks);
        std::vector<std::pair<std::uint32_t, double>> best;
        for (const Match& m : matches) {
            const std::uint32_t img = id_to_index.at(m.neighbor.image_id);
            const double w = match_weight(m.distance, bw.alpha[e], p.mode);
            auto it = std::find_if(best.begin(), best.end(),
                                   [&](const auto& q) { return q.first == img; });
            if (it == best.end())
                best.emplace_back(img, w);
            else
                it->second = std::max(it->second, w);
        }
        per_entry[e].weights = std::move(best);
    });

    // Directed intersections, accumulated in entry order.
    std::vector<double> directed(n * n, 0.0);
    std::size_t entry = 0;
    for (std::size_t img = 0; img < n; ++img) {
        const std::size_t count = forest.image_descriptor_count(static_cast<std::uint32_t>(img));
        for (std::size_t d = 0; d < count; ++d, ++entry)
            for (const auto& [other, w] : per_entry[entry].weights)
                directed[img * n + other] += w;
    }

    SimilarityMatrix out;
    out.ids = forest.image_ids();
    out.params = p;
    out.seed = seed;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            out.pairs.push_back(make_pair_score(
                out.ids[i], out.ids[j], directed[i * n + j], directed[j * n + i],
                static_cast<double>(signatures[i].descriptors.size()),
                static_cast<double>(signatures[j].descriptors.size()), p));
    return out;
}

void save_matrix_csv(const SimilarityMatrix& m, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoFailure("cannot open " + path + " for writing");
    os << "image_a,image_b,jaccard,distance\n";
    for (const PairScore& p : m.pairs)
        os << p.image_a << ',' << p.image_b << ',' << format_double(p.jaccard)
           << ',' << format_double(p.distance) << '\n';
    if (!os) throw IoFailure("write failed for " + path);
}

SimilarityMatrix load_matrix_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoFailure("cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "image_a,image_b,jaccard,distance")
        throw CorruptHeader("unexpected matrix CSV header in " + path);

    SimilarityMatrix m;
    std::unordered_map<std::string, bool> seen;
    auto note_id = [&](const std::string& id) {
        if (!seen.count(id)) {
            seen[id] = true;
            m.ids.push_back(id);
        }
    };
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        PairScore p;
        std::string jac, dist;
        if (!std::getline(ss, p.image_a, ',') || !std::getline(ss, p.image_b, ',') ||
            !std::getline(ss, jac, ',') || !std::getline(ss, dist, ','))
            throw CorruptHeader("malformed matrix CSV row: " + line);
        p.jaccard = std::stod(jac);
        p.distance = (dist == "inf") ? std::numeric_limits<double>::infinity()
                                     : std::stod(dist);
        note_id(p.image_a);
        note_id(p.image_b);
        m.pairs.push_back(std::move(p));
    }
    return m;
}

} // namespace sigprint
