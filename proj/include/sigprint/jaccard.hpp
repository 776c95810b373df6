#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sigprint/index.hpp"

namespace sigprint {

enum class MatchMode { Soft, Hard };
enum class Symmetrize { None, Mean };

struct SoftJaccardParams {
    std::uint32_t k = 30;
    MatchMode mode = MatchMode::Soft;
    Symmetrize symmetrize = Symmetrize::Mean;
    std::uint32_t checks = 128;
};

struct PairScore {
    std::string image_a;
    std::string image_b;
    double intersection = 0.0;
    double jaccard = 0.0;   // in [0, 1]
    double distance = 0.0;  // -log(jaccard); +inf when jaccard == 0
};

struct SimilarityMatrix {
    std::vector<std::string> ids;       // ordered
    std::vector<PairScore> pairs;       // upper triangle, (i, j) with i < j
    SoftJaccardParams params;
    std::uint64_t seed = 0;

    const PairScore& at(std::size_t i, std::size_t j) const;
};

double jaccard_to_distance(double jaccard);

/// Directed soft intersection |A cap B| summed over descriptors of A
/// (Gaussian-weighted nearest-neighbor overlap, 1 per matched descriptor
/// in hard mode).
double soft_intersection(const Signature& a, const Signature& b,
                         const KnnForest& forest, const BandwidthTable& bw,
                         const SoftJaccardParams& p);

PairScore jaccard_score(const Signature& a, const Signature& b,
                        const KnnForest& forest, const BandwidthTable& bw,
                        const SoftJaccardParams& p);

/// All-pairs similarity through one global forest and a single K-NN query
/// pass (one query per descriptor, reused across every pair restriction).
SimilarityMatrix pairwise_matrix(const std::vector<Signature>& signatures,
                                 const SoftJaccardParams& p, std::uint64_t seed,
                                 int threads = 1,
                                 double bandwidth_epsilon_floor = 1.0);

/// CSV with header image_a,image_b,jaccard,distance; +inf serialized "inf".
void save_matrix_csv(const SimilarityMatrix& m, const std::string& path);
SimilarityMatrix load_matrix_csv(const std::string& path);

} // namespace sigprint
