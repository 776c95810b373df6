#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "sigprint/jaccard.hpp"
#include "sigprint/rng.hpp"

using namespace sigprint;

namespace {

std::array<std::uint8_t, 64> random_ranks(Rng& rng) {
    std::array<std::uint8_t, 64> v{};
    std::iota(v.begin(), v.end(), 0);
    for (std::size_t i = 63; i > 0; --i)
        std::swap(v[i], v[rng.uniform_index(i + 1)]);
    return v;
}

Signature synthetic_signature(const std::string& id, std::size_t n, Rng& rng) {
    Signature sig;
    sig.image_id = id;
    sig.descriptors.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sig.descriptors[i].values = random_ranks(rng);
        sig.descriptors[i].keypoint_index = static_cast<std::uint32_t>(i);
    }
    sig.keypoints.resize(n);
    return sig;
}

std::array<std::uint8_t, 64> near_copy(const std::array<std::uint8_t, 64>& v) {
    // Swap one adjacent rank pair: squared distance exactly 2.
    auto w = v;
    for (std::size_t i = 0; i < 64; ++i)
        if (w[i] + 1 < 64)
            for (std::size_t j = 0; j < 64; ++j)
                if (w[j] == w[i] + 1) {
                    std::swap(w[i], w[j]);
                    return w;
                }
    return w;
}

} // namespace

TEST_CASE("jaccard to distance") {
    CHECK(jaccard_to_distance(1.0) == 0.0);
    CHECK(jaccard_to_distance(0.25) == doctest::Approx(std::log(4.0)));
    CHECK(std::isinf(jaccard_to_distance(0.0)));
}

TEST_CASE("identical signatures score jaccard one") {
    Rng rng(1);
    const Signature base = synthetic_signature("a", 12, rng);
    std::vector<Signature> sigs{base, base, base};
    sigs[1].image_id = "b";
    sigs[2].image_id = "c";
    const SimilarityMatrix m = pairwise_matrix(sigs, SoftJaccardParams{}, 99);
    REQUIRE(m.pairs.size() == 3);
    for (const PairScore& p : m.pairs) {
        CHECK(p.jaccard == doctest::Approx(1.0));
        CHECK(p.distance == doctest::Approx(0.0));
        CHECK(p.intersection == doctest::Approx(12.0));
    }
    CHECK(&m.at(0, 1) == &m.at(1, 0)); // symmetric lookup
}

TEST_CASE("soft intersection matches a test-side reimplementation") {
    Rng rng(17);
    std::vector<Signature> sigs{synthetic_signature("a", 6, rng),
                                synthetic_signature("b", 5, rng),
                                synthetic_signature("c", 4, rng)};
    const KnnForest forest(sigs, 3);
    const BandwidthTable bw = compute_bandwidths(forest, 1.0, kUnboundedChecks);
    SoftJaccardParams p;
    p.checks = kUnboundedChecks;

    // Hand oracle straight from the definition, using brute-force search:
    // I(A->B) = sum over a of max_{b in KNN(a) and B} exp(-d^2 / 2 alpha^2).
    auto directed = [&](const Signature& a, const Signature& b) {
        double total = 0.0;
        for (std::uint32_t d = 0; d < a.descriptors.size(); ++d) {
            const auto knn = brute_force_knn(sigs, {a.image_id, d}, p.k);
            double alpha = std::numeric_limits<double>::infinity();
            for (const Signature& s : sigs)
                if (s.image_id != a.image_id)
                    for (const Descriptor& q : s.descriptors)
                        alpha = std::min(alpha,
                                         rank_distance(a.descriptors[d].values, q.values));
            alpha = std::max(alpha, 1.0);
            double best = 0.0;
            for (const Match& m : knn)
                if (m.neighbor.image_id == b.image_id)
                    best = std::max(best, std::exp(-0.5 * (m.distance / alpha) *
                                                   (m.distance / alpha)));
            total += best;
        }
        return total;
    };

    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            if (i == j) continue;
            CHECK(soft_intersection(sigs[i], sigs[j], forest, bw, p) ==
                  doctest::Approx(directed(sigs[i], sigs[j])).epsilon(1e-12));
        }

    // And the full score: symmetrized intersection over the union.
    const PairScore score = jaccard_score(sigs[0], sigs[1], forest, bw, p);
    const double inter = 0.5 * (directed(sigs[0], sigs[1]) + directed(sigs[1], sigs[0]));
    CHECK(score.intersection == doctest::Approx(inter).epsilon(1e-12));
    CHECK(score.jaccard == doctest::Approx(inter / (6.0 + 5.0 - inter)).epsilon(1e-12));
    CHECK(score.distance == doctest::Approx(-std::log(score.jaccard)));
}

TEST_CASE("soft weights never exceed hard weights") {
    Rng rng(29);
    std::vector<Signature> sigs{synthetic_signature("a", 15, rng),
                                synthetic_signature("b", 15, rng),
                                synthetic_signature("c", 15, rng),
                                synthetic_signature("d", 15, rng)};
    SoftJaccardParams soft;
    SoftJaccardParams hard;
    hard.mode = MatchMode::Hard;
    const SimilarityMatrix ms = pairwise_matrix(sigs, soft, 7);
    const SimilarityMatrix mh = pairwise_matrix(sigs, hard, 7);
    REQUIRE(ms.pairs.size() == mh.pairs.size());
    for (std::size_t i = 0; i < ms.pairs.size(); ++i) {
        CHECK(ms.pairs[i].intersection <= mh.pairs[i].intersection + 1e-12);
        CHECK(ms.pairs[i].jaccard <= mh.pairs[i].jaccard + 1e-12);
    }
}

TEST_CASE("pair with no cross matches scores zero and infinite distance") {
    Rng rng(31);
    Signature a = synthetic_signature("a", 2, rng);
    Signature b = synthetic_signature("b", 2, rng);
    // Decoy image holding exact copies of everything: with k = 1 every
    // nearest neighbor lands in the decoy, so A and B never touch.
    Signature c;
    c.image_id = "c";
    for (const auto& d : a.descriptors) c.descriptors.push_back(d);
    for (const auto& d : b.descriptors) c.descriptors.push_back(d);
    c.keypoints.resize(c.descriptors.size());

    std::vector<Signature> sigs{a, b, c};
    SoftJaccardParams p;
    p.k = 1;
    p.checks = kUnboundedChecks;
    const SimilarityMatrix m = pairwise_matrix(sigs, p, 1);
    const PairScore& ab = m.at(0, 1);
    CHECK(ab.intersection == 0.0);
    CHECK(ab.jaccard == 0.0);
    CHECK(std::isinf(ab.distance));

    // "inf" survives the CSV round trip.
    const auto path =
        (std::filesystem::temp_directory_path() / "sigprint_test_inf.csv").string();
    save_matrix_csv(m, path);
    const SimilarityMatrix back = load_matrix_csv(path);
    CHECK(std::isinf(back.at(0, 1).distance));
    CHECK(back.at(0, 1).jaccard == 0.0);
    std::filesystem::remove(path);
}

TEST_CASE("hard mode on set-like signatures reproduces set jaccard") {
    // Pool of far-apart descriptors; images are subsets sharing elements
    // pairwise. A sink image holds a near-copy of every pool element so
    // unshared descriptors match nothing in the triple.
    Rng rng(43);
    std::vector<std::array<std::uint8_t, 64>> pool;
    for (int i = 0; i < 6; ++i) pool.push_back(random_ranks(rng));

    auto subset = [&](const std::string& id, std::initializer_list<int> idx) {
        Signature s;
        s.image_id = id;
        for (int i : idx) {
            Descriptor d;
            d.values = pool[static_cast<std::size_t>(i)];
            s.descriptors.push_back(d);
        }
        s.keypoints.resize(s.descriptors.size());
        return s;
    };
    const Signature a = subset("a", {0, 1, 2, 3});
    const Signature b = subset("b", {2, 3, 4});
    const Signature c = subset("c", {0, 4, 5});
    Signature sink;
    sink.image_id = "zz-sink";
    for (const auto& v : pool) {
        Descriptor d;
        d.values = near_copy(v);
        sink.descriptors.push_back(d);
    }
    sink.keypoints.resize(sink.descriptors.size());

    std::vector<Signature> sigs{a, b, c, sink};
    const KnnForest forest(sigs, 5);
    const BandwidthTable bw = compute_bandwidths(forest, 1.0, kUnboundedChecks);
    SoftJaccardParams p;
    p.k = 1;
    p.mode = MatchMode::Hard;
    p.checks = kUnboundedChecks;

    auto set_jaccard = [](double shared, double na, double nb) {
        return shared / (na + nb - shared);
    };
    const double jab = jaccard_score(sigs[0], sigs[1], forest, bw, p).jaccard;
    const double jac = jaccard_score(sigs[0], sigs[2], forest, bw, p).jaccard;
    const double jbc = jaccard_score(sigs[1], sigs[2], forest, bw, p).jaccard;
    CHECK(jab == doctest::Approx(set_jaccard(2, 4, 3)));
    CHECK(jac == doctest::Approx(set_jaccard(1, 4, 3)));
    CHECK(jbc == doctest::Approx(set_jaccard(1, 3, 3)));
    // 1 - J is a metric on sets: check all triangle inequalities.
    CHECK(1.0 - jab <= (1.0 - jac) + (1.0 - jbc) + 1e-12);
    CHECK(1.0 - jac <= (1.0 - jab) + (1.0 - jbc) + 1e-12);
    CHECK(1.0 - jbc <= (1.0 - jab) + (1.0 - jac) + 1e-12);
}

TEST_CASE("duplicate image is the closest pair in the matrix") {
    Rng rng(53);
    std::vector<Signature> sigs{synthetic_signature("a", 20, rng),
                                synthetic_signature("b", 20, rng),
                                synthetic_signature("c", 20, rng)};
    Signature dup = sigs[0];
    dup.image_id = "a-copy";
    sigs.push_back(dup);
    const SimilarityMatrix m = pairwise_matrix(sigs, SoftJaccardParams{}, 13);
    const double dup_dist = m.at(0, 3).distance;
    CHECK(dup_dist == doctest::Approx(0.0));
    for (const PairScore& p : m.pairs)
        if (!(p.image_a == "a" && p.image_b == "a-copy"))
            CHECK(p.distance > dup_dist);
}

TEST_CASE("matrix is deterministic and thread invariant") {
    Rng rng(61);
    std::vector<Signature> sigs;
    for (int i = 0; i < 5; ++i)
        sigs.push_back(synthetic_signature("img-" + std::to_string(i), 25, rng));
    const SimilarityMatrix a = pairwise_matrix(sigs, SoftJaccardParams{}, 99, 1);
    const SimilarityMatrix b = pairwise_matrix(sigs, SoftJaccardParams{}, 99, 4);
    REQUIRE(a.pairs.size() == b.pairs.size());
    for (std::size_t i = 0; i < a.pairs.size(); ++i) {
        CHECK(a.pairs[i].jaccard == b.pairs[i].jaccard);
        CHECK(a.pairs[i].intersection == b.pairs[i].intersection);
    }
}

TEST_CASE("matrix csv round-trip") {
    Rng rng(71);
    std::vector<Signature> sigs{synthetic_signature("x", 8, rng),
                                synthetic_signature("y", 8, rng),
                                synthetic_signature("z", 8, rng)};
    const SimilarityMatrix m = pairwise_matrix(sigs, SoftJaccardParams{}, 5);
    const auto path =
        (std::filesystem::temp_directory_path() / "sigprint_test_mat.csv").string();
    save_matrix_csv(m, path);
    const SimilarityMatrix back = load_matrix_csv(path);
    REQUIRE(back.pairs.size() == m.pairs.size());
    for (std::size_t i = 0; i < m.pairs.size(); ++i) {
        CHECK(back.pairs[i].image_a == m.pairs[i].image_a);
        CHECK(back.pairs[i].image_b == m.pairs[i].image_b);
        CHECK(back.pairs[i].jaccard == m.pairs[i].jaccard);   // %.17g is lossless
        CHECK(back.pairs[i].distance == m.pairs[i].distance);
    }
    CHECK(back.ids == m.ids);
    std::filesystem::remove(path);
}

TEST_CASE("input validation") {
    Rng rng(81);
    std::vector<Signature> one{synthetic_signature("solo", 4, rng)};
    CHECK_THROWS_AS(pairwise_matrix(one, SoftJaccardParams{}, 1), EmptyCollection);

    std::vector<Signature> with_empty{synthetic_signature("a", 4, rng), Signature{}};
    with_empty[1].image_id = "empty";
    CHECK_THROWS_AS(pairwise_matrix(with_empty, SoftJaccardParams{}, 1), EmptySignature);
}
