#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "sigprint/descriptor.hpp"

namespace sigprint {

struct DescriptorRef {
    std::string image_id;
    std::uint32_t descriptor_index = 0;
};

struct Match {
    DescriptorRef query;
    DescriptorRef neighbor;
    double distance = 0.0; // L2 over rank values
};

/// Leaf-visit budget meaning "traverse everything"; with this budget
/// knn_query is exact and equals brute_force_knn.
inline constexpr std::uint32_t kUnboundedChecks =
    std::numeric_limits<std::uint32_t>::max();

struct ForestParams {
    std::uint32_t num_trees = 8;
    std::uint32_t max_leaf_size = 32;
    std::uint32_t top_variance_dims = 12; // split dim drawn from the top-k by variance
};

/// Forest of randomized variance-split trees over all descriptors of a
/// signature collection. Immutable after build; queries are thread-safe.
class KnnForest {
public:
    struct Entry {
        std::uint32_t image = 0; // index into image_ids()
        std::uint32_t descriptor = 0;
        std::array<std::uint8_t, 64> values{};
    };

    KnnForest(const std::vector<Signature>& signatures, std::uint64_t seed,
              ForestParams params = {}, int threads = 1);

    KnnForest(KnnForest&& other) noexcept
        : image_ids_(std::move(other.image_ids_)),
          image_rank_(std::move(other.image_rank_)),
          entries_(std::move(other.entries_)),
          image_sizes_(std::move(other.image_sizes_)),
          trees_(std::move(other.trees_)),
          params_(other.params_),
          seed_(other.seed_),
          max_depth_(other.max_depth_),
          query_count_(other.query_count_.load()) {}

    const std::vector<std::string>& image_ids() const { return image_ids_; }
    const std::vector<Entry>& entries() const { return entries_; }
    std::uint64_t seed() const { return seed_; }
    const ForestParams& params() const { return params_; }
    std::size_t image_descriptor_count(std::uint32_t image) const;

    /// Entry index for (image_id, descriptor_index); throws UnresolvableRef.
    std::size_t resolve(const DescriptorRef& ref) const;

    /// Approximate K nearest among descriptors of OTHER images, ascending
    /// distance, ties broken by (image_id, descriptor_index).
    std::vector<Match> query(std::size_t entry_index, std::uint32_t k,
                             std::uint32_t checks = 128) const;
    std::vector<Match> query(const DescriptorRef& ref, std::uint32_t k,
                             std::uint32_t checks = 128) const;

    /// Same, for a free-standing descriptor value vector; self_image
    /// (index into image_ids, or UINT32_MAX for none) is excluded.
    std::vector<Match> query_values(const std::array<std::uint8_t, 64>& values,
                                    std::uint32_t self_image, std::uint32_t k,
                                    std::uint32_t checks) const;

    std::uint64_t query_count() const { return query_count_.load(); }

    void save(const std::string& path) const;
    static KnnForest load(const std::string& path, int threads = 1);

    /// Max node depth over all trees (randomization slack diagnostic).
    std::uint32_t max_depth() const { return max_depth_; }

private:
    struct Node {
        std::int32_t split_dim = -1; // -1: leaf
        float split_value = 0.0f;
        std::uint32_t left = 0, right = 0;   // children when interior
        std::uint32_t begin = 0, count = 0;  // slice of the tree order when leaf
    };
    struct Tree {
        std::vector<Node> nodes;
        std::vector<std::uint32_t> order; // permutation of entry indices
        // Entries copied into leaf order so a leaf scan reads memory
        // sequentially; random access into the shared entry array dominates
        // query time once the collection outgrows the cache.
        std::vector<Entry> ordered;
    };

    KnnForest() = default;
    void build(int threads);
    std::uint32_t build_node(Tree& tree, std::uint32_t begin, std::uint32_t end,
                             std::uint32_t depth, class Rng& rng);

    std::vector<std::string> image_ids_;
    std::vector<std::uint32_t> image_rank_; // lexicographic rank of each image id
    std::vector<Entry> entries_;
    std::vector<std::size_t> image_sizes_;
    std::vector<Tree> trees_;
    ForestParams params_;
    std::uint64_t seed_ = 0;
    std::uint32_t max_depth_ = 0;
    mutable std::atomic<std::uint64_t> query_count_{0};
};

/// Exact K nearest among foreign descriptors; the verification oracle.
std::vector<Match> brute_force_knn(const std::vector<Signature>& signatures,
                                   const DescriptorRef& query, std::uint32_t k);

/// Per-descriptor adaptive bandwidth: distance to the nearest foreign
/// neighbor, floored at epsilon_floor. Indexed like forest.entries().
struct BandwidthTable {
    std::vector<double> alpha;
    double epsilon_floor = 1.0;
};

BandwidthTable compute_bandwidths(const KnnForest& forest,
                                  double epsilon_floor = 1.0,
                                  std::uint32_t checks = 128, int threads = 1);

/// Exact L2 distance between two rank vectors.
double rank_distance(const std::array<std::uint8_t, 64>& a,
                     const std::array<std::uint8_t, 64>& b);

} // namespace sigprint
