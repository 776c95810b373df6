#include "sigprint/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <queue>

#include "sigprint/parallel.hpp"
#include "sigprint/rng.hpp"

namespace sigprint {

namespace {

std::uint32_t squared_rank_distance(const std::array<std::uint8_t, 64>& a,
                                    const std::array<std::uint8_t, 64>& b) {
    std::uint32_t acc = 0;
    for (int i = 0; i < 64; ++i) {
        const int d = static_cast<int>(a[static_cast<std::size_t>(i)]) -
                      static_cast<int>(b[static_cast<std::size_t>(i)]);
        acc += static_cast<std::uint32_t>(d * d);
    }
    return acc;
}

// Per-thread visited stamps so concurrent queries share no state. Stamps
// are 8-bit so the array stays cache-resident for large collections (the
// dedup lookup is a random access per offered entry and dominates query
// latency growth otherwise); the epoch counter wrap re-zeroes the array,
// which amortizes to a few bytes per query.
struct Scratch {
    const void* owner = nullptr;
    std::vector<std::uint8_t> stamp;
    std::uint8_t counter = 0;
};

Scratch& scratch_for(const void* owner, std::size_t n) {
    thread_local Scratch s;
    if (s.owner != owner || s.stamp.size() != n) {
        s.owner = owner;
        s.stamp.assign(n, 0);
        s.counter = 0;
    }
    if (s.counter == std::numeric_limits<std::uint8_t>::max()) {
        std::fill(s.stamp.begin(), s.stamp.end(), 0);
        s.counter = 0;
    }
    return s;
}

struct Candidate {
    std::uint32_t dist2;
    std::uint32_t image_rank;
    std::uint32_t descriptor;
    std::uint32_t entry;

    bool operator<(const Candidate& other) const {
        if (dist2 != other.dist2) return dist2 < other.dist2;
        if (image_rank != other.image_rank) return image_rank < other.image_rank;
        return descriptor < other.descriptor;
    }
};

} // namespace

double rank_distance(const std::array<std::uint8_t, 64>& a,
                     const std::array<std::uint8_t, 64>& b) {
    return std::sqrt(static_cast<double>(squared_rank_distance(a, b)));
}

KnnForest::KnnForest(const std::vector<Signature>& signatures, std::uint64_t seed,
                     ForestParams params, int threads)
    : params_(params), seed_(seed) {
    for (const Signature& sig : signatures) {
        const auto image = static_cast<std::uint32_t>(image_ids_.size());
        image_ids_.push_back(sig.image_id);
        image_sizes_.push_back(sig.descriptors.size());
        for (std::size_t d = 0; d < sig.descriptors.size(); ++d) {
            Entry e;
            e.image = image;
            e.descriptor = static_cast<std::uint32_t>(d);
            e.values = sig.descriptors[d].values;
            entries_.push_back(e);
        }
    }
    if (entries_.empty()) throw EmptyCollection("no descriptors to index");
    build(threads);
}

void KnnForest::build(int threads) {
    // Lexicographic rank of each image id, for distance tie-breaks.
    {
        std::vector<std::uint32_t> order(image_ids_.size());
        std::iota(order.begin(), order.end(), 0u);
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            return image_ids_[a] < image_ids_[b];
        });
        image_rank_.assign(image_ids_.size(), 0);
        for (std::uint32_t r = 0; r < order.size(); ++r) image_rank_[order[r]] = r;
    }
    trees_.assign(params_.num_trees, Tree{});
    std::vector<std::uint32_t> depths(params_.num_trees, 0);
    parallel_for(params_.num_trees, threads, [&](std::size_t t) {
        Tree& tree = trees_[t];
        tree.order.resize(entries_.size());
        std::iota(tree.order.begin(), tree.order.end(), 0u);
        Rng rng(seed_ ^ ((t + 1) * 0x9e3779b97f4a7c15ULL));
        const std::uint32_t depth =
            build_node(tree, 0, static_cast<std::uint32_t>(tree.order.size()), 0, rng);
        depths[t] = depth;
        tree.ordered.resize(tree.order.size());
        for (std::size_t i = 0; i < tree.order.size(); ++i)
            tree.ordered[i] = entries_[tree.order[i]];
    });
    max_depth_ = *std::max_element(depths.begin(), depths.end());
}

std::uint32_t KnnForest::build_node(Tree& tree, std::uint32_t begin, std::uint32_t end,
                                    std::uint32_t depth, Rng& rng) {
    const std::uint32_t node_index = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.push_back(Node{});
    const std::uint32_t count = end - begin;
    if (count <= params_.max_leaf_size) {
        tree.nodes[node_index].begin = begin;
        tree.nodes[node_index].count = count;
        return depth;
    }

    // Mean and variance per dimension over this node's entries.
    std::array<double, 64> sum{}, sumsq{};
    for (std::uint32_t i = begin; i < end; ++i) {
        const auto& v = entries_[tree.order[i]].values;
        for (int d = 0; d < 64; ++d) {
            const double x = v[static_cast<std::size_t>(d)];
            sum[static_cast<std::size_t>(d)] += x;
            sumsq[static_cast<std::size_t>(d)] += x * x;
        }
    }
    std::array<int, 64> dims;
    std::iota(dims.begin(), dims.end(), 0);
    auto variance = [&](int d) {
        const double m = sum[static_cast<std::size_t>(d)] / count;
        return sumsq[static_cast<std::size_t>(d)] / count - m * m;
    };
    std::sort(dims.begin(), dims.end(), [&](int a, int b) {
        const double va = variance(a), vb = variance(b);
        if (va != vb) return va > vb;
        return a < b;
    });
    std::uint32_t usable = 0;
    while (usable < params_.top_variance_dims &&
           variance(dims[usable]) > 1e-12)
        ++usable;
    if (usable == 0) {
        // All points identical along every axis; keep as a large leaf.
        tree.nodes[node_index].begin = begin;
        tree.nodes[node_index].count = count;
        return depth;
    }
    const int split_dim = dims[static_cast<std::size_t>(rng.uniform_index(usable))];
    const float split_value =
        static_cast<float>(sum[static_cast<std::size_t>(split_dim)] / count);

    auto* first = tree.order.data() + begin;
    auto* last = tree.order.data() + end;
    auto* mid = std::stable_partition(first, last, [&](std::uint32_t e) {
        return entries_[e].values[static_cast<std::size_t>(split_dim)] < split_value;
    });
    const std::uint32_t split = begin + static_cast<std::uint32_t>(mid - first);
    if (split == begin || split == end) {
        tree.nodes[node_index].begin = begin;
        tree.nodes[node_index].count = count;
        return depth;
    }

    tree.nodes[node_index].split_dim = split_dim;
    tree.nodes[node_index].split_value = split_value;
    const std::uint32_t left = build_node(tree, begin, split, depth + 1, rng);
    tree.nodes[node_index].left = static_cast<std::uint32_t>(
        node_index + 1); // children are emitted depth-first, left first
    const std::uint32_t right_index = static_cast<std::uint32_t>(tree.nodes.size());
    const std::uint32_t right = build_node(tree, split, end, depth + 1, rng);
    tree.nodes[node_index].right = right_index;
    return std::max(left, right);
}

std::size_t KnnForest::image_descriptor_count(std::uint32_t image) const {
    return image_sizes_[image];
}

std::size_t KnnForest::resolve(const DescriptorRef& ref) const {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < image_ids_.size(); ++i) {
        if (image_ids_[i] == ref.image_id) {
            if (ref.descriptor_index >= image_sizes_[i])
                throw UnresolvableRef("descriptor index out of range for " + ref.image_id);
            return offset + ref.descriptor_index;
        }
        offset += image_sizes_[i];
    }
    throw UnresolvableRef("image not indexed: " + ref.image_id);
}

std::vector<Match> KnnForest::query(const DescriptorRef& ref, std::uint32_t k,
                                    std::uint32_t checks) const {
    auto matches = query(resolve(ref), k, checks);
    for (Match& m : matches) m.query = ref;
    return matches;
}

std::vector<Match> KnnForest::query(std::size_t entry_index, std::uint32_t k,
                                    std::uint32_t checks) const {
    const Entry& e = entries_[entry_index];
    return query_values(e.values, e.image, k, checks);
}

std::vector<Match> KnnForest::query_values(const std::array<std::uint8_t, 64>& values,
                                           std::uint32_t self_image, std::uint32_t k,
                                           std::uint32_t checks) const {
    query_count_.fetch_add(1, std::memory_order_relaxed);

    const std::vector<std::uint32_t>& image_rank = image_rank_;

    Scratch& scratch = scratch_for(this, entries_.size());
    const std::uint8_t stamp = ++scratch.counter;

    // Worst candidate on top, so the heap keeps the best k seen so far.
    std::priority_queue<Candidate> best;
    auto kth_dist2 = [&]() -> std::uint32_t {
        return best.size() == k ? best.top().dist2
                                : std::numeric_limits<std::uint32_t>::max();
    };
    auto offer = [&](std::uint32_t entry, const Entry& e) {
        if (scratch.stamp[entry] == stamp) return;
        scratch.stamp[entry] = stamp;
        if (e.image == self_image) return;
        Candidate c{squared_rank_distance(values, e.values), image_rank[e.image],
                    e.descriptor, entry};
        if (best.size() < k) {
            best.push(c);
        } else if (c < best.top()) {
            best.pop();
            best.push(c);
        }
    };

    // Best-bin-first across all trees: min-heap of pending branches keyed
    // by a squared lower bound on the distance to the branch's region.
    // The bound accumulates, per dimension, the largest margin by which the
    // query violates the branch's halfspace constraints; near-side steps
    // contribute nothing. Constraint chains live in a per-query arena so a
    // branch only stores its last constraint plus a parent link.
    struct PathNode {
        std::int32_t parent;
        std::int32_t dim;
        double margin; // |query[dim] - split_value| of the violated constraint
    };
    std::vector<PathNode> arena;
    using Branch =
        std::tuple<double, std::uint32_t, std::uint32_t, std::int32_t>; // bound^2, tree, node, path
    std::priority_queue<Branch, std::vector<Branch>, std::greater<>> pending;
    for (std::uint32_t t = 0; t < trees_.size(); ++t) pending.emplace(0.0, t, 0u, -1);

    std::array<double, 64> off; // per-dim margin of the popped branch's path
    std::uint32_t visited = 0;
    while (!pending.empty() && visited < checks) {
        auto [bound_sq, t, node_index, path] = pending.top();
        pending.pop();
        // Prune only on strictly larger bounds so equal-distance ties are
        // still enumerated and the tie rule stays exact.
        if (best.size() == k && bound_sq > static_cast<double>(kth_dist2())) continue;

        off.fill(0.0);
        for (std::int32_t p = path; p >= 0; p = arena[static_cast<std::size_t>(p)].parent) {
            const PathNode& pn = arena[static_cast<std::size_t>(p)];
            off[static_cast<std::size_t>(pn.dim)] =
                std::max(off[static_cast<std::size_t>(pn.dim)],
                         static_cast<double>(pn.margin));
        }

        const Tree& tree = trees_[t];
        std::uint32_t n = node_index;
        while (tree.nodes[n].split_dim >= 0) {
            const Node& node = tree.nodes[n];
            const std::size_t dim = static_cast<std::size_t>(node.split_dim);
            const double diff =
                static_cast<double>(values[dim]) - node.split_value;
            const std::uint32_t near = diff < 0.0 ? node.left : node.right;
            const std::uint32_t far = diff < 0.0 ? node.right : node.left;
            const double margin = std::abs(diff);
            const double far_off = std::max(off[dim], margin);
            const double far_bound =
                bound_sq - off[dim] * off[dim] + far_off * far_off;
            arena.push_back({path, node.split_dim, margin});
            pending.emplace(far_bound, t, far,
                            static_cast<std::int32_t>(arena.size() - 1));
            n = near;
        }
        const Node& leaf = tree.nodes[n];
        for (std::uint32_t i = 0; i < leaf.count; ++i)
            offer(tree.order[leaf.begin + i], tree.ordered[leaf.begin + i]);
        ++visited;
    }

    std::vector<Candidate> sorted;
    sorted.reserve(best.size());
    while (!best.empty()) {
        sorted.push_back(best.top());
        best.pop();
    }
    std::sort(sorted.begin(), sorted.end());

    std::vector<Match> out;
    out.reserve(sorted.size());
    for (const Candidate& c : sorted) {
        Match m;
        m.neighbor = {image_ids_[entries_[c.entry].image], c.descriptor};
        m.distance = std::sqrt(static_cast<double>(c.dist2));
        out.push_back(std::move(m));
    }
    return out;
}

std::vector<Match> brute_force_knn(const std::vector<Signature>& signatures,
                                   const DescriptorRef& query, std::uint32_t k) {
    const Signature* qsig = nullptr;
    for (const Signature& s : signatures)
        if (s.image_id == query.image_id) qsig = &s;
    if (!qsig || query.descriptor_index >= qsig->descriptors.size())
        throw UnresolvableRef("query descriptor not found: " + query.image_id);
    const auto& qv = qsig->descriptors[query.descriptor_index].values;

    struct Cand {
        std::uint32_t dist2;
        const std::string* image_id;
        std::uint32_t descriptor;
    };
    std::vector<Cand> all;
    for (const Signature& s : signatures) {
        if (s.image_id == query.image_id) continue;
        for (std::size_t d = 0; d < s.descriptors.size(); ++d)
            all.push_back({squared_rank_distance(qv, s.descriptors[d].values),
                           &s.image_id, static_cast<std::uint32_t>(d)});
    }
    auto less = [](const Cand& a, const Cand& b) {
        if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
        if (*a.image_id != *b.image_id) return *a.image_id < *b.image_id;
        return a.descriptor < b.descriptor;
    };
    const std::size_t keep = std::min<std::size_t>(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep),
                      all.end(), less);
    all.resize(keep);

    std::vector<Match> out;
    out.reserve(all.size());
    for (const Cand& c : all) {
        Match m;
        m.query = query;
        m.neighbor = {*c.image_id, c.descriptor};
        m.distance = std::sqrt(static_cast<double>(c.dist2));
        out.push_back(std::move(m));
    }
    return out;
}

BandwidthTable compute_bandwidths(const KnnForest& forest, double epsilon_floor,
                                  std::uint32_t checks, int threads) {
    BandwidthTable table;
    table.epsilon_floor = epsilon_floor;
    table.alpha.assign(forest.entries().size(), 0.0);
    std::atomic<bool> empty_foreign{false};
    parallel_for(forest.entries().size(), threads, [&](std::size_t i) {
        const auto matches = forest.query(i, 1, checks);
        if (matches.empty()) {
            empty_foreign.store(true);
            return;
        }
        table.alpha[i] = std::max(matches[0].distance, epsilon_floor);
    });
    if (empty_foreign.load())
        throw EmptyForeignSet("a descriptor has no foreign neighbors; "
                              "at least two images with descriptors are required");
    return table;
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

void KnnForest::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoFailure("cannot open " + path + " for writing");
    os.write("SGF1", 4);
    put<std::uint32_t>(os, 1);
    put<std::uint64_t>(os, seed_);
    put<std::uint32_t>(os, params_.num_trees);
    put<std::uint32_t>(os, params_.max_leaf_size);
    put<std::uint32_t>(os, params_.top_variance_dims);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(image_ids_.size()));
    for (std::size_t i = 0; i < image_ids_.size(); ++i) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(image_ids_[i].size()));
        os.write(image_ids_[i].data(),
                 static_cast<std::streamsize>(image_ids_[i].size()));
        put<std::uint64_t>(os, image_sizes_[i]);
    }
    put<std::uint64_t>(os, entries_.size());
    for (const Entry& e : entries_) {
        put<std::uint32_t>(os, e.image);
        put<std::uint32_t>(os, e.descriptor);
        os.write(reinterpret_cast<const char*>(e.values.data()), 64);
    }
    if (!os) throw IoFailure("write failed for " + path);
}

KnnForest KnnForest::load(const std::string& path, int threads) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoFailure("cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SGF1", 4) != 0)
        throw UnknownFormat("not a forest file: " + path);
    if (get<std::uint32_t>(is) != 1) throw CorruptHeader("unsupported forest version");

    KnnForest forest;
    forest.seed_ = get<std::uint64_t>(is);
    forest.params_.num_trees = get<std::uint32_t>(is);
    forest.params_.max_leaf_size = get<std::uint32_t>(is);
    forest.params_.top_variance_dims = get<std::uint32_t>(is);
    const auto num_images = get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < num_images; ++i) {
        const auto len = get<std::uint32_t>(is);
        std::string id(len, '\0');
        is.read(id.data(), len);
        forest.image_ids_.push_back(std::move(id));
        forest.image_sizes_.push_back(get<std::uint64_t>(is));
    }
    const auto num_entries = get<std::uint64_t>(is);
    forest.entries_.resize(num_entries);
    for (Entry& e : forest.entries_) {
        e.image = get<std::uint32_t>(is);
        e.descriptor = get<std::uint32_t>(is);
        is.read(reinterpret_cast<char*>(e.values.data()), 64);
    }
    if (!is) throw CorruptHeader("forest file truncated");
    if (forest.entries_.empty()) throw EmptyCollection("forest file holds no entries");
    // Tree structure is a pure function of (entries, seed); rebuild.
    forest.build(threads);
    return forest;
}

} // namespace sigprint
