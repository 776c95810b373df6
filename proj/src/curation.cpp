#include "sigprint/curation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace sigprint {

const char* to_string(RelationshipLabel label) {
    switch (label) {
        case RelationshipLabel::SM: return "SM";
        case RelationshipLabel::MZ: return "MZ";
        case RelationshipLabel::DZ: return "DZ";
        case RelationshipLabel::FS: return "FS";
        case RelationshipLabel::UR: return "UR";
    }
    return "?";
}

RelationshipLabel relationship_from_string(const std::string& s) {
    if (s == "SM") return RelationshipLabel::SM;
    if (s == "MZ") return RelationshipLabel::MZ;
    if (s == "DZ") return RelationshipLabel::DZ;
    if (s == "FS") return RelationshipLabel::FS;
    if (s == "UR") return RelationshipLabel::UR;
    throw Error("unknown relationship label: " + s);
}

const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::SuspectedSameLabeledOther: return "suspected-same-labeled-other";
        case Verdict::SuspectedOtherLabeledSame: return "suspected-other-labeled-same";
        case Verdict::ExactDuplicate: return "exact-duplicate";
    }
    return "?";
}

CohortMetadata CohortMetadata::load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoFailure("cannot open " + path);
    CohortMetadata meta;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first && line.rfind("image_id,", 0) == 0) {
            first = false;
            continue;
        }
        first = false;
        std::stringstream ss(line);
        std::array<std::string, 6> fields{};
        for (std::size_t i = 0; i < 6; ++i)
            if (!std::getline(ss, fields[i], ',') && i < 2)
                throw CorruptHeader("metadata row needs image_id and subject_id: " + line);
        ImageMetadata row;
        row.image_id = fields[0];
        row.subject_id = fields[1];
        row.family_id = fields[2];
        row.zygosity = fields[3];
        if (!fields[4].empty()) row.age = std::stod(fields[4]);
        row.dataset_tag = fields[5];
        meta.images.push_back(std::move(row));
    }
    return meta;
}

PairKey make_pair_key(const std::string& a, const std::string& b) {
    return a < b ? PairKey{a, b} : PairKey{b, a};
}

PairLabelMap label_pairs(const CohortMetadata& meta) {
    std::set<std::string> ids;
    for (const ImageMetadata& m : meta.images) {
        if (!ids.insert(m.image_id).second)
            throw DuplicateImageId("duplicate image_id in metadata: " + m.image_id);
        if (m.image_id.empty() || m.subject_id.empty())
            throw MissingMetadata("metadata row missing image_id or subject_id");
    }
    PairLabelMap labels;
    for (std::size_t i = 0; i < meta.images.size(); ++i)
        for (std::size_t j = i + 1; j < meta.images.size(); ++j) {
            const ImageMetadata& a = meta.images[i];
            const ImageMetadata& b = meta.images[j];
            RelationshipLabel label = RelationshipLabel::UR;
            if (a.subject_id == b.subject_id) {
                label = RelationshipLabel::SM;
            } else if (!a.family_id.empty() && a.family_id == b.family_id) {
                if (a.zygosity == "MZ" && b.zygosity == "MZ")
                    label = RelationshipLabel::MZ;
                else if (a.zygosity == "DZ" && b.zygosity == "DZ")
                    label = RelationshipLabel::DZ;
                else
                    label = RelationshipLabel::FS;
            }
            labels[make_pair_key(a.image_id, b.image_id)] = label;
        }
    return labels;
}

namespace {

struct Accumulator {
    std::vector<double> values;
    std::size_t infinite = 0;
};

LabelDistribution finish(RelationshipLabel label, const std::string& bucket,
                         const Accumulator& acc) {
    LabelDistribution d;
    d.label = label;
    d.bucket = bucket;
    d.count = acc.values.size();
    d.infinite_count = acc.infinite;
    if (!acc.values.empty()) {
        double sum = 0.0;
        d.min = acc.values.front();
        d.max = acc.values.front();
        for (double v : acc.values) {
            sum += v;
            d.min = std::min(d.min, v);
            d.max = std::max(d.max, v);
        }
        d.mean = sum / static_cast<double>(acc.values.size());
        double ss = 0.0;
        for (double v : acc.values) ss += (v - d.mean) * (v - d.mean);
        d.stddev = std::sqrt(ss / static_cast<double>(acc.values.size()));
    }
    return d;
}

} // namespace

std::vector<LabelDistribution> summarize(const SimilarityMatrix& matrix,
                                         const PairLabelMap& labels,
                                         const CohortMetadata* meta,
                                         double age_bucket_years) {
    std::map<std::string, std::optional<double>> ages;
    if (meta)
        for (const ImageMetadata& m : meta->images) ages[m.image_id] = m.age;

    std::map<std::pair<RelationshipLabel, std::string>, Accumulator> groups;
    for (const PairScore& p : matrix.pairs) {
        const PairKey key = make_pair_key(p.image_a, p.image_b);
        const auto it = labels.find(key);
        if (it == labels.end())
            throw LabelCoverageGap("no relationship label for pair " + key.first +
                                   "," + key.second);
        std::string bucket;
        if (age_bucket_years > 0.0 && meta) {
            const auto& age_a = ages[p.image_a];
            const auto& age_b = ages[p.image_b];
            if (age_a && age_b) {
                const auto b = static_cast<long>(std::floor(
                    std::abs(*age_a - *age_b) / age_bucket_years));
                bucket = std::to_string(b * static_cast<long>(age_bucket_years)) + "-" +
                         std::to_string((b + 1) * static_cast<long>(age_bucket_years));
            } else {
                bucket = "unknown";
            }
        }
        Accumulator& acc = groups[{it->second, bucket}];
        if (std::isinf(p.distance))
            ++acc.infinite;
        else
            acc.values.push_back(p.distance);
    }

    std::vector<LabelDistribution> out;
    for (const auto& [key, acc] : groups) {
        if (acc.values.empty() && acc.infinite == 0) continue;
        out.push_back(finish(key.first, key.second, acc));
    }
    return out;
}

std::pair<double, double> ks_two_sample(const std::vector<double>& x,
                                        const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw EmptySample("KS test requires non-empty samples");
    std::vector<double> xs(x), ys(y);
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());

    const double nx = static_cast<double>(xs.size());
    const double ny = static_cast<double>(ys.size());
    double d_stat = 0.0;
    std::size_t i = 0, j = 0;
    while (i < xs.size() && j < ys.size()) {
        const double t = std::min(xs[i], ys[j]);
        // Consume every jump at equal values before measuring the gap.
        while (i < xs.size() && xs[i] == t) ++i;
        while (j < ys.size() && ys[j] == t) ++j;
        d_stat = std::max(d_stat, std::abs(static_cast<double>(i) / nx -
                                           static_cast<double>(j) / ny));
    }
    // Remaining tail contributes gaps that only shrink toward 0; the sweep
    // above already saw the last common jump point.

    const double n_eff = nx * ny / (nx + ny);
    const double lambda = std::sqrt(n_eff) * d_stat;
    double p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 1000; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        p += sign * term;
        sign = -sign;
        if (term < 1e-12) break;
    }
    p = std::clamp(2.0 * p, 0.0, 1.0);
    if (d_stat == 0.0) p = 1.0;
    return {d_stat, p};
}

OutlierReport flag_outliers(const SimilarityMatrix& matrix,
                            const PairLabelMap& labels, const OutlierRules& rules) {
    struct Entry {
        PairKey key;
        RelationshipLabel label;
        double distance;
        std::optional<Verdict> verdict;
    };
    std::vector<Entry> entries;
    for (const PairScore& p : matrix.pairs) {
        if (std::isinf(p.distance)) continue; // rules apply to finite distances
        const PairKey key = make_pair_key(p.image_a, p.image_b);
        entries.push_back({key, labels.at(key), p.distance, std::nullopt});
    }

    // Threshold statistics over the not-yet-flagged pairs of one label. A
    // mislabeled pair is by definition an extreme member of its nominal
    // label's distribution, so estimating mean/std after removing pairs
    // already caught by stronger rules keeps one planted error from
    // inflating the spread and flooding the weaker rule with false flags.
    const auto robust_stats = [&](RelationshipLabel label, double& mean, double& stddev) {
        double sum = 0.0, sum_sq = 0.0;
        std::size_t n = 0;
        for (const Entry& e : entries) {
            if (e.label != label || e.verdict) continue;
            sum += e.distance;
            sum_sq += e.distance * e.distance;
            ++n;
        }
        if (n < 2)
            throw InsufficientDistribution(
                "outlier rules need SM and UR distributions with at least 2 finite pairs each");
        mean = sum / static_cast<double>(n);
        stddev = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean));
    };

    OutlierReport report;
    report.rules = rules;

    // Rule (c): exact duplicates, independent of any distribution.
    for (Entry& e : entries)
        if (e.distance < rules.duplicate_epsilon) e.verdict = Verdict::ExactDuplicate;

    // Rule (b): SM pairs whose distance sits inside the UR distribution.
    double ur_mean = 0.0, ur_std = 0.0;
    robust_stats(RelationshipLabel::UR, ur_mean, ur_std);
    report.ur_threshold = ur_mean - rules.ur_sigma * ur_std;
    for (Entry& e : entries)
        if (!e.verdict && e.label == RelationshipLabel::SM && e.distance > report.ur_threshold)
            e.verdict = Verdict::SuspectedOtherLabeledSame;

    // Rule (a): non-SM pairs whose distance sits inside the SM distribution.
    double sm_mean = 0.0, sm_std = 0.0;
    robust_stats(RelationshipLabel::SM, sm_mean, sm_std);
    report.sm_threshold = sm_mean + rules.sm_sigma * sm_std;
    for (Entry& e : entries)
        if (!e.verdict && e.label != RelationshipLabel::SM && e.distance < report.sm_threshold)
            e.verdict = Verdict::SuspectedSameLabeledOther;

    for (const Entry& e : entries)
        if (e.verdict) report.flags.push_back({e.key, e.label, e.distance, *e.verdict});
    return report;
}

} // namespace sigprint
