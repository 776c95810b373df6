#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sigprint/jaccard.hpp"

namespace sigprint {

enum class RelationshipLabel { SM, MZ, DZ, FS, UR };

const char* to_string(RelationshipLabel label);
RelationshipLabel relationship_from_string(const std::string& s);

struct ImageMetadata {
    std::string image_id;
    std::string subject_id;
    std::string family_id;   // optional, empty when unknown
    std::string zygosity;    // optional: "MZ" or "DZ"
    std::optional<double> age;
    std::string dataset_tag; // optional
};

struct CohortMetadata {
    std::vector<ImageMetadata> images;

    /// CSV columns: image_id,subject_id,family_id,zygosity,age,dataset_tag
    static CohortMetadata load_csv(const std::string& path);
};

using PairKey = std::pair<std::string, std::string>; // lexicographically ordered
using PairLabelMap = std::map<PairKey, RelationshipLabel>;

PairKey make_pair_key(const std::string& a, const std::string& b);
PairLabelMap label_pairs(const CohortMetadata& meta);

struct LabelDistribution {
    RelationshipLabel label = RelationshipLabel::UR;
    std::string bucket;       // empty unless grouped by a covariate
    std::size_t count = 0;    // finite distances only
    std::size_t infinite_count = 0;
    double mean = 0.0;
    double stddev = 0.0;
    double min = 0.0;
    double max = 0.0;
};

/// Optional covariate grouping: bucket of |age_a - age_b| with the given
/// width in years. 0 disables grouping.
std::vector<LabelDistribution> summarize(const SimilarityMatrix& matrix,
                                         const PairLabelMap& labels,
                                         const CohortMetadata* meta = nullptr,
                                         double age_bucket_years = 0.0);

/// Two-sample Kolmogorov-Smirnov test. D by merged-sort sweep; p from the
/// asymptotic Kolmogorov distribution with n = |x||y|/(|x|+|y|).
std::pair<double, double> ks_two_sample(const std::vector<double>& x,
                                        const std::vector<double>& y);

enum class Verdict {
    SuspectedSameLabeledOther, // non-SM pair with SM-like distance
    SuspectedOtherLabeledSame, // SM pair with UR-like distance
    ExactDuplicate,
};

const char* to_string(Verdict v);

struct OutlierRules {
    double sm_sigma = 3.0;          // rule (a): d < mean(SM) + sm_sigma * std(SM)
    double ur_sigma = 3.0;          // rule (b): d > mean(UR) - ur_sigma * std(UR)
    double duplicate_epsilon = 1e-6;
};

struct OutlierFlag {
    PairKey pair;
    RelationshipLabel label;
    double distance;
    Verdict verdict;
};

struct OutlierReport {
    std::vector<OutlierFlag> flags;
    OutlierRules rules;
    double sm_threshold = 0.0; // resolved mean(SM) + sm_sigma * std(SM)
    double ur_threshold = 0.0; // resolved mean(UR) - ur_sigma * std(UR)
};

OutlierReport flag_outliers(const SimilarityMatrix& matrix,
                            const PairLabelMap& labels,
                            const OutlierRules& rules = {});

} // namespace sigprint
