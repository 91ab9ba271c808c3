#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cb/heads.hpp"
#include "cb/region.hpp"

namespace cb {

// TP matching rule: IoU above a threshold, or center distance within a pixel
// budget. Both modes are provided; reports name the criterion used.
struct MatchCriterion {
    enum class Kind { iou, center_distance };
    Kind kind = Kind::iou;
    double iou_threshold = 0.5;
    double center_distance_px = 12.0;

    void validate() const;
    std::string describe() const;
};

struct MatchResult {
    long long tp = 0, fp = 0, fn = 0;
    std::vector<std::pair<int, int>> pairs;  // (prediction index, gt index)
};

// Greedy matching in descending prediction score; each gt matches at most
// once; unmatched predictions are FP, unmatched gts FN.
MatchResult match_detections(const std::vector<Detection>& preds, const std::vector<Box>& gts,
                             const MatchCriterion& criterion);

double precision(long long tp, long long fp);
double recall(long long tp, long long fn);
// Harmonic mean of precision and recall; 0 when both are 0.
double f_score(double precision, double recall);

struct MetricsReport {
    long long tp = 0, fp = 0, fn = 0;
    double precision = 0, recall = 0, f_score = 0;
    std::string criterion;
    std::string config_hash;
    struct PerImage {
        std::string id;
        long long tp = 0, fp = 0, fn = 0;
    };
    std::vector<PerImage> per_image;

    std::string to_json() const;
    void save(const std::string& path) const;
};

// Pools match counts over images (micro averaging), then applies the
// precision/recall/F formulas to the pooled counts. Image id sets must match.
MetricsReport evaluate_dataset(const std::map<std::string, std::vector<Detection>>& detections,
                               const std::map<std::string, std::vector<Box>>& annotations,
                               const MatchCriterion& criterion);

}  // namespace cb
