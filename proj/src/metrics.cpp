#include "cb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace cb {

void MatchCriterion::validate() const {
    if (kind == Kind::iou) {
        if (iou_threshold <= 0 || iou_threshold > 1)
            throw ConfigError("match criterion: IoU threshold must lie in (0,1]");
    } else {
        if (center_distance_px <= 0)
            throw ConfigError("match criterion: center distance must be positive");
    }
}

std::string MatchCriterion::describe() const {
    if (kind == Kind::iou) return "iou>=" + std::to_string(iou_threshold);
    return "center_distance<=" + std::to_string(center_distance_px) + "px";
}

MatchResult match_detections(const std::vector<Detection>& preds, const std::vector<Box>& gts,
                             const MatchCriterion& criterion) {
    criterion.validate();
    std::vector<int> order(preds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (preds[static_cast<size_t>(a)].score != preds[static_cast<size_t>(b)].score)
            return preds[static_cast<size_t>(a)].score > preds[static_cast<size_t>(b)].score;
        return a < b;
    });

    std::vector<char> gt_taken(gts.size(), 0);
    MatchResult result;
    for (int pi : order) {
        const Box& pb = preds[static_cast<size_t>(pi)].box;
        int best_gt = -1;
        double best_measure = 0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_taken[g]) continue;
            if (criterion.kind == MatchCriterion::Kind::iou) {
                double v = box_iou(pb, gts[g]);
                if (v >= criterion.iou_threshold && (best_gt < 0 || v > best_measure)) {
                    best_gt = static_cast<int>(g);
                    best_measure = v;
                }
            } else {
                double dx = pb.cx() - gts[g].cx();
                double dy = pb.cy() - gts[g].cy();
                double d = std::sqrt(dx * dx + dy * dy);
                if (d <= criterion.center_distance_px && (best_gt < 0 || d < best_measure)) {
                    best_gt = static_cast<int>(g);
                    best_measure = d;
                }
            }
        }
        if (best_gt >= 0) {
            gt_taken[static_cast<size_t>(best_gt)] = 1;
            result.pairs.emplace_back(pi, best_gt);
            ++result.tp;
        } else {
            ++result.fp;
        }
    }
    result.fn = static_cast<long long>(gts.size()) - result.tp;
    return result;
}

double precision(long long tp, long long fp) {
    return tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
}

double recall(long long tp, long long fn) {
    return tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
}

double f_score(double precision, double recall) {
    double denom = precision + recall;
    return denom > 0 ? 2.0 * precision * recall / denom : 0.0;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    j["tp"] = tp;
    j["fp"] = fp;
    j["fn"] = fn;
    j["precision"] = precision;
    j["recall"] = recall;
    j["f_score"] = f_score;
    j["criterion"] = criterion;
    j["config_hash"] = config_hash;
    nlohmann::json per = nlohmann::json::array();
    for (const PerImage& p : per_image)
        per.push_back({{"id", p.id}, {"tp", p.tp}, {"fp", p.fp}, {"fn", p.fn}});
    j["per_image"] = per;
    return j.dump(2);
}

void MetricsReport::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write metrics report: " + path);
    os << to_json() << "\n";
}

MetricsReport evaluate_dataset(const std::map<std::string, std::vector<Detection>>& detections,
                               const std::map<std::string, std::vector<Box>>& annotations,
                               const MatchCriterion& criterion) {
    std::string missing;
    for (const auto& [id, _] : detections)
        if (!annotations.count(id)) missing += " " + id;
    for (const auto& [id, _] : annotations)
        if (!detections.count(id)) missing += " " + id;
    if (!missing.empty())
        throw DataError("evaluate_dataset: image ids do not align:" + missing);

    MetricsReport report;
    report.criterion = criterion.describe();
    for (const auto& [id, anns] : annotations) {
        MatchResult m = match_detections(detections.at(id), anns, criterion);
        report.tp += m.tp;
        report.fp += m.fp;
        report.fn += m.fn;
        report.per_image.push_back({id, m.tp, m.fp, m.fn});
    }
    report.precision = precision(report.tp, report.fp);
    report.recall = recall(report.tp, report.fn);
    report.f_score = f_score(report.precision, report.recall);
    return report;
}

}  // namespace cb
