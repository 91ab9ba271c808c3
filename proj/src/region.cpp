#include "cb/region.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cb {

namespace {
constexpr double kDeltaClamp = 4.0;
constexpr double kMinExtent = 1e-3;
}  // namespace

bool Box::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           x2 > x1 && y2 > y1;
}

double box_iou(const Box& a, const Box& b) {
    double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    if (ix <= 0 || iy <= 0) return 0.0;
    double inter = ix * iy;
    double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

long long AnchorSet::total() const {
    long long n = 0;
    for (const auto& l : levels) n += static_cast<long long>(l.anchors.size());
    return n;
}

AnchorSet generate_anchors(const std::vector<LevelShape>& shapes, std::vector<double> scales,
                           std::vector<double> ratios) {
    if (scales.empty() || ratios.empty())
        throw ConfigError("generate_anchors: need at least one scale and one ratio");
    for (double s : scales)
        if (s <= 0) throw ConfigError("generate_anchors: non-positive scale");
    for (double r : ratios)
        if (r <= 0) throw ConfigError("generate_anchors: non-positive ratio");
    AnchorSet set;
    set.scales = std::move(scales);
    set.ratios = std::move(ratios);
    for (const LevelShape& sh : shapes) {
        AnchorSet::Level level;
        level.h = sh.h;
        level.w = sh.w;
        level.stride = sh.stride;
        level.anchors.reserve(static_cast<size_t>(sh.h) * sh.w * set.scales.size() * set.ratios.size());
        for (int i = 0; i < sh.h; ++i)
            for (int j = 0; j < sh.w; ++j)
                for (double s : set.scales)
                    for (double r : set.ratios) {
                        double cx = sh.stride * (j + 0.5);
                        double cy = sh.stride * (i + 0.5);
                        double w = s * std::sqrt(r);
                        double h = s / std::sqrt(r);
                        level.anchors.push_back({cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
                    }
        set.levels.push_back(std::move(level));
    }
    return set;
}

std::array<double, 4> encode_box(const Box& anchor, const Box& target) {
    double aw = anchor.width(), ah = anchor.height();
    return {(target.cx() - anchor.cx()) / aw, (target.cy() - anchor.cy()) / ah,
            std::log(target.width() / aw), std::log(target.height() / ah)};
}

Box decode_box(const Box& anchor, const std::array<double, 4>& deltas, double img_w, double img_h) {
    double aw = anchor.width(), ah = anchor.height();
    double cx = anchor.cx() + deltas[0] * aw;
    double cy = anchor.cy() + deltas[1] * ah;
    double w = aw * std::exp(std::min(deltas[2], kDeltaClamp));
    double h = ah * std::exp(std::min(deltas[3], kDeltaClamp));
    Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
    b.x1 = std::clamp(b.x1, 0.0, img_w - kMinExtent);
    b.y1 = std::clamp(b.y1, 0.0, img_h - kMinExtent);
    b.x2 = std::clamp(b.x2, b.x1 + kMinExtent, img_w);
    b.y2 = std::clamp(b.y2, b.y1 + kMinExtent, img_h);
    return b;
}

std::vector<Box> decode_boxes(const std::vector<Box>& anchors,
                              const std::vector<std::array<double, 4>>& deltas, double img_w,
                              double img_h) {
    if (anchors.size() != deltas.size()) throw ShapeError("decode_boxes: count mismatch");
    std::vector<Box> out;
    out.reserve(anchors.size());
    for (size_t i = 0; i < anchors.size(); ++i)
        out.push_back(decode_box(anchors[i], deltas[i], img_w, img_h));
    return out;
}

std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold) {
    if (boxes.size() != scores.size()) throw ShapeError("nms: box/score count mismatch");
    std::vector<int> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
            return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
        return a < b;
    });
    std::vector<char> alive(boxes.size(), 1);
    std::vector<int> kept;
    for (size_t i = 0; i < order.size(); ++i) {
        int a = order[i];
        if (!alive[static_cast<size_t>(a)]) continue;
        kept.push_back(a);
        for (size_t j = i + 1; j < order.size(); ++j) {
            int b = order[j];
            if (!alive[static_cast<size_t>(b)]) continue;
            if (box_iou(boxes[static_cast<size_t>(a)], boxes[static_cast<size_t>(b)]) > iou_threshold)
                alive[static_cast<size_t>(b)] = 0;
        }
    }
    return kept;
}

TargetAssignment assign_targets(const std::vector<Box>& anchors, const std::vector<Box>& gt_boxes,
                                double pos_iou, double neg_iou) {
    // equal thresholds are allowed: the ignore band is then empty
    if (pos_iou < neg_iou) throw ConfigError("assign_targets: pos_iou must be >= neg_iou");
    size_t na = anchors.size(), ng = gt_boxes.size();
    TargetAssignment out;
    out.labels.assign(na, AnchorLabel::negative);
    out.matched_gt.assign(na, -1);
    out.regression.assign(na, {0, 0, 0, 0});
    if (ng == 0) return out;

    std::vector<double> best_iou(na, 0.0);
    std::vector<double> gt_best(ng, 0.0);
    std::vector<std::vector<double>> iou(na, std::vector<double>(ng));
    for (size_t a = 0; a < na; ++a)
        for (size_t g = 0; g < ng; ++g) {
            double v = box_iou(anchors[a], gt_boxes[g]);
            iou[a][g] = v;
            if (v > best_iou[a]) {
                best_iou[a] = v;
                out.matched_gt[a] = static_cast<int>(g);
            }
            gt_best[g] = std::max(gt_best[g], v);
        }

    for (size_t a = 0; a < na; ++a) {
        if (best_iou[a] >= pos_iou)
            out.labels[a] = AnchorLabel::positive;
        else if (best_iou[a] < neg_iou)
            out.labels[a] = AnchorLabel::negative;
        else
            out.labels[a] = AnchorLabel::ignore;
    }
    // every gt keeps its argmax anchor(s), regardless of threshold
    for (size_t g = 0; g < ng; ++g) {
        if (gt_best[g] <= 0) continue;
        for (size_t a = 0; a < na; ++a) {
            if (iou[a][g] == gt_best[g]) {
                out.labels[a] = AnchorLabel::positive;
                if (out.matched_gt[a] < 0 || iou[a][static_cast<size_t>(out.matched_gt[a])] < iou[a][g])
                    out.matched_gt[a] = static_cast<int>(g);
            }
        }
    }
    for (size_t a = 0; a < na; ++a)
        if (out.labels[a] == AnchorLabel::positive && out.matched_gt[a] >= 0)
            out.regression[a] = encode_box(anchors[a], gt_boxes[static_cast<size_t>(out.matched_gt[a])]);
    return out;
}

std::vector<Proposal> select_proposals(const std::vector<Box>& decoded,
                                       const std::vector<double>& objectness, int pre_nms_k,
                                       int post_nms_k, double iou_threshold) {
    if (decoded.size() != objectness.size()) throw ShapeError("select_proposals: count mismatch");
    if (pre_nms_k <= 0 || post_nms_k <= 0)
        throw ConfigError("select_proposals: k values must be positive");
    std::vector<int> order(decoded.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (objectness[static_cast<size_t>(a)] != objectness[static_cast<size_t>(b)])
            return objectness[static_cast<size_t>(a)] > objectness[static_cast<size_t>(b)];
        return a < b;
    });
    if (static_cast<int>(order.size()) > pre_nms_k) order.resize(static_cast<size_t>(pre_nms_k));

    std::vector<Box> top_boxes;
    std::vector<double> top_scores;
    for (int idx : order) {
        if (!decoded[static_cast<size_t>(idx)].valid()) continue;
        top_boxes.push_back(decoded[static_cast<size_t>(idx)]);
        top_scores.push_back(objectness[static_cast<size_t>(idx)]);
    }
    std::vector<int> kept = nms(top_boxes, top_scores, iou_threshold);
    std::vector<Proposal> out;
    for (int k : kept) {
        if (static_cast<int>(out.size()) >= post_nms_k) break;
        out.push_back({top_boxes[static_cast<size_t>(k)], top_scores[static_cast<size_t>(k)]});
    }
    return out;
}

int assign_pyramid_level(const Box& box, int n_levels) {
    // floor(log2(sqrt(area)/56) + 4) yields a pyramid P-number (P2..P5 at
    // strides 4..32): a 56 px box maps to P4, mirroring the standard rule
    // with its canonical size scaled down 4x. Subtract 2 for a level index.
    double side = std::sqrt(std::max(box.area(), 1e-12));
    int p_number = static_cast<int>(std::floor(std::log2(side / 56.0) + 4.0));
    return std::clamp(p_number - 2, 0, n_levels - 1);
}

Tensor roi_align_on_level(const FeatureMap& level, const Box& box, int out_h, int out_w,
                          int sampling_ratio) {
    if (level.stride <= 0) throw ShapeError("roi_align_on_level: level stride unknown");
    std::vector<std::array<double, 4>> boxes{{box.x1, box.y1, box.x2, box.y2}};
    return roi_align(level.tensor, boxes, out_h, out_w, sampling_ratio, 1.0 / level.stride);
}

RpnHead::RpnHead(ParamStore& ps, const std::string& name, int in_channels, int anchors_per_cell_)
    : shared(ps, name + ".shared", in_channels, in_channels, 3, 1, 1),
      // small-std output layers: objectness starts near 0.5, deltas near 0
      objectness(ps, name + ".obj", in_channels, anchors_per_cell_, 1, 1, 0, true, 0.01),
      deltas(ps, name + ".deltas", in_channels, 4 * anchors_per_cell_, 1, 1, 0, true, 0.01),
      anchors_per_cell(anchors_per_cell_) {}

std::vector<RpnHead::LevelOutput> RpnHead::forward(const std::vector<FeatureMap>& levels) const {
    std::vector<LevelOutput> out;
    out.reserve(levels.size());
    for (const FeatureMap& level : levels) {
        Tensor t = relu(shared.forward(level.tensor));
        out.push_back({objectness.forward(t), deltas.forward(t)});
    }
    return out;
}

long long rpn_obj_index(int h, int w, int anchors_per_cell, long long local) {
    long long cell = local / anchors_per_cell;
    long long a = local % anchors_per_cell;
    return a * h * w + cell;
}

std::array<long long, 4> rpn_delta_indices(int h, int w, int anchors_per_cell, long long local) {
    long long cell = local / anchors_per_cell;
    long long a = local % anchors_per_cell;
    long long plane = static_cast<long long>(h) * w;
    return {(a * 4 + 0) * plane + cell, (a * 4 + 1) * plane + cell, (a * 4 + 2) * plane + cell,
            (a * 4 + 3) * plane + cell};
}

}  // namespace cb
