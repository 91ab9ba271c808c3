#pragma once

#include <array>
#include <vector>

#include "cb/layers.hpp"
#include "cb/pyramid.hpp"

namespace cb {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double area() const { return width() * height(); }
    double cx() const { return (x1 + x2) / 2; }
    double cy() const { return (y1 + y2) / 2; }
    bool valid() const;
};

double box_iou(const Box& a, const Box& b);

struct Proposal {
    Box box;
    double objectness = 0;  // sigmoid of the RPN logit
};

// Anchors per level in (row, col, scale, ratio) order; this order is the
// flattening contract shared with the RPN head outputs.
struct AnchorSet {
    struct Level {
        std::vector<Box> anchors;
        int h = 0, w = 0, stride = 0;
    };
    std::vector<Level> levels;
    std::vector<double> scales, ratios;

    int anchors_per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
    long long total() const;
};

struct LevelShape {
    int h = 0, w = 0, stride = 0;
};

// One anchor per (cell, scale, ratio), centered at (stride*(col+0.5),
// stride*(row+0.5)), width = scale*sqrt(ratio), height = scale/sqrt(ratio).
AnchorSet generate_anchors(const std::vector<LevelShape>& shapes, std::vector<double> scales,
                           std::vector<double> ratios);

// (dx,dy,dw,dh) parameterization. decode clamps dw/dh at 4 before exp and
// clips to image bounds; encode is its inverse.
std::array<double, 4> encode_box(const Box& anchor, const Box& target);
Box decode_box(const Box& anchor, const std::array<double, 4>& deltas, double img_w, double img_h);
std::vector<Box> decode_boxes(const std::vector<Box>& anchors,
                              const std::vector<std::array<double, 4>>& deltas, double img_w,
                              double img_h);

// Greedy descending-score suppression (IoU > threshold), ties by lower index.
// Returns kept indices in the order they were kept.
std::vector<int> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                     double iou_threshold);

enum class AnchorLabel { negative, positive, ignore };

struct TargetAssignment {
    std::vector<AnchorLabel> labels;
    std::vector<int> matched_gt;                    // -1 for unmatched anchors
    std::vector<std::array<double, 4>> regression;  // meaningful for positives
};

// Positive: IoU >= pos_iou with some gt, or argmax-IoU anchor of a gt (when
// that max is > 0). Negative: max IoU < neg_iou. Otherwise ignored.
TargetAssignment assign_targets(const std::vector<Box>& anchors, const std::vector<Box>& gt_boxes,
                                double pos_iou, double neg_iou);

// Top-pre_nms_k by objectness -> NMS -> top-post_nms_k.
std::vector<Proposal> select_proposals(const std::vector<Box>& decoded,
                                       const std::vector<double>& objectness, int pre_nms_k,
                                       int post_nms_k, double iou_threshold);

// Maps a proposal to a pyramid level: floor(log2(sqrt(area)/56) + 4), clamped.
int assign_pyramid_level(const Box& box, int n_levels);

// ROI Align over one pyramid level; box in image coordinates.
Tensor roi_align_on_level(const FeatureMap& level, const Box& box, int out_h, int out_w,
                          int sampling_ratio);

// Shared 3x3 conv + ReLU, then sibling 1x1 convs for objectness (A channels)
// and box deltas (4A channels) per level.
struct RpnHead {
    Conv2d shared, objectness, deltas;
    int anchors_per_cell = 0;

    RpnHead() = default;
    RpnHead(ParamStore& ps, const std::string& name, int in_channels, int anchors_per_cell);

    struct LevelOutput {
        Tensor obj_logits;  // (A,H,W)
        Tensor box_deltas;  // (4A,H,W)
    };
    std::vector<LevelOutput> forward(const std::vector<FeatureMap>& levels) const;
};

// Flat index of anchor `local` (in AnchorSet order) inside the (A,H,W)
// objectness tensor, and of its 4 deltas inside the (4A,H,W) tensor.
long long rpn_obj_index(int h, int w, int anchors_per_cell, long long local);
std::array<long long, 4> rpn_delta_indices(int h, int w, int anchors_per_cell, long long local);

}  // namespace cb
