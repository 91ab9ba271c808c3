#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cb/layers.hpp"
#include "cb/region.hpp"

namespace cb {

// One detected object: class 1 = lymphocyte, 0 = background. The mask is a
// binary grid in box-local coordinates.
struct Detection {
    Box box;
    int label = 1;
    double score = 0.0;
    int mask_h = 0, mask_w = 0;
    std::vector<std::uint8_t> mask;
};

struct LossBreakdown {
    double cls = 0.0;   // cross-entropy term
    double box = 0.0;   // L1 term
    double mask = 0.0;  // binary cross-entropy term
    double total = 0.0;
};

// Scalar loss tensor for backward plus the recorded breakdown.
struct LossResult {
    Tensor total;
    LossBreakdown values;
};

// Two fully connected layers then sibling class/box outputs; class scores are
// softmax-normalized. Box deltas are per foreground class.
struct DetectionHead {
    Linear fc1, fc2, cls_out, box_out;
    int in_features = 0;
    int num_classes = 2;  // background + lymphocyte

    DetectionHead() = default;
    DetectionHead(ParamStore& ps, const std::string& name, int in_channels, int roi_size = 7,
                  int hidden = 128, int num_classes = 2);

    struct Output {
        Tensor class_logits;  // (n, K+1)
        Tensor class_probs;   // (n, K+1), rows sum to 1
        Tensor box_deltas;    // (n, 4*(K_fg))
    };
    Output forward(const Tensor& roi_features) const;  // (n,C,roi,roi)
};

// Two conv+ReLU layers, a 2x transposed-conv upsample, then 1x1 conv to
// per-class mask logits (14x14 in -> 28x28 out).
struct SegmentationHead {
    Conv2d conv1, conv2, out;
    ConvTranspose2d up;

    SegmentationHead() = default;
    SegmentationHead(ParamStore& ps, const std::string& name, int in_channels, int mid_channels = 16,
                     int num_fg_classes = 1);

    Tensor forward(const Tensor& roi_features) const;  // (n, K_fg, 28, 28) logits
};

// The error-function pieces; names follow their roles. Each returns a scalar
// tensor; probability inputs are clamped at 1e-12 before logs.
Tensor loss_cross_entropy(const Tensor& probs, const std::vector<int>& labels);
// Sum of |pred - target| over positive anchors divided by n_positives;
// n_positives == 0 yields exactly 0.
Tensor loss_l1(const Tensor& pred, const std::vector<double>& target, int n_positives);
Tensor loss_bce(const Tensor& probs, const std::vector<double>& targets);

// total = cls + box + mask, exactly; a NaN component is a hard error naming it.
LossResult total_loss(const Tensor& cls, const Tensor& box, const Tensor& mask);

struct PostprocessConfig {
    double score_threshold = 0.5;
    double mask_threshold = 0.5;
    double nms_iou = 0.5;
    int max_detections = 100;
};

// Per-class box decoding, score filtering, per-class NMS, mask binarization.
// mask_probs_for: given the surviving refined boxes, returns (m, 1, h, w)
// mask probabilities (the caller runs the segmentation head + sigmoid).
std::vector<Detection> postprocess(
    const std::vector<Box>& proposal_boxes, const Tensor& class_probs, const Tensor& box_deltas,
    const std::function<Tensor(const std::vector<Box>&)>& mask_probs_for,
    const PostprocessConfig& cfg, double img_w, double img_h);

}  // namespace cb
