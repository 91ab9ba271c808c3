#include "cb/heads.hpp"

#include <cmath>

#include "cb/ops.hpp"

namespace cb {

DetectionHead::DetectionHead(ParamStore& ps, const std::string& name, int in_channels, int roi_size,
                             int hidden, int num_classes_)
    : num_classes(num_classes_) {
    in_features = in_channels * roi_size * roi_size;
    fc1 = Linear(ps, name + ".fc1", in_features, hidden);
    fc2 = Linear(ps, name + ".fc2", hidden, hidden);
    // small-std outputs: near-uniform class scores and near-zero deltas at init
    cls_out = Linear(ps, name + ".cls", hidden, num_classes, true, 0.01);
    box_out = Linear(ps, name + ".box", hidden, 4 * (num_classes - 1), true, 0.001);
}

DetectionHead::Output DetectionHead::forward(const Tensor& roi_features) const {
    if (roi_features.ndim() != 4) throw ShapeError("detection head expects (n,C,h,w) roi features");
    int n = roi_features.dim(0);
    long long feat = roi_features.numel() / n;
    if (feat != in_features) throw ShapeError("detection head: roi feature size mismatch");
    Tensor x = reshape(roi_features, {n, static_cast<int>(feat)});
    x = relu(fc1.forward(x));
    x = relu(fc2.forward(x));
    Output out;
    out.class_logits = cls_out.forward(x);
    out.class_probs = softmax(out.class_logits, 1);
    out.box_deltas = box_out.forward(x);
    return out;
}

SegmentationHead::SegmentationHead(ParamStore& ps, const std::string& name, int in_channels,
                                   int mid_channels, int num_fg_classes) {
    conv1 = Conv2d(ps, name + ".conv1", in_channels, mid_channels, 3, 1, 1);
    conv2 = Conv2d(ps, name + ".conv2", mid_channels, mid_channels, 3, 1, 1);
    up = ConvTranspose2d(ps, name + ".up", mid_channels, mid_channels, 2, 2, 0);
    out = Conv2d(ps, name + ".out", mid_channels, num_fg_classes, 1, 1, 0, true, 0.01);
}

Tensor SegmentationHead::forward(const Tensor& roi_features) const {
    if (roi_features.ndim() != 4) throw ShapeError("segmentation head expects (n,C,h,w) roi features");
    Tensor x = relu(conv1.forward(roi_features));
    x = relu(conv2.forward(x));
    x = relu(up.forward(x));
    return out.forward(x);
}

Tensor loss_cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    return cross_entropy_from_probs(probs, labels);
}

Tensor loss_l1(const Tensor& pred, const std::vector<double>& target, int n_positives) {
    if (n_positives == 0) return Tensor::scalar(0.0);
    return l1_loss_sum(pred, target, static_cast<double>(n_positives));
}

Tensor loss_bce(const Tensor& probs, const std::vector<double>& targets) {
    return bce_from_probs(probs, targets);
}

LossResult total_loss(const Tensor& cls, const Tensor& box, const Tensor& mask) {
    auto check = [](const Tensor& t, const char* name) {
        if (t.numel() != 1) throw ShapeError(std::string("total_loss: ") + name + " must be scalar");
        if (std::isnan(t.item()))
            throw NumericError(std::string("loss component '") + name + "' is NaN");
    };
    check(cls, "cls");
    check(box, "box");
    check(mask, "mask");
    LossResult r;
    r.total = add(add(cls, box), mask);
    r.values.cls = cls.item();
    r.values.box = box.item();
    r.values.mask = mask.item();
    r.values.total = r.values.cls + r.values.box + r.values.mask;
    return r;
}

std::vector<Detection> postprocess(
    const std::vector<Box>& proposal_boxes, const Tensor& class_probs, const Tensor& box_deltas,
    const std::function<Tensor(const std::vector<Box>&)>& mask_probs_for,
    const PostprocessConfig& cfg, double img_w, double img_h) {
    if (cfg.score_threshold <= 0 || cfg.score_threshold >= 1 || cfg.mask_threshold <= 0 ||
        cfg.mask_threshold >= 1)
        throw ConfigError("postprocess thresholds must lie in (0,1)");
    int n = static_cast<int>(proposal_boxes.size());
    if (class_probs.ndim() != 2 || class_probs.dim(0) != n)
        throw ShapeError("postprocess: class prob shape mismatch");
    int num_classes = class_probs.dim(1);
    int num_fg = num_classes - 1;
    if (box_deltas.ndim() != 2 || box_deltas.dim(0) != n || box_deltas.dim(1) != 4 * num_fg)
        throw ShapeError("postprocess: box delta shape mismatch");

    std::vector<Detection> detections;
    for (int fg = 1; fg < num_classes; ++fg) {
        std::vector<Box> boxes;
        std::vector<double> scores;
        for (int i = 0; i < n; ++i) {
            double score = class_probs.at({i, fg});
            if (score < cfg.score_threshold) continue;
            std::array<double, 4> d{box_deltas.at({i, (fg - 1) * 4 + 0}),
                                    box_deltas.at({i, (fg - 1) * 4 + 1}),
                                    box_deltas.at({i, (fg - 1) * 4 + 2}),
                                    box_deltas.at({i, (fg - 1) * 4 + 3})};
            boxes.push_back(decode_box(proposal_boxes[static_cast<size_t>(i)], d, img_w, img_h));
            scores.push_back(score);
        }
        std::vector<int> kept = nms(boxes, scores, cfg.nms_iou);
        std::vector<Box> final_boxes;
        for (int k : kept) {
            if (static_cast<int>(final_boxes.size()) >= cfg.max_detections) break;
            final_boxes.push_back(boxes[static_cast<size_t>(k)]);
        }
        Tensor mask_probs;
        if (!final_boxes.empty() && mask_probs_for) mask_probs = mask_probs_for(final_boxes);
        for (size_t m = 0; m < final_boxes.size(); ++m) {
            Detection det;
            det.box = final_boxes[m];
            det.label = fg;
            det.score = scores[static_cast<size_t>(kept[m])];
            if (mask_probs.defined()) {
                int mh = mask_probs.dim(2), mw = mask_probs.dim(3);
                det.mask_h = mh;
                det.mask_w = mw;
                det.mask.resize(static_cast<size_t>(mh) * mw);
                for (int y = 0; y < mh; ++y)
                    for (int x = 0; x < mw; ++x)
                        det.mask[static_cast<size_t>(y) * mw + x] =
                            mask_probs.at({static_cast<int>(m), 0, y, x}) >= cfg.mask_threshold ? 1 : 0;
            }
            detections.push_back(std::move(det));
        }
    }
    return detections;
}

}  // namespace cb
