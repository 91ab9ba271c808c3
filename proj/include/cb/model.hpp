#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cb/data.hpp"
#include "cb/exploitation.hpp"
#include "cb/generators.hpp"
#include "cb/heads.hpp"
#include "cb/merging.hpp"
#include "cb/metrics.hpp"
#include "cb/region.hpp"

namespace cb {

// Full pipeline wiring: channel generation -> exploitation -> per-stage fusion
// -> feature pyramid -> region proposals -> roi align -> detection and
// segmentation heads.
struct ModelConfig {
    std::string combo_name = "Channel Generator-1";
    std::string merger_name = "Channel Merger-1";
    int c_fpn = 16;
    GeneratorScale scale;
    int exploit_reduction = 4;

    std::vector<double> anchor_scales{8, 16, 32};
    std::vector<double> anchor_ratios{1.0};
    double rpn_pos_iou = 0.7, rpn_neg_iou = 0.3;
    double roi_pos_iou = 0.5, roi_neg_iou = 0.5;
    double rpn_nms_iou = 0.7;
    int rpn_pre_nms_train = 1000, rpn_post_nms_train = 128;
    int rpn_pre_nms_test = 1000, rpn_post_nms_test = 256;
    int rpn_sample_count = 32;
    int roi_sample_count = 64;
    double roi_positive_fraction = 0.5;
    int mask_sample_count = 8;
    bool add_gt_proposals = true;
    // jittered gt copies augment training proposals on both sides of the
    // positive/negative IoU boundary
    int gt_jitter_count = 4;
    double rpn_loss_weight = 1.0, roi_loss_weight = 1.0;

    int roi_out = 7, mask_roi_out = 14, sampling_ratio = 2;
    int det_hidden = 128, mask_mid = 16;
    PostprocessConfig postprocess;

    void validate() const;
};

// Per-group gradient norms captured after a backward pass (dead-branch check).
struct GroupGradNorm {
    std::string group;
    double norm = 0;
    bool frozen = false;
};

class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    // Training loss (Eq.-4-shaped breakdown) on one labeled sample. Builds the
    // autodiff graph; caller runs .total.backward().
    LossResult loss_on_sample(const ImageSample& sample);

    std::vector<Detection> predict(const ImageSample& sample);
    std::vector<Detection> predict_image(const Tensor& image);

    // Pooled ROI features from the merged pyramid, in the given box order
    // (feature-space analysis and probing).
    Tensor extract_roi_features(const Tensor& image, const std::vector<Box>& boxes, int out_size);

    ParamStore& params() { return *store_; }
    const ParamStore& params() const { return *store_; }
    void set_training(bool training) { store_->training = training; }

    const ModelConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    GateStats gate_stats() const;
    std::vector<GroupGradNorm> group_grad_norms() const;

    void save(const std::string& path) const;
    static std::unique_ptr<Model> load(const std::string& path);

private:
    struct Forward {
        std::vector<FeatureMap> merged;        // FPN output levels
        std::vector<RpnHead::LevelOutput> rpn;
        AnchorSet anchors;
    };
    Forward forward_backbone(const Tensor& image);

    // decoded proposals from rpn outputs (values only, no graph)
    std::vector<Proposal> make_proposals(const Forward& fw, int pre_k, int post_k, double img_w,
                                         double img_h) const;
    Tensor pool_rois(const std::vector<FeatureMap>& merged, const std::vector<Box>& boxes,
                     int out_size) const;

    ModelConfig config_;
    std::uint64_t seed_;
    std::unique_ptr<ParamStore> store_;
    std::unique_ptr<ComboModel> combo_;
    ExploitModule exploit_;
    std::vector<FusionBlock> fusion_;
    FpnModule fpn_;
    RpnHead rpn_head_;
    DetectionHead det_head_;
    SegmentationHead mask_head_;
    std::vector<std::string> group_prefixes_;
    std::mt19937_64 sample_rng_;
    mutable double det_rowsum_err_ = 0.0;
};

std::string model_config_to_json(const ModelConfig& config, std::uint64_t seed);
ModelConfig model_config_from_json(const std::string& json_text, std::uint64_t* seed_out);

}  // namespace cb
