#include "cb/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include <json.hpp>

#include "cb/checkpoint.hpp"
#include "cb/ops.hpp"

namespace cb {

void ModelConfig::validate() const {
    if (c_fpn < 1) throw ConfigError("c_fpn must be >= 1");
    if (anchor_scales.empty() || anchor_ratios.empty())
        throw ConfigError("anchor scales/ratios must be non-empty");
    if (rpn_sample_count < 2 || roi_sample_count < 2)
        throw ConfigError("sample counts must be >= 2");
    if (roi_out < 1 || mask_roi_out < 1 || sampling_ratio < 1)
        throw ConfigError("roi pooling sizes must be >= 1");
}

namespace {

std::vector<int> boosted_channels(const GeneratorCombo& combo) {
    std::vector<int> channels(4, 0);
    for (const GeneratorConfig& m : combo.members)
        for (int s = 0; s < 4; ++s) channels[static_cast<size_t>(s)] += m.channels_per_stage[static_cast<size_t>(s)];
    return channels;
}

}  // namespace

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), sample_rng_(seed ^ 0x5eedf00dULL) {
    config_.validate();
    store_ = std::make_unique<ParamStore>(seed);

    auto combos = generator_combos(config_.scale);
    auto combo_it = combos.find(config_.combo_name);
    if (combo_it == combos.end()) {
        std::string valid;
        for (const auto& [name, _] : combos) valid += (valid.empty() ? "" : ", ") + name;
        throw ConfigError("unknown generator combo '" + config_.combo_name + "'; options: " + valid);
    }
    auto presets = merger_presets();
    auto merger_it = presets.find(config_.merger_name);
    if (merger_it == presets.end()) {
        std::string valid;
        for (const auto& [name, _] : presets) valid += (valid.empty() ? "" : ", ") + name;
        throw ConfigError("unknown merger preset '" + config_.merger_name + "'; options: " + valid);
    }

    combo_ = std::make_unique<ComboModel>(combo_it->second, *store_, "gen");
    std::vector<int> boosted = boosted_channels(combo_it->second);
    int reduction = config_.exploit_reduction;
    for (int c : boosted) reduction = std::min(reduction, c);
    exploit_ = ExploitModule(*store_, "exploit", boosted, reduction);
    for (int level = 0; level < 4; ++level)
        fusion_.emplace_back(*store_, "fusion.level" + std::to_string(level),
                             boosted[static_cast<size_t>(level)], merger_it->second, config_.c_fpn);
    fpn_ = FpnModule(*store_, "fpn", std::vector<int>(4, config_.c_fpn), config_.c_fpn);
    int anchors_per_cell =
        static_cast<int>(config_.anchor_scales.size() * config_.anchor_ratios.size());
    rpn_head_ = RpnHead(*store_, "rpn", config_.c_fpn, anchors_per_cell);
    det_head_ = DetectionHead(*store_, "det", config_.c_fpn, config_.roi_out, config_.det_hidden, 2);
    mask_head_ = SegmentationHead(*store_, "mask", config_.c_fpn, config_.mask_mid, 1);

    for (const std::string& name : combo_->member_names()) group_prefixes_.push_back("gen." + name);
    for (const char* p : {"exploit", "fusion", "fpn", "rpn", "det", "mask"})
        group_prefixes_.push_back(p);
}

Model::Forward Model::forward_backbone(const Tensor& image) {
    Forward fw;
    std::vector<FeaturePyramid> pyramids = combo_->forward(image);
    BoostedPyramid boosted = align_and_concat(pyramids, combo_->member_names());
    BoostedPyramid exploited = exploit_.forward(boosted);
    std::vector<FeatureMap> fused;
    for (int level = 0; level < 4; ++level)
        fused.push_back(fusion_[static_cast<size_t>(level)].forward(exploited.levels[static_cast<size_t>(level)].map));
    FeaturePyramid merged = fpn_.forward(fused);
    fw.merged = merged.levels;
    fw.rpn = rpn_head_.forward(fw.merged);

    std::vector<LevelShape> shapes;
    for (const FeatureMap& fm : fw.merged)
        shapes.push_back({fm.tensor.dim(1), fm.tensor.dim(2), fm.stride});
    fw.anchors = generate_anchors(shapes, config_.anchor_scales, config_.anchor_ratios);
    return fw;
}

std::vector<Proposal> Model::make_proposals(const Forward& fw, int pre_k, int post_k, double img_w,
                                            double img_h) const {
    std::vector<Box> decoded;
    std::vector<double> objectness;
    int a_per_cell = fw.anchors.anchors_per_cell();
    for (size_t level = 0; level < fw.anchors.levels.size(); ++level) {
        const auto& anchors = fw.anchors.levels[level];
        const Tensor& obj = fw.rpn[level].obj_logits;
        const Tensor& deltas = fw.rpn[level].box_deltas;
        for (size_t local = 0; local < anchors.anchors.size(); ++local) {
            long long oi = rpn_obj_index(anchors.h, anchors.w, a_per_cell, static_cast<long long>(local));
            auto di = rpn_delta_indices(anchors.h, anchors.w, a_per_cell, static_cast<long long>(local));
            double logit = obj.data()[oi];
            std::array<double, 4> d{deltas.data()[di[0]], deltas.data()[di[1]], deltas.data()[di[2]],
                                    deltas.data()[di[3]]};
            decoded.push_back(decode_box(anchors.anchors[local], d, img_w, img_h));
            objectness.push_back(1.0 / (1.0 + std::exp(-logit)));
        }
    }
    return select_proposals(decoded, objectness, pre_k, post_k, config_.rpn_nms_iou);
}

Tensor Model::pool_rois(const std::vector<FeatureMap>& merged, const std::vector<Box>& boxes,
                        int out_size) const {
    // group boxes by assigned pyramid level; callers receive features in
    // level-grouped order and must permute their targets the same way
    std::vector<Tensor> parts;
    for (size_t level = 0; level < merged.size(); ++level) {
        std::vector<std::array<double, 4>> level_boxes;
        for (const Box& b : boxes)
            if (static_cast<size_t>(assign_pyramid_level(b, static_cast<int>(merged.size()))) == level)
                level_boxes.push_back({b.x1, b.y1, b.x2, b.y2});
        if (level_boxes.empty()) continue;
        parts.push_back(roi_align(merged[level].tensor, level_boxes, out_size, out_size,
                                  config_.sampling_ratio, 1.0 / merged[level].stride));
    }
    if (parts.empty()) throw ShapeError("pool_rois: no boxes");
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

namespace {

// permutation that groups box indices by pyramid level, matching pool_rois
std::vector<int> level_grouped_order(const std::vector<Box>& boxes, int n_levels) {
    std::vector<int> order;
    for (int level = 0; level < n_levels; ++level)
        for (size_t i = 0; i < boxes.size(); ++i)
            if (assign_pyramid_level(boxes[i], n_levels) == level) order.push_back(static_cast<int>(i));
    return order;
}

std::vector<double> mask_target_for_box(const ImageSample& sample, int gt_index, const Box& box,
                                        int out) {
    const auto& mask = sample.masks[static_cast<size_t>(gt_index)];
    int w = sample.image.w, h = sample.image.h;
    std::vector<double> target(static_cast<size_t>(out) * out, 0.0);
    for (int y = 0; y < out; ++y)
        for (int x = 0; x < out; ++x) {
            double px = box.x1 + (x + 0.5) * box.width() / out;
            double py = box.y1 + (y + 0.5) * box.height() / out;
            int ix = std::clamp(static_cast<int>(px), 0, w - 1);
            int iy = std::clamp(static_cast<int>(py), 0, h - 1);
            target[static_cast<size_t>(y) * out + x] = mask[static_cast<size_t>(iy) * w + ix] ? 1.0 : 0.0;
        }
    return target;
}

}  // namespace


namespace {
double class_prob_rowsum_err(const Tensor& probs) {
    double worst = 0;
    for (int i = 0; i < probs.dim(0); ++i) {
        double s = 0;
        for (int k = 0; k < probs.dim(1); ++k) s += probs.at({i, k});
        worst = std::max(worst, std::abs(s - 1.0));
    }
    return worst;
}
}  // namespace

LossResult Model::loss_on_sample(const ImageSample& sample) {
    Tensor image = image_to_tensor(sample.image);
    double img_w = sample.image.w, img_h = sample.image.h;
    Forward fw = forward_backbone(image);

    // ---- RPN targets over all anchors ----
    std::vector<Box> all_anchors;
    for (const auto& level : fw.anchors.levels)
        all_anchors.insert(all_anchors.end(), level.anchors.begin(), level.anchors.end());
    TargetAssignment rpn_targets =
        assign_targets(all_anchors, sample.boxes, config_.rpn_pos_iou, config_.rpn_neg_iou);

    std::vector<long long> positives, negatives;
    for (size_t i = 0; i < all_anchors.size(); ++i) {
        if (rpn_targets.labels[i] == AnchorLabel::positive) positives.push_back(static_cast<long long>(i));
        if (rpn_targets.labels[i] == AnchorLabel::negative) negatives.push_back(static_cast<long long>(i));
    }
    std::shuffle(positives.begin(), positives.end(), sample_rng_);
    std::shuffle(negatives.begin(), negatives.end(), sample_rng_);
    int want_pos = std::min<int>(static_cast<int>(positives.size()), config_.rpn_sample_count / 2);
    int want_neg = std::min<int>(static_cast<int>(negatives.size()), config_.rpn_sample_count - want_pos);
    positives.resize(static_cast<size_t>(want_pos));
    negatives.resize(static_cast<size_t>(want_neg));

    // gather sampled objectness logits level by level
    std::vector<long long> level_offset(fw.anchors.levels.size() + 1, 0);
    for (size_t level = 0; level < fw.anchors.levels.size(); ++level)
        level_offset[level + 1] =
            level_offset[level] + static_cast<long long>(fw.anchors.levels[level].anchors.size());
    auto locate = [&](long long global) {
        size_t level = 0;
        while (global >= level_offset[level + 1]) ++level;
        return std::pair<size_t, long long>(level, global - level_offset[level]);
    };

    int a_per_cell = fw.anchors.anchors_per_cell();
    std::vector<Tensor> cls_parts;
    std::vector<double> cls_targets;
    {
        std::vector<std::vector<long long>> per_level_idx(fw.anchors.levels.size());
        std::vector<std::vector<double>> per_level_tgt(fw.anchors.levels.size());
        auto add_anchor = [&](long long global, double target) {
            auto [level, local] = locate(global);
            per_level_idx[level].push_back(
                rpn_obj_index(fw.anchors.levels[level].h, fw.anchors.levels[level].w, a_per_cell, local));
            per_level_tgt[level].push_back(target);
        };
        for (long long g : positives) add_anchor(g, 1.0);
        for (long long g : negatives) add_anchor(g, 0.0);
        for (size_t level = 0; level < per_level_idx.size(); ++level) {
            if (per_level_idx[level].empty()) continue;
            cls_parts.push_back(gather_flat(fw.rpn[level].obj_logits, per_level_idx[level]));
            cls_targets.insert(cls_targets.end(), per_level_tgt[level].begin(), per_level_tgt[level].end());
        }
    }
    Tensor rpn_cls = cls_parts.empty()
                         ? Tensor::scalar(0.0)
                         : loss_bce(sigmoid(cls_parts.size() == 1 ? cls_parts[0] : concat(cls_parts, 0)),
                                    cls_targets);

    // sampled positive anchors' box deltas
    Tensor rpn_box = Tensor::scalar(0.0);
    if (!positives.empty()) {
        std::vector<std::vector<long long>> per_level_idx(fw.anchors.levels.size());
        std::vector<std::vector<double>> per_level_tgt(fw.anchors.levels.size());
        for (long long g : positives) {
            auto [level, local] = locate(g);
            auto di = rpn_delta_indices(fw.anchors.levels[level].h, fw.anchors.levels[level].w,
                                        a_per_cell, local);
            for (int k = 0; k < 4; ++k) {
                per_level_idx[level].push_back(di[static_cast<size_t>(k)]);
                per_level_tgt[level].push_back(rpn_targets.regression[static_cast<size_t>(g)][static_cast<size_t>(k)]);
            }
        }
        std::vector<Tensor> parts;
        std::vector<double> targets;
        for (size_t level = 0; level < per_level_idx.size(); ++level) {
            if (per_level_idx[level].empty()) continue;
            parts.push_back(gather_flat(fw.rpn[level].box_deltas, per_level_idx[level]));
            targets.insert(targets.end(), per_level_tgt[level].begin(), per_level_tgt[level].end());
        }
        rpn_box = loss_l1(parts.size() == 1 ? parts[0] : concat(parts, 0), targets,
                          static_cast<int>(positives.size()));
    }

    // ---- second stage ----
    std::vector<Proposal> proposals =
        make_proposals(fw, config_.rpn_pre_nms_train, config_.rpn_post_nms_train, img_w, img_h);
    std::vector<Box> roi_boxes;
    for (const Proposal& p : proposals) roi_boxes.push_back(p.box);
    if (config_.add_gt_proposals) {
        std::uniform_real_distribution<double> shift(-0.35, 0.35), logscale(-0.3, 0.3);
        for (const Box& b : sample.boxes) {
            roi_boxes.push_back(b);
            for (int j = 0; j < config_.gt_jitter_count; ++j) {
                double w = b.width() * std::exp(logscale(sample_rng_));
                double h = b.height() * std::exp(logscale(sample_rng_));
                double cx = b.cx() + shift(sample_rng_) * b.width();
                double cy = b.cy() + shift(sample_rng_) * b.height();
                Box jb{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
                jb.x1 = std::clamp(jb.x1, 0.0, img_w - 1e-3);
                jb.y1 = std::clamp(jb.y1, 0.0, img_h - 1e-3);
                jb.x2 = std::clamp(jb.x2, jb.x1 + 1e-3, img_w);
                jb.y2 = std::clamp(jb.y2, jb.y1 + 1e-3, img_h);
                roi_boxes.push_back(jb);
            }
        }
    }

    Tensor roi_cls = Tensor::scalar(0.0);
    Tensor roi_box = Tensor::scalar(0.0);
    Tensor mask_loss = Tensor::scalar(0.0);

    if (!roi_boxes.empty()) {
        TargetAssignment roi_targets =
            assign_targets(roi_boxes, sample.boxes, config_.roi_pos_iou, config_.roi_neg_iou);
        std::vector<int> pos_idx, neg_idx;
        for (size_t i = 0; i < roi_boxes.size(); ++i) {
            if (roi_targets.labels[i] == AnchorLabel::positive) pos_idx.push_back(static_cast<int>(i));
            else if (roi_targets.labels[i] == AnchorLabel::negative) neg_idx.push_back(static_cast<int>(i));
        }
        std::shuffle(pos_idx.begin(), pos_idx.end(), sample_rng_);
        std::shuffle(neg_idx.begin(), neg_idx.end(), sample_rng_);
        int keep_pos = std::min<int>(static_cast<int>(pos_idx.size()),
                                     std::max(1, static_cast<int>(config_.roi_sample_count *
                                                                  config_.roi_positive_fraction)));
        int keep_neg = std::min<int>(static_cast<int>(neg_idx.size()), config_.roi_sample_count - keep_pos);
        pos_idx.resize(static_cast<size_t>(keep_pos));
        neg_idx.resize(static_cast<size_t>(keep_neg));

        std::vector<int> selected = pos_idx;
        selected.insert(selected.end(), neg_idx.begin(), neg_idx.end());
        if (!selected.empty()) {
            std::vector<Box> selected_boxes;
            for (int i : selected) selected_boxes.push_back(roi_boxes[static_cast<size_t>(i)]);
            std::vector<int> order = level_grouped_order(selected_boxes, 4);

            std::vector<Box> ordered_boxes;
            std::vector<int> ordered_labels;
            std::vector<int> ordered_src;  // index into `selected`
            for (int k : order) {
                ordered_boxes.push_back(selected_boxes[static_cast<size_t>(k)]);
                int src = selected[static_cast<size_t>(k)];
                ordered_src.push_back(src);
                ordered_labels.push_back(roi_targets.labels[static_cast<size_t>(src)] == AnchorLabel::positive ? 1 : 0);
            }

            Tensor feats = pool_rois(fw.merged, ordered_boxes, config_.roi_out);
            DetectionHead::Output det = det_head_.forward(feats);
            det_rowsum_err_ = std::max(det_rowsum_err_, class_prob_rowsum_err(det.class_probs));
            roi_cls = loss_cross_entropy(det.class_probs, ordered_labels);
            if (std::getenv("CB_DEBUG_CLS")) {
                double pp = 0, pn = 0; int np = 0, nn = 0;
                for (size_t row = 0; row < ordered_labels.size(); ++row) {
                    double p = det.class_probs.at({static_cast<int>(row), 1});
                    if (ordered_labels[row] == 1) { pp += p; ++np; } else { pn += p; ++nn; }
                }
                fprintf(stderr, "[cls] p(fg|pos)=%.3f (n=%d) p(fg|neg)=%.3f (n=%d)\n",
                        np ? pp / np : -1, np, nn ? pn / nn : -1, nn);
            }

            // box regression on the positive rows
            std::vector<long long> delta_idx;
            std::vector<double> delta_tgt;
            int n_pos_rows = 0;
            for (size_t row = 0; row < ordered_src.size(); ++row) {
                int src = ordered_src[row];
                if (roi_targets.labels[static_cast<size_t>(src)] != AnchorLabel::positive) continue;
                ++n_pos_rows;
                const Box& pbox = roi_boxes[static_cast<size_t>(src)];
                Box gt = sample.boxes[static_cast<size_t>(roi_targets.matched_gt[static_cast<size_t>(src)])];
                auto enc = encode_box(pbox, gt);
                for (int k = 0; k < 4; ++k) {
                    delta_idx.push_back(static_cast<long long>(row) * 4 + k);
                    delta_tgt.push_back(enc[static_cast<size_t>(k)]);
                }
            }
            if (n_pos_rows > 0)
                roi_box = loss_l1(gather_flat(det.box_deltas, delta_idx), delta_tgt, n_pos_rows);

            // mask loss on (a subsample of) positive rois
            std::vector<int> mask_src = pos_idx;
            if (static_cast<int>(mask_src.size()) > config_.mask_sample_count)
                mask_src.resize(static_cast<size_t>(config_.mask_sample_count));
            if (!mask_src.empty()) {
                std::vector<Box> mask_boxes;
                for (int i : mask_src) mask_boxes.push_back(roi_boxes[static_cast<size_t>(i)]);
                std::vector<int> mask_order = level_grouped_order(mask_boxes, 4);
                std::vector<Box> ordered_mask_boxes;
                std::vector<double> targets;
                int out = config_.mask_roi_out * 2;  // head upsamples 2x
                for (int k : mask_order) {
                    int src = mask_src[static_cast<size_t>(k)];
                    ordered_mask_boxes.push_back(roi_boxes[static_cast<size_t>(src)]);
                    auto t = mask_target_for_box(
                        sample, roi_targets.matched_gt[static_cast<size_t>(src)],
                        roi_boxes[static_cast<size_t>(src)], out);
                    targets.insert(targets.end(), t.begin(), t.end());
                }
                Tensor mask_feats = pool_rois(fw.merged, ordered_mask_boxes, config_.mask_roi_out);
                Tensor logits = mask_head_.forward(mask_feats);
                mask_loss = loss_bce(sigmoid(logits), targets);
            }
        }
    }

    Tensor cls = add(scale(rpn_cls, config_.rpn_loss_weight), scale(roi_cls, config_.roi_loss_weight));
    Tensor box = add(scale(rpn_box, config_.rpn_loss_weight), scale(roi_box, config_.roi_loss_weight));
    return total_loss(cls, box, mask_loss);
}

std::vector<Detection> Model::predict(const ImageSample& sample) {
    return predict_image(image_to_tensor(sample.image));
}

std::vector<Detection> Model::predict_image(const Tensor& image) {
    double img_h = image.dim(1), img_w = image.dim(2);
    Forward fw = forward_backbone(image);
    std::vector<Proposal> proposals =
        make_proposals(fw, config_.rpn_pre_nms_test, config_.rpn_post_nms_test, img_w, img_h);
    if (proposals.empty()) return {};

    std::vector<Box> boxes;
    for (const Proposal& p : proposals) boxes.push_back(p.box);
    std::vector<int> order = level_grouped_order(boxes, 4);
    std::vector<Box> ordered;
    for (int k : order) ordered.push_back(boxes[static_cast<size_t>(k)]);

    Tensor feats = pool_rois(fw.merged, ordered, config_.roi_out);
    DetectionHead::Output det = det_head_.forward(feats);
    det_rowsum_err_ = std::max(det_rowsum_err_, class_prob_rowsum_err(det.class_probs));

    auto mask_probs_for = [&](const std::vector<Box>& refined) {
        std::vector<int> morder = level_grouped_order(refined, 4);
        // masks must come back in the caller's order, so pool level-by-level
        // and scatter the rows back
        std::vector<Box> grouped;
        for (int k : morder) grouped.push_back(refined[static_cast<size_t>(k)]);
        Tensor pooled = pool_rois(fw.merged, grouped, config_.mask_roi_out);
        Tensor logits = mask_head_.forward(pooled);
        Tensor probs = sigmoid(logits);
        // scatter rows back to refined order
        std::vector<Tensor> rows(refined.size());
        for (size_t g = 0; g < morder.size(); ++g)
            rows[static_cast<size_t>(morder[g])] = slice(probs, 0, static_cast<int>(g), 1);
        std::vector<Tensor> parts(rows.begin(), rows.end());
        return parts.size() == 1 ? parts[0] : concat(parts, 0);
    };

    return postprocess(ordered, det.class_probs, det.box_deltas, mask_probs_for, config_.postprocess,
                       img_w, img_h);
}

Tensor Model::extract_roi_features(const Tensor& image, const std::vector<Box>& boxes,
                                   int out_size) {
    Forward fw = forward_backbone(image);
    std::vector<int> order = level_grouped_order(boxes, 4);
    std::vector<Box> grouped;
    for (int k : order) grouped.push_back(boxes[static_cast<size_t>(k)]);
    Tensor pooled = pool_rois(fw.merged, grouped, out_size);
    // undo the level grouping so rows follow the caller's order
    std::vector<Tensor> rows(boxes.size());
    for (size_t g = 0; g < order.size(); ++g)
        rows[static_cast<size_t>(order[g])] = slice(pooled, 0, static_cast<int>(g), 1);
    std::vector<Tensor> parts(rows.begin(), rows.end());
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

GateStats Model::gate_stats() const {
    GateStats stats;
    combo_->collect_gate_stats(stats);
    exploit_.collect_gate_stats(stats);
    stats.max_rowsum_err = std::max(stats.max_rowsum_err, det_rowsum_err_);
    return stats;
}

std::vector<GroupGradNorm> Model::group_grad_norms() const {
    std::vector<GroupGradNorm> out;
    for (const std::string& prefix : group_prefixes_) {
        GroupGradNorm g;
        g.group = prefix;
        g.norm = store_->grad_norm(prefix);
        bool any_trainable = false;
        for (const auto& e : store_->params())
            if (e.name.rfind(prefix, 0) == 0 && e.tensor.requires_grad()) any_trainable = true;
        g.frozen = !any_trainable;
        out.push_back(std::move(g));
    }
    return out;
}

void Model::save(const std::string& path) const {
    save_checkpoint(path, model_config_to_json(config_, seed_), *store_);
}

std::unique_ptr<Model> Model::load(const std::string& path) {
    CheckpointData ckpt = load_checkpoint(path);
    std::uint64_t seed = 0;
    ModelConfig config = model_config_from_json(ckpt.manifest_json, &seed);
    auto model = std::make_unique<Model>(config, seed);
    apply_checkpoint(ckpt, model->params());
    return model;
}

std::string model_config_to_json(const ModelConfig& c, std::uint64_t seed) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["kind"] = "pipeline";
    j["seed"] = seed;
    j["combo_name"] = c.combo_name;
    j["merger_name"] = c.merger_name;
    j["c_fpn"] = c.c_fpn;
    j["exploit_reduction"] = c.exploit_reduction;
    j["scale"]["channels"] = c.scale.channels;
    j["scale"]["depths"] = c.scale.depths;
    j["scale"]["deep_depths"] = c.scale.deep_depths;
    j["scale"]["wide_channels"] = c.scale.wide_channels;
    j["scale"]["attention_reduction"] = c.scale.attention_reduction;
    j["anchor_scales"] = c.anchor_scales;
    j["anchor_ratios"] = c.anchor_ratios;
    j["rpn_pos_iou"] = c.rpn_pos_iou;
    j["rpn_neg_iou"] = c.rpn_neg_iou;
    j["roi_pos_iou"] = c.roi_pos_iou;
    j["roi_neg_iou"] = c.roi_neg_iou;
    j["rpn_nms_iou"] = c.rpn_nms_iou;
    j["rpn_pre_nms_train"] = c.rpn_pre_nms_train;
    j["rpn_post_nms_train"] = c.rpn_post_nms_train;
    j["rpn_pre_nms_test"] = c.rpn_pre_nms_test;
    j["rpn_post_nms_test"] = c.rpn_post_nms_test;
    j["rpn_sample_count"] = c.rpn_sample_count;
    j["roi_sample_count"] = c.roi_sample_count;
    j["roi_positive_fraction"] = c.roi_positive_fraction;
    j["mask_sample_count"] = c.mask_sample_count;
    j["add_gt_proposals"] = c.add_gt_proposals;
    j["gt_jitter_count"] = c.gt_jitter_count;
    j["rpn_loss_weight"] = c.rpn_loss_weight;
    j["roi_loss_weight"] = c.roi_loss_weight;
    j["roi_out"] = c.roi_out;
    j["mask_roi_out"] = c.mask_roi_out;
    j["sampling_ratio"] = c.sampling_ratio;
    j["det_hidden"] = c.det_hidden;
    j["mask_mid"] = c.mask_mid;
    j["score_threshold"] = c.postprocess.score_threshold;
    j["mask_threshold"] = c.postprocess.mask_threshold;
    j["final_nms_iou"] = c.postprocess.nms_iou;
    j["max_detections"] = c.postprocess.max_detections;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text, std::uint64_t* seed_out) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad model manifest: ") + e.what());
    }
    ModelConfig c;
    if (seed_out) *seed_out = j.value("seed", 0ULL);
    c.combo_name = j.value("combo_name", c.combo_name);
    c.merger_name = j.value("merger_name", c.merger_name);
    c.c_fpn = j.value("c_fpn", c.c_fpn);
    c.exploit_reduction = j.value("exploit_reduction", c.exploit_reduction);
    if (j.contains("scale")) {
        auto& s = j["scale"];
        if (s.contains("channels")) c.scale.channels = s["channels"].get<std::array<int, 4>>();
        if (s.contains("depths")) c.scale.depths = s["depths"].get<std::array<int, 4>>();
        if (s.contains("deep_depths")) c.scale.deep_depths = s["deep_depths"].get<std::array<int, 4>>();
        if (s.contains("wide_channels"))
            c.scale.wide_channels = s["wide_channels"].get<std::array<int, 4>>();
        if (s.contains("attention_reduction"))
            c.scale.attention_reduction = s["attention_reduction"].get<int>();
    }
    if (j.contains("anchor_scales")) c.anchor_scales = j["anchor_scales"].get<std::vector<double>>();
    if (j.contains("anchor_ratios")) c.anchor_ratios = j["anchor_ratios"].get<std::vector<double>>();
    c.rpn_pos_iou = j.value("rpn_pos_iou", c.rpn_pos_iou);
    c.rpn_neg_iou = j.value("rpn_neg_iou", c.rpn_neg_iou);
    c.roi_pos_iou = j.value("roi_pos_iou", c.roi_pos_iou);
    c.roi_neg_iou = j.value("roi_neg_iou", c.roi_neg_iou);
    c.rpn_nms_iou = j.value("rpn_nms_iou", c.rpn_nms_iou);
    c.rpn_pre_nms_train = j.value("rpn_pre_nms_train", c.rpn_pre_nms_train);
    c.rpn_post_nms_train = j.value("rpn_post_nms_train", c.rpn_post_nms_train);
    c.rpn_pre_nms_test = j.value("rpn_pre_nms_test", c.rpn_pre_nms_test);
    c.rpn_post_nms_test = j.value("rpn_post_nms_test", c.rpn_post_nms_test);
    c.rpn_sample_count = j.value("rpn_sample_count", c.rpn_sample_count);
    c.roi_sample_count = j.value("roi_sample_count", c.roi_sample_count);
    c.roi_positive_fraction = j.value("roi_positive_fraction", c.roi_positive_fraction);
    c.mask_sample_count = j.value("mask_sample_count", c.mask_sample_count);
    c.add_gt_proposals = j.value("add_gt_proposals", c.add_gt_proposals);
    c.gt_jitter_count = j.value("gt_jitter_count", c.gt_jitter_count);
    c.rpn_loss_weight = j.value("rpn_loss_weight", c.rpn_loss_weight);
    c.roi_loss_weight = j.value("roi_loss_weight", c.roi_loss_weight);
    c.roi_out = j.value("roi_out", c.roi_out);
    c.mask_roi_out = j.value("mask_roi_out", c.mask_roi_out);
    c.sampling_ratio = j.value("sampling_ratio", c.sampling_ratio);
    c.det_hidden = j.value("det_hidden", c.det_hidden);
    c.mask_mid = j.value("mask_mid", c.mask_mid);
    c.postprocess.score_threshold = j.value("score_threshold", c.postprocess.score_threshold);
    c.postprocess.mask_threshold = j.value("mask_threshold", c.postprocess.mask_threshold);
    c.postprocess.nms_iou = j.value("final_nms_iou", c.postprocess.nms_iou);
    c.postprocess.max_detections = j.value("max_detections", c.postprocess.max_detections);
    return c;
}

}  // namespace cb
