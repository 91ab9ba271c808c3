#include <random>

#include "cb/exploitation.hpp"
#include "cb/generators.hpp"
#include "cb/gradcheck.hpp"
#include "cb/heads.hpp"
#include "cb/merging.hpp"
#include "cb/ops.hpp"
#include "cb/region.hpp"

namespace cb {

namespace {

Tensor rand_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                   bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> data(static_cast<size_t>(numel_of(shape)));
    for (double& v : data) v = dist(rng);
    return Tensor::from_data(shape, std::move(data), requires_grad);
}

// Checks must run at a generic point: zero-initialized biases sitting exactly
// on ReLU kinks make central differences disagree with the subgradient.
void jitter_params(ParamStore& ps, std::mt19937_64& rng, double amount = 0.3) {
    std::uniform_real_distribution<double> d(-amount, amount);
    for (auto& e : ps.params())
        for (double& v : e.tensor.values()) v += d(rng);
}

void check_module(std::vector<GradCheckReport>& out, const std::string& prefix, ParamStore& ps,
                  const std::function<Tensor()>& loss, std::initializer_list<Tensor> extra_inputs) {
    for (auto& e : ps.params()) {
        GradCheckReport r = check_gradient(loss, e.tensor, prefix + "." + e.name);
        out.push_back(std::move(r));
    }
    int input_index = 0;
    for (Tensor t : extra_inputs) {
        GradCheckReport r = check_gradient(loss, t, prefix + ".input" + std::to_string(input_index++));
        out.push_back(std::move(r));
    }
}

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(std::uint64_t seed) {
    std::vector<GradCheckReport> out;
    std::mt19937_64 rng(seed);

    {  // residual block
        ParamStore ps(seed + 1);
        ResidualBlock block(ps, "block", 2, 2, 1, true);
        jitter_params(ps, rng);
        Tensor x = rand_tensor({2, 4, 4}, rng, -1, 1, true);
        Tensor probe = rand_tensor({2, 4, 4}, rng);
        check_module(out, "residual_block", ps,
                     [&] { return sum_all(mul(block.forward(x), probe)); }, {x});
    }
    {  // channel + spatial attention refinement
        ParamStore ps(seed + 2);
        ChannelSpatialAttention att(ps, "attn", 4, 2);
        jitter_params(ps, rng);
        Tensor x = rand_tensor({4, 4, 4}, rng, -1, 1, true);
        Tensor probe = rand_tensor({4, 4, 4}, rng);
        check_module(out, "attention_refine", ps,
                     [&] { return sum_all(mul(att.forward(x), probe)); }, {x});
    }
    {  // one transformer stage with spatial reduction
        ParamStore ps(seed + 3);
        SraBlock block(ps, "sra", 4, 1, 2);
        jitter_params(ps, rng, 0.1);
        Tensor tokens = rand_tensor({16, 4}, rng, -1, 1, true);
        Tensor probe = rand_tensor({16, 4}, rng);
        check_module(out, "transformer_stage", ps,
                     [&] { return sum_all(mul(block.forward(tokens, 4, 4), probe)); }, {tokens});
    }
    {  // fusion block
        ParamStore ps(seed + 4);
        FusionSpec spec;
        spec.layers = {{3, 3}, {1, 2}};
        FusionBlock block(ps, "fusion", 3, spec, 2);
        jitter_params(ps, rng);
        Tensor x = rand_tensor({3, 4, 4}, rng, -1, 1, true);
        Tensor probe = rand_tensor({2, 4, 4}, rng);
        check_module(out, "fusion_block", ps,
                     [&] { return sum_all(mul(block.forward({x, 4}).tensor, probe)); }, {x});
    }
    {  // feature pyramid over two levels
        ParamStore ps(seed + 5);
        FpnModule fpn(ps, "fpn", {3, 4}, 3);
        jitter_params(ps, rng);
        Tensor x0 = rand_tensor({3, 4, 4}, rng, -1, 1, true);
        Tensor x1 = rand_tensor({4, 2, 2}, rng, -1, 1, true);
        Tensor probe0 = rand_tensor({3, 4, 4}, rng);
        Tensor probe1 = rand_tensor({3, 2, 2}, rng);
        check_module(out, "fpn", ps,
                     [&] {
                         FeaturePyramid p = fpn.forward({{x0, 4}, {x1, 8}});
                         return add(sum_all(mul(p.levels[0].tensor, probe0)),
                                    sum_all(mul(p.levels[1].tensor, probe1)));
                     },
                     {x0, x1});
    }
    {  // rpn head
        ParamStore ps(seed + 6);
        RpnHead head(ps, "rpn", 3, 2);
        jitter_params(ps, rng);
        Tensor x = rand_tensor({3, 4, 4}, rng, -1, 1, true);
        Tensor probe_obj = rand_tensor({2, 4, 4}, rng);
        Tensor probe_box = rand_tensor({8, 4, 4}, rng);
        check_module(out, "rpn_head", ps,
                     [&] {
                         auto o = head.forward({{x, 4}});
                         return add(sum_all(mul(o[0].obj_logits, probe_obj)),
                                    sum_all(mul(o[0].box_deltas, probe_box)));
                     },
                     {x});
    }
    {  // detection head
        ParamStore ps(seed + 7);
        DetectionHead head(ps, "det", 2, 3, 8, 2);
        jitter_params(ps, rng);
        Tensor x = rand_tensor({2, 2, 3, 3}, rng, -1, 1, true);
        Tensor probe_c = rand_tensor({2, 2}, rng);
        Tensor probe_b = rand_tensor({2, 4}, rng);
        check_module(out, "detection_head", ps,
                     [&] {
                         auto o = head.forward(x);
                         return add(sum_all(mul(o.class_probs, probe_c)),
                                    sum_all(mul(o.box_deltas, probe_b)));
                     },
                     {x});
    }
    {  // segmentation head
        ParamStore ps(seed + 8);
        SegmentationHead head(ps, "mask", 2, 3, 1);
        jitter_params(ps, rng);
        Tensor x = rand_tensor({1, 2, 4, 4}, rng, -1, 1, true);
        Tensor probe = rand_tensor({1, 1, 8, 8}, rng);
        check_module(out, "segmentation_head", ps,
                     [&] { return sum_all(mul(head.forward(x), probe)); }, {x});
    }
    {  // the three loss terms, differentiated through their predictions
        Tensor logits = rand_tensor({3, 2}, rng, -1, 1, true);
        out.push_back(check_gradient(
            [&] { return loss_cross_entropy(softmax(logits, 1), {0, 1, 1}); }, logits,
            "loss_cross_entropy.logits"));

        Tensor pred = rand_tensor({8}, rng, -1, 1, true);
        std::vector<double> target{0.3, -0.4, 0.8, 0.1, -0.9, 0.5, 0.0, 0.7};
        out.push_back(
            check_gradient([&] { return loss_l1(pred, target, 2); }, pred, "loss_l1.pred"));

        Tensor mask_logits = rand_tensor({6}, rng, -1, 1, true);
        std::vector<double> ys{1, 0, 1, 1, 0, 0};
        out.push_back(check_gradient([&] { return loss_bce(sigmoid(mask_logits), ys); }, mask_logits,
                                     "loss_bce.logits"));
    }
    return out;
}

}  // namespace cb
