#pragma once

#include <array>
#include <vector>

#include "cb/tensor.hpp"

namespace cb {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Shapes must have equal rank; each dim pair must match or be 1.
Tensor broadcast_add(const Tensor& a, const Tensor& b);
Tensor broadcast_mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor rsqrt_shift(const Tensor& x, double eps);  // 1/sqrt(x+eps)

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// (C,H,W) -> (C) or (N,C,H,W) -> (C): mean/max over every non-channel axis.
Tensor channel_mean(const Tensor& x);
Tensor channel_max(const Tensor& x);
// (C,H,W) -> (1,H,W): stats across the channel axis, for spatial attention.
Tensor mean_over_channels(const Tensor& x);
Tensor max_over_channels(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor gather_flat(const Tensor& x, std::vector<long long> indices);
// (C,H,W) <-> (H*W,C) token layout used by the transformer stages.
Tensor chw_to_tokens(const Tensor& x);
Tensor tokens_to_chw(const Tensor& x, int h, int w);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);  // x:(n,d) w:(out,d)

// ---- normalization / activation over axes ----
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- spatial ----
// x: (C,H,W) or (N,C,H,W); w: (O,C,kh,kw); bias optional (undefined Tensor to skip).
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
// w: (C,O,kh,kw); output size (H-1)*stride - 2*pad + kh.
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);
Tensor max_pool2d(const Tensor& x, int kernel, int stride, int pad);
Tensor global_avg_pool(const Tensor& x);  // (C,H,W) -> (C)
Tensor global_max_pool(const Tensor& x);  // (C,H,W) -> (C)
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

// Bilinear interpolation at a continuous point; pixel (i,j) centered at (i,j),
// coordinates clamp to the border. x: (C,H,W) -> (C).
Tensor bilinear_sample(const Tensor& x, double px, double py);

// Boxes are (x1,y1,x2,y2) in image coordinates; spatial_scale = 1/stride maps
// them onto the feature grid without rounding. Each output bin averages
// sampling_ratio^2 bilinear samples. Result: (n_boxes, C, out_h, out_w).
Tensor roi_align(const Tensor& feature, const std::vector<std::array<double, 4>>& boxes,
                 int out_h, int out_w, int sampling_ratio, double spatial_scale);

// ---- losses (targets are plain data; gradients flow to predictions only) ----
// -mean_i log(clamp(probs[i, label_i])), probabilities clamped at 1e-12.
Tensor cross_entropy_from_probs(const Tensor& probs, const std::vector<int>& labels);
// sum|pred - target| / divisor.
Tensor l1_loss_sum(const Tensor& pred, const std::vector<double>& target, double divisor);
// -(1/N) sum y log p + (1-y) log(1-p), probabilities clamped to [1e-12, 1-1e-12].
Tensor bce_from_probs(const Tensor& probs, const std::vector<double>& targets);

constexpr double kProbClamp = 1e-12;

}  // namespace cb
